// Husimi measures of a trapped Slater determinant and their structural checks.
#include <cstdio>

#include "hvlab/husimi.hpp"

using namespace hvlab;

int main() {
    const int N = 3;
    PhaseSpaceGrid g;
    g.L = 2 * pi;
    g.Mq = 64;
    auto s = slater_determinant(trap_orbitals(g, 1.0 / N, [](double x) { return std::cos(x); }, N), g,
                                Backend::occupationBasis);
    auto w = make_window(WindowKind::gaussian, 1.0 / N, g);
    auto pg = phase_grid(g, 24, 32, 6.0);
    auto m1 = husimi_k(reduced_density(s, 1, true), w, pg);
    auto m2 = husimi_k(reduced_density(s, 2, true), w, pg);
    for (auto& c : husimi_property_report(m2, &m1).checks)
        std::printf("%-12s %.3e (bound %.3e) %s\n", c.check.c_str(), c.value, c.bound, c.pass ? "ok" : "FAIL");
    auto mo = moments(m1);
    std::printf("mass %.12f  <p^2> %.6f\n", mo.mass, mo.p2);
}
