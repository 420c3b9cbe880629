// Many-body evolution vs the Vlasov flow started from the same Husimi density.
#include <cstdio>

#include "hvlab/propagator.hpp"
#include "hvlab/transport.hpp"
#include "hvlab/vlasov.hpp"

using namespace hvlab;

int main() {
    const int N = 3;
    const double t = 0.25;
    PhaseSpaceGrid g;
    g.L = pi;
    g.Mq = 32;
    auto V = potential_family(g, "cosine", 1.0);
    auto s0 = slater_determinant(trap_orbitals(g, 1.0 / N, [](double x) { return std::cos(2 * x); }, N), g,
                                 Backend::occupationBasis);
    EvolutionConfig ec;
    ec.T = t;
    auto tr = evolve(s0, V, ec);
    auto w = make_window(WindowKind::gaussian, 1.0 / N, g);
    auto pg = phase_grid(g, 64, 128, 6.0);
    auto m0 = husimi_k(reduced_density(s0, 1, true), w, pg);
    auto mt = husimi_k(reduced_density(tr.states.back(), 1, true), w, pg);
    VlasovConfig vc;
    vc.T = t;
    auto vt = vlasov_evolve(vlasov_state(m0), V, vc);
    auto a = normalized(coarsen(mt.values, pg, 32, 32).mu), b = normalized(coarsen(vt.states.back().m, pg, 32, 32).mu);
    auto r = wasserstein1_exact(a, b);
    std::printf("N=%d t=%.2f  W1=%.6f (certified %d)  L1=%.6f  energy drift %.2e\n", N, t, r.cost, r.certified,
                l1_distance(mt.values, vt.states.back().m, pg), tr.maxEnergyDrift);
}
