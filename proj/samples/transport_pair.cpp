// Exact and entropic W1 between two phase-space densities.
#include <cstdio>

#include "hvlab/transport.hpp"

using namespace hvlab;

int main() {
    const int n = 24;
    DiscreteMeasure a, b;
    a.L = b.L = pi;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double q = i * pi / n, p = -4 + 8 * (j + 0.5) / n;
            a.x.push_back({q, p});
            b.x.push_back({q, p});
            a.w.push_back(std::exp(-p * p / 2) * (1 + 0.5 * std::cos(2 * q)));
            b.w.push_back(std::exp(-(p - 0.5) * (p - 0.5)) * (1 + 0.3 * std::sin(2 * q)));
        }
    a = normalized(a);
    b = normalized(b);
    auto ex = wasserstein1_exact(a, b);
    const double eps = 1e-3 * std::hypot(pi / 2, 8.0);
    auto en = wasserstein1_entropic(a, b, eps);
    std::printf("exact %.8f (gap %.1e, %ld pivots)  entropic %.8f (eps %.2e, %d iterations)\n", ex.cost,
                ex.cost - ex.dualObjective, static_cast<long>(ex.pivots), en.cost, en.epsilon, en.iterations);
}
