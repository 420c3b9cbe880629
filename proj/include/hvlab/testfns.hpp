#pragma once

#include "husimi.hpp"

namespace hvlab {

// Test function phi(q,p) = c(q - q0) b((p - p0)/rp): a periodic C^inf bump
// c(x) = exp((cos(2 pi x/L) - 1)/wq^2) in q (trigonometric quadrature is spectrally
// exact) and the compactly supported b(x) = exp(1 - 1/(1-x^2)) on |x| < 1 in p.
struct TestFunction {
    std::string name;
    double L = 2 * pi;
    double q0 = 0, wq = 1, p0 = 0, rp = 1;

    static double bump(double x) { return std::abs(x) < 1 ? std::exp(1 - 1 / (1 - x * x)) : 0.0; }
    static double dbump(double x) {
        if (std::abs(x) >= 1) return 0.0;
        double u = 1 - x * x;
        return bump(x) * (-2 * x / (u * u));
    }
    double cq(double q) const { return std::exp((std::cos(2 * pi * (q - q0) / L) - 1) / (wq * wq)); }
    double dcq(double q) const { return -cq(q) * std::sin(2 * pi * (q - q0) / L) * 2 * pi / (L * wq * wq); }

    double value(double q, double p) const { return cq(q) * bump((p - p0) / rp); }
    double d_q(double q, double p) const { return dcq(q) * bump((p - p0) / rp); }
    double d_p(double q, double p) const { return cq(q) * dbump((p - p0) / rp) / rp; }
};

// Fixed library of five, held across every hbar-sweep so pairings are comparable.
inline std::vector<TestFunction> test_function_library(double L) {
    return {
        {"phi0", L, 0.0, 0.8, 0.0, 3.0},
        {"phi1", L, 0.25 * L, 1.0, 0.5, 2.5},
        {"phi2", L, 0.50 * L, 0.6, -0.7, 3.0},
        {"phi3", L, 0.10 * L, 1.5, 1.0, 3.0},
        {"phi4", L, 0.75 * L, 0.7, 0.0, 2.0},
    };
}

// Samples of phi, d_q phi, d_p phi on a phase grid, layout [a*P + b].
struct TestSamples {
    rvec v, dq, dp;
};

inline TestSamples sample(const TestFunction& f, const PhaseGrid& pg) {
    require(std::abs(f.L - pg.L) < 1e-12 * pg.L, "test function period differs from the grid");
    require(std::abs(f.p0) + f.rp <= pg.Pmax + 1e-12, "test function p-support leaves the grid");
    TestSamples s;
    const std::size_t n = static_cast<std::size_t>(pg.Q) * pg.P;
    s.v.resize(n);
    s.dq.resize(n);
    s.dp.resize(n);
    for (int a = 0; a < pg.Q; ++a)
        for (int b = 0; b < pg.P; ++b) {
            std::size_t i = static_cast<std::size_t>(a) * pg.P + b;
            s.v[i] = f.value(pg.q(a), pg.p(b));
            s.dq[i] = f.d_q(pg.q(a), pg.p(b));
            s.dp[i] = f.d_p(pg.q(a), pg.p(b));
        }
    return s;
}

// Trapezoidal pairing on the phase grid (periodic in q, phi vanishes at the p ends).
inline double weak_pairing(const rvec& m, const PhaseGrid& pg, const rvec& phi) {
    if (m.size() != phi.size() || m.size() != static_cast<std::size_t>(pg.Q) * pg.P)
        throw GridMismatch("weak_pairing: sizes differ");
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += m[i] * phi[i];
    return s * pg.cell();
}

inline double weak_pairing(const HusimiMeasure& m, const TestFunction& f) {
    if (m.k != 1) throw GridMismatch("weak_pairing: k = 1 measure expected");
    return weak_pairing(m.values, m.grid, sample(f, m.grid).v);
}

}  // namespace hvlab
