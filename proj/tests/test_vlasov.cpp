#include <gtest/gtest.h>

#include "hvlab/vlasov.hpp"

using namespace hvlab;

namespace {

PhaseSpaceGrid wgrid(double L = pi) {
    PhaseSpaceGrid g;
    g.L = L;
    g.Mq = 32;
    g.Pmax = 6;
    g.Mp = 64;
    return g;
}

// smooth, two-stream-like profile; mass 2 pi on a torus of length L
double two_stream(double q, double p, double L) {
    auto bump = [](double x) { return std::exp(-x * x / (2 * 0.36)); };
    double c = 1 / (L * std::sqrt(2 * pi * 0.36));
    return pi * c * (1 + 0.3 * std::cos(2 * pi * q / L)) * (bump(p - 1.0) + bump(p + 1.0));
}

double profile(double q, double p, double L) {
    return (1 + 0.5 * std::cos(2 * pi * q / L)) * std::exp(-p * p / 2);
}

}  // namespace

TEST(VlasovForce, ZeroPotentialAndUniformDensity) {
    auto g = wgrid();
    PhaseGrid pg = phase_grid(g, 32, 32, 6.0);
    auto s = vlasov_state(pg, [&](double q, double p) { return profile(q, p, g.L); });
    for (double f : self_consistent_force(s, potential_family(g, "zero"))) EXPECT_EQ(f, 0.0);
    auto u = vlasov_state(pg, [](double, double p) { return std::exp(-p * p); });
    for (double f : self_consistent_force(u, potential_family(g, "cosine", 1.3))) EXPECT_NEAR(f, 0.0, 1e-12);
}

TEST(VlasovForce, SingleModeClosedForm) {
    // rho = A + B cos(kq), V = cos(kq): V*rho = B (L/2) cos(kq)
    auto g = wgrid();
    PhaseGrid pg = phase_grid(g, 24, 40, 6.0);
    const double k = 2 * pi / g.L;
    auto s = vlasov_state(pg, [&](double q, double p) { return (2 + 0.7 * std::cos(k * q)) * std::exp(-p * p / 2); });
    rvec rho = spatial_density(s);
    // B from the discrete density itself (the p-quadrature is spectrally exact here)
    double B = 0;
    for (int a = 0; a < pg.Q; ++a) B += 2 * rho[a] * std::cos(k * pg.q(a)) / pg.Q;
    auto F = self_consistent_force(s, potential_family(g, "cosine", 1.0));
    for (int a = 0; a < pg.Q; ++a) EXPECT_NEAR(F[a], -B * g.L / 2 * k * std::sin(k * pg.q(a)), 1e-12);
    EXPECT_NEAR(B, 0.7 * std::sqrt(2 * pi) / (2 * pi), 1e-8);
}

TEST(VlasovForce, GridMismatch) {
    auto g = wgrid();
    auto s = vlasov_state(phase_grid(wgrid(2 * pi), 16, 16, 4.0), [](double, double) { return 1.0; });
    EXPECT_THROW(self_consistent_force(s, potential_family(g, "cosine", 1.0)), GridMismatch);
}

TEST(VlasovStep, SplineShiftOracle) {
    // a cubic polynomial on a long periodic segment is reproduced away from the seam
    cvec buf;
    rvec f(64);
    auto poly = [](double x) { return 0.3 + x - 0.02 * x * x; };
    for (int j = 0; j < 64; ++j) f[j] = poly(j);
    rvec g = f;
    detail::spline_shift(g.data(), 64, 1, 0.37, buf);
    for (int j = 24; j < 40; ++j) EXPECT_NEAR(g[j], poly(j - 0.37), 1e-6);
    // integer shifts are exact permutations
    g = f;
    detail::spline_shift(g.data(), 64, 1, 3.0, buf);
    for (int j = 0; j < 64; ++j) EXPECT_NEAR(g[j], f[(j - 3 + 64) % 64], 1e-12);
}

TEST(VlasovStep, FreeTransportConvergesAtLeastSecondOrder) {
    auto g = wgrid();
    rvec err, h;
    for (int n : {16, 32, 64}) {
        PhaseGrid pg = phase_grid(g, n, 2 * n, 6.0);
        auto s = vlasov_state(pg, [&](double q, double p) { return profile(q, p, g.L); });
        VlasovConfig c;
        c.dt = 0.05;
        c.T = 1;
        auto tr = vlasov_evolve(s, potential_family(g, "zero"), c);
        const auto& m = tr.states.back();
        double e = 0;
        for (int a = 0; a < pg.Q; ++a)
            for (int b = 0; b < pg.P; ++b)
                e = std::max(e, std::abs(m.m[a * pg.P + b] - profile(pg.q(a) - pg.p(b), pg.p(b), g.L)));
        err.push_back(e);
        h.push_back(pg.dq());
        EXPECT_LE(tr.maxMassDrift, 1e-12);
    }
    for (int i = 1; i < 3; ++i) EXPECT_GE(std::log(err[i - 1] / err[i]) / std::log(h[i - 1] / h[i]), 2.0) << err[i];
}

TEST(VlasovStep, UniformStateIsStationary) {
    auto g = wgrid();
    PhaseGrid pg = phase_grid(g, 32, 48, 6.0);
    auto s = vlasov_state(pg, [](double, double p) { return std::exp(-p * p / 2); });
    VlasovConfig c;
    c.T = 0.5;
    auto tr = vlasov_evolve(s, potential_family(g, "double-mode", 1.0, 0.5), c);
    for (std::size_t i = 0; i < s.m.size(); ++i) EXPECT_NEAR(tr.states.back().m[i], s.m[i], 1e-12);
}

TEST(VlasovStep, TwoStreamConservesMassAndEnergy) {
    auto g = wgrid();
    PhaseGrid pg = phase_grid(g, 64, 120, 6.0);
    auto s = vlasov_state(pg, [&](double q, double p) { return two_stream(q, p, g.L); });
    EXPECT_NEAR(s.mass(), 2 * pi, 1e-8);
    VlasovConfig c;
    c.dt = 0.01;
    rvec times;
    for (int i = 1; i <= 10; ++i) times.push_back(0.1 * i);
    auto tr = vlasov_evolve(s, potential_family(g, "cosine", 1.0), c, times);
    EXPECT_LE(tr.maxMassDrift, 1e-8);
    EXPECT_LE(tr.maxEnergyDrift, 1e-4);
    EXPECT_GE(tr.minValue, -1e-8);
    // the flow preserves sup m; compare with the continuum sup of m0 (finely sampled)
    double sup0 = 0;
    for (int i = 0; i <= 20000; ++i) sup0 = std::max(sup0, two_stream(0.0, 0.9 + 0.2 * i / 20000, g.L));
    for (auto& st : tr.states) EXPECT_LE(st.sup(), sup0 * (1 + 1e-6));
    EXPECT_LT(tr.maxBoundaryMass, 1e-10);
}

TEST(VlasovHierarchy, FactorizedProductsSolveHierarchy) {
    auto g = wgrid();
    PhaseGrid pg = phase_grid(g, 32, 96, 6.0);
    auto s = vlasov_state(pg, [&](double q, double p) { return two_stream(q, p, g.L); });
    auto V = potential_family(g, "cosine", 1.0);
    VlasovConfig c;
    c.dt = 0.005;
    rvec times;
    for (int i = 1; i <= 6; ++i) times.push_back(0.02 * i);
    auto tr = vlasov_evolve(s, V, c, times);
    auto lib = test_function_library(g.L);
    auto r1 = factorized_hierarchy_residual(tr, 1, lib, V);
    auto r2 = factorized_hierarchy_residual(tr, 2, lib, V);
    EXPECT_LE(r1.relative, 1e-4) << r1.absolute;
    EXPECT_LE(r2.relative, 5e-4) << r2.absolute;
    EXPECT_LE(r2.relative, 3 * r1.relative + 1e-12);
    EXPECT_GT(std::abs(r1.interaction), 1e-3);  // the force term is really exercised
    auto V0 = potential_family(g, "zero");
    auto free = vlasov_evolve(s, V0, c, times);
    EXPECT_LE(factorized_hierarchy_residual(free, 1, lib, V0).relative, 1e-4);
    EXPECT_THROW(factorized_hierarchy_residual(free, 3, lib, V0), PreconditionViolated);
}

TEST(WeakPairing, MassLinearityAndMoments) {
    auto g = wgrid();
    PhaseGrid pg = phase_grid(g, 32, 48, 6.0);
    auto s = vlasov_state(pg, [&](double q, double p) { return profile(q, p, g.L); });
    rvec one(s.m.size(), 1.0);
    EXPECT_NEAR(weak_pairing(s.m, pg, one), s.mass(), 1e-12);
    auto lib = test_function_library(g.L);
    rvec a = sample(lib[0], pg).v, b = sample(lib[3], pg).v, c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = 2.5 * a[i] - 0.75 * b[i];
    EXPECT_NEAR(weak_pairing(s.m, pg, c), 2.5 * weak_pairing(s.m, pg, a) - 0.75 * weak_pairing(s.m, pg, b), 1e-12);
    EXPECT_THROW(weak_pairing(s.m, phase_grid(g, 16, 48, 6.0), one), GridMismatch);
}
