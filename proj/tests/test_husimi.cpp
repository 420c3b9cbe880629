#include <gtest/gtest.h>

#include <random>

#include "hvlab/husimi.hpp"

using namespace hvlab;

namespace {

PhaseSpaceGrid grid(int M, double L) {
    PhaseSpaceGrid g;
    g.L = L;
    g.Mq = M;
    g.Pmax = 6;
    g.Mp = 64;
    return g;
}

ManyBodyState trap_state(int N, const PhaseSpaceGrid& g, Backend b = Backend::occupationBasis) {
    return slater_determinant(trap_orbitals(g, 1.0 / N, [](double x) { return std::cos(2 * x); }, N), g, b);
}

}  // namespace

TEST(Husimi, GaussianOrbitalClosedForm) {
    // N = 1 (hbar = 1); a wide torus keeps periodic images below 1e-30
    auto g = grid(64, 16.0);
    cvec phi(64);
    for (int j = 0; j < 64; ++j) {
        double x = g.torus_delta(g.q(j));
        phi[j] = std::pow(pi, -0.25) * std::exp(-x * x / 2);
    }
    auto s = slater_determinant({phi}, g);
    auto w = make_window(WindowKind::gaussian, 1.0, g);
    auto pg = phase_grid(g, 32, 24, 4.0);
    auto m = husimi_k(reduced_density(s, 1), w, pg);
    double worst = 0;
    for (int a = 0; a < pg.Q; ++a)
        for (int b = 0; b < pg.P; ++b) {
            double q = g.torus_delta(pg.q(a)), p = pg.p(b);
            worst = std::max(worst, std::abs(m.at(a, b) - std::exp(-q * q / 2 - p * p / 2)));
        }
    EXPECT_LE(worst, 1e-10);
}

TEST(Husimi, FftMatchesPointwiseOracle) {
    auto g = grid(32, pi);
    auto s = trap_state(3, g);
    auto w = make_window(WindowKind::gaussian, 1.0 / 3, g);
    auto pg = phase_grid(g, 16, 16, 4.0);
    auto G1 = reduced_density(s, 1);
    auto m = husimi_k(G1, w, pg);
    double worst = 0;
    for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b)
            worst = std::max(worst, std::abs(m.at(a, b) - husimi_pointwise(G1, w, {{pg.q(a), pg.p(b)}})));
    EXPECT_LE(worst, 1e-10);
    auto G2 = reduced_density(s, 2);
    auto pg2 = phase_grid(g, 6, 6, 3.0);
    auto m2 = husimi_k(G2, w, pg2);
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> u(0, 5);
    for (int t = 0; t < 12; ++t) {
        int a1 = u(rng), b1 = u(rng), a2 = u(rng), b2 = u(rng);
        double o = husimi_pointwise(G2, w, {{pg2.q(a1), pg2.p(b1)}, {pg2.q(a2), pg2.p(b2)}});
        EXPECT_NEAR(m2.at(a1, b1, a2, b2), o, 1e-10);
    }
}

TEST(Husimi, StructuralSuiteN3) {
    // L = 2 pi: periodic images of the window overlap at e^{-L^2/(4 hbar)} ~ 1e-13
    auto g = grid(64, 2 * pi);
    auto s = trap_state(3, g);
    auto w = make_window(WindowKind::gaussian, 1.0 / 3, g);
    auto pg = phase_grid(g, 24, 32, 6.0);
    auto m1 = husimi_k(reduced_density(s, 1), w, pg);
    auto m2 = husimi_k(reduced_density(s, 2), w, pg);
    auto r1 = husimi_property_report(m1);
    auto r2 = husimi_property_report(m2, &m1);
    EXPECT_TRUE(r1.pass()) << r1.to_json().dump();
    EXPECT_TRUE(r2.pass()) << r2.to_json().dump();
    EXPECT_LT(m1.outOfBandMass, 1e-12);
}

TEST(Husimi, BumpWindowMass) {
    auto g = grid(64, pi);
    auto s = trap_state(3, g);
    auto w = make_window(WindowKind::bump, 1.0 / 3, g);
    auto pg = phase_grid(g, 64, 96, 12.0);
    auto m1 = husimi_k(reduced_density(s, 1), w, pg);
    auto r = husimi_property_report(m1, nullptr, 1e-3);
    EXPECT_TRUE(r.pass()) << r.to_json().dump();
}

TEST(Husimi, UnsymmetrizedInputFailsSymmetry) {
    auto g = grid(32, pi);
    auto s = trap_state(2, g);
    auto G2 = reduced_density(s, 2);
    // gamma1 (x) P: not exchange symmetric
    auto G1 = reduced_density(s, 1);
    RMat P = RMat::Zero(32, 32);
    P(3, 3) = 1;
    for (int x1 = 0; x1 < 32; ++x1)
        for (int x2 = 0; x2 < 32; ++x2)
            for (int y1 = 0; y1 < 32; ++y1)
                for (int y2 = 0; y2 < 32; ++y2) G2.mat(x1 * 32 + x2, y1 * 32 + y2) = G1.mat(x1, y1) * P(x2, y2);
    auto w = make_window(WindowKind::gaussian, 0.5, g);
    auto m2 = husimi_k(G2, w, phase_grid(g, 8, 8, 4.0));
    EXPECT_FALSE(husimi_property_report(m2).get("symmetry").pass);
}

TEST(Husimi, GlobalPhaseInvariance) {
    auto g = grid(32, pi);
    auto s = trap_state(2, g);
    auto t = s;
    for (auto& z : t.amp) z *= std::exp(I * 0.77);
    auto w = make_window(WindowKind::gaussian, 0.5, g);
    auto pg = phase_grid(g, 16, 16, 4.0);
    auto a = husimi_k(reduced_density(s, 1), w, pg), b = husimi_k(reduced_density(t, 1), w, pg);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(Husimi, WindowHbarMustMatch) {
    auto g = grid(32, pi);
    auto s = trap_state(2, g);
    auto w = make_window(WindowKind::gaussian, 0.25, g);
    EXPECT_THROW(husimi_k(reduced_density(s, 1), w, phase_grid(g, 8, 8)), PreconditionViolated);
}

TEST(Wigner, SmoothingRelation) {
    auto g = grid(32, pi);
    for (int N : {1, 2, 3}) {
        auto s = trap_state(N, g);
        const double h = 1.0 / N;
        auto w = make_window(WindowKind::gaussian, h, g);
        auto pg = phase_grid(g, 32, 48, 6.0);
        auto G1 = reduced_density(s, 1);
        auto m1 = husimi_k(G1, w, pg);
        auto W = wigner_1(G1, h, g);
        EXPECT_LT(W.imagResidue, 1e-10);
        EXPECT_LE(wigner_smoothing_check(m1, W), 1e-6) << N;
        auto wb = make_window(WindowKind::bump, h, g);
        EXPECT_THROW(wigner_smoothing_check(husimi_k(G1, wb, pg), W), WindowKindMismatch);
    }
}

TEST(Wigner, PositionMarginal) {
    auto g = grid(32, pi);
    auto s = trap_state(3, g);
    auto G1 = reduced_density(s, 1);
    auto W = wigner_1(G1, 1.0 / 3, g);
    for (int a = 0; a < W.Qw; a += 2) {
        double sum = 0;
        for (int sidx = 0; sidx < W.S; ++sidx) sum += W.mass[static_cast<std::size_t>(a) * W.S + sidx];
        double rho = G1.mat(a / 2, a / 2).real() / g.dq();
        EXPECT_NEAR(sum / (2 * pi * W.hbar), rho, 1e-8);
    }
}

TEST(Wigner, HudsonWitnesses) {
    // whole-line picture: a Gaussian orbital has W >= 0, the first excited orbital does not
    auto g = grid(256, 32.0);
    const double h = 1.0;
    cvec g0(256), g1(256);
    for (int j = 0; j < 256; ++j) {
        double x = g.torus_delta(g.q(j));
        g0[j] = std::pow(pi, -0.25) * std::exp(-x * x / 2);
        g1[j] = std::pow(pi, -0.25) * std::sqrt(2.0) * x * std::exp(-x * x / 2);
    }
    auto pg = phase_grid(g, 256, 64, 4.0);
    auto W0 = wigner_open(reduced_density(slater_determinant({g0}, g, Backend::denseTensor), 1), h, g, pg);
    auto W1 = wigner_open(reduced_density(slater_determinant({g1}, g, Backend::denseTensor), 1), h, g, pg);
    EXPECT_GE(*std::min_element(W0.begin(), W0.end()), -1e-12);
    EXPECT_LT(*std::min_element(W1.begin(), W1.end()), -0.1);
    // closed form at the origin: W0(0,0) = 1/(pi hbar), W1(0,0) = -1/(pi hbar)
    EXPECT_NEAR(W0[0 * 64 + 32], 1 / pi, 1e-10);
    EXPECT_NEAR(W1[0 * 64 + 32], -1 / pi, 1e-10);
}

TEST(Moments, SymmetricFirstMomentAndFreeP2) {
    auto g = grid(32, pi);
    // centered even state: trap minimum of -cos(2x) sits at x = 0
    auto s = slater_determinant(trap_orbitals(g, 0.5, [](double x) { return -std::cos(2 * x); }, 2), g);
    auto w = make_window(WindowKind::gaussian, 0.5, g);
    auto pg = phase_grid(g, 32, 48, 6.0);
    auto mo = moments(husimi_k(reduced_density(s, 1), w, pg));
    EXPECT_NEAR(mo.firstQ, 0.0, 1e-8);
    EXPECT_NEAR(mo.mass, 1.0, 1e-8);
}

TEST(KineticIdentity, PlaneWavesStatedAndCorrected) {
    auto g = grid(32, pi);
    auto s = slater_determinant({plane_wave(g, 1), plane_wave(g, -1)}, g);
    auto w = make_window(WindowKind::gaussian, 0.5, g);
    auto r = kinetic_identity_check(s, w, phase_grid(g, 16, 64, 8.0));
    EXPECT_LE(r.correctedResidual, 1e-10);
    // the stated sign is off by exactly 2 hbar ||f'||^2
    EXPECT_NEAR(r.statedResidual, 2 * r.gradTerm / r.kinetic, 1e-10);
    EXPECT_NEAR(r.gradTerm, 0.5 * 0.5, 1e-14);
}

TEST(KineticIdentity, TruncationWitnessAndMonotone) {
    auto g = grid(32, pi);
    auto s = slater_determinant(trap_orbitals(g, 1.0 / 3, [](double x) { return std::cos(2 * x); }, 3), g);
    auto w = make_window(WindowKind::gaussian, 1.0 / 3, g);
    rvec res;
    for (double Pmax : {1.0, 2.0, 4.0, 8.0}) {
        auto r = kinetic_identity_check(s, w, phase_grid(g, 16, static_cast<int>(16 * Pmax), Pmax));
        res.push_back(r.correctedResidual);
    }
    EXPECT_GT(res[0], 0.1);
    for (int i = 1; i < 4; ++i) EXPECT_LT(res[i], res[i - 1]);
    EXPECT_LE(res[3], 1e-8);
}
