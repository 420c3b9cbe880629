#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "hvlab/gridio.hpp"
#include "hvlab/phasespace.hpp"

using namespace hvlab;

namespace {

PhaseSpaceGrid grid(int M, double L = 2 * pi, double Pmax = 6, int Mp = 64) {
    PhaseSpaceGrid g;
    g.L = L;
    g.Mq = M;
    g.Pmax = Pmax;
    g.Mp = Mp;
    return g;
}

}  // namespace

TEST(Window, GaussianNormalized) {
    auto w = make_window(WindowKind::gaussian, 0.25, grid(128));
    double s = 0;
    for (double v : w.envelope) s += v * v;
    EXPECT_NEAR(s * w.grid.dq(), 1.0, 1e-12);
    EXPECT_NEAR(w.truncationMass, std::erfc(8.0), 1e-30);
}

TEST(Window, BumpCompactAndNormalized) {
    auto g = grid(128);
    auto w = make_window(WindowKind::bump, 0.25, g);
    double s = 0;
    for (double v : w.envelope) s += v * v;
    EXPECT_NEAR(s * g.dq(), 1.0, 1e-12);
    const double R = w.supportRadius * w.sqh();
    for (int j = 0; j < g.Mq; ++j)
        if (std::abs(g.torus_delta(g.q(j))) > R) EXPECT_EQ(w.envelope[j], 0.0);
}

TEST(Window, Unresolved) {
    EXPECT_THROW(make_window(WindowKind::gaussian, 1e-6, grid(64)), UnresolvedWindow);
}

TEST(Window, ProfileTransformOracle) {
    // brute-force midpoint quadrature of int f(x) cos(eta x) dx vs the closed form / DE rule
    for (auto kind : {WindowKind::gaussian, WindowKind::bump}) {
        WindowProfile pr(kind);
        const int n = 200000;
        const double a = kind == WindowKind::bump ? 1.0 : 12.0, h = 2 * a / n;
        double norm = 0;
        for (int i = 0; i < n; ++i) norm += h * std::pow(pr.f(-a + (i + 0.5) * h), 2);
        EXPECT_NEAR(norm, 1.0, 1e-9);
        for (double eta : {0.0, 0.7, 2.5, 9.0}) {
            double s = 0, ds = 0;
            for (int i = 0; i < n; ++i) {
                double x = -a + (i + 0.5) * h;
                s += h * pr.f(x) * std::cos(eta * x);
                ds -= h * x * pr.f(x) * std::sin(eta * x);
            }
            EXPECT_NEAR(pr.fhat(eta), s, 1e-9);
            EXPECT_NEAR(pr.dfhat(eta), ds, 1e-9);
        }
        // ||f'||^2 by centered differences
        double gd = 0;
        for (int i = 0; i < n; ++i) {
            double x = -a + (i + 0.5) * h;
            double d = (pr.f(x + 1e-5) - pr.f(x - 1e-5)) / 2e-5;
            gd += h * d * d;
        }
        EXPECT_NEAR(pr.grad_norm2(), gd, 1e-6);
    }
}

TEST(CoherentState, CenteredIsRealPeaked) {
    auto g = grid(128);
    auto w = make_window(WindowKind::gaussian, 0.25, g);
    cvec f = coherent_state(w, 0.0, 0.0);
    EXPECT_NEAR(norm2(f) * g.dq(), 1.0, 1e-10);
    int arg = 0;
    for (int j = 0; j < g.Mq; ++j) {
        EXPECT_NEAR(f[j].imag(), 0.0, 1e-14);
        EXPECT_GE(f[j].real(), 0.0);
        if (std::abs(f[j]) > std::abs(f[arg])) arg = j;
    }
    EXPECT_EQ(arg, 0);
    cvec fp = coherent_state(w, 0.0, 1.25);  // p/hbar integer: images add coherently
    for (int j = 0; j < g.Mq; ++j) EXPECT_NEAR(std::abs(fp[j]), std::abs(f[j]), 1e-13);
}

TEST(CoherentState, GaussianOverlapClosedForm) {
    auto g = grid(128);
    const double hbar = 0.25;
    auto w = make_window(WindowKind::gaussian, hbar, g);
    cvec a = coherent_state(w, 0.0, 0.0);
    for (double q : {0.1, 0.5, 1.0, 1.7}) {
        cvec b = coherent_state(w, q, 0.0);
        double ov = (dot(a, b) * g.dq()).real();
        double expect = 0;  // torus: sum over periodic images of the closed form
        for (int n = -2; n <= 2; ++n) expect += std::exp(-std::pow(q - n * g.L, 2) / (4 * hbar));
        EXPECT_NEAR(ov, expect, 1e-12) << q;
    }
}

TEST(CoherentState, PhaseCovariance) {
    auto g = grid(128);
    const double hbar = 0.25;
    auto w = make_window(WindowKind::gaussian, hbar, g);
    cvec base = coherent_state(w, 0.0, 0.0);
    for (int shift : {3, 40, 100}) {
        for (int kk : {-5, 0, 7}) {  // p/hbar on the dual lattice keeps e^{ipy/hbar} periodic
            double p = hbar * 2 * pi * kk / g.L;
            cvec f = coherent_state(w, g.q(shift), p);
            for (int j = 0; j < g.Mq; ++j) {
                cplx expect = base[g.wrap(j - shift)] * std::exp(I * (p * g.q(j) / hbar));
                EXPECT_NEAR(std::abs(f[j] - expect), 0.0, 1e-12);
            }
        }
    }
}

TEST(CoherentState, BandLimitedMatchesSampled) {
    auto g = grid(64, pi);
    const double hbar = 1.0 / 3;
    auto w = make_window(WindowKind::gaussian, hbar, g);
    for (auto [q, p] : {std::pair{0.3, 0.0}, {1.1, 0.8}, {2.9, -1.7}}) {
        cvec a = coherent_state_1d(w, q, p, false), b = coherent_field(w, q, p);
        for (int j = 0; j < g.Mq; ++j) EXPECT_NEAR(std::abs(a[j] - b[j]), 0.0, 1e-12);
    }
}

TEST(Resolution, GaussianDefectSmall) {
    auto g = grid(128, 2 * pi, 6.0, 128);
    const double hbar = 0.25;
    auto w = make_window(WindowKind::gaussian, hbar, g);
    std::mt19937_64 rng(7);
    std::vector<cvec> tests;
    for (int t = 0; t < 3; ++t) tests.push_back(random_bandlimited(g, 12.0, rng));
    EXPECT_LE(resolution_defect(w, g, tests), 1e-3);
}

TEST(Resolution, TruncatedFrameReported) {
    auto g = grid(64, 2 * pi, 1.0, 32);
    auto w = make_window(WindowKind::gaussian, 0.25, g);
    std::mt19937_64 rng(3);
    std::vector<cvec> tests{random_bandlimited(g, 12.0, rng)};
    double d = resolution_defect(w, g, tests);
    EXPECT_GT(d, 0.3);
}

TEST(Resolution, MonotoneInCutoff) {
    auto g = grid(64, 2 * pi, 1.5, 16);
    auto w = make_window(WindowKind::gaussian, 0.25, g);
    std::mt19937_64 rng(11);
    std::vector<cvec> tests{random_bandlimited(g, 6.0, rng)};
    double prev = 1e300;
    for (int r = 0; r < 3; ++r) {
        double d = resolution_defect(w, g, tests);
        EXPECT_LT(d, prev);
        prev = d;
        g.Pmax *= 2;
        g.Mp *= 2;  // fixed dp
    }
}

TEST(Resolution, RefinementOrder) {
    // simultaneous refinement of the momentum quadrature: observed order >= 2
    auto g = grid(64, 2 * pi, 4.0, 8);
    auto w = make_window(WindowKind::gaussian, 0.25, g);
    std::mt19937_64 rng(5);
    std::vector<cvec> tests{random_bandlimited(g, 4.0, rng)};
    double d0 = resolution_defect(w, g, tests);
    g.Mp *= 2;
    double d1 = resolution_defect(w, g, tests);
    EXPECT_GE(std::log2(d0 / d1), 2.0);
}

TEST(HbarFourier, UnitaryAndInverse) {
    auto g = grid(128);
    std::mt19937_64 rng(1);
    cvec v = random_bandlimited(g, 30.0, rng);
    auto F = hbar_fourier(v, 0.3, g);
    double n = 0;
    for (auto& z : F.values) n += std::norm(z) * 2 * pi * 0.3 / g.L;
    EXPECT_NEAR(n, norm2(v) * g.dq(), 1e-12);
    cvec back = inverse_hbar_fourier(F, g);
    for (int j = 0; j < g.Mq; ++j) EXPECT_NEAR(std::abs(back[j] - v[j]), 0.0, 1e-12);
}

TEST(HbarFourier, GaussianSelfDual) {
    auto g = grid(256, 4 * pi);
    const double hbar = 0.2;
    cvec v(g.Mq);
    for (int j = 0; j < g.Mq; ++j) {
        double x = g.torus_delta(g.q(j));
        v[j] = std::pow(pi * hbar, -0.25) * std::exp(-x * x / (2 * hbar));
    }
    auto F = hbar_fourier(v, hbar, g);
    for (int i = 0; i < g.Mq; ++i) {
        double p = F.p[i];
        EXPECT_NEAR(std::abs(F.values[i] - std::pow(pi * hbar, -0.25) * std::exp(-p * p / (2 * hbar))), 0.0, 1e-12);
    }
}

TEST(HbarFourier, TwoDimensional) {
    auto g = grid(32);
    g.d = 2;
    cvec v(g.npos());
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n01;
    for (auto& z : v) z = {n01(rng), n01(rng)};
    auto F = hbar_fourier(v, 0.5, g);
    cvec back = inverse_hbar_fourier(F, g);
    for (std::size_t j = 0; j < v.size(); ++j) EXPECT_NEAR(std::abs(back[j] - v[j]), 0.0, 1e-12);
}

TEST(Potential, CosineFamily) {
    auto g = grid(32, pi);
    auto V = potential_family(g, "cosine", 0.7);
    ASSERT_EQ(V.modes.size(), 2u);
    EXPECT_NEAR(V.dVinf, 0.7 * 2, 1e-9);
    EXPECT_NEAR(V.lipschitz, 0.7 * 4, 1e-9);
    EXPECT_LT(V.symmetry_defect(), 1e-14);
    for (double x : {0.1, 0.77, 2.4}) {
        EXPECT_NEAR(V.value(x), 0.7 * std::cos(2 * x), 1e-14);
        EXPECT_NEAR(V.grad(x), -1.4 * std::sin(2 * x), 1e-13);
    }
    EXPECT_TRUE(potential_family(g, "constant", 2.0).is_constant());
    EXPECT_THROW(make_potential(g, [](double x) { return std::sin(2 * x); }, "odd"), PreconditionViolated);
}

TEST(GridIO, RoundTrip) {
    auto path = (std::filesystem::temp_directory_path() / "hvlab_io_test.bin").string();
    cvec v{{1, 2}, {3, -4}, {0.5, 0}};
    io::write_grid(path, {3}, v);
    auto a = io::read_grid(path);
    ASSERT_TRUE(a.is_complex());
    auto back = a.as_complex();
    for (int i = 0; i < 3; ++i) EXPECT_EQ(back[i], v[i]);
    {
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        std::fputc('X', f);
        std::fclose(f);
    }
    EXPECT_THROW(io::read_grid(path), FormatError);
    std::filesystem::remove(path);
}
