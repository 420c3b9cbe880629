#pragma once

#include <functional>
#include <memory>
#include <random>

#include "common.hpp"
#include "fft.hpp"

namespace hvlab {

// Discretization of phase space. Position is a periodic torus of length L
// (Mq points per axis); momentum is the window [-Pmax, Pmax) with Mp points.
struct PhaseSpaceGrid {
    int d = 1;
    double L = 2 * pi;
    int Mq = 64;
    double Pmax = 6.0;
    int Mp = 64;

    double dq() const { return L / Mq; }
    double dp() const { return 2 * Pmax / Mp; }
    double q(int i) const { return i * dq(); }
    double p(int j) const { return -Pmax + j * dp(); }
    int wrap(long i) const {
        long r = i % Mq;
        return static_cast<int>(r < 0 ? r + Mq : r);
    }
    // angular wavenumber of FFT-ordered mode index i
    double kmode(int i) const { return 2 * pi * (i < Mq / 2 ? i : i - Mq) / L; }
    int mode_int(int i) const { return i < Mq / 2 ? i : i - Mq; }
    std::size_t npos() const { return d == 1 ? Mq : std::size_t(Mq) * Mq; }
    // shortest signed displacement on the torus
    double torus_delta(double x) const { return x - L * std::round(x / L); }

    bool same_as(const PhaseSpaceGrid& o) const {
        return d == o.d && L == o.L && Mq == o.Mq && Pmax == o.Pmax && Mp == o.Mp;
    }
    void validate(bool pow2 = true) const {
        require(d == 1 || d == 2, "PhaseSpaceGrid: d must be 1 or 2");
        require(L > 0 && Pmax > 0 && Mq > 1 && Mp > 1, "PhaseSpaceGrid: nonpositive extent");
        if (pow2) require(is_pow2(Mq) && is_pow2(Mp), "PhaseSpaceGrid: Mq, Mp must be powers of two");
    }
};

inline void check_same_grid(const PhaseSpaceGrid& a, const PhaseSpaceGrid& b) {
    if (!a.same_as(b)) throw GridMismatch("grids differ");
}

enum class WindowKind { gaussian, bump };

inline const char* to_string(WindowKind k) { return k == WindowKind::gaussian ? "gaussian" : "bump"; }
inline WindowKind window_kind_from(const std::string& s) {
    if (s == "gaussian") return WindowKind::gaussian;
    if (s == "bump") return WindowKind::bump;
    throw ConfigInvalid("unknown window kind '" + s + "'");
}

// Unit-L2 profile f, its Fourier transform fhat(eta) = int f(x) e^{-i eta x} dx
// (real: f is even) and the semiclassical rescaling g(x) = hbar^{-1/4} f(x/sqrt hbar),
// ghat(xi) = hbar^{1/4} fhat(sqrt(hbar) xi).
class WindowProfile {
public:
    WindowProfile(WindowKind kind) : kind_(kind) {
        if (kind_ == WindowKind::bump) {
            nodes_ = tanh_sinh();
            double s = 0;
            for (std::size_t i = 0; i < nodes_.x.size(); ++i) s += nodes_.w[i] * raw2(nodes_.x[i]);
            c_ = 1.0 / std::sqrt(s);
            double g = 0;
            for (std::size_t i = 0; i < nodes_.x.size(); ++i) {
                double x = nodes_.x[i];
                double d = c_ * raw(x) * (-2 * x / ((1 - x * x) * (1 - x * x)));
                g += nodes_.w[i] * d * d;
            }
            grad2_ = g;
        } else {
            c_ = std::pow(pi, -0.25);
            grad2_ = 0.5;
        }
    }

    WindowKind kind() const { return kind_; }
    double support() const { return kind_ == WindowKind::bump ? 1.0 : 8.0; }

    double f(double x) const {
        if (kind_ == WindowKind::gaussian) return c_ * std::exp(-0.5 * x * x);
        return std::abs(x) < 1 ? c_ * raw(x) : 0.0;
    }
    double fhat(double eta) const {
        if (kind_ == WindowKind::gaussian) return c_ * std::sqrt(2 * pi) * std::exp(-0.5 * eta * eta);
        double s = 0;
        for (std::size_t i = 0; i < nodes_.x.size(); ++i)
            s += nodes_.w[i] * raw(nodes_.x[i]) * std::cos(eta * nodes_.x[i]);
        return c_ * s;
    }
    double df(double x) const {
        if (kind_ == WindowKind::gaussian) return -x * f(x);
        if (std::abs(x) >= 1) return 0.0;
        return f(x) * (-2 * x / ((1 - x * x) * (1 - x * x)));
    }
    // d/d eta of fhat
    double dfhat(double eta) const {
        if (kind_ == WindowKind::gaussian) return -eta * fhat(eta);
        double s = 0;
        for (std::size_t i = 0; i < nodes_.x.size(); ++i) {
            double x = nodes_.x[i];
            s -= nodes_.w[i] * x * raw(x) * std::sin(eta * x);
        }
        return c_ * s;
    }
    double grad_norm2() const { return grad2_; }  // ||f'||_2^2

private:
    static double raw(double x) {
        double u = 1 - x * x;
        return u > 0 ? std::exp(-1.0 / u) : 0.0;
    }
    static double raw2(double x) { return raw(x) * raw(x); }

    WindowKind kind_;
    Quadrature nodes_;
    double c_ = 1, grad2_ = 0;
};

struct CoherentWindow {
    WindowKind kind = WindowKind::gaussian;
    double hbar = 0.25;
    PhaseSpaceGrid grid;
    rvec envelope;           // hbar^{-d/4} f(y/sqrt hbar) on the position grid, periodized, l2-normalized
    double supportRadius = 8.0;   // in units of sqrt(hbar)
    double truncationMass = 0.0;  // L2 mass of f outside supportRadius
    double sampleRescale = 1.0;   // factor applied after sampling to enforce the norm
    std::shared_ptr<const WindowProfile> profile;

    double sqh() const { return std::sqrt(hbar); }
    double f(double x) const { return profile->f(x); }
    double df(double x) const { return profile->df(x); }
    double ghat(double xi) const { return std::pow(hbar, 0.25) * profile->fhat(sqh() * xi); }
    double dghat(double xi) const { return std::pow(hbar, 0.75) * profile->dfhat(sqh() * xi); }
    // ||grad f||^2 of the unscaled profile, summed over dimensions
    double grad_norm2() const { return grid.d * profile->grad_norm2(); }
};

inline CoherentWindow make_window(WindowKind kind, double hbar, const PhaseSpaceGrid& grid) {
    require(hbar > 0, "make_window: hbar must be positive");
    grid.validate(false);
    if (std::sqrt(hbar) < 4 * grid.dq())
        throw UnresolvedWindow("window width sqrt(hbar)=" + std::to_string(std::sqrt(hbar)) +
                               " below 4*dq=" + std::to_string(4 * grid.dq()));
    CoherentWindow w;
    w.kind = kind;
    w.hbar = hbar;
    w.grid = grid;
    w.profile = std::make_shared<WindowProfile>(kind);
    w.supportRadius = w.profile->support();
    if (kind == WindowKind::gaussian) w.truncationMass = std::erfc(w.supportRadius);  // int_{|x|>R} f^2
    const double sq = w.sqh();
    const int M = grid.Mq;
    rvec one(M, 0.0);
    const int images = static_cast<int>(std::ceil(w.supportRadius * sq / grid.L)) + 1;
    for (int j = 0; j < M; ++j) {
        double s = 0;
        for (int n = -images; n <= images; ++n) {
            double x = (grid.q(j) - n * grid.L) / sq;
            if (std::abs(x) <= w.supportRadius) s += w.f(x);
        }
        one[j] = std::pow(hbar, -0.25) * s;
    }
    if (grid.d == 1) {
        w.envelope = one;
    } else {
        w.envelope.resize(grid.npos());
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) w.envelope[i * M + j] = one[i] * one[j];
    }
    double nrm = 0;
    for (double v : w.envelope) nrm += v * v;
    nrm = std::sqrt(nrm * std::pow(grid.dq(), grid.d));
    w.sampleRescale = 1.0 / nrm;
    for (double& v : w.envelope) v *= w.sampleRescale;
    return w;
}

// Sampled coherent state hbar^{-d/4} f((y-q)/sqrt hbar) e^{i p.y/hbar}, summed over
// periodic images y - nL (each image carries its own lift in the phase) and
// renormalized on the grid. Field values (continuum normalization dq^d sum |.|^2 = 1).
inline cvec coherent_state_1d(const CoherentWindow& w, double q, double p, bool normalize = true) {
    const auto& g = w.grid;
    const double sq = w.sqh(), pre = std::pow(w.hbar, -0.25);
    const int images = static_cast<int>(std::ceil(w.supportRadius * sq / g.L)) + 2;
    cvec out(g.Mq);
    for (int j = 0; j < g.Mq; ++j) {
        cplx s = 0;
        for (int n = -images; n <= images; ++n) {
            double y = g.q(j) - n * g.L;
            double x = (y - q) / sq;
            if (std::abs(x) > w.supportRadius + 4) continue;
            s += w.f(x) * std::exp(I * (p * y / w.hbar));
        }
        out[j] = pre * s;
    }
    if (normalize) {
        double nrm = std::sqrt(norm2(out) * g.dq());
        if (nrm > 0)
            for (auto& z : out) z /= nrm;
    }
    return out;
}

inline cvec coherent_state(const CoherentWindow& w, const std::vector<double>& q, const std::vector<double>& p) {
    const auto& g = w.grid;
    require(static_cast<int>(q.size()) == g.d && static_cast<int>(p.size()) == g.d,
            "coherent_state: (q,p) dimension mismatch");
    for (int a = 0; a < g.d; ++a)
        require(std::abs(p[a]) <= g.Pmax + 1e-12 && q[a] >= -g.L && q[a] <= 2 * g.L,
                "coherent_state: (q,p) outside grid domain");
    if (g.d == 1) return coherent_state_1d(w, q[0], p[0]);
    cvec a = coherent_state_1d(w, q[0], p[0]), b = coherent_state_1d(w, q[1], p[1]);
    cvec out(g.npos());
    for (int i = 0; i < g.Mq; ++i)
        for (int j = 0; j < g.Mq; ++j) out[i * g.Mq + j] = a[i] * b[j];
    return out;
}

inline cvec coherent_state(const CoherentWindow& w, double q, double p) {
    return coherent_state(w, std::vector<double>{q}, std::vector<double>{p});
}

// Band-limited coherent state: exact Fourier coefficients of the periodized
// window on the grid band, FFT mode order, orthonormal-mode normalization:
// c_k = L^{-1/2} e^{i(p/hbar - k) q} ghat(k - p/hbar).
inline cvec coherent_modes(const CoherentWindow& w, double q, double p) {
    const auto& g = w.grid;
    cvec c(g.Mq);
    const double s = 1.0 / std::sqrt(g.L);
    for (int i = 0; i < g.Mq; ++i) {
        double k = g.kmode(i), xi = k - p / w.hbar;
        c[i] = s * std::exp(I * (-xi * q)) * w.ghat(xi);
    }
    return c;
}

// Field values of the band-limited coherent state on the position grid.
inline cvec coherent_field(const CoherentWindow& w, double q, double p) {
    cvec c = coherent_modes(w, q, p);
    cvec v = fft::to_sites(c);
    const double s = 1.0 / std::sqrt(w.grid.dq());
    for (auto& z : v) z *= s;
    return v;
}

// (2 pi hbar)^{-d/2} int f(x) e^{-i p x/hbar} dx on the dual lattice p_n = hbar k_n
// (FFT order). Unitary with respect to dq and dp_n = 2 pi hbar / L.
struct HbarSpectrum {
    double hbar = 1;
    rvec p;        // per-axis momenta, FFT order
    cvec values;   // row-major for d=2
};

inline HbarSpectrum hbar_fourier(const cvec& field, double hbar, const PhaseSpaceGrid& g) {
    require(field.size() == g.npos(), "hbar_fourier: field size");
    HbarSpectrum out;
    out.hbar = hbar;
    out.p.resize(g.Mq);
    for (int i = 0; i < g.Mq; ++i) out.p[i] = hbar * g.kmode(i);
    out.values = field;
    double s = std::pow(g.dq(), g.d) * std::pow(2 * pi * hbar, -0.5 * g.d);
    if (g.d == 1) fft::forward(out.values.data(), g.Mq);
    else fft::forward2(out.values.data(), g.Mq, g.Mq);
    for (auto& z : out.values) z *= s;
    return out;
}

inline cvec inverse_hbar_fourier(const HbarSpectrum& F, const PhaseSpaceGrid& g) {
    cvec v = F.values;
    if (g.d == 1) fft::backward(v.data(), g.Mq);
    else fft::backward2(v.data(), g.Mq, g.Mq);
    double dpn = 2 * pi * F.hbar / g.L;
    double s = std::pow(2 * pi * F.hbar, -0.5 * g.d) * std::pow(dpn, g.d);
    for (auto& z : v) z *= s;
    return v;
}

// max_v || (2 pi hbar)^{-d} sum_{q,p} dq dp <f_{q,p}, v> f_{q,p} - v ||, quadrature on
// the (Mq x Mp) phase grid, sampled coherent states (d = 1).
inline double resolution_defect(const CoherentWindow& w, const PhaseSpaceGrid& g, const std::vector<cvec>& tests) {
    require(!tests.empty(), "resolution_defect: need at least one test vector");
    require(g.d == 1, "resolution_defect: d=1 only");
    CoherentWindow wg = w;
    wg.grid.Pmax = g.Pmax;
    wg.grid.Mp = g.Mp;
    const double dq = g.dq(), dp = g.dp(), pre = dq * dp / (2 * pi * w.hbar);
    std::vector<cvec> acc(tests.size(), cvec(g.Mq, 0.0));
    for (int jp = 0; jp < g.Mp; ++jp) {
        for (int iq = 0; iq < g.Mq; ++iq) {
            cvec f = coherent_state_1d(wg, g.q(iq), g.p(jp));
            for (std::size_t t = 0; t < tests.size(); ++t) {
                cplx c = dot(f, tests[t]) * dq * pre;
                auto& a = acc[t];
                for (int y = 0; y < g.Mq; ++y) a[y] += c * f[y];
            }
        }
    }
    double worst = 0;
    for (std::size_t t = 0; t < tests.size(); ++t) {
        double e = 0;
        for (int y = 0; y < g.Mq; ++y) e += std::norm(acc[t][y] - tests[t][y]);
        worst = std::max(worst, std::sqrt(e * dq));
    }
    return worst;
}

// Random unit-norm field whose Fourier content is limited to |k| <= kmax.
inline cvec random_bandlimited(const PhaseSpaceGrid& g, double kmax, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    cvec c(g.Mq, 0.0);
    for (int i = 0; i < g.Mq; ++i)
        if (std::abs(g.kmode(i)) <= kmax) c[i] = cplx(n01(rng), n01(rng));
    double s = std::sqrt(norm2(c));
    for (auto& z : c) z /= s;
    cvec v = fft::to_sites(c);
    for (auto& z : v) z /= std::sqrt(g.dq());
    return v;
}

// Even, periodic two-body potential V(x) with its trigonometric content.
struct Potential {
    PhaseSpaceGrid grid;
    std::string name = "zero";
    rvec V, dV, d2V;  // samples on the position grid
    double Vinf = 0, dVinf = 0, lipschitz = 0;  // ||V||, ||V'||, ||V''|| (sup norms)
    struct Mode {
        double kappa;  // angular wavenumber
        double amp;    // real Fourier amplitude: V(x) = sum amp e^{i kappa x}
    };
    std::vector<Mode> modes;

    double value(double x) const {
        double s = 0;
        for (auto& m : modes) s += m.amp * std::cos(m.kappa * x);
        return s;
    }
    double grad(double x) const {
        double s = 0;
        for (auto& m : modes) s -= m.amp * m.kappa * std::sin(m.kappa * x);
        return s;
    }
    double hess(double x) const {
        double s = 0;
        for (auto& m : modes) s -= m.amp * m.kappa * m.kappa * std::cos(m.kappa * x);
        return s;
    }
    bool is_constant() const {
        for (auto& m : modes)
            if (m.kappa != 0 && m.amp != 0) return false;
        return true;
    }
    double symmetry_defect() const {
        double e = 0;
        for (int j = 0; j < grid.Mq; ++j) e = std::max(e, std::abs(V[j] - V[grid.wrap(-j)]));
        return e;
    }
};

// Build from samples on the grid; V must be even. Derivatives are spectral.
inline Potential make_potential(const PhaseSpaceGrid& g, const std::function<double(double)>& fn, std::string name) {
    require(g.d == 1, "make_potential: d=1 only");
    Potential P;
    P.grid = g;
    P.name = std::move(name);
    cvec c(g.Mq);
    for (int j = 0; j < g.Mq; ++j) c[j] = fn(g.q(j));
    double sup = 0, asym = 0;
    for (int j = 0; j < g.Mq; ++j) {
        sup = std::max(sup, std::abs(c[j].real()));
        asym = std::max(asym, std::abs(c[j].real() - c[g.wrap(-j)].real()));
    }
    if (asym > 1e-10 * std::max(1.0, sup)) throw PreconditionViolated("potential is not even: V(-x) != V(x)");
    fft::forward(c);
    double mx = 0;
    for (auto& z : c) mx = std::max(mx, std::abs(z));
    for (int i = 0; i < g.Mq; ++i) {
        double a = c[i].real() / g.Mq;
        if (std::abs(c[i]) > 1e-13 * std::max(mx, 1e-300) && std::abs(c[i]) > 1e-300) {
            if (i == g.Mq / 2) continue;  // Nyquist mode is not representable as an even smooth V
            P.modes.push_back({g.kmode(i), a});
        }
    }
    P.V.resize(g.Mq);
    P.dV.resize(g.Mq);
    P.d2V.resize(g.Mq);
    for (int j = 0; j < g.Mq; ++j) {
        P.V[j] = P.value(g.q(j));
        P.dV[j] = P.grad(g.q(j));
        P.d2V[j] = P.hess(g.q(j));
    }
    // sup norms from a refined sampling of the trigonometric interpolant
    const int fine = 16 * g.Mq;
    for (int j = 0; j < fine; ++j) {
        double x = g.L * j / fine;
        P.Vinf = std::max(P.Vinf, std::abs(P.value(x)));
        P.dVinf = std::max(P.dVinf, std::abs(P.grad(x)));
        P.lipschitz = std::max(P.lipschitz, std::abs(P.hess(x)));
    }
    if (P.symmetry_defect() > 1e-10 * std::max(1.0, P.Vinf))
        throw PreconditionViolated("potential is not even: V(-x) != V(x)");
    return P;
}

// Named families: zero, cosine (A cos(2 pi x/L)), double-mode (A1 cos + A2 cos(2.)).
inline Potential potential_family(const PhaseSpaceGrid& g, const std::string& family, double A1 = 0, double A2 = 0) {
    const double k = 2 * pi / g.L;
    if (family == "zero") return make_potential(g, [](double) { return 0.0; }, "zero");
    if (family == "constant") return make_potential(g, [A1](double) { return A1; }, "constant");
    if (family == "cosine")
        return make_potential(g, [=](double x) { return A1 * std::cos(k * x); }, "cosine");
    if (family == "double-mode")
        return make_potential(g, [=](double x) { return A1 * std::cos(k * x) + A2 * std::cos(2 * k * x); },
                              "double-mode");
    throw ConfigInvalid("unknown potential family '" + family + "'");
}

}  // namespace hvlab
