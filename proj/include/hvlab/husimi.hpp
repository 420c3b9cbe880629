#pragma once

#include "fermion.hpp"

namespace hvlab {

// Phase-space evaluation grid, decoupled from the wavefunction grid:
// q_a = a L / Q, p_b = -Pmax + b dp with dp = 2 Pmax / P.
struct PhaseGrid {
    double L = 2 * pi;
    int Q = 64, P = 64;
    double Pmax = 6;

    double dq() const { return L / Q; }
    double dp() const { return 2 * Pmax / P; }
    double q(int a) const { return a * dq(); }
    double p(int b) const { return -Pmax + b * dp(); }
    double cell() const { return dq() * dp(); }
    bool same_as(const PhaseGrid& o) const { return L == o.L && Q == o.Q && P == o.P && Pmax == o.Pmax; }
};

inline PhaseGrid phase_grid(const PhaseSpaceGrid& g, int Q, int P, double Pmax = -1) {
    PhaseGrid pg;
    pg.L = g.L;
    pg.Q = Q;
    pg.P = P;
    pg.Pmax = Pmax > 0 ? Pmax : g.Pmax;
    require(Q >= 2 && P >= 2 && pg.Pmax > 0, "phase_grid: need Q,P >= 2 and Pmax > 0");
    return pg;
}

// k = 1: values[a*P + b]; k = 2: values[((a1*P + b1)*Q + a2)*P + b2].
struct HusimiMeasure {
    int k = 1;
    int N = 1;
    double hbar = 1;
    WindowKind window = WindowKind::gaussian;
    PhaseGrid grid;
    rvec values;
    double outOfBandMass = 0;  // fraction of sum_k gamma_kk with |hbar k| > Pmax

    std::size_t points() const { return values.size(); }
    double at(int a, int b) const { return values[static_cast<std::size_t>(a) * grid.P + b]; }
    double at(int a1, int b1, int a2, int b2) const {
        return values[((static_cast<std::size_t>(a1) * grid.P + b1) * grid.Q + a2) * grid.P + b2];
    }
    double sup() const {
        double s = 0;
        for (double v : values) s = std::max(s, std::abs(v));
        return s;
    }
};

namespace detail {

inline void check_window(const ReducedDensityMatrix& r, const CoherentWindow& w, const PhaseGrid& pg) {
    const double h = std::pow(double(r.N), -1.0 / w.grid.d);
    if (std::abs(h - w.hbar) > 1e-12 * h)
        throw PreconditionViolated("window hbar " + std::to_string(w.hbar) + " does not match N^{-1/d}=" +
                                   std::to_string(h));
    require(w.grid.Mq == r.M, "Husimi: window grid does not match the density matrix");
    require(std::abs(pg.L - w.grid.L) < 1e-14, "Husimi: phase grid period differs from the position grid");
}

inline double out_of_band(const ReducedDensityMatrix& g1, const PhaseSpaceGrid& grid, double hbar, double Pmax) {
    double tot = 0, out = 0;
    for (int i = 0; i < g1.M; ++i) {
        double v = g1.mat(i, i).real();
        tot += v;
        if (std::abs(hbar * grid.kmode(i)) > Pmax) out += v;
    }
    return tot > 0 ? out / tot : 0.0;
}

// window Fourier factors ghat(k_i - p/hbar) for every mode, thresholded for k=2
struct ModeWeights {
    std::vector<int> idx;
    rvec val;
};
inline ModeWeights mode_weights(const CoherentWindow& w, double p, double rel) {
    ModeWeights mw;
    const int M = w.grid.Mq;
    rvec all(M);
    double mx = 0;
    for (int i = 0; i < M; ++i) {
        all[i] = w.ghat(w.grid.kmode(i) - p / w.hbar);
        mx = std::max(mx, std::abs(all[i]));
    }
    for (int i = 0; i < M; ++i)
        if (std::abs(all[i]) > rel * mx) {
            mw.idx.push_back(i);
            mw.val.push_back(all[i]);
        }
    return mw;
}

inline int fold(int delta, int Q) { return ((delta % Q) + Q) % Q; }

}  // namespace detail

// m^{(k)}(q,p) = <F_{q,p}^{(x)k}, gamma^{(k)} F_{q,p}^{(x)k}> with band-limited coherent
// states. For each momentum (tuple) the q-dependence is a trigonometric polynomial:
// its coefficients are summed per mode difference, folded mod Q and transformed with
// one Q-point (Q x Q for k=2) FFT, which is exact on the q-grid.
inline HusimiMeasure husimi_k(const ReducedDensityMatrix& rdm, const CoherentWindow& w, const PhaseGrid& pg) {
    require(w.grid.d == 1, "husimi_k: d=1 only");
    if (rdm.k > 2) throw PreconditionViolated("husimi_k: k <= 2");
    detail::check_window(rdm, w, pg);
    ReducedDensityMatrix g = rdm;
    detail::to_modal(g);
    HusimiMeasure m;
    m.k = g.k;
    m.N = g.N;
    m.hbar = w.hbar;
    m.window = w.kind;
    m.grid = pg;
    const int M = g.M, Q = pg.Q, P = pg.P;
    const auto& grid = w.grid;
    if (g.k == 1) {
        m.outOfBandMass = detail::out_of_band(g, grid, w.hbar, pg.Pmax);
        m.values.assign(static_cast<std::size_t>(Q) * P, 0.0);
        cvec coef(Q);
        for (int b = 0; b < P; ++b) {
            const double p = pg.p(b);
            rvec gh(M);
            for (int i = 0; i < M; ++i) gh[i] = w.ghat(grid.kmode(i) - p / w.hbar);
            std::fill(coef.begin(), coef.end(), 0.0);
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < M; ++j)
                    coef[detail::fold(grid.mode_int(i) - grid.mode_int(j), Q)] += g.mat(i, j) * gh[i] * gh[j];
            fft::backward(coef.data(), Q);
            for (int a = 0; a < Q; ++a) m.values[static_cast<std::size_t>(a) * P + b] = coef[a].real() / pg.L;
        }
        return m;
    }
    if (static_cast<double>(Q) * Q * P * P > 4e7)
        throw CapacityExceeded("husimi_k: k=2 phase grid (Q*P)^2 over 4e7 points");
    {
        ReducedDensityMatrix g1;
        g1.k = 1;
        g1.M = M;
        g1.N = g.N;
        g1.modal = true;
        g1.mat = RMat::Zero(M, M);
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j)
                for (int z = 0; z < M; ++z) g1.mat(i, j) += g.mat(i * M + z, j * M + z);
        m.outOfBandMass = detail::out_of_band(g1, grid, w.hbar, pg.Pmax);
    }
    m.values.assign(static_cast<std::size_t>(Q) * P * Q * P, 0.0);
    const double rel = w.kind == WindowKind::gaussian ? 1e-13 : 1e-10;
    std::vector<detail::ModeWeights> mw(P);
    for (int b = 0; b < P; ++b) mw[b] = detail::mode_weights(w, pg.p(b), rel);
    cvec coef(static_cast<std::size_t>(Q) * Q);
    for (int b1 = 0; b1 < P; ++b1)
        for (int b2 = 0; b2 < P; ++b2) {
            std::fill(coef.begin(), coef.end(), 0.0);
            const auto &A = mw[b1], &B = mw[b2];
            for (std::size_t u1 = 0; u1 < A.idx.size(); ++u1)
                for (std::size_t v1 = 0; v1 < A.idx.size(); ++v1) {
                    const int i1 = A.idx[u1], j1 = A.idx[v1];
                    const double w1 = A.val[u1] * A.val[v1];
                    const int d1 = detail::fold(grid.mode_int(i1) - grid.mode_int(j1), Q);
                    for (std::size_t u2 = 0; u2 < B.idx.size(); ++u2) {
                        const int i2 = B.idx[u2];
                        const cplx* row = &g.mat(i1 * M + i2, 0);
                        for (std::size_t v2 = 0; v2 < B.idx.size(); ++v2) {
                            const int j2 = B.idx[v2];
                            const int d2 = detail::fold(grid.mode_int(i2) - grid.mode_int(j2), Q);
                            coef[static_cast<std::size_t>(d1) * Q + d2] += row[j1 * M + j2] * (w1 * B.val[u2] * B.val[v2]);
                        }
                    }
                }
            fft::backward2(coef.data(), Q, Q);
            for (int a1 = 0; a1 < Q; ++a1)
                for (int a2 = 0; a2 < Q; ++a2)
                    m.values[((static_cast<std::size_t>(a1) * P + b1) * Q + a2) * P + b2] =
                        coef[static_cast<std::size_t>(a1) * Q + a2].real() / (pg.L * pg.L);
        }
    return m;
}

// Pointwise oracle: sampled image-sum (periodized, not renormalized) coherent states
// contracted with the site-basis density matrix.
inline double husimi_pointwise(const ReducedDensityMatrix& rdm, const CoherentWindow& w,
                               const std::vector<std::pair<double, double>>& qp) {
    require(static_cast<int>(qp.size()) == rdm.k, "husimi_pointwise: need k phase points");
    require(!rdm.modal, "husimi_pointwise: site-basis density matrix expected");
    const int M = rdm.M;
    const double dq = w.grid.dq();
    std::vector<cvec> F;
    for (auto [q, p] : qp) {
        cvec f = coherent_state_1d(w, q, p, false);
        for (auto& z : f) z *= std::sqrt(dq);  // orthonormal-site coefficients
        F.push_back(std::move(f));
    }
    cplx s = 0;
    if (rdm.k == 1) {
        for (int x = 0; x < M; ++x)
            for (int y = 0; y < M; ++y) s += std::conj(F[0][x]) * rdm.mat(x, y) * F[0][y];
    } else {
        cvec v(static_cast<std::size_t>(M) * M);
        for (int y1 = 0; y1 < M; ++y1)
            for (int y2 = 0; y2 < M; ++y2) v[y1 * M + y2] = F[0][y1] * F[1][y2];
        for (int x1 = 0; x1 < M; ++x1)
            for (int x2 = 0; x2 < M; ++x2) {
                cplx r = 0;
                const cplx* row = &rdm.mat(x1 * M + x2, 0);
                for (std::size_t c = 0; c < v.size(); ++c) r += row[c] * v[c];
                s += std::conj(F[0][x1] * F[1][x2]) * r;
            }
    }
    return s.real();
}

struct CheckResult {
    std::string check;
    double value = 0;
    double bound = 0;
    bool pass = false;
};

struct PropertyReport {
    std::vector<CheckResult> checks;
    bool pass() const {
        for (auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
    const CheckResult& get(const std::string& name) const {
        for (auto& c : checks)
            if (c.check == name) return c;
        throw PreconditionViolated("no check named " + name);
    }
    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (auto& c : checks) j.push_back({{"check", c.check}, {"value", c.value}, {"bound", c.bound}, {"pass", c.pass}});
        return j;
    }
};

// Symmetry, total mass (2 pi)^{-k} int m = N!/((N-k)! N^k), pointwise bounds and, with
// mLower, the marginal law (2 pi hbar)^{-1} int m^{(2)} dq2 dp2 = (N-1) m^{(1)}.
inline PropertyReport husimi_property_report(const HusimiMeasure& m, const HusimiMeasure* mLower = nullptr,
                                             double massTol = 1e-6, double tol = 1e-6) {
    PropertyReport r;
    const auto& pg = m.grid;
    const int Q = pg.Q, P = pg.P;
    double sym = 0;
    if (m.k == 2)
        for (int a1 = 0; a1 < Q; ++a1)
            for (int b1 = 0; b1 < P; ++b1)
                for (int a2 = 0; a2 < Q; ++a2)
                    for (int b2 = 0; b2 < P; ++b2) sym = std::max(sym, std::abs(m.at(a1, b1, a2, b2) - m.at(a2, b2, a1, b1)));
    r.checks.push_back({"symmetry", sym, tol, sym <= tol});
    double mass = 0;
    for (double v : m.values) mass += v;
    mass *= std::pow(pg.cell() / (2 * pi), m.k);
    const double expect = falling(m.N, m.k) / std::pow(double(m.N), m.k);
    const double mres = std::abs(mass - expect);
    r.checks.push_back({"mass", mres, massTol, mres <= massTol});
    double lo = 0, hi = 0;
    for (double v : m.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    r.checks.push_back({"lower_bound", -lo, tol, lo >= -tol});
    r.checks.push_back({"upper_bound", hi, 1 + tol, hi <= 1 + tol});
    if (mLower) {
        require(m.k == 2 && mLower->k == 1 && mLower->grid.same_as(pg) && mLower->N == m.N,
                "marginal check needs m^{(1)} on the same phase grid and state");
        double worst = 0;
        const double f = pg.cell() / (2 * pi * m.hbar);
        for (int a1 = 0; a1 < Q; ++a1)
            for (int b1 = 0; b1 < P; ++b1) {
                double s = 0;
                for (int a2 = 0; a2 < Q; ++a2)
                    for (int b2 = 0; b2 < P; ++b2) s += m.at(a1, b1, a2, b2);
                worst = std::max(worst, std::abs(f * s - (m.N - 1) * mLower->at(a1, b1)));
            }
        r.checks.push_back({"marginal", worst, tol, worst <= tol});
    }
    return r;
}

// Wigner transform of gamma^{(1)} on the torus. W is a comb in momentum: masses at
// pbar_s = s pi hbar / L (s = n + n'), trigonometric polynomial in q:
// W = (2 pi hbar / L) sum gamma_{nn'} e^{i(k_n - k_n') q} delta(p - pbar_{nn'}).
// Stored as real samples on Qw = 2 Mq q-points (enough to carry every mode difference).
struct WignerFunction {
    double hbar = 1;
    double L = 2 * pi;
    int Qw = 0;
    int smin = 0, S = 0;  // s = smin .. smin + S - 1
    rvec mass;            // mass[a*S + (s - smin)]
    double imagResidue = 0;

    double pbar(int s) const { return s * pi * hbar / L; }
    double dpbar() const { return pi * hbar / L; }
    double q(int a) const { return a * L / Qw; }
    double density(int a, int s) const { return mass[static_cast<std::size_t>(a) * S + (s - smin)] / dpbar(); }
};

inline WignerFunction wigner_1(const ReducedDensityMatrix& rdm1, double hbar, const PhaseSpaceGrid& grid) {
    require(rdm1.k == 1, "wigner_1: k=1 density matrix required");
    ReducedDensityMatrix g = rdm1;
    detail::to_modal(g);
    const int M = g.M;
    WignerFunction W;
    W.hbar = hbar;
    W.L = grid.L;
    W.Qw = 2 * M;
    W.smin = -M;
    W.S = 2 * M - 1;
    W.mass.assign(static_cast<std::size_t>(W.Qw) * W.S, 0.0);
    const double pre = 2 * pi * hbar / grid.L;
    std::vector<cvec> coef(W.S, cvec(W.Qw, 0.0));
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j) {
            const int n = grid.mode_int(i), np = grid.mode_int(j);
            coef[n + np - W.smin][detail::fold(n - np, W.Qw)] += pre * g.mat(i, j);
        }
    for (int s = 0; s < W.S; ++s) {
        fft::backward(coef[s].data(), W.Qw);
        for (int a = 0; a < W.Qw; ++a) {
            W.mass[static_cast<std::size_t>(a) * W.S + s] = coef[s][a].real();
            W.imagResidue = std::max(W.imagResidue, std::abs(coef[s][a].imag()));
        }
    }
    return W;
}

// Minimal-image ("open line") Wigner function, W(q,p) = (2 pi hbar)^{-1} int_{|y|<L/2}
// gamma(q + y/2; q - y/2) e^{-i p y/hbar} dy, on the grid points q_a with y = 2 j dq.
// This is the Wigner function of the kernel cut to one period; for states localized
// well inside a period it is the whole-line Wigner function up to tails.
inline rvec wigner_open(const ReducedDensityMatrix& rdm1, double hbar, const PhaseSpaceGrid& grid, const PhaseGrid& pg) {
    require(rdm1.k == 1 && !rdm1.modal, "wigner_open: site-basis gamma^{(1)} required");
    const int M = rdm1.M;
    require(pg.Q == M, "wigner_open: q-grid must coincide with the position grid");
    const double dq = grid.dq();
    rvec out(static_cast<std::size_t>(pg.Q) * pg.P);
    for (int a = 0; a < M; ++a)
        for (int b = 0; b < pg.P; ++b) {
            cplx s = 0;
            for (int j = -M / 4 + 1; j < M / 4; ++j) {
                const double y = 2 * j * dq;
                s += rdm1.mat(grid.wrap(a + j), grid.wrap(a - j)) / dq * std::exp(-I * (pg.p(b) * y / hbar));
            }
            out[static_cast<std::size_t>(a) * pg.P + b] = (s * 2.0 * dq).real() / (2 * pi * hbar);
        }
    return out;
}

// ||m1 - W * G^hbar||_inf / ||m1||_inf with G^hbar = (pi hbar)^{-1} e^{-(q^2+p^2)/hbar}.
// The q-convolution multiplies Fourier coefficients (FFT over the Qw samples) by
// e^{-hbar k^2/4}; the p-convolution spreads each comb mass with the normalized Gaussian.
inline double wigner_smoothing_check(const HusimiMeasure& m1, const WignerFunction& W) {
    if (m1.window != WindowKind::gaussian)
        throw WindowKindMismatch("Wigner smoothing relation holds for the gaussian window only");
    require(m1.k == 1, "wigner_smoothing_check: k=1");
    require(std::abs(m1.hbar - W.hbar) < 1e-14, "wigner_smoothing_check: hbar mismatch");
    const auto& pg = m1.grid;
    const double h = W.hbar;
    // smoothed q-coefficients per comb line
    std::vector<cvec> c(W.S, cvec(W.Qw));
    for (int s = 0; s < W.S; ++s) {
        for (int a = 0; a < W.Qw; ++a) c[s][a] = W.mass[static_cast<std::size_t>(a) * W.S + s];
        fft::forward(c[s].data(), W.Qw);
        for (int i = 0; i < W.Qw; ++i) {
            const int n = i < W.Qw / 2 ? i : i - W.Qw;
            const double k = 2 * pi * n / W.L;
            c[s][i] *= std::exp(-h * k * k / 4) / W.Qw;
        }
    }
    const double falling_ratio = 1.0;  // N/N for k = 1
    double worst = 0;
    for (int a = 0; a < pg.Q; ++a) {
        rvec line(W.S);
        for (int s = 0; s < W.S; ++s) {
            cplx v = 0;
            for (int i = 0; i < W.Qw; ++i) {
                const int n = i < W.Qw / 2 ? i : i - W.Qw;
                v += c[s][i] * std::exp(I * (2 * pi * n * pg.q(a) / W.L));
            }
            line[s] = v.real();
        }
        for (int b = 0; b < pg.P; ++b) {
            double pred = 0;
            for (int s = 0; s < W.S; ++s) {
                const double d = pg.p(b) - W.pbar(s + W.smin);
                pred += line[s] * std::exp(-d * d / h) / std::sqrt(pi * h);
            }
            worst = std::max(worst, std::abs(m1.at(a, b) - falling_ratio * pred));
        }
    }
    return worst / m1.sup();
}

struct Moments {
    double mass = 0;     // (2 pi)^{-dk} int m
    double firstQ = 0;   // int q m (k=1, signed, torus coordinate in [-L/2, L/2])
    double absQ = 0;     // int |q| m
    double p2 = 0;       // int |p|^2 m
};

inline Moments moments(const HusimiMeasure& m) {
    const auto& pg = m.grid;
    Moments r;
    auto qc = [&](int a) {
        double x = pg.q(a);
        x -= pg.L * std::round(x / pg.L);
        return std::abs(std::abs(x) - pg.L / 2) < 1e-12 ? 0.0 : x;  // antipode has no sign
    };
    const double cell = pg.cell();
    if (m.k == 1) {
        for (int a = 0; a < pg.Q; ++a)
            for (int b = 0; b < pg.P; ++b) {
                const double v = m.at(a, b) * cell;
                r.mass += v;
                r.firstQ += qc(a) * v;
                r.absQ += std::abs(qc(a)) * v;
                r.p2 += pg.p(b) * pg.p(b) * v;
            }
    } else {
        for (int a1 = 0; a1 < pg.Q; ++a1)
            for (int b1 = 0; b1 < pg.P; ++b1)
                for (int a2 = 0; a2 < pg.Q; ++a2)
                    for (int b2 = 0; b2 < pg.P; ++b2) {
                        const double v = m.at(a1, b1, a2, b2) * cell * cell;
                        r.mass += v;
                        r.absQ += std::hypot(qc(a1), qc(a2)) * v;
                        r.p2 += (pg.p(b1) * pg.p(b1) + pg.p(b2) * pg.p(b2)) * v;
                    }
    }
    r.mass /= std::pow(2 * pi, m.k);
    return r;
}

struct KineticIdentity {
    double kinetic = 0;        // <K/N>
    double husimiP2 = 0;       // (2 pi)^{-d} int |p|^2 m1
    double gradTerm = 0;       // hbar ||grad f||^2
    double statedResidual = 0; // |<K/N> - (husimiP2 + gradTerm)| / <K/N>
    double correctedResidual = 0; // |<K/N> - (husimiP2 - gradTerm)| / <K/N>
    double outOfBandMass = 0;
};

// <K/N> from the density matrix against the second momentum moment of the Husimi
// measure, in both the stated (+) and the sign-corrected (-) form.
inline KineticIdentity kinetic_identity_check(const ManyBodyState& s, const CoherentWindow& w, const PhaseGrid& pg) {
    KineticIdentity r;
    r.kinetic = kinetic_energy(s);
    auto m1 = husimi_k(reduced_density(s, 1), w, pg);
    r.husimiP2 = moments(m1).p2 / (2 * pi);
    r.gradTerm = w.hbar * w.grad_norm2();
    r.statedResidual = std::abs(r.kinetic - (r.husimiP2 + r.gradTerm)) / r.kinetic;
    r.correctedResidual = std::abs(r.kinetic - (r.husimiP2 - r.gradTerm)) / r.kinetic;
    r.outOfBandMass = m1.outOfBandMass;
    return r;
}

inline void write_husimi(const HusimiMeasure& m, const std::string& path) {
    std::vector<std::uint64_t> ext;
    for (int i = 0; i < m.k; ++i) {
        ext.push_back(m.grid.Q);
        ext.push_back(m.grid.P);
    }
    io::write_grid(path, ext, m.values);
}

}  // namespace hvlab
