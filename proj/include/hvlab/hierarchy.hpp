#pragma once

#include "propagator.hpp"
#include "testfns.hpp"

namespace hvlab {

// Every term of the Husimi hierarchy in mode space. With band-limited coherent
// states F_{q,p} (coefficients L^{-1/2} e^{i(p/hbar - k)q} ghat(k - p/hbar)) each
// term is a bilinear form <F', A F''> of a density matrix A between coherent
// states whose momenta are offset; for fixed momenta it is a trigonometric
// polynomial in q and is evaluated exactly on the q-grid by folding + FFT.
namespace detail {

struct SlotSpec {
    double alpha = 0, beta = 0;  // momentum offsets of the bra / ket coherent state
    double kappa = 0;            // extra phase e^{i kappa q} in this slot
    int uKind = 0, vKind = 0;    // 0: ghat, 1: d/dp ghat, 2 (ket): ghat (p - hbar k)
    bool dq = false;             // d/dq of this slot
};

struct Pruned {
    std::vector<int> idx;
    cvec val;
};

inline Pruned slot_weights(const CoherentWindow& w, double p, double off, int kind, double rel) {
    const auto& g = w.grid;
    cvec all(g.Mq);
    double mx = 0;
    for (int i = 0; i < g.Mq; ++i) {
        const double k = g.kmode(i), xi = k - (p + off) / w.hbar;
        if (kind == 0) all[i] = w.ghat(xi);
        else if (kind == 1) all[i] = -w.dghat(xi) / w.hbar;
        else all[i] = w.ghat(xi) * (p - w.hbar * k);
        mx = std::max(mx, std::abs(all[i]));
    }
    Pruned pr;
    for (int i = 0; i < g.Mq; ++i)
        if (std::abs(all[i]) > rel * mx && all[i] != 0.0) {
            pr.idx.push_back(i);
            pr.val.push_back(all[i]);
        }
    return pr;
}

inline int phase_modes(const SlotSpec& s, double hbar, double L) {
    const double n = ((s.beta - s.alpha) / hbar + s.kappa) * L / (2 * pi);
    const int ni = static_cast<int>(std::lround(n));
    require(std::abs(n - ni) < 1e-8, "bilinear: momentum offsets must differ by grid wavenumbers");
    return ni;
}

// B(q,p) = L^{-k} sum A_{ij} prod_s u_s(i_s) v_s(j_s) e^{i (k_{i_s} - k_{j_s} + n_s 2pi/L) q_s}
inline cvec bilinear(const ReducedDensityMatrix& A, const CoherentWindow& w, const PhaseGrid& pg,
                     const std::vector<SlotSpec>& slots) {
    require(A.modal, "bilinear: modal density matrix expected");
    require(static_cast<int>(slots.size()) == A.k && A.k <= 2, "bilinear: one slot per particle, k <= 2");
    const int M = A.M, Q = pg.Q, P = pg.P, k = A.k;
    const auto& grid = w.grid;
    const double rel = w.kind == WindowKind::gaussian ? 1e-13 : 1e-10;
    const double kq = 2 * pi / pg.L;
    std::vector<int> ns(k);
    std::vector<std::vector<Pruned>> U(k, std::vector<Pruned>(P)), Vv(k, std::vector<Pruned>(P));
    for (int s = 0; s < k; ++s) {
        ns[s] = phase_modes(slots[s], w.hbar, pg.L);
        for (int b = 0; b < P; ++b) {
            U[s][b] = slot_weights(w, pg.p(b), slots[s].alpha, slots[s].uKind, rel);
            Vv[s][b] = slot_weights(w, pg.p(b), slots[s].beta, slots[s].vKind, rel);
        }
    }
    auto dfac = [&](int s, int n) { return slots[s].dq ? cplx(0, kq * n) : cplx(1, 0); };
    if (k == 1) {
        cvec out(static_cast<std::size_t>(Q) * P), coef(Q);
        for (int b = 0; b < P; ++b) {
            std::fill(coef.begin(), coef.end(), 0.0);
            const auto &u = U[0][b], &v = Vv[0][b];
            for (std::size_t x = 0; x < u.idx.size(); ++x)
                for (std::size_t y = 0; y < v.idx.size(); ++y) {
                    const int i = u.idx[x], j = v.idx[y];
                    const int n = grid.mode_int(i) - grid.mode_int(j) + ns[0];
                    coef[fold(n, Q)] += A.mat(i, j) * u.val[x] * v.val[y] * dfac(0, n);
                }
            fft::backward(coef.data(), Q);
            for (int a = 0; a < Q; ++a) out[static_cast<std::size_t>(a) * P + b] = coef[a] / pg.L;
        }
        return out;
    }
    if (static_cast<double>(Q) * Q * P * P > 4e7)
        throw CapacityExceeded("bilinear: k=2 phase grid (Q*P)^2 over 4e7 points");
    cvec out(static_cast<std::size_t>(Q) * P * Q * P), coef(static_cast<std::size_t>(Q) * Q);
    for (int b1 = 0; b1 < P; ++b1)
        for (int b2 = 0; b2 < P; ++b2) {
            std::fill(coef.begin(), coef.end(), 0.0);
            const auto &u1 = U[0][b1], &v1 = Vv[0][b1], &u2 = U[1][b2], &v2 = Vv[1][b2];
            for (std::size_t x1 = 0; x1 < u1.idx.size(); ++x1)
                for (std::size_t y1 = 0; y1 < v1.idx.size(); ++y1) {
                    const int i1 = u1.idx[x1], j1 = v1.idx[y1];
                    const int n1 = grid.mode_int(i1) - grid.mode_int(j1) + ns[0];
                    const cplx w1 = u1.val[x1] * v1.val[y1] * dfac(0, n1);
                    const std::size_t r1 = static_cast<std::size_t>(fold(n1, Q)) * Q;
                    for (std::size_t x2 = 0; x2 < u2.idx.size(); ++x2) {
                        const int i2 = u2.idx[x2];
                        const cplx* row = &A.mat(i1 * M + i2, j1 * M);
                        const cplx w12 = w1 * u2.val[x2];
                        for (std::size_t y2 = 0; y2 < v2.idx.size(); ++y2) {
                            const int j2 = v2.idx[y2];
                            const int n2 = grid.mode_int(i2) - grid.mode_int(j2) + ns[1];
                            coef[r1 + fold(n2, Q)] += row[j2] * w12 * v2.val[y2] * dfac(1, n2);
                        }
                    }
                }
            fft::backward2(coef.data(), Q, Q);
            for (int a1 = 0; a1 < Q; ++a1)
                for (int a2 = 0; a2 < Q; ++a2)
                    out[((static_cast<std::size_t>(a1) * P + b1) * Q + a2) * P + b2] =
                        coef[static_cast<std::size_t>(a1) * Q + a2] / (pg.L * pg.L);
        }
    return out;
}

inline rvec real_part(const cvec& v, double s = 1.0) {
    rvec r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[i] = s * v[i].real();
    return r;
}

inline void axpy(rvec& y, double a, const rvec& x) {
    if (y.empty()) y.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// Re(c * B) accumulated into y
inline void add_re(rvec& y, cplx c, const cvec& B) {
    if (y.empty()) y.assign(B.size(), 0.0);
    for (std::size_t i = 0; i < B.size(); ++i) y[i] += (c * B[i]).real();
}

inline std::size_t slot_point(std::size_t i, int k, int slot, std::size_t n1) {
    return k == 1 ? i : (slot == 0 ? i / n1 : i % n1);
}

// Cross density <b| a*..a |a> for k = 1, 2 (dense contraction for k = 2).
inline ReducedDensityMatrix cross_density(const ManyBodyState& a, const ManyBodyState& b, int k) {
    if (k == 1) return cross_density1(a, b, true);
    ManyBodyState da = to_dense(a), db = to_dense(b);
    ReducedDensityMatrix r;
    r.k = 2;
    r.M = a.M();
    r.N = a.N;
    auto A = tensor_view(da, 2);
    auto B = tensor_view(db, 2);
    r.mat = static_cast<double>(a.N * (a.N - 1)) * (A * B.adjoint());
    to_modal(r);
    return r;
}

}  // namespace detail

// int f(x)^2 cos(kappa sqrt(hbar) x) dx = (2 pi)^{-1} int ghat(u) ghat(u + kappa) du: the
// p-integrated coherent-state projector weighted by e^{-i kappa q} is c_kappa e^{-i kappa x}.
inline double window_overlap(const CoherentWindow& w, double kappa) {
    if (w.kind == WindowKind::gaussian) return std::exp(-kappa * kappa * w.hbar / 4);
    auto nodes = tanh_sinh();
    double s = 0;
    for (std::size_t i = 0; i < nodes.x.size(); ++i) {
        double x = nodes.x[i], f = w.f(x);
        s += nodes.w[i] * f * f * std::cos(kappa * w.sqh() * x);
    }
    return s;
}

inline std::vector<Potential::Mode> interacting_modes(const Potential& V) {
    std::vector<Potential::Mode> out;
    for (auto& m : V.modes)
        if (m.kappa != 0 && m.amp != 0) out.push_back(m);
    return out;
}

// Fields on the k-fold phase grid (layout as HusimiMeasure). Sign conventions:
//   d_t m + sum_j p_j d_qj m = interaction + sum_j d_qj R_j + sum_j d_pj Rtilde_j + Rhat
// with interaction = sum_j d_pj (2 pi)^-1 int V'(q_j - q') m^{(k+1)}.
struct HierarchyTerms {
    int k = 1, N = 1;
    double t = 0, hbar = 1;
    PhaseGrid grid;
    rvec m;
    rvec timeDerivative;        // 4th-order centered difference of snapshots
    rvec commutatorDerivative;  // oracle: (i/hbar)<F,[H,gamma]F>
    rvec transportTerm;         // sum_j p_j d_qj m
    rvec interactionTerm;       // sum_j d_pj of the mean-field term
    rvec remainderQ;            // sum_j d_qj R_j
    rvec remainderP;            // sum_j d_pj Rtilde_j
    rvec remainderHat;          // Rhat (k = 2), zero for k = 1
    rvec exactCoupling;         // oracle: (1/(i hbar N)) <F, Tr[V, gamma^{(k+1)}] F>
    std::vector<rvec> R, Rtilde, meanField;  // per slot j

    std::size_t points() const { return m.size(); }
    rvec balance_defect() const {
        rvec d(m.size(), 0.0);
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = timeDerivative[i] + transportTerm[i] - interactionTerm[i] - remainderQ[i] - remainderP[i] -
                   remainderHat[i];
        return d;
    }
};

struct TermOptions {
    int sNodes = 8;          // Gauss-Legendre nodes of the s-average
    bool smeared = true;     // R-tilde and interaction (needs twisted traces)
    bool fieldsR = true;     // undifferentiated R_j, Rtilde_j, meanField_j
};

// All terms except the time derivative, at one state.
inline HierarchyTerms hierarchy_terms(const ManyBodyState& s, int k, const CoherentWindow& w, const Potential& V,
                                      const PhaseGrid& pg, const TermOptions& opt = {}) {
    require(k == 1 || k == 2, "hierarchy_terms: k in {1,2}");
    if (k > s.N || (opt.smeared && k + 1 > s.N)) throw OrderExceedsN("hierarchy_terms: needs N >= k+1");
    require(w.grid.d == 1 && s.grid.d == 1, "hierarchy_terms: d=1 only");
    auto gamma = reduced_density(s, k, true);
    detail::check_window(gamma, w, pg);
    using detail::SlotSpec;
    HierarchyTerms T;
    T.k = k;
    T.N = s.N;
    T.hbar = w.hbar;
    T.grid = pg;
    const double h = w.hbar, invN = 1.0 / s.N;
    const std::size_t n1 = static_cast<std::size_t>(pg.Q) * pg.P;
    auto plain = [&]() { return std::vector<SlotSpec>(k); };

    T.m = detail::real_part(detail::bilinear(gamma, w, pg, plain()));
    const std::size_t npts = T.m.size();
    T.transportTerm.assign(npts, 0.0);
    T.remainderQ.assign(npts, 0.0);
    T.remainderP.assign(npts, 0.0);
    T.interactionTerm.assign(npts, 0.0);
    T.remainderHat.assign(npts, 0.0);
    T.exactCoupling.assign(npts, 0.0);
    for (int j = 0; j < k; ++j) {
        auto sl = plain();
        sl[j].dq = true;
        rvec dm = detail::real_part(detail::bilinear(gamma, w, pg, sl));
        for (std::size_t i = 0; i < npts; ++i)
            T.transportTerm[i] += pg.p(static_cast<int>(detail::slot_point(i, k, j, n1) % pg.P)) * dm[i];
        // R_j = hbar Im <F, gamma d_qj F> = Re <F, gamma (p_j - hbar k_j) F>
        sl[j].vKind = 2;
        detail::axpy(T.remainderQ, 1.0, detail::real_part(detail::bilinear(gamma, w, pg, sl)));
        if (opt.fieldsR) {
            sl[j].dq = false;
            T.R.push_back(detail::real_part(detail::bilinear(gamma, w, pg, sl)));
        }
    }
    if (k == 2) {
        // Rhat = (2/(hbar N)) sum_{i<j} Im <V_ij F, gamma F>, V_12 = sum V_kappa e^{i kappa x1} e^{-i kappa x2}
        for (auto& md : interacting_modes(V)) {
            auto sl = plain();
            sl[0].alpha = h * md.kappa;
            sl[1].alpha = -h * md.kappa;
            detail::add_re(T.remainderHat, cplx(0, -2.0 / (h * s.N)) * md.amp, detail::bilinear(gamma, w, pg, sl));
        }
    }
    if (!opt.smeared) return T;
    const auto gl = gauss_legendre01(opt.sNodes);
    std::vector<rvec> S(k), dS(k), MF(k), dMF(k);
    for (auto& md : interacting_modes(V)) {
        const double kap = md.kappa;
        const cplx ikV = cplx(0, kap) * md.amp;
        auto Tk = twisted_density(s, k, kap, true);
        const double ck = window_overlap(w, kap);
        for (int j = 0; j < k; ++j) {
            // exact coupling: (2/(hbar N)) Im V_kappa <F_{p_j - hbar kappa}, T_kappa F>
            auto sl = plain();
            sl[j].alpha = -h * kap;
            detail::add_re(T.exactCoupling, cplx(0, -2.0 / (h * s.N)) * md.amp, detail::bilinear(Tk, w, pg, sl));
            // mean field, p-integral exact: hbar Re i kappa V c_kappa e^{i kappa q_j} <F, T_kappa F>
            sl = plain();
            sl[j].kappa = kap;
            if (opt.fieldsR) detail::add_re(MF[j], h * ck * ikV, detail::bilinear(Tk, w, pg, sl));
            sl[j].uKind = 1;
            detail::add_re(dMF[j], h * ck * ikV, detail::bilinear(Tk, w, pg, sl));
            sl[j].uKind = 0;
            sl[j].vKind = 1;
            detail::add_re(dMF[j], h * ck * ikV, detail::bilinear(Tk, w, pg, sl));
            // smeared force: (1/N) Re i kappa V int_0^1 ds <F_{p_j - hbar kappa s}, T_kappa F_{p_j + hbar kappa (1-s)}>
            for (int n = 0; n < opt.sNodes; ++n) {
                const double sn = gl.x[n];
                const cplx c = invN * gl.w[n] * ikV;
                sl = plain();
                sl[j].alpha = -h * kap * sn;
                sl[j].beta = h * kap * (1 - sn);
                if (opt.fieldsR) detail::add_re(S[j], c, detail::bilinear(Tk, w, pg, sl));
                sl[j].uKind = 1;
                detail::add_re(dS[j], c, detail::bilinear(Tk, w, pg, sl));
                sl[j].uKind = 0;
                sl[j].vKind = 1;
                detail::add_re(dS[j], c, detail::bilinear(Tk, w, pg, sl));
            }
        }
    }
    for (int j = 0; j < k; ++j) {
        for (auto* f : {&S[j], &dS[j], &MF[j], &dMF[j]})
            if (f->empty()) f->assign(npts, 0.0);
        detail::axpy(T.interactionTerm, 1.0, dMF[j]);
        for (std::size_t i = 0; i < npts; ++i) T.remainderP[i] += dS[j][i] - dMF[j][i];
        if (opt.fieldsR) {
            rvec rt(npts);
            for (std::size_t i = 0; i < npts; ++i) rt[i] = S[j][i] - MF[j][i];
            T.Rtilde.push_back(std::move(rt));
            T.meanField.push_back(MF[j]);
        }
    }
    return T;
}

// Mean-field term for k = 1 by direct quadrature of m^{(2)} over the phase grid
// (second route; truncated at |p2| <= Pmax). Returns {field, d/dp field}.
inline std::pair<rvec, rvec> mean_field_grid(const ManyBodyState& s, const CoherentWindow& w, const Potential& V,
                                             const PhaseGrid& pg) {
    auto g2 = reduced_density(s, 2, true);
    detail::check_window(g2, w, pg);
    std::vector<detail::SlotSpec> sl(2);
    rvec m2 = detail::real_part(detail::bilinear(g2, w, pg, sl));
    sl[0].uKind = 1;
    rvec d2 = detail::real_part(detail::bilinear(g2, w, pg, sl));
    sl[0].uKind = 0;
    sl[0].vKind = 1;
    detail::axpy(d2, 1.0, detail::real_part(detail::bilinear(g2, w, pg, sl)));
    const std::size_t n1 = static_cast<std::size_t>(pg.Q) * pg.P;
    rvec F(n1, 0.0), dF(n1, 0.0);
    for (int a = 0; a < pg.Q; ++a)
        for (int a2 = 0; a2 < pg.Q; ++a2) {
            const double vp = V.grad(pg.q(a) - pg.q(a2)) * pg.cell() / (2 * pi);
            for (int b = 0; b < pg.P; ++b) {
                const std::size_t z1 = static_cast<std::size_t>(a) * pg.P + b;
                for (int b2 = 0; b2 < pg.P; ++b2) {
                    const std::size_t z = z1 * n1 + static_cast<std::size_t>(a2) * pg.P + b2;
                    F[z1] += vp * m2[z];
                    dF[z1] += vp * d2[z];
                }
            }
        }
    return {F, dF};
}

// Pointwise oracles on sampled image-sum coherent states (site basis).
namespace detail {
struct ImageState {
    std::vector<std::vector<std::pair<double, cplx>>> terms;  // per site: (lifted y, value)
};
inline ImageState image_state(const CoherentWindow& w, double q, double p, bool derivative) {
    const auto& g = w.grid;
    const double sq = w.sqh(), pre = std::pow(w.hbar, -0.25) * std::sqrt(g.dq());
    const int images = static_cast<int>(std::ceil(w.supportRadius * sq / g.L)) + 2;
    ImageState st;
    st.terms.resize(g.Mq);
    for (int j = 0; j < g.Mq; ++j)
        for (int n = -images; n <= images; ++n) {
            double y = g.q(j) - n * g.L, x = (y - q) / sq;
            if (std::abs(x) > w.supportRadius + 4) continue;
            double amp = derivative ? -w.df(x) / sq : w.f(x);
            if (amp == 0) continue;
            st.terms[j].push_back({y, pre * amp * std::exp(I * (p * y / w.hbar))});
        }
    return st;
}
inline cvec collapse(const ImageState& st) {
    cvec v(st.terms.size(), 0.0);
    for (std::size_t j = 0; j < v.size(); ++j)
        for (auto& t : st.terms[j]) v[j] += t.second;
    return v;
}
}  // namespace detail

// R_1(q,p) = hbar Im <F, gamma d_q F> by site-space double sum.
inline double remainder_R1_pointwise(const ManyBodyState& s, const CoherentWindow& w, double q, double p) {
    auto g = reduced_density(s, 1, false);
    cvec F = detail::collapse(detail::image_state(w, q, p, false));
    cvec D = detail::collapse(detail::image_state(w, q, p, true));
    cplx z = 0;
    for (int x = 0; x < g.M; ++x)
        for (int y = 0; y < g.M; ++y) z += std::conj(F[x]) * g.mat(x, y) * D[y];
    return w.hbar * z.imag();
}

// Smeared-force term (1/N) Re int du dw dy int ds V'(s u + (1-s) w - y) F(w) conj F(u)
// gamma2(u,y; w,y), summed over periodic images of both windows with lifted u, w.
inline double smeared_force_pointwise(const ManyBodyState& s, const CoherentWindow& w, const Potential& V,
                                      double q, double p, int sNodes = 8) {
    auto g2 = reduced_density(s, 2, false);
    const int M = g2.M;
    auto st = detail::image_state(w, q, p, false);
    auto gl = gauss_legendre01(sNodes);
    cplx acc = 0;
    for (int u = 0; u < M; ++u)
        for (auto& [yu, fu] : st.terms[u])
            for (int x = 0; x < M; ++x)
                for (auto& [yw, fw] : st.terms[x]) {
                    const cplx c = fw * std::conj(fu);
                    for (int y = 0; y < M; ++y) {
                        double sm = 0;
                        for (int n = 0; n < sNodes; ++n)
                            sm += gl.w[n] * V.grad(gl.x[n] * yu + (1 - gl.x[n]) * yw - s.grid.q(y));
                        acc += c * sm * g2.mat(u * M + y, x * M + y);
                    }
                }
    return acc.real() / s.N;
}

// Five equally spaced snapshots centred on t (Lanczos, tight tolerance).
inline std::vector<ManyBodyState> hierarchy_snapshots(const ManyBodyState& psi0, const Potential& V, double t,
                                                      double spacing, EvolutionConfig cfg = {}) {
    require(t - 2 * spacing >= 0, "hierarchy_snapshots: t - 2*spacing must be >= 0");
    cfg.method = Method::krylovExp;
    cfg.T = t + 2 * spacing;
    rvec times;
    for (int i = -2; i <= 2; ++i) times.push_back(t + i * spacing);
    auto tr = evolve(psi0, V, cfg, times);
    std::vector<ManyBodyState> out;
    for (int i = -2; i <= 2; ++i) {
        double ti = t + i * spacing;
        for (std::size_t j = 0; j < tr.times.size(); ++j)
            if (std::abs(tr.times[j] - ti) < 1e-12) {
                out.push_back(tr.states[j]);
                break;
            }
    }
    require(out.size() == 5, "hierarchy_snapshots: missing snapshot");
    return out;
}

// Full assembly at the centre snapshot, including d/dt m by 4th-order centred
// differences and the commutator oracle.
inline HierarchyTerms hierarchy_balance_terms(const std::vector<ManyBodyState>& snaps, double spacing, int k,
                                              const CoherentWindow& w, const Potential& V, const PhaseGrid& pg,
                                              const TermOptions& opt = {}) {
    if (snaps.size() < 5) throw InsufficientSnapshots("hierarchy balance needs 5 equally spaced snapshots");
    require(spacing > 0, "hierarchy balance: spacing > 0");
    const auto& c = snaps[2];
    HierarchyTerms T = hierarchy_terms(c, k, w, V, pg, opt);
    std::vector<rvec> ms;
    for (int i = 0; i < 5; ++i)
        ms.push_back(i == 2 ? T.m
                            : detail::real_part(detail::bilinear(reduced_density(snaps[i], k, true), w, pg,
                                                                 std::vector<detail::SlotSpec>(k))));
    T.timeDerivative.resize(T.m.size());
    for (std::size_t i = 0; i < T.m.size(); ++i)
        T.timeDerivative[i] = (ms[0][i] - 8 * ms[1][i] + 8 * ms[3][i] - ms[4][i]) / (12 * spacing);
    // d/dt gamma = -(i/hbar) (C(H psi, psi) - C(psi, H psi))
    ManyBodyState hs = c;
    hs.amp = hamiltonian_apply(c, V);
    auto A = detail::cross_density(hs, c, k), B = detail::cross_density(c, hs, k);
    ReducedDensityMatrix dg = A;
    dg.mat = (A.mat - B.mat) * cplx(0, -1.0 / w.hbar);
    T.commutatorDerivative = detail::real_part(detail::bilinear(dg, w, pg, std::vector<detail::SlotSpec>(k)));
    return T;
}

// Pairings <Phi, field>; Phi = phi_f for k = 1, phi_f (x) phi_{f+1} for k = 2.
inline double pair_field(const rvec& field, const PhaseGrid& pg, int k, const TestFunction& a,
                         const TestFunction& b) {
    auto A = sample(a, pg).v;
    if (k == 1) return weak_pairing(field, pg, A);
    auto B = sample(b, pg).v;
    const std::size_t n1 = A.size();
    require(field.size() == n1 * n1, "pair_field: k=2 field size");
    double s = 0;
    for (std::size_t i = 0; i < n1; ++i) {
        if (A[i] == 0) continue;
        double r = 0;
        for (std::size_t j = 0; j < n1; ++j) r += field[i * n1 + j] * B[j];
        s += A[i] * r;
    }
    return s * pg.cell() * pg.cell();
}

struct BalanceReport {
    int k = 1;
    double relative = 0;     // max |<Phi, defect>| / max |<Phi, term>|
    double absolute = 0;
    double scale = 0;
    double commutatorRelative = 0;  // same, with the commutator oracle in place of the difference quotient
    double timeDifferenceError = 0;  // max |<Phi, FD - commutator>| / scale
    std::vector<std::pair<std::string, rvec>> pairings;  // term name -> per-Phi pairing
    nlohmann::json to_json() const {
        nlohmann::json j;
        j["k"] = k;
        j["relative"] = relative;
        j["absolute"] = absolute;
        j["scale"] = scale;
        j["commutator_relative"] = commutatorRelative;
        j["time_difference_error"] = timeDifferenceError;
        for (auto& [n, v] : pairings) j["pairings"][n] = v;
        return j;
    }
};

inline BalanceReport weak_residual(const HierarchyTerms& T, const std::vector<TestFunction>& phis) {
    BalanceReport r;
    r.k = T.k;
    rvec defect = T.balance_defect();
    rvec oracle(defect.size());
    for (std::size_t i = 0; i < defect.size(); ++i)
        oracle[i] = defect[i] - T.timeDerivative[i] + T.commutatorDerivative[i];
    const std::vector<std::pair<std::string, const rvec*>> terms = {
        {"time_derivative", &T.timeDerivative}, {"transport", &T.transportTerm},
        {"interaction", &T.interactionTerm},    {"remainder_q", &T.remainderQ},
        {"remainder_p", &T.remainderP},         {"remainder_hat", &T.remainderHat}};
    for (auto& [n, f] : terms) r.pairings.push_back({n, {}});
    r.pairings.push_back({"defect", {}});
    double worstC = 0, worstFD = 0;
    for (std::size_t f = 0; f < phis.size(); ++f) {
        const auto &a = phis[f], &b = phis[(f + 1) % phis.size()];
        for (std::size_t t = 0; t < terms.size(); ++t) {
            double v = pair_field(*terms[t].second, T.grid, T.k, a, b);
            r.pairings[t].second.push_back(v);
            r.scale = std::max(r.scale, std::abs(v));
        }
        double d = pair_field(defect, T.grid, T.k, a, b);
        r.pairings.back().second.push_back(d);
        r.absolute = std::max(r.absolute, std::abs(d));
        worstC = std::max(worstC, std::abs(pair_field(oracle, T.grid, T.k, a, b)));
        rvec diff(defect.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = T.timeDerivative[i] - T.commutatorDerivative[i];
        worstFD = std::max(worstFD, std::abs(pair_field(diff, T.grid, T.k, a, b)));
    }
    if (r.scale > 0) {
        r.relative = r.absolute / r.scale;
        r.commutatorRelative = worstC / r.scale;
        r.timeDifferenceError = worstFD / r.scale;
    }
    return r;
}

// hbar-scaling of remainder pairings.
struct ScalingSeries {
    std::string term;
    rvec N, hbar, value;
};

struct ScalingFit {
    double slope = 0, slopeSE = 0, intercept = 0, residual = 0;
    int used = 0;
    std::vector<int> excluded;  // indices whose value underflowed to 0
};

inline ScalingFit hbar_scaling_fit(const ScalingSeries& s) {
    require(s.hbar.size() == s.value.size(), "hbar_scaling_fit: sizes differ");
    if (s.hbar.size() < 3) throw DegenerateSeries("hbar_scaling_fit: needs >= 3 points");
    for (std::size_t i = 1; i < s.hbar.size(); ++i)
        if (!(s.hbar[i] < s.hbar[i - 1])) throw DegenerateSeries("hbar_scaling_fit: hbar must be strictly decreasing");
    ScalingFit f;
    rvec x, y;
    for (std::size_t i = 0; i < s.hbar.size(); ++i) {
        if (!(std::abs(s.value[i]) > 0) || !std::isfinite(s.value[i])) {
            f.excluded.push_back(static_cast<int>(i));
            continue;
        }
        x.push_back(std::log(s.hbar[i]));
        y.push_back(std::log(std::abs(s.value[i])));
    }
    if (x.size() < 3)
        throw DegenerateSeries("hbar_scaling_fit: fewer than 3 nonzero values (" + std::to_string(f.excluded.size()) +
                               " excluded)");
    auto lf = fit_line(x, y);
    f.slope = lf.slope;
    f.slopeSE = lf.slope_se;
    f.intercept = lf.intercept;
    f.residual = lf.residual;
    f.used = static_cast<int>(x.size());
    return f;
}

// Mean-value identity V(u-y) - V(w-y) = (u-w) int_0^1 V'(s u + (1-s) w - y) ds.
inline double mean_value_defect(const Potential& V, double u, double w, double y, int sNodes = 8) {
    auto gl = gauss_legendre01(sNodes);
    double s = 0;
    for (int n = 0; n < sNodes; ++n) s += gl.w[n] * V.grad(gl.x[n] * u + (1 - gl.x[n]) * w - y);
    return std::abs(V.value(u - y) - V.value(w - y) - (u - w) * s);
}

}  // namespace hvlab
