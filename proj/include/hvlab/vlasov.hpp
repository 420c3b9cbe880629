#pragma once

#include "testfns.hpp"

namespace hvlab {

// Phase-space density m(q,p) with the Husimi normalization: rho = (2 pi)^-1 int m dp.
struct VlasovState {
    PhaseGrid grid;
    rvec m;  // [a*P + b]
    double t = 0;

    double mass() const {
        double s = 0;
        for (double v : m) s += v;
        return s * grid.cell();
    }
    double min_value() const { return *std::min_element(m.begin(), m.end()); }
    double sup() const {
        double s = 0;
        for (double v : m) s = std::max(s, std::abs(v));
        return s;
    }
};

inline VlasovState vlasov_state(const PhaseGrid& pg, const std::function<double(double, double)>& f) {
    VlasovState s;
    s.grid = pg;
    s.m.resize(static_cast<std::size_t>(pg.Q) * pg.P);
    for (int a = 0; a < pg.Q; ++a)
        for (int b = 0; b < pg.P; ++b) s.m[static_cast<std::size_t>(a) * pg.P + b] = f(pg.q(a), pg.p(b));
    return s;
}

inline VlasovState vlasov_state(const HusimiMeasure& m1) {
    require(m1.k == 1, "vlasov_state: needs a one-particle measure");
    VlasovState s;
    s.grid = m1.grid;
    s.m = m1.values;
    return s;
}

inline rvec spatial_density(const VlasovState& s) {
    const auto& pg = s.grid;
    rvec rho(pg.Q, 0.0);
    for (int a = 0; a < pg.Q; ++a) {
        double r = 0;
        for (int b = 0; b < pg.P; ++b) r += s.m[static_cast<std::size_t>(a) * pg.P + b];
        rho[a] = r * pg.dp() / (2 * pi);
    }
    return rho;
}

namespace detail {

// Fourier index n of a potential mode on the phase grid (kappa = 2 pi n / L).
inline int mode_index(const Potential& V, const Potential::Mode& md, const PhaseGrid& pg) {
    if (std::abs(V.grid.L - pg.L) > 1e-12 * pg.L) throw GridMismatch("potential period differs from the phase grid");
    double n = md.kappa * pg.L / (2 * pi);
    int ni = static_cast<int>(std::lround(n));
    if (std::abs(n - ni) > 1e-9 || 2 * std::abs(ni) >= pg.Q)
        throw GridMismatch("potential mode not resolved on the phase grid");
    return ni;
}

// (V*rho)(q_a) and d/dq (V*rho)(q_a) by FFT convolution.
inline std::pair<rvec, rvec> convolve(const rvec& rho, const Potential& V, const PhaseGrid& pg) {
    cvec c(rho.begin(), rho.end());
    fft::forward(c);
    cvec u(pg.Q, 0.0), du(pg.Q, 0.0);
    for (auto& md : V.modes) {
        if (md.amp == 0) continue;
        int n = mode_index(V, md, pg);
        int i = ((n % pg.Q) + pg.Q) % pg.Q;
        // int V(q-y) rho(y) dy picks amp * L * c_n e^{i kappa q}, c_n = Q^-1 sum rho_a e^{-i kappa q_a}
        cplx w = md.amp * pg.L * c[i] / double(pg.Q);
        u[i] += w;
        du[i] += I * md.kappa * w;
    }
    fft::backward(u);
    fft::backward(du);
    rvec U(pg.Q), dU(pg.Q);
    for (int a = 0; a < pg.Q; ++a) {
        U[a] = u[a].real();
        dU[a] = du[a].real();
    }
    return {U, dU};
}

// Periodic cubic B-spline interpolant of `f` (stride `stride`, n points) evaluated
// at x_j - s h, applied as a circulant multiplier. Row sums are 1, so the sum of
// the samples is preserved exactly.
inline void spline_shift(double* f, int n, std::size_t stride, double s, cvec& buf) {
    if (s == 0) return;
    auto B = [](double x) {
        x = std::abs(x);
        if (x < 1) return 2.0 / 3 - x * x + 0.5 * x * x * x;
        if (x < 2) return (2 - x) * (2 - x) * (2 - x) / 6;
        return 0.0;
    };
    buf.resize(n);
    for (int j = 0; j < n; ++j) buf[j] = f[j * stride];
    fft::forward(buf);
    const int fl = static_cast<int>(std::floor(s));
    for (int i = 0; i < n; ++i) {
        const double th = 2 * pi * i / n;
        cplx num = 0;
        for (int m = fl - 1; m <= fl + 2; ++m) num += B(m - s) * std::exp(-I * (th * m));
        buf[i] *= num / ((4 + 2 * std::cos(th)) / 6) / double(n);
    }
    fft::backward(buf);
    for (int j = 0; j < n; ++j) f[j * stride] = buf[j].real();
}

inline void transport_q(VlasovState& s, double tau) {
    const auto& pg = s.grid;
    cvec buf;
    for (int b = 0; b < pg.P; ++b)
        spline_shift(s.m.data() + b, pg.Q, pg.P, pg.p(b) * tau / pg.dq(), buf);
}

}  // namespace detail

// Force field F(q) = d/dq (V * rho)(q) on the q-grid.
inline rvec self_consistent_force(const VlasovState& s, const Potential& V) {
    return detail::convolve(spatial_density(s), V, s.grid).second;
}

struct VlasovEnergy {
    double kinetic = 0, potential = 0;
    double total() const { return kinetic + potential; }
};

// kinetic (2 pi)^-1 int p^2/2 m + 1/2 int rho (V*rho)
inline VlasovEnergy vlasov_energy(const VlasovState& s, const Potential& V) {
    const auto& pg = s.grid;
    VlasovEnergy e;
    for (int a = 0; a < pg.Q; ++a)
        for (int b = 0; b < pg.P; ++b)
            e.kinetic += 0.5 * pg.p(b) * pg.p(b) * s.m[static_cast<std::size_t>(a) * pg.P + b];
    e.kinetic *= pg.cell() / (2 * pi);
    rvec rho = spatial_density(s);
    rvec U = detail::convolve(rho, V, pg).first;
    for (int a = 0; a < pg.Q; ++a) e.potential += 0.5 * rho[a] * U[a] * pg.dq();
    return e;
}

struct StepLog {
    double minValue = 0;
    double clippedMass = 0;
    double boundaryMass = 0;  // mass in the outermost two p-rows (escape monitor)
};

// Strang split: half free transport in q, full kick m(q, p + F dt), half transport.
inline StepLog vlasov_step(VlasovState& s, const Potential& V, double dt, bool clip = false) {
    require(std::abs(dt) <= 0.1 + 1e-15, "vlasov_step: dt <= 0.1 for spline accuracy");
    const auto& pg = s.grid;
    detail::transport_q(s, 0.5 * dt);
    rvec F = self_consistent_force(s, V);
    cvec buf;
    for (int a = 0; a < pg.Q; ++a)
        detail::spline_shift(s.m.data() + static_cast<std::size_t>(a) * pg.P, pg.P, 1, -F[a] * dt / pg.dp(), buf);
    detail::transport_q(s, 0.5 * dt);
    s.t += dt;
    StepLog log;
    log.minValue = s.min_value();
    if (clip)
        for (double& v : s.m)
            if (v < 0) {
                log.clippedMass -= v * pg.cell();
                v = 0;
            }
    for (int a = 0; a < pg.Q; ++a)
        for (int b : {0, 1, pg.P - 2, pg.P - 1})
            log.boundaryMass += std::abs(s.m[static_cast<std::size_t>(a) * pg.P + b]) * pg.cell();
    return log;
}

struct VlasovConfig {
    double dt = 0.01;
    double T = 1;
    bool clip = false;
};

struct VlasovTrajectory {
    rvec times;
    std::vector<VlasovState> states;
    rvec mass, energy;
    double maxMassDrift = 0;    // relative
    double maxEnergyDrift = 0;  // relative to |E0| + kinetic scale
    double minValue = 0;
    double clippedMass = 0;
    double maxBoundaryMass = 0;
    double supGrowth = 0;  // max(sup m_t - sup m_0, 0) / sup m_0, grid-sampled sups
    int steps = 0;
};

// Integrate to every requested time (sorted, >= s0.t); each interval is split
// into equal steps no longer than cfg.dt. The initial state is always recorded.
inline VlasovTrajectory vlasov_evolve(const VlasovState& s0, const Potential& V, const VlasovConfig& cfg,
                                      rvec times = {}) {
    require(cfg.dt > 0 && cfg.dt <= 0.1, "vlasov_evolve: 0 < dt <= 0.1");
    if (times.empty()) times = {cfg.T};
    VlasovTrajectory tr;
    VlasovState s = s0;
    auto record = [&](const VlasovState& x) {
        tr.times.push_back(x.t);
        tr.states.push_back(x);
        tr.mass.push_back(x.mass());
        tr.energy.push_back(vlasov_energy(x, V).total());
    };
    record(s);
    const double m0 = tr.mass[0], e0 = tr.energy[0], sup0 = s0.sup();
    const double escale = std::abs(e0) + vlasov_energy(s0, V).kinetic;
    tr.minValue = s0.min_value();
    for (double target : times) {
        require(target >= s.t - 1e-14, "vlasov_evolve: times must be increasing");
        const double span = target - s.t;
        if (span <= 1e-15) continue;
        const int n = static_cast<int>(std::ceil(span / cfg.dt - 1e-9));
        const double h = span / n;
        for (int i = 0; i < n; ++i) {
            auto log = vlasov_step(s, V, h, cfg.clip);
            tr.minValue = std::min(tr.minValue, log.minValue);
            tr.clippedMass += log.clippedMass;
            tr.maxBoundaryMass = std::max(tr.maxBoundaryMass, log.boundaryMass);
            tr.supGrowth = std::max(tr.supGrowth, (s.sup() - sup0) / sup0);
            ++tr.steps;
        }
        s.t = target;
        record(s);
        tr.maxMassDrift = std::max(tr.maxMassDrift, std::abs(tr.mass.back() - m0) / std::abs(m0));
        tr.maxEnergyDrift = std::max(tr.maxEnergyDrift, std::abs(tr.energy.back() - e0) / escale);
    }
    return tr;
}

// Weak-form defect of the limiting hierarchy evaluated on the tensor products
// m_t^{(x)k}, k in {1,2}:
//   d/dt <Phi, M> - <sum_j p_j d_qj Phi, M> + sum_j <d_pj Phi, G_j>,
//   G_j = (2 pi)^-1 int V'(q_j - q') M^{(k+1)}(., z') dz'.
// M^{(k)} and the contraction of M^{(k+1)} are assembled on the tensor grid
// (no factorized shortcut); d/dt is the 4th-order five-point centered difference.
struct HierarchyResidual {
    int k = 1;
    double absolute = 0;
    double relative = 0;  // worst defect / largest term pairing over all Phi and times
    double timeDerivative = 0, transport = 0, interaction = 0;  // at the worst point
};

namespace detail {

// M^{(k)} values on the tensor grid from m.
inline rvec tensor_power(const rvec& m, int k) {
    if (k == 1) return m;
    rvec out(m.size() * m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m.size(); ++j) out[i * m.size() + j] = m[i] * m[j];
    return out;
}

// Contraction of M^{(k+1)} = m^{(x)(k+1)} against V'(q_j - q_{k+1}), done point by
// point over the extra slot.
inline rvec contracted_force_density(const rvec& Mk, const rvec& m, const Potential& V, const PhaseGrid& pg, int k,
                                     int j) {
    const std::size_t n1 = m.size();
    rvec kern(pg.Q);  // (2 pi)^-1 sum_{a',b'} V'(q_a - q_a') m(a',b') cell
    for (int a = 0; a < pg.Q; ++a) {
        double s = 0;
        for (int a2 = 0; a2 < pg.Q; ++a2) {
            double g = V.grad(pg.q(a) - pg.q(a2));
            for (int b2 = 0; b2 < pg.P; ++b2) s += g * m[static_cast<std::size_t>(a2) * pg.P + b2];
        }
        kern[a] = s * pg.cell() / (2 * pi);
    }
    rvec G(Mk.size());
    for (std::size_t i = 0; i < Mk.size(); ++i) {
        std::size_t zj = k == 1 ? i : (j == 0 ? i / n1 : i % n1);
        G[i] = Mk[i] * kern[zj / pg.P];
    }
    return G;
}

}  // namespace detail

inline HierarchyResidual factorized_hierarchy_residual(const VlasovTrajectory& tr, int k,
                                                       const std::vector<TestFunction>& phis, const Potential& V) {
    require(k == 1 || k == 2, "factorized_hierarchy_residual: k in {1,2}");
    const int nt = static_cast<int>(tr.states.size());
    if (nt < 5) throw InsufficientSnapshots("factorized_hierarchy_residual: needs >= 5 snapshots");
    const double dt = tr.times[1] - tr.times[0];
    for (int i = 1; i < nt; ++i)
        require(std::abs(tr.times[i] - tr.times[i - 1] - dt) < 1e-9 * std::max(1.0, dt),
                "factorized_hierarchy_residual: snapshots must be equally spaced");
    const auto& pg = tr.states[0].grid;
    const std::size_t n1 = static_cast<std::size_t>(pg.Q) * pg.P;
    const double vol = std::pow(pg.cell(), k);

    // test functions on the tensor grid: products phi_i (x) phi_{i+1} for k = 2
    struct TS {
        rvec v, dq[2], dp[2];
    };
    std::vector<TS> tests;
    for (std::size_t f = 0; f < phis.size(); ++f) {
        auto A = sample(phis[f], pg);
        TS t;
        if (k == 1) {
            t.v = A.v;
            t.dq[0] = A.dq;
            t.dp[0] = A.dp;
        } else {
            auto Bs = sample(phis[(f + 1) % phis.size()], pg);
            t.v.resize(n1 * n1);
            for (int s = 0; s < 2; ++s) {
                t.dq[s].resize(n1 * n1);
                t.dp[s].resize(n1 * n1);
            }
            for (std::size_t i = 0; i < n1; ++i)
                for (std::size_t j = 0; j < n1; ++j) {
                    std::size_t x = i * n1 + j;
                    t.v[x] = A.v[i] * Bs.v[j];
                    t.dq[0][x] = A.dq[i] * Bs.v[j];
                    t.dq[1][x] = A.v[i] * Bs.dq[j];
                    t.dp[0][x] = A.dp[i] * Bs.v[j];
                    t.dp[1][x] = A.v[i] * Bs.dp[j];
                }
        }
        tests.push_back(std::move(t));
    }
    auto p_of = [&](std::size_t i, int slot) {
        std::size_t z = k == 1 ? i : (slot == 0 ? i / n1 : i % n1);
        return pg.p(static_cast<int>(z % pg.P));
    };

    // <Phi, M_t> for every snapshot
    std::vector<rvec> pairing(tests.size(), rvec(nt));
    for (int s = 0; s < nt; ++s) {
        rvec Mk = detail::tensor_power(tr.states[s].m, k);
        for (std::size_t f = 0; f < tests.size(); ++f) {
            double acc = 0;
            for (std::size_t i = 0; i < Mk.size(); ++i) acc += tests[f].v[i] * Mk[i];
            pairing[f][s] = acc * vol;
        }
    }
    HierarchyResidual out;
    out.k = k;
    double scale = 1e-300, worst = -1;
    for (int s = 2; s + 2 < nt; ++s) {
        const auto& m = tr.states[s].m;
        rvec Mk = detail::tensor_power(m, k);
        std::vector<rvec> G;
        for (int j = 0; j < k; ++j) G.push_back(detail::contracted_force_density(Mk, m, V, pg, k, j));
        for (std::size_t f = 0; f < tests.size(); ++f) {
            const auto& P = pairing[f];
            double dtd = (P[s - 2] - 8 * P[s - 1] + 8 * P[s + 1] - P[s + 2]) / (12 * dt);
            double tra = 0, inter = 0;
            for (std::size_t i = 0; i < Mk.size(); ++i)
                for (int j = 0; j < k; ++j) {
                    tra += p_of(i, j) * tests[f].dq[j][i] * Mk[i];
                    inter += tests[f].dp[j][i] * G[j][i];
                }
            tra *= vol;
            inter *= vol;
            const double defect = std::abs(dtd - tra + inter);
            scale = std::max({scale, std::abs(dtd), std::abs(tra), std::abs(inter)});
            if (defect > worst) {
                worst = defect;
                out.timeDerivative = dtd;
                out.transport = tra;
                out.interaction = inter;
            }
        }
    }
    out.absolute = worst;
    out.relative = worst / scale;
    return out;
}

inline void write_vlasov(const VlasovState& s, const std::string& path) {
    io::write_grid(path, {static_cast<std::uint64_t>(s.grid.Q), static_cast<std::uint64_t>(s.grid.P)}, s.m);
}

}  // namespace hvlab
