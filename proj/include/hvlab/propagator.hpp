#pragma once

#include <filesystem>

#include "fermion.hpp"

namespace hvlab {

enum class Method { strangSplit, krylovExp };

inline const char* to_string(Method m) { return m == Method::strangSplit ? "strangSplit" : "krylovExp"; }

struct EvolutionConfig {
    double dt = 0;  // 0 -> 0.0025*hbar
    double T = 0;
    Method method = Method::krylovExp;
    int krylovDim = 30;
    double toleranceEnergyDrift = 1e-6;
    double krylovTol = 1e-12;                 // local error per unit time of the Lanczos step
    std::vector<double> checkpointTimes;      // written when checkpointDir is set
    std::string checkpointDir;

    void validate() const {
        if (!(T >= 0)) throw ConfigInvalid("EvolutionConfig: T must be >= 0");
        if (dt < 0) throw ConfigInvalid("EvolutionConfig: dt must be > 0");
        if (T > 0 && dt > 0 && T < dt) throw ConfigInvalid("EvolutionConfig: T must be >= dt");
        if (krylovDim < 8) throw ConfigInvalid("EvolutionConfig: krylovDim must be >= 8");
    }
};

// H = -(hbar^2/2) sum_j Lap_j + (1/N) sum_{i<j} V(x_i - x_j), bound to one backend layout.
class Hamiltonian {
public:
    Hamiltonian(const ManyBodyState& like, const Potential& V) : N_(like.N), M_(like.M()), backend_(like.backend) {
        check_same_grid(like.grid, V.grid);
        grid_ = like.grid;
        basis_ = like.basis;
        const double h = like.hbar();
        k2half_.resize(M_);
        for (int i = 0; i < M_; ++i) k2half_[i] = 0.5 * h * h * std::pow(grid_.kmode(i), 2);
        vlat_.resize(M_);
        for (int d = 0; d < M_; ++d) vlat_[d] = V.V[d];
        if (backend_ == Backend::occupationBasis) {
            // lattice kinetic matrix in the site basis (real symmetric)
            tkin_.assign(static_cast<std::size_t>(M_) * M_, 0.0);
            for (int x = 0; x < M_; ++x)
                for (int y = 0; y < M_; ++y) {
                    double s = 0;
                    for (int i = 0; i < M_; ++i)
                        s += k2half_[i] * std::cos(2 * pi * grid_.mode_int(i) * (x - y) / double(M_));
                    tkin_[x * M_ + y] = s / M_;
                }
            wdiag_.resize(basis_->dim());
            std::vector<int> sites(N_);
            for (std::size_t r = 0; r < basis_->dim(); ++r) {
                std::uint64_t m = basis_->mask(r);
                for (int a = 0; a < N_; ++a) {
                    sites[a] = std::countr_zero(m);
                    m &= m - 1;
                }
                wdiag_[r] = pair_energy(sites);
            }
        } else {
            wdiag_.resize(ipow(M_, N_));
            std::vector<int> x(N_);
            for (std::size_t idx = 0; idx < wdiag_.size(); ++idx) {
                std::size_t t = idx;
                for (int a = N_ - 1; a >= 0; --a) {
                    x[a] = static_cast<int>(t % M_);
                    t /= M_;
                }
                wdiag_[idx] = pair_energy(x);
            }
        }
    }

    int N() const { return N_; }
    double hbar() const { return std::pow(double(N_), -1.0 / grid_.d); }
    std::size_t dim() const { return wdiag_.size(); }
    const rvec& interaction_diagonal() const { return wdiag_; }
    const rvec& kinetic_symbol() const { return k2half_; }

    void apply(const cvec& in, cvec& out) const {
        require(in.size() == dim(), "Hamiltonian::apply: dimension mismatch");
        out.assign(dim(), 0.0);
        if (backend_ == Backend::denseTensor) apply_dense_kinetic(in, out);
        else apply_occ_kinetic(in, out);
        for (std::size_t i = 0; i < dim(); ++i) out[i] += wdiag_[i] * in[i];
    }
    cvec apply(const cvec& in) const {
        cvec out;
        apply(in, out);
        return out;
    }
    double energy(const cvec& psi) const { return dot(psi, apply(psi)).real(); }

    // kinetic half of H only (used by the split-step integrator and diagnostics)
    void kinetic_phase(cvec& psi, double tau) const {
        require(backend_ == Backend::denseTensor, "kinetic_phase: dense backend only");
        for (int a = 0; a < N_; ++a) fft::transform_axis(psi, M_, N_, a, +1);
        for (std::size_t idx = 0; idx < psi.size(); ++idx) psi[idx] *= std::exp(-I * (tau * mode_energy(idx) / hbar()));
        for (int a = 0; a < N_; ++a) fft::transform_axis(psi, M_, N_, a, -1);
    }

private:
    double pair_energy(const std::vector<int>& x) const {
        double e = 0;
        for (int i = 0; i < N_; ++i)
            for (int j = i + 1; j < N_; ++j) e += vlat_[((x[i] - x[j]) % M_ + M_) % M_];
        return e / N_;
    }
    double mode_energy(std::size_t idx) const {
        double e = 0;
        for (int a = 0; a < N_; ++a) {
            e += k2half_[idx % M_];
            idx /= M_;
        }
        return e;
    }
    void apply_dense_kinetic(const cvec& in, cvec& out) const {
        cvec t = in;
        for (int a = 0; a < N_; ++a) fft::transform_axis(t, M_, N_, a, +1);
        for (std::size_t idx = 0; idx < t.size(); ++idx) t[idx] *= mode_energy(idx);
        for (int a = 0; a < N_; ++a) fft::transform_axis(t, M_, N_, a, -1);
        for (std::size_t i = 0; i < t.size(); ++i) out[i] += t[i];
    }
    // sum_{x in S} sum_y T_{yx} a*_y a_x |S>
    void apply_occ_kinetic(const cvec& in, cvec& out) const {
        const auto& B = *basis_;
        for (std::size_t r = 0; r < B.dim(); ++r) {
            const cplx c = in[r];
            if (c == 0.0) continue;
            B.for_each_hop(B.mask(r), [&](int x, int y, double sg, std::uint64_t r2) {
                out[r2] += sg * tkin_[static_cast<std::size_t>(y) * M_ + x] * c;
            });
        }
    }

    int N_, M_;
    Backend backend_;
    PhaseSpaceGrid grid_;
    std::shared_ptr<const SubsetBasis> basis_;
    rvec k2half_, vlat_, tkin_, wdiag_;
};

inline cvec hamiltonian_apply(const ManyBodyState& s, const Potential& V) { return Hamiltonian(s, V).apply(s.amp); }

// One Lanczos step psi <- exp(-i H tau / hbar) psi, shrinking tau until the
// a-posteriori error estimate beta_m |[exp(-i tau T_m/hbar) e_1]_m| is below tol.
// Returns the time actually advanced.
inline double lanczos_step(const Hamiltonian& H, cvec& psi, double tau, int m, double tol) {
    const std::size_t n = psi.size();
    if (static_cast<double>(m + 1) * n * 16 > 2.5e9)
        throw CapacityExceeded("Krylov basis of dimension " + std::to_string(m) + " over " + std::to_string(n) +
                               " amplitudes exceeds the memory budget");
    const double nrm = std::sqrt(norm2(psi));
    std::vector<cvec> Vb;
    Vb.reserve(m + 1);
    Vb.push_back(psi);
    for (auto& z : Vb[0]) z /= nrm;
    rvec alpha, beta;
    cvec w;
    bool breakdown = false;
    for (int j = 0; j < m; ++j) {
        H.apply(Vb[j], w);
        double a = dot(Vb[j], w).real();
        alpha.push_back(a);
        for (int pass = 0; pass < 2; ++pass)  // full reorthogonalization
            for (auto& v : Vb) {
                cplx c = dot(v, w);
                for (std::size_t i = 0; i < n; ++i) w[i] -= c * v[i];
            }
        double b = std::sqrt(norm2(w));
        if (b < 1e-13 * (std::abs(a) + 1)) {
            breakdown = true;
            break;
        }
        beta.push_back(b);
        if (j + 1 < m) {
            Vb.push_back(w);
            for (auto& z : Vb.back()) z /= b;
        }
    }
    const int k = static_cast<int>(alpha.size());
    Eigen::MatrixXd Tm = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < k; ++i) Tm(i, i) = alpha[i];
    for (int i = 0; i + 1 < k; ++i) Tm(i, i + 1) = Tm(i + 1, i) = beta[i];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Tm);
    const double hb = H.hbar();
    const double bm = breakdown ? 0.0 : beta.back();
    Eigen::VectorXcd y;
    for (int tries = 0;; ++tries) {
        Eigen::VectorXcd ph(k);
        for (int i = 0; i < k; ++i) ph[i] = std::exp(-I * (tau * es.eigenvalues()[i] / hb)) * es.eigenvectors()(0, i);
        y = es.eigenvectors().cast<cplx>() * ph;
        double err = bm * std::abs(y[k - 1]);
        if (err <= tol * std::abs(tau) || tries > 60) break;
        tau *= 0.5;
    }
    cvec out(n, 0.0);
    for (int i = 0; i < k; ++i)
        for (std::size_t t = 0; t < n; ++t) out[t] += y[i] * Vb[i][t];
    for (auto& z : out) z *= nrm;
    psi = std::move(out);
    return tau;
}

struct Trajectory {
    std::vector<double> times;
    std::vector<ManyBodyState> states;
    rvec energy, norm, kinetic;
    double maxEnergyDrift = 0;   // relative
    double maxNormDrift = 0;
    bool energyDriftExceeded = false;
    std::string method;
    double dt = 0;
    std::size_t matvecs = 0;
};

namespace detail {
inline void record(Trajectory& tr, const Hamiltonian& H, const ManyBodyState& s, double t) {
    tr.times.push_back(t);
    tr.states.push_back(s);
    tr.energy.push_back(H.energy(s.amp));
    tr.norm.push_back(s.norm());
    tr.kinetic.push_back(kinetic_energy(s));
    const double e0 = tr.energy.front();
    tr.maxEnergyDrift = std::max(tr.maxEnergyDrift, std::abs(tr.energy.back() - e0) / std::max(std::abs(e0), 1e-300));
    tr.maxNormDrift = std::max(tr.maxNormDrift, std::abs(tr.norm.back() - 1.0));
}
}  // namespace detail

// Evolve to each requested time (sorted; negative times evolve backwards).
// The snapshot list always starts with t=0.
inline Trajectory evolve(const ManyBodyState& psi0, const Potential& V, EvolutionConfig cfg,
                         std::vector<double> times = {}) {
    cfg.validate();
    if (std::abs(psi0.norm() - 1.0) > 1e-10) throw PreconditionViolated("evolve: initial state not normalized");
    if (psi0.backend == Backend::denseTensor && antisymmetry_defect(psi0) > 1e-12)
        throw PreconditionViolated("evolve: initial state not antisymmetric");
    if (cfg.method == Method::strangSplit && psi0.backend != Backend::denseTensor)
        throw ConfigInvalid("strangSplit requires the denseTensor backend");
    if (times.empty()) times = {cfg.T};
    const double dt = cfg.dt > 0 ? cfg.dt : 0.0025 * psi0.hbar();
    Hamiltonian H(psi0, V);
    Trajectory tr;
    tr.method = to_string(cfg.method);
    tr.dt = dt;
    detail::record(tr, H, psi0, 0.0);
    ManyBodyState cur = psi0;
    double t = 0;
    std::vector<double> ckpt = cfg.checkpointTimes;
    auto maybe_checkpoint = [&](double now) {
        if (cfg.checkpointDir.empty()) return;
        for (double c : ckpt)
            if (std::abs(c - now) < 1e-12) {
                std::filesystem::create_directories(cfg.checkpointDir);
                char name[64];
                std::snprintf(name, sizeof name, "psi_t%.6f.bin", now);
                save_state(cur, (std::filesystem::path(cfg.checkpointDir) / name).string());
            }
    };
    maybe_checkpoint(0.0);
    for (double target : times) {
        if (target == t) continue;
        const double dir = target > t ? 1.0 : -1.0;
        if (cfg.method == Method::strangSplit) {
            const long steps = std::max(1L, static_cast<long>(std::ceil(std::abs(target - t) / dt - 1e-9)));
            const double h = (target - t) / steps;
            const rvec& W = H.interaction_diagonal();
            cvec wph(W.size());
            for (std::size_t i = 0; i < W.size(); ++i) wph[i] = std::exp(-I * (h * W[i] / H.hbar()));
            for (long s = 0; s < steps; ++s) {
                H.kinetic_phase(cur.amp, 0.5 * h);
                for (std::size_t i = 0; i < W.size(); ++i) cur.amp[i] *= wph[i];
                H.kinetic_phase(cur.amp, 0.5 * h);
            }
        } else {
            while (std::abs(target - t) > 1e-14) {
                double tau = std::abs(target - t);  // lanczos_step shrinks to what the subspace resolves
                double done = lanczos_step(H, cur.amp, dir * tau, cfg.krylovDim, cfg.krylovTol);
                tr.matvecs += cfg.krylovDim;
                t += done;
                if (std::abs(target - t) < 1e-14) t = target;
            }
        }
        t = target;
        detail::record(tr, H, cur, t);
        maybe_checkpoint(t);
    }
    tr.energyDriftExceeded = tr.maxEnergyDrift > cfg.toleranceEnergyDrift;
    if (!cfg.checkpointDir.empty()) {
        nlohmann::json j;
        j["N"] = psi0.N;
        j["hbar"] = psi0.hbar();
        j["dt"] = dt;
        j["method"] = tr.method;
        j["times"] = tr.times;
        j["energy"] = tr.energy;
        j["norm"] = tr.norm;
        j["energyDriftExceeded"] = tr.energyDriftExceeded;
        std::ofstream(std::filesystem::path(cfg.checkpointDir) / "run.json") << j.dump(2) << "\n";
    }
    return tr;
}

struct KineticBoundReport {
    double C = 0;
    double minMargin = 0;  // min_t (2 K_0 + C t^2 - K_t)
    bool holds = true;
    rvec margins;
};

// <K/N>_t <= 2<K/N>_0 + C t^2 with C = 2 ||grad V||_inf^2.
inline KineticBoundReport kinetic_bound_check(const rvec& times, const rvec& kinetic, double gradVinf) {
    require(!times.empty() && times.size() == kinetic.size(), "kinetic_bound_check: empty or ragged series");
    KineticBoundReport r;
    r.C = 2 * gradVinf * gradVinf;
    r.minMargin = 1e300;
    for (std::size_t i = 0; i < times.size(); ++i) {
        double m = 2 * kinetic[0] + r.C * times[i] * times[i] - kinetic[i];
        r.margins.push_back(m);
        r.minMargin = std::min(r.minMargin, m);
    }
    r.holds = r.minMargin > 0;
    return r;
}

inline KineticBoundReport kinetic_bound_check(const Trajectory& tr, const Potential& V) {
    return kinetic_bound_check(tr.times, tr.kinetic, V.dVinf);
}

}  // namespace hvlab
