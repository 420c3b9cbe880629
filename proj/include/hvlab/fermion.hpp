#pragma once

#include <Eigen/Dense>
#include <bit>
#include <functional>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>

#include <json.hpp>

#include "gridio.hpp"
#include "phasespace.hpp"

namespace hvlab {

using RMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Backend { denseTensor, occupationBasis };

inline const char* to_string(Backend b) { return b == Backend::denseTensor ? "denseTensor" : "occupationBasis"; }
inline Backend backend_from(const std::string& s) {
    if (s == "denseTensor" || s == "dense") return Backend::denseTensor;
    if (s == "occupationBasis" || s == "occupation") return Backend::occupationBasis;
    throw ConfigInvalid("unknown backend '" + s + "'");
}

inline constexpr std::uint64_t kMaxOccupationDim = 1ull << 24;
inline constexpr std::uint64_t kMaxDenseSize = 1ull << 22;

// Sorted N-subsets of M lattice sites in colexicographic order (= increasing
// bitmask value). rank(S) = sum_i C(s_i, i+1) for s_0 < s_1 < ...
class SubsetBasis {
public:
    SubsetBasis(int M, int N) : M_(M), N_(N) {
        require(M <= 64, "SubsetBasis: at most 64 sites");
        require(N >= 1 && N <= M, "SubsetBasis: need 1 <= N <= M");
        binom_.assign(M + 1, std::vector<std::uint64_t>(N + 2, 0));
        for (int n = 0; n <= M; ++n) {
            binom_[n][0] = 1;
            for (int k = 1; k <= N + 1 && k <= n; ++k)
                binom_[n][k] = binom_[n - 1][k - 1] + (k <= n - 1 ? binom_[n - 1][k] : 0);
        }
        double dimd = binomial(M, N);
        if (dimd > static_cast<double>(kMaxOccupationDim))
            throw CapacityExceeded("occupation basis dimension C(" + std::to_string(M) + "," + std::to_string(N) +
                                   ")=" + std::to_string(static_cast<long double>(dimd)) + " exceeds budget " +
                                   std::to_string(kMaxOccupationDim));
        const std::uint64_t dim = binom_[M][N];
        masks_.resize(dim);
        std::uint64_t x = (N == 64) ? ~0ull : ((1ull << N) - 1);
        for (std::uint64_t i = 0; i < dim; ++i) {
            masks_[i] = x;
            if (i + 1 == dim) break;
            std::uint64_t c = x & (~x + 1), r = x + c;
            x = (((r ^ x) >> 2) / c) | r;
        }
    }

    int M() const { return M_; }
    int N() const { return N_; }
    std::size_t dim() const { return masks_.size(); }
    std::uint64_t mask(std::size_t i) const { return masks_[i]; }
    std::uint64_t binom(int n, int k) const { return (k < 0 || k > N_ + 1 || n < 0) ? 0 : binom_[n][k]; }

    std::uint64_t rank(std::uint64_t m) const {
        std::uint64_t r = 0;
        int i = 0;
        while (m) {
            int s = std::countr_zero(m);
            r += binom_[s][i + 1];
            ++i;
            m &= m - 1;
        }
        return r;
    }
    // number of occupied sites strictly below x
    static int below(std::uint64_t m, int x) { return std::popcount(m & ((1ull << x) - 1)); }

    // Visit every single-particle hop a*_y a_x |S> (x in S, y not in S\{x}, y == x
    // included): f(x, y, sign, rank of S\{x} u {y}). Ranks are updated in O(1) per y.
    template <class F>
    void for_each_hop(std::uint64_t S, F&& f) const {
        int s[64], t[64];
        std::uint64_t pre[65], suf[65];
        int n = 0;
        for (std::uint64_t m = S; m; m &= m - 1) s[n++] = std::countr_zero(m);
        for (int a = 0; a < n; ++a) {
            int nt = 0;
            for (int i = 0; i < n; ++i)
                if (i != a) t[nt++] = s[i];
            pre[0] = 0;
            for (int i = 0; i < nt; ++i) pre[i + 1] = pre[i] + binom_[t[i]][i + 1];
            suf[nt] = 0;
            for (int i = nt - 1; i >= 0; --i) suf[i] = suf[i + 1] + binom_[t[i]][i + 2];
            int p = 0;
            for (int y = 0; y < M_; ++y) {
                while (p < nt && t[p] < y) ++p;
                if (p < nt && t[p] == y) continue;
                f(s[a], y, ((a + p) & 1) ? -1.0 : 1.0, pre[p] + binom_[y][p + 1] + suf[p]);
            }
        }
    }

private:
    int M_, N_;
    std::vector<std::vector<std::uint64_t>> binom_;
    std::vector<std::uint64_t> masks_;
};

// Antisymmetric N-particle state on the lattice of Mq sites. Amplitudes are
// coefficients in the orthonormal site basis (field value times dq^{N/2}), so
// ||amp||_2 = 1. hbar is always N^{-1/d}.
struct ManyBodyState {
    int N = 1;
    Backend backend = Backend::occupationBasis;
    PhaseSpaceGrid grid;
    cvec amp;
    std::shared_ptr<const SubsetBasis> basis;  // occupationBasis only

    double hbar() const { return std::pow(static_cast<double>(N), -1.0 / grid.d); }
    int M() const { return grid.Mq; }
    double norm() const { return std::sqrt(norm2(amp)); }
};

inline std::size_t ipow(std::size_t b, int e) {
    std::size_t r = 1;
    while (e-- > 0) r *= b;
    return r;
}

inline ManyBodyState empty_state(int N, const PhaseSpaceGrid& g, Backend b) {
    require(g.d == 1, "many-body states are implemented for d=1");
    require(N >= 1, "N must be positive");
    ManyBodyState s;
    s.N = N;
    s.backend = b;
    s.grid = g;
    if (b == Backend::denseTensor) {
        if (N > 3) throw CapacityExceeded("denseTensor backend supports N<=3 (requested N=" + std::to_string(N) + ")");
        std::size_t n = ipow(g.Mq, N);
        if (n > kMaxDenseSize) throw CapacityExceeded("dense tensor size " + std::to_string(n) + " over budget");
        s.amp.assign(n, 0.0);
    } else {
        s.basis = std::make_shared<SubsetBasis>(g.Mq, N);
        s.amp.assign(s.basis->dim(), 0.0);
    }
    return s;
}

inline cplx small_det(std::vector<cplx> a, int n) {
    cplx det = 1.0;
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r)
            if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
        if (std::abs(a[piv * n + c]) == 0.0) return 0.0;
        if (piv != c) {
            for (int k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
            det = -det;
        }
        det *= a[c * n + c];
        for (int r = c + 1; r < n; ++r) {
            cplx f = a[r * n + c] / a[c * n + c];
            for (int k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
        }
    }
    return det;
}

// orbitals: field values on the grid, orthonormal in dq * sum conj(a) b.
inline ManyBodyState slater_determinant(const std::vector<cvec>& orbitals, const PhaseSpaceGrid& g,
                                        Backend b = Backend::occupationBasis) {
    const int N = static_cast<int>(orbitals.size());
    const int M = g.Mq;
    for (auto& o : orbitals) require(static_cast<int>(o.size()) == M, "slater_determinant: orbital size");
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
            cplx o = dot(orbitals[i], orbitals[j]) * g.dq();
            if (std::abs(o - (i == j ? 1.0 : 0.0)) > 1e-10)
                throw NonOrthonormalOrbitals("orbitals " + std::to_string(i) + "," + std::to_string(j) +
                                             " overlap " + std::to_string(std::abs(o)));
        }
    ManyBodyState s = empty_state(N, g, b);
    const double vol = std::pow(g.dq(), 0.5 * N);
    if (b == Backend::occupationBasis) {
        std::vector<cplx> m(N * N);
        std::vector<int> sites(N);
        for (std::size_t r = 0; r < s.basis->dim(); ++r) {
            std::uint64_t mk = s.basis->mask(r);
            for (int j = 0; j < N; ++j) {
                sites[j] = std::countr_zero(mk);
                mk &= mk - 1;
            }
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < N; ++j) m[i * N + j] = orbitals[i][sites[j]];
            s.amp[r] = small_det(m, N) * vol;
        }
    } else {
        const double inv = 1.0 / std::sqrt(std::tgamma(N + 1.0));
        std::vector<int> x(N);
        std::vector<cplx> m(N * N);
        for (std::size_t idx = 0; idx < s.amp.size(); ++idx) {
            std::size_t t = idx;
            for (int a = N - 1; a >= 0; --a) {
                x[a] = static_cast<int>(t % M);
                t /= M;
            }
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < N; ++j) m[i * N + j] = orbitals[i][x[j]];
            s.amp[idx] = small_det(m, N) * vol * inv;
        }
    }
    return s;
}

inline ManyBodyState to_dense(const ManyBodyState& s) {
    if (s.backend == Backend::denseTensor) return s;
    ManyBodyState d = empty_state(s.N, s.grid, Backend::denseTensor);
    const int N = s.N, M = s.M();
    const double inv = 1.0 / std::sqrt(std::tgamma(N + 1.0));
    std::vector<int> sites(N), perm(N);
    for (std::size_t r = 0; r < s.basis->dim(); ++r) {
        std::uint64_t mk = s.basis->mask(r);
        for (int j = 0; j < N; ++j) {
            sites[j] = std::countr_zero(mk);
            mk &= mk - 1;
        }
        std::iota(perm.begin(), perm.end(), 0);
        do {
            int inv_count = 0;
            for (int a = 0; a < N; ++a)
                for (int b = a + 1; b < N; ++b) inv_count += perm[a] > perm[b];
            std::size_t idx = 0;
            for (int a = 0; a < N; ++a) idx = idx * M + sites[perm[a]];
            d.amp[idx] = (inv_count % 2 ? -1.0 : 1.0) * inv * s.amp[r];
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    return d;
}

inline ManyBodyState to_occupation(const ManyBodyState& s) {
    if (s.backend == Backend::occupationBasis) return s;
    ManyBodyState o = empty_state(s.N, s.grid, Backend::occupationBasis);
    const int N = s.N, M = s.M();
    const double f = std::sqrt(std::tgamma(N + 1.0));
    for (std::size_t r = 0; r < o.basis->dim(); ++r) {
        std::uint64_t mk = o.basis->mask(r);
        std::size_t idx = 0;
        for (int j = 0; j < N; ++j) {
            idx = idx * M + std::countr_zero(mk);
            mk &= mk - 1;
        }
        o.amp[r] = f * s.amp[idx];
    }
    return o;
}

// max_{i<j} |Psi + P_ij Psi| for the dense backend (0 by construction otherwise)
inline double antisymmetry_defect(const ManyBodyState& s) {
    if (s.backend == Backend::occupationBasis) return 0.0;
    const int N = s.N, M = s.M();
    double worst = 0;
    std::vector<int> x(N);
    for (std::size_t idx = 0; idx < s.amp.size(); ++idx) {
        std::size_t t = idx;
        for (int a = N - 1; a >= 0; --a) {
            x[a] = static_cast<int>(t % M);
            t /= M;
        }
        for (int i = 0; i < N; ++i)
            for (int j = i + 1; j < N; ++j) {
                std::swap(x[i], x[j]);
                std::size_t k = 0;
                for (int a = 0; a < N; ++a) k = k * M + x[a];
                std::swap(x[i], x[j]);
                worst = std::max(worst, std::abs(s.amp[idx] + s.amp[k]));
            }
    }
    return worst;
}

// Order-k reduced density matrix in the orthonormal site basis (modal=false) or
// the orthonormal plane-wave basis e_k (modal=true, FFT mode order):
// gamma(x1..xk; y1..yk) = <a*_{y1}..a*_{yk} a_{xk}..a_{x1}>, trace N!/(N-k)!.
// Rows are the ket multi-index x, columns the bra multi-index y.
struct ReducedDensityMatrix {
    int k = 1;
    int M = 0;
    int N = 0;
    bool modal = false;
    RMat mat;

    double trace() const { return mat.trace().real(); }
    // continuum kernel value gamma(x;y) with the lattice volume removed
    cplx kernel(std::size_t row, std::size_t col, double dq) const { return mat(row, col) / std::pow(dq, k); }
    double hermiticity_defect() const { return (mat - mat.adjoint()).cwiseAbs().maxCoeff(); }
};

namespace detail {

inline Eigen::Map<const RMat> tensor_view(const ManyBodyState& s, int lead) {
    const std::size_t rows = ipow(s.M(), lead);
    return Eigen::Map<const RMat>(s.amp.data(), rows, s.amp.size() / rows);
}

// <b| a*_y a_x |a> over occupation bases, optionally weighting by a diagonal
// one-body phase sum_{z in S\{x}} w(z) (twisted trace).
inline RMat occ_one_body(const ManyBodyState& a, const ManyBodyState& b, const cvec* weight) {
    const int M = a.M();
    const auto& B = *a.basis;
    RMat g = RMat::Zero(M, M);
    for (std::size_t r = 0; r < B.dim(); ++r) {
        const cplx ca = a.amp[r];
        if (ca == 0.0) continue;
        const std::uint64_t S = B.mask(r);
        cplx wsum = 0.0;
        if (weight)
            for (std::uint64_t t = S; t; t &= t - 1) wsum += (*weight)[std::countr_zero(t)];
        B.for_each_hop(S, [&](int x, int y, double sg, std::uint64_t r2) {
            const cplx w = weight ? wsum - (*weight)[x] : cplx(1.0);
            g(x, y) += sg * w * ca * std::conj(b.amp[r2]);
        });
    }
    return g;
}

inline RMat occ_two_body(const ManyBodyState& s) {
    const int M = s.M(), N = s.N;
    const auto& B = *s.basis;
    // group amplitudes by the (N-2)-subset left after removing an ordered pair
    SubsetBasis T(M, N - 2 > 0 ? N - 2 : 1);
    const bool emptyT = (N == 2);
    const std::size_t nT = emptyT ? 1 : T.dim();
    std::vector<std::vector<std::pair<int, cplx>>> buckets(nT);
    for (std::size_t r = 0; r < B.dim(); ++r) {
        const cplx c = s.amp[r];
        if (c == 0.0) continue;
        const std::uint64_t S = B.mask(r);
        std::uint64_t o1 = S;
        while (o1) {
            const int x1 = std::countr_zero(o1);
            o1 &= o1 - 1;
            const std::uint64_t S1 = S & ~(1ull << x1);
            const int s1 = SubsetBasis::below(S, x1);
            std::uint64_t o2 = S1;
            while (o2) {
                const int x2 = std::countr_zero(o2);
                o2 &= o2 - 1;
                if (x2 < x1) continue;  // x1 < x2 stored; the rest follows by antisymmetry
                const std::uint64_t S2 = S1 & ~(1ull << x2);
                const int s2 = SubsetBasis::below(S1, x2);
                const double sg = ((s1 + s2) & 1) ? -1.0 : 1.0;
                buckets[emptyT ? 0 : T.rank(S2)].push_back({x1 * M + x2, sg * c});
            }
        }
    }
    RMat g = RMat::Zero(M * M, M * M);
    for (auto& bk : buckets)
        for (auto& [i, ci] : bk)
            for (auto& [j, cj] : bk) {
                const int x1 = i / M, x2 = i % M, y1 = j / M, y2 = j % M;
                const cplx v = ci * std::conj(cj);
                g(x1 * M + x2, y1 * M + y2) += v;
                g(x2 * M + x1, y1 * M + y2) -= v;
                g(x1 * M + x2, y2 * M + y1) -= v;
                g(x2 * M + x1, y2 * M + y1) += v;
            }
    return g;
}

inline void to_modal(ReducedDensityMatrix& r) {
    if (r.modal) return;
    const int M = r.M, k = r.k;
    cvec t(r.mat.data(), r.mat.data() + r.mat.size());
    for (int a = 0; a < k; ++a) fft::transform_axis(t, M, 2 * k, a, +1);
    for (int a = k; a < 2 * k; ++a) fft::transform_axis(t, M, 2 * k, a, -1);
    std::copy(t.begin(), t.end(), r.mat.data());
    r.modal = true;
}

}  // namespace detail

// Cross density <b| a*_y a_x |a> (k=1); equals gamma^{(1)} for a == b.
inline ReducedDensityMatrix cross_density1(const ManyBodyState& a, const ManyBodyState& b, bool modal = false) {
    require(a.backend == b.backend && a.N == b.N && a.grid.same_as(b.grid), "cross_density1: incompatible states");
    ReducedDensityMatrix r;
    r.k = 1;
    r.M = a.M();
    r.N = a.N;
    if (a.backend == Backend::denseTensor) {
        auto A = detail::tensor_view(a, 1);
        auto Bv = detail::tensor_view(b, 1);
        r.mat = static_cast<double>(a.N) * (A * Bv.adjoint());
    } else {
        r.mat = detail::occ_one_body(a, b, nullptr);
    }
    if (modal) detail::to_modal(r);
    return r;
}

inline ReducedDensityMatrix reduced_density(const ManyBodyState& s, int k, bool modal = false) {
    if (k < 1 || k > 2) throw PreconditionViolated("reduced_density: k must be 1 or 2");
    if (k > s.N) throw OrderExceedsN("reduced_density: k=" + std::to_string(k) + " > N=" + std::to_string(s.N));
    if (k == 1) return cross_density1(s, s, modal);
    const int M = s.M();
    if (M > 64) throw CapacityExceeded("gamma^(2) is stored dense only for Mq <= 64");
    ReducedDensityMatrix r;
    r.k = 2;
    r.M = M;
    r.N = s.N;
    if (s.backend == Backend::denseTensor) {
        auto A = detail::tensor_view(s, 2);
        r.mat = static_cast<double>(s.N * (s.N - 1)) * (A * A.adjoint());
    } else {
        if (binomial(M, s.N - 2) * std::pow(binomial(M - s.N + 2, 2), 2) > 4e10)
            throw CapacityExceeded("gamma^(2) contraction too expensive for N=" + std::to_string(s.N) +
                                   ", Mq=" + std::to_string(M));
        r.mat = detail::occ_two_body(s);
    }
    if (modal) detail::to_modal(r);
    return r;
}

// Twisted partial trace Tr_{k+1}[gamma^{(k+1)} (1 x .. x e^{-i kappa x_{k+1}})] for
// k = 1 (one-body result) or k = 2 (two-body result). kappa must be a grid wavenumber.
inline ReducedDensityMatrix twisted_density(const ManyBodyState& s, int k, double kappa, bool modal = true) {
    require(k == 1 || k == 2, "twisted_density: k in {1,2}");
    if (k + 1 > s.N) throw OrderExceedsN("twisted_density needs N >= k+1");
    const int M = s.M();
    cvec w(M);
    for (int y = 0; y < M; ++y) w[y] = std::exp(-I * (kappa * s.grid.q(y)));
    ReducedDensityMatrix r;
    r.k = k;
    r.M = M;
    r.N = s.N;
    if (s.backend == Backend::occupationBasis && k == 1) {
        r.mat = detail::occ_one_body(s, s, &w);
    } else {
        ManyBodyState d = to_dense(s);
        auto A = detail::tensor_view(d, k);
        RMat Bw = A;
        const std::size_t inner = ipow(M, s.N - k - 1);
        for (Eigen::Index c = 0; c < Bw.cols(); ++c) Bw.col(c) *= w[(c / inner) % M];
        r.mat = falling(s.N, k + 1) * (Bw * A.adjoint());
    }
    if (modal) detail::to_modal(r);
    return r;
}

// <(N_op/N)^k>; the state lives in the N-particle sector so this is 1 for any
// normalized state.
inline double number_moment(const ManyBodyState& s, int k) {
    const double n = s.norm();
    if (std::abs(n - 1.0) > 1e-10) throw PreconditionViolated("number_moment: state not normalized");
    double acc = 0;
    if (s.backend == Backend::occupationBasis) {
        for (std::size_t r = 0; r < s.amp.size(); ++r)
            acc += std::norm(s.amp[r]) * std::pow(std::popcount(s.basis->mask(r)) / double(s.N), k);
    } else {
        for (auto& z : s.amp) acc += std::norm(z) * std::pow(double(s.N) / s.N, k);
    }
    return acc;
}

// <K/N> with K = hbar^2 int grad a* grad a (spectral derivative).
inline double kinetic_energy(const ManyBodyState& s) {
    auto g = cross_density1(s, s, true);
    double acc = 0;
    for (int i = 0; i < g.M; ++i) acc += std::pow(s.grid.kmode(i), 2) * g.mat(i, i).real();
    const double h = s.hbar();
    return h * h * acc / s.N;
}

// Dense-backend route: sum over particles of ||d_j Psi||^2 by per-axis spectral
// differentiation (independent of the density-matrix route above).
inline double kinetic_energy_direct(const ManyBodyState& s) {
    ManyBodyState d = to_dense(s);
    const int M = d.M();
    double acc = 0;
    for (int a = 0; a < d.N; ++a) {
        cvec t = d.amp;
        fft::transform_axis(t, M, d.N, a, +1);
        std::size_t inner = ipow(M, d.N - a - 1);
        for (std::size_t i = 0; i < t.size(); ++i) acc += std::norm(t[i]) * std::pow(d.grid.kmode((i / inner) % M), 2);
    }
    const double h = d.hbar();
    return h * h * acc / d.N;
}

// Localized number operator: int (dq dx)^k prod chi_{|x_n - q_n| <= sqrt(hbar) R_n} <a*..a..>.
// The q-integrals are done exactly (length of the ball on the torus); R defaults to
// the unit-volume radius 1/2.
inline double localized_number(const ManyBodyState& s, const std::vector<double>& radii) {
    const int k = static_cast<int>(radii.size());
    require(k >= 1 && k <= 2, "localized_number: k = |phaseBoxes| must be 1 or 2");
    if (k > s.N) throw OrderExceedsN("localized_number: k > N");
    double box = 1;
    for (double R : radii) box *= std::min(2 * R * std::sqrt(s.hbar()), s.grid.L);
    auto g = reduced_density(s, k);
    return box * g.trace();
}

// Single-particle helpers -----------------------------------------------------

inline cvec plane_wave(const PhaseSpaceGrid& g, int n) {
    cvec v(g.Mq);
    for (int j = 0; j < g.Mq; ++j) v[j] = std::exp(I * (2 * pi * n * g.q(j) / g.L)) / std::sqrt(g.L);
    return v;
}

// Lowest `count` eigenfunctions of -hbar^2/2 Laplacian + U(x) (spectral kinetic term).
inline std::vector<cvec> trap_orbitals(const PhaseSpaceGrid& g, double hbar, const std::function<double(double)>& U,
                                       int count) {
    const int M = g.Mq;
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(M, M);
    // kinetic in the site basis: U_dft^dagger diag(k^2) U_dft
    for (int x = 0; x < M; ++x)
        for (int y = 0; y < M; ++y) {
            cplx s = 0;
            for (int i = 0; i < M; ++i)
                s += std::pow(g.kmode(i), 2) * std::exp(I * (2 * pi * g.mode_int(i) * (x - y) / double(M)));
            H(x, y) = 0.5 * hbar * hbar * s / double(M);
        }
    for (int x = 0; x < M; ++x) H(x, x) += U(g.q(x));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
    std::vector<cvec> out;
    for (int c = 0; c < count; ++c) {
        cvec v(M);
        for (int x = 0; x < M; ++x) v[x] = es.eigenvectors()(x, c) / std::sqrt(g.dq());
        out.push_back(std::move(v));
    }
    return out;
}

// Save/load: binary grid dump of the amplitudes + JSON sidecar.
inline void save_state(const ManyBodyState& s, const std::string& path) {
    std::vector<std::uint64_t> ext;
    if (s.backend == Backend::denseTensor) ext.assign(s.N, static_cast<std::uint64_t>(s.M()));
    else ext = {s.amp.size()};
    io::write_grid(path, ext, s.amp);
    nlohmann::json j;
    j["N"] = s.N;
    j["d"] = s.grid.d;
    j["backend"] = to_string(s.backend);
    j["hbar"] = s.hbar();
    j["grid"] = {{"L", s.grid.L}, {"Mq", s.grid.Mq}, {"Pmax", s.grid.Pmax}, {"Mp", s.grid.Mp}};
    std::ofstream(path + ".json") << j.dump(2) << "\n";
}

inline ManyBodyState load_state(const std::string& path) {
    nlohmann::json j;
    std::ifstream f(path + ".json");
    if (!f) throw FormatError("missing sidecar " + path + ".json");
    f >> j;
    PhaseSpaceGrid g;
    g.d = j.at("d");
    g.L = j.at("grid").at("L");
    g.Mq = j.at("grid").at("Mq");
    g.Pmax = j.at("grid").at("Pmax");
    g.Mp = j.at("grid").at("Mp");
    ManyBodyState s = empty_state(j.at("N"), g, backend_from(j.at("backend")));
    auto a = io::read_grid(path);
    cvec v = a.as_complex();
    if (v.size() != s.amp.size()) throw FormatError(path + ": amplitude count mismatch");
    s.amp = std::move(v);
    if (std::abs(j.at("hbar").get<double>() - s.hbar()) > 1e-14) throw FormatError(path + ": hbar/N mismatch");
    return s;
}

}  // namespace hvlab
