#pragma once

#include <array>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "testfns.hpp"

namespace hvlab {

// Weighted point cloud in (q,p). Ground metric: geodesic distance on the circle of
// length L in q (L = 0: the real line), Euclidean in p.
struct DiscreteMeasure {
    std::vector<std::array<double, 2>> x;
    rvec w;
    double L = 0;

    std::size_t size() const { return w.size(); }
    double mass() const {
        double s = 0;
        for (double v : w) s += v;
        return s;
    }
    void validate() const {
        require(x.size() == w.size() && !w.empty(), "DiscreteMeasure: empty or mismatched support");
        for (double v : w) require(v >= 0 && std::isfinite(v), "DiscreteMeasure: weights must be finite and >= 0");
        require(mass() > 0, "DiscreteMeasure: mass must be > 0");
    }
};

inline double ground_distance(const std::array<double, 2>& a, const std::array<double, 2>& b, double L) {
    double dq = std::abs(a[0] - b[0]);
    if (L > 0) {
        dq = std::fmod(dq, L);
        dq = std::min(dq, L - dq);
    }
    return std::hypot(dq, a[1] - b[1]);
}

// Block-sum a nonnegative grid function onto a Qc x Pc grid (cell masses at block
// centres). Negative samples (solver undershoot) are clipped and their mass reported.
struct Coarsened {
    DiscreteMeasure mu;
    double clippedMass = 0;
};

inline Coarsened coarsen(const rvec& m, const PhaseGrid& pg, int Qc, int Pc) {
    if (m.size() != static_cast<std::size_t>(pg.Q) * pg.P) throw GridMismatch("coarsen: size differs from the grid");
    require(Qc > 0 && Pc > 0 && pg.Q % Qc == 0 && pg.P % Pc == 0, "coarsen: block sizes must divide the grid");
    const int rq = pg.Q / Qc, rp = pg.P / Pc;
    Coarsened c;
    c.mu.L = pg.L;
    for (int A = 0; A < Qc; ++A)
        for (int B = 0; B < Pc; ++B) {
            double s = 0;
            for (int a = A * rq; a < (A + 1) * rq; ++a)
                for (int b = B * rp; b < (B + 1) * rp; ++b) {
                    double v = m[static_cast<std::size_t>(a) * pg.P + b] * pg.cell();
                    if (v < 0) {
                        c.clippedMass -= v;
                        v = 0;
                    }
                    s += v;
                }
            c.mu.x.push_back({(A * rq + 0.5 * (rq - 1)) * pg.dq(), pg.p(B * rp) + 0.5 * (rp - 1) * pg.dp()});
            c.mu.w.push_back(s);
        }
    return c;
}

inline DiscreteMeasure normalized(DiscreteMeasure mu) {
    const double s = mu.mass();
    for (auto& v : mu.w) v /= s;
    return mu;
}

// L1 distance of two grid functions after normalizing each to unit mass.
inline double l1_distance(const rvec& a, const rvec& b, const PhaseGrid& pg) {
    if (a.size() != b.size() || a.size() != static_cast<std::size_t>(pg.Q) * pg.P)
        throw GridMismatch("l1_distance: sizes differ");
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sa += a[i];
        sb += b[i];
    }
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] / sa - b[i] / sb);
    return d;
}

struct TransportResult {
    double cost = 0;
    double dualObjective = 0;
    double minReducedCost = 0;       // dual feasibility: >= -tol
    double slacknessResidual = 0;    // sum flow * reduced cost, relative
    double massMismatch = 0;         // |1 - mass(nu)/mass(mu)| before renormalizing
    long pivots = 0;
    bool certified = false;
    std::vector<std::tuple<int, int, double>> plan;  // (i, j, flow) with flow > 0
};

namespace detail {

// Primal network simplex for the uncapacitated transportation problem
// (sources i, sinks j, complete bipartite arcs) with an artificial root, a
// strongly feasible spanning tree and block-search pricing.
class TransportSimplex {
public:
    TransportSimplex(const rvec& a, const rvec& b, std::vector<double> cost)
        : n_(static_cast<int>(a.size())), m_(static_cast<int>(b.size())), c_(std::move(cost)) {
        const int V = n_ + m_ + 1;
        root_ = n_ + m_;
        E_ = static_cast<std::size_t>(n_) * m_;
        double cmax = 0;
        for (double v : c_) cmax = std::max(cmax, std::abs(v));
        art_ = (cmax + 1) * (n_ + m_);
        flow_.assign(E_ + n_ + m_, 0.0);
        parent_.assign(V, -1);
        parc_.assign(V, 0);
        depth_.assign(V, 0);
        pot_.assign(V, 0.0);
        children_.assign(V, {});
        supply_.assign(V, 0.0);
        // artificial arcs: source i -> root, root -> sink j
        for (int i = 0; i < n_; ++i) {
            supply_[i] = a[i];
            hang(i, root_, E_ + i);
            flow_[E_ + i] = a[i];
            pot_[i] = -art_;  // c + pot_u - pot_v = 0 with u=i, v=root
            depth_[i] = 1;
        }
        for (int j = 0; j < m_; ++j) {
            const int v = n_ + j;
            supply_[v] = -b[j];
            hang(v, root_, E_ + n_ + j);
            flow_[E_ + n_ + j] = b[j];
            pot_[v] = art_;  // arc root -> v
            depth_[v] = 1;
        }
    }

    long solve(long maxPivots) {
        const std::size_t total = E_ + n_ + m_;
        const std::size_t block = std::max<std::size_t>(64, static_cast<std::size_t>(std::sqrt(double(total))));
        std::size_t next = 0;
        long pivots = 0;
        const double tol = 1e-12 * (art_ + 1);
        while (true) {
            // block search: most negative reduced cost within the first block containing one
            std::size_t best = total, scanned = 0;
            double bestRc = -tol;
            for (std::size_t cnt = 0; cnt < total; ++cnt) {
                const std::size_t e = next;
                next = next + 1 == total ? 0 : next + 1;
                const double r = reduced(e);
                if (r < bestRc && !in_tree(e)) {
                    bestRc = r;
                    best = e;
                }
                if (++scanned >= block && best != total) break;
            }
            if (best == total) break;
            if (++pivots > maxPivots) throw NonConvergence("network simplex: pivot limit reached");
            pivot(best);
        }
        return pivots;
    }

    double reduced(std::size_t e) const {
        auto [u, v] = ends(e);
        return cost(e) + pot_[u] - pot_[v];
    }
    std::pair<int, int> ends(std::size_t e) const {
        if (e < E_) return {static_cast<int>(e / m_), n_ + static_cast<int>(e % m_)};
        const std::size_t k = e - E_;
        if (k < static_cast<std::size_t>(n_)) return {static_cast<int>(k), root_};
        return {root_, static_cast<int>(k)};  // k - n_ + n_
    }
    double cost(std::size_t e) const { return e < E_ ? c_[e] : art_; }
    double flow(std::size_t e) const { return flow_[e]; }
    double potential(int v) const { return pot_[v]; }
    std::size_t real_arcs() const { return E_; }
    std::size_t all_arcs() const { return E_ + n_ + m_; }
    double artificial_flow() const {
        double s = 0;
        for (std::size_t e = E_; e < flow_.size(); ++e) s += flow_[e];
        return s;
    }

private:
    int n_, m_, root_;
    std::size_t E_;
    rvec c_;
    double art_;
    rvec flow_, pot_, supply_;
    std::vector<int> parent_, depth_;
    std::vector<std::size_t> parc_;
    std::vector<std::vector<int>> children_;

    bool in_tree(std::size_t e) const {
        auto [u, v] = ends(e);
        return (parent_[u] == v && parc_[u] == e) || (parent_[v] == u && parc_[v] == e);
    }
    void hang(int child, int par, std::size_t arc) {
        parent_[child] = par;
        parc_[child] = arc;
        children_[par].push_back(child);
    }
    void unhang(int child) {
        auto& ch = children_[parent_[child]];
        ch.erase(std::find(ch.begin(), ch.end(), child));
        parent_[child] = -1;
    }
    // +1 if the tree arc of x points x -> parent(x)
    bool up(int x) const { return ends(parc_[x]).first == x; }

    void pivot(std::size_t e) {
        auto [k, l] = ends(e);
        // apex of the cycle k -> l -> ... -> apex -> ... -> k
        int x = k, y = l;
        while (x != y) {
            if (depth_[x] >= depth_[y]) x = parent_[x];
            else y = parent_[y];
        }
        const int apex = x;
        // cycle orientation k -> l. On the path l -> apex an arc is traversed forward iff it
        // points upward; on the path apex -> k (walked as k -> apex) forward iff it points downward.
        // Strongly feasible rule: last blocking arc when traversing from the apex.
        double theta = std::numeric_limits<double>::infinity();
        int leaveNode = -1;
        bool leaveOnK = false;
        // segment apex -> k: traversed in order apex..k, i.e. reverse of walking up from k
        std::vector<int> kPath;
        for (int z = k; z != apex; z = parent_[z]) kPath.push_back(z);
        for (auto it = kPath.rbegin(); it != kPath.rend(); ++it) {
            const int z = *it;
            if (up(z)) {  // arc z -> parent traversed parent -> z: backward, decreases
                if (flow_[parc_[z]] <= theta) {
                    theta = flow_[parc_[z]];
                    leaveNode = z;
                    leaveOnK = true;
                }
            }
        }
        // entering arc itself is uncapacitated; then segment l -> apex
        std::vector<int> lPath;
        for (int z = l; z != apex; z = parent_[z]) lPath.push_back(z);
        for (int z : lPath) {
            if (!up(z)) {  // arc parent -> z traversed z -> parent: backward
                if (flow_[parc_[z]] <= theta) {
                    theta = flow_[parc_[z]];
                    leaveNode = z;
                    leaveOnK = false;
                }
            }
        }
        require(leaveNode >= 0, "network simplex: unbounded cycle");
        // augment
        flow_[e] += theta;
        for (int z : kPath) flow_[parc_[z]] += up(z) ? -theta : theta;
        for (int z : lPath) flow_[parc_[z]] += up(z) ? theta : -theta;
        flow_[parc_[leaveNode]] = 0.0;
        // re-hang the subtree below the leaving arc through the entering arc
        const int inNode = leaveOnK ? k : l, outNode = leaveOnK ? l : k;
        std::vector<int> path;
        for (int z = inNode;; z = parent_[z]) {
            path.push_back(z);
            if (z == leaveNode) break;
        }
        std::vector<std::size_t> arcs;
        for (int z : path) arcs.push_back(parc_[z]);
        for (int z : path) unhang(z);
        hang(path[0], outNode, e);
        for (std::size_t i = 1; i < path.size(); ++i) hang(path[i], path[i - 1], arcs[i - 1]);
        // potentials and depths of the moved subtree
        std::vector<int> stack{path[0]};
        while (!stack.empty()) {
            const int z = stack.back();
            stack.pop_back();
            const int p = parent_[z];
            depth_[z] = depth_[p] + 1;
            auto [u, v] = ends(parc_[z]);
            const double c = cost(parc_[z]);
            if (u == z) pot_[z] = pot_[p] - c;  // c + pot_z - pot_p = 0
            else pot_[z] = pot_[p] + c;         // c + pot_p - pot_z = 0
            for (int ch : children_[z]) stack.push_back(ch);
        }
    }
};

}  // namespace detail

inline std::vector<double> cost_matrix(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    std::vector<double> c(mu.size() * nu.size());
    for (std::size_t i = 0; i < mu.size(); ++i)
        for (std::size_t j = 0; j < nu.size(); ++j) c[i * nu.size() + j] = ground_distance(mu.x[i], nu.x[j], mu.L);
    return c;
}

// Exact W1 (minimum-cost coupling) with a dual optimality certificate. Both
// measures are renormalized to unit mass; the mismatch is reported.
inline TransportResult wasserstein1_exact(const DiscreteMeasure& mu0, const DiscreteMeasure& nu0,
                                          bool keepPlan = false) {
    mu0.validate();
    nu0.validate();
    require(mu0.L == nu0.L, "wasserstein1: measures live on different tori");
    if (static_cast<double>(mu0.size()) * nu0.size() > double(1 << 22))
        throw ProblemTooLarge("wasserstein1_exact: |supp mu| * |supp nu| = " +
                              std::to_string(mu0.size() * nu0.size()) + " exceeds 2^22");
    TransportResult r;
    r.massMismatch = std::abs(1 - nu0.mass() / mu0.mass());
    auto mu = normalized(mu0), nu = normalized(nu0);
    auto C = cost_matrix(mu, nu);
    detail::TransportSimplex ns(mu.w, nu.w, C);
    r.pivots = ns.solve(200L * static_cast<long>(mu.size() + nu.size()) + 100000);
    const std::size_t m = nu.size();
    double primal = 0, slack = 0, minrc = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < ns.real_arcs(); ++e) {
        const double f = ns.flow(e), rc = ns.reduced(e);
        primal += f * C[e];
        slack += f * std::abs(rc);
        minrc = std::min(minrc, rc);
        if (keepPlan && f > 0) r.plan.emplace_back(static_cast<int>(e / m), static_cast<int>(e % m), f);
    }
    double dual = 0;
    for (std::size_t i = 0; i < mu.size(); ++i) dual -= ns.potential(static_cast<int>(i)) * mu.w[i];
    for (std::size_t j = 0; j < m; ++j) dual += ns.potential(static_cast<int>(mu.size() + j)) * nu.w[j];
    r.cost = primal;
    r.dualObjective = dual;
    r.minReducedCost = minrc;
    r.slacknessResidual = slack / std::max(primal, 1e-300);
    const double art = ns.artificial_flow();
    r.certified = art <= 1e-12 && minrc >= -1e-9 && std::abs(primal - dual) <= 1e-9 * std::max(1.0, primal);
    return r;
}

// Oracle 1: minimum over all basic solutions (spanning trees of K_{n,m} with n+m-1
// arcs whose leaf-peeled flows are nonnegative). Exponential; tiny instances only.
inline double transport_tree_enumeration(const rvec& a, const rvec& b, const std::vector<double>& C) {
    const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size()), E = n * m, k = n + m - 1;
    require(E <= 24, "tree enumeration: at most 24 arcs");
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(k);
    std::function<void(int, int)> rec = [&](int start, int depth) {
        if (depth == k) {
            // leaf peeling on the chosen arc set
            std::vector<double> s(n + m);
            for (int i = 0; i < n; ++i) s[i] = a[i];
            for (int j = 0; j < m; ++j) s[n + j] = -b[j];
            std::vector<int> deg(n + m, 0);
            std::vector<char> used(k, 0);
            for (int e : pick) {
                ++deg[e / m];
                ++deg[n + e % m];
            }
            double cost = 0;
            for (int it = 0; it < k; ++it) {
                int found = -1, leaf = -1;
                for (int t = 0; t < k && found < 0; ++t) {
                    if (used[t]) continue;
                    const int u = pick[t] / m, v = n + pick[t] % m;
                    if (deg[u] == 1) found = t, leaf = u;
                    else if (deg[v] == 1) found = t, leaf = v;
                }
                if (found < 0) return;  // contains a cycle
                used[found] = 1;
                const int u = pick[found] / m, v = n + pick[found] % m;
                const double f = leaf == u ? s[u] : -s[v];
                if (f < -1e-12) return;
                cost += f * C[pick[found]];
                s[u] -= f;
                s[v] += f;
                --deg[u];
                --deg[v];
            }
            best = std::min(best, cost);
            return;
        }
        for (int e = start; e <= E - (k - depth); ++e) {
            pick[depth] = e;
            rec(e + 1, depth + 1);
        }
    };
    rec(0, 0);
    return best;
}

// Oracle 2: dense two-phase tableau simplex with Bland's rule on the LP
// min <C,P> s.t. row sums a, column sums b, P >= 0.
inline double transport_bland_lp(const rvec& a, const rvec& b, const std::vector<double>& C) {
    const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
    const int rows = n + m, vars = n * m, cols = vars + rows;  // with artificials
    std::vector<rvec> T(rows + 1, rvec(cols + 1, 0.0));
    std::vector<int> basis(rows);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) T[i][i * m + j] = 1;
        T[i][cols] = a[i];
    }
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) T[n + j][i * m + j] = 1;
        T[n + j][cols] = b[j];
    }
    for (int r = 0; r < rows; ++r) {
        T[r][vars + r] = 1;
        basis[r] = vars + r;
    }
    auto run = [&](const rvec& cost, int allowed) {
        // objective row: reduced costs
        rvec& z = T[rows];
        std::fill(z.begin(), z.end(), 0.0);
        for (int c = 0; c < cols; ++c) z[c] = cost[c];
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c <= cols; ++c) z[c] -= cost[basis[r]] * T[r][c];
        for (int it = 0; it < 100000; ++it) {
            int enter = -1;
            for (int c = 0; c < allowed; ++c)
                if (z[c] < -1e-12) {
                    enter = c;
                    break;
                }
            if (enter < 0) return;
            int leave = -1;
            double ratio = std::numeric_limits<double>::infinity();
            for (int r = 0; r < rows; ++r)
                if (T[r][enter] > 1e-12) {
                    double q = T[r][cols] / T[r][enter];
                    if (q < ratio - 1e-14 || (std::abs(q - ratio) <= 1e-14 && basis[r] < basis[leave])) {
                        ratio = q;
                        leave = r;
                    }
                }
            require(leave >= 0, "bland lp: unbounded");
            const double pv = T[leave][enter];
            for (auto& v : T[leave]) v /= pv;
            for (int r = 0; r <= rows; ++r)
                if (r != leave && T[r][enter] != 0.0) {
                    const double f = T[r][enter];
                    for (int c = 0; c <= cols; ++c) T[r][c] -= f * T[leave][c];
                }
            basis[leave] = enter;
        }
        throw NonConvergence("bland lp: iteration limit");
    };
    rvec phase1(cols, 0.0);
    for (int r = 0; r < rows; ++r) phase1[vars + r] = 1;
    run(phase1, cols);
    // drive zero-level artificials out of the basis where possible
    for (int r = 0; r < rows; ++r)
        if (basis[r] >= vars)
            for (int c = 0; c < vars; ++c)
                if (std::abs(T[r][c]) > 1e-9) {
                    const double pv = T[r][c];
                    for (auto& v : T[r]) v /= pv;
                    for (int r2 = 0; r2 <= rows; ++r2)
                        if (r2 != r && T[r2][c] != 0.0) {
                            const double f = T[r2][c];
                            for (int c2 = 0; c2 <= cols; ++c2) T[r2][c2] -= f * T[r][c2];
                        }
                    basis[r] = c;
                    break;
                }
    rvec phase2(cols, 0.0);
    for (int e = 0; e < vars; ++e) phase2[e] = C[e];
    run(phase2, vars);
    double cost = 0;
    for (int r = 0; r < rows; ++r)
        if (basis[r] < vars) cost += C[basis[r]] * T[r][cols];
    return cost;
}

// Entropic surrogate: log-domain Sinkhorn with epsilon-scaling. The returned cost
// is <P, C> of the plan after rounding it onto the exact marginals, so it is the
// cost of a genuine coupling (>= W1 up to rounding).
struct EntropicResult {
    double cost = 0;
    double epsilon = 0;
    double marginalViolation = 0;  // before rounding, L1
    int iterations = 0;
    bool converged = false;
};

inline EntropicResult wasserstein1_entropic(const DiscreteMeasure& mu0, const DiscreteMeasure& nu0, double epsilon,
                                            int maxIterations = 20000, double tol = 1e-9) {
    mu0.validate();
    nu0.validate();
    if (!(epsilon > 0)) throw PreconditionViolated("wasserstein1_entropic: epsilon must be > 0");
    auto mu = normalized(mu0), nu = normalized(nu0);
    const std::size_t n = mu.size(), m = nu.size();
    auto C = cost_matrix(mu, nu);
    double cmax = 0;
    for (double v : C) cmax = std::max(cmax, v);
    // scaling form u_i K_ij v_j with K = exp((f_i + g_j - C_ij)/eps); u, v are absorbed into
    // the log-domain potentials f, g whenever they leave [1e-50, 1e50] and at every stage end
    rvec f(n, 0.0), g(m, 0.0), u(n, 1.0), v(m, 1.0), Kv(n), Ktu(m);
    std::vector<double> K(n * m);
    auto build = [&](double eps) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) K[i * m + j] = std::exp((f[i] + g[j] - C[i * m + j]) / eps);
        std::fill(u.begin(), u.end(), 1.0);
        std::fill(v.begin(), v.end(), 1.0);
    };
    auto absorb = [&](double eps) {
        for (std::size_t i = 0; i < n; ++i) f[i] += eps * std::log(u[i]);
        for (std::size_t j = 0; j < m; ++j) g[j] += eps * std::log(v[j]);
        build(eps);
    };
    auto mul = [&]() {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            const double* k = &K[i * m];
            for (std::size_t j = 0; j < m; ++j) s += k[j] * v[j];
            Kv[i] = s;
        }
    };
    EntropicResult r;
    r.epsilon = epsilon;
    double eps = std::max(epsilon, cmax);
    int it = 0;
    while (true) {
        const bool last = eps <= epsilon;
        const double stageTol = last ? tol : std::max(tol, 1e-3 * eps / cmax);
        build(eps);
        for (;;) {
            mul();
            for (std::size_t i = 0; i < n; ++i) u[i] = mu.w[i] / Kv[i];
            std::fill(Ktu.begin(), Ktu.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double* k = &K[i * m];
                for (std::size_t j = 0; j < m; ++j) Ktu[j] += k[j] * u[i];
            }
            for (std::size_t j = 0; j < m; ++j) v[j] = nu.w[j] / Ktu[j];  // columns exact
            ++it;
            bool out = false;
            for (double x : u) out = out || !(x > 1e-50 && x < 1e50);
            for (double x : v) out = out || !(x > 1e-50 && x < 1e50);
            if (out) {
                for (double x : u) if (!std::isfinite(x) || x == 0) throw NonConvergence("wasserstein1_entropic: kernel underflow");
                for (double x : v) if (!std::isfinite(x) || x == 0) throw NonConvergence("wasserstein1_entropic: kernel underflow");
                absorb(eps);
            }
            if (it % 10 == 0 || it >= maxIterations) {
                mul();
                double viol = 0;
                for (std::size_t i = 0; i < n; ++i) viol += std::abs(u[i] * Kv[i] - mu.w[i]);
                r.marginalViolation = viol;
                if (viol <= stageTol) break;
            }
            if (it >= maxIterations) break;
        }
        absorb(eps);
        if (last || it >= maxIterations) break;
        eps = std::max(epsilon, 0.5 * eps);
    }
    r.iterations = it;
    r.converged = r.marginalViolation <= tol;
    // plan, then rounding onto the exact marginals (scale rows/cols down, add rank-one correction)
    std::vector<double> P(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) P[i * m + j] = std::exp((f[i] + g[j] - C[i * m + j]) / eps);
    rvec rs(n, 0.0), cs(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) rs[i] += P[i * m + j];
    for (std::size_t i = 0; i < n; ++i) {
        const double s = rs[i] > mu.w[i] ? mu.w[i] / rs[i] : 1.0;
        for (std::size_t j = 0; j < m; ++j) P[i * m + j] *= s;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) cs[j] += P[i * m + j];
    for (std::size_t j = 0; j < m; ++j) {
        const double s = cs[j] > nu.w[j] ? nu.w[j] / cs[j] : 1.0;
        for (std::size_t i = 0; i < n; ++i) P[i * m + j] *= s;
    }
    std::fill(rs.begin(), rs.end(), 0.0);
    std::fill(cs.begin(), cs.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            rs[i] += P[i * m + j];
            cs[j] += P[i * m + j];
        }
    double ea = 0;
    for (std::size_t i = 0; i < n; ++i) ea += mu.w[i] - rs[i];
    double cost = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double p = P[i * m + j];
            if (ea > 0) p += (mu.w[i] - rs[i]) * (nu.w[j] - cs[j]) / ea;
            cost += p * C[i * m + j];
        }
    r.cost = cost;
    if (!r.converged)
        throw NonConvergence("wasserstein1_entropic: marginal violation " + std::to_string(r.marginalViolation) +
                             " after " + std::to_string(it) + " iterations (cost of the rounded plan " +
                             std::to_string(cost) + ")");
    return r;
}

// Trend study: W1 between the normalized many-body and Vlasov
// densities per (N, t), with a monotonicity verdict (10% noise allowance).
struct ConvergenceRow {
    int N = 0;
    double hbar = 0, t = 0, w1Exact = 0, w1Entropic = -1, epsilon = 0, l1 = 0;
    std::string notes;
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    std::map<double, bool> nonincreasing;  // per t
    bool allNonincreasing = true;
    std::string header =
        "# W1 trend in N between the Husimi one-particle density and the Vlasov solution; a trend only, "
        "the limit is not a rate and cannot be exhibited at finite N";

    std::string csv() const {
        std::ostringstream o;
        o << header << "\nN,hbar,t,w1_exact,w1_entropic,epsilon,l1_distance,notes\n";
        char buf[256];
        for (auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,", r.N, r.hbar, r.t, r.w1Exact,
                          r.w1Entropic, r.epsilon, r.l1);
            o << buf << r.notes << "\n";
        }
        return o.str();
    }
};

inline ConvergenceReport convergence_study(std::vector<ConvergenceRow> rows, double allowance = 0.10) {
    ConvergenceReport rep;
    std::sort(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.t < b.t || (a.t == b.t && a.N < b.N); });
    std::map<double, std::vector<const ConvergenceRow*>> byT;
    for (auto& r : rows) byT[r.t].push_back(&r);
    for (auto& [t, v] : byT) {
        if (v.size() < 3) throw DegenerateSeries("convergence_study: insufficient series (need >= 3 values of N)");
        bool ok = true;
        for (std::size_t i = 1; i < v.size(); ++i) ok = ok && v[i]->w1Exact <= (1 + allowance) * v[i - 1]->w1Exact;
        rep.nonincreasing[t] = ok;
        rep.allNonincreasing = rep.allNonincreasing && ok;
    }
    rep.rows = std::move(rows);
    return rep;
}

}  // namespace hvlab
