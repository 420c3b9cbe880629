// Acceptance suite: one PASS/FAIL line per criterion. Criteria marked
// KNOWN-DEVIATION are computed as specified and reported, but do not fail the run.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <unistd.h>

#include "hvlab/experiments.hpp"

using namespace hvlab;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Line {
    int id;
    std::string name;
    bool pass, knownDeviation;
    double seconds;
};

std::vector<Line> lines;

void criterion(int id, const std::string& name, bool knownDeviation, const std::function<Verdict()>& body) {
    auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const Error& e) {
        v = {false, std::string("error ") + e.kind() + ": " + e.what()};
    } catch (const std::exception& e) {
        v = {false, std::string("error: ") + e.what()};
    }
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s [%d] %s%s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", id, name.c_str(),
                knownDeviation && !v.pass ? " KNOWN-DEVIATION" : "", v.detail.c_str(), s);
    std::fflush(stdout);
    lines.push_back({id, name, v.pass, knownDeviation, s});
}

std::string f(const char* fmt, auto... a) {
    char b[512];
    std::snprintf(b, sizeof b, fmt, a...);
    return b;
}

PhaseSpaceGrid grid(int Mq, double L, double Pmax = 6, int Mp = 64) {
    PhaseSpaceGrid g;
    g.L = L;
    g.Mq = Mq;
    g.Pmax = Pmax;
    g.Mp = Mp;
    return g;
}

ManyBodyState trap_state(int N, const PhaseSpaceGrid& g, Backend b = Backend::occupationBasis) {
    const double k = 2 * pi / g.L;
    return slater_determinant(trap_orbitals(g, 1.0 / N, [k](double x) { return std::cos(k * x); }, N), g, b);
}

DiscreteMeasure random_measure(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0, 1);
    DiscreteMeasure mu;
    mu.L = pi;
    for (int i = 0; i < n; ++i) {
        mu.x.push_back({U(rng) * pi, 4 * U(rng) - 2});
        mu.w.push_back(0.05 + U(rng));
    }
    return mu;
}

DiscreteMeasure grid_measure(int n, const std::function<double(double, double)>& fn) {
    DiscreteMeasure mu;
    mu.L = pi;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double q = i * pi / n, p = -4 + 8 * (j + 0.5) / n;
            mu.x.push_back({q, p});
            mu.w.push_back(fn(q, p));
        }
    return mu;
}

// The many-body sweep shared by the scaling and trend criteria: L = pi, Mq = 32,
// V = cos 2x, trap-Slater start, states cached so that each N is evolved once.
ExperimentConfig sweep_config() {
    return parse_config({{"experiment", "vlasov-convergence"},
                         {"N", {2, 3, 4, 5, 6}},
                         {"snapshot_times", {0.25, 0.5}},
                         {"vlasov_grid", {{"Q", 64}, {"P", 128}, {"Pmax", 6}}},
                         {"w1", {{"coarse", 32}}}});
}
const std::vector<double> kSweepTimes = {0.0, 0.25, 0.5};

}  // namespace

int main() {
    const auto cache = std::filesystem::temp_directory_path() / ("hvlab_acceptance_" + std::to_string(::getpid()));
    std::filesystem::create_directories(cache);
    ::setenv("HVLAB_CACHE", cache.c_str(), 1);
    std::printf("hvlab acceptance (%s)\n", git_describe());

    criterion(1, "frame identity", false, [] {
        auto g = grid(128, 2 * pi, 6.0, 128);
        auto w = make_window(WindowKind::gaussian, 0.25, g);
        std::mt19937_64 rng(2024);
        std::vector<cvec> tests;
        for (int t = 0; t < 10; ++t) tests.push_back(random_bandlimited(g, 12.0, rng));
        auto t0 = std::chrono::steady_clock::now();
        double d = resolution_defect(w, g, tests);
        double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return Verdict{d <= 1e-3 && s < 10, f("max defect %.3e <= 1e-3 over 10 vectors, %.1f s < 10 s", d, s)};
    });

    criterion(2, "Husimi structural suite", false, [] {
        auto t0 = std::chrono::steady_clock::now();
        auto g = grid(64, 2 * pi);
        auto s = trap_state(3, g);
        auto w = make_window(WindowKind::gaussian, 1.0 / 3, g);
        auto pg = phase_grid(g, 24, 32, 6.0);
        auto m1 = husimi_k(reduced_density(s, 1, true), w, pg);
        auto m2 = husimi_k(reduced_density(s, 2, true), w, pg);
        auto r1 = husimi_property_report(m1, nullptr, 1e-6, 1e-6);
        auto r2 = husimi_property_report(m2, &m1, 1e-6, 1e-6);
        // bump window: compact support, slower Fourier decay, wider momentum box
        auto gb = grid(64, pi);
        auto sb = trap_state(3, gb);
        auto wb = make_window(WindowKind::bump, 1.0 / 3, gb);
        auto mb = husimi_k(reduced_density(sb, 1, true), wb, phase_grid(gb, 64, 96, 12.0));
        auto rb = husimi_property_report(mb, nullptr, 1e-3, 1e-6);
        double s_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool ok = r1.pass() && r2.pass() && rb.pass() && s_ < 120;
        return Verdict{ok, f("gaussian m1 mass %.1e, m2 mass %.1e, m2 sym %.1e, marginal %.1e, min %.1e, max %.6f; "
                             "bump m1 mass %.1e (<=1e-3), max %.6f; %.0f s < 120 s",
                             r1.get("mass").value, r2.get("mass").value, r2.get("symmetry").value,
                             r2.get("marginal").value, -std::max(r1.get("lower_bound").value, r2.get("lower_bound").value),
                             std::max(r1.get("upper_bound").value, r2.get("upper_bound").value), rb.get("mass").value,
                             rb.get("upper_bound").value, s_)};
    });

    criterion(3, "Wigner smoothing relation", false, [] {
        auto t0 = std::chrono::steady_clock::now();
        double worst = 0;
        for (int N : {1, 2, 3}) {
            auto g = grid(32, pi);
            auto s = trap_state(N, g);
            auto G1 = reduced_density(s, 1, true);
            auto m1 = husimi_k(G1, make_window(WindowKind::gaussian, 1.0 / N, g), phase_grid(g, 32, 48, 6.0));
            worst = std::max(worst, wigner_smoothing_check(m1, wigner_1(G1, 1.0 / N, g)));
        }
        double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return Verdict{worst <= 1e-6 && s < 30, f("max relative sup error %.2e <= 1e-6 (N=1,2,3), %.1f s < 30 s", worst, s)};
    });

    criterion(4, "kinetic identity and number moments", true, [] {
        auto g = grid(32, pi);
        double stated = 0, corrected = 0, moment = 0;
        for (int N : {2, 3}) {
            auto s = trap_state(N, g);
            auto w = make_window(WindowKind::gaussian, 1.0 / N, g);
            auto r = kinetic_identity_check(s, w, phase_grid(g, 16, 128, 8.0));
            stated = std::max(stated, r.statedResidual);
            corrected = std::max(corrected, r.correctedResidual);
            for (int k = 1; k <= N; ++k) moment = std::max(moment, std::abs(number_moment(s, k) - 1));
        }
        bool ok = stated <= 1e-6 && moment <= 1e-12;
        return Verdict{ok, f("identity with +hbar||grad f||^2: residual %.3e (bound 1e-6); with -hbar||grad f||^2: %.2e; "
                             "number moments |<(N/N)^k>-1| %.1e <= 1e-12",
                             stated, corrected, moment)};
    });

    criterion(5, "propagation hygiene", false, [] {
        double normRate = 0, energy = 0, margin = 1e300;
        auto g = grid(32, pi);
        auto V = potential_family(g, "cosine", 1.0);
        const double T = 1.0;
        const rvec times = {0.25, 0.5, 0.75, 1.0};
        for (int N : {2, 3}) {
            EvolutionConfig c;
            c.method = Method::strangSplit;
            c.T = T;
            auto tr = evolve(trap_state(N, g, Backend::denseTensor), V, c, times);
            normRate = std::max(normRate, tr.maxNormDrift / T);
            energy = std::max(energy, tr.maxEnergyDrift);
            margin = std::min(margin, kinetic_bound_check(tr, V).minMargin);
        }
        for (int N : {2, 3, 4}) {
            EvolutionConfig c;
            c.T = T;
            auto tr = evolve(trap_state(N, g), V, c, times);
            normRate = std::max(normRate, tr.maxNormDrift / T);
            energy = std::max(energy, tr.maxEnergyDrift);
            margin = std::min(margin, kinetic_bound_check(tr, V).minMargin);
        }
        // free evolution: every momentum component only acquires its phase
        std::mt19937_64 rng(5);
        auto s = empty_state(2, g, Backend::occupationBasis);
        std::normal_distribution<double> n01;
        for (auto& z : s.amp) z = {n01(rng), n01(rng)};
        const double nrm = s.norm();
        for (auto& z : s.amp) z /= nrm;
        s = to_dense(s);
        EvolutionConfig fc;
        fc.method = Method::strangSplit;
        fc.T = 0.7;
        auto ft = evolve(s, potential_family(g, "zero"), fc);
        cvec a = s.amp, b = ft.states.back().amp;
        for (int ax = 0; ax < 2; ++ax) {
            fft::transform_axis(a, 32, 2, ax, +1);
            fft::transform_axis(b, 32, 2, ax, +1);
        }
        double phase = 0;
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) {
                const double k1 = g.kmode(i), k2 = g.kmode(j);
                cplx e = a[i * 32 + j] * std::exp(-I * (0.5 * (k1 * k1 + k2 * k2) * 0.7 / 2));
                phase = std::max(phase, std::abs(b[i * 32 + j] - e));
            }
        bool ok = normRate <= 1e-9 && energy <= 1e-6 && margin > 0 && phase <= 1e-8;
        return Verdict{ok, f("norm drift %.1e/unit time <= 1e-9, energy drift %.1e <= 1e-6, kinetic-bound margin %.3f > 0 "
                             "(5 runs), free phases %.1e <= 1e-8",
                             normRate, energy, margin, phase)};
    });

    criterion(6, "hierarchy balance", false, [] {
        auto t0 = std::chrono::steady_clock::now();
        auto g = grid(32, pi);
        auto V = potential_family(g, "cosine", 1.0);
        const double t = 0.25, h = 0.01;
        auto phis = test_function_library(g.L);
        std::string d;
        bool ok = true;
        for (auto [N, k] : {std::pair{2, 1}, {3, 1}, {3, 2}}) {
            auto snaps = hierarchy_snapshots(trap_state(N, g), V, t, h);
            auto w = make_window(WindowKind::gaussian, 1.0 / N, g);
            auto pg = k == 1 ? phase_grid(g, 32, 64, 4.0) : phase_grid(g, 24, 28, 4.0);
            auto rep = weak_residual(hierarchy_balance_terms(snaps, h, k, w, V, pg), phis);
            const double tol = k == 1 ? 1e-4 : 1e-3;
            ok = ok && rep.relative <= tol;
            d += f("k=%d N=%d: %.2e <= %.0e (commutator route %.1e); ", k, N, rep.relative, tol, rep.commutatorRelative);
        }
        double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ok = ok && s < 900;
        return Verdict{ok, d + f("%.0f s < 900 s", s)};
    });

    criterion(7, "remainder hbar-scaling", true, [] {
        auto t0 = std::chrono::steady_clock::now();
        auto c = sweep_config();
        auto phis = test_function_library(c.grid.L);
        auto V = c.make_V();
        std::map<std::string, std::vector<ScalingSeries>> series;  // term -> per Phi
        for (auto term : {"R1", "Rtilde1", "Rhat2"}) series[term].resize(phis.size());
        for (int N : {2, 3, 4, 5, 6}) {
            auto s = evolved_states(c, N, kSweepTimes)[1];
            auto w = make_window(c.window, c.hbar(N), c.grid);
            auto pg = phase_grid(c.grid, 32, 64, 4.0);
            TermOptions o1;
            o1.fieldsR = false;
            auto T1 = hierarchy_terms(s, 1, w, V, pg, o1);
            std::optional<HierarchyTerms> T2;
            auto pg2 = phase_grid(c.grid, 24, 28, 4.0);
            if (N <= 4) {
                TermOptions o2;
                o2.smeared = false;
                o2.fieldsR = false;
                T2 = hierarchy_terms(s, 2, w, V, pg2, o2);
            }
            for (std::size_t i = 0; i < phis.size(); ++i) {
                auto push = [&](const char* term, double v) {
                    auto& sr = series[term][i];
                    sr.term = term;
                    sr.N.push_back(N);
                    sr.hbar.push_back(1.0 / N);
                    sr.value.push_back(v);
                };
                push("R1", pair_field(T1.remainderQ, pg, 1, phis[i], phis[i]));
                push("Rtilde1", pair_field(T1.remainderP, pg, 1, phis[i], phis[i]));
                if (T2) push("Rhat2", pair_field(T2->remainderHat, pg2, 2, phis[i], phis[(i + 1) % phis.size()]));
            }
        }
        auto range = [&](const char* term) {
            double lo = 1e300, hi = -1e300;
            for (auto& sr : series[term]) {
                auto fit = hbar_scaling_fit(sr);
                lo = std::min(lo, fit.slope);
                hi = std::max(hi, fit.slope);
            }
            return std::pair{lo, hi};
        };
        auto [r1lo, r1hi] = range("R1");
        auto [rtlo, rthi] = range("Rtilde1");
        auto [rhlo, rhhi] = range("Rhat2");
        double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool ok = r1lo >= 0.4 && rtlo >= 0.4 && rhlo >= 2.5 && s < 7200;
        return Verdict{ok, f("slopes over 5 test functions: <Phi, dq R1> %.2f..%.2f >= 0.4, <Phi, dp Rtilde1> %.2f..%.2f "
                             ">= 0.4 (N=2..6); <Phi, Rhat2> %.2f..%.2f >= 2.5 (N=2..4) [with an hbar^2 prefactor, "
                             "the d=3 normalization: %.2f..%.2f]; %.0f s",
                             r1lo, r1hi, rtlo, rthi, rhlo, rhhi, rhlo + 2, rhhi + 2, s)};
    });

    criterion(8, "Vlasov solver", false, [] {
        auto g = grid(32, pi);
        auto profile = [&](double q, double p) { return (1 + 0.5 * std::cos(2 * q)) * std::exp(-p * p / 2); };
        rvec err, hq;
        double mass = 0;
        for (int n : {16, 32, 64}) {
            auto pg = phase_grid(g, n, 2 * n, 6.0);
            VlasovConfig c;
            c.dt = 0.05;
            c.T = 1;
            auto tr = vlasov_evolve(vlasov_state(pg, profile), potential_family(g, "zero"), c);
            double e = 0;
            for (int a = 0; a < pg.Q; ++a)
                for (int b = 0; b < pg.P; ++b)
                    e = std::max(e, std::abs(tr.states.back().m[a * pg.P + b] - profile(pg.q(a) - pg.p(b), pg.p(b))));
            err.push_back(e);
            hq.push_back(pg.dq());
            mass = std::max(mass, tr.maxMassDrift);
        }
        double order = 1e300;
        for (int i = 1; i < 3; ++i) order = std::min(order, std::log(err[i - 1] / err[i]) / std::log(hq[i - 1] / hq[i]));
        // interacting run: two-stream profile, cosine potential
        auto two = [&](double q, double p) {
            auto bump = [](double x) { return std::exp(-x * x / (2 * 0.36)); };
            return (1 + 0.3 * std::cos(2 * q)) * (bump(p - 1.0) + bump(p + 1.0)) / (2 * std::sqrt(2 * pi * 0.36));
        };
        auto V = potential_family(g, "cosine", 1.0);
        VlasovConfig c;
        c.dt = 0.01;
        rvec times;
        for (int i = 1; i <= 10; ++i) times.push_back(0.1 * i);
        auto big = vlasov_evolve(vlasov_state(phase_grid(g, 64, 120, 6.0), two), V, c, times);
        mass = std::max(mass, big.maxMassDrift);
        VlasovConfig hc;
        hc.dt = 0.005;
        rvec ht;
        for (int i = 1; i <= 6; ++i) ht.push_back(0.02 * i);
        auto tr = vlasov_evolve(vlasov_state(phase_grid(g, 32, 96, 6.0), two), V, hc, ht);
        auto r2 = factorized_hierarchy_residual(tr, 2, test_function_library(g.L), V);
        bool ok = order >= 2 && mass <= 1e-8 && r2.relative <= 5e-4;
        return Verdict{ok, f("free-transport order %.2f >= 2, mass drift %.1e <= 1e-8, factorized k=2 residual %.2e <= 5e-4",
                             order, mass, r2.relative)};
    });

    criterion(9, "W1 module", false, [] {
        std::mt19937_64 rng(99);
        double slack = 0;
        for (int t = 0; t < 100; ++t) {
            auto a = random_measure(8, rng), b = random_measure(9, rng), c = random_measure(7, rng);
            double ab = wasserstein1_exact(a, b).cost, ba = wasserstein1_exact(b, a).cost;
            double bc = wasserstein1_exact(b, c).cost, ac = wasserstein1_exact(a, c).cost;
            double aa = wasserstein1_exact(a, a).cost;
            slack = std::max({slack, -ab, std::abs(ab - ba), ac - ab - bc, std::abs(aa)});
        }
        double lp = 0;
        int instances = 0;
        for (int n = 1; n <= 6; ++n)
            for (int m = 1; m <= 6; ++m)
                for (int rep = 0; rep < 3; ++rep) {
                    auto a = normalized(random_measure(n, rng)), b = normalized(random_measure(m, rng));
                    auto C = cost_matrix(a, b);
                    double x = wasserstein1_exact(a, b).cost;
                    lp = std::max(lp, std::abs(x - transport_bland_lp(a.w, b.w, C)));
                    if (n * m <= 20) lp = std::max(lp, std::abs(x - transport_tree_enumeration(a.w, b.w, C)));
                    ++instances;
                }
        auto A = normalized(grid_measure(32, [](double q, double p) { return std::exp(-p * p / 2) * (1 + 0.5 * std::cos(2 * q)); }));
        auto B = normalized(grid_measure(32, [](double q, double p) {
            return std::exp(-(p - 0.5) * (p - 0.5)) * (1 + 0.3 * std::sin(2 * q));
        }));
        const double eps = 1e-3 * std::hypot(pi / 2, 8.0);
        auto ex = wasserstein1_exact(A, B);
        auto en = wasserstein1_entropic(A, B, eps);
        const double gap = std::abs(en.cost - ex.cost) / ex.cost;
        bool ok = slack <= 1e-9 && lp <= 1e-9 && gap <= 0.02 && ex.certified;
        return Verdict{ok, f("axiom slack %.1e <= 1e-9 (100 triples), LP/enumeration mismatch %.1e on %d instances, "
                             "32x32 entropic gap %.2f%% <= 2%% (eps %.2e)",
                             slack, lp, instances, 100 * gap, eps)};
    });

    criterion(10, "N-trend of W1 to Vlasov", false, [] {
        auto c = sweep_config();
        std::vector<ConvergenceRow> rows;
        for (int N : c.N) {
            auto r = run_vlasov_convergence(c, N, "");
            for (auto& row : r.table.rows)
                rows.push_back({N, c.hbar(N), std::stod(row[6]), std::stod(row[7]), -1, 0, std::stod(row[10]), row[11]});
        }
        auto rep = convergence_study(rows);
        std::string d;
        for (auto& [t, ok] : rep.nonincreasing) {
            d += f("t=%.2f:", t);
            for (auto& r : rep.rows)
                if (r.t == t) d += f(" %.4f", r.w1Exact);
            d += ok ? " nonincreasing; " : " NOT nonincreasing; ";
        }
        return Verdict{rep.allNonincreasing, d + "trend only (no rate is claimed)"};
    });

    std::filesystem::remove_all(cache);
    int hardFail = 0, known = 0;
    for (auto& l : lines) {
        if (!l.pass && l.knownDeviation) ++known;
        if (!l.pass && !l.knownDeviation) ++hardFail;
    }
    std::printf("summary: %zu criteria, %d failed, %d known deviations\n", lines.size(), hardFail, known);
    return hardFail ? 1 : 0;
}
