#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "hvlab/gridio.hpp"
#include "hvlab/hierarchy.hpp"
#include "hvlab/transport.hpp"
#include "hvlab/vlasov.hpp"

namespace hvlab {

// Experiment orchestration shared by the CLI and the acceptance binary: config
// schema, per-N runs producing CSV tables, and the merge step of a sweep.

struct GridSpec {
    int Q = 32, P = 64;
    double Pmax = 4;
};

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k = {"husimi-props", "hierarchy-balance", "remainder-scaling",
                                               "vlasov-convergence", "metrics"};
    return k;
}

struct ExperimentConfig {
    std::string experiment;
    std::vector<int> N;
    int d = 1;
    std::string L = "pi";  // number or "<c>pi"
    PhaseSpaceGrid grid;
    Backend backend = Backend::occupationBasis;
    WindowKind window = WindowKind::gaussian;
    std::string potential = "cosine";
    double A1 = 1, A2 = 0;
    double trapU0 = 1;
    Method method = Method::krylovExp;
    double dt = 0;  // many-body step, 0 -> propagator default
    double T = 0.25;
    std::vector<double> snapshotTimes;
    double snapshotSpacing = 0.01;
    GridSpec phaseGrid, phaseGridK2{24, 28, 4}, vlasovGrid{64, 128, 6};
    std::vector<int> orders{1};
    int k2MaxN = 4;
    std::vector<std::string> phis{"phi1"};
    double vlasovDt = 0.01;
    bool vlasovClip = false;
    int w1Coarse = 32;
    bool w1Entropic = false;
    double epsilonRel = 1e-3;
    std::string output = "hvlab-out";
    std::uint64_t seed = 0;

    double hbar(int n) const { return std::pow(double(n), -1.0 / d); }
    std::string potential_label() const {
        std::ostringstream o;
        o << potential;
        if (potential == "cosine" || potential == "constant") o << "(A=" << A1 << ")";
        if (potential == "double-mode") o << "(A1=" << A1 << ";A2=" << A2 << ")";
        return o.str();
    }
    PhaseGrid phase(const GridSpec& s) const { return phase_grid(grid, s.Q, s.P, s.Pmax); }
    Potential make_V() const { return potential_family(grid, potential, A1, A2); }
    nlohmann::json to_json() const;
};

namespace detail {

inline double parse_length(const nlohmann::json& v, std::string& err) {
    if (v.is_number()) return v.get<double>();
    if (!v.is_string()) {
        err = "expected a number or a string like \"pi\" / \"2pi\"";
        return 0;
    }
    std::string s = v.get<std::string>();
    if (s.size() < 2 || s.substr(s.size() - 2) != "pi") {
        err = "expected a number or a string like \"pi\" / \"2pi\"";
        return 0;
    }
    std::string c = s.substr(0, s.size() - 2);
    if (c.empty()) return pi;
    try {
        std::size_t used = 0;
        double f = std::stod(c, &used);
        if (used != c.size()) throw std::invalid_argument(c);
        return f * pi;
    } catch (const std::exception&) {
        err = "cannot parse multiple of pi '" + s + "'";
        return 0;
    }
}

// Reads one JSON object, recording every field-level problem instead of stopping
// at the first; finish() flags keys the schema does not know.
class FieldReader {
public:
    FieldReader(const nlohmann::json& j, std::string prefix, std::vector<std::string>& errs)
        : j_(j), prefix_(std::move(prefix)), errs_(errs) {}

    bool has(const std::string& key) const { return j_.contains(key); }
    void error(const std::string& key, const std::string& msg) { errs_.push_back(path(key) + ": " + msg); }

    template <class F>
    bool field(const std::string& key, bool required, F&& read) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            if (required) error(key, "required field missing");
            return false;
        }
        read(j_.at(key));
        return true;
    }
    void number(const std::string& key, double& out, double lo, double hi, bool required = false) {
        field(key, required, [&](const nlohmann::json& v) {
            if (!v.is_number()) return error(key, "expected a number");
            double x = v.get<double>();
            if (!(x >= lo && x <= hi)) return error(key, "value " + v.dump() + " outside [" + fmt(lo) + ", " + fmt(hi) + "]");
            out = x;
        });
    }
    void integer(const std::string& key, int& out, int lo, int hi, bool required = false) {
        field(key, required, [&](const nlohmann::json& v) {
            if (!v.is_number_integer()) return error(key, "expected an integer");
            long x = v.get<long>();
            if (x < lo || x > hi) return error(key, "value " + v.dump() + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
            out = static_cast<int>(x);
        });
    }
    void boolean(const std::string& key, bool& out) {
        field(key, false, [&](const nlohmann::json& v) {
            if (!v.is_boolean()) return error(key, "expected true/false");
            out = v.get<bool>();
        });
    }
    void choice(const std::string& key, std::string& out, const std::vector<std::string>& allowed, bool required = false) {
        field(key, required, [&](const nlohmann::json& v) {
            if (!v.is_string()) return error(key, "expected a string");
            auto s = v.get<std::string>();
            if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
                std::string a;
                for (auto& x : allowed) a += (a.empty() ? "" : ", ") + x;
                return error(key, "'" + s + "' is not one of {" + a + "}");
            }
            out = s;
        });
    }
    void text(const std::string& key, std::string& out) {
        field(key, false, [&](const nlohmann::json& v) {
            if (!v.is_string() || v.get<std::string>().empty()) return error(key, "expected a non-empty string");
            out = v.get<std::string>();
        });
    }
    template <class T, class Check>
    void list(const std::string& key, std::vector<T>& out, Check&& check, bool required = false) {
        field(key, required, [&](const nlohmann::json& v) {
            if (!v.is_array()) return error(key, "expected an array");
            std::vector<T> r;
            for (std::size_t i = 0; i < v.size(); ++i) {
                std::string msg = check(v[i]);
                if (!msg.empty()) return error(key + "[" + std::to_string(i) + "]", msg);
                r.push_back(v[i].template get<T>());
            }
            out = std::move(r);
        });
    }
    void object(const std::string& key, const std::function<void(FieldReader&)>& body) {
        field(key, false, [&](const nlohmann::json& v) {
            if (!v.is_object()) return error(key, "expected an object");
            FieldReader sub(v, path(key), errs_);
            body(sub);
            sub.finish();
        });
    }
    void finish() {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) error(it.key(), "unknown field");
    }
    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    static std::string fmt(double x) {
        std::ostringstream o;
        o << x;
        return o.str();
    }

private:
    const nlohmann::json& j_;
    std::string prefix_;
    std::vector<std::string>& errs_;
    std::set<std::string> seen_;
};

inline void read_grid_spec(FieldReader& r, const std::string& key, GridSpec& g) {
    r.object(key, [&](FieldReader& s) {
        s.integer("Q", g.Q, 2, 4096);
        s.integer("P", g.P, 2, 4096);
        s.number("Pmax", g.Pmax, 1e-6, 1e6);
    });
}

inline nlohmann::json grid_json(const GridSpec& g) { return {{"Q", g.Q}, {"P", g.P}, {"Pmax", g.Pmax}}; }

}  // namespace detail

// Experiment-dependent defaults: husimi-props runs on L=2pi (image overlap of the
// periodized window is 1e-13 there); everything that needs N up to 6 runs on L=pi, Mq=32.
inline ExperimentConfig default_config(const std::string& kind) {
    ExperimentConfig c;
    c.experiment = kind;
    c.grid.L = pi;
    c.grid.Mq = 32;
    c.grid.Pmax = 6;
    c.grid.Mp = 64;
    if (kind == "husimi-props") {
        c.L = "2pi";
        c.grid.L = 2 * pi;
        c.grid.Mq = 64;
        c.phaseGrid = {32, 48, 6};
        c.phaseGridK2 = {24, 32, 6};
        c.T = 0;
    }
    if (kind == "vlasov-convergence" || kind == "metrics") {
        c.T = 0.5;
        c.snapshotTimes = {0.25, 0.5};
    }
    return c;
}

// Parse and validate; every field-level problem is collected into one ConfigInvalid.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
    std::vector<std::string> errs;
    if (!j.is_object()) throw ConfigInvalid("config: expected a JSON object");
    detail::FieldReader r(j, "", errs);
    std::string kind;
    r.choice("experiment", kind, experiment_kinds(), true);
    ExperimentConfig c = default_config(kind.empty() ? "metrics" : kind);
    c.experiment = kind;
    if (j.contains("hbar")) r.field("hbar", false, [&](const nlohmann::json&) {
        r.error("hbar", "not settable; hbar is fixed to N^(-1/d)");
    });
    r.list<int>("N", c.N, [](const nlohmann::json& v) -> std::string {
        if (!v.is_number_integer()) return "expected an integer";
        long n = v.get<long>();
        return n >= 1 && n <= 64 ? "" : "N must lie in [1, 64]";
    }, true);
    if (j.contains("N") && j["N"].is_array() && j["N"].empty()) r.error("N", "empty list; at least one N is required");
    {
        std::set<int> u(c.N.begin(), c.N.end());
        if (u.size() != c.N.size()) r.error("N", "duplicate entries");
    }
    r.integer("d", c.d, 1, 3);
    if (c.d != 1) r.error("d", "only d=1 is supported by the many-body modules");
    r.object("grid", [&](detail::FieldReader& s) {
        s.field("L", false, [&](const nlohmann::json& v) {
            std::string e;
            double L = detail::parse_length(v, e);
            if (!e.empty()) return s.error("L", e);
            if (!(L > 0)) return s.error("L", "must be positive");
            c.grid.L = L;
            c.L = v.is_string() ? v.get<std::string>() : v.dump();
        });
        s.integer("Mq", c.grid.Mq, 2, 1 << 16);
        s.number("Pmax", c.grid.Pmax, 1e-6, 1e6);
        s.integer("Mp", c.grid.Mp, 2, 1 << 16);
    });
    // FFTW handles any size; powers of two are the fast path, even sizes keep the Nyquist mode
    if (c.grid.Mq % 2) r.error("grid.Mq", "must be even");
    if (c.grid.Mp % 2) r.error("grid.Mp", "must be even");
    {
        std::string b = to_string(c.backend);
        r.choice("backend", b, {"denseTensor", "occupationBasis"});
        c.backend = backend_from(b);
        std::string w = to_string(c.window);
        r.choice("window", w, {"gaussian", "bump"});
        c.window = window_kind_from(w);
    }
    r.object("potential", [&](detail::FieldReader& s) {
        s.choice("family", c.potential, {"zero", "constant", "cosine", "double-mode"});
        s.number("A1", c.A1, -1e3, 1e3);
        s.number("A2", c.A2, -1e3, 1e3);
    });
    r.object("trap", [&](detail::FieldReader& s) { s.number("U0", c.trapU0, -1e3, 1e3); });
    {
        std::string m = to_string(c.method);
        r.choice("method", m, {"krylovExp", "strangSplit"});
        c.method = m == "strangSplit" ? Method::strangSplit : Method::krylovExp;
    }
    r.number("dt", c.dt, 0, 1);
    r.number("T", c.T, 0, 100);
    r.list<double>("snapshot_times", c.snapshotTimes, [](const nlohmann::json& v) -> std::string {
        if (!v.is_number()) return "expected a number";
        return v.get<double>() >= 0 ? "" : "times must be >= 0";
    });
    r.number("snapshot_spacing", c.snapshotSpacing, 1e-6, 1);
    detail::read_grid_spec(r, "phase_grid", c.phaseGrid);
    detail::read_grid_spec(r, "phase_grid_k2", c.phaseGridK2);
    detail::read_grid_spec(r, "vlasov_grid", c.vlasovGrid);
    r.list<int>("orders", c.orders, [](const nlohmann::json& v) -> std::string {
        return v.is_number_integer() && (v.get<int>() == 1 || v.get<int>() == 2) ? "" : "orders are 1 or 2";
    });
    r.integer("k2_max_N", c.k2MaxN, 2, 64);
    {
        std::vector<std::string> names;
        for (auto& f : test_function_library(1.0)) names.push_back(f.name);
        r.list<std::string>("phis", c.phis, [names](const nlohmann::json& v) -> std::string {
            if (!v.is_string()) return "expected a test-function name";
            return std::find(names.begin(), names.end(), v.get<std::string>()) != names.end() ? ""
                                                                                              : "unknown test function";
        });
        if (c.phis.empty()) r.error("phis", "empty list");
    }
    r.object("vlasov", [&](detail::FieldReader& s) {
        s.number("dt", c.vlasovDt, 1e-6, 0.1);
        s.boolean("clip", c.vlasovClip);
    });
    r.object("w1", [&](detail::FieldReader& s) {
        s.integer("coarse", c.w1Coarse, 1, 64);
        s.boolean("entropic", c.w1Entropic);
        s.number("epsilon_rel", c.epsilonRel, 1e-6, 1);
    });
    r.text("output", c.output);
    r.field("seed", false, [&](const nlohmann::json& v) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            return r.error("seed", "expected a non-negative integer");
        c.seed = v.get<std::uint64_t>();
    });
    r.finish();

    // cross-field checks
    for (int n : c.N) {
        const double h = c.hbar(n), lim = 4 * c.grid.L / c.grid.Mq;
        if (std::sqrt(h) < lim)
            r.error("grid.Mq", "window unresolved at N=" + std::to_string(n) + ": sqrt(hbar)=" +
                                   detail::FieldReader::fmt(std::sqrt(h)) + " < 4*dq=" + detail::FieldReader::fmt(lim));
    }
    const bool hier = kind == "hierarchy-balance" || kind == "remainder-scaling";
    if (hier)
        for (int n : c.N)
            if (n < 2) r.error("N", "hierarchy experiments need N >= 2 (the k=1 terms involve gamma^(2))");
    if (kind == "hierarchy-balance" && c.T < 2 * c.snapshotSpacing)
        r.error("T", "hierarchy balance needs T >= 2*snapshot_spacing");
    if (kind == "vlasov-convergence" || kind == "metrics") {
        if (c.snapshotTimes.empty()) c.snapshotTimes = {c.T};
        if (c.vlasovGrid.Q % c.w1Coarse || c.vlasovGrid.P % c.w1Coarse)
            r.error("w1.coarse", "must divide vlasov_grid.Q and vlasov_grid.P");
    }
    if (c.method == Method::strangSplit && c.backend != Backend::denseTensor)
        r.error("method", "strangSplit requires backend denseTensor");
    if (!errs.empty()) {
        std::string msg = "invalid config (" + std::to_string(errs.size()) + " problem" + (errs.size() > 1 ? "s" : "") + ")";
        for (auto& e : errs) msg += "\n  " + e;
        throw ConfigInvalid(msg);
    }
    return c;
}

inline nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["N"] = N;
    j["d"] = d;
    j["grid"] = {{"L", L}, {"Mq", grid.Mq}, {"Pmax", grid.Pmax}, {"Mp", grid.Mp}};
    j["backend"] = to_string(backend);
    j["window"] = to_string(window);
    j["potential"] = {{"family", potential}, {"A1", A1}, {"A2", A2}};
    j["trap"] = {{"U0", trapU0}};
    j["method"] = to_string(method);
    j["dt"] = dt;
    j["T"] = T;
    j["snapshot_times"] = snapshotTimes;
    j["snapshot_spacing"] = snapshotSpacing;
    j["phase_grid"] = detail::grid_json(phaseGrid);
    j["phase_grid_k2"] = detail::grid_json(phaseGridK2);
    j["vlasov_grid"] = detail::grid_json(vlasovGrid);
    j["orders"] = orders;
    j["k2_max_N"] = k2MaxN;
    j["phis"] = phis;
    j["vlasov"] = {{"dt", vlasovDt}, {"clip", vlasovClip}};
    j["w1"] = {{"coarse", w1Coarse}, {"entropic", w1Entropic}, {"epsilon_rel", epsilonRel}};
    j["output"] = output;
    j["seed"] = seed;
    return j;
}

// ---------------------------------------------------------------------------
// Tables

inline std::string fmt_num(double x) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", x);
    return b;
}

inline const char* git_describe() {
#ifdef HVLAB_GIT_DESCRIBE
    return HVLAB_GIT_DESCRIBE;
#else
    return "unknown";
#endif
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string csv() const {
        std::ostringstream o;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) {
                const auto& c = r[i];
                if (i) o << ',';
                if (c.find_first_of(",\"\n") != std::string::npos) {
                    o << '"';
                    for (char ch : c) o << (ch == '"' ? "\"\"" : std::string(1, ch));
                    o << '"';
                } else
                    o << c;
            }
            o << '\n';
        };
        line(header);
        for (auto& r : rows) line(r);
        return o.str();
    }
};

// Leading columns carried by every row.
inline std::vector<std::string> context_header() { return {"N", "hbar", "d", "window", "potential", "git"}; }
inline std::vector<std::string> context_cells(const ExperimentConfig& c, const std::string& N, const std::string& hbar) {
    return {N, hbar, std::to_string(c.d), to_string(c.window), c.potential_label(), git_describe()};
}
inline std::vector<std::string> context_cells(const ExperimentConfig& c, int N) {
    return context_cells(c, std::to_string(N), fmt_num(c.hbar(N)));
}

inline std::vector<std::string> experiment_header(const std::string& kind) {
    auto h = context_header();
    std::vector<std::string> tail;
    if (kind == "husimi-props") tail = {"quantity", "check", "value", "bound", "pass"};
    if (kind == "hierarchy-balance") tail = {"t", "k", "term", "phi", "value"};
    if (kind == "remainder-scaling") tail = {"t", "term", "phi", "pairing_value", "slope", "slope_se"};
    if (kind == "vlasov-convergence" || kind == "metrics")
        tail = {"t", "w1_exact", "w1_entropic", "epsilon", "l1_distance", "notes"};
    h.insert(h.end(), tail.begin(), tail.end());
    return h;
}

inline std::string csv_name(const std::string& kind) {
    std::string s = kind;
    std::replace(s.begin(), s.end(), '-', '_');
    return s + ".csv";
}

struct RunResult {
    int N = 0;
    CsvTable table;
    nlohmann::json meta;
};

using LogFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// State preparation and (optionally cached) evolution

inline ManyBodyState initial_state(const ExperimentConfig& c, int N) {
    const double U0 = c.trapU0, k = 2 * pi / c.grid.L;
    auto orb = trap_orbitals(c.grid, c.hbar(N), [=](double x) { return U0 * std::cos(k * x); }, N);
    return slater_determinant(orb, c.grid, c.backend);
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

// States at the requested times (ascending). With HVLAB_CACHE set, each state is
// looked up under a key of everything that determines it and stored after evolving.
inline std::vector<ManyBodyState> evolved_states(const ExperimentConfig& c, int N, const std::vector<double>& times,
                                                 const LogFn& log = {}) {
    const char* cacheEnv = std::getenv("HVLAB_CACHE");
    std::string cacheDir = cacheEnv ? cacheEnv : "";
    auto key = [&](double t) {
        nlohmann::json k = {{"N", N},
                            {"grid", {c.grid.L, c.grid.Mq, c.grid.Pmax, c.grid.Mp}},
                            {"backend", to_string(c.backend)},
                            {"trap", c.trapU0},
                            {"potential", {c.potential, c.A1, c.A2}},
                            {"method", to_string(c.method)},
                            {"dt", c.dt},
                            {"t", fmt_num(t)}};
        char b[32];
        std::snprintf(b, sizeof b, "psi_%016llx.bin", static_cast<unsigned long long>(fnv1a(k.dump())));
        return (std::filesystem::path(cacheDir) / b).string();
    };
    std::vector<ManyBodyState> out;
    if (!cacheDir.empty()) {
        bool all = true;
        for (double t : times) all = all && std::filesystem::exists(key(t)) && std::filesystem::exists(key(t) + ".json");
        if (all) {
            for (double t : times) out.push_back(load_state(key(t)));
            if (log) log("N=" + std::to_string(N) + ": reused " + std::to_string(times.size()) + " cached states");
            return out;
        }
    }
    auto s0 = initial_state(c, N);
    EvolutionConfig ec;
    ec.method = c.method;
    ec.dt = c.dt;
    ec.T = times.empty() ? 0 : *std::max_element(times.begin(), times.end());
    if (log) log("N=" + std::to_string(N) + ": evolving (dim " + std::to_string(s0.amp.size()) + ") to t=" + fmt_num(ec.T));
    auto tr = evolve(s0, c.make_V(), ec, times);
    for (double t : times)
        for (std::size_t i = 0; i < tr.times.size(); ++i)
            if (std::abs(tr.times[i] - t) < 1e-12) {
                out.push_back(tr.states[i]);
                break;
            }
    require(out.size() == times.size(), "evolved_states: missing snapshot");
    if (!cacheDir.empty()) {
        std::filesystem::create_directories(cacheDir);
        for (std::size_t i = 0; i < times.size(); ++i) save_state(out[i], key(times[i]));
    }
    return out;
}

inline std::vector<TestFunction> selected_phis(const ExperimentConfig& c) {
    auto lib = test_function_library(c.grid.L);
    std::vector<TestFunction> out;
    for (auto& n : c.phis)
        for (auto& f : lib)
            if (f.name == n) out.push_back(f);
    return out;
}

inline TestFunction partner_phi(const ExperimentConfig& c, const TestFunction& f) {
    auto lib = test_function_library(c.grid.L);
    for (std::size_t i = 0; i < lib.size(); ++i)
        if (lib[i].name == f.name) return lib[(i + 1) % lib.size()];
    return f;
}

inline std::string time_tag(double t) {
    char b[32];
    std::snprintf(b, sizeof b, "t%.4f", t);
    return b;
}

// ---------------------------------------------------------------------------
// Per-N experiments. `dir` receives the binary grid dumps (empty: no dumps).

inline RunResult run_husimi_props(const ExperimentConfig& c, int N, const std::string& dir, const LogFn& log = {}) {
    RunResult r;
    r.N = N;
    r.table.header = experiment_header(c.experiment);
    auto s = c.T > 0 ? evolved_states(c, N, {c.T}, log).front() : initial_state(c, N);
    auto w = make_window(c.window, c.hbar(N), c.grid);
    const double massTol = c.window == WindowKind::gaussian ? 1e-6 : 1e-3;
    auto rd1 = reduced_density(s, 1, true);
    auto m1 = husimi_k(rd1, w, c.phase(c.phaseGrid));
    bool all = true;
    auto add = [&](const std::string& q, const CheckResult& ch) {
        auto row = context_cells(c, N);
        for (auto v : {q, ch.check, fmt_num(ch.value), fmt_num(ch.bound), std::string(ch.pass ? "true" : "false")})
            row.push_back(v);
        r.table.rows.push_back(row);
        all = all && ch.pass;
    };
    auto rep1 = husimi_property_report(m1, nullptr, massTol);
    for (auto& ch : rep1.checks) add("m1", ch);
    r.meta["m1"] = rep1.to_json();
    if (N >= 2) {
        auto pg2 = c.phase(c.phaseGridK2);
        auto m1b = husimi_k(rd1, w, pg2);
        auto m2 = husimi_k(reduced_density(s, 2, true), w, pg2);
        auto rep2 = husimi_property_report(m2, &m1b, massTol);
        for (auto& ch : rep2.checks) add("m2", ch);
        r.meta["m2"] = rep2.to_json();
        if (!dir.empty()) write_husimi(m2, dir + "/m2.bin");
    }
    for (int k = 1; k <= std::min(N, 3); ++k) {
        double v = std::abs(number_moment(s, k) - 1);
        add("state", {"number_moment_" + std::to_string(k), v, 1e-12, v <= 1e-12});
    }
    if (c.window == WindowKind::gaussian) {
        double v = wigner_smoothing_check(m1, wigner_1(rd1, c.hbar(N), c.grid));
        add("m1", {"wigner_smoothing", v, 1e-6, v <= 1e-6});
    }
    auto ki = kinetic_identity_check(s, w, c.phase(c.phaseGrid));
    r.meta["kinetic_identity"] = {{"kinetic", ki.kinetic},        {"husimi_p2", ki.husimiP2},
                                  {"grad_term", ki.gradTerm},     {"stated_residual", ki.statedResidual},
                                  {"corrected_residual", ki.correctedResidual}, {"out_of_band_mass", ki.outOfBandMass}};
    r.meta["all_pass"] = all;
    if (!dir.empty()) write_husimi(m1, dir + "/m1.bin");
    return r;
}

inline RunResult run_hierarchy_balance(const ExperimentConfig& c, int N, const std::string& dir, const LogFn& log = {}) {
    RunResult r;
    r.N = N;
    r.table.header = experiment_header(c.experiment);
    const double h = c.snapshotSpacing;
    auto snaps = evolved_states(c, N, {c.T - 2 * h, c.T - h, c.T, c.T + h, c.T + 2 * h}, log);
    auto w = make_window(c.window, c.hbar(N), c.grid);
    auto V = c.make_V();
    auto phis = test_function_library(c.grid.L);
    for (int k : c.orders) {
        if (k + 1 > N) {
            r.meta["skipped"].push_back({{"k", k}, {"reason", "k+1 > N"}});
            continue;
        }
        auto pg = c.phase(k == 1 ? c.phaseGrid : c.phaseGridK2);
        auto T = hierarchy_balance_terms(snaps, h, k, w, V, pg);
        auto rep = weak_residual(T, phis);
        for (auto& [term, vals] : rep.pairings)
            for (std::size_t f = 0; f < vals.size(); ++f) {
                auto row = context_cells(c, N);
                for (auto v : {fmt_num(c.T), std::to_string(k), term, phis[f].name, fmt_num(vals[f])}) row.push_back(v);
                r.table.rows.push_back(row);
            }
        for (auto [name, v] : {std::pair<std::string, double>{"relative_residual", rep.relative},
                               {"commutator_relative_residual", rep.commutatorRelative}}) {
            auto row = context_cells(c, N);
            for (auto s : {fmt_num(c.T), std::to_string(k), name, std::string("all"), fmt_num(v)}) row.push_back(s);
            r.table.rows.push_back(row);
        }
        r.meta["balance"].push_back(rep.to_json());
        if (!dir.empty()) {
            const std::string p = dir + "/k" + std::to_string(k) + "_";
            std::vector<std::uint64_t> ext;
            for (int j = 0; j < k; ++j) {
                ext.push_back(pg.Q);
                ext.push_back(pg.P);
            }
            io::write_grid(p + "m.bin", ext, T.m);
            io::write_grid(p + "defect.bin", ext, T.balance_defect());
        }
    }
    return r;
}

inline RunResult run_remainder_scaling(const ExperimentConfig& c, int N, const std::string& dir, const LogFn& log = {}) {
    RunResult r;
    r.N = N;
    r.table.header = experiment_header(c.experiment);
    auto s = evolved_states(c, N, {c.T}, log).front();
    auto w = make_window(c.window, c.hbar(N), c.grid);
    auto V = c.make_V();
    auto phis = selected_phis(c);
    auto add = [&](const std::string& term, const std::string& phi, double v) {
        auto row = context_cells(c, N);
        for (auto x : {fmt_num(c.T), term, phi, fmt_num(v), std::string(), std::string()}) row.push_back(x);
        r.table.rows.push_back(row);
    };
    auto pg = c.phase(c.phaseGrid);
    TermOptions o1;
    o1.fieldsR = false;
    auto T1 = hierarchy_terms(s, 1, w, V, pg, o1);
    for (auto& f : phis) add("R1", f.name, pair_field(T1.remainderQ, pg, 1, f, f));
    for (auto& f : phis) add("Rtilde1", f.name, pair_field(T1.remainderP, pg, 1, f, f));
    if (N <= c.k2MaxN) {
        auto pg2 = c.phase(c.phaseGridK2);
        TermOptions o2;
        o2.smeared = false;
        o2.fieldsR = false;
        auto T2 = hierarchy_terms(s, 2, w, V, pg2, o2);
        for (auto& f : phis) add("Rhat2", f.name + "x" + partner_phi(c, f).name, pair_field(T2.remainderHat, pg2, 2, f, partner_phi(c, f)));
        if (!dir.empty()) io::write_grid(dir + "/Rhat2.bin", {std::uint64_t(pg2.Q), std::uint64_t(pg2.P), std::uint64_t(pg2.Q), std::uint64_t(pg2.P)}, T2.remainderHat);
    }
    if (!dir.empty()) {
        io::write_grid(dir + "/divq_R1.bin", {std::uint64_t(pg.Q), std::uint64_t(pg.P)}, T1.remainderQ);
        io::write_grid(dir + "/divp_Rtilde1.bin", {std::uint64_t(pg.Q), std::uint64_t(pg.P)}, T1.remainderP);
    }
    return r;
}

struct W1Comparison {
    double w1 = 0, w1Entropic = -1, epsilon = 0, l1 = 0, clipped = 0;
    bool certified = false;
};

inline W1Comparison compare_densities(const rvec& a, const rvec& b, const PhaseGrid& pg, int coarse, bool entropic,
                                      double epsRel) {
    W1Comparison out;
    auto ca = coarsen(a, pg, coarse, coarse), cb = coarsen(b, pg, coarse, coarse);
    out.clipped = ca.clippedMass + cb.clippedMass;
    auto na = normalized(ca.mu), nb = normalized(cb.mu);
    auto ex = wasserstein1_exact(na, nb);
    out.w1 = ex.cost;
    out.certified = ex.certified;
    if (entropic) {
        out.epsilon = epsRel * std::hypot(pg.L / 2, 2 * pg.Pmax);
        out.w1Entropic = wasserstein1_entropic(na, nb, out.epsilon).cost;
    }
    out.l1 = l1_distance(a, b, pg);
    return out;
}

inline std::vector<double> sorted_times(const ExperimentConfig& c) {
    auto t = c.snapshotTimes;
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

// W1 between the many-body Husimi density at t and the Vlasov solution started
// from the same N's Husimi density at t = 0.
inline RunResult run_vlasov_convergence(const ExperimentConfig& c, int N, const std::string& dir, const LogFn& log = {}) {
    RunResult r;
    r.N = N;
    r.table.header = experiment_header(c.experiment);
    auto times = sorted_times(c);
    std::vector<double> all = times;
    if (all.front() != 0) all.insert(all.begin(), 0.0);
    auto states = evolved_states(c, N, all, log);
    auto w = make_window(c.window, c.hbar(N), c.grid);
    auto V = c.make_V();
    auto pg = c.phase(c.vlasovGrid);
    auto m0 = husimi_k(reduced_density(states.front(), 1, true), w, pg);
    VlasovConfig vc;
    vc.dt = c.vlasovDt;
    vc.clip = c.vlasovClip;
    if (log) log("N=" + std::to_string(N) + ": Vlasov run");
    auto vt = vlasov_evolve(vlasov_state(m0), V, vc, times);
    r.meta["vlasov"] = {{"max_mass_drift", vt.maxMassDrift}, {"max_energy_drift", vt.maxEnergyDrift},
                        {"min_value", vt.minValue},        {"clipped_mass", vt.clippedMass},
                        {"max_boundary_mass", vt.maxBoundaryMass}};
    for (double t : times) {
        std::size_t si = std::find(all.begin(), all.end(), t) - all.begin();
        auto mt = husimi_k(reduced_density(states[si], 1, true), w, pg);
        const VlasovState* vs = nullptr;
        for (std::size_t i = 0; i < vt.times.size(); ++i)
            if (std::abs(vt.times[i] - t) < 1e-12) vs = &vt.states[i];
        require(vs != nullptr, "vlasov-convergence: missing Vlasov snapshot");
        auto cmp = compare_densities(mt.values, vs->m, pg, c.w1Coarse, c.w1Entropic, c.epsilonRel);
        std::ostringstream notes;
        notes << "coarse=" << c.w1Coarse << "x" << c.w1Coarse << ";clipped=" << fmt_num(cmp.clipped)
              << ";out_of_band=" << fmt_num(mt.outOfBandMass) << (cmp.certified ? "" : ";uncertified");
        auto row = context_cells(c, N);
        for (auto x : {fmt_num(t), fmt_num(cmp.w1), fmt_num(cmp.w1Entropic), fmt_num(cmp.epsilon), fmt_num(cmp.l1),
                       notes.str()})
            row.push_back(x);
        r.table.rows.push_back(row);
        if (!dir.empty()) {
            write_husimi(mt, dir + "/m1_" + time_tag(t) + ".bin");
            write_vlasov(*vs, dir + "/vlasov_" + time_tag(t) + ".bin");
        }
    }
    return r;
}

// Displacement of the many-body density from its initial value, plus a seeded
// metric self-check of the exact solver on random point clouds.
inline RunResult run_metrics(const ExperimentConfig& c, int N, const std::string& dir, const LogFn& log = {}) {
    RunResult r;
    r.N = N;
    r.table.header = experiment_header(c.experiment);
    auto times = sorted_times(c);
    std::vector<double> all = times;
    if (all.front() != 0) all.insert(all.begin(), 0.0);
    auto states = evolved_states(c, N, all, log);
    auto w = make_window(c.window, c.hbar(N), c.grid);
    auto pg = c.phase(c.vlasovGrid);
    auto m0 = husimi_k(reduced_density(states.front(), 1, true), w, pg);
    for (double t : times) {
        std::size_t si = std::find(all.begin(), all.end(), t) - all.begin();
        auto mt = husimi_k(reduced_density(states[si], 1, true), w, pg);
        auto cmp = compare_densities(m0.values, mt.values, pg, c.w1Coarse, c.w1Entropic, c.epsilonRel);
        auto row = context_cells(c, N);
        for (auto x : {fmt_num(t), fmt_num(cmp.w1), fmt_num(cmp.w1Entropic), fmt_num(cmp.epsilon), fmt_num(cmp.l1),
                       std::string("reference=m1(0)") + (cmp.certified ? "" : ";uncertified")})
            row.push_back(x);
        r.table.rows.push_back(row);
        if (!dir.empty()) write_husimi(mt, dir + "/m1_" + time_tag(t) + ".bin");
    }
    std::mt19937_64 rng(c.seed * 1000003ull + static_cast<std::uint64_t>(N));
    std::uniform_real_distribution<double> U(0, 1);
    auto cloud = [&](int n) {
        DiscreteMeasure m;
        m.L = pg.L;
        for (int i = 0; i < n; ++i) {
            m.x.push_back({U(rng) * pg.L, (2 * U(rng) - 1) * pg.Pmax});
            m.w.push_back(0.05 + U(rng));
        }
        return normalized(m);
    };
    double worstSym = 0, worstTri = 0;
    for (int i = 0; i < 20; ++i) {
        auto a = cloud(8), b = cloud(9), d = cloud(7);
        double ab = wasserstein1_exact(a, b).cost, ba = wasserstein1_exact(b, a).cost;
        double bd = wasserstein1_exact(b, d).cost, ad = wasserstein1_exact(a, d).cost;
        worstSym = std::max(worstSym, std::abs(ab - ba));
        worstTri = std::max(worstTri, ad - ab - bd);
    }
    r.meta["metric_self_check"] = {{"triples", 20}, {"max_asymmetry", worstSym}, {"max_triangle_violation", worstTri}};
    return r;
}

inline RunResult run_experiment(const ExperimentConfig& c, int N, const std::string& dir, const LogFn& log = {}) {
    if (!dir.empty()) std::filesystem::create_directories(dir);
    RunResult r;
    if (c.experiment == "husimi-props") r = run_husimi_props(c, N, dir, log);
    else if (c.experiment == "hierarchy-balance") r = run_hierarchy_balance(c, N, dir, log);
    else if (c.experiment == "remainder-scaling") r = run_remainder_scaling(c, N, dir, log);
    else if (c.experiment == "vlasov-convergence") r = run_vlasov_convergence(c, N, dir, log);
    else if (c.experiment == "metrics") r = run_metrics(c, N, dir, log);
    else throw ConfigInvalid("unknown experiment '" + c.experiment + "'");
    r.meta["N"] = N;
    r.meta["hbar"] = c.hbar(N);
    r.meta["git"] = git_describe();
    return r;
}

// ---------------------------------------------------------------------------
// Merge step of a sweep: rows in N order plus the derived fits.

struct MergedSweep {
    CsvTable table;
    nlohmann::json summary;
    std::string extraName, extraCsv;  // optional second artifact (convergence report)
};

inline MergedSweep merge_runs(const ExperimentConfig& c, std::vector<RunResult> runs) {
    std::sort(runs.begin(), runs.end(), [](auto& a, auto& b) { return a.N < b.N; });
    MergedSweep m;
    m.table.header = experiment_header(c.experiment);
    for (auto& r : runs)
        for (auto& row : r.table.rows) m.table.rows.push_back(row);
    std::string nList;
    for (auto& r : runs) nList += (nList.empty() ? "" : ";") + std::to_string(r.N);
    if (c.experiment == "remainder-scaling") {
        // one log-log fit per (term, phi) over the successful N
        std::map<std::pair<std::string, std::string>, ScalingSeries> series;
        std::vector<std::pair<std::string, std::string>> order;
        for (auto& r : runs)
            for (auto& row : r.table.rows) {
                auto key = std::make_pair(row[7], row[8]);
                if (!series.count(key)) order.push_back(key);
                auto& s = series[key];
                s.term = row[7];
                s.N.push_back(r.N);
                s.hbar.push_back(c.hbar(r.N));
                s.value.push_back(std::stod(row[9]));
            }
        for (auto& key : order) {
            auto row = context_cells(c, nList, "");
            row.push_back(fmt_num(c.T));
            row.push_back(key.first);
            row.push_back(key.second);
            row.push_back("");
            try {
                auto fit = hbar_scaling_fit(series[key]);
                row.push_back(fmt_num(fit.slope));
                row.push_back(fmt_num(fit.slopeSE));
                m.summary["fits"].push_back({{"term", key.first}, {"phi", key.second}, {"slope", fit.slope},
                                             {"slope_se", fit.slopeSE}, {"points", fit.used}});
            } catch (const DegenerateSeries& e) {
                row.push_back("");
                row.push_back("");
                m.summary["fits"].push_back({{"term", key.first}, {"phi", key.second}, {"error", e.what()}});
            }
            m.table.rows.push_back(row);
        }
    }
    if (c.experiment == "vlasov-convergence") {
        std::vector<ConvergenceRow> rows;
        for (auto& r : runs)
            for (auto& row : r.table.rows)
                rows.push_back({r.N, c.hbar(r.N), std::stod(row[6]), std::stod(row[7]), std::stod(row[8]),
                                std::stod(row[9]), std::stod(row[10]), row[11]});
        try {
            auto rep = convergence_study(rows);
            m.extraName = "convergence.csv";
            m.extraCsv = rep.csv();
            for (auto& [t, ok] : rep.nonincreasing) m.summary["nonincreasing"][fmt_num(t)] = ok;
            m.summary["all_nonincreasing"] = rep.allNonincreasing;
        } catch (const DegenerateSeries& e) {
            m.summary["convergence_error"] = e.what();
        }
    }
    return m;
}

}  // namespace hvlab
