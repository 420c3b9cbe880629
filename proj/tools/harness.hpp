#pragma once

#include <openssl/evp.h>

#include <atomic>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "hvlab/experiments.hpp"

namespace hvlab::cli {

struct PartialFailure : Error {
    using Error::Error;
    const char* kind() const noexcept override { return "PartialFailure"; }
};

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

class Logger {
public:
    explicit Logger(Level l = Level::info, std::ostream* os = &std::cerr) : level_(l), os_(os) {}
    void log(Level l, const std::string& msg) {
        if (l > level_) return;
        static const char* names[] = {"error", "warn", "info", "debug"};
        std::lock_guard<std::mutex> g(m_);
        *os_ << "[" << names[static_cast<int>(l)] << "] " << msg << "\n";
    }
    LogFn info() {
        return [this](const std::string& s) { log(Level::info, s); };
    }

private:
    Level level_;
    std::ostream* os_;
    std::mutex m_;
};

inline std::string sha256_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot read " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (f) {
        f.read(buf.data(), buf.size());
        if (f.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(f.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx, md, &n);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char b[3];
    for (unsigned i = 0; i < n; ++i) {
        std::snprintf(b, sizeof b, "%02x", md[i]);
        hex += b;
    }
    return hex;
}

inline std::vector<std::string> artifact_files(const std::filesystem::path& dir) {
    std::vector<std::string> files;
    for (auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) {
            auto rel = std::filesystem::relative(e.path(), dir).generic_string();
            if (rel != "manifest.json") files.push_back(rel);
        }
    std::sort(files.begin(), files.end());
    return files;
}

inline void write_manifest(const std::filesystem::path& dir) {
    nlohmann::json j;
    j["hash"] = "sha256";
    j["files"] = nlohmann::json::array();
    for (auto& f : artifact_files(dir))
        j["files"].push_back({{"path", f},
                              {"sha256", sha256_file((dir / f).string())},
                              {"bytes", std::filesystem::file_size(dir / f)}});
    std::ofstream(dir / "manifest.json") << j.dump(2) << "\n";
}

// Files whose content no longer matches the manifest (missing ones included).
inline std::vector<std::string> verify_manifest(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw FormatError("no manifest.json in " + dir.string());
    nlohmann::json j;
    f >> j;
    std::vector<std::string> bad;
    for (auto& e : j.at("files")) {
        auto p = dir / e.at("path").get<std::string>();
        if (!std::filesystem::exists(p) || sha256_file(p.string()) != e.at("sha256").get<std::string>())
            bad.push_back(e.at("path").get<std::string>());
    }
    return bad;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw FormatError("cannot write " + p.string());
    f << s;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigInvalid("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigInvalid(std::string("config: JSON parse error: ") + e.what());
    }
    return parse_config(j);
}

struct Failure {
    int N;
    std::string kind, message;
};

// Independent per-N runs on a work queue of `workers` threads. Nothing mutable is
// shared between runs; results land in slots indexed by position in the N list.
inline std::pair<std::vector<RunResult>, std::vector<Failure>> execute(const ExperimentConfig& c,
                                                                      const std::filesystem::path& out, int workers,
                                                                      Logger& log) {
    const std::size_t n = c.N.size();
    std::vector<std::optional<RunResult>> slots(n);
    std::vector<std::optional<Failure>> fails(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const int N = c.N[i];
            const auto dir = out / ("N" + std::to_string(N));
            try {
                log.log(Level::info, c.experiment + " N=" + std::to_string(N) + " started");
                auto r = run_experiment(c, N, dir.string(), log.info());
                write_text(dir / csv_name(c.experiment), r.table.csv());
                write_text(dir / "meta.json", r.meta.dump(2) + "\n");
                slots[i] = std::move(r);
                log.log(Level::info, c.experiment + " N=" + std::to_string(N) + " done");
            } catch (const Error& e) {
                fails[i] = Failure{N, e.kind(), e.what()};
                log.log(Level::error, "N=" + std::to_string(N) + ": " + e.kind() + ": " + e.what());
            } catch (const std::exception& e) {
                fails[i] = Failure{N, "Error", e.what()};
                log.log(Level::error, "N=" + std::to_string(N) + ": " + e.what());
            }
        }
    };
    const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    std::vector<std::thread> pool;
    for (int t = 1; t < w; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    std::vector<RunResult> ok;
    std::vector<Failure> bad;
    for (std::size_t i = 0; i < n; ++i) {
        if (slots[i]) ok.push_back(std::move(*slots[i]));
        if (fails[i]) bad.push_back(*fails[i]);
    }
    return {std::move(ok), std::move(bad)};
}

inline void write_merged(const ExperimentConfig& c, const std::filesystem::path& out, const std::vector<RunResult>& runs,
                         const std::vector<Failure>& failures) {
    auto m = merge_runs(c, runs);
    write_text(out / csv_name(c.experiment), m.table.csv());
    if (!m.extraName.empty()) write_text(out / m.extraName, m.extraCsv);
    nlohmann::json s = m.summary.is_null() ? nlohmann::json::object() : m.summary;
    s["experiment"] = c.experiment;
    s["git"] = git_describe();
    s["completed_N"] = nlohmann::json::array();
    for (auto& r : runs) s["completed_N"].push_back(r.N);
    s["failed"] = nlohmann::json::array();
    for (auto& f : failures) s["failed"].push_back({{"N", f.N}, {"error", f.kind}, {"message", f.message}});
    write_text(out / "summary.json", s.dump(2) + "\n");
}

inline std::filesystem::path prepare_output(const ExperimentConfig& c, const std::string& outFlag) {
    std::filesystem::path out = outFlag.empty() ? c.output : outFlag;
    std::filesystem::create_directories(out);
    write_text(out / "config.json", c.to_json().dump(2) + "\n");
    return out;
}

inline std::string failure_list(const std::vector<Failure>& f) {
    std::string s;
    for (auto& x : f) s += (s.empty() ? "" : "; ") + ("N=" + std::to_string(x.N) + " " + x.kind + ": " + x.message);
    return s;
}

// run: every N in the list, failures abort with the module's error.
inline void cmd_run(const std::string& config, const std::string& outFlag, int workers, Logger& log) {
    auto c = load_config(config);
    auto out = prepare_output(c, outFlag);
    auto [runs, failures] = execute(c, out, workers, log);
    if (!failures.empty()) {
        const auto& f = failures.front();
        const std::string msg = "N=" + std::to_string(f.N) + ": " + f.message;
        if (f.kind == "CapacityExceeded") throw CapacityExceeded(msg);
        if (f.kind == "ProblemTooLarge") throw ProblemTooLarge(msg);
        if (f.kind == "ConfigInvalid") throw ConfigInvalid(msg);
        if (f.kind == "UnresolvedWindow") throw UnresolvedWindow(msg);
        throw Error(f.kind + std::string(": ") + msg);
    }
    write_merged(c, out, runs, failures);
    write_manifest(out);
    log.log(Level::info, "artifacts in " + out.string());
}

// sweep: >= 2 N, parallel, failed N listed while the rest is merged.
inline void cmd_sweep(const std::string& config, const std::string& outFlag, int workers, Logger& log) {
    auto c = load_config(config);
    if (c.N.size() < 2) throw ConfigInvalid("N: a sweep needs at least 2 values");
    auto out = prepare_output(c, outFlag);
    auto [runs, failures] = execute(c, out, workers, log);
    write_merged(c, out, runs, failures);
    write_manifest(out);
    log.log(Level::info, "artifacts in " + out.string());
    if (!failures.empty()) throw PartialFailure("failed: " + failure_list(failures));
}

inline void cmd_report(const std::string& outDir, std::ostream& os) {
    std::filesystem::path out = outDir;
    auto bad = verify_manifest(out);
    if (!bad.empty()) {
        std::string s;
        for (auto& b : bad) s += " " + b;
        throw FormatError("manifest mismatch:" + s);
    }
    nlohmann::json cfg;
    std::ifstream(out / "config.json") >> cfg;
    os << "experiment: " << cfg.at("experiment").get<std::string>() << "\n";
    os << "manifest: " << artifact_files(out).size() << " files verified\n";
    const auto csv = out / csv_name(cfg.at("experiment"));
    if (std::filesystem::exists(csv)) {
        std::ifstream f(csv);
        std::string line;
        std::size_t rows = 0;
        while (std::getline(f, line)) ++rows;
        os << csv.filename().string() << ": " << (rows ? rows - 1 : 0) << " rows\n";
    }
    if (std::filesystem::exists(out / "summary.json")) {
        nlohmann::json s;
        std::ifstream(out / "summary.json") >> s;
        os << "summary: " << s.dump(2) << "\n";
    }
}

inline int exit_code(const Error& e) {
    const std::string k = e.kind();
    if (k == "ConfigInvalid" || k == "UnresolvedWindow") return 2;
    if (k == "CapacityExceeded" || k == "ProblemTooLarge") return 3;
    if (k == "PartialFailure") return 4;
    return 1;
}

inline int cli_main(int argc, char** argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
    CLI::App app{"hvlab: Husimi-Vlasov phase-space laboratory"};
    app.require_subcommand(1);
    std::string config, out, level = "info";
    int workers = 1;
    auto common = [&](CLI::App* s, bool needConfig) {
        if (needConfig) s->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
        s->add_option("--out", out, "artifact directory (overrides the config's output)");
        s->add_option("--workers", workers, "concurrent runs")->check(CLI::PositiveNumber);
        s->add_option("--log-level", level, "error|warn|info|debug")
            ->check(CLI::IsMember({"error", "warn", "info", "debug"}));
    };
    auto* run = app.add_subcommand("run", "run every N of the config");
    auto* sweep = app.add_subcommand("sweep", "parallel N sweep with merged CSV and fits");
    auto* report = app.add_subcommand("report", "verify the manifest and summarize an artifact directory");
    auto* validate = app.add_subcommand("validate", "validate a config and print its canonical form");
    common(run, true);
    common(sweep, true);
    common(report, false);
    report->get_option("--out")->required();
    common(validate, true);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, os, es);
        return rc == 0 ? 0 : 2;
    }
    const Level lv = level == "error" ? Level::error : level == "warn" ? Level::warn : level == "debug" ? Level::debug : Level::info;
    Logger log(lv, &es);
    try {
        if (*run) cmd_run(config, out, workers, log);
        if (*sweep) cmd_sweep(config, out, workers, log);
        if (*report) cmd_report(out, os);
        if (*validate) os << load_config(config).to_json().dump(2) << "\n";
    } catch (const Error& e) {
        es << e.kind() << ": " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        es << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace hvlab::cli
