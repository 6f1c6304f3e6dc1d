#pragma once

// Stage bookkeeping: every stage records its inputs and outputs with SHA-256
// hashes in <workdir>/manifests/<stage>.json. Those files are the only place
// that holds timestamps.

#include <chrono>
#include <ctime>
#include <iostream>
#include <set>

#include "gtd/pipeline/config.hpp"
#include "gtd/slideio/pnm.hpp"

namespace gtd::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kManifestSchema = "gtd-run-manifest/1";

/// Process exit codes, also printed by `gtd --help`.
enum ExitCode : int {
    kExitOk = 0,
    kExitInternal = 1,
    kExitUsage = 2,       // bad flags, config schema violation, contract violation
    kExitMissingInput = 3,  // absent upstream artifact or input file
    kExitCheckpoint = 4,  // checkpoint unreadable, corrupt or wrong version
    kExitNumeric = 5,     // non-finite values during training or features
    kExitParse = 6,       // malformed data file
};

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void require_file(const fs::path& p, const std::string& hint = {}) {
    if (!fs::is_regular_file(p))
        throw PreconditionError("missing input " + p.string() + (hint.empty() ? std::string{} : " (" + hint + ")"));
}

inline void write_text(const fs::path& p, const std::string& text) {
    slideio::write_file_bytes(p, slideio::Bytes(text.begin(), text.end()));
}

inline std::string read_text(const fs::path& p) {
    const auto b = slideio::read_file_bytes(p);
    return {b.begin(), b.end()};
}

/// Tracks one stage execution. Paths under the workdir are stored relative to it.
class StageRun {
public:
    StageRun(const RunConfig& cfg, std::string name, Json args = Json::object())
        : cfg_(cfg), name_(std::move(name)), args_(std::move(args)), started_(utc_now()) {}

    const std::string& name() const { return name_; }
    fs::path manifest_file() const { return cfg_.workdir() / "manifests" / (name_ + ".json"); }

    void input(const fs::path& p) {
        require_file(p);
        inputs_.insert(p);
    }
    /// Registers a written file (call after writing).
    const fs::path& output(const fs::path& p) {
        outputs_.insert(p);
        return p;
    }

    std::string key(const fs::path& p) const {
        const auto abs = fs::absolute(p).lexically_normal();
        const auto rel = abs.lexically_relative(fs::absolute(cfg_.workdir()).lexically_normal());
        return !rel.empty() && *rel.begin() != ".." ? rel.generic_string() : abs.generic_string();
    }
    fs::path locate(const std::string& k) const {
        const fs::path p(k);
        return p.is_absolute() ? p : cfg_.workdir() / p;
    }

    Json files(const std::set<fs::path>& set) const {
        std::map<std::string, std::string> sorted;
        for (const auto& p : set) sorted[key(p)] = sha256_file(p);
        Json out = Json::array();
        for (const auto& [k, h] : sorted) out.push_back({{"path", k}, {"sha256", h}});
        return out;
    }

    void finish() const {
        Json m;
        m["schema"] = kManifestSchema;
        m["command"] = name_;
        m["args"] = args_;
        m["seed"] = cfg_.seed;
        m["config_sha256"] = config_hash(cfg_);
        m["config"] = to_document(cfg_);
        m["started_at"] = started_;
        m["finished_at"] = utc_now();
        m["inputs"] = files(inputs_);
        m["outputs"] = files(outputs_);
        write_text(manifest_file(), m.dump(2) + "\n");
    }

    /// True when a previous run of this stage with the same config and args
    /// left every recorded input and output in place, unchanged.
    bool up_to_date() const {
        if (!fs::is_regular_file(manifest_file())) return false;
        Json m;
        try {
            m = Json::parse(read_text(manifest_file()));
        } catch (const std::exception&) {
            return false;
        }
        if (m.value("schema", "") != kManifestSchema || m.value("config_sha256", "") != config_hash(cfg_) ||
            m.value("args", Json::object()) != args_)
            return false;
        for (const char* section : {"inputs", "outputs"})
            for (const auto& f : m.value(section, Json::array())) {
                const auto p = locate(f.at("path").get<std::string>());
                if (!fs::is_regular_file(p) || sha256_file(p) != f.at("sha256").get<std::string>()) return false;
            }
        return true;
    }

private:
    const RunConfig& cfg_;
    std::string name_;
    Json args_;
    std::string started_;
    std::set<fs::path> inputs_, outputs_;
};

/// Options common to every stage invocation.
struct StageOptions {
    bool skip_existing = false;
    std::ostream* log = &std::clog;
};

/// Runs `body` under a StageRun unless --skip-existing finds it complete.
/// Returns false when skipped.
template <class Body>
bool run_stage(const RunConfig& cfg, const StageOptions& opt, const std::string& name, const Json& args, Body&& body) {
    StageRun run(cfg, name, args);
    if (opt.skip_existing && run.up_to_date()) {
        if (opt.log) *opt.log << "[" << name << "] up to date, skipped\n";
        return false;
    }
    if (opt.log) *opt.log << "[" << name << "] running\n";
    body(run);
    run.finish();
    return true;
}

} // namespace gtd::pipeline
