#pragma once

// Online updates from clinician corrections: fine-tune a parameter scope with
// SGD, blend with the previous parameters, and gate on a fixed holdout.

#include <filesystem>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "gtd/evalmetrics/metrics.hpp"
#include "gtd/hash.hpp"
#include "gtd/segnet/train.hpp"
#include "gtd/slideio/pnm.hpp"

namespace gtd::evolve {

struct Correction {
    std::string slide_id;
    std::string timestamp;
    slideio::SlideImage patch;
    slideio::LabelMask mask;
};

struct CorrectionBatch {
    std::vector<Correction> items;

    void validate() const {
        if (items.empty()) throw ContractError("correction batch is empty");
        for (const auto& c : items) {
            if (c.patch.width != c.mask.width || c.patch.height != c.mask.height)
                throw ContractError("correction '" + c.slide_id + "': patch and mask dims differ");
            for (auto v : c.mask.data)
                if (v > 3) throw ContractError("correction '" + c.slide_id + "': mask code " + std::to_string(v) + " outside 0..3");
        }
    }
};

enum class Scope { HeadsOnly, DecoderHeads, All };

inline std::string scope_name(Scope s) {
    switch (s) {
    case Scope::HeadsOnly: return "heads-only";
    case Scope::DecoderHeads: return "decoder+heads";
    case Scope::All: return "all";
    }
    return "?";
}

inline Scope parse_scope(const std::string& s) {
    if (s == "heads-only") return Scope::HeadsOnly;
    if (s == "decoder+heads") return Scope::DecoderHeads;
    if (s == "all") return Scope::All;
    throw ContractError("unknown update scope '" + s + "' (heads-only, decoder+heads, all)");
}

inline bool in_scope(Scope s, const std::string& name) {
    switch (s) {
    case Scope::HeadsOnly: return segnet::is_head_param(name);
    case Scope::DecoderHeads: return segnet::is_head_param(name) || segnet::is_decoder_param(name);
    case Scope::All: return true;
    }
    return false;
}

struct FusionConfig {
    double alpha = 0.7;  // weight kept on the old parameters
    Scope scope = Scope::DecoderHeads;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("fusion alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
};

/// Online fine-tune defaults: few epochs at the stage-2 rate.
inline segnet::TrainConfig default_update_config(std::uint64_t seed = 0) {
    auto c = segnet::TrainConfig::defaults_for_stage(2);
    c.epochs = 2;
    c.seed = seed;
    return c;
}

struct UpdateResult {
    segnet::SegModelParams params;
    bool aborted = false;
    std::string diagnostic;
    std::vector<segnet::EpochLog> log;
};

/// theta = alpha * old + (1 - alpha) * new on scope tensors; the rest is copied
/// from `old` untouched. alpha 1 and 0 return the endpoints bit-exactly.
inline segnet::SegModelParams fuse(const segnet::SegModelParams& old_p, const segnet::SegModelParams& new_p,
                                   const FusionConfig& fc) {
    fc.validate();
    segnet::SegModelParams out = old_p;
    for (auto& [name, t] : out.tensors) {
        if (!in_scope(fc.scope, name)) continue;
        const auto& n = new_p.at(name);
        if (n.size() != t.size()) throw ContractError("fuse: shape mismatch for '" + name + "'");
        if (fc.alpha == 1.0) continue;
        if (fc.alpha == 0.0) {
            t = n;
            continue;
        }
        for (std::size_t i = 0; i < t.size(); ++i) {
            // stored at checkpoint precision; the clamp keeps rounding from leaving [old, new]
            const double v = static_cast<float>(fc.alpha * t[i] + (1.0 - fc.alpha) * n[i]);
            t[i] = std::clamp(v, std::min(t[i], n[i]), std::max(t[i], n[i]));
        }
    }
    return out;
}

inline UpdateResult online_update(const segnet::SegModelParams& old_p, const CorrectionBatch& batch,
                                  const segnet::TrainConfig& sgd, const FusionConfig& fc) {
    batch.validate();
    fc.validate();
    if (!std::any_of(old_p.tensors.begin(), old_p.tensors.end(), [&](const auto& kv) { return in_scope(fc.scope, kv.first); }))
        throw ContractError("online_update: no parameter tensors in scope " + scope_name(fc.scope));

    std::vector<segnet::TrainingSlide> data;
    for (const auto& c : batch.items) data.push_back({c.slide_id, c.patch, c.mask});
    auto cfg = sgd;
    cfg.stage = 2;
    auto start = old_p;
    start.trained_stage = std::max(start.trained_stage, 1);

    UpdateResult r;
    try {
        auto tr = segnet::train(data, start, cfg, {}, [&](const std::string& n) { return in_scope(fc.scope, n); });
        r.log = std::move(tr.log);
        for (const auto& [name, t] : tr.params.tensors)
            if (!t.all_finite()) throw NumericError("non-finite values in fine-tuned '" + name + "'");
        r.params = fuse(old_p, tr.params, fc);
    } catch (const NumericError& e) {
        r.params = old_p;
        r.aborted = true;
        r.diagnostic = std::string("fine-tune aborted, parameters left unchanged: ") + e.what();
    }
    return r;
}

// ---------------------------------------------------------------------------
// Regression gate

struct GateResult {
    bool accept = false;
    double miou_old = 0.0;
    double miou_new = 0.0;
    double tolerance = 0.0;
};

/// Pooled foreground mIoU (villi, edema, hyperplasia) over the holdout slides.
inline double holdout_miou(const segnet::SegModelParams& p, const std::vector<segnet::TrainingSlide>& holdout,
                           const segnet::InferOptions& opt = {}) {
    if (holdout.empty()) throw ContractError("regression gate: holdout set is empty");
    eval::SegEvaluation ev;
    for (const auto& s : holdout) {
        const auto pred = segnet::infer_slide(s.image, p, opt);
        ev.add(s.id, eval::predicted_masks(pred.villi, pred.edema, pred.hyperplasia), eval::truth_masks(s.mask));
    }
    return ev.macro(false).iou;
}

inline GateResult regression_gate(const segnet::SegModelParams& fused, const std::vector<segnet::TrainingSlide>& holdout,
                                  const segnet::SegModelParams& old_p, double tolerance,
                                  const segnet::InferOptions& opt = {}) {
    if (holdout.empty()) throw ContractError("regression gate: holdout set is empty");
    GateResult g;
    g.tolerance = tolerance;
    g.miou_old = holdout_miou(old_p, holdout, opt);
    g.miou_new = fused == old_p ? g.miou_old : holdout_miou(fused, holdout, opt);
    g.accept = g.miou_new >= g.miou_old - tolerance;
    return g;
}

// ---------------------------------------------------------------------------
// Correction directory and audit log

/// Reads `index.jsonl` in `dir`: one {"patch", "mask", "slide_id", "timestamp"}
/// object per line; paths are relative to `dir`.
inline CorrectionBatch read_corrections(const std::filesystem::path& dir) {
    const auto index = dir / "index.jsonl";
    std::ifstream in(index);
    if (!in) throw std::runtime_error("cannot open correction index " + index.string());
    CorrectionBatch b;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t here = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(index.string() + ": " + e.what(), here);
        }
        for (const char* key : {"patch", "mask"})
            if (!j.contains(key) || !j[key].is_string()) throw ParseError(index.string() + ": missing \"" + key + "\"", here);
        Correction c;
        c.patch = slideio::read_ppm(dir / j["patch"].get<std::string>());
        const auto m = slideio::read_pgm(dir / j["mask"].get<std::string>());
        c.mask = slideio::LabelMask(m.width, m.height);
        c.mask.data = m.data;
        c.slide_id = j.value("slide_id", std::string{});
        c.timestamp = j.value("timestamp", std::string{});
        b.items.push_back(std::move(c));
    }
    b.validate();
    return b;
}

inline void write_corrections(const std::filesystem::path& dir, const CorrectionBatch& b) {
    std::filesystem::create_directories(dir);
    std::ofstream idx(dir / "index.jsonl", std::ios::binary);
    for (std::size_t i = 0; i < b.items.size(); ++i) {
        const auto& c = b.items[i];
        const std::string stem = "corr_" + std::to_string(i);
        slideio::write_ppm(dir / (stem + ".ppm"), c.patch);
        slideio::Plane<std::uint8_t> m(c.mask.width, c.mask.height);
        m.data = c.mask.data;
        slideio::write_pgm(dir / (stem + ".pgm"), m);
        nlohmann::ordered_json j{{"patch", stem + ".ppm"}, {"mask", stem + ".pgm"}, {"slide_id", c.slide_id},
                                 {"timestamp", c.timestamp}};
        idx << j.dump() << "\n";
    }
}

inline std::string params_hash(const segnet::SegModelParams& p) { return sha256_hex(ckpt::encode(segnet::to_records(p))); }

struct AuditEntry {
    double alpha = 0.0;
    std::string scope;
    std::size_t batch_size = 0;
    bool aborted = false;
    std::string diagnostic;
    std::optional<GateResult> gate;
    std::string old_hash, fused_hash, active_hash;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["alpha"] = alpha;
        j["scope"] = scope;
        j["batch_size"] = batch_size;
        j["aborted"] = aborted;
        if (!diagnostic.empty()) j["diagnostic"] = diagnostic;
        if (gate) {
            j["gate"] = {{"accept", gate->accept}, {"miou_old", gate->miou_old}, {"miou_new", gate->miou_new},
                         {"tolerance", gate->tolerance}};
        }
        j["old_sha256"] = old_hash;
        j["fused_sha256"] = fused_hash;
        j["active_sha256"] = active_hash;
        return j;
    }
};

inline void append_audit(const std::filesystem::path& path, const AuditEntry& e) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot append to audit log " + path.string());
    out << e.to_json().dump() << "\n";
}

} // namespace gtd::evolve
