#pragma once

// Run configuration: one JSON document, merged over defaults with unknown keys
// rejected, then dotted-path overrides (`train.stage1.epochs=3`).

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gtd/evolve/evolve.hpp"
#include "gtd/forest/forest.hpp"
#include "gtd/hash.hpp"
#include "gtd/numerics/rng.hpp"
#include "gtd/segnet/config.hpp"
#include "gtd/stitcher/stitcher.hpp"

namespace gtd::pipeline {

using Json = nlohmann::ordered_json;

/// Schema violations: unknown keys, wrong types, out-of-range values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Paths {
    std::string workdir = "gtd-run";
    std::string manifest;    // empty: <workdir>/data/manifest.jsonl
    std::string checkpoint;  // empty: <workdir>/models/seg_stage2.gtck
    std::string corpus = "data/corpus";
};

struct DataConfig {
    int train_slides = 40;
    int test_slides = 10;
    int holdout_slides = 3;  // regression-gate set for online updates
    int width = 1024;
    int height = 1024;
    double stage1_fraction = 0.4;  // share of training slides used by stage 1
};

struct ModelSection {
    int patch_size = 512;
    int downsample = 4;
    int token_size = 8;
    int embed_dim = 64;
    int blocks = 2;
    int pixel_features = 16;
    std::vector<double> scales{0.5, 1.0, 2.0};
};

struct StageParams {
    double learning_rate = 0.3;
    int batch_size = 4;
    int epochs = 12;
};

struct TrainSection {
    double overlap_rate = 0.5;
    std::vector<double> scale_factors{1.0, 1.2, 0.8};
    StageParams stage1{0.3, 4, 12};
    StageParams stage2{0.01, 4, 4};
    segnet::ColorJitter color;
    segnet::LossSet losses;
};

struct InferSection {
    double overlap_rate = 0.5;
    double threshold = 0.5;
};

struct FeatureSection {
    int pca_max_tokens = 20000;  // evenly strided subsample of training tokens for the PCA fit
};

struct ForestSection {
    int n_trees = 20;
    int mtry = 0;  // 0: ceil(sqrt(features))
    int max_depth = 12;
    int min_leaf = 2;
};

struct StitchSection {
    int field_width = 512;
    int field_height = 512;
    int cols = 3;
    int rows = 3;
    double overlap = 0.5;
    int jitter_px = 6;
    double gain_jitter = 0.1;   // gain in [1-g, 1+g]
    double gamma_jitter = 0.1;  // gamma in [1-g, 1+g]
    double min_confidence = 0.05;
    double taper = 0.2;
};

struct EvolveSection {
    double alpha = 0.7;
    std::string scope = "decoder+heads";
    double tolerance = 0.02;
    double learning_rate = 0.01;
    int epochs = 2;
    int batch_size = 4;
};

struct ReportSection {
    int top_k = 3;
    std::string patient = "anonymous";
};

struct RunConfig {
    std::uint64_t seed = 0;
    Paths paths;
    DataConfig data;
    ModelSection model;
    TrainSection train;
    InferSection infer;
    FeatureSection features;
    ForestSection forest;
    StitchSection stitch;
    EvolveSection evolve;
    ReportSection report;

    void validate() const;

    std::filesystem::path workdir() const { return paths.workdir; }
    std::filesystem::path manifest_path() const {
        return paths.manifest.empty() ? workdir() / "data" / "manifest.jsonl" : std::filesystem::path(paths.manifest);
    }
    std::filesystem::path checkpoint_path() const {
        return paths.checkpoint.empty() ? workdir() / "models" / "seg_stage2.gtck" : std::filesystem::path(paths.checkpoint);
    }

    /// Named seed derivation: master seed xor FNV-1a of the stage name.
    std::uint64_t seed_for(const std::string& name) const { return num::derive_seed(seed, name); }

    segnet::ModelConfig model_config() const {
        segnet::ModelConfig m;
        m.patch_size = model.patch_size;
        m.downsample = model.downsample;
        m.token_size = model.token_size;
        m.embed_dim = model.embed_dim;
        m.blocks = model.blocks;
        m.pixel_features = model.pixel_features;
        m.scales = model.scales;
        m.init_seed = seed_for("segnet/init");
        return m;
    }

    segnet::TrainConfig train_config(int stage) const {
        const auto& sp = stage == 1 ? train.stage1 : train.stage2;
        segnet::TrainConfig c;
        c.stage = stage;
        c.learning_rate = sp.learning_rate;
        c.batch_size = sp.batch_size;
        c.epochs = sp.epochs;
        c.overlap_rate = train.overlap_rate;
        c.scale_factors = train.scale_factors;
        c.seed = seed_for("train-seg/stage" + std::to_string(stage));
        c.color = train.color;
        c.losses = train.losses;
        return c;
    }

    segnet::InferOptions infer_options(bool tokens = false) const {
        segnet::InferOptions o;
        o.overlap_rate = infer.overlap_rate;
        o.collect_tokens = tokens;
        return o;
    }

    forest::ForestConfig forest_config() const {
        return {forest.n_trees, forest.mtry, forest.max_depth, forest.min_leaf, seed_for("forest")};
    }

    stitch::PathSpec path_spec() const {
        return {stitch.field_width, stitch.field_height, stitch.cols, stitch.rows, stitch.overlap, 0, 0};
    }
    stitch::JitterSpec jitter_spec() const {
        return {stitch.jitter_px, 1.0 - stitch.gain_jitter, 1.0 + stitch.gain_jitter, 1.0 - stitch.gamma_jitter,
                1.0 + stitch.gamma_jitter};
    }
    stitch::RegisterOptions register_options() const { return {stitch.min_confidence, 1e-6, stitch.taper}; }

    evolve::FusionConfig fusion_config() const { return {evolve.alpha, evolve::parse_scope(evolve.scope)}; }
    segnet::TrainConfig update_config() const {
        auto c = evolve::default_update_config(seed_for("online-update"));
        c.learning_rate = evolve.learning_rate;
        c.epochs = evolve.epochs;
        c.batch_size = evolve.batch_size;
        c.overlap_rate = train.overlap_rate;
        c.scale_factors = train.scale_factors;
        c.losses = train.losses;
        return c;
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Paths, workdir, manifest, checkpoint, corpus)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, train_slides, test_slides, holdout_slides, width, height,
                                                stage1_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelSection, patch_size, downsample, token_size, embed_dim, blocks,
                                                pixel_features, scales)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StageParams, learning_rate, batch_size, epochs)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainSection, overlap_rate, scale_factors, stage1, stage2, color, losses)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InferSection, overlap_rate, threshold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FeatureSection, pca_max_tokens)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ForestSection, n_trees, mtry, max_depth, min_leaf)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StitchSection, field_width, field_height, cols, rows, overlap, jitter_px,
                                                gain_jitter, gamma_jitter, min_confidence, taper)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvolveSection, alpha, scope, tolerance, learning_rate, epochs, batch_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ReportSection, top_k, patient)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, seed, paths, data, model, train, infer, features, forest,
                                                stitch, evolve, report)

inline void RunConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("config: " + what);
    };
    need(data.train_slides >= 2, "data.train_slides must be >= 2");
    need(data.test_slides >= 1, "data.test_slides must be >= 1");
    need(data.holdout_slides >= 0, "data.holdout_slides must be >= 0");
    need(data.stage1_fraction > 0.0 && data.stage1_fraction < 1.0, "data.stage1_fraction must lie in (0, 1)");
    need(data.width >= model.patch_size && data.height >= model.patch_size, "data.width/height must be >= model.patch_size");
    need(train.overlap_rate >= 0.0 && train.overlap_rate < 1.0, "train.overlap_rate must lie in [0, 1)");
    need(infer.overlap_rate >= 0.0 && infer.overlap_rate < 1.0, "infer.overlap_rate must lie in [0, 1)");
    need(infer.threshold > 0.0 && infer.threshold < 1.0, "infer.threshold must lie in (0, 1)");
    need(features.pca_max_tokens >= 3, "features.pca_max_tokens must be >= 3");
    need(evolve.alpha >= 0.0 && evolve.alpha <= 1.0, "evolve.alpha must lie in [0, 1]");
    need(evolve.tolerance >= 0.0, "evolve.tolerance must be >= 0");
    need(report.top_k >= 0, "report.top_k must be >= 0");
    need(forest.n_trees >= 1, "forest.n_trees must be >= 1");
    try {
        model_config().validate();
        train_config(1).validate();
        train_config(2).validate();
        evolve::parse_scope(evolve.scope);
    } catch (const ContractError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Merging and overrides

namespace detail {

inline std::string kind(const Json& j) {
    if (j.is_object()) return "object";
    if (j.is_array()) return "array";
    if (j.is_string()) return "string";
    if (j.is_boolean()) return "boolean";
    if (j.is_number()) return "number";
    return "null";
}

inline void strict_merge(Json& base, const Json& patch, const std::string& where) {
    if (!patch.is_object()) throw ConfigError("config: " + (where.empty() ? std::string("document") : where) + " must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
        auto& slot = base[key];
        if (slot.is_object()) {
            strict_merge(slot, value, path);
            continue;
        }
        const bool same = kind(slot) == kind(value);
        if (!same) throw ConfigError("config: '" + path + "' expects " + kind(slot) + ", got " + kind(value));
        if (slot.is_number_integer() && !value.is_number_integer())
            throw ConfigError("config: '" + path + "' expects an integer");
        if (slot.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0)
            throw ConfigError("config: '" + path + "' must be non-negative");
        slot = value;
    }
}

} // namespace detail

inline Json to_document(const RunConfig& c) { return Json(nlohmann::json(c)); }

inline RunConfig from_document(const Json& doc, const RunConfig& defaults = {}) {
    Json base = to_document(defaults);
    detail::strict_merge(base, doc, "");
    RunConfig c;
    try {
        c = nlohmann::json(base).get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

/// `a.b.c=value`: value parsed as JSON when possible, otherwise taken as a string.
inline Json override_patch(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key.path=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    Json patch = value;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) {
        if (p.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
        parts.push_back(p);
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
    return patch;
}

/// Defaults <- config file <- overrides, in that order.
inline RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides,
                             const RunConfig& defaults = {}) {
    Json merged = to_document(defaults);
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw PreconditionError("cannot open config file " + file.string());
        Json doc;
        try {
            doc = Json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + file.string() + ": " + e.what());
        }
        detail::strict_merge(merged, doc, "");
    }
    for (const auto& o : overrides) detail::strict_merge(merged, override_patch(o), "");
    return from_document(merged, defaults);
}

inline std::string config_hash(const RunConfig& c) { return sha256_hex(to_document(c).dump()); }

} // namespace gtd::pipeline
