#pragma once

// In-memory building blocks shared by the disk stages and the studies.

#include <cstdio>

#include "gtd/evalmetrics/metrics.hpp"
#include "gtd/features/features.hpp"
#include "gtd/numerics/pca.hpp"
#include "gtd/pipeline/config.hpp"
#include "gtd/segnet/train.hpp"
#include "gtd/slideio/generator.hpp"
#include "gtd/slideio/manifest.hpp"

namespace gtd::pipeline {

inline const std::array<std::string, 4> kSplits{"stage1", "stage2", "test", "holdout"};

inline std::string slide_name(const std::string& prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03d", prefix.c_str(), i);
    return buf;
}

/// Slide records for a synthetic dataset: training slides first (the leading
/// stage1_fraction go to stage 1), then test and holdout. Class = index mod 3.
/// Each slide seed is seed_for("gen/<id>").
inline std::vector<slideio::ManifestRecord> plan_dataset(const RunConfig& cfg) {
    std::vector<slideio::ManifestRecord> recs;
    const int n1 = std::clamp(static_cast<int>(std::lround(cfg.data.train_slides * cfg.data.stage1_fraction)), 1,
                              cfg.data.train_slides - 1);
    auto add = [&](const std::string& prefix, int n, auto split_of) {
        for (int i = 0; i < n; ++i) {
            slideio::ManifestRecord r;
            r.id = slide_name(prefix, i);
            r.image_path = r.id + ".ppm";
            r.mask_path = r.id + "_mask.pgm";
            r.class_label = i % 3;
            r.split = split_of(i);
            r.seed = cfg.seed_for("gen/" + r.id);
            recs.push_back(std::move(r));
        }
    };
    add("train", cfg.data.train_slides, [&](int i) { return std::string(i < n1 ? "stage1" : "stage2"); });
    add("test", cfg.data.test_slides, [](int) { return std::string("test"); });
    add("holdout", cfg.data.holdout_slides, [](int) { return std::string("holdout"); });
    return recs;
}

inline slideio::GeneratedSlide generate(const RunConfig& cfg, const slideio::ManifestRecord& r) {
    return slideio::generate_slide(slideio::SlideSpec::defaults(r.class_label, r.seed, cfg.data.width, cfg.data.height));
}

struct Dataset {
    std::map<std::string, std::vector<segnet::TrainingSlide>> splits;
    std::vector<slideio::ManifestRecord> records;

    const std::vector<segnet::TrainingSlide>& split(const std::string& name) const {
        static const std::vector<segnet::TrainingSlide> none;
        auto it = splits.find(name);
        return it == splits.end() ? none : it->second;
    }
};

inline Dataset generate_dataset(const RunConfig& cfg) {
    Dataset d;
    d.records = plan_dataset(cfg);
    for (const auto& r : d.records) {
        auto g = generate(cfg, r);
        d.splits[r.split].push_back({r.id, std::move(g.image), std::move(g.mask)});
    }
    return d;
}

using EpochHook = std::function<void(const segnet::EpochLog&)>;

/// Stage 1 on `stage1`, then stage 2 on `stage2`, from the config's init seed.
inline segnet::TrainResult train_two_stage(const RunConfig& cfg, const std::vector<segnet::TrainingSlide>& stage1,
                                           const std::vector<segnet::TrainingSlide>& stage2, const EpochHook& hook = {}) {
    auto r1 = segnet::train(stage1, segnet::init_params(cfg.model_config()), cfg.train_config(1), hook);
    auto r2 = segnet::train(stage2, r1.params, cfg.train_config(2), hook);
    r1.log.insert(r1.log.end(), r2.log.begin(), r2.log.end());
    return {std::move(r2.params), std::move(r1.log)};
}

inline eval::SegEvaluation evaluate(const segnet::SegModelParams& p, const std::vector<segnet::TrainingSlide>& slides,
                                    const RunConfig& cfg) {
    eval::SegEvaluation ev;
    for (const auto& s : slides) {
        const auto pred = segnet::infer_slide(s.image, p, cfg.infer_options());
        ev.add(s.id, eval::predicted_masks(pred.villi, pred.edema, pred.hyperplasia, cfg.infer.threshold),
               eval::truth_masks(s.mask));
    }
    return ev;
}

/// Pooled per-class metrics plus both macro means and the per-slide table.
inline Json evaluation_json(const eval::SegEvaluation& ev, double threshold) {
    Json j;
    j["threshold"] = threshold;
    j["slides"] = ev.slides.size();
    Json pooled = Json::object(), mean = Json::object();
    for (std::size_t c = 0; c < 4; ++c) {
        Json m = eval::to_json(ev.pooled_metrics(c));
        m["counts"] = eval::to_json(ev.pooled[c]);
        pooled[eval::kSegClasses[c]] = m;
        mean[eval::kSegClasses[c]] = eval::to_json(ev.slide_mean(c));
    }
    j["pooled"] = pooled;
    j["macro_foreground"] = eval::to_json(ev.macro(false));
    j["macro_with_background"] = eval::to_json(ev.macro(true));
    j["slide_mean"] = mean;
    Json per = Json::array();
    for (const auto& s : ev.slides) {
        Json row{{"id", s.id}};
        for (std::size_t c = 0; c < 4; ++c) row[eval::kSegClasses[c]] = eval::to_json(s.metrics[c]);
        per.push_back(row);
    }
    j["per_slide"] = per;
    return j;
}

inline std::string evaluation_table(const eval::SegEvaluation& ev) {
    std::vector<std::pair<std::string, eval::ClassMetrics>> rows;
    for (std::size_t c = 0; c < 4; ++c) rows.push_back({eval::kSegClasses[c], ev.pooled_metrics(c)});
    rows.push_back({"mean (foreground)", ev.macro(false)});
    rows.push_back({"mean (with background)", ev.macro(true)});
    return eval::format_table(rows);
}

// ---------------------------------------------------------------------------
// Features

/// Covered token rows of several grids, evenly strided down to `max_rows`.
inline num::Tensor pca_sample(const std::vector<segnet::TokenGrid>& grids, std::size_t max_rows) {
    std::size_t total = 0;
    int dim = 0;
    for (const auto& g : grids) {
        total += g.covered_count();
        dim = g.dim;
    }
    if (total < 3) throw PreconditionError("features: fewer than 3 training tokens to fit the PCA");
    const std::size_t stride = (total + max_rows - 1) / max_rows;
    num::Tensor out = num::Tensor::matrix(static_cast<std::int64_t>((total + stride - 1) / stride), dim);
    std::size_t seen = 0, row = 0;
    for (const auto& g : grids)
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) {
                if (!g.covered(r, c)) continue;
                if (seen++ % stride) continue;
                std::copy(g.at(r, c), g.at(r, c) + dim, &out.data()[row++ * static_cast<std::size_t>(dim)]);
            }
    return out;
}

inline features::FeatureVector slide_features(const std::string& id, const slideio::ProbMap& villi,
                                              const slideio::ProbMap& edema, const slideio::ProbMap& hyper,
                                              const segnet::TokenGrid& tokens, const num::PcaModel& pca, int downsample,
                                              double threshold) {
    const auto labels = features::predicted_labels(villi, edema, hyper, downsample, threshold);
    const auto manual = features::manual_features(labels, features::lesion_components(labels));
    return features::assemble(id, manual, features::heatmap_features(features::project_heatmap(tokens, pca)));
}

} // namespace gtd::pipeline
