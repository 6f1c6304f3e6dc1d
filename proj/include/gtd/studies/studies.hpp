#pragma once

// Ablation harnesses at desk scale: patch overlap during training, single vs
// multi-scale training, and direct inference vs a simulated microscope scan
// stitched into a mosaic. Published numbers are carried as annotations only.

#include <charconv>
#include <chrono>
#include <iomanip>

#include "gtd/pipeline/stages.hpp"

namespace gtd::studies {

using pipeline::Json;
using pipeline::RunConfig;
namespace fs = std::filesystem;

/// Defaults for studies: small slides and patches so every condition trains in
/// well under a minute on one core.
inline RunConfig desk_preset() {
    RunConfig c;
    c.paths.workdir = "gtd-study";
    c.data.train_slides = 12;
    c.data.test_slides = 6;
    c.data.holdout_slides = 0;
    c.data.width = 512;
    c.data.height = 512;
    c.data.stage1_fraction = 0.5;
    c.model.patch_size = 256;
    c.train.stage1.learning_rate = 0.15;  // 0.3 diverges at this patch size with no overlap
    c.stitch.field_width = 256;
    c.stitch.field_height = 256;
    return c;
}

// ---------------------------------------------------------------------------
// Config comparison

inline void flatten(const Json& j, const std::string& prefix, std::map<std::string, Json>& out) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    } else {
        out[prefix] = j;
    }
}

/// Dotted paths whose values differ between two serialized configs.
inline std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
    std::map<std::string, Json> fa, fb;
    flatten(pipeline::to_document(a), "", fa);
    flatten(pipeline::to_document(b), "", fb);
    std::vector<std::string> out;
    for (const auto& [k, v] : fa)
        if (!fb.count(k) || fb[k] != v) out.push_back(k);
    for (const auto& [k, _] : fb)
        if (!fa.count(k)) out.push_back(k);
    return out;
}

// ---------------------------------------------------------------------------
// Shared state for a study session

/// Dataset and trained models shared across studies run in one session.
/// Models are keyed by config hash, so identical conditions train once.
class StudyContext {
public:
    // Studies never touch the filesystem paths; resetting them keeps reports
    // independent of where they are written.
    explicit StudyContext(RunConfig base, std::ostream* log = &std::clog)
        : base_(without_paths(std::move(base))), log_(log), data_(pipeline::generate_dataset(base_)) {}

    const RunConfig& base() const { return base_; }
    const pipeline::Dataset& data() const { return data_; }
    std::ostream* log() const { return log_; }

    struct Trained {
        segnet::SegModelParams params;
        double seconds = 0.0;
    };

    const Trained& model(const RunConfig& cfg) {
        const auto key = pipeline::config_hash(cfg);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        if (log_) *log_ << "[study] training condition " << key.substr(0, 12) << "\n";
        const auto t0 = std::chrono::steady_clock::now();
        auto r = pipeline::train_two_stage(cfg, data_.split("stage1"), data_.split("stage2"));
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return cache_.emplace(key, Trained{std::move(r.params), s}).first->second;
    }

private:
    static RunConfig without_paths(RunConfig c) {
        c.paths = {};
        return c;
    }

    RunConfig base_;
    std::ostream* log_;
    pipeline::Dataset data_;
    std::map<std::string, Trained> cache_;
};

inline Json dataset_json(const pipeline::Dataset& d) {
    Json rows = Json::array();
    for (const auto& r : d.records) rows.push_back({{"id", r.id}, {"split", r.split}, {"class", r.class_label}, {"seed", r.seed}});
    return rows;
}

inline Json condition_seeds(const RunConfig& c) {
    return {{"master", c.seed},
            {"init", c.model_config().init_seed},
            {"stage1", c.train_config(1).seed},
            {"stage2", c.train_config(2).seed}};
}

inline Json seg_summary(const eval::SegEvaluation& ev) {
    Json j;
    for (std::size_t c = 1; c < 4; ++c) j[eval::kSegClasses[c] + "_iou"] = ev.pooled_metrics(c).iou;
    const auto m = ev.macro(false);
    j["miou"] = m.iou;
    j["mdice"] = m.dice;
    j["mprecision"] = m.precision;
    j["mrecall"] = m.recall;
    return j;
}

// ---------------------------------------------------------------------------
// Reports

struct StudyOutput {
    Json report;
    std::string table;
    Json timing;
};

inline std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}
inline std::string fixed(const Json& v) { return fixed(v.get<double>()); }

inline std::string shortest(double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

/// Left-aligned first column, right-aligned others.
inline std::string text_table(const std::vector<std::string>& head, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> w(head.size(), 0);
    for (std::size_t c = 0; c < head.size(); ++c) {
        w[c] = head[c].size();
        for (const auto& r : rows) w[c] = std::max(w[c], r[c].size());
    }
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c) os << "  ";
            if (c == 0)
                os << std::left << std::setw(static_cast<int>(w[c])) << r[c];
            else
                os << std::right << std::setw(static_cast<int>(w[c])) << r[c];
        }
        os << "\n";
    };
    line(head);
    std::size_t total = 0;
    for (auto x : w) total += x;
    os << std::string(total + 2 * (w.size() - 1), '-') << "\n";
    for (const auto& r : rows) line(r);
    return os.str();
}

/// Writes <dir>/<name>.json, <name>.txt and the wall-clock sidecar <name>.timing.json.
inline void write_study(const fs::path& dir, const std::string& name, const StudyOutput& out) {
    pipeline::write_text(dir / (name + ".json"), out.report.dump(2) + "\n");
    pipeline::write_text(dir / (name + ".txt"), out.table);
    pipeline::write_text(dir / (name + ".timing.json"), out.timing.dump(2) + "\n");
}

using Sink = std::function<void(const StudyOutput&)>;

/// Single-knob sweep over training configs. `apply` sets the knob on a copy of
/// the base config. The report is re-emitted through `sink` after every
/// condition, flagged incomplete until the last one finishes.
template <class Value>
StudyOutput knob_study(StudyContext& ctx, const std::string& name, const std::string& knob,
                       const std::vector<Value>& values, const std::function<void(RunConfig&, const Value&)>& apply,
                       const std::function<std::string(const Value&)>& label, const Json& reference,
                       const Sink& sink = {}) {
    StudyOutput out;
    out.report["study"] = name;
    out.report["complete"] = false;
    out.report["knob"] = knob;
    out.report["base_config_sha256"] = pipeline::config_hash(ctx.base());
    out.report["dataset"] = dataset_json(ctx.data());
    out.report["conditions"] = Json::array();
    out.report["reference"] = reference;
    out.timing = {{"study", name}, {"conditions", Json::array()}};

    std::vector<RunConfig> cfgs;
    std::vector<std::vector<std::string>> rows;
    for (const auto& v : values) {
        RunConfig c = ctx.base();
        apply(c, v);
        c.validate();
        cfgs.push_back(c);
    }
    std::set<std::string> differing;
    for (std::size_t i = 1; i < cfgs.size(); ++i)
        for (auto& k : config_diff(cfgs[0], cfgs[i])) differing.insert(k);
    out.report["differing_fields"] = differing;

    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        const auto& trained = ctx.model(cfgs[i]);
        const auto t0 = std::chrono::steady_clock::now();
        const auto ev = pipeline::evaluate(trained.params, ctx.data().split("test"), cfgs[i]);
        const double eval_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        Json cond;
        cond["label"] = label(values[i]);
        cond["value"] = values[i];
        cond["config_sha256"] = pipeline::config_hash(cfgs[i]);
        cond["config"] = pipeline::to_document(cfgs[i]);
        cond["seeds"] = condition_seeds(cfgs[i]);
        cond["metrics"] = seg_summary(ev);
        out.report["conditions"].push_back(cond);
        out.timing["conditions"].push_back({{"label", label(values[i])}, {"train_seconds", trained.seconds},
                                            {"eval_seconds", eval_s}});
        const auto& m = cond["metrics"];
        rows.push_back({label(values[i]), fixed(m["miou"]), fixed(m["villi_iou"]), fixed(m["edema_iou"]),
                        fixed(m["hyperplasia_iou"]), fixed(m["mprecision"])});
        const bool complete = i + 1 == cfgs.size();
        out.report["complete"] = complete;
        out.table = name + " study (" + knob + ")" + (complete ? "" : " [INCOMPLETE]") + "\n" +
                    text_table({knob, "mIoU", "villi IoU", "edema IoU", "hyperplasia IoU", "mPrecision"}, rows);
        if (sink) sink(out);
    }
    return out;
}

inline const std::vector<double> kOverlapRates{0.0, 0.25, 0.5, 0.75};

inline StudyOutput overlap_study(StudyContext& ctx, const Sink& sink = {}) {
    const Json ref{{"note", "published values on a private cohort; context only, never compared"},
                   {"miou_at_0pct", 0.815},
                   {"miou_at_75pct", 0.856}};
    return knob_study<double>(
        ctx, "overlap", "train.overlap_rate", kOverlapRates, [](RunConfig& c, const double& v) { c.train.overlap_rate = v; },
        [](const double& v) { return std::to_string(static_cast<int>(std::lround(v * 100))) + "%"; }, ref, sink);
}

inline StudyOutput scale_study(StudyContext& ctx, const Sink& sink = {}) {
    const Json ref{{"note", "published values on a private cohort; context only, never compared"},
                   {"miou_single_scale", 0.815},
                   {"miou_multi_scale", 0.863}};
    const std::vector<std::vector<double>> conds{{1.0}, {1.0, 1.2, 0.8}};
    auto out = knob_study<std::vector<double>>(
        ctx, "scale", "train.scale_factors", conds,
        [](RunConfig& c, const std::vector<double>& v) { c.train.scale_factors = v; },
        [](const std::vector<double>& v) {
            std::string s = "[";
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + shortest(v[i]);
            return s + "]";
        },
        ref, sink);
    const auto& cs = out.report["conditions"];
    const double diff = cs[1]["metrics"]["miou"].get<double>() - cs[0]["metrics"]["miou"].get<double>();
    out.report["miou_difference_multi_minus_single"] = diff;
    out.table += "multi - single mIoU: " + fixed(diff) + "\n";
    if (sink) sink(out);
    return out;
}

// ---------------------------------------------------------------------------
// Microscope mode

struct ScopeSession {
    Json stats;
    eval::SegEvaluation direct, mosaic;
};

/// Places the mosaic on a slide-sized canvas (uncovered pixels take the mean
/// covered colour) and registers it against the slide.
inline stitch::StitchTransform register_mosaic(const slideio::SlideImage& slide, const slideio::SlideImage& mosaic,
                                               const slideio::Plane<std::int32_t>& counts,
                                               const stitch::RegisterOptions& opt) {
    double mean[3] = {0, 0, 0};
    std::int64_t n = 0;
    for (int y = 0; y < mosaic.height; ++y)
        for (int x = 0; x < mosaic.width; ++x)
            if (counts(x, y)) {
                for (int c = 0; c < 3; ++c) mean[c] += mosaic.px(x, y)[c];
                ++n;
            }
    slideio::SlideImage canvas(slide.width, slide.height);
    for (int y = 0; y < slide.height; ++y)
        for (int x = 0; x < slide.width; ++x) {
            const bool have = x < mosaic.width && y < mosaic.height && counts(x, y);
            for (int c = 0; c < 3; ++c)
                canvas.px(x, y)[c] = have ? mosaic.px(x, y)[c] : static_cast<std::uint8_t>(std::lround(mean[c] / std::max<std::int64_t>(n, 1)));
        }
    return stitch::register_frames(slide, canvas, opt);
}

inline ScopeSession scope_session(const segnet::TrainingSlide& s, const segnet::SegModelParams& p, const RunConfig& cfg,
                                  const stitch::JitterSpec& jitter, std::uint64_t seed) {
    ScopeSession out;
    const auto opt = cfg.infer_options();
    const auto direct = segnet::infer_slide(s.image, p, opt);

    const auto vp = stitch::simulate_viewport(s.image, cfg.path_spec(), jitter, seed);
    stitch::StitchSession session(0, cfg.register_options());
    for (const auto& f : vp.frames) session.append(f);
    const auto& mos = session.mosaic();
    const auto mrgb = mos.rgb();
    const auto counts = mos.counts();
    if (mrgb.width < cfg.model.patch_size || mrgb.height < cfg.model.patch_size)
        throw ContractError("scope study: mosaic smaller than one model patch");
    const auto mp = segnet::infer_slide(mrgb, p, opt);
    const auto reg = register_mosaic(s.image, mrgb, counts, cfg.register_options());

    // mosaic pixel (mx, my) sits at slide (mx + ix, my + iy)
    slideio::BinaryMask region(s.image.width, s.image.height);
    slideio::ProbMap mv(s.image.width, s.image.height), me(s.image.width, s.image.height), mh(s.image.width, s.image.height);
    for (int my = 0; my < mrgb.height; ++my)
        for (int mx = 0; mx < mrgb.width; ++mx) {
            const int x = mx + reg.ix, y = my + reg.iy;
            if (!counts(mx, my) || x < 0 || y < 0 || x >= s.image.width || y >= s.image.height) continue;
            region(x, y) = 1;
            mv(x, y) = mp.villi(mx, my);
            me(x, y) = mp.edema(mx, my);
            mh(x, y) = mp.hyperplasia(mx, my);
        }
    auto restrict_to = [&](std::array<slideio::BinaryMask, 4> m) {
        for (auto& plane : m)
            for (std::size_t i = 0; i < plane.size(); ++i) plane.data[i] = plane.data[i] && region.data[i];
        return m;
    };
    const auto truth = restrict_to(eval::truth_masks(s.mask));
    out.direct.add(s.id, restrict_to(eval::predicted_masks(direct.villi, direct.edema, direct.hyperplasia, cfg.infer.threshold)), truth);
    out.mosaic.add(s.id, restrict_to(eval::predicted_masks(mv, me, mh, cfg.infer.threshold)), truth);

    std::int64_t covered = 0;
    for (auto v : region.data) covered += v;
    auto summary = pipeline::session_summary(session);
    summary["slide_id"] = s.id;
    summary["registration"] = {{"ix", reg.ix}, {"iy", reg.iy}, {"confidence", reg.confidence},
                               {"expected_x", vp.frames.front().true_x + mos.x0()},
                               {"expected_y", vp.frames.front().true_y + mos.y0()}};
    summary["evaluated_pixels"] = covered;
    summary["viewport_warning"] = vp.warning;
    out.stats = summary;
    return out;
}

inline void merge(eval::SegEvaluation& into, const eval::SegEvaluation& from) {
    for (const auto& s : from.slides) {
        into.slides.push_back(s);
        for (std::size_t c = 0; c < 4; ++c) into.pooled[c] += s.counts[c];
    }
}

/// Direct slide inference vs viewport -> stitch -> inference on the mosaic,
/// both scored on the same slide pixels, once without and once with jitter.
inline StudyOutput scope_study(StudyContext& ctx, const Sink& sink = {}) {
    const auto& cfg = ctx.base();
    const auto& trained = ctx.model(cfg);
    StudyOutput out;
    out.report["study"] = "scope";
    out.report["complete"] = false;
    out.report["config_sha256"] = pipeline::config_hash(cfg);
    out.report["dataset"] = dataset_json(ctx.data());
    out.report["path"] = {{"field_width", cfg.stitch.field_width}, {"field_height", cfg.stitch.field_height},
                          {"cols", cfg.stitch.cols}, {"rows", cfg.stitch.rows}, {"overlap", cfg.stitch.overlap}};
    out.report["conditions"] = Json::array();
    out.report["reference"] = {{"note", "published values on a private cohort; context only, never compared"},
                               {"mprecision_direct", 0.969},
                               {"mprecision_microscope", 0.825}};
    out.timing = {{"study", "scope"}, {"train_seconds", trained.seconds}, {"conditions", Json::array()}};

    std::vector<std::vector<std::string>> rows;
    const std::vector<std::pair<std::string, stitch::JitterSpec>> conds{{"none", stitch::JitterSpec::none()},
                                                                       {"typical", cfg.jitter_spec()}};
    for (std::size_t k = 0; k < conds.size(); ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        eval::SegEvaluation direct, mosaic;
        Json sessions = Json::array();
        for (const auto& s : ctx.data().split("test")) {
            auto r = scope_session(s, trained.params, cfg, conds[k].second,
                                   cfg.seed_for("scope-study/" + conds[k].first + "/" + s.id));
            merge(direct, r.direct);
            merge(mosaic, r.mosaic);
            sessions.push_back(r.stats);
        }
        const auto d = seg_summary(direct), m = seg_summary(mosaic);
        Json cond{{"jitter", conds[k].first},
                  {"jitter_spec", {{"offset_px", conds[k].second.offset_px},
                                   {"gain", {conds[k].second.gain_lo, conds[k].second.gain_hi}},
                                   {"gamma", {conds[k].second.gamma_lo, conds[k].second.gamma_hi}}}},
                  {"direct", d},
                  {"mosaic", m},
                  {"delta_miou", m["miou"].get<double>() - d["miou"].get<double>()},
                  {"delta_mprecision", m["mprecision"].get<double>() - d["mprecision"].get<double>()},
                  {"sessions", sessions}};
        out.report["conditions"].push_back(cond);
        out.timing["conditions"].push_back(
            {{"jitter", conds[k].first},
             {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
        std::size_t accepted = 0, frames = 0;
        for (const auto& s : sessions) {
            accepted += s["accepted"].get<std::size_t>();
            frames += s["frames"].get<std::size_t>();
        }
        rows.push_back({conds[k].first, fixed(d["miou"]), fixed(m["miou"]), fixed(cond["delta_miou"]),
                        fixed(d["mprecision"]), fixed(m["mprecision"]), fixed(cond["delta_mprecision"]),
                        std::to_string(accepted) + "/" + std::to_string(frames)});
        const bool complete = k + 1 == conds.size();
        out.report["complete"] = complete;
        out.table = std::string("scope study (direct vs mosaic)") + (complete ? "" : " [INCOMPLETE]") + "\n" +
                    text_table({"jitter", "direct mIoU", "mosaic mIoU", "delta", "direct mPrec", "mosaic mPrec", "delta",
                                "frames accepted"},
                               rows);
        if (sink) sink(out);
    }
    return out;
}

} // namespace gtd::studies
