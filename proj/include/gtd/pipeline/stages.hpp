#pragma once

// Disk stages behind the CLI subcommands. Layout under the workdir:
//
//   data/       manifest.jsonl, <id>.ppm, <id>_mask.pgm           gen
//   tiles/      <id>.json                                         tile
//   models/     seg_stage{1,2}.gtck + _log.jsonl, pca.gtck, forest.gtck
//   infer/      <id>_{villi,edema,hyperplasia}.pgm (16-bit), <id>_labels.pgm, <id>_tokens.gtck
//   eval/       metrics.json, metrics.txt                          eval-seg
//   features/   features.csv                                      features
//   diagnose/   diagnoses.jsonl, confusion.json                   diagnose
//   reports/    <id>.txt, <id>.json                                report
//   scope/<id>/ frame_NNN.ppm, frames.jsonl, viewport.json         simulate-scope
//   stitch/<id>/ mosaic.ppm, log.jsonl, summary.json               stitch
//   online/     fused.gtck, active.gtck, update_log.jsonl, audit.jsonl
//   manifests/  <stage>.json run manifests

#include "gtd/checkpoint.hpp"
#include "gtd/evolve/evolve.hpp"
#include "gtd/pipeline/compute.hpp"
#include "gtd/pipeline/runtime.hpp"
#include "gtd/reportkit/report.hpp"
#include "gtd/slideio/pnm.hpp"
#include "gtd/slideio/tiling.hpp"
#include "gtd/stitcher/stitcher.hpp"

#ifndef GTD_SOURCE_DIR
#define GTD_SOURCE_DIR ""
#endif

namespace gtd::pipeline {

// ---------------------------------------------------------------------------
// Paths and small readers

struct Layout {
    fs::path root;
    explicit Layout(const RunConfig& c) : root(c.workdir()) {}
    fs::path dir(const std::string& d) const { return root / d; }
    fs::path seg(int stage) const { return root / "models" / ("seg_stage" + std::to_string(stage) + ".gtck"); }
    fs::path seg_log(int stage) const { return root / "models" / ("seg_stage" + std::to_string(stage) + "_log.jsonl"); }
    fs::path pca() const { return root / "models" / "pca.gtck"; }
    fs::path forest() const { return root / "models" / "forest.gtck"; }
    fs::path map(const std::string& id, const std::string& what) const { return root / "infer" / (id + "_" + what + ".pgm"); }
    fs::path tokens(const std::string& id) const { return root / "infer" / (id + "_tokens.gtck"); }
    fs::path features() const { return root / "features" / "features.csv"; }
    fs::path diagnoses() const { return root / "diagnose" / "diagnoses.jsonl"; }
};

inline std::vector<slideio::ManifestRecord> load_manifest(const RunConfig& cfg, StageRun& run) {
    const auto path = cfg.manifest_path();
    require_file(path, "run `gtd gen` first or set paths.manifest");
    run.input(path);
    return slideio::read_manifest(path);
}

inline bool in_splits(const slideio::ManifestRecord& r, std::initializer_list<const char*> splits) {
    for (const char* s : splits)
        if (r.split == s) return true;
    return false;
}

inline segnet::TrainingSlide load_slide(const RunConfig& cfg, const slideio::ManifestRecord& r, StageRun& run,
                                        bool need_mask = true) {
    const auto img = slideio::resolve(cfg.manifest_path(), r.image_path);
    run.input(img);
    segnet::TrainingSlide s{r.id, slideio::read_ppm(img), {}};
    if (need_mask) {
        if (r.mask_path.empty()) throw PreconditionError("slide " + r.id + " has no mask_path");
        const auto m = slideio::resolve(cfg.manifest_path(), r.mask_path);
        run.input(m);
        s.mask = slideio::read_pgm(m);
        if (s.mask.width != s.image.width || s.mask.height != s.image.height)
            throw ContractError("slide " + r.id + ": mask and image dims differ");
    }
    return s;
}

inline segnet::SegModelParams load_checkpoint(const fs::path& p, StageRun& run, const std::string& hint) {
    require_file(p, hint);
    run.input(p);
    return segnet::load_params(p);
}

// Token grids: four header floats, then values and counts as float32.
inline void save_tokens(const fs::path& p, const segnet::TokenGrid& g) {
    std::vector<float> vals(g.values.begin(), g.values.end()), counts(g.counts.begin(), g.counts.end());
    ckpt::save(p, {{"tokens.shape", {4}, {float(g.rows), float(g.cols), float(g.dim), float(g.cell_px)}},
                   {"tokens.values", {std::uint32_t(g.values.size())}, std::move(vals)},
                   {"tokens.counts", {std::uint32_t(g.counts.size())}, std::move(counts)}});
}

inline segnet::TokenGrid load_tokens(const fs::path& p) {
    const auto recs = ckpt::load(p);
    const auto& s = ckpt::find(recs, "tokens.shape").payload;
    if (s.size() != 4) throw CheckpointError(CheckpointError::Kind::Corrupt, "token grid: bad shape record");
    segnet::TokenGrid g(static_cast<int>(s[0]), static_cast<int>(s[1]), static_cast<int>(s[2]), static_cast<int>(s[3]));
    const auto& v = ckpt::find(recs, "tokens.values").payload;
    const auto& c = ckpt::find(recs, "tokens.counts").payload;
    if (v.size() != g.values.size() || c.size() != g.counts.size())
        throw CheckpointError(CheckpointError::Kind::Corrupt, "token grid: payload size mismatch");
    std::copy(v.begin(), v.end(), g.values.begin());
    for (std::size_t i = 0; i < c.size(); ++i) g.counts[i] = static_cast<int>(c[i]);
    return g;
}

inline void save_pca(const fs::path& p, const num::PcaModel& m) {
    ckpt::save(p, {{"pca.components", {std::uint32_t(m.components.rows()), std::uint32_t(m.components.cols()), 4},
                    ckpt::pack_f64(m.components.data())},
                   {"pca.means", {std::uint32_t(m.means.size()), 4}, ckpt::pack_f64(m.means)},
                   {"pca.variances", {std::uint32_t(m.variances.size()), 4}, ckpt::pack_f64(m.variances)},
                   {"pca.total", {1, 4}, ckpt::pack_f64({m.total_variance})}});
}

inline num::PcaModel load_pca(const fs::path& p) {
    const auto recs = ckpt::load(p);
    num::PcaModel m;
    const auto& c = ckpt::find(recs, "pca.components");
    if (c.dims.size() != 3) throw CheckpointError(CheckpointError::Kind::Corrupt, "pca: bad component dims");
    m.components = num::Tensor::matrix(c.dims[0], c.dims[1]);
    const auto comps = ckpt::unpack_f64(c.payload);
    if (comps.size() != m.components.data().size()) throw CheckpointError(CheckpointError::Kind::Corrupt, "pca: size");
    std::copy(comps.begin(), comps.end(), m.components.data().begin());
    m.means = ckpt::unpack_f64(ckpt::find(recs, "pca.means").payload);
    m.variances = ckpt::unpack_f64(ckpt::find(recs, "pca.variances").payload);
    m.total_variance = ckpt::unpack_f64(ckpt::find(recs, "pca.total").payload).at(0);
    return m;
}

/// A relative corpus path that does not exist under the current directory is
/// looked up in the source tree the binary was built from.
inline fs::path resolve_corpus(const RunConfig& cfg) {
    const fs::path p(cfg.paths.corpus);
    if (p.is_absolute() || fs::exists(p / "index.jsonl")) return p;
    const fs::path shipped = fs::path(GTD_SOURCE_DIR) / p;
    if (!std::string_view(GTD_SOURCE_DIR).empty() && fs::exists(shipped / "index.jsonl")) return shipped;
    return p;
}

inline std::string jsonl(const std::vector<Json>& rows) {
    std::string s;
    for (const auto& r : rows) s += r.dump() + "\n";
    return s;
}

inline EpochHook epoch_printer(const StageOptions& opt, const std::string& tag) {
    if (!opt.log) return {};
    return [log = opt.log, tag](const segnet::EpochLog& e) {
        *log << "[" << tag << "] stage " << e.stage << " " << e.network << " epoch " << e.epoch << " loss "
             << e.loss_total << "\n";
    };
}

// ---------------------------------------------------------------------------
// Stages

inline bool stage_gen(const RunConfig& cfg, const StageOptions& opt) {
    return run_stage(cfg, opt, "gen", Json::object(), [&](StageRun& run) {
        const auto manifest = cfg.manifest_path();
        const auto recs = plan_dataset(cfg);
        for (const auto& r : recs) {
            const auto g = generate(cfg, r);
            slideio::write_ppm(run.output(slideio::resolve(manifest, r.image_path)), g.image);
            slideio::write_pgm(run.output(slideio::resolve(manifest, r.mask_path)), g.mask);
        }
        slideio::write_manifest(manifest, recs);
        run.output(manifest);
    });
}

inline bool stage_tile(const RunConfig& cfg, const StageOptions& opt) {
    return run_stage(cfg, opt, "tile", Json::object(), [&](StageRun& run) {
        const Layout L(cfg);
        for (const auto& r : load_manifest(cfg, run)) {
            const auto s = load_slide(cfg, r, run, false);
            const auto g = slideio::filter_background(
                slideio::tile(s.image, cfg.model.patch_size, cfg.infer.overlap_rate), s.image);
            Json patches = Json::array();
            for (std::size_t i = 0; i < g.size(); ++i)
                patches.push_back({{"row", g.origins[i].row},
                                   {"col", g.origins[i].col},
                                   {"valid", bool(g.valid[i])},
                                   {"variance", g.variances[i]}});
            Json j{{"slide_id", r.id}, {"patch_size", g.patch_size}, {"stride", g.stride},
                   {"overlap_rate", g.overlap_rate}, {"rows", g.rows}, {"cols", g.cols},
                   {"variance_threshold", g.threshold}, {"valid", g.valid_count()}, {"patches", patches}};
            const auto out = L.dir("tiles") / (r.id + ".json");
            write_text(out, j.dump(1) + "\n");
            run.output(out);
        }
    });
}

inline bool stage_train_seg(const RunConfig& cfg, const StageOptions& opt, int stage) {
    if (stage != 1 && stage != 2) throw ContractError("train-seg: --stage must be 1 or 2");
    const std::string name = "train-seg-stage" + std::to_string(stage);
    return run_stage(cfg, opt, name, Json{{"stage", stage}}, [&](StageRun& run) {
        const Layout L(cfg);
        segnet::SegModelParams start;
        if (stage == 1) {
            start = segnet::init_params(cfg.model_config());
        } else {
            start = load_checkpoint(L.seg(1), run, "stage 2 needs the stage-1 checkpoint; run `gtd train-seg --stage 1`");
        }
        std::vector<segnet::TrainingSlide> data;
        const char* split = stage == 1 ? "stage1" : "stage2";
        for (const auto& r : load_manifest(cfg, run))
            if (r.split == split) data.push_back(load_slide(cfg, r, run));
        if (data.empty()) throw PreconditionError(std::string("train-seg: manifest has no '") + split + "' slides");
        auto res = segnet::train(data, start, cfg.train_config(stage), epoch_printer(opt, name));
        segnet::save_params(run.output(L.seg(stage)), res.params);
        std::vector<Json> rows;
        for (const auto& e : res.log) rows.push_back(e.to_json());
        write_text(L.seg_log(stage), jsonl(rows));
        run.output(L.seg_log(stage));
    });
}

/// Probability maps, label map and lesion-encoder tokens for every slide
/// except the holdout set.
inline bool stage_infer(const RunConfig& cfg, const StageOptions& opt) {
    return run_stage(cfg, opt, "infer", Json::object(), [&](StageRun& run) {
        const Layout L(cfg);
        const auto params = load_checkpoint(cfg.checkpoint_path(), run, "run `gtd train-seg --stage 2` first");
        for (const auto& r : load_manifest(cfg, run)) {
            if (r.split == "holdout") continue;
            const auto s = load_slide(cfg, r, run, false);
            const auto p = segnet::infer_slide(s.image, params, cfg.infer_options(true));
            slideio::write_pgm16(run.output(L.map(r.id, "villi")), p.villi);
            slideio::write_pgm16(run.output(L.map(r.id, "edema")), p.edema);
            slideio::write_pgm16(run.output(L.map(r.id, "hyperplasia")), p.hyperplasia);
            slideio::write_pgm(run.output(L.map(r.id, "labels")),
                               features::predicted_labels(p.villi, p.edema, p.hyperplasia, 1, cfg.infer.threshold));
            save_tokens(run.output(L.tokens(r.id)), p.tokens);
            if (opt.log) *opt.log << "[infer] " << r.id << "\n";
        }
    });
}

struct SlideMaps {
    slideio::ProbMap villi, edema, hyperplasia;
};

inline SlideMaps load_maps(const Layout& L, const std::string& id, StageRun& run) {
    SlideMaps m;
    using Slot = std::pair<const char*, slideio::ProbMap*>;
    for (auto [what, dst] : {Slot{"villi", &m.villi}, Slot{"edema", &m.edema}, Slot{"hyperplasia", &m.hyperplasia}}) {
        const auto p = L.map(id, what);
        require_file(p, "run `gtd infer` first");
        run.input(p);
        *dst = slideio::read_pgm16(p);
    }
    return m;
}

inline bool stage_eval_seg(const RunConfig& cfg, const StageOptions& opt) {
    return run_stage(cfg, opt, "eval-seg", Json::object(), [&](StageRun& run) {
        const Layout L(cfg);
        eval::SegEvaluation ev;
        for (const auto& r : load_manifest(cfg, run)) {
            if (r.split != "test") continue;
            if (r.mask_path.empty()) throw PreconditionError("eval-seg: test slide " + r.id + " has no mask");
            const auto mpath = slideio::resolve(cfg.manifest_path(), r.mask_path);
            run.input(mpath);
            const auto truth = slideio::read_pgm(mpath);
            const auto m = load_maps(L, r.id, run);
            if (m.villi.width != truth.width || m.villi.height != truth.height)
                throw ContractError("eval-seg: prediction and mask dims differ for " + r.id);
            ev.add(r.id, eval::predicted_masks(m.villi, m.edema, m.hyperplasia, cfg.infer.threshold),
                   eval::truth_masks(truth));
        }
        if (ev.slides.empty()) throw PreconditionError("eval-seg: manifest has no 'test' slides");
        write_text(run.output(L.dir("eval") / "metrics.json"), evaluation_json(ev, cfg.infer.threshold).dump(2) + "\n");
        write_text(L.dir("eval") / "metrics.txt", evaluation_table(ev));
        run.output(L.dir("eval") / "metrics.txt");
        if (opt.log) *opt.log << evaluation_table(ev);
    });
}

inline bool stage_features(const RunConfig& cfg, const StageOptions& opt) {
    return run_stage(cfg, opt, "features", Json::object(), [&](StageRun& run) {
        const Layout L(cfg);
        const auto recs = load_manifest(cfg, run);
        std::vector<const slideio::ManifestRecord*> slides;
        std::vector<segnet::TokenGrid> grids, train_grids;
        for (const auto& r : recs) {
            if (r.split == "holdout") continue;
            const auto p = L.tokens(r.id);
            require_file(p, "run `gtd infer` first");
            run.input(p);
            slides.push_back(&r);
            grids.push_back(load_tokens(p));
            if (in_splits(r, {"stage1", "stage2"})) train_grids.push_back(grids.back());
        }
        if (train_grids.empty()) throw PreconditionError("features: no training slides to fit the PCA");
        const auto pca = num::pca_fit(pca_sample(train_grids, static_cast<std::size_t>(cfg.features.pca_max_tokens)), 3);
        if (pca.k() < 3) throw NumericError("features: token PCA has rank < 3: " + pca.warning);
        save_pca(run.output(L.pca()), pca);
        std::vector<features::FeatureVector> rows;
        for (std::size_t i = 0; i < slides.size(); ++i) {
            const auto m = load_maps(L, slides[i]->id, run);
            rows.push_back(slide_features(slides[i]->id, m.villi, m.edema, m.hyperplasia, grids[i], pca,
                                          cfg.model.downsample, cfg.infer.threshold));
        }
        features::write_feature_csv(run.output(L.features()), rows);
    });
}

inline std::map<std::string, features::FeatureVector> load_features(const Layout& L, StageRun& run) {
    require_file(L.features(), "run `gtd features` first");
    run.input(L.features());
    std::map<std::string, features::FeatureVector> out;
    for (auto& f : features::read_feature_csv(L.features())) out[f.slide_id] = f;
    return out;
}

inline const features::FeatureVector& feature_row(const std::map<std::string, features::FeatureVector>& f,
                                                  const std::string& id) {
    auto it = f.find(id);
    if (it == f.end()) throw PreconditionError("no feature row for slide " + id + "; re-run `gtd features`");
    return it->second;
}

inline bool stage_train_forest(const RunConfig& cfg, const StageOptions& opt) {
    return run_stage(cfg, opt, "train-forest", Json::object(), [&](StageRun& run) {
        const Layout L(cfg);
        const auto feats = load_features(L, run);
        std::vector<std::vector<double>> X;
        std::vector<int> y;
        for (const auto& r : load_manifest(cfg, run)) {
            if (!in_splits(r, {"stage1", "stage2"})) continue;
            const auto& f = feature_row(feats, r.id);
            X.emplace_back(f.values.begin(), f.values.end());
            y.push_back(r.class_label);
        }
        if (X.empty()) throw PreconditionError("train-forest: no training slides");
        const auto forest = forest::fit(X, y, cfg.forest_config());
        if (!forest.warning.empty() && opt.log) *opt.log << "[train-forest] warning: " << forest.warning << "\n";
        forest::save_forest(run.output(L.forest()), forest);
    });
}

inline bool stage_diagnose(const RunConfig& cfg, const StageOptions& opt) {
    return run_stage(cfg, opt, "diagnose", Json::object(), [&](StageRun& run) {
        const Layout L(cfg);
        require_file(L.forest(), "run `gtd train-forest` first");
        run.input(L.forest());
        const auto forest = forest::load_forest(L.forest());
        const auto feats = load_features(L, run);
        std::vector<Json> rows;
        std::vector<int> truth, pred;
        for (const auto& r : load_manifest(cfg, run)) {
            if (r.split != "test") continue;
            const auto& f = feature_row(feats, r.id);
            const auto p = forest::predict(forest, std::vector<double>(f.values.begin(), f.values.end()));
            rows.push_back({{"slide_id", r.id},
                            {"label", p.label},
                            {"name", eval::kDiagnosisNames[static_cast<std::size_t>(p.label)]},
                            {"shares", p.shares},
                            {"truth", r.class_label}});
            truth.push_back(r.class_label);
            pred.push_back(p.label);
            if (opt.log) *opt.log << "[diagnose] " << r.id << " -> " << eval::kDiagnosisNames[p.label] << "\n";
        }
        if (rows.empty()) throw PreconditionError("diagnose: manifest has no 'test' slides");
        write_text(run.output(L.diagnoses()), jsonl(rows));
        write_text(L.dir("diagnose") / "confusion.json", eval::to_json(eval::confusion(truth, pred)).dump(2) + "\n");
        run.output(L.dir("diagnose") / "confusion.json");
    });
}

inline bool stage_report(const RunConfig& cfg, const StageOptions& opt) {
    return run_stage(cfg, opt, "report", Json::object(), [&](StageRun& run) {
        const Layout L(cfg);
        const auto corpus_dir = resolve_corpus(cfg);
        require_file(corpus_dir / "index.jsonl", "set paths.corpus");
        run.input(corpus_dir / "index.jsonl");
        const auto corpus = report::read_corpus(corpus_dir);
        for (const auto& e : fs::directory_iterator(corpus_dir))
            if (e.is_regular_file()) run.input(e.path());
        const auto feats = load_features(L, run);
        require_file(L.diagnoses(), "run `gtd diagnose` first");
        run.input(L.diagnoses());
        std::istringstream in(read_text(L.diagnoses()));
        std::size_t offset = 0;
        for (std::string line; std::getline(in, line); offset += line.size() + 1) {
            if (line.empty()) continue;
            forest::Prediction p;
            std::string id;
            try {
                const auto j = Json::parse(line);
                id = j.at("slide_id").get<std::string>();
                p.label = j.at("label").get<int>();
                p.shares = j.at("shares").get<std::array<double, 3>>();
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(L.diagnoses().string() + ": " + e.what(), offset);
            }
            const auto r = report::assemble_report(feature_row(feats, id), p, corpus, cfg.report.patient,
                                                   static_cast<std::size_t>(cfg.report.top_k));
            write_text(run.output(L.dir("reports") / (id + ".txt")), r.text);
            write_text(run.output(L.dir("reports") / (id + ".json")), r.json.dump(2) + "\n");
        }
    });
}

inline std::string pick_slide(const RunConfig& cfg, StageRun& run, const std::string& requested) {
    if (!requested.empty()) return requested;
    for (const auto& r : load_manifest(cfg, run))
        if (r.split == "test") return r.id;
    throw PreconditionError("no test slide in the manifest; pass --slide");
}

inline const slideio::ManifestRecord& find_record(const std::vector<slideio::ManifestRecord>& recs, const std::string& id) {
    for (const auto& r : recs)
        if (r.id == id) return r;
    throw PreconditionError("slide '" + id + "' is not in the manifest");
}

inline bool stage_simulate_scope(const RunConfig& cfg, const StageOptions& opt, const std::string& slide) {
    return run_stage(cfg, opt, "simulate-scope", Json{{"slide", slide}}, [&](StageRun& run) {
        const Layout L(cfg);
        const auto id = pick_slide(cfg, run, slide);
        const auto s = load_slide(cfg, find_record(load_manifest(cfg, run), id), run, false);
        const auto vp = stitch::simulate_viewport(s.image, cfg.path_spec(), cfg.jitter_spec(), cfg.seed_for("simulate-scope/" + id));
        const auto dir = L.dir("scope") / id;
        std::vector<Json> rows;
        for (const auto& f : vp.frames) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%03d.ppm", f.index);
            slideio::write_ppm(run.output(dir / name), f.rgb);
            rows.push_back({{"index", f.index}, {"file", name}, {"true_x", f.true_x}, {"true_y", f.true_y}});
        }
        write_text(run.output(dir / "frames.jsonl"), jsonl(rows));
        Json meta{{"slide_id", id}, {"frames", vp.frames.size()}, {"warning", vp.warning}};
        write_text(run.output(dir / "viewport.json"), meta.dump(2) + "\n");
        if (!vp.warning.empty() && opt.log) *opt.log << "[simulate-scope] warning: " << vp.warning << "\n";
    });
}

inline std::vector<stitch::FieldFrame> read_frames(const fs::path& dir, StageRun& run) {
    const auto index = dir / "frames.jsonl";
    require_file(index, "run `gtd simulate-scope` first or pass --frames");
    run.input(index);
    std::vector<stitch::FieldFrame> frames;
    std::istringstream in(read_text(index));
    std::size_t offset = 0;
    for (std::string line; std::getline(in, line); offset += line.size() + 1) {
        if (line.empty()) continue;
        stitch::FieldFrame f;
        std::string file;
        try {
            const auto j = Json::parse(line);
            f.index = j.at("index").get<int>();
            file = j.at("file").get<std::string>();
            f.true_x = j.value("true_x", 0);
            f.true_y = j.value("true_y", 0);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(index.string() + ": " + e.what(), offset);
        }
        run.input(dir / file);
        f.rgb = slideio::read_ppm(dir / file);
        frames.push_back(std::move(f));
    }
    if (frames.empty()) throw PreconditionError("no frames listed in " + index.string());
    return frames;
}

inline Json session_summary(const stitch::StitchSession& s) {
    double min_conf = 1.0;
    for (const auto& e : s.log())
        if (e.frame != s.log().front().frame) min_conf = std::min(min_conf, e.confidence);
    Json placements = Json::array();
    for (const auto& [x, y] : s.placements()) placements.push_back({x, y});
    return {{"frames", s.log().size()},
            {"accepted", s.accepted_count()},
            {"queued", s.queued()},
            {"min_link_confidence", min_conf},
            {"placements", placements},
            {"mosaic", {{"x0", s.mosaic().x0()}, {"y0", s.mosaic().y0()}, {"width", s.mosaic().width()},
                        {"height", s.mosaic().height()}}}};
}

inline bool stage_stitch(const RunConfig& cfg, const StageOptions& opt, const std::string& slide, const std::string& frames_dir) {
    return run_stage(cfg, opt, "stitch", Json{{"slide", slide}, {"frames", frames_dir}}, [&](StageRun& run) {
        const Layout L(cfg);
        std::string id = slide;
        if (id.empty()) id = frames_dir.empty() ? pick_slide(cfg, run, slide) : fs::path(frames_dir).filename().string();
        const fs::path src = frames_dir.empty() ? L.dir("scope") / id : fs::path(frames_dir);
        stitch::StitchSession session(0, cfg.register_options());
        for (const auto& f : read_frames(src, run)) session.append(f);
        const auto dir = L.dir("stitch") / id;
        slideio::write_ppm(run.output(dir / "mosaic.ppm"), session.mosaic().rgb());
        write_text(run.output(dir / "log.jsonl"), session.log_jsonl());
        write_text(run.output(dir / "summary.json"), session_summary(session).dump(2) + "\n");
        if (opt.log)
            *opt.log << "[stitch] " << id << ": " << session.accepted_count() << "/" << session.log().size()
                     << " frames accepted\n";
    });
}

inline bool stage_online_update(const RunConfig& cfg, const StageOptions& opt, const std::string& corrections) {
    return run_stage(cfg, opt, "online-update", Json{{"corrections", corrections}}, [&](StageRun& run) {
        const Layout L(cfg);
        if (corrections.empty()) throw ContractError("online-update: --corrections DIR is required");
        require_file(fs::path(corrections) / "index.jsonl", "corrections directory");
        run.input(fs::path(corrections) / "index.jsonl");
        const auto batch = evolve::read_corrections(corrections);
        std::istringstream index(read_text(fs::path(corrections) / "index.jsonl"));
        for (std::string line; std::getline(index, line);) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto row = Json::parse(line);
            for (const char* f : {"patch", "mask"}) run.input(fs::path(corrections) / row.at(f).get<std::string>());
        }
        const auto old_p = load_checkpoint(cfg.checkpoint_path(), run, "run `gtd train-seg --stage 2` first");
        for (const auto& c : batch.items)
            if (c.patch.width < cfg.model.patch_size || c.patch.height < cfg.model.patch_size)
                throw ContractError("online-update: correction from " + c.slide_id + " is " +
                                    std::to_string(c.patch.width) + "x" + std::to_string(c.patch.height) +
                                    ", smaller than model.patch_size " + std::to_string(cfg.model.patch_size));
        std::vector<segnet::TrainingSlide> holdout;
        for (const auto& r : load_manifest(cfg, run))
            if (r.split == "holdout") holdout.push_back(load_slide(cfg, r, run));
        if (holdout.empty()) throw PreconditionError("online-update: manifest has no 'holdout' slides for the regression gate");

        const auto fc = cfg.fusion_config();
        auto res = evolve::online_update(old_p, batch, cfg.update_config(), fc);
        evolve::AuditEntry audit;
        audit.alpha = fc.alpha;
        audit.scope = evolve::scope_name(fc.scope);
        audit.batch_size = batch.items.size();
        audit.aborted = res.aborted;
        audit.diagnostic = res.diagnostic;
        audit.old_hash = evolve::params_hash(old_p);
        audit.fused_hash = evolve::params_hash(res.params);
        const segnet::SegModelParams* active = &old_p;
        if (!res.aborted) {
            audit.gate = evolve::regression_gate(res.params, holdout, old_p, cfg.evolve.tolerance, cfg.infer_options());
            if (audit.gate->accept) active = &res.params;
        }
        audit.active_hash = evolve::params_hash(*active);
        segnet::save_params(run.output(L.dir("online") / "fused.gtck"), res.params);
        segnet::save_params(run.output(L.dir("online") / "active.gtck"), *active);
        std::vector<Json> rows;
        for (const auto& e : res.log) rows.push_back(e.to_json());
        write_text(run.output(L.dir("online") / "update_log.jsonl"), jsonl(rows));
        evolve::append_audit(run.output(L.dir("online") / "audit.jsonl"), audit);
        if (opt.log) *opt.log << "[online-update] " << audit.to_json().dump() << "\n";
    });
}

/// gen through report, in order.
inline void stage_pipeline(const RunConfig& cfg, const StageOptions& opt) {
    stage_gen(cfg, opt);
    stage_tile(cfg, opt);
    stage_train_seg(cfg, opt, 1);
    stage_train_seg(cfg, opt, 2);
    stage_infer(cfg, opt);
    stage_eval_seg(cfg, opt);
    stage_features(cfg, opt);
    stage_train_forest(cfg, opt);
    stage_diagnose(cfg, opt);
    stage_report(cfg, opt);
}

} // namespace gtd::pipeline
