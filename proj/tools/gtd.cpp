// gtd: command-line front end for the synthetic GTD pipeline.

#include <CLI11.hpp>

#include "gtd/pipeline/stages.hpp"
#include "gtd/studies/studies.hpp"

using namespace gtd;
using namespace gtd::pipeline;

namespace {

const char* kFooter = R"(
Configuration:
  Defaults < --config FILE (one JSON document) < --set key.path=value < --seed/--workdir.
  Unknown keys are rejected. A --set value is parsed as JSON when it parses
  (numbers, true/false, arrays), otherwise taken as a string:
    --set train.stage1.epochs=3 --set train.scale_factors=[1.0] --set evolve.scope=heads-only
  `gtd config` prints the effective configuration.

Exit codes:
  0  success
  1  internal error
  2  usage error, config schema violation or contract violation
  3  missing input (upstream artifact, manifest entry or file)
  4  checkpoint unreadable, corrupt or of another format version
  5  numeric failure (non-finite values)
  6  malformed data file)";

struct Globals {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string workdir;
    bool skip_existing = false;
    bool quiet = false;
};

RunConfig effective(const Globals& g, const RunConfig& defaults = {}) {
    auto c = load_config(g.config, g.sets, defaults);
    if (g.seed) c.seed = *g.seed;
    if (!g.workdir.empty()) c.paths.workdir = g.workdir;
    c.validate();
    return c;
}

int fail(const std::exception& e, int code, const char* prefix = "") {
    std::cerr << "gtd: " << prefix << e.what() << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic GTD pathology pipeline: slides, segmentation, features, diagnosis, reports."};
    app.footer(kFooter);
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "JSON run configuration");
    app.add_option("--set", g.sets, "override one config field: key.path=value (repeatable)");
    app.add_option("--seed", g.seed, "master seed (overrides the config)");
    app.add_option("--workdir", g.workdir, "output directory (overrides paths.workdir)");
    app.add_flag("--skip-existing", g.skip_existing, "skip stages whose run manifest and outputs are intact");
    app.add_flag("-q,--quiet", g.quiet, "no progress output on stderr");

    int stage = 0;
    std::string slide, frames, corrections, study = "all", study_out;

    auto* cmd_config = app.add_subcommand("config", "print the effective configuration as JSON");
    auto* cmd_gen = app.add_subcommand("gen", "generate the synthetic slide set and its manifest");
    auto* cmd_tile = app.add_subcommand("tile", "tile every slide and record background filtering");
    auto* cmd_train = app.add_subcommand("train-seg", "train the segmentation model (stage 1 or 2)");
    cmd_train->add_option("--stage", stage, "training stage")->required()->check(CLI::IsMember({1, 2}));
    auto* cmd_infer = app.add_subcommand("infer", "probability maps, label maps and tokens per slide");
    auto* cmd_eval = app.add_subcommand("eval-seg", "pixel metrics on the test split");
    auto* cmd_feat = app.add_subcommand("features", "22-dimensional slide features");
    auto* cmd_forest = app.add_subcommand("train-forest", "fit the diagnosis forest on training features");
    auto* cmd_diag = app.add_subcommand("diagnose", "forest verdicts for the test split");
    auto* cmd_stitch = app.add_subcommand("stitch", "register and stitch microscope frames into a mosaic");
    cmd_stitch->add_option("--slide", slide, "slide id (default: first test slide)");
    cmd_stitch->add_option("--frames", frames, "frame directory with frames.jsonl (default: scope/<slide>)");
    auto* cmd_scope = app.add_subcommand("simulate-scope", "simulate a microscope scan over one slide");
    cmd_scope->add_option("--slide", slide, "slide id (default: first test slide)");
    auto* cmd_online = app.add_subcommand("online-update", "fine-tune on corrections, fuse and gate");
    cmd_online->add_option("--corrections", corrections, "correction directory with index.jsonl")->required();
    auto* cmd_report = app.add_subcommand("report", "text and JSON reports for diagnosed slides");
    auto* cmd_pipeline = app.add_subcommand("pipeline", "gen, tile, train-seg 1 and 2, infer, eval-seg, features, "
                                                        "train-forest, diagnose, report");
    auto* cmd_study = app.add_subcommand("study", "desk-scale ablations: overlap, scale, scope or all");
    cmd_study->add_option("which", study, "study to run")->check(CLI::IsMember({"overlap", "scale", "scope", "all"}));
    cmd_study->add_option("--out", study_out, "report directory (default: <workdir>/studies)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        StageOptions opt;
        opt.skip_existing = g.skip_existing;
        opt.log = g.quiet ? nullptr : &std::clog;

        if (cmd_study->parsed()) {
            const auto cfg = effective(g, studies::desk_preset());
            const fs::path out = study_out.empty() ? cfg.workdir() / "studies" : fs::path(study_out);
            studies::StudyContext ctx(cfg, opt.log);
            auto sink = [&](const std::string& name) {
                return [&, name](const studies::StudyOutput& o) { studies::write_study(out, name, o); };
            };
            auto finish = [&](const std::string& name, const studies::StudyOutput& o) {
                studies::write_study(out, name, o);
                std::cout << o.table << "\n";
            };
            if (study == "overlap" || study == "all") finish("overlap", studies::overlap_study(ctx, sink("overlap")));
            if (study == "scale" || study == "all") finish("scale", studies::scale_study(ctx, sink("scale")));
            if (study == "scope" || study == "all") finish("scope", studies::scope_study(ctx, sink("scope")));
            return kExitOk;
        }

        const auto cfg = effective(g);
        if (cmd_config->parsed()) std::cout << to_document(cfg).dump(2) << "\n";
        if (cmd_gen->parsed()) stage_gen(cfg, opt);
        if (cmd_tile->parsed()) stage_tile(cfg, opt);
        if (cmd_train->parsed()) stage_train_seg(cfg, opt, stage);
        if (cmd_infer->parsed()) stage_infer(cfg, opt);
        if (cmd_eval->parsed()) stage_eval_seg(cfg, opt);
        if (cmd_feat->parsed()) stage_features(cfg, opt);
        if (cmd_forest->parsed()) stage_train_forest(cfg, opt);
        if (cmd_diag->parsed()) stage_diagnose(cfg, opt);
        if (cmd_scope->parsed()) stage_simulate_scope(cfg, opt, slide);
        if (cmd_stitch->parsed()) stage_stitch(cfg, opt, slide, frames);
        if (cmd_online->parsed()) stage_online_update(cfg, opt, corrections);
        if (cmd_report->parsed()) stage_report(cfg, opt);
        if (cmd_pipeline->parsed()) stage_pipeline(cfg, opt);
        return kExitOk;
    } catch (const ConfigError& e) {
        return fail(e, kExitUsage);
    } catch (const ContractError& e) {
        return fail(e, kExitUsage);
    } catch (const PreconditionError& e) {
        return fail(e, kExitMissingInput);
    } catch (const CheckpointError& e) {
        return fail(e, kExitCheckpoint);
    } catch (const NumericError& e) {
        return fail(e, kExitNumeric);
    } catch (const ParseError& e) {
        return fail(e, kExitParse);
    } catch (const std::exception& e) {
        return fail(e, kExitInternal, "internal error: ");
    }
}
