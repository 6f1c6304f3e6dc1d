// Drives the gtd binary: config precedence and validation, exit codes,
// the eval-seg golden fixture and --skip-existing.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

const fs::path kFixture = fs::path(GTD_SOURCE_DIR) / "tests" / "fixtures" / "eval_seg";

struct Result {
    int code;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("gtd-cli-") + info->test_suite_name() + "-" + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override {
        if (!HasFailure()) fs::remove_all(dir);
    }

    Result gtd(const std::string& args) const {
        const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
        const std::string cmd =
            std::string("\"") + GTD_BINARY + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    std::string wd(const std::string& sub = "w") const { return "--workdir \"" + (dir / sub).string() + "\""; }

    fs::path fixture_workdir() const {
        const auto w = dir / "w";
        fs::create_directories(w);
        fs::copy(kFixture / "data", w / "data", fs::copy_options::recursive);
        fs::copy(kFixture / "infer", w / "infer", fs::copy_options::recursive);
        return w;
    }
};

const char* kTinyData =
    "--set data.train_slides=2 --set data.test_slides=1 --set data.holdout_slides=0 "
    "--set data.width=512 --set data.height=512";

} // namespace

TEST_F(Cli, ConfigPrecedence) {
    std::ofstream(dir / "run.json") << R"({"seed": 5, "train": {"stage1": {"epochs": 3, "batch_size": 2}}})";
    auto r = gtd("--config \"" + (dir / "run.json").string() + "\" --set train.stage1.epochs=2 --seed 9 " + wd() +
                 " config");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto c = Json::parse(r.out);
    EXPECT_EQ(c["seed"], 9);                         // flag beats file
    EXPECT_EQ(c["train"]["stage1"]["epochs"], 2);    // --set beats file
    EXPECT_EQ(c["train"]["stage1"]["batch_size"], 2);  // file beats default
    EXPECT_EQ(c["train"]["stage2"]["epochs"], 4);    // untouched default
    EXPECT_EQ(c["paths"]["workdir"], (dir / "w").string());

    auto d = gtd("config");
    ASSERT_EQ(d.code, 0);
    EXPECT_EQ(Json::parse(d.out)["data"]["train_slides"], 40);
}

TEST_F(Cli, ConfigValidation) {
    std::ofstream(dir / "bad.json") << R"({"train": {"stage1": {"epoch": 3}}})";
    auto r = gtd("--config \"" + (dir / "bad.json").string() + "\" config");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("train.stage1.epoch"), std::string::npos) << r.err;

    EXPECT_EQ(gtd("--set bogus.x=1 config").code, 2);
    EXPECT_EQ(gtd("--set data.width=256.5 config").code, 2);
    EXPECT_EQ(gtd("--set data.width=-1 config").code, 2);
    EXPECT_EQ(gtd("--set evolve.scope=encoder config").code, 2);
    EXPECT_EQ(gtd("--set infer.threshold=1.5 config").code, 2);
    EXPECT_EQ(gtd("--set train.scale_factors=[1.0] config").code, 0);
}

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(gtd("").code, 2);
    EXPECT_EQ(gtd("--bogus config").code, 2);
    EXPECT_EQ(gtd("train-seg").code, 2);
    EXPECT_EQ(gtd("train-seg --stage 3").code, 2);
    auto h = gtd("--help");
    EXPECT_EQ(h.code, 0);
    EXPECT_NE(h.out.find("Exit codes"), std::string::npos);
}

TEST_F(Cli, MissingUpstreamIsExitThree) {
    auto r = gtd(wd() + " train-seg --stage 2");
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("seg_stage1.gtck"), std::string::npos) << r.err;
    EXPECT_EQ(gtd(wd() + " eval-seg").code, 3);
    EXPECT_EQ(gtd(wd() + " online-update --corrections \"" + (dir / "none").string() + "\"").code, 3);
}

TEST_F(Cli, CorruptCheckpointIsExitFour) {
    ASSERT_EQ(gtd(wd() + " -q " + kTinyData + " gen").code, 0);
    fs::create_directories(dir / "w" / "models");
    std::ofstream(dir / "w" / "models" / "seg_stage1.gtck") << "not a checkpoint";
    EXPECT_EQ(gtd(wd() + " -q " + kTinyData + " train-seg --stage 2").code, 4);
}

TEST_F(Cli, MalformedManifestIsExitSix) {
    const auto w = fixture_workdir();
    std::ofstream(w / "data" / "manifest.jsonl", std::ios::app) << "{not json\n";
    EXPECT_EQ(gtd(wd() + " eval-seg").code, 6);
}

TEST_F(Cli, EvalSegMatchesGolden) {
    const auto w = fixture_workdir();
    auto r = gtd(wd() + " eval-seg");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(w / "eval" / "metrics.json"), slurp(kFixture / "golden" / "metrics.json"));
    EXPECT_EQ(slurp(w / "eval" / "metrics.txt"), slurp(kFixture / "golden" / "metrics.txt"));

    const auto m = Json::parse(slurp(w / "manifests" / "eval-seg.json"));
    EXPECT_EQ(m["schema"], "gtd-run-manifest/1");
    EXPECT_EQ(m["command"], "eval-seg");
    EXPECT_EQ(m["inputs"].size(), 9u);  // manifest, 2 masks, 6 maps
    ASSERT_EQ(m["outputs"].size(), 2u);
    EXPECT_EQ(m["outputs"][0]["path"], "eval/metrics.json");
    EXPECT_EQ(m["outputs"][0]["sha256"].get<std::string>().size(), 64u);
}

TEST_F(Cli, SkipExistingWritesNothing) {
    const auto w = fixture_workdir();
    ASSERT_EQ(gtd(wd() + " eval-seg").code, 0);
    const auto manifest = w / "manifests" / "eval-seg.json", metrics = w / "eval" / "metrics.json";
    const auto before = slurp(manifest);
    const auto t_manifest = fs::last_write_time(manifest), t_metrics = fs::last_write_time(metrics);

    auto r = gtd(wd() + " --skip-existing eval-seg");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("up to date"), std::string::npos) << r.err;
    EXPECT_EQ(slurp(manifest), before);
    EXPECT_EQ(fs::last_write_time(manifest), t_manifest);
    EXPECT_EQ(fs::last_write_time(metrics), t_metrics);

    // a changed config reruns the stage
    r = gtd(wd() + " --skip-existing --set infer.threshold=0.6 eval-seg");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.err.find("up to date"), std::string::npos) << r.err;
    EXPECT_NE(slurp(metrics), slurp(kFixture / "golden" / "metrics.json"));

    // so does a changed input
    ASSERT_EQ(gtd(wd() + " eval-seg").code, 0);
    fs::copy_file(kFixture / "infer" / "test_000_edema.pgm", w / "infer" / "test_000_villi.pgm",
                  fs::copy_options::overwrite_existing);
    r = gtd(wd() + " --skip-existing eval-seg");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.err.find("up to date"), std::string::npos) << r.err;

    // and a deleted output
    ASSERT_EQ(gtd(wd() + " --skip-existing eval-seg").err.find("up to date") != std::string::npos, true);
    fs::remove(w / "eval" / "metrics.txt");
    r = gtd(wd() + " --skip-existing eval-seg");
    EXPECT_EQ(r.err.find("up to date"), std::string::npos) << r.err;
    EXPECT_TRUE(fs::exists(w / "eval" / "metrics.txt"));
}

TEST_F(Cli, GenIsDeterministic) {
    ASSERT_EQ(gtd(wd("a") + " -q --seed 3 " + kTinyData + " gen").code, 0);
    ASSERT_EQ(gtd(wd("b") + " -q --seed 3 " + kTinyData + " gen").code, 0);
    ASSERT_EQ(gtd(wd("c") + " -q --seed 4 " + kTinyData + " gen").code, 0);
    for (const char* f : {"manifest.jsonl", "train_000.ppm", "test_000_mask.pgm"}) {
        EXPECT_EQ(slurp(dir / "a" / "data" / f), slurp(dir / "b" / "data" / f)) << f;
        EXPECT_NE(slurp(dir / "a" / "data" / f), slurp(dir / "c" / "data" / f)) << f;
    }
}
