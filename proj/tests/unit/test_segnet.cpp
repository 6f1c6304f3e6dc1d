#include <gtest/gtest.h>

#include <filesystem>

#include "gtd/checkpoint.hpp"
#include "gtd/segnet/train.hpp"
#include "gtd/slideio/generator.hpp"
#include "support/gradcheck.hpp"

using namespace gtd;
using namespace gtd::segnet;
using gtd::testing::grad_check;
using gtd::testing::random_tensor;
using gtd::testing::rel_error;
namespace fs = std::filesystem;

static Tensor col(std::initializer_list<double> v) {
    Tensor t = Tensor::matrix(static_cast<std::int64_t>(v.size()), 1);
    std::size_t i = 0;
    for (double x : v) t[i++] = x;
    return t;
}

static Tensor random_binary(num::Rng& rng, std::int64_t n, double p = 0.4) {
    Tensor t = Tensor::matrix(n, 1);
    for (auto& v : t.data()) v = rng.uniform() < p ? 1.0 : 0.0;
    return t;
}

// ---------------------------------------------------------------- losses

TEST(Loss, SinglePixelClosedForm) {
    EXPECT_NEAR(loss_pixel(col({0.0}), col({1.0}), 1.0, 1.0), std::log(2.0), 1e-15);
}

TEST(Loss, PixelMatchesPlainCrossEntropy) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        num::Rng rng(seed);
        auto x = random_tensor(rng, 50, 1, 3.0);
        auto y = random_binary(rng, 50);
        double oracle = 0;
        for (std::size_t i = 0; i < 50; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            oracle -= y[i] * std::log(s) + (1 - y[i]) * std::log(1 - s);
        }
        EXPECT_NEAR(loss_pixel(x, y, 1.0, 1.0), oracle / 50, 1e-12);
    }
}

TEST(Loss, PositiveWeightIsLinear) {
    num::Rng rng(1);
    auto x = random_tensor(rng, 30, 1);
    Tensor y(x.dims(), 1.0);
    EXPECT_NEAR(loss_pixel(x, y, 1.0, 2.0), 2.0 * loss_pixel(x, y, 1.0, 1.0), 1e-15);
    EXPECT_GE(loss_pixel(x, random_binary(rng, 30), 0.3, 0.7), 0.0);
}

TEST(Loss, RejectsNonBinaryTargets) {
    EXPECT_THROW(loss_pixel(col({0.0}), col({0.5}), 1, 1), ContractError);
    EXPECT_THROW(loss_pixel(col({0.0, 1.0}), col({1.0}), 1, 1), ContractError);
}

TEST(Loss, DiceEndpoints) {
    Tensor y = Tensor::matrix(400, 1), p = Tensor::matrix(400, 1);
    for (int i = 0; i < 100; ++i) y[i] = p[i] = 1.0;
    const double eps = 1.0;
    EXPECT_LE(loss_lesion(p, y, eps), eps / (200 + eps));
    EXPECT_NEAR(loss_lesion(p, y, eps), 0.0, 1e-12);

    Tensor a = Tensor::matrix(16, 1), b = Tensor::matrix(16, 1);
    for (int i = 0; i < 4; ++i) {
        a[i] = 1.0;
        b[8 + i] = 1.0;
    }
    EXPECT_NEAR(loss_lesion(a, b, eps), 1.0 - eps / (8 + eps), 1e-15);

    Tensor c = Tensor::matrix(16, 1);
    c[2] = c[3] = c[4] = c[5] = 1.0;  // overlaps a in 2 pixels
    EXPECT_NEAR(loss_lesion(a, c, 1e-12), 0.5, 1e-12);
    EXPECT_EQ(loss_lesion(Tensor::matrix(4, 1), Tensor::matrix(4, 1), eps), 0.0);
}

TEST(Loss, TotalReductions) {
    num::Rng rng(2);
    auto x = random_tensor(rng, 40, 1, 2.0);
    auto y = random_binary(rng, 40);
    EXPECT_EQ(loss_total(x, y, {1, 1, 1, 0, 1}), loss_pixel(x, y, 1, 1));
    EXPECT_EQ(loss_total(x, y, {1, 1, 0, 1, 1}), loss_lesion(num::ops::sigmoid(x), y, 1));
    EXPECT_NEAR(loss_total(x, y, {1, 1, 1, 1, 1}), loss_pixel(x, y, 1, 1) + loss_lesion(num::ops::sigmoid(x), y, 1),
                1e-12);
    EXPECT_THROW(loss_total(x, y, {1, 1, 0, 0, 1}), ContractError);
    EXPECT_THROW(loss_total(x, y, {0, 1, 1, 1, 1}), ContractError);
    EXPECT_THROW(loss_total(x, y, {1, 1, 1, 1, 0}), ContractError);
}

TEST(Loss, TapeGradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        num::Rng rng(seed);
        auto y = random_binary(rng, 25);
        LossConfig cfg{rng.uniform(0.5, 2), rng.uniform(0.5, 5), rng.uniform(0, 2), rng.uniform(0.1, 2), 1.0};
        auto f = [&](GradTape& t, const std::vector<Var>& v) { return tape_loss_total(t, v[0], y, cfg).total; };
        EXPECT_LT(grad_check(f, {random_tensor(rng, 25, 1, 2.0)}, seed), 1e-4);
    }
}

// ------------------------------------------------------------- attention

TEST(Attention, RowsSumToOne) {
    num::Rng rng(3);
    GradTape t;
    auto q = t.constant(random_tensor(rng, 9, 6)), ctx = t.constant(random_tensor(rng, 27, 6));
    auto r = cross_scale_attention(t, q, ctx, t.constant(random_tensor(rng, 6, 6)),
                                   t.constant(random_tensor(rng, 6, 6)), t.constant(random_tensor(rng, 6, 6)),
                                   t.constant(random_tensor(rng, 6, 6)));
    const auto& a = t.value(r.weights);
    ASSERT_EQ(a.rows(), 9);
    ASSERT_EQ(a.cols(), 27);
    EXPECT_EQ(t.value(r.output).rows(), 9);
    for (std::int64_t i = 0; i < 9; ++i) {
        double s = 0;
        for (std::int64_t j = 0; j < 27; ++j) s += a.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Attention, EqualKeysGiveMeanOfValues) {
    num::Rng rng(4);
    const int d = 5;
    Tensor eye = Tensor::matrix(d, d);
    for (int i = 0; i < d; ++i) eye.at(i, i) = 1.0;
    // identical content at all three scales, all tokens equal
    Tensor tok = Tensor::matrix(4, d);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < 4; ++i) tok.at(i, j) = 0.1 * j;
    GradTape t;
    auto q = t.constant(tok), ctx = t.constant(num::ops::concat_rows({&tok, &tok, &tok}));
    auto r = cross_scale_attention(t, q, ctx, t.constant(eye), t.constant(eye), t.constant(eye), t.constant(eye));
    for (std::int64_t i = 0; i < 4; ++i)
        for (int j = 0; j < d; ++j) EXPECT_NEAR(t.value(r.output).at(i, j), 0.1 * j, 1e-15);

    // zero key projection: scores are equal, output is the mean value row
    auto c = random_tensor(rng, 12, d);
    GradTape t2;
    auto r2 = cross_scale_attention(t2, t2.constant(random_tensor(rng, 3, d)), t2.constant(c), t2.constant(eye),
                                    t2.constant(Tensor::matrix(d, d)), t2.constant(eye), t2.constant(eye));
    for (int j = 0; j < d; ++j) {
        double m = 0;
        for (int i = 0; i < 12; ++i) m += c.at(i, j);
        for (std::int64_t i = 0; i < 3; ++i) EXPECT_NEAR(t2.value(r2.output).at(i, j), m / 12, 1e-12);
    }
}

// Softmax over unscaled random projections has large third derivatives, so
// h = 1e-3 leaves ~3e-4 truncation error; the error falls as h^2 down to 1e-5.
TEST(Attention, GradientsMatchFiniteDifferences) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        num::Rng rng(seed);
        const auto d = rng.integer(2, 6), nq = rng.integer(1, 5), nk = 3 * nq;
        auto f = [](GradTape& t, const std::vector<Var>& v) {
            return cross_scale_attention(t, v[0], v[1], v[2], v[3], v[4], v[5]).output;
        };
        worst = std::max(worst, grad_check(f,
                                           {random_tensor(rng, nq, d), random_tensor(rng, nk, d), random_tensor(rng, d, d),
                                            random_tensor(rng, d, d), random_tensor(rng, d, d), random_tensor(rng, d, d)},
                                           seed, 1e-5));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Attention, MisalignedPyramidRejected) {
    ModelConfig cfg;
    cfg.patch_size = 64;
    cfg.downsample = 2;
    Raster src(64, 64, 3, 0.5);
    auto p = extract_pyramid(src, cfg, 64, 64);
    EXPECT_NO_THROW(p.validate(cfg.work_px()));
    p.levels[2].center_x += 3.0;
    EXPECT_THROW(p.validate(cfg.work_px()), ContractError);
    auto params = init_params(cfg);
    EXPECT_THROW(net_probabilities(params, Net::Villi, p), ContractError);
}

TEST(Upsample, GradientMatchesFiniteDifferences) {
    num::Rng rng(5);
    auto f = [](GradTape& t, const std::vector<Var>& v) { return tape_upsample(t, v[0], 3, 4); };
    EXPECT_LT(grad_check(f, {random_tensor(rng, 9, 1)}, 5), 1e-6);
    // constant tokens upsample to the same constant
    auto up = upsample_tokens(Tensor({9, 1}, 0.3), 3, 4);
    for (double v : up.data()) EXPECT_NEAR(v, 0.3, 1e-15);
}

// --------------------------------------------------------------- forward

static ModelConfig small_config() {
    ModelConfig c;
    c.patch_size = 64;
    c.downsample = 2;
    c.token_size = 8;
    c.embed_dim = 16;
    c.pixel_features = 6;
    c.init_seed = 3;
    return c;
}

static Raster random_patch(num::Rng& rng, int n, int ch) {
    Raster r(n, n, ch);
    for (auto& v : r.data) v = rng.uniform();
    return r;
}

TEST(Forward, ZeroHeadsGiveHalf) {
    auto p = init_params(small_config());
    num::Rng rng(6);
    auto rgb = random_patch(rng, 64, 3);
    auto v = forward_villi(p, rgb);
    EXPECT_EQ(v.width, 64);
    EXPECT_EQ(v.height, 64);
    for (float x : v.data) EXPECT_EQ(x, 0.5f);
    auto l = forward_lesions(p, rgb, random_patch(rng, 64, 1));
    for (float x : l.edema.data) EXPECT_EQ(x, 0.5f);
    for (float x : l.hyperplasia.data) EXPECT_EQ(x, 0.5f);
}

TEST(Forward, InputContracts) {
    auto p = init_params(small_config());
    num::Rng rng(7);
    auto rgb = random_patch(rng, 64, 3);
    rgb.data[10] = 255.0;
    EXPECT_THROW(forward_villi(p, rgb), ContractError);
    EXPECT_THROW(forward_villi(p, random_patch(rng, 32, 3)), ContractError);
    EXPECT_THROW(forward_lesions(p, random_patch(rng, 64, 3), random_patch(rng, 64, 2)), ContractError);
    EXPECT_THROW(net_probabilities(p, Net::Lesion, patch_pyramid(random_patch(rng, 64, 3), p.config)), ContractError);
}

static SegModelParams randomize_heads(SegModelParams p, std::uint64_t seed) {
    num::Rng rng(seed);
    for (auto& [name, t] : p.tensors)
        if (is_head_param(name))
            for (auto& v : t.data()) v = 0.5 * rng.normal();
    return p;
}

TEST(Forward, HeadSwapAndIndependence) {
    auto p = randomize_heads(init_params(small_config()), 8);
    num::Rng rng(9);
    auto rgb = random_patch(rng, 64, 3), vp = random_patch(rng, 64, 1);
    auto base = forward_lesions(p, rgb, vp);
    EXPECT_NE(base.edema, base.hyperplasia);

    auto swapped = p;
    for (const char* n : {"w_tok", "w_pix", "b"})
        std::swap(swapped.at(std::string("edema.head.") + n), swapped.at(std::string("hyperplasia.head.") + n));
    auto s = forward_lesions(swapped, rgb, vp);
    EXPECT_EQ(s.edema, base.hyperplasia);
    EXPECT_EQ(s.hyperplasia, base.edema);

    auto perturbed = p;
    for (auto& v : perturbed.at("edema.head.w_tok").data()) v += 1.0;
    auto q = forward_lesions(perturbed, rgb, vp);
    EXPECT_EQ(q.hyperplasia, base.hyperplasia);
    EXPECT_NE(q.edema, base.edema);
}

// Every parameter tensor of both networks against central differences.
TEST(Forward, FullModelGradientCheck) {
    ModelConfig cfg;
    cfg.patch_size = 32;
    cfg.downsample = 1;
    cfg.token_size = 8;
    cfg.embed_dim = 16;
    cfg.pixel_features = 4;
    cfg.init_seed = 11;
    auto params = randomize_heads(init_params(cfg), 12);
    num::Rng rng(13);
    const LossConfig lc{1.0, 2.0, 1.0, 1.0, 1.0};
    for (Net net : {Net::Villi, Net::Lesion}) {
        const auto pyr = patch_pyramid(random_patch(rng, 32, layout(net).channels), cfg);
        std::vector<Tensor> targets;
        for (std::size_t h = 0; h < layout(net).heads.size(); ++h) targets.push_back(random_binary(rng, 32 * 32, 0.3));

        auto loss_of = [&](const SegModelParams& p, bool with_grad, std::map<std::string, Tensor>* grads) {
            GradTape tape;
            Binding b(tape, p, [&](const std::string&) { return with_grad; });
            auto f = net_forward(tape, b, cfg, net, pyr);
            Var total;
            for (std::size_t h = 0; h < f.logits.size(); ++h) {
                auto tl = tape_loss_total(tape, f.logits[h], targets[h], lc).total;
                total = h == 0 ? tl : tape.add(total, tl);
            }
            if (grads) {
                tape.backward(total);
                for (const auto& [n, v] : b.vars()) (*grads)[n] = tape.grad(v);
            }
            return tape.value(total)[0];
        };
        std::map<std::string, Tensor> grads;
        loss_of(params, true, &grads);
        ASSERT_FALSE(grads.empty());
        const double h = 1e-6;
        for (const auto& [name, g] : grads) {
            auto probe = params;
            auto& t = probe.at(name);
            const std::size_t n = t.size();
            const std::size_t step = std::max<std::size_t>(1, n / 25);
            double worst = 0;
            for (std::size_t i = 0; i < n; i += step) {
                const double x0 = t[i];
                t[i] = x0 + h;
                const double up = loss_of(probe, false, nullptr);
                t[i] = x0 - h;
                const double dn = loss_of(probe, false, nullptr);
                t[i] = x0;
                worst = std::max(worst, rel_error(g[i], (up - dn) / (2 * h)));
            }
            EXPECT_LT(worst, 1e-4) << name;
        }
    }
}

// ------------------------------------------------------------- inference

static slideio::SlideImage small_slide(std::uint64_t seed) {
    auto s = slideio::generate_slide(slideio::SlideSpec::defaults(1, seed, 512, 512));
    return s.image;
}

TEST(Merge, OverlapHalfMatchesBruteForce) {
    num::Rng rng(14);
    const int w = 100, h = 80, p = 32;
    auto grid = slideio::tile(w, h, p, 0.5);
    std::vector<slideio::ProbMap> maps;
    MeanMerge m(w, h);
    for (const auto& o : grid.origins) {
        slideio::ProbMap pm(p, p);
        for (auto& v : pm.data) v = static_cast<float>(rng.uniform());
        m.add(pm, o.col, o.row);
        maps.push_back(pm);
    }
    auto merged = m.mean();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::vector<double> vals;
            for (std::size_t k = 0; k < grid.size(); ++k) {
                const auto& o = grid.origins[k];
                if (x >= o.col && x < o.col + p && y >= o.row && y < o.row + p) vals.push_back(maps[k](x - o.col, y - o.row));
            }
            ASSERT_FALSE(vals.empty());
            double s = 0;
            for (double v : vals) s += v;
            EXPECT_NEAR(merged(x, y), s / double(vals.size()), 1e-12);
        }
}

TEST(Merge, NoOverlapIsConcatenation) {
    num::Rng rng(15);
    auto grid = slideio::tile(64, 64, 32, 0.0);
    MeanMerge m(64, 64);
    std::vector<slideio::ProbMap> maps;
    for (const auto& o : grid.origins) {
        slideio::ProbMap pm(32, 32);
        for (auto& v : pm.data) v = static_cast<float>(rng.uniform());
        m.add(pm, o.col, o.row);
        maps.push_back(pm);
    }
    auto out = m.mean_f32();
    for (std::size_t k = 0; k < grid.size(); ++k)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                EXPECT_EQ(out(grid.origins[k].col + x, grid.origins[k].row + y), maps[k](x, y));
}

TEST(Infer, ConstantModelGivesConstantRaster) {
    auto p = init_params(small_config());
    p.at("villi.head.b")[0] = 1.25;
    p.at("edema.head.b")[0] = -0.5;
    const auto img = small_slide(16);
    for (double ov : {0.0, 0.5, 0.75}) {
        InferOptions o;
        o.overlap_rate = ov;
        auto r = infer_slide(img, p, o);
        EXPECT_EQ(r.villi.width, img.width);
        EXPECT_EQ(r.villi.height, img.height);
        const float vv = static_cast<float>(num::ops::sigmoid(1.25)), ev = static_cast<float>(num::ops::sigmoid(-0.5));
        for (float v : r.villi.data) ASSERT_NEAR(v, vv, 1e-6);
        for (float v : r.edema.data) ASSERT_NEAR(v, ev, 1e-6);
        for (float v : r.hyperplasia.data) ASSERT_EQ(v, 0.5f);
    }
}

TEST(Infer, TokenGridCoversValidPatches) {
    auto p = init_params(small_config());
    InferOptions o;
    o.collect_tokens = true;
    auto r = infer_slide(small_slide(17), p, o);
    EXPECT_EQ(r.tokens.rows, 512 / 16);
    EXPECT_EQ(r.tokens.cols, 512 / 16);
    EXPECT_GT(r.tokens.covered_count(), 0u);
    EXPECT_EQ(r.tokens.dim, 16);
}

// ---------------------------------------------------------------- training

static std::vector<TrainingSlide> tiny_dataset(int n, std::uint64_t seed0) {
    std::vector<TrainingSlide> out;
    for (int i = 0; i < n; ++i) {
        auto g = slideio::generate_slide(slideio::SlideSpec::defaults(i % 3, seed0 + i, 512, 512));
        out.push_back({"s" + std::to_string(i), g.image, g.mask});
    }
    return out;
}

static TrainConfig tiny_train(int stage) {
    auto c = TrainConfig::defaults_for_stage(stage);
    c.epochs = 2;
    c.batch_size = 4;
    c.overlap_rate = 0.0;
    c.seed = 5;
    return c;
}

static ModelConfig tiny_model() {
    ModelConfig c;
    c.patch_size = 128;
    c.downsample = 4;
    c.token_size = 8;
    c.embed_dim = 16;
    c.pixel_features = 6;
    c.init_seed = 2;
    return c;
}

TEST(Train, StageOneFreezesEncoders) {
    auto data = tiny_dataset(2, 100);
    const auto init = init_params(tiny_model());
    auto r = train(data, init, tiny_train(1));
    EXPECT_EQ(r.params.trained_stage, 1);
    for (const auto& [name, t] : init.tensors) {
        if (is_encoder_param(name)) {
            EXPECT_EQ(r.params.at(name).data(), t.data()) << name;
        }
    }
    bool moved = false;
    for (const auto& [name, t] : init.tensors)
        if (is_decoder_param(name) || is_head_param(name)) moved = moved || r.params.at(name).data() != t.data();
    EXPECT_TRUE(moved);
    ASSERT_EQ(r.log.size(), 4u);
    EXPECT_EQ(r.log[0].network, "villi");
    EXPECT_EQ(r.log[3].network, "lesion");

    auto r2 = train(data, r.params, tiny_train(2));
    std::size_t changed = 0;
    for (const auto& [name, t] : r.params.tensors) changed += r2.params.at(name).data() != t.data();
    EXPECT_EQ(changed, r.params.tensors.size());
}

TEST(Train, DeterministicCheckpointBytes) {
    auto data = tiny_dataset(2, 200);
    const auto init = init_params(tiny_model());
    auto a = train(data, init, tiny_train(1));
    auto b = train(data, init, tiny_train(1));
    EXPECT_EQ(ckpt::encode(to_records(a.params)), ckpt::encode(to_records(b.params)));
}

TEST(Train, Errors) {
    const auto init = init_params(tiny_model());
    EXPECT_THROW(train({}, init, tiny_train(1)), ContractError);
    auto data = tiny_dataset(1, 300);
    EXPECT_THROW(train(data, init, tiny_train(2)), PreconditionError);
    auto bad = init;
    bad.at("villi.head.b")[0] = std::nan("");
    try {
        train(data, bad, tiny_train(1));
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
    }
}

TEST(Train, ScaleFactorsKeepShapes) {
    auto data = tiny_dataset(1, 400);
    const auto init = init_params(tiny_model());
    auto c1 = tiny_train(1);
    c1.epochs = 1;
    auto c2 = c1;
    c2.scale_factors = {1.0};
    auto a = train(data, init, c1), b = train(data, init, c2);
    ASSERT_EQ(a.params.tensors.size(), b.params.tensors.size());
    for (const auto& [name, t] : a.params.tensors) EXPECT_EQ(t.dims(), b.params.at(name).dims());
}

// --------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripAndErrors) {
    auto dir = fs::temp_directory_path() / "gtd_segnet_ckpt";
    fs::remove_all(dir);
    auto p = randomize_heads(init_params(small_config()), 20);
    p.round_to_f32();
    p.trained_stage = 2;
    save_params(dir / "m.gtck", p);
    auto q = load_params(dir / "m.gtck");
    EXPECT_EQ(q.tensors, p.tensors);
    EXPECT_EQ(q.trained_stage, 2);
    EXPECT_EQ(q.config.embed_dim, 16);

    auto bytes = slideio::read_file_bytes(dir / "m.gtck");
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GTCK");
    auto corrupt = bytes;
    corrupt[40] ^= 0x5a;
    try {
        ckpt::decode(corrupt);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::Corrupt);
    }
    auto v2 = ckpt::encode(to_records(p), 2);
    try {
        ckpt::decode(v2);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::Version);
    }
    try {
        load_params(dir / "missing.gtck");
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::Io);
    }
    auto recs = to_records(p);
    recs.erase(recs.begin() + 3);
    EXPECT_THROW(from_records(recs), CheckpointError);
}

TEST(Checkpoint, ParameterNamesUniqueAndStable) {
    auto p = init_params(small_config());
    auto recs = to_records(p);
    std::set<std::string> names;
    for (const auto& r : recs) EXPECT_TRUE(names.insert(r.name).second) << r.name;
    auto q = from_records(ckpt::decode(ckpt::encode(recs)));
    std::vector<std::string> a, b;
    for (const auto& [n, _] : p.tensors) a.push_back(n);
    for (const auto& [n, _] : q.tensors) b.push_back(n);
    EXPECT_EQ(a, b);
}
