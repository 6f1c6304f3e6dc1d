#pragma once

// Two-stage cascade training with plain mini-batch SGD.
//
// Within a stage the villi network is trained first; its slide-level
// predictions then form the fourth input channel of the lesion network.
// Stage 1 freezes both encoders, stage 2 trains everything.

#include <functional>
#include <numeric>

#include <json.hpp>

#include "gtd/segnet/infer.hpp"
#include "gtd/segnet/loss.hpp"

namespace gtd::segnet {

struct TrainingSlide {
    std::string id;
    slideio::SlideImage image;
    slideio::LabelMask mask;
};

struct EpochLog {
    int epoch = 0;
    int stage = 0;
    std::string network;
    double loss_pixel = 0.0;
    double loss_lesion = 0.0;
    double loss_total = 0.0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["epoch"] = epoch;
        j["stage"] = stage;
        j["network"] = network;
        j["loss_pixel"] = loss_pixel;
        j["loss_lesion"] = loss_lesion;
        j["loss_total"] = loss_total;
        return j;
    }
};

struct TrainResult {
    SegModelParams params;
    std::vector<EpochLog> log;
};

namespace detail {

struct SlideCache {
    Raster rgb;                   // working resolution
    Raster villi_pred;            // working resolution, filled after the villi net
    std::array<Raster, 3> truth;  // fraction of villi / edema / hyperplasia pixels per working pixel
    slideio::PatchGrid grid;
};

struct Sample {
    std::size_t slide;
    slideio::PatchOrigin origin;
};

inline SlideCache make_cache(const TrainingSlide& s, const ModelConfig& cfg, double overlap) {
    if (s.image.width != s.mask.width || s.image.height != s.mask.height)
        throw ContractError("training slide '" + s.id + "': image and mask dims differ");
    SlideCache c;
    c.rgb = box_downsample(s.image, cfg.downsample);
    c.truth[0] = box_downsample(from_binary(slideio::villi_region(s.mask)), cfg.downsample);
    c.truth[1] = box_downsample(from_binary(slideio::label_equals(s.mask, slideio::kEdema)), cfg.downsample);
    c.truth[2] = box_downsample(from_binary(slideio::label_equals(s.mask, slideio::kHyperplasia)), cfg.downsample);
    c.grid = slideio::filter_background(slideio::tile(s.image, cfg.patch_size, overlap), s.image);
    return c;
}

/// Binary target at working resolution for the pyramid's mid level.
inline Tensor sample_target(const Raster& truth, const ModelConfig& cfg, const PyramidLevel& mid) {
    const Raster r = sample_square(truth, cfg.downsample, mid.center_x, mid.center_y, mid.extent, cfg.work_px());
    Tensor t = Tensor::matrix(static_cast<std::int64_t>(r.data.size()), 1);
    for (std::size_t i = 0; i < r.data.size(); ++i) t[i] = r.data[i] >= 0.5 ? 1.0 : 0.0;
    return t;
}

/// Per-channel gain and gamma on the RGB channels of every level.
inline void jitter_colors(Pyramid& p, const ColorJitter& cj, num::Rng& rng) {
    std::array<double, 3> gain{}, gamma{};
    for (int c = 0; c < 3; ++c) {
        gain[c] = rng.uniform(1.0 - cj.gain, 1.0 + cj.gain);
        gamma[c] = rng.uniform(1.0 - cj.gamma, 1.0 + cj.gamma);
    }
    for (auto& l : p.levels)
        for (int y = 0; y < l.raster.height; ++y)
            for (int x = 0; x < l.raster.width; ++x)
                for (int c = 0; c < 3; ++c) {
                    double& v = l.raster(x, y, c);
                    v = std::clamp(gain[c] * std::pow(v, gamma[c]), 0.0, 1.0);
                }
}

inline void train_network(SegModelParams& params, Net net, std::vector<SlideCache>& caches,
                          const std::vector<Sample>& samples, const TrainConfig& cfg,
                          const std::function<void(const EpochLog&)>& on_epoch, std::vector<EpochLog>& log,
                          const std::function<bool(const std::string&)>& scope = {}) {
    const auto& mc = params.config;
    const auto l = layout(net);
    const std::string name = net == Net::Villi ? "villi" : "lesion";
    const bool freeze = cfg.stage == 1;
    auto trainable = [&](const std::string& n) {
        const bool mine = starts_with(n, l.encoder) || starts_with(n, l.decoder) ||
                          std::any_of(l.heads.begin(), l.heads.end(), [&](const auto& h) { return starts_with(n, h); });
        if (scope) return mine && scope(n);
        return mine && !(freeze && is_encoder_param(n));
    };
    std::vector<const LossConfig*> losses;
    std::vector<int> truth_index;
    if (net == Net::Villi) {
        losses = {&cfg.losses.villi};
        truth_index = {0};
    } else {
        losses = {&cfg.losses.edema, &cfg.losses.hyperplasia};
        truth_index = {1, 2};
    }

    num::Rng rng(num::derive_seed(cfg.seed, "train/" + name + "/stage" + std::to_string(cfg.stage)));
    std::vector<std::size_t> order(samples.size());
    std::size_t batch_id = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        EpochLog ep{epoch, cfg.stage, name, 0.0, 0.0, 0.0};
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_id) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::map<std::string, Tensor> grads;
            for (std::size_t k = start; k < end; ++k) {
                const auto& s = samples[order[k]];
                auto& cache = caches[s.slide];
                const double factor = cfg.scale_factors[rng.index(cfg.scale_factors.size())];
                const Raster& input_raster = net == Net::Villi ? cache.rgb : cache.villi_pred;
                Pyramid pyr = extract_pyramid(input_raster, mc, s.origin.col + mc.patch_size / 2.0,
                                              s.origin.row + mc.patch_size / 2.0, factor);
                if (cfg.color.enabled) jitter_colors(pyr, cfg.color, rng);

                GradTape tape;
                Binding b(tape, params, trainable);
                auto f = net_forward(tape, b, mc, net, pyr);
                Var total;
                for (std::size_t h = 0; h < f.logits.size(); ++h) {
                    auto tl = tape_loss_total(tape, f.logits[h],
                                              sample_target(cache.truth[static_cast<std::size_t>(truth_index[h])], mc,
                                                            pyr.mid()),
                                              *losses[h]);
                    total = h == 0 ? tl.total : tape.add(total, tl.total);
                    ep.loss_pixel += tl.parts.pixel;
                    ep.loss_lesion += tl.parts.lesion;
                }
                const double v = tape.value(total)[0];
                if (!std::isfinite(v))
                    throw NumericError("non-finite loss in batch " + std::to_string(batch_id) + " (stage " +
                                       std::to_string(cfg.stage) + ", " + name + " network, epoch " +
                                       std::to_string(epoch) + ")");
                ep.loss_total += v;
                tape.backward(total);
                for (const auto& [pname, var] : b.vars()) {
                    if (!tape.requires_grad(var)) continue;
                    auto it = grads.find(pname);
                    if (it == grads.end())
                        grads.emplace(pname, tape.grad(var));
                    else
                        it->second += tape.grad(var);
                }
            }
            const double step = cfg.learning_rate / static_cast<double>(end - start);
            for (auto& [pname, g] : grads) {
                if (!g.all_finite())
                    throw NumericError("non-finite gradient for '" + pname + "' in batch " + std::to_string(batch_id));
                auto& t = params.at(pname);
                for (std::size_t i = 0; i < t.size(); ++i) t[i] -= step * g[i];
            }
        }
        const double n = static_cast<double>(samples.size());
        ep.loss_pixel /= n;
        ep.loss_lesion /= n;
        ep.loss_total /= n;
        log.push_back(ep);
        if (on_epoch) on_epoch(ep);
    }
}

} // namespace detail

/// One training stage over `data`. Stage 2 requires parameters that completed
/// stage 1. Returned parameters are rounded to float32. A `scope` predicate,
/// when given, replaces the stage's freezing rule.
inline TrainResult train(const std::vector<TrainingSlide>& data, const SegModelParams& start, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {},
                         const std::function<bool(const std::string&)>& scope = {}) {
    cfg.validate();
    if (data.empty()) throw ContractError("train: empty dataset");
    if (cfg.stage == 2 && start.trained_stage < 1)
        throw PreconditionError("train: stage 2 needs stage-1 parameters (run stage 1 first)");

    TrainResult out{start, {}};
    std::vector<detail::SlideCache> caches;
    std::vector<detail::Sample> samples;
    for (std::size_t i = 0; i < data.size(); ++i) {
        caches.push_back(detail::make_cache(data[i], start.config, cfg.overlap_rate));
        const auto& g = caches.back().grid;
        for (std::size_t k = 0; k < g.size(); ++k)
            if (g.valid[k]) samples.push_back({i, g.origins[k]});
    }
    if (samples.empty()) throw ContractError("train: no valid patches in the dataset");

    detail::train_network(out.params, Net::Villi, caches, samples, cfg, on_epoch, out.log, scope);

    InferOptions opt;
    opt.overlap_rate = cfg.overlap_rate;
    opt.lesions = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto villi = infer_slide(data[i].image, out.params, opt).villi;
        caches[i].villi_pred = stack_channels(caches[i].rgb, box_downsample(from_plane(villi), start.config.downsample));
    }
    detail::train_network(out.params, Net::Lesion, caches, samples, cfg, on_epoch, out.log, scope);

    out.params.round_to_f32();
    out.params.trained_stage = cfg.stage;
    return out;
}

} // namespace gtd::segnet
