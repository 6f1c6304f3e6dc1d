#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtd/error.hpp"

namespace gtd::segnet {

/// Toy cascaded segmenter geometry.
///
/// A patch of `patch_size` slide pixels is box-downsampled by `downsample`
/// into a working raster; tokens are `token_size` x `token_size` blocks of it.
/// The pyramid samples the same world centre at extents scale * patch_size.
struct ModelConfig {
    int patch_size = 512;
    int downsample = 4;
    int token_size = 8;
    int embed_dim = 64;
    int blocks = 2;
    int pixel_features = 16;  // width of the per-pixel decoder branch
    std::vector<double> scales{0.5, 1.0, 2.0};
    std::uint64_t init_seed = 0;

    int work_px() const { return patch_size / downsample; }
    int grid() const { return work_px() / token_size; }
    int tokens() const { return grid() * grid(); }

    void validate() const {
        if (patch_size <= 0 || downsample <= 0 || token_size <= 0 || embed_dim <= 0 || blocks < 0 || pixel_features <= 0)
            throw ContractError("ModelConfig: sizes must be positive");
        if (patch_size % downsample != 0 || work_px() % token_size != 0)
            throw ContractError("ModelConfig: patch_size must divide into downsample * token_size blocks");
        if (scales.size() != 3 || !(scales[0] < scales[1] && scales[1] < scales[2]))
            throw ContractError("ModelConfig: need three ascending scales (small, mid, large)");
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Hybrid loss weights. Class weights apply to the weighted BCE term, the
/// lambdas mix BCE and soft Dice.
struct LossConfig {
    double w0 = 1.0;
    double w1 = 1.0;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double epsilon = 1.0;

    void validate() const {
        if (!(w0 > 0.0 && w1 > 0.0)) throw ContractError("LossConfig: class weights must be positive");
        if (!(lambda1 >= 0.0 && lambda2 >= 0.0)) throw ContractError("LossConfig: lambdas must be non-negative");
        if (!(lambda1 + lambda2 > 0.0)) throw ContractError("LossConfig: lambda1 and lambda2 are both zero");
        if (!(epsilon > 0.0)) throw ContractError("LossConfig: epsilon must be positive");
    }

    bool operator==(const LossConfig&) const = default;
};

struct LossSet {
    LossConfig villi{1.0, 1.0, 1.0, 1.0, 1.0};
    LossConfig edema{1.0, 2.0, 1.0, 1.0, 1.0};
    LossConfig hyperplasia{1.0, 5.0, 1.0, 1.0, 1.0};

    bool operator==(const LossSet&) const = default;
};

struct ColorJitter {
    bool enabled = false;
    double gain = 0.08;   // per-channel gain in [1-gain, 1+gain]
    double gamma = 0.08;  // per-channel gamma in [1-gamma, 1+gamma]

    bool operator==(const ColorJitter&) const = default;
};

struct TrainConfig {
    int stage = 1;
    double learning_rate = 0.3;
    int batch_size = 4;
    int epochs = 12;
    double overlap_rate = 0.5;
    std::vector<double> scale_factors{1.0, 1.2, 0.8};
    std::uint64_t seed = 0;
    ColorJitter color;
    LossSet losses;

    static TrainConfig defaults_for_stage(int stage) {
        TrainConfig c;
        c.stage = stage;
        c.learning_rate = stage == 1 ? 0.3 : 0.01;
        c.epochs = stage == 1 ? 12 : 4;
        return c;
    }

    void validate() const {
        if (stage != 1 && stage != 2) throw ContractError("TrainConfig: stage must be 1 or 2");
        if (!(learning_rate > 0.0) || batch_size <= 0 || epochs <= 0)
            throw ContractError("TrainConfig: learning_rate, batch_size and epochs must be positive");
        if (scale_factors.empty()) throw ContractError("TrainConfig: scale_factors empty");
        losses.villi.validate();
        losses.edema.validate();
        losses.hyperplasia.validate();
    }

    bool operator==(const TrainConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, patch_size, downsample, token_size, embed_dim, blocks,
                                                pixel_features, scales, init_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, w0, w1, lambda1, lambda2, epsilon)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossSet, villi, edema, hyperplasia)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ColorJitter, enabled, gain, gamma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, stage, learning_rate, batch_size, epochs, overlap_rate,
                                                scale_factors, seed, color, losses)

} // namespace gtd::segnet
