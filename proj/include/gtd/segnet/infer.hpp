#pragma once

// Slide-level inference: tile, run the cascade per patch with the slide as
// pyramid context, mean-merge overlapping patch maps at full resolution.

#include <optional>

#include "gtd/segnet/model.hpp"
#include "gtd/slideio/tiling.hpp"

namespace gtd::segnet {

/// Running per-pixel sum and count over patch placements.
class MeanMerge {
public:
    MeanMerge(int width, int height)
        : width_(width), height_(height), sum_(static_cast<std::size_t>(width) * height, 0.0),
          count_(sum_.size(), 0) {}

    template <class T>
    void add(const slideio::Plane<T>& patch, int x0, int y0) {
        if (x0 < 0 || y0 < 0 || x0 + patch.width > width_ || y0 + patch.height > height_)
            throw ContractError("MeanMerge: patch at (" + std::to_string(x0) + ", " + std::to_string(y0) +
                                ") leaves the slide");
        for (int y = 0; y < patch.height; ++y)
            for (int x = 0; x < patch.width; ++x) {
                const auto i = static_cast<std::size_t>(y0 + y) * width_ + (x0 + x);
                sum_[i] += static_cast<double>(patch(x, y));
                ++count_[i];
            }
    }

    /// Uncovered pixels come out as 0.
    slideio::Plane<double> mean() const {
        slideio::Plane<double> out(width_, height_);
        for (std::size_t i = 0; i < sum_.size(); ++i) out.data[i] = count_[i] ? sum_[i] / count_[i] : 0.0;
        return out;
    }

    slideio::ProbMap mean_f32() const {
        slideio::ProbMap out(width_, height_);
        for (std::size_t i = 0; i < sum_.size(); ++i)
            out.data[i] = count_[i] ? static_cast<float>(sum_[i] / count_[i]) : 0.0f;
        return out;
    }

private:
    int width_, height_;
    std::vector<double> sum_;
    std::vector<int> count_;
};

/// Encoder tokens placed on a slide-wide token lattice (one cell per
/// token_size * downsample slide pixels). Cells seen by several patches hold
/// the mean.
struct TokenGrid {
    int rows = 0;
    int cols = 0;
    int dim = 0;
    int cell_px = 0;
    std::vector<double> values;  // rows x cols x dim
    std::vector<int> counts;

    TokenGrid() = default;
    TokenGrid(int r, int c, int d, int cell)
        : rows(r), cols(c), dim(d), cell_px(cell), values(static_cast<std::size_t>(r) * c * d, 0.0),
          counts(static_cast<std::size_t>(r) * c, 0) {}

    bool covered(int r, int c) const { return counts[static_cast<std::size_t>(r) * cols + c] > 0; }
    const double* at(int r, int c) const { return &values[(static_cast<std::size_t>(r) * cols + c) * dim]; }
    std::size_t covered_count() const {
        return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](int n) { return n > 0; }));
    }
};

struct InferOptions {
    double overlap_rate = 0.5;
    bool lesions = true;          // false: villi map only
    bool collect_tokens = false;  // lesion-encoder tokens of valid patches
    slideio::BackgroundFilter filter;
};

struct SlidePrediction {
    slideio::ProbMap villi;
    slideio::ProbMap edema;
    slideio::ProbMap hyperplasia;
    slideio::PatchGrid grid;
    TokenGrid tokens;
};

namespace detail {

inline Pyramid slide_pyramid(const Raster& work, const ModelConfig& cfg, const slideio::PatchOrigin& o) {
    return extract_pyramid(work, cfg, o.col + cfg.patch_size / 2.0, o.row + cfg.patch_size / 2.0);
}

inline void accumulate_tokens(TokenGrid& grid, const Tensor& tokens, const ModelConfig& cfg,
                              const slideio::PatchOrigin& o) {
    const int g = cfg.grid();
    const int r0 = static_cast<int>(std::lround(static_cast<double>(o.row) / grid.cell_px));
    const int c0 = static_cast<int>(std::lround(static_cast<double>(o.col) / grid.cell_px));
    for (int ty = 0; ty < g; ++ty)
        for (int tx = 0; tx < g; ++tx) {
            const int r = r0 + ty, c = c0 + tx;
            if (r >= grid.rows || c >= grid.cols) continue;
            const auto cell = static_cast<std::size_t>(r) * grid.cols + c;
            for (int d = 0; d < grid.dim; ++d)
                grid.values[cell * grid.dim + d] += tokens.at(ty * g + tx, d);
            ++grid.counts[cell];
        }
}

} // namespace detail

inline SlidePrediction infer_slide(const slideio::SlideImage& slide, const SegModelParams& params,
                                   const InferOptions& opt = {}) {
    const auto& cfg = params.config;
    SlidePrediction out;
    out.grid = slideio::tile(slide, cfg.patch_size, opt.overlap_rate);
    if (opt.collect_tokens) out.grid = slideio::filter_background(out.grid, slide, opt.filter);
    const Raster work = box_downsample(slide, cfg.downsample);

    MeanMerge villi(slide.width, slide.height);
    for (const auto& o : out.grid.origins) {
        auto probs = net_probabilities(params, Net::Villi, detail::slide_pyramid(work, cfg, o));
        villi.add(upsample_work_map(probs[0], cfg.work_px(), cfg.downsample), o.col, o.row);
    }
    out.villi = villi.mean_f32();
    if (!opt.lesions) return out;

    const Raster lesion_in = stack_channels(work, box_downsample(from_plane(out.villi), cfg.downsample));
    MeanMerge edema(slide.width, slide.height), hyper(slide.width, slide.height);
    const int cell = cfg.token_size * cfg.downsample;
    if (opt.collect_tokens)
        out.tokens = TokenGrid((slide.height + cell - 1) / cell, (slide.width + cell - 1) / cell, cfg.embed_dim, cell);
    for (std::size_t i = 0; i < out.grid.size(); ++i) {
        const auto& o = out.grid.origins[i];
        const Pyramid pyr = detail::slide_pyramid(lesion_in, cfg, o);
        GradTape tape;
        Binding b(tape, params, [](const std::string&) { return false; });
        auto f = net_forward(tape, b, cfg, Net::Lesion, pyr);
        edema.add(upsample_work_map(num::ops::sigmoid(tape.value(f.logits[0])), cfg.work_px(), cfg.downsample), o.col,
                  o.row);
        hyper.add(upsample_work_map(num::ops::sigmoid(tape.value(f.logits[1])), cfg.work_px(), cfg.downsample), o.col,
                  o.row);
        if (opt.collect_tokens && out.grid.valid[i])
            detail::accumulate_tokens(out.tokens, tape.value(f.encoder.tokens), cfg, o);
    }
    out.edema = edema.mean_f32();
    out.hyperplasia = hyper.mean_f32();
    if (opt.collect_tokens)
        for (std::size_t c = 0; c < out.tokens.counts.size(); ++c)
            if (out.tokens.counts[c] > 1)
                for (int d = 0; d < out.tokens.dim; ++d)
                    out.tokens.values[c * out.tokens.dim + d] /= out.tokens.counts[c];
    return out;
}

} // namespace gtd::segnet
