#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gtd/slideio/raster.hpp"

namespace gtd::slideio {

struct PatchOrigin {
    int row = 0;  // y of the top-left corner
    int col = 0;  // x of the top-left corner
};

struct PatchGrid {
    int patch_size = 512;
    int stride = 512;
    double overlap_rate = 0.0;
    int rows = 0;  // patches along y
    int cols = 0;  // patches along x
    std::vector<PatchOrigin> origins;  // row-major over (rows, cols)
    std::vector<bool> valid;
    std::vector<double> variances;
    double threshold = 0.0;

    std::size_t size() const { return origins.size(); }
    std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true)); }
};

/// stride = round(patch * (1 - overlap)), at least 1.
inline int stride_for(int patch_size, double overlap_rate) {
    if (!(overlap_rate >= 0.0 && overlap_rate <= 0.9))
        throw ContractError("overlap rate must be in [0, 0.9], got " + std::to_string(overlap_rate));
    return std::max(1, static_cast<int>(std::lround(patch_size * (1.0 - overlap_rate))));
}

/// 1 + ceil((extent - patch) / stride) origins along one axis; the last one is
/// clamped to extent - patch so the patch stays inside the slide.
inline std::vector<int> axis_origins(int extent, int patch, int stride) {
    if (patch > extent)
        throw ContractError("patch size " + std::to_string(patch) + " exceeds slide extent " + std::to_string(extent));
    const int count = 1 + (extent - patch + stride - 1) / stride;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(std::min(i * stride, extent - patch));
    return out;
}

inline PatchGrid tile(int width, int height, int patch_size, double overlap_rate) {
    PatchGrid g;
    g.patch_size = patch_size;
    g.overlap_rate = overlap_rate;
    g.stride = stride_for(patch_size, overlap_rate);
    const auto xs = axis_origins(width, patch_size, g.stride);
    const auto ys = axis_origins(height, patch_size, g.stride);
    g.rows = static_cast<int>(ys.size());
    g.cols = static_cast<int>(xs.size());
    for (int y : ys)
        for (int x : xs) g.origins.push_back({y, x});
    g.valid.assign(g.origins.size(), true);
    g.variances.assign(g.origins.size(), 0.0);
    return g;
}

inline PatchGrid tile(const SlideImage& slide, int patch_size = 512, double overlap_rate = 0.0) {
    return tile(slide.width, slide.height, patch_size, overlap_rate);
}

/// Population variance of BT.601 luma over a patch, in 8-bit-squared units.
inline double patch_gray_variance(const SlideImage& slide, PatchOrigin o, int patch) {
    double sum = 0.0, sq = 0.0;
    for (int y = o.row; y < o.row + patch; ++y)
        for (int x = o.col; x < o.col + patch; ++x) {
            const double v = slide.gray(x, y);
            sum += v;
            sq += v * v;
        }
    const double n = static_cast<double>(patch) * patch;
    const double m = sum / n;
    return std::max(0.0, sq / n - m * m);
}

/// Otsu split over a 256-bin histogram of the values. Returns nullopt-like NaN
/// when fewer than two distinct values exist.
inline double otsu_threshold(const std::vector<double>& values, int bins = 256) {
    if (values.empty()) return std::nan("");
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double mn = *mn_it, mx = *mx_it;
    if (!(mx > mn)) return std::nan("");
    std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
    const double width = (mx - mn) / bins;
    for (double v : values) {
        int b = static_cast<int>((v - mn) / width);
        hist[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1.0;
    }
    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int i = 0; i < bins; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = 0;
    for (int t = 0; t < bins - 1; ++t) {
        w0 += hist[static_cast<std::size_t>(t)];
        sum0 += t * hist[static_cast<std::size_t>(t)];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = t;
        }
    }
    return mn + (best_bin + 1) * width;
}

struct BackgroundFilter {
    double tau0 = 5.0;     // floor, 8-bit-squared units
    double ceiling = 50.0; // the adaptive split never exceeds this
};

/// Marks a patch valid when its luma variance >= max(tau0, min(otsu, ceiling)),
/// where otsu is the split of this slide's patch-variance histogram. A
/// degenerate histogram falls back to tau0.
inline PatchGrid filter_background(PatchGrid grid, const SlideImage& slide, BackgroundFilter cfg = {}) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& o = grid.origins[i];
        if (o.row + grid.patch_size > slide.height || o.col + grid.patch_size > slide.width)
            throw ContractError("filter_background: grid does not belong to slide");
        grid.variances[i] = patch_gray_variance(slide, o, grid.patch_size);
    }
    const double otsu = otsu_threshold(grid.variances);
    double thr = cfg.tau0;
    if (std::isfinite(otsu)) thr = std::max(cfg.tau0, std::min(otsu, cfg.ceiling));
    grid.threshold = thr;
    for (std::size_t i = 0; i < grid.size(); ++i) grid.valid[i] = grid.variances[i] >= thr;
    return grid;
}

} // namespace gtd::slideio
