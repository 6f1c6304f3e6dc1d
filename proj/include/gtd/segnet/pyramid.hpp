#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "gtd/segnet/config.hpp"
#include "gtd/slideio/raster.hpp"

namespace gtd::segnet {

/// Multi-channel double raster, interleaved (y, x, c).
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Raster() = default;
    Raster(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    double& operator()(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double operator()(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at integers),
    /// border-replicated.
    double bilinear(double u, double v, int c) const {
        u = std::clamp(u, 0.0, width - 1.0);
        v = std::clamp(v, 0.0, height - 1.0);
        const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
        const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
        const double fx = u - x0, fy = v - y0;
        return (1 - fy) * ((1 - fx) * (*this)(x0, y0, c) + fx * (*this)(x1, y0, c)) +
               fy * ((1 - fx) * (*this)(x0, y1, c) + fx * (*this)(x1, y1, c));
    }

    bool operator==(const Raster&) const = default;
};

/// RGB / 255.
inline Raster normalize_rgb(const slideio::SlideImage& img) {
    Raster r(img.width, img.height, 3);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) r.data[i] = img.rgb[i] / 255.0;
    return r;
}

inline Raster crop(const Raster& src, int x0, int y0, int w, int h) {
    Raster out(w, h, src.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < src.channels; ++c) out(x, y, c) = src(x0 + x, y0 + y, c);
    return out;
}

/// Box average over factor x factor blocks. Partial blocks at the border are
/// averaged over the pixels they contain.
inline Raster box_downsample(const Raster& src, int factor) {
    const int w = (src.width + factor - 1) / factor, h = (src.height + factor - 1) / factor;
    Raster out(w, h, src.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int xe = std::min(src.width, (x + 1) * factor), ye = std::min(src.height, (y + 1) * factor);
            const double n = static_cast<double>((xe - x * factor) * (ye - y * factor));
            for (int c = 0; c < src.channels; ++c) {
                double s = 0.0;
                for (int yy = y * factor; yy < ye; ++yy)
                    for (int xx = x * factor; xx < xe; ++xx) s += src(xx, yy, c);
                out(x, y, c) = s / n;
            }
        }
    return out;
}

inline Raster box_downsample(const slideio::SlideImage& img, int factor) {
    return box_downsample(normalize_rgb(img), factor);
}

inline Raster from_plane(const slideio::ProbMap& p) {
    Raster r(p.width, p.height, 1);
    for (std::size_t i = 0; i < p.size(); ++i) r.data[i] = p.data[i];
    return r;
}

inline Raster from_binary(const slideio::BinaryMask& m) {
    Raster r(m.width, m.height, 1);
    for (std::size_t i = 0; i < m.size(); ++i) r.data[i] = m.data[i] ? 1.0 : 0.0;
    return r;
}

/// Appends the channels of `b` to `a`; both must share dims.
inline Raster stack_channels(const Raster& a, const Raster& b) {
    if (a.width != b.width || a.height != b.height) throw ContractError("stack_channels: dims differ");
    Raster out(a.width, a.height, a.channels + b.channels);
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            for (int c = 0; c < a.channels; ++c) out(x, y, c) = a(x, y, c);
            for (int c = 0; c < b.channels; ++c) out(x, y, a.channels + c) = b(x, y, c);
        }
    return out;
}

/// Samples an n x n grid covering the world square of side `extent` (slide
/// pixels) centred at (cx, cy) from `src`, which holds the slide at 1/`scale`
/// resolution. When one output pixel spans more than one source pixel the
/// output averages ceil(step)^2 bilinear taps.
inline Raster sample_square(const Raster& src, double scale, double cx, double cy, double extent, int n) {
    Raster out(n, n, src.channels);
    const double step = extent / n / scale;  // source pixels per output pixel
    const int taps = std::max(1, static_cast<int>(std::ceil(step - 1e-9)));
    const double u0 = (cx - extent / 2.0) / scale - 0.5;
    const double v0 = (cy - extent / 2.0) / scale - 0.5;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < src.channels; ++c) {
                double s = 0.0;
                for (int ty = 0; ty < taps; ++ty)
                    for (int tx = 0; tx < taps; ++tx) {
                        const double u = u0 + (x + (tx + 0.5) / taps) * step;
                        const double v = v0 + (y + (ty + 0.5) / taps) * step;
                        s += src.bilinear(u, v, c);
                    }
                out(x, y, c) = s / (taps * taps);
            }
    return out;
}

struct PyramidLevel {
    double center_x = 0.0;  // world (slide pixel) coordinates
    double center_y = 0.0;
    double extent = 0.0;
    Raster raster;          // work_px x work_px x channels
};

/// Three center-aligned crops ordered small -> large extent. The middle one is
/// the query scale.
struct Pyramid {
    std::array<PyramidLevel, 3> levels;

    const PyramidLevel& mid() const { return levels[1]; }
    int channels() const { return levels[1].raster.channels; }

    void validate(int work_px) const {
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& l = levels[i];
            if (l.raster.width != work_px || l.raster.height != work_px)
                throw ContractError("pyramid level " + std::to_string(i) + " is not " + std::to_string(work_px) + "px");
            if (l.raster.channels != levels[0].raster.channels) throw ContractError("pyramid channel counts differ");
            if (std::abs(l.center_x - levels[1].center_x) > 1e-6 || std::abs(l.center_y - levels[1].center_y) > 1e-6)
                throw ContractError("misaligned pyramid: level " + std::to_string(i) + " centre (" +
                                    std::to_string(l.center_x) + ", " + std::to_string(l.center_y) +
                                    ") differs from mid centre (" + std::to_string(levels[1].center_x) + ", " +
                                    std::to_string(levels[1].center_y) + ")");
        }
        if (!(levels[0].extent < levels[1].extent && levels[1].extent < levels[2].extent))
            throw ContractError("pyramid levels must be ordered small -> large");
    }
};

/// `src` is the slide at working resolution (1/downsample of slide pixels).
/// `factor` rescales the base extent (multi-scale augmentation).
inline Pyramid extract_pyramid(const Raster& src, const ModelConfig& cfg, double cx, double cy, double factor = 1.0) {
    Pyramid p;
    for (std::size_t i = 0; i < 3; ++i) {
        const double extent = cfg.patch_size * factor * cfg.scales[i];
        p.levels[i] = {cx, cy, extent, sample_square(src, cfg.downsample, cx, cy, extent, cfg.work_px())};
    }
    return p;
}

} // namespace gtd::segnet
