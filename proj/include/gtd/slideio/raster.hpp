#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gtd/error.hpp"

namespace gtd::slideio {

/// Label codes of a LabelMask.
enum Label : std::uint8_t { kBlank = 0, kVilli = 1, kEdema = 2, kHyperplasia = 3 };

/// 8-bit RGB raster, row-major, interleaved.
struct SlideImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;
    std::string mpp_tag = "4x";

    SlideImage() = default;
    SlideImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {
        if (w <= 0 || h <= 0) throw ContractError("SlideImage dims must be positive");
    }

    std::uint8_t* px(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
    const std::uint8_t* px(int x, int y) const { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }

    /// BT.601 luma in 8-bit units.
    double gray(int x, int y) const {
        const auto* p = px(x, y);
        return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }

    bool operator==(const SlideImage& o) const {
        return width == o.width && height == o.height && rgb == o.rgb;
    }
};

/// Generic single-channel raster.
template <class T>
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Plane() = default;
    Plane(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
        if (w <= 0 || h <= 0) throw ContractError("raster dims must be positive");
    }

    T& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }

    bool operator==(const Plane& o) const = default;
};

/// Per-pixel class codes {0 blank, 1 villi, 2 edema, 3 hyperplasia}.
using LabelMask = Plane<std::uint8_t>;
/// Probability raster in [0, 1].
using ProbMap = Plane<float>;
using BinaryMask = Plane<std::uint8_t>;

/// Villous region as seen by the villi network: villi stroma plus the
/// edema cisterns it contains.
inline BinaryMask villi_region(const LabelMask& m) {
    BinaryMask out(m.width, m.height);
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = (m.data[i] == kVilli || m.data[i] == kEdema) ? 1 : 0;
    return out;
}

inline BinaryMask label_equals(const LabelMask& m, std::uint8_t code) {
    BinaryMask out(m.width, m.height);
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = m.data[i] == code ? 1 : 0;
    return out;
}

inline BinaryMask threshold(const ProbMap& p, double thr = 0.5) {
    BinaryMask out(p.width, p.height);
    for (std::size_t i = 0; i < p.size(); ++i) out.data[i] = p.data[i] >= thr ? 1 : 0;
    return out;
}

} // namespace gtd::slideio
