#pragma once

// Synthetic slide generator. Three class regimes:
//   0 Normal abortion      well-formed villi, at most ~2% lesion pixels
//   1 Hydatidiform mole    enlarged villi, pale edema cisterns in >= 40% of them,
//                          hyperplastic rims around about half of them
//   2 Choriocarcinoma      dense hyperplasia sheets, sparse or absent villi
//
// Shapes are star-shaped blobs r(theta) = R * (1 + sum_k a_k cos(k theta + phi_k)).
// An edema cistern is its host villus scaled about the centre, so the cistern
// covers scale^2 of the host area. A rim is the band r(theta) <= d < r(theta) + w.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "gtd/numerics/rng.hpp"
#include "gtd/slideio/raster.hpp"

namespace gtd::slideio {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct IntRange {
    int lo = 0;
    int hi = 0;
};

struct SlideSpec {
    std::uint64_t seed = 0;
    int width = 1024;
    int height = 1024;
    int class_label = 0;
    IntRange villi_count{8, 12};
    Range villus_radius{45.0, 85.0};
    double edema_fraction = 0.0;        // share of villi hosting a cistern
    Range cistern_scale{0.5, 0.75};     // cistern radius / host radius
    double hyperplasia_fraction = 0.1;  // share of villi with a hyperplastic rim
    Range rim_width{2.0, 3.0};
    IntRange sheet_count{0, 0};
    Range sheet_radius{100.0, 160.0};
    int min_dim = 512;

    static SlideSpec defaults(int class_label, std::uint64_t seed, int width = 1024, int height = 1024) {
        SlideSpec s;
        s.seed = seed;
        s.width = width;
        s.height = height;
        s.class_label = class_label;
        switch (class_label) {
        case 0:
            break;
        case 1:
            s.villi_count = {5, 8};
            s.villus_radius = {70.0, 110.0};
            s.edema_fraction = 0.6;
            s.hyperplasia_fraction = 0.5;
            s.rim_width = {6.0, 10.0};
            break;
        case 2:
            s.villi_count = {0, 2};
            s.villus_radius = {40.0, 70.0};
            s.hyperplasia_fraction = 0.0;
            s.sheet_count = {2, 3};
            break;
        default:
            throw ContractError("class_label must be 0, 1 or 2, got " + std::to_string(class_label));
        }
        return s;
    }

    /// Expected edema pixels / host-villus pixels, before discretisation.
    Range edema_area_band() const { return {cistern_scale.lo * cistern_scale.lo, cistern_scale.hi * cistern_scale.hi}; }
};

struct BlobShape {
    static constexpr int kHarmonics = 5;  // k = 2..6
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.0;
    std::array<double, kHarmonics> amp{};
    std::array<double, kHarmonics> phase{};

    double radius_at(double theta) const {
        double f = 1.0;
        for (int k = 0; k < kHarmonics; ++k) f += amp[k] * std::cos((k + 2) * theta + phase[k]);
        return radius * f;
    }

    double bound() const {
        double s = 1.0;
        for (double a : amp) s += std::abs(a);
        return radius * s;
    }

    /// Distance of (x, y) from the centre and the boundary radius along that direction.
    std::pair<double, double> polar(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        return {std::hypot(dx, dy), radius_at(std::atan2(dy, dx))};
    }
};

struct VillusGeom {
    BlobShape shape;
    double cistern_scale = 0.0;  // 0: no cistern
    double rim_width = 0.0;      // 0: no rim
};

struct SlideGeometry {
    std::vector<VillusGeom> villi;
    std::vector<BlobShape> sheets;
};

struct GeneratedSlide {
    SlideImage image;
    LabelMask mask;
    SlideGeometry geometry;
};

/// Label of a pixel centre given the geometry. Shapes never overlap by construction.
inline std::uint8_t geometry_label(const SlideGeometry& g, double x, double y) {
    for (const auto& s : g.sheets) {
        if (std::hypot(x - s.cx, y - s.cy) > s.bound()) continue;
        auto [d, r] = s.polar(x, y);
        if (d < r) return kHyperplasia;
    }
    for (const auto& v : g.villi) {
        if (std::hypot(x - v.shape.cx, y - v.shape.cy) > v.shape.bound() + v.rim_width) continue;
        auto [d, r] = v.shape.polar(x, y);
        if (d < v.cistern_scale * r) return kEdema;
        if (d < r) return kVilli;
        if (d < r + v.rim_width) return kHyperplasia;
    }
    return kBlank;
}

namespace detail {

inline BlobShape random_blob(num::Rng& rng, Range radius, double max_amp) {
    BlobShape b;
    b.radius = rng.uniform(radius.lo, radius.hi);
    for (int k = 0; k < BlobShape::kHarmonics; ++k) {
        b.amp[k] = rng.uniform(0.0, max_amp) / (1.0 + 0.5 * k);
        b.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return b;
}

struct Placed {
    double cx, cy, r;
};

inline bool place(num::Rng& rng, const SlideSpec& spec, double r, std::vector<Placed>& placed, double& cx,
                  double& cy) {
    constexpr double kMargin = 6.0;
    const double edge = std::min(r + 4.0, 0.5 * std::min(spec.width, spec.height));
    for (int attempt = 0; attempt < 300; ++attempt) {
        cx = rng.uniform(edge, spec.width - edge);
        cy = rng.uniform(edge, spec.height - edge);
        bool ok = true;
        for (const auto& p : placed)
            if (std::hypot(cx - p.cx, cy - p.cy) < r + p.r + kMargin) {
                ok = false;
                break;
            }
        if (ok) {
            placed.push_back({cx, cy, r});
            return true;
        }
    }
    return false;
}

inline std::vector<std::size_t> choose_subset(num::Rng& rng, std::size_t n, double fraction) {
    auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
    if (fraction > 0.0 && n > 0) count = std::max<std::size_t>(count, 1);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(std::min(count, n));
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline std::uint8_t clamp8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

} // namespace detail

inline SlideGeometry generate_geometry(const SlideSpec& spec, num::Rng& rng) {
    SlideGeometry g;
    std::vector<detail::Placed> placed;

    const int sheets = spec.sheet_count.hi > 0 ? static_cast<int>(rng.integer(spec.sheet_count.lo, spec.sheet_count.hi)) : 0;
    for (int i = 0; i < sheets; ++i) {
        auto b = detail::random_blob(rng, spec.sheet_radius, 0.12);
        if (detail::place(rng, spec, b.bound(), placed, b.cx, b.cy)) g.sheets.push_back(b);
    }

    const int villi = spec.villi_count.hi > 0 ? static_cast<int>(rng.integer(spec.villi_count.lo, spec.villi_count.hi)) : 0;
    std::vector<BlobShape> shapes;
    std::vector<double> rims;
    for (int i = 0; i < villi; ++i) {
        auto b = detail::random_blob(rng, spec.villus_radius, 0.07);
        const double rim = rng.uniform(spec.rim_width.lo, spec.rim_width.hi);
        if (detail::place(rng, spec, b.bound() + rim, placed, b.cx, b.cy)) {
            shapes.push_back(b);
            rims.push_back(rim);
        }
    }
    for (const auto& s : shapes) g.villi.push_back(VillusGeom{s, 0.0, 0.0});

    for (auto i : detail::choose_subset(rng, g.villi.size(), spec.edema_fraction))
        g.villi[i].cistern_scale = rng.uniform(spec.cistern_scale.lo, spec.cistern_scale.hi);
    for (auto i : detail::choose_subset(rng, g.villi.size(), spec.hyperplasia_fraction)) g.villi[i].rim_width = rims[i];
    return g;
}

/// Deterministic under spec.seed. Throws when dims are below spec.min_dim.
inline GeneratedSlide generate_slide(const SlideSpec& spec) {
    if (spec.width < spec.min_dim || spec.height < spec.min_dim)
        throw ContractError("generate_slide: dims " + std::to_string(spec.width) + "x" + std::to_string(spec.height) +
                            " below patch size " + std::to_string(spec.min_dim));
    if (spec.class_label < 0 || spec.class_label > 2) throw ContractError("generate_slide: class_label out of range");

    num::Rng rng(num::derive_seed(spec.seed, "slide-geometry"));
    GeneratedSlide out{SlideImage(spec.width, spec.height), LabelMask(spec.width, spec.height), {}};
    out.geometry = generate_geometry(spec, rng);

    auto& mask = out.mask;
    for (const auto& s : out.geometry.sheets) {
        const int b = static_cast<int>(std::ceil(s.bound())) + 1;
        for (int y = std::max(0, static_cast<int>(s.cy) - b); y < std::min(spec.height, static_cast<int>(s.cy) + b); ++y)
            for (int x = std::max(0, static_cast<int>(s.cx) - b); x < std::min(spec.width, static_cast<int>(s.cx) + b); ++x) {
                auto [d, r] = s.polar(x + 0.5, y + 0.5);
                if (d < r) mask(x, y) = kHyperplasia;
            }
    }
    for (const auto& v : out.geometry.villi) {
        const int b = static_cast<int>(std::ceil(v.shape.bound() + v.rim_width)) + 1;
        for (int y = std::max(0, static_cast<int>(v.shape.cy) - b);
             y < std::min(spec.height, static_cast<int>(v.shape.cy) + b); ++y)
            for (int x = std::max(0, static_cast<int>(v.shape.cx) - b);
                 x < std::min(spec.width, static_cast<int>(v.shape.cx) + b); ++x) {
                auto [d, r] = v.shape.polar(x + 0.5, y + 0.5);
                if (d < v.cistern_scale * r)
                    mask(x, y) = kEdema;
                else if (d < r)
                    mask(x, y) = kVilli;
                else if (d < r + v.rim_width)
                    mask(x, y) = kHyperplasia;
            }
    }

    // Palette. Each class has its own mean colour and texture.
    num::Rng tex(num::derive_seed(spec.seed, "slide-texture"));
    const double p1 = tex.uniform(0.0, 6.3), p2 = tex.uniform(0.0, 6.3);
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            auto* px = out.image.px(x, y);
            double r, g, b, sigma;
            switch (mask(x, y)) {
            case kVilli: {
                const double m = 10.0 * std::sin(0.09 * x + p1) * std::sin(0.07 * y + p2);
                r = 214 + m, g = 140 + m, b = 182 + m, sigma = 7.0;
                break;
            }
            case kEdema:
                r = 196, g = 214, b = 238, sigma = 4.0;
                break;
            case kHyperplasia:
                if (tex.uniform() < 0.03)
                    r = 78, g = 34, b = 104;
                else
                    r = 122, g = 62, b = 150;
                sigma = 9.0;
                break;
            default:
                r = 242, g = 240, b = 244, sigma = 2.0;
            }
            px[0] = detail::clamp8(r + sigma * tex.normal());
            px[1] = detail::clamp8(g + sigma * tex.normal());
            px[2] = detail::clamp8(b + sigma * tex.normal());
        }
    }
    return out;
}

} // namespace gtd::slideio
