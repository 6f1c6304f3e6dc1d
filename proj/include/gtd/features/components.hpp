#pragma once

// 8-connected component labelling with a speckle floor.
//
// Labels are canonical: components are numbered 1..n in order of their first
// pixel in row-major order, so the result does not depend on scan details.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "gtd/slideio/raster.hpp"

namespace gtd::features {

struct Component {
    int label = 0;
    std::int64_t pixels = 0;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounding box
    std::int64_t perimeter = 0;          // 4-neighbour boundary edges
    double cx = 0.0, cy = 0.0;           // centroid, pixel-centre coordinates

    int box_width() const { return x1 - x0 + 1; }
    int box_height() const { return y1 - y0 + 1; }
};

struct ComponentSet {
    std::vector<Component> components;
    slideio::Plane<std::int32_t> labels;  // 0 background or discarded speckle
    std::int64_t speckle_count = 0;       // components dropped for being below min_size
    std::int64_t speckle_pixels = 0;
};

namespace detail {

inline std::int32_t find_root(std::vector<std::int32_t>& parent, std::int32_t a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
        parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
        a = parent[static_cast<std::size_t>(a)];
    }
    return a;
}

} // namespace detail

inline ComponentSet connected_components(const slideio::BinaryMask& mask, std::int64_t min_size = 16) {
    const int w = mask.width, h = mask.height;
    ComponentSet out;
    out.labels = slideio::Plane<std::int32_t>(w, h, 0);

    // first pass: provisional labels + union-find over the causal neighbours
    std::vector<std::int32_t> parent{0};
    auto& lab = out.labels;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask(x, y)) continue;
            std::int32_t best = 0;
            const int nb[4][2] = {{-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
            for (const auto& d : nb) {
                const int nx = x + d[0], ny = y + d[1];
                if (nx < 0 || ny < 0 || nx >= w) continue;
                const std::int32_t l = lab(nx, ny);
                if (!l) continue;
                if (!best) {
                    best = l;
                } else {
                    const auto ra = detail::find_root(parent, best), rb = detail::find_root(parent, l);
                    if (ra != rb) parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
                }
            }
            if (!best) {
                best = static_cast<std::int32_t>(parent.size());
                parent.push_back(best);
            }
            lab(x, y) = best;
        }

    // second pass: resolve roots, renumber by first appearance, gather stats
    std::vector<std::int32_t> canon(parent.size(), 0);
    std::vector<Component> comps;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto& l = lab(x, y);
            if (!l) continue;
            const auto root = static_cast<std::size_t>(detail::find_root(parent, l));
            if (!canon[root]) {
                canon[root] = static_cast<std::int32_t>(comps.size() + 1);
                Component c;
                c.label = canon[root];
                c.x0 = c.x1 = x;
                c.y0 = c.y1 = y;
                comps.push_back(c);
            }
            l = canon[root];
            auto& c = comps[static_cast<std::size_t>(l - 1)];
            ++c.pixels;
            c.x0 = std::min(c.x0, x);
            c.x1 = std::max(c.x1, x);
            c.y1 = y;
            c.cx += x + 0.5;
            c.cy += y + 0.5;
            c.perimeter += (x == 0 || !mask(x - 1, y)) + (x == w - 1 || !mask(x + 1, y)) + (y == 0 || !mask(x, y - 1)) +
                           (y == h - 1 || !mask(x, y + 1));
        }

    // speckle removal keeps canonical order among the survivors
    std::vector<std::int32_t> renum(comps.size() + 1, 0);
    for (auto& c : comps) {
        c.cx /= static_cast<double>(c.pixels);
        c.cy /= static_cast<double>(c.pixels);
        if (c.pixels < min_size) {
            ++out.speckle_count;
            out.speckle_pixels += c.pixels;
            continue;
        }
        renum[static_cast<std::size_t>(c.label)] = static_cast<std::int32_t>(out.components.size() + 1);
        c.label = renum[static_cast<std::size_t>(c.label)];
        out.components.push_back(c);
    }
    for (auto& l : lab.data) l = renum[static_cast<std::size_t>(l)];
    return out;
}

/// Shape factor 4*pi*A / L^2 where L is the Euclidean perimeter estimated from
/// the 4-neighbour edge count as (pi/4) * edges (mean |cos|+|sin| ratio over
/// orientations). A digitised disc scores close to 1.
inline double circularity(const Component& c) {
    if (c.perimeter == 0) return 0.0;
    const double l = 0.25 * M_PI * static_cast<double>(c.perimeter);
    return 4.0 * M_PI * static_cast<double>(c.pixels) / (l * l);
}

} // namespace gtd::features
