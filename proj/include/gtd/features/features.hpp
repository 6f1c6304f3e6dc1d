#pragma once

// The 22-value slide descriptor: 7 morphometric features from the predicted
// label map and 15 statistics of the 3-channel PCA heatmap of encoder tokens.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gtd/features/components.hpp"
#include "gtd/numerics/pca.hpp"
#include "gtd/slideio/tiling.hpp"

namespace gtd::features {

constexpr std::size_t kFeatureCount = 22;
constexpr std::size_t kManualCount = 7;
constexpr double kAbnormalOverlap = 0.10;
constexpr std::int64_t kMinComponentSize = 16;

inline const std::array<std::string, kFeatureCount> kFeatureNames{
    "edema_count",      "hyperplasia_count", "villi_count",      "edema_area_ratio",   "hyperplasia_area_ratio",
    "abnormal_villi",   "nonblank_fraction", "h0_mean",          "h0_std",             "h0_high_fraction",
    "h1_mean",          "h1_std",            "h1_high_fraction", "h2_mean",            "h2_std",
    "h2_high_fraction", "region_count",      "region_area",      "region_circularity", "largest_region_area",
    "region_elongation", "region_solidity"};

struct FeatureVector {
    std::string slide_id;
    std::array<double, kFeatureCount> values{};

    double operator[](std::size_t i) const { return values[i]; }
    bool operator==(const FeatureVector&) const = default;
};

// ---------------------------------------------------------------------------
// Manual features

/// Label map from the three probability maps at working resolution: each
/// ds x ds block is averaged, then edema > hyperplasia > villi > blank by
/// priority at threshold 0.5.
inline slideio::LabelMask predicted_labels(const slideio::ProbMap& villi, const slideio::ProbMap& edema,
                                          const slideio::ProbMap& hyper, int ds, double threshold = 0.5) {
    if (ds < 1) throw ContractError("predicted_labels: downsample must be >= 1");
    for (const auto* m : {&edema, &hyper})
        if (m->width != villi.width || m->height != villi.height)
            throw ContractError("predicted_labels: probability maps differ in size");
    const int w = (villi.width + ds - 1) / ds, h = (villi.height + ds - 1) / ds;
    slideio::LabelMask out(w, h);
    for (int by = 0; by < h; ++by)
        for (int bx = 0; bx < w; ++bx) {
            double s[3] = {0, 0, 0};
            int n = 0;
            for (int y = by * ds; y < std::min(villi.height, (by + 1) * ds); ++y)
                for (int x = bx * ds; x < std::min(villi.width, (bx + 1) * ds); ++x) {
                    s[0] += villi(x, y);
                    s[1] += edema(x, y);
                    s[2] += hyper(x, y);
                    ++n;
                }
            std::uint8_t code = slideio::kBlank;
            if (s[1] / n >= threshold)
                code = slideio::kEdema;
            else if (s[2] / n >= threshold)
                code = slideio::kHyperplasia;
            else if (s[0] / n >= threshold)
                code = slideio::kVilli;
            out(bx, by) = code;
        }
    return out;
}

struct LesionComponents {
    ComponentSet villi;  // tissue blobs: a villus together with its lesions
    ComponentSet edema;
    ComponentSet hyperplasia;
};

inline slideio::BinaryMask tissue_mask(const slideio::LabelMask& m) {
    slideio::BinaryMask out(m.width, m.height);
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = m.data[i] != slideio::kBlank;
    return out;
}

inline LesionComponents lesion_components(const slideio::LabelMask& m, std::int64_t min_size = kMinComponentSize) {
    return {connected_components(tissue_mask(m), min_size),
            connected_components(slideio::label_equals(m, slideio::kEdema), min_size),
            connected_components(slideio::label_equals(m, slideio::kHyperplasia), min_size)};
}

/// f[0..6]. Area ratios are over tissue (non-blank) pixels.
inline std::array<double, kManualCount> manual_features(const slideio::LabelMask& m, const LesionComponents& lc) {
    std::array<double, kManualCount> f{};
    if (lc.villi.labels.width != m.width || lc.villi.labels.height != m.height)
        throw ContractError("manual_features: components were computed on a different mask");
    std::int64_t tissue = 0, edema = 0, hyper = 0;
    for (auto v : m.data) {
        tissue += v != slideio::kBlank;
        edema += v == slideio::kEdema;
        hyper += v == slideio::kHyperplasia;
    }
    f[0] = static_cast<double>(lc.edema.components.size());
    f[1] = static_cast<double>(lc.hyperplasia.components.size());
    f[2] = static_cast<double>(lc.villi.components.size());
    if (tissue > 0) {
        f[3] = static_cast<double>(edema) / static_cast<double>(tissue);
        f[4] = static_cast<double>(hyper) / static_cast<double>(tissue);
    }
    if (!lc.villi.components.empty()) {
        std::vector<std::int64_t> lesion_px(lc.villi.components.size() + 1, 0);
        for (std::size_t i = 0; i < m.size(); ++i) {
            const auto l = lc.villi.labels.data[i];
            if (l && (m.data[i] == slideio::kEdema || m.data[i] == slideio::kHyperplasia))
                ++lesion_px[static_cast<std::size_t>(l)];
        }
        std::int64_t abnormal = 0;
        for (const auto& c : lc.villi.components)
            abnormal += static_cast<double>(lesion_px[static_cast<std::size_t>(c.label)]) >=
                        kAbnormalOverlap * static_cast<double>(c.pixels);
        f[5] = static_cast<double>(abnormal) / static_cast<double>(lc.villi.components.size());
    }
    f[6] = static_cast<double>(tissue) / static_cast<double>(m.size());
    return f;
}

// ---------------------------------------------------------------------------
// Heatmap

struct Heatmap3 {
    int width = 0;
    int height = 0;
    std::array<slideio::Plane<double>, 3> channels;
    slideio::BinaryMask covered;  // cells that carry a projected token

    Heatmap3() = default;
    Heatmap3(int w, int h)
        : width(w), height(h),
          channels{slideio::Plane<double>(w, h), slideio::Plane<double>(w, h), slideio::Plane<double>(w, h)},
          covered(w, h, 1) {}
};

/// Projects n token rows onto the first three components. `cells[i]` is the
/// raster index of token i. Each channel is min-max normalised over covered
/// cells; a constant channel becomes 0.
inline Heatmap3 project_heatmap(const num::Tensor& tokens, const std::vector<std::size_t>& cells,
                                const num::PcaModel& pca, int width, int height) {
    if (pca.k() < 3) throw ContractError("project_heatmap: PCA model has rank " + std::to_string(pca.k()) + " < 3");
    if (static_cast<std::size_t>(tokens.cols()) != pca.dim())
        throw ContractError("project_heatmap: token dim " + std::to_string(tokens.cols()) + " vs PCA dim " +
                            std::to_string(pca.dim()));
    if (static_cast<std::size_t>(tokens.rows()) != cells.size())
        throw ContractError("project_heatmap: token count and cell list differ");
    Heatmap3 hm(width, height);
    std::fill(hm.covered.data.begin(), hm.covered.data.end(), 0);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] >= hm.covered.size()) throw ContractError("project_heatmap: cell index outside the raster");
        const auto p = pca.project(&tokens.data()[i * static_cast<std::size_t>(tokens.cols())]);
        for (int c = 0; c < 3; ++c) hm.channels[c].data[cells[i]] = p[static_cast<std::size_t>(c)];
        hm.covered.data[cells[i]] = 1;
    }
    for (auto& ch : hm.channels) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t i = 0; i < ch.size(); ++i)
            if (hm.covered.data[i]) {
                lo = std::min(lo, ch.data[i]);
                hi = std::max(hi, ch.data[i]);
            }
        for (std::size_t i = 0; i < ch.size(); ++i)
            ch.data[i] = hm.covered.data[i] && hi > lo ? (ch.data[i] - lo) / (hi - lo) : 0.0;
    }
    return hm;
}

/// Covered cells of a slide token grid as (tokens, cell indices).
template <class Grid>
std::pair<num::Tensor, std::vector<std::size_t>> grid_tokens(const Grid& g) {
    std::vector<std::size_t> cells;
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c)
            if (g.covered(r, c)) cells.push_back(static_cast<std::size_t>(r) * g.cols + c);
    num::Tensor t = num::Tensor::matrix(static_cast<std::int64_t>(cells.size()), g.dim);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const double* src = g.at(static_cast<int>(cells[i] / g.cols), static_cast<int>(cells[i] % g.cols));
        std::copy(src, src + g.dim, &t.data()[i * static_cast<std::size_t>(g.dim)]);
    }
    return {std::move(t), std::move(cells)};
}

template <class Grid>
Heatmap3 project_heatmap(const Grid& g, const num::PcaModel& pca) {
    auto [t, cells] = grid_tokens(g);
    return project_heatmap(t, cells, pca, g.cols, g.rows);
}

/// f[7..21]: per channel mean / std / fraction above Otsu (channel-major),
/// then six statistics of the regions where any channel exceeds its Otsu
/// split. Everything is computed over covered cells; regions have no size floor.
inline std::array<double, 15> heatmap_features(const Heatmap3& hm) {
    std::array<double, 15> f{};
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < hm.covered.size(); ++i)
        if (hm.covered.data[i]) idx.push_back(i);
    if (idx.empty()) return f;
    const double n = static_cast<double>(idx.size());

    slideio::BinaryMask high(hm.width, hm.height);
    for (int c = 0; c < 3; ++c) {
        const auto& ch = hm.channels[static_cast<std::size_t>(c)];
        std::vector<double> vals;
        double sum = 0.0;
        for (auto i : idx) {
            vals.push_back(ch.data[i]);
            sum += ch.data[i];
        }
        const double mean = sum / n;
        double sq = 0.0;
        for (double v : vals) sq += (v - mean) * (v - mean);
        const double thr = slideio::otsu_threshold(vals);
        std::int64_t above = 0;
        if (!std::isnan(thr))
            for (auto i : idx)
                if (ch.data[i] > thr) {
                    ++above;
                    high.data[i] = 1;
                }
        f[static_cast<std::size_t>(3 * c)] = mean;
        f[static_cast<std::size_t>(3 * c + 1)] = std::sqrt(sq / n);
        f[static_cast<std::size_t>(3 * c + 2)] = static_cast<double>(above) / n;
    }

    const auto regions = connected_components(high, 1);
    const auto& rc = regions.components;
    if (rc.empty()) return f;
    std::int64_t area = 0, largest = 0;
    double circ = 0.0, elong = 0.0, solid = 0.0;
    for (const auto& r : rc) {
        area += r.pixels;
        largest = std::max(largest, r.pixels);
        circ += circularity(r);
        const double a = r.box_width(), b = r.box_height();
        elong += std::max(a, b) / std::min(a, b);
        solid += static_cast<double>(r.pixels) / (a * b);
    }
    const double k = static_cast<double>(rc.size());
    f[9] = k;
    f[10] = static_cast<double>(area) / n;
    f[11] = circ / k;
    f[12] = static_cast<double>(largest) / n;
    f[13] = elong / k;
    f[14] = solid / k;
    return f;
}

inline FeatureVector assemble(const std::string& id, const std::array<double, kManualCount>& manual,
                              const std::array<double, 15>& heat) {
    FeatureVector fv;
    fv.slide_id = id;
    std::copy(manual.begin(), manual.end(), fv.values.begin());
    std::copy(heat.begin(), heat.end(), fv.values.begin() + kManualCount);
    for (double v : fv.values)
        if (!std::isfinite(v)) throw NumericError("feature vector for '" + id + "' has a non-finite entry");
    return fv;
}

// ---------------------------------------------------------------------------
// CSV: slide_id followed by the 22 named columns.

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string feature_csv_header() {
    std::string h = "slide_id";
    for (const auto& n : kFeatureNames) h += "," + n;
    return h;
}

inline std::string write_feature_csv_string(const std::vector<FeatureVector>& rows) {
    std::string out = feature_csv_header() + "\n";
    for (const auto& r : rows) {
        if (r.slide_id.find_first_of(",\n\"") != std::string::npos)
            throw ContractError("feature csv: slide id '" + r.slide_id + "' needs quoting");
        out += r.slide_id;
        for (double v : r.values) out += "," + format_double(v);
        out += "\n";
    }
    return out;
}

inline void write_feature_csv(const std::filesystem::path& path, const std::vector<FeatureVector>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << write_feature_csv_string(rows);
}

inline std::vector<FeatureVector> parse_feature_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    if (!std::getline(in, line) || line != feature_csv_header()) throw ParseError("feature csv: unexpected header", 0);
    offset += line.size() + 1;
    std::vector<FeatureVector> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            offset += 1;
            continue;
        }
        FeatureVector fv;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, fv.slide_id, ',');
        std::size_t k = 0;
        while (std::getline(ls, cell, ',')) {
            if (k >= kFeatureCount) throw ParseError("feature csv: too many columns", offset);
            char* end = nullptr;
            fv.values[k++] = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0') throw ParseError("feature csv: bad number '" + cell + "'", offset);
        }
        if (k != kFeatureCount) throw ParseError("feature csv: expected 22 values", offset);
        rows.push_back(fv);
        offset += line.size() + 1;
    }
    return rows;
}

inline std::vector<FeatureVector> read_feature_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_feature_csv(ss.str());
}

} // namespace gtd::features
