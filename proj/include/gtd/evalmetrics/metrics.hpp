#pragma once

// Pixel-level segmentation metrics, ROC/AUC, bootstrap CIs, 3-class confusion.
//
// Conventions:
//   hard masks use p >= threshold (default 0.5)
//   a class with empty truth and empty prediction scores 1.0 on every metric;
//   if only one side is empty the undefined ratio is 0.0
//   ROC ties: all samples with an equal score move together (diagonal step),
//   which makes tied pairs count 1/2 in the AUC

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtd/numerics/rng.hpp"
#include "gtd/slideio/pnm.hpp"
#include "gtd/slideio/raster.hpp"

namespace gtd::eval {

struct PixelCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    PixelCounts& operator+=(const PixelCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    bool operator==(const PixelCounts&) const = default;
};

struct ClassMetrics {
    double iou = 0.0, dice = 0.0, precision = 0.0, recall = 0.0;
};

inline ClassMetrics metrics_from_counts(const PixelCounts& c) {
    if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0, 1.0, 1.0};
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    ClassMetrics m;
    m.iou = tp / (tp + fp + fn);
    m.dice = 2.0 * tp / (2.0 * tp + fp + fn);
    m.precision = c.tp + c.fp ? tp / (tp + fp) : 0.0;
    m.recall = c.tp + c.fn ? tp / (tp + fn) : 0.0;
    return m;
}

inline ClassMetrics macro_mean(const std::vector<ClassMetrics>& v) {
    ClassMetrics m;
    if (v.empty()) return m;
    for (const auto& c : v) {
        m.iou += c.iou;
        m.dice += c.dice;
        m.precision += c.precision;
        m.recall += c.recall;
    }
    const double n = static_cast<double>(v.size());
    return {m.iou / n, m.dice / n, m.precision / n, m.recall / n};
}

inline PixelCounts count_binary(const slideio::BinaryMask& pred, const slideio::BinaryMask& truth) {
    if (pred.width != truth.width || pred.height != truth.height)
        throw ContractError("seg_metrics: prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                            " vs truth " + std::to_string(truth.width) + "x" + std::to_string(truth.height));
    PixelCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
        c.tp += p && t;
        c.fp += p && !t;
        c.fn += !p && t;
        c.tn += !p && !t;
    }
    return c;
}

inline PixelCounts count_pixels(const slideio::ProbMap& pred, const slideio::BinaryMask& truth, double threshold = 0.5) {
    return count_binary(slideio::threshold(pred, threshold), truth);
}

inline ClassMetrics seg_metrics(const slideio::ProbMap& pred, const slideio::BinaryMask& truth, double threshold = 0.5) {
    return metrics_from_counts(count_pixels(pred, truth, threshold));
}

// ---------------------------------------------------------------------------
// Multi-class slide evaluation: background, villi, edema, hyperplasia.

inline const std::array<std::string, 4> kSegClasses{"background", "villi", "edema", "hyperplasia"};

/// Truth masks per class. Villi means the villous region (codes 1 and 2).
inline std::array<slideio::BinaryMask, 4> truth_masks(const slideio::LabelMask& m) {
    return {slideio::label_equals(m, slideio::kBlank), slideio::villi_region(m),
            slideio::label_equals(m, slideio::kEdema), slideio::label_equals(m, slideio::kHyperplasia)};
}

/// Predicted masks per class; background is where no foreground map fires.
inline std::array<slideio::BinaryMask, 4> predicted_masks(const slideio::ProbMap& villi, const slideio::ProbMap& edema,
                                                          const slideio::ProbMap& hyper, double threshold = 0.5) {
    std::array<slideio::BinaryMask, 4> out{slideio::BinaryMask(villi.width, villi.height),
                                           slideio::threshold(villi, threshold), slideio::threshold(edema, threshold),
                                           slideio::threshold(hyper, threshold)};
    for (std::size_t i = 0; i < out[0].size(); ++i)
        out[0].data[i] = !(out[1].data[i] || out[2].data[i] || out[3].data[i]);
    return out;
}

struct SlideSegResult {
    std::string id;
    std::array<PixelCounts, 4> counts;
    std::array<ClassMetrics, 4> metrics;
};

/// Accumulates per-slide counts. Pooled metrics use the summed counts.
struct SegEvaluation {
    std::vector<SlideSegResult> slides;
    std::array<PixelCounts, 4> pooled;

    void add(const std::string& id, const std::array<slideio::BinaryMask, 4>& pred,
             const std::array<slideio::BinaryMask, 4>& truth) {
        SlideSegResult r;
        r.id = id;
        for (std::size_t c = 0; c < 4; ++c) {
            r.counts[c] = count_binary(pred[c], truth[c]);
            r.metrics[c] = metrics_from_counts(r.counts[c]);
            pooled[c] += r.counts[c];
        }
        slides.push_back(std::move(r));
    }

    ClassMetrics pooled_metrics(std::size_t c) const { return metrics_from_counts(pooled[c]); }

    /// Mean over slides of the per-slide metric of class c.
    ClassMetrics slide_mean(std::size_t c) const {
        std::vector<ClassMetrics> v;
        for (const auto& s : slides) v.push_back(s.metrics[c]);
        return macro_mean(v);
    }

    ClassMetrics macro(bool with_background) const {
        std::vector<ClassMetrics> v;
        for (std::size_t c = with_background ? 0 : 1; c < 4; ++c) v.push_back(pooled_metrics(c));
        return macro_mean(v);
    }
};

inline nlohmann::ordered_json to_json(const ClassMetrics& m) {
    return {{"iou", m.iou}, {"dice", m.dice}, {"precision", m.precision}, {"recall", m.recall}};
}

inline nlohmann::ordered_json to_json(const PixelCounts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

// ---------------------------------------------------------------------------
// ROC

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;  // score at or above which samples are positive
};

struct RocResult {
    std::vector<RocPoint> points;  // from (0,0) to (1,1)
    double auc = 0.0;
};

namespace detail {

/// Builds the curve from (score, positives, negatives) groups sorted by
/// descending score.
struct ScoreGroup {
    double score;
    std::uint64_t pos;
    std::uint64_t neg;
};

inline RocResult roc_from_groups(const std::vector<ScoreGroup>& groups) {
    std::uint64_t P = 0, N = 0;
    for (const auto& g : groups) {
        P += g.pos;
        N += g.neg;
    }
    if (P == 0) throw ContractError("roc_auc: labels contain no positive class (1)");
    if (N == 0) throw ContractError("roc_auc: labels contain no negative class (0)");
    RocResult r;
    r.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::uint64_t tp = 0, fp = 0;
    double area = 0.0;
    for (const auto& g : groups) {
        const std::uint64_t tp2 = tp + g.pos, fp2 = fp + g.neg;
        // trapezoid in count space: exact under the half-credit tie rule
        area += static_cast<double>(g.neg) * (static_cast<double>(tp) + static_cast<double>(tp2)) / 2.0;
        tp = tp2;
        fp = fp2;
        r.points.push_back({static_cast<double>(fp) / N, static_cast<double>(tp) / P, g.score});
    }
    r.auc = area / (static_cast<double>(P) * static_cast<double>(N));
    return r;
}

} // namespace detail

inline RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ContractError("roc_auc: scores and labels differ in length");
    std::vector<std::size_t> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
        if (labels[i] != 0 && labels[i] != 1) throw ContractError("roc_auc: labels must be 0 or 1");
        if (!std::isfinite(scores[i])) throw ContractError("roc_auc: non-finite score");
    }
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    std::vector<detail::ScoreGroup> groups;
    for (auto i : idx) {
        if (groups.empty() || groups.back().score != scores[i]) groups.push_back({scores[i], 0, 0});
        (labels[i] ? groups.back().pos : groups.back().neg) += 1;
    }
    return detail::roc_from_groups(groups);
}

/// Pixel-scale ROC over probability maps quantised to 16 bits (the storage
/// precision of probability rasters). Exact for the quantised scores.
class RocAccumulator {
public:
    RocAccumulator() : pos_(65536, 0), neg_(65536, 0) {}

    void add(const slideio::ProbMap& p, const slideio::BinaryMask& truth) {
        if (p.width != truth.width || p.height != truth.height) throw ContractError("roc: raster dims differ");
        for (std::size_t i = 0; i < p.size(); ++i) (truth.data[i] ? pos_ : neg_)[slideio::quantize_prob(p.data[i])]++;
    }

    RocResult result() const {
        std::vector<detail::ScoreGroup> groups;
        for (int b = 65535; b >= 0; --b)
            if (pos_[b] || neg_[b]) groups.push_back({b / 65535.0, pos_[b], neg_[b]});
        return detail::roc_from_groups(groups);
    }

    bool has_both_classes() const {
        bool p = false, n = false;
        for (std::size_t b = 0; b < pos_.size(); ++b) {
            p = p || pos_[b];
            n = n || neg_[b];
        }
        return p && n;
    }

private:
    std::vector<std::uint64_t> pos_, neg_;
};

/// At most `max_points` curve points (always keeping both ends), for reports.
inline std::vector<RocPoint> thin_curve(const std::vector<RocPoint>& pts, std::size_t max_points = 101) {
    if (pts.size() <= max_points) return pts;
    std::vector<RocPoint> out;
    for (std::size_t k = 0; k < max_points; ++k)
        out.push_back(pts[k * (pts.size() - 1) / (max_points - 1)]);
    return out;
}

// ---------------------------------------------------------------------------
// Bootstrap

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double q) {
    const double h = (static_cast<double>(s.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

struct ConfidenceInterval {
    double point = 0.0;  // mean of the input values
    double lo = 0.0;
    double hi = 0.0;
    double level = 0.95;
};

/// Percentile bootstrap of the mean. The bounds are clamped to contain the
/// point estimate (a skewed resample distribution can otherwise exclude it).
inline ConfidenceInterval bootstrap_ci(const std::vector<double>& values, int resamples = 1000, double level = 0.95,
                                       std::uint64_t seed = 0) {
    if (values.size() < 2) throw ContractError("bootstrap_ci: need at least 2 values, got " + std::to_string(values.size()));
    if (!(level > 0.0 && level < 1.0)) throw ContractError("bootstrap_ci: level must be in (0, 1)");
    if (resamples < 1) throw ContractError("bootstrap_ci: resamples must be positive");
    ConfidenceInterval ci;
    ci.level = level;
    for (double v : values) ci.point += v;
    ci.point /= static_cast<double>(values.size());

    num::Rng rng(num::derive_seed(seed, "bootstrap"));
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (auto& m : means) {
        double s = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) s += values[rng.index(values.size())];
        m = s / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    const double a = (1.0 - level) / 2.0;
    ci.lo = std::min(quantile_sorted(means, a), ci.point);
    ci.hi = std::max(quantile_sorted(means, 1.0 - a), ci.point);
    return ci;
}

// ---------------------------------------------------------------------------
// Slide-level confusion

inline const std::array<std::string, 3> kDiagnosisNames{"Normal abortion", "Hydatidiform mole", "Choriocarcinoma"};

struct ConfusionMatrix3 {
    std::array<std::array<std::uint64_t, 3>, 3> counts{};  // [true][pred]
    double accuracy = 0.0;
    std::array<double, 3> recall{};     // NaN for a class without support
    std::array<double, 3> precision{};  // NaN for a never-predicted class

    std::uint64_t support(int c) const { return counts[c][0] + counts[c][1] + counts[c][2]; }
    std::uint64_t total() const { return support(0) + support(1) + support(2); }
};

inline ConfusionMatrix3 confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.size() != y_pred.size()) throw ContractError("confusion: label lists differ in length");
    ConfusionMatrix3 m;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || t > 2 || p < 0 || p > 2)
            throw ContractError("confusion: label outside {0,1,2} at index " + std::to_string(i));
        m.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]++;
    }
    std::uint64_t diag = 0;
    for (int c = 0; c < 3; ++c) {
        diag += m.counts[c][c];
        const auto sup = m.support(c);
        const auto col = m.counts[0][c] + m.counts[1][c] + m.counts[2][c];
        m.recall[c] = sup ? static_cast<double>(m.counts[c][c]) / static_cast<double>(sup) : std::nan("");
        m.precision[c] = col ? static_cast<double>(m.counts[c][c]) / static_cast<double>(col) : std::nan("");
    }
    m.accuracy = y_true.empty() ? 0.0 : static_cast<double>(diag) / static_cast<double>(y_true.size());
    return m;
}

inline nlohmann::ordered_json to_json(const ConfusionMatrix3& m) {
    nlohmann::ordered_json j;
    j["classes"] = kDiagnosisNames;
    j["matrix"] = m.counts;
    j["accuracy"] = m.accuracy;
    auto nan_to_null = [](const std::array<double, 3>& a) {
        nlohmann::ordered_json out = nlohmann::ordered_json::array();
        for (double v : a) out.push_back(std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v));
        return out;
    };
    j["recall"] = nan_to_null(m.recall);
    j["precision"] = nan_to_null(m.precision);
    return j;
}

// ---------------------------------------------------------------------------
// Text table

/// Aligned columns: class | mIoU | mDice | mPrecision | mRecall.
inline std::string format_table(const std::vector<std::pair<std::string, ClassMetrics>>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(22) << "class" << std::right << std::setw(10) << "mIoU" << std::setw(10) << "mDice"
       << std::setw(12) << "mPrecision" << std::setw(10) << "mRecall" << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& [name, m] : rows)
        os << std::left << std::setw(22) << name << std::right << std::setw(10) << m.iou << std::setw(10) << m.dice
           << std::setw(12) << m.precision << std::setw(10) << m.recall << "\n";
    return os.str();
}

} // namespace gtd::eval
