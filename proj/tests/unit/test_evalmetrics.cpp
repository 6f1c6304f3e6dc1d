#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gtd/evalmetrics/metrics.hpp"
#include "gtd/numerics/rng.hpp"

using namespace gtd;
using namespace gtd::eval;
using slideio::BinaryMask;
using slideio::ProbMap;

namespace {

ProbMap random_probs(num::Rng& rng, int w, int h, double p_empty = 0.0) {
    ProbMap p(w, h);
    const bool empty = rng.uniform() < p_empty;
    for (auto& v : p.data) v = empty ? 0.1f : static_cast<float>(rng.uniform());
    return p;
}

BinaryMask random_mask(num::Rng& rng, int w, int h, double density, double p_empty = 0.0) {
    BinaryMask m(w, h);
    const bool empty = rng.uniform() < p_empty;
    for (auto& v : m.data) v = !empty && rng.uniform() < density;
    return m;
}

// Naive double-loop oracle.
ClassMetrics tally_oracle(const ProbMap& p, const BinaryMask& t) {
    double tp = 0, fp = 0, fn = 0;
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) {
            const bool a = p(x, y) >= 0.5f, b = t(x, y) != 0;
            if (a && b) tp += 1;
            if (a && !b) fp += 1;
            if (!a && b) fn += 1;
        }
    if (tp + fp + fn == 0) return {1, 1, 1, 1};
    return {tp / (tp + fp + fn), 2 * tp / (2 * tp + fp + fn), tp + fp > 0 ? tp / (tp + fp) : 0.0,
            tp + fn > 0 ? tp / (tp + fn) : 0.0};
}

double auc_pairs(const std::vector<double>& s, const std::vector<int>& l) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (l[i] == 1 && l[j] == 0) {
                den += 1;
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return num / den;
}

} // namespace

TEST(SegMetrics, IdenticalIsPerfect) {
    num::Rng rng(3);
    auto t = random_mask(rng, 16, 16, 0.4);
    ProbMap p(16, 16);
    for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = t.data[i] ? 0.9f : 0.2f;
    auto m = seg_metrics(p, t);
    EXPECT_EQ(m.iou, 1.0);
    EXPECT_EQ(m.dice, 1.0);
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
}

TEST(SegMetrics, ComplementIsZero) {
    BinaryMask t(8, 8);
    ProbMap p(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            t(x, y) = x < 4;
            p(x, y) = x < 4 ? 0.0f : 1.0f;
        }
    auto m = seg_metrics(p, t);
    EXPECT_EQ(m.iou, 0.0);
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.dice, 0.0);
}

TEST(SegMetrics, EmptyVsEmptyIsOne) {
    BinaryMask t(8, 8);
    ProbMap p(8, 8);
    auto m = seg_metrics(p, t);
    EXPECT_EQ(m.iou, 1.0);
    EXPECT_EQ(m.dice, 1.0);
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
}

TEST(SegMetrics, ThresholdIsInclusive) {
    BinaryMask t(1, 1);
    t.data[0] = 1;
    ProbMap p(1, 1);
    p.data[0] = 0.5f;
    EXPECT_EQ(count_pixels(p, t).tp, 1u);
}

TEST(SegMetrics, DimensionMismatchThrows) {
    EXPECT_THROW(seg_metrics(ProbMap(4, 4), BinaryMask(4, 5)), ContractError);
}

TEST(SegMetrics, MatchesTallyOracle) {
    num::Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        auto p = random_probs(rng, 32, 32, 0.05);
        auto t = random_mask(rng, 32, 32, rng.uniform(), 0.05);
        const auto c = count_pixels(p, t);
        EXPECT_EQ(c.total(), 32u * 32u);
        const auto m = metrics_from_counts(c);
        const auto o = tally_oracle(p, t);
        ASSERT_NEAR(m.iou, o.iou, 1e-12) << trial;
        ASSERT_NEAR(m.dice, o.dice, 1e-12) << trial;
        ASSERT_NEAR(m.precision, o.precision, 1e-12) << trial;
        ASSERT_NEAR(m.recall, o.recall, 1e-12) << trial;
        ASSERT_NEAR(m.dice, 2 * m.iou / (1 + m.iou), 1e-12) << trial;
        for (double v : {m.iou, m.dice, m.precision, m.recall}) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
    }
}

TEST(SegMetrics, MacroIsArithmeticMean) {
    num::Rng rng(8);
    std::vector<ClassMetrics> v;
    for (int c = 0; c < 4; ++c) v.push_back(seg_metrics(random_probs(rng, 16, 16), random_mask(rng, 16, 16, 0.3)));
    auto m = macro_mean(v);
    double s = 0;
    for (auto& c : v) s += c.recall;
    EXPECT_NEAR(m.recall, s / 4, 1e-12);
}

TEST(SegEvaluation, PooledEqualsSummedCounts) {
    num::Rng rng(17);
    SegEvaluation ev;
    std::array<PixelCounts, 4> manual{};
    for (int s = 0; s < 3; ++s) {
        slideio::LabelMask lm(24, 24);
        for (auto& v : lm.data) v = static_cast<std::uint8_t>(rng.index(4));
        auto v = random_probs(rng, 24, 24), e = random_probs(rng, 24, 24), h = random_probs(rng, 24, 24);
        auto pred = predicted_masks(v, e, h);
        auto truth = truth_masks(lm);
        ev.add("s" + std::to_string(s), pred, truth);
        for (int c = 0; c < 4; ++c) manual[c] += count_binary(pred[c], truth[c]);
        // background fires exactly where no foreground class does
        for (std::size_t i = 0; i < pred[0].size(); ++i)
            EXPECT_EQ(pred[0].data[i], !(v.data[i] >= 0.5f || e.data[i] >= 0.5f || h.data[i] >= 0.5f));
    }
    EXPECT_EQ(ev.pooled, manual);
    std::vector<ClassMetrics> fg{ev.pooled_metrics(1), ev.pooled_metrics(2), ev.pooled_metrics(3)};
    EXPECT_NEAR(ev.macro(false).iou, macro_mean(fg).iou, 1e-12);
    fg.insert(fg.begin(), ev.pooled_metrics(0));
    EXPECT_NEAR(ev.macro(true).iou, macro_mean(fg).iou, 1e-12);
}

TEST(SegEvaluation, TableHasAlignedRows) {
    auto txt = format_table({{"edema", {0.5, 2.0 / 3.0, 0.75, 0.6}}, {"hyperplasia", {1, 1, 1, 1}}});
    EXPECT_NE(txt.find("mIoU"), std::string::npos);
    EXPECT_NE(txt.find("0.6667"), std::string::npos);
    std::vector<std::size_t> lens;
    std::size_t start = 0, nl;
    while ((nl = txt.find('\n', start)) != std::string::npos) {
        lens.push_back(nl - start);
        start = nl + 1;
    }
    ASSERT_EQ(lens.size(), 3u);
    EXPECT_EQ(lens[0], lens[1]);
    EXPECT_EQ(lens[1], lens[2]);
}

TEST(Roc, PerfectSeparation) {
    auto r = roc_auc({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0});
    EXPECT_EQ(r.auc, 1.0);
}

TEST(Roc, AllEqualScoresGiveHalf) {
    auto r = roc_auc({0.4, 0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0, 0});
    EXPECT_EQ(r.auc, 0.5);
    ASSERT_EQ(r.points.size(), 2u);
}

TEST(Roc, SingleClassNamesMissingClass) {
    try {
        roc_auc({0.1, 0.2}, {1, 1});
        FAIL();
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("negative"), std::string::npos);
    }
    try {
        roc_auc({0.1, 0.2}, {0, 0});
        FAIL();
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("positive"), std::string::npos);
    }
}

TEST(Roc, MatchesPairCountingOracle) {
    num::Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(199);
        std::vector<double> s(n);
        std::vector<int> l(n);
        // coarse scores so ties are common
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = trial % 2 ? std::floor(rng.uniform() * 10) / 10 : rng.uniform();
            l[i] = rng.uniform() < 0.4;
        }
        l[0] = 1;
        l[1] = 0;
        auto r = roc_auc(s, l);
        ASSERT_NEAR(r.auc, auc_pairs(s, l), 1e-9) << trial;
        EXPECT_EQ(r.points.front().fpr, 0.0);
        EXPECT_EQ(r.points.back().tpr, 1.0);
        for (std::size_t k = 1; k < r.points.size(); ++k) {
            EXPECT_GE(r.points[k].fpr, r.points[k - 1].fpr);
            EXPECT_GE(r.points[k].tpr, r.points[k - 1].tpr);
        }
    }
}

TEST(Roc, InvariantUnderMonotoneTransform) {
    num::Rng rng(5);
    std::vector<double> s(150), t(150);
    std::vector<int> l(150);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = std::round(rng.uniform() * 20) / 20;
        t[i] = std::exp(3 * s[i]) - 7;
        l[i] = rng.uniform() < 0.5;
    }
    auto a = roc_auc(s, l), b = roc_auc(t, l);
    EXPECT_EQ(a.auc, b.auc);
    ASSERT_EQ(a.points.size(), b.points.size());
    for (std::size_t k = 0; k < a.points.size(); ++k) {
        EXPECT_EQ(a.points[k].fpr, b.points[k].fpr);
        EXPECT_EQ(a.points[k].tpr, b.points[k].tpr);
    }
}

TEST(Roc, AccumulatorMatchesExactOnQuantisedScores) {
    num::Rng rng(12);
    ProbMap p(40, 40);
    BinaryMask t(40, 40);
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p.data[i] = static_cast<float>(rng.uniform());
        t.data[i] = rng.uniform() < p.data[i];
        s.push_back(slideio::quantize_prob(p.data[i]) / 65535.0);
        l.push_back(t.data[i]);
    }
    RocAccumulator acc;
    acc.add(p, t);
    EXPECT_TRUE(acc.has_both_classes());
    EXPECT_NEAR(acc.result().auc, roc_auc(s, l).auc, 1e-12);
    EXPECT_LE(thin_curve(acc.result().points, 11).size(), 11u);
}

// Independent percentile bootstrap: same resample stream, sort, type-7.
TEST(Bootstrap, MatchesSecondImplementation) {
    num::Rng data_rng(31);
    std::vector<double> v(50);
    for (auto& x : v) x = 0.8 + 0.1 * data_rng.normal();
    const auto ci = bootstrap_ci(v, 1000, 0.95, 77);

    num::Rng rng(num::derive_seed(77, "bootstrap"));
    std::vector<double> means;
    for (int b = 0; b < 1000; ++b) {
        double s = 0;
        for (int i = 0; i < 50; ++i) s += v[rng.index(50)];
        means.push_back(s / 50);
    }
    std::sort(means.begin(), means.end());
    auto q = [&](double p) {
        const double pos = p * 999;
        const int k = static_cast<int>(pos);
        return means[k] + (pos - k) * (means[std::min(k + 1, 999)] - means[k]);
    };
    double mean = 0;
    for (double x : v) mean += x;
    mean /= 50;
    EXPECT_NEAR(ci.point, mean, 1e-12);
    EXPECT_NEAR(ci.lo, std::min(q(0.025), mean), 1e-12);
    EXPECT_NEAR(ci.hi, std::max(q(0.975), mean), 1e-12);
    EXPECT_LT(ci.lo, ci.hi);
}

TEST(Bootstrap, IdenticalValuesCollapse) {
    auto ci = bootstrap_ci({0.7, 0.7, 0.7, 0.7}, 200, 0.95, 1);
    EXPECT_EQ(ci.lo, 0.7);
    EXPECT_EQ(ci.hi, 0.7);
}

TEST(Bootstrap, WiderLevelNeverNarrows) {
    num::Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(2 + rng.index(30));
        for (auto& x : v) x = rng.uniform();
        auto a = bootstrap_ci(v, 500, 0.95, trial), b = bootstrap_ci(v, 500, 0.99, trial);
        EXPECT_LE(b.lo, a.lo);
        EXPECT_GE(b.hi, a.hi);
        EXPECT_LE(a.lo, a.point);
        EXPECT_GE(a.hi, a.point);
    }
}

TEST(Bootstrap, DeterministicAndValidated) {
    std::vector<double> v{0.1, 0.5, 0.9, 0.3};
    auto a = bootstrap_ci(v, 300, 0.9, 5), b = bootstrap_ci(v, 300, 0.9, 5);
    EXPECT_EQ(a.lo, b.lo);
    EXPECT_EQ(a.hi, b.hi);
    EXPECT_THROW(bootstrap_ci({0.5}), ContractError);
    EXPECT_THROW(bootstrap_ci(v, 100, 1.0), ContractError);
}

TEST(Confusion, IdentityIsDiagonal) {
    std::vector<int> y{0, 1, 2, 2, 1, 0, 0};
    auto m = confusion(y, y);
    EXPECT_EQ(m.accuracy, 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i != j) {
                EXPECT_EQ(m.counts[i][j], 0u);
            }
        }
}

TEST(Confusion, ConstantPredictionFillsOneColumn) {
    auto m = confusion({0, 1, 2, 1}, {1, 1, 1, 1});
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(m.counts[i][0], 0u);
        EXPECT_EQ(m.counts[i][2], 0u);
    }
    EXPECT_TRUE(std::isnan(m.precision[0]));
    EXPECT_EQ(m.recall[1], 1.0);
}

TEST(Confusion, MatchesDirectTally) {
    num::Rng rng(55);
    std::vector<int> t(100), p(100);
    for (int i = 0; i < 100; ++i) {
        t[i] = static_cast<int>(rng.index(3));
        p[i] = static_cast<int>(rng.index(3));
    }
    auto m = confusion(t, p);
    std::uint64_t trace = 0;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            std::uint64_t n = 0;
            for (int i = 0; i < 100; ++i) n += t[i] == a && p[i] == b;
            EXPECT_EQ(m.counts[a][b], n);
        }
        trace += m.counts[a][a];
        EXPECT_EQ(m.support(a), static_cast<std::uint64_t>(std::count(t.begin(), t.end(), a)));
    }
    EXPECT_EQ(m.accuracy, static_cast<double>(trace) / 100.0);
    auto j = to_json(m);
    EXPECT_EQ(j["matrix"][1][2].get<std::uint64_t>(), m.counts[1][2]);
}

TEST(Confusion, RejectsOutOfRangeLabels) {
    EXPECT_THROW(confusion({0, 3}, {0, 1}), ContractError);
    EXPECT_THROW(confusion({0, 1}, {-1, 1}), ContractError);
    EXPECT_THROW(confusion({0}, {0, 1}), ContractError);
}
