#pragma once

// Bagged CART forest over the 22-value slide descriptor, 3 diagnosis classes.
//
// Splits go left when x <= threshold, and the threshold is the lower of the two
// neighbouring distinct training values. Decisions therefore depend only on
// the order of values, so any strictly increasing per-feature transform
// applied at fit and predict time leaves every prediction unchanged.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gtd/checkpoint.hpp"
#include "gtd/error.hpp"
#include "gtd/numerics/rng.hpp"

namespace gtd::forest {

constexpr int kClasses = 3;
constexpr std::uint32_t kSectionVersion = 1;

using Histogram = std::array<std::uint32_t, kClasses>;

struct ForestConfig {
    int n_trees = 20;
    int mtry = 0;  // 0: ceil(sqrt(n_features))
    int max_depth = 12;
    int min_leaf = 2;
    std::uint64_t seed = 0;
};

struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    Histogram hist{};  // bootstrap samples reaching the node

    bool leaf() const { return feature < 0; }
    bool operator==(const Node&) const = default;
};

struct Tree {
    std::vector<Node> nodes;  // nodes[0] is the root
    std::uint64_t seed = 0;
    double oob_fraction = 0.0;

    const Node& leaf_for(const double* x) const {
        const Node* n = &nodes[0];
        while (!n->leaf()) n = &nodes[static_cast<std::size_t>(x[n->feature] <= n->threshold ? n->left : n->right)];
        return *n;
    }
    int depth() const {
        std::vector<int> d(nodes.size(), 0);
        int best = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (!nodes[i].leaf()) {
                d[static_cast<std::size_t>(nodes[i].left)] = d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
                best = std::max(best, d[i] + 1);
            }
        return best;
    }
    bool operator==(const Tree&) const = default;
};

struct Forest {
    ForestConfig config;
    int n_features = 0;
    std::vector<Tree> trees;
    std::string warning;

    bool operator==(const Forest& o) const {
        return n_features == o.n_features && trees == o.trees && config.n_trees == o.config.n_trees &&
               config.mtry == o.config.mtry && config.max_depth == o.config.max_depth &&
               config.min_leaf == o.config.min_leaf && config.seed == o.config.seed;
    }
};

struct Prediction {
    int label = 0;
    std::array<double, kClasses> shares{};  // vote fractions
    std::array<double, kClasses> prob_sum{};  // summed leaf class probabilities
};

inline int resolved_mtry(const ForestConfig& c, int n_features) {
    const int m = c.mtry > 0 ? c.mtry : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_features))));
    return std::clamp(m, 1, n_features);
}

/// n draws with replacement.
inline std::vector<std::size_t> bootstrap_indices(num::Rng& rng, std::size_t n) {
    std::vector<std::size_t> out(n);
    for (auto& i : out) i = rng.index(n);
    return out;
}

inline double gini(const Histogram& h, double n) {
    if (n <= 0) return 0.0;
    double s = 1.0;
    for (auto c : h) s -= (c / n) * (c / n);
    return s;
}

namespace detail {

struct Builder {
    const std::vector<std::vector<double>>& X;
    const std::vector<int>& y;
    const ForestConfig& cfg;
    int mtry;
    num::Rng& rng;
    Tree& tree;

    static Histogram histogram(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
        Histogram h{};
        for (auto i : idx) ++h[static_cast<std::size_t>(y[i])];
        return h;
    }

    int build(std::vector<std::size_t> idx, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes.back().hist = histogram(y, idx);
        const Histogram hist = tree.nodes.back().hist;
        const double n = static_cast<double>(idx.size());
        const bool pure = std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; }) <= 1;
        if (pure || depth >= cfg.max_depth || idx.size() < 2 * static_cast<std::size_t>(cfg.min_leaf)) return id;

        // mtry distinct features by partial Fisher-Yates
        const int nf = static_cast<int>(X[0].size());
        std::vector<int> feats(static_cast<std::size_t>(nf));
        std::iota(feats.begin(), feats.end(), 0);
        for (int k = 0; k < mtry; ++k)
            std::swap(feats[static_cast<std::size_t>(k)],
                      feats[static_cast<std::size_t>(k) + rng.index(static_cast<std::uint64_t>(nf - k))]);

        const double parent = gini(hist, n);
        double best_imp = parent;
        int best_f = -1;
        double best_t = 0.0;
        std::vector<std::size_t> order = idx;
        for (int k = 0; k < mtry; ++k) {
            const int f = feats[static_cast<std::size_t>(k)];
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return X[a][f] < X[b][f]; });
            Histogram left{};
            for (std::size_t j = 0; j + 1 < order.size(); ++j) {
                ++left[static_cast<std::size_t>(y[order[j]])];
                const double lo = X[order[j]][f], hi = X[order[j + 1]][f];
                if (!(lo < hi)) continue;
                const std::size_t nl = j + 1, nr = order.size() - nl;
                if (nl < static_cast<std::size_t>(cfg.min_leaf) || nr < static_cast<std::size_t>(cfg.min_leaf)) continue;
                Histogram right{};
                for (int c = 0; c < kClasses; ++c) right[c] = hist[c] - left[c];
                const double imp = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
                if (imp < best_imp - 1e-12) {
                    best_imp = imp;
                    best_f = f;
                    best_t = lo;
                }
            }
        }
        if (best_f < 0) return id;

        std::vector<std::size_t> li, ri;
        for (auto i : idx) (X[i][best_f] <= best_t ? li : ri).push_back(i);
        tree.nodes[static_cast<std::size_t>(id)].feature = best_f;
        tree.nodes[static_cast<std::size_t>(id)].threshold = best_t;
        const int l = build(std::move(li), depth + 1);
        const int r = build(std::move(ri), depth + 1);
        tree.nodes[static_cast<std::size_t>(id)].left = l;
        tree.nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }
};

} // namespace detail

inline Forest fit(const std::vector<std::vector<double>>& X, const std::vector<int>& y, const ForestConfig& cfg = {}) {
    if (X.size() != y.size()) throw ContractError("forest fit: X and y differ in length");
    if (X.size() < 2) throw ContractError("forest fit: need at least 2 samples");
    if (cfg.n_trees < 1 || cfg.max_depth < 0 || cfg.min_leaf < 1) throw ContractError("forest fit: bad hyperparameters");
    const std::size_t nf = X[0].size();
    if (nf == 0) throw ContractError("forest fit: empty feature rows");
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (X[i].size() != nf) throw ContractError("forest fit: row " + std::to_string(i) + " has a different length");
        for (double v : X[i])
            if (!std::isfinite(v)) throw ContractError("forest fit: non-finite feature in row " + std::to_string(i));
        if (y[i] < 0 || y[i] >= kClasses) throw ContractError("forest fit: label outside {0,1,2} at row " + std::to_string(i));
    }
    Forest forest;
    forest.config = cfg;
    forest.n_features = static_cast<int>(nf);
    const int mtry = resolved_mtry(cfg, forest.n_features);
    forest.config.mtry = mtry;
    if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y[0]; }))
        forest.warning = "only class " + std::to_string(y[0]) + " present; every tree is a single leaf";

    for (int t = 0; t < cfg.n_trees; ++t) {
        Tree tree;
        tree.seed = num::derive_seed(cfg.seed, "forest/tree" + std::to_string(t));
        num::Rng rng(tree.seed);
        auto idx = bootstrap_indices(rng, X.size());
        std::vector<char> in_bag(X.size(), 0);
        for (auto i : idx) in_bag[i] = 1;
        tree.oob_fraction = static_cast<double>(std::count(in_bag.begin(), in_bag.end(), 0)) / static_cast<double>(X.size());
        detail::Builder b{X, y, forest.config, mtry, rng, tree};
        b.build(std::move(idx), 0);
        forest.trees.push_back(std::move(tree));
    }
    return forest;
}

/// Leaf vote of one tree: majority class of the leaf histogram, lowest index on ties.
inline int leaf_vote(const Node& leaf) {
    return static_cast<int>(std::max_element(leaf.hist.begin(), leaf.hist.end()) - leaf.hist.begin());
}

inline Prediction predict(const Forest& f, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != f.n_features)
        throw ContractError("forest predict: expected " + std::to_string(f.n_features) + " features, got " +
                            std::to_string(x.size()));
    if (f.trees.empty()) throw ContractError("forest predict: empty forest");
    Prediction p;
    std::array<int, kClasses> votes{};
    for (const auto& t : f.trees) {
        const auto& leaf = t.leaf_for(x.data());
        ++votes[static_cast<std::size_t>(leaf_vote(leaf))];
        double n = 0;
        for (auto c : leaf.hist) n += c;
        for (int c = 0; c < kClasses; ++c) p.prob_sum[c] += n > 0 ? leaf.hist[c] / n : 0.0;
    }
    for (int c = 0; c < kClasses; ++c) p.shares[c] = static_cast<double>(votes[c]) / static_cast<double>(f.trees.size());
    p.label = 0;
    for (int c = 1; c < kClasses; ++c)
        if (votes[c] > votes[p.label] || (votes[c] == votes[p.label] && p.prob_sum[c] > p.prob_sum[p.label])) p.label = c;
    return p;
}

// ---------------------------------------------------------------------------
// GTCK section:
//   forest/meta     [version, n_trees, mtry, max_depth, min_leaf, n_features, seed(4 x u16)]
//   forest/tree/<i> [nodes x 10]: feature, left, right, hist0..2, threshold(4 x u16)
//   forest/tree/<i>/info [seed(4 x u16), oob(4 x u16)]

namespace detail {
inline std::vector<float> pack_u64(std::uint64_t v) { return ckpt::pack_f64({std::bit_cast<double>(v)}); }
inline std::uint64_t unpack_u64(const std::vector<float>& f) { return std::bit_cast<std::uint64_t>(ckpt::unpack_f64(f)[0]); }
inline std::vector<float> slice(const std::vector<float>& v, std::size_t a, std::size_t n) {
    if (a + n > v.size()) throw CheckpointError(CheckpointError::Kind::Corrupt, "gtck: short forest record");
    return {v.begin() + static_cast<std::ptrdiff_t>(a), v.begin() + static_cast<std::ptrdiff_t>(a + n)};
}
} // namespace detail

inline std::vector<ckpt::Record> to_records(const Forest& f) {
    std::vector<ckpt::Record> out;
    ckpt::Record meta{"forest/meta", {10}, {}};
    for (int v : {static_cast<int>(kSectionVersion), f.config.n_trees, f.config.mtry, f.config.max_depth,
                  f.config.min_leaf, f.n_features})
        meta.payload.push_back(static_cast<float>(v));
    for (float v : detail::pack_u64(f.config.seed)) meta.payload.push_back(v);
    out.push_back(std::move(meta));
    for (std::size_t t = 0; t < f.trees.size(); ++t) {
        const auto& tree = f.trees[t];
        ckpt::Record r{"forest/tree/" + std::to_string(t), {static_cast<std::uint32_t>(tree.nodes.size()), 10}, {}};
        for (const auto& n : tree.nodes) {
            for (int v : {n.feature, n.left, n.right}) r.payload.push_back(static_cast<float>(v));
            for (auto c : n.hist) {
                if (c >= (1u << 24)) throw ContractError("forest: leaf histogram too large to serialise");
                r.payload.push_back(static_cast<float>(c));
            }
            for (float v : ckpt::pack_f64({n.threshold})) r.payload.push_back(v);
        }
        out.push_back(std::move(r));
        ckpt::Record info{"forest/tree/" + std::to_string(t) + "/info", {8}, detail::pack_u64(tree.seed)};
        for (float v : ckpt::pack_f64({tree.oob_fraction})) info.payload.push_back(v);
        out.push_back(std::move(info));
    }
    return out;
}

inline Forest forest_from_records(const std::vector<ckpt::Record>& recs) {
    using K = CheckpointError::Kind;
    const auto& meta = ckpt::find(recs, "forest/meta");
    if (meta.payload.size() != 10) throw CheckpointError(K::Corrupt, "gtck: bad forest/meta record");
    if (static_cast<std::uint32_t>(meta.payload[0]) != kSectionVersion)
        throw CheckpointError(K::Version, "gtck: forest section version " + std::to_string(meta.payload[0]) +
                                              ", expected " + std::to_string(kSectionVersion));
    Forest f;
    f.config.n_trees = static_cast<int>(meta.payload[1]);
    f.config.mtry = static_cast<int>(meta.payload[2]);
    f.config.max_depth = static_cast<int>(meta.payload[3]);
    f.config.min_leaf = static_cast<int>(meta.payload[4]);
    f.n_features = static_cast<int>(meta.payload[5]);
    f.config.seed = detail::unpack_u64(detail::slice(meta.payload, 6, 4));
    for (int t = 0; t < f.config.n_trees; ++t) {
        const auto& r = ckpt::find(recs, "forest/tree/" + std::to_string(t));
        if (r.dims.size() != 2 || r.dims[1] != 10) throw CheckpointError(K::Corrupt, "gtck: bad forest tree record");
        Tree tree;
        for (std::uint32_t i = 0; i < r.dims[0]; ++i) {
            const auto row = detail::slice(r.payload, 10u * i, 10);
            Node n;
            n.feature = static_cast<int>(row[0]);
            n.left = static_cast<int>(row[1]);
            n.right = static_cast<int>(row[2]);
            for (int c = 0; c < kClasses; ++c) n.hist[c] = static_cast<std::uint32_t>(row[3 + c]);
            n.threshold = ckpt::unpack_f64(detail::slice(row, 6, 4))[0];
            tree.nodes.push_back(n);
        }
        for (const auto& n : tree.nodes)
            if (!n.leaf() && (n.feature >= f.n_features || n.left <= 0 || n.right <= 0 ||
                              n.left >= static_cast<int>(tree.nodes.size()) ||
                              n.right >= static_cast<int>(tree.nodes.size())))
                throw CheckpointError(K::Corrupt, "gtck: forest tree " + std::to_string(t) + " has a dangling child");
        if (tree.nodes.empty()) throw CheckpointError(K::Corrupt, "gtck: empty forest tree");
        const auto& info = ckpt::find(recs, "forest/tree/" + std::to_string(t) + "/info");
        tree.seed = detail::unpack_u64(detail::slice(info.payload, 0, 4));
        tree.oob_fraction = ckpt::unpack_f64(detail::slice(info.payload, 4, 4))[0];
        f.trees.push_back(std::move(tree));
    }
    return f;
}

inline void save_forest(const std::filesystem::path& path, const Forest& f) { ckpt::save(path, to_records(f)); }
inline Forest load_forest(const std::filesystem::path& path) { return forest_from_records(ckpt::load(path)); }

} // namespace gtd::forest
