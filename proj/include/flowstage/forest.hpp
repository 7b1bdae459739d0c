#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "flowstage/common.hpp"
#include "flowstage/linalg.hpp"

namespace flowstage {

struct ForestConfig {
    int tree_count = 100;
    int max_depth = 16;
    int min_samples_leaf = 2;
    int features_per_split = 0;  // 0 = ceil(sqrt(F))
    std::uint64_t seed = 0;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double count_neg = 0.0;
    double count_pos = 0.0;
    double p_pos = 0.0;

    bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    double predict_pos(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
        int idx = 0;
        while (!nodes[idx].is_leaf())
            idx = row(nodes[idx].feature) < nodes[idx].threshold ? nodes[idx].left
                                                                 : nodes[idx].right;
        return nodes[idx].p_pos;
    }

    // Index of the leaf a sample is routed to; used by rank-invariance checks.
    int route(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
        int idx = 0;
        while (!nodes[idx].is_leaf())
            idx = row(nodes[idx].feature) < nodes[idx].threshold ? nodes[idx].left
                                                                 : nodes[idx].right;
        return idx;
    }
};

struct RandomForest {
    std::vector<DecisionTree> trees;
    ForestConfig config;
    Eigen::Index feature_dim = 0;
};

inline std::vector<std::size_t> bootstrap_indices(std::uint64_t forest_seed, int tree,
                                                  std::size_t n) {
    Rng rng(derive_seed(forest_seed, "forest.bootstrap", static_cast<std::uint64_t>(tree)));
    std::vector<std::size_t> idx(n);
    for (auto& v : idx) v = static_cast<std::size_t>(uniform_index(rng, n));
    return idx;
}

namespace detail {

inline double gini(double n_neg, double n_pos) {
    const double n = n_neg + n_pos;
    if (n <= 0.0) return 0.0;
    const double p0 = n_neg / n, p1 = n_pos / n;
    return 1.0 - p0 * p0 - p1 * p1;
}

struct TreeBuilder {
    const Matrix& x;
    const std::vector<std::uint8_t>& y;
    int max_depth;
    int min_samples_leaf;
    int features_per_split;
    Rng& rng;
    DecisionTree& tree;

    int make_leaf(const std::vector<std::size_t>& samples) {
        TreeNode node;
        for (std::size_t s : samples) (y[s] ? node.count_pos : node.count_neg) += 1.0;
        node.p_pos = node.count_pos / (node.count_pos + node.count_neg);
        tree.nodes.push_back(node);
        return static_cast<int>(tree.nodes.size() - 1);
    }

    // Exhaustive threshold search: midpoints between consecutive distinct
    // sorted values, weighted Gini, candidates visited in (feature asc,
    // threshold asc) order so ties resolve to the lowest feature then the
    // lowest threshold.
    int build(std::vector<std::size_t>& samples, int depth) {
        const std::size_t n = samples.size();
        double n_pos = 0.0;
        for (std::size_t s : samples) n_pos += y[s] ? 1.0 : 0.0;
        const bool pure = n_pos == 0.0 || n_pos == static_cast<double>(n);
        if (pure || depth >= max_depth || n < 2 * static_cast<std::size_t>(min_samples_leaf))
            return make_leaf(samples);

        const int f_total = static_cast<int>(x.cols());
        std::vector<int> candidates(static_cast<std::size_t>(f_total));
        for (int f = 0; f < f_total; ++f) candidates[static_cast<std::size_t>(f)] = f;
        const int m = std::min(features_per_split, f_total);
        for (int i = 0; i < m; ++i) {
            const auto j = i + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(f_total - i)));
            std::swap(candidates[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(j)]);
        }
        candidates.resize(static_cast<std::size_t>(m));
        std::sort(candidates.begin(), candidates.end());

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_score = std::numeric_limits<double>::infinity();
        std::vector<std::pair<double, std::uint8_t>> column(n);
        for (int f : candidates) {
            for (std::size_t i = 0; i < n; ++i)
                column[i] = {x(static_cast<Eigen::Index>(samples[i]), f), y[samples[i]]};
            std::sort(column.begin(), column.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            double left_pos = 0.0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                left_pos += column[i].second ? 1.0 : 0.0;
                if (column[i + 1].first <= column[i].first) continue;
                const double n_left = static_cast<double>(i + 1);
                const double n_right = static_cast<double>(n - i - 1);
                if (n_left < min_samples_leaf || n_right < min_samples_leaf) continue;
                const double score = (n_left * gini(n_left - left_pos, left_pos) +
                                      n_right * gini(n_right - (n_pos - left_pos), n_pos - left_pos)) /
                                     static_cast<double>(n);
                if (score < best_score) {
                    best_score = score;
                    best_feature = f;
                    best_threshold = 0.5 * (column[i].first + column[i + 1].first);
                }
            }
        }
        if (best_feature < 0) return make_leaf(samples);

        std::vector<std::size_t> left, right;
        left.reserve(n);
        right.reserve(n);
        for (std::size_t s : samples)
            (x(static_cast<Eigen::Index>(s), best_feature) < best_threshold ? left : right)
                .push_back(s);

        TreeNode node;
        node.feature = best_feature;
        node.threshold = best_threshold;
        for (std::size_t s : samples) (y[s] ? node.count_pos : node.count_neg) += 1.0;
        node.p_pos = node.count_pos / (node.count_pos + node.count_neg);
        tree.nodes.push_back(node);
        const int self = static_cast<int>(tree.nodes.size() - 1);
        tree.nodes[static_cast<std::size_t>(self)].left = build(left, depth + 1);
        tree.nodes[static_cast<std::size_t>(self)].right = build(right, depth + 1);
        return self;
    }
};

inline DecisionTree fit_tree(const Matrix& x, const std::vector<std::uint8_t>& y,
                             const ForestConfig& cfg, int tree_index) {
    DecisionTree tree;
    Rng rng(derive_seed(cfg.seed, "forest.split", static_cast<std::uint64_t>(tree_index)));
    auto samples = bootstrap_indices(cfg.seed, tree_index, y.size());
    const int m = cfg.features_per_split > 0
                      ? cfg.features_per_split
                      : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(x.cols()))));
    detail::TreeBuilder builder{x, y, cfg.max_depth, cfg.min_samples_leaf, m, rng, tree};
    builder.build(samples, 0);
    return tree;
}

}  // namespace detail

// Bagged Gini trees on bootstrap samples. Per-tree seeds derive from the
// master seed, so parallel fitting is bit-identical to sequential.
inline RandomForest fit_forest(const Matrix& x, const std::vector<std::uint8_t>& y,
                               ForestConfig cfg) {
    if (static_cast<std::size_t>(x.rows()) != y.size())
        throw LengthMismatch("feature rows must match label count");
    if (y.size() < 2) throw DegenerateLabels("need at least two samples");
    bool has_pos = false, has_neg = false;
    for (auto v : y) (v ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw DegenerateLabels("training labels contain a single class");
    if (cfg.tree_count < 1) throw InvalidConfig("tree_count must be >= 1");
    if (cfg.features_per_split > x.cols())
        throw InvalidConfig("features_per_split exceeds feature count");

    RandomForest forest;
    forest.config = cfg;
    forest.feature_dim = x.cols();
    forest.trees.resize(static_cast<std::size_t>(cfg.tree_count));

    const unsigned workers =
        std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                           static_cast<unsigned>(cfg.tree_count));
    if (workers <= 1) {
        for (int t = 0; t < cfg.tree_count; ++t)
            forest.trees[static_cast<std::size_t>(t)] = detail::fit_tree(x, y, cfg, t);
        return forest;
    }
    std::atomic<int> next{0};
    std::vector<std::future<void>> jobs;
    for (unsigned wkr = 0; wkr < workers; ++wkr)
        jobs.push_back(std::async(std::launch::async, [&] {
            for (int t = next.fetch_add(1); t < cfg.tree_count; t = next.fetch_add(1))
                forest.trees[static_cast<std::size_t>(t)] = detail::fit_tree(x, y, cfg, t);
        }));
    for (auto& j : jobs) j.get();
    return forest;
}

// Soft voting: mean of per-tree leaf class frequencies.
inline Matrix forest_predict_proba(const RandomForest& forest, const Matrix& x) {
    if (x.cols() != forest.feature_dim)
        throw DimensionMismatch("feature dim does not match training data");
    Matrix probs(x.rows(), 2);
    const double inv = 1.0 / static_cast<double>(forest.trees.size());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double pos = 0.0;
        for (const auto& tree : forest.trees) pos += tree.predict_pos(x.row(i));
        pos *= inv;
        probs(i, 0) = 1.0 - pos;
        probs(i, 1) = pos;
    }
    return probs;
}

}  // namespace flowstage
