#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "flowstage/common.hpp"
#include "flowstage/linalg.hpp"

namespace flowstage {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Logistic meta-model over the base models' positive-class probabilities.
struct LogisticMeta {
    Vector weights;  // one weight per meta-feature, default [gcn, forest]
    double bias = 0.0;
    double threshold = 0.5;
};

struct StackerConfig {
    int folds = 5;
    int epochs = 200;
    double step = 0.05;
    std::uint64_t seed = 0;
};

// Balanced seeded fold assignment; every sample gets a fold in [0, k).
inline std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidConfig("need at least 2 folds");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[uniform_index(rng, i)]);
    std::vector<int> folds(n);
    for (std::size_t i = 0; i < n; ++i) folds[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return folds;
}

namespace detail {

// Mean logistic loss with a tiny ridge term (1e-9) that keeps the optimum
// finite on separable inputs.
inline constexpr double kMetaRidge = 1e-9;

inline double logistic_objective(const Matrix& x, const std::vector<std::uint8_t>& y,
                                 const Vector& w, double b) {
    const double n = static_cast<double>(y.size());
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double z = x.row(static_cast<Eigen::Index>(i)).dot(w) + b;
        // log(1+e^z) - y z, computed stably
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        total += softplus - (y[i] ? z : 0.0);
    }
    return total / n + 0.5 * kMetaRidge * w.squaredNorm();
}

}  // namespace detail

// Fits the meta-model on out-of-fold base probabilities: Adam passes first,
// then Newton steps polish to the optimum so the fused model never does
// worse than either base alone (up to the ridge term).
inline LogisticMeta fit_logistic_meta(const Matrix& meta_features,
                                      const std::vector<std::uint8_t>& labels,
                                      const StackerConfig& cfg = {}) {
    if (static_cast<std::size_t>(meta_features.rows()) != labels.size())
        throw LengthMismatch("meta feature rows must match label count");
    bool has_pos = false, has_neg = false;
    for (auto v : labels) (v ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw DegenerateLabels("meta labels contain a single class");

    const Eigen::Index f = meta_features.cols();
    const double n = static_cast<double>(labels.size());
    Vector w = Vector::Zero(f);
    double b = 0.0;

    auto gradient = [&](const Vector& wv, double bv, Vector& gw, double& gb) {
        gw = Vector::Zero(f);
        gb = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const double p = sigmoid(meta_features.row(r).dot(wv) + bv);
            const double d = p - (labels[i] ? 1.0 : 0.0);
            gw += d * meta_features.row(r).transpose();
            gb += d;
        }
        gw = gw / n + detail::kMetaRidge * wv;
        gb /= n;
    };

    AdamState opt_w(f, 1), opt_b(1, 1);
    Vector gw;
    double gb;
    Matrix b_mat(1, 1);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        gradient(w, b, gw, gb);
        opt_w.update(w, gw, cfg.step);
        b_mat(0, 0) = b;
        Matrix gb_mat(1, 1);
        gb_mat(0, 0) = gb;
        opt_b.update(b_mat, gb_mat, cfg.step);
        b = b_mat(0, 0);
    }

    // Newton polish with backtracking on the augmented [w; b] system.
    for (int iter = 0; iter < 100; ++iter) {
        Matrix h = Matrix::Zero(f + 1, f + 1);
        Vector g = Vector::Zero(f + 1);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            Vector xi(f + 1);
            xi.head(f) = meta_features.row(r).transpose();
            xi(f) = 1.0;
            const double p = sigmoid(meta_features.row(r).dot(w) + b);
            g += (p - (labels[i] ? 1.0 : 0.0)) * xi;
            h += p * (1.0 - p) * xi * xi.transpose();
        }
        g /= n;
        h /= n;
        g.head(f) += detail::kMetaRidge * w;
        h.topLeftCorner(f, f) += detail::kMetaRidge * Matrix::Identity(f, f);
        h.diagonal().array() += 1e-14;
        if (g.norm() < 1e-13) break;
        Vector delta = h.ldlt().solve(g);
        const double before = detail::logistic_objective(meta_features, labels, w, b);
        double scale = 1.0;
        for (int bt = 0; bt < 30; ++bt) {
            Vector w_try = w - scale * delta.head(f);
            const double b_try = b - scale * delta(f);
            if (detail::logistic_objective(meta_features, labels, w_try, b_try) <= before) {
                w = w_try;
                b = b_try;
                break;
            }
            scale *= 0.5;
        }
    }

    LogisticMeta meta;
    meta.weights = w;
    meta.bias = b;
    return meta;
}

struct StackedPrediction {
    double probability = 0.0;
    bool is_attack = false;
};

inline StackedPrediction stacked_predict(const LogisticMeta& meta, double gcn_prob,
                                         double forest_prob) {
    Vector x(2);
    x << gcn_prob, forest_prob;
    const double p = sigmoid(meta.weights.dot(x) + meta.bias);
    return StackedPrediction{p, p >= meta.threshold};
}

inline double meta_training_loss(const LogisticMeta& meta, const Matrix& meta_features,
                                 const std::vector<std::uint8_t>& labels) {
    return detail::logistic_objective(meta_features, labels, meta.weights, meta.bias);
}

}  // namespace flowstage
