#include <catch2/catch_amalgamated.hpp>

#include "flowstage/stacker.hpp"

using namespace flowstage;

namespace {

// Synthetic meta-feature corpus: column 0 informative, column 1 of chosen
// quality (0 = pure noise at 0.5).
struct MetaData {
    Matrix x;
    std::vector<std::uint8_t> y;
};

MetaData make_meta(Rng& rng, std::size_t n, double quality1 = 0.9, double quality2 = 0.0) {
    MetaData d;
    d.x.resize(static_cast<Eigen::Index>(n), 2);
    d.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool pos = bernoulli(rng, 0.5);
        d.y[i] = pos ? 1 : 0;
        auto base_prob = [&](double quality) {
            if (quality == 0.0) return 0.5;
            const double mean = pos ? 0.5 + 0.4 * quality : 0.5 - 0.4 * quality;
            return std::clamp(mean + normal_real(rng, 0.0, 0.12), 0.0, 1.0);
        };
        d.x(static_cast<Eigen::Index>(i), 0) = base_prob(quality1);
        d.x(static_cast<Eigen::Index>(i), 1) = base_prob(quality2);
    }
    return d;
}

double accuracy(const LogisticMeta& meta, const MetaData& d) {
    double ok = 0;
    for (std::size_t i = 0; i < d.y.size(); ++i) {
        const auto p = stacked_predict(meta, d.x(static_cast<Eigen::Index>(i), 0),
                                       d.x(static_cast<Eigen::Index>(i), 1));
        ok += (p.is_attack ? 1 : 0) == d.y[i] ? 1.0 : 0.0;
    }
    return ok / static_cast<double>(d.y.size());
}

}  // namespace

TEST_CASE("stacked_predict sigmoid arithmetic") {
    LogisticMeta meta;
    meta.weights = Vector::Zero(2);
    meta.bias = 0.0;
    CHECK(stacked_predict(meta, 0.123, 0.987).probability == 0.5);
    CHECK(stacked_predict(meta, 0.0, 0.0).is_attack);  // 0.5 >= threshold

    meta.weights = Vector(2);
    meta.weights << 4.0, 4.0;
    meta.bias = -4.0;
    CHECK(stacked_predict(meta, 1.0, 1.0).probability == Catch::Approx(0.9820137900379085));
    CHECK(stacked_predict(meta, 0.0, 0.0).probability == Catch::Approx(0.01798620996209156));
    CHECK_FALSE(stacked_predict(meta, 0.0, 0.0).is_attack);
}

TEST_CASE("perfect base probabilities give perfect meta training accuracy") {
    MetaData d;
    d.x.resize(8, 2);
    d.y = {0, 0, 0, 0, 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) {
        d.x(i, 0) = i < 4 ? 0.0 : 1.0;
        d.x(i, 1) = i < 4 ? 0.0 : 1.0;
    }
    const auto meta = fit_logistic_meta(d.x, d.y);
    CHECK(accuracy(meta, d) == 1.0);
    CHECK(meta.weights(0) > 0.0);
    CHECK(meta.weights(1) > 0.0);
}

TEST_CASE("meta never does worse than the best single base model") {
    for (std::uint64_t seed : {1ull, 2ull, 7ull, 13ull}) {
        Rng rng(seed);
        const auto d = make_meta(rng, 300, 0.85, 0.35);
        const auto both = fit_logistic_meta(d.x, d.y);
        const double loss_both = meta_training_loss(both, d.x, d.y);
        for (int col = 0; col < 2; ++col) {
            Matrix single = d.x.col(col);
            const auto one = fit_logistic_meta(single, d.y);
            LogisticMeta embedded;
            embedded.weights = Vector::Zero(2);
            embedded.weights(col) = one.weights(0);
            embedded.bias = one.bias;
            const double loss_one = meta_training_loss(embedded, d.x, d.y);
            CHECK(loss_both <= loss_one + 1e-6);
        }
    }
}

TEST_CASE("a constant-0.5 base model contributes almost nothing") {
    Rng rng(21);
    const auto d = make_meta(rng, 400, 0.9, 0.0);  // second input stuck at 0.5
    const auto meta = fit_logistic_meta(d.x, d.y);
    LogisticMeta ablated = meta;
    ablated.weights(1) = 0.0;
    // zeroing the dead input's weight moves accuracy by < 1%
    CHECK(std::abs(accuracy(meta, d) - accuracy(ablated, d)) < 0.01);
}

TEST_CASE("prediction is monotone when both weights are nonnegative") {
    Rng rng(3);
    const auto d = make_meta(rng, 200, 0.8, 0.6);
    const auto meta = fit_logistic_meta(d.x, d.y);
    REQUIRE(meta.weights(0) >= 0.0);
    REQUIRE(meta.weights(1) >= 0.0);
    for (double g = 0.0; g <= 1.0; g += 0.25) {
        double prev = -1.0;
        for (double f = 0.0; f <= 1.0; f += 0.25) {
            const double p = stacked_predict(meta, g, f).probability;
            CHECK(p >= prev);
            prev = p;
        }
    }
}

TEST_CASE("fold assignment is balanced, seeded and complete") {
    const auto folds = assign_folds(103, 5, 42);
    REQUIRE(folds.size() == 103);
    std::array<int, 5> counts{};
    for (int f : folds) {
        REQUIRE((f >= 0 && f < 5));
        ++counts[static_cast<std::size_t>(f)];
    }
    for (int c : counts) CHECK(std::abs(c - 103 / 5) <= 1);
    CHECK(assign_folds(103, 5, 42) == folds);
    CHECK(assign_folds(103, 5, 43) != folds);
    CHECK_THROWS_AS(assign_folds(10, 1, 0), InvalidConfig);
}

TEST_CASE("degenerate labels are rejected") {
    Matrix x(4, 2);
    x.setConstant(0.5);
    CHECK_THROWS_AS(fit_logistic_meta(x, {1, 1, 1, 1}), DegenerateLabels);
    CHECK_THROWS_AS(fit_logistic_meta(x, {1, 0}), LengthMismatch);
}

TEST_CASE("separable inputs stay finite thanks to the ridge term") {
    Matrix x(6, 2);
    std::vector<std::uint8_t> y{0, 0, 0, 1, 1, 1};
    for (int i = 0; i < 6; ++i) {
        x(i, 0) = i < 3 ? 0.05 : 0.95;
        x(i, 1) = i < 3 ? 0.1 : 0.9;
    }
    const auto meta = fit_logistic_meta(x, y);
    CHECK(std::isfinite(meta.weights(0)));
    CHECK(std::isfinite(meta.weights(1)));
    CHECK(std::isfinite(meta.bias));
    CHECK(accuracy(meta, {x, y}) == 1.0);
}
