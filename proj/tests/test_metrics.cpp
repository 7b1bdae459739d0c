#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "flowstage/metrics.hpp"
#include "flowstage/scenario.hpp"
#include "helpers.hpp"

using namespace flowstage;

TEST_CASE("compute_metrics arithmetic example") {
    // tp=90, fn=10, fp=10, tn=890
    std::vector<std::uint8_t> pred, labels;
    auto add = [&](int n, int p, int l) {
        for (int i = 0; i < n; ++i) {
            pred.push_back(static_cast<std::uint8_t>(p));
            labels.push_back(static_cast<std::uint8_t>(l));
        }
    };
    add(90, 1, 1);
    add(10, 0, 1);
    add(10, 1, 0);
    add(890, 0, 0);
    const auto m = compute_metrics(pred, labels);
    CHECK(m.cm.tp == 90);
    CHECK(m.cm.fn == 10);
    CHECK(m.cm.fp == 10);
    CHECK(m.cm.tn == 890);
    CHECK(m.precision == Catch::Approx(0.9));
    CHECK(m.recall == Catch::Approx(0.9));
    CHECK(m.f1 == Catch::Approx(0.9));
    CHECK(m.fpr == Catch::Approx(10.0 / 900.0));
}

TEST_CASE("perfect predictions give f1 1 and fpr 0") {
    const std::vector<std::uint8_t> labels{1, 0, 1, 0, 0};
    const auto m = compute_metrics(labels, labels);
    CHECK(m.f1 == 1.0);
    CHECK(m.fpr == 0.0);
    CHECK_FALSE(m.zero_division);
}

TEST_CASE("random vectors equal an independent recount with exact identities") {
    Rng rng(1000);
    std::vector<std::uint8_t> pred(1000), labels(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        pred[i] = bernoulli(rng, 0.4) ? 1 : 0;
        labels[i] = bernoulli(rng, 0.3) ? 1 : 0;
    }
    const auto m = compute_metrics(pred, labels);

    // brute-force recount, written differently on purpose
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        tp += pred[i] == 1 && labels[i] == 1;
        fp += pred[i] == 1 && labels[i] == 0;
        tn += pred[i] == 0 && labels[i] == 0;
        fn += pred[i] == 0 && labels[i] == 1;
    }
    CHECK(m.cm.tp == static_cast<std::size_t>(tp));
    CHECK(m.cm.fp == static_cast<std::size_t>(fp));
    CHECK(m.cm.tn == static_cast<std::size_t>(tn));
    CHECK(m.cm.fn == static_cast<std::size_t>(fn));
    CHECK(m.cm.total() == 1000);

    // metric identities to 1e-12
    CHECK(std::abs(m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)) < 1e-12);
    CHECK(std::abs(m.fpr - static_cast<double>(fp) / static_cast<double>(fp + tn)) < 1e-12);
    CHECK(std::abs(m.precision - static_cast<double>(tp) / static_cast<double>(tp + fp)) < 1e-12);
}

TEST_CASE("swapping class polarity transposes the confusion matrix") {
    Rng rng(7);
    std::vector<std::uint8_t> pred(300), labels(300);
    for (std::size_t i = 0; i < 300; ++i) {
        pred[i] = bernoulli(rng, 0.5) ? 1 : 0;
        labels[i] = bernoulli(rng, 0.5) ? 1 : 0;
    }
    const auto m = compute_metrics(pred, labels);
    std::vector<std::uint8_t> ipred(300), ilabels(300);
    for (std::size_t i = 0; i < 300; ++i) {
        ipred[i] = 1 - pred[i];
        ilabels[i] = 1 - labels[i];
    }
    const auto inv = compute_metrics(ipred, ilabels);
    CHECK(inv.cm.tp == m.cm.tn);
    CHECK(inv.cm.tn == m.cm.tp);
    CHECK(inv.cm.fp == m.cm.fn);
    CHECK(inv.cm.fn == m.cm.fp);
    // negative-class precision/recall of the original = positive metrics of the swap
    const double neg_precision = static_cast<double>(m.cm.tn) / static_cast<double>(m.cm.tn + m.cm.fn);
    const double neg_recall = static_cast<double>(m.cm.tn) / static_cast<double>(m.cm.tn + m.cm.fp);
    CHECK(inv.precision == Catch::Approx(neg_precision));
    CHECK(inv.recall == Catch::Approx(neg_recall));
}

TEST_CASE("zero-denominator conventions report 0 with a flag") {
    const auto no_pred_pos = compute_metrics({0, 0, 0}, {1, 1, 0});
    CHECK(no_pred_pos.precision == 0.0);
    CHECK(no_pred_pos.f1 == 0.0);
    CHECK(no_pred_pos.zero_division);

    const auto no_negatives = compute_metrics({1, 1}, {1, 1});
    CHECK(no_negatives.fpr == 0.0);

    CHECK_THROWS_AS(compute_metrics({1, 0}, {1}), LengthMismatch);
    CHECK_THROWS_AS(compute_metrics({}, {}), LengthMismatch);
}

TEST_CASE("ip_split separates source IPs exactly") {
    const auto trace = generate_trace(testutil::tiny_scenario());
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        IpSplitConfig cfg;
        cfg.test_fraction = 0.3;
        cfg.seed = seed;
        const auto split = ip_split(trace, cfg);
        // src_ip sets disjoint
        for (const auto& ip : split.test_ips) CHECK(split.train_ips.count(ip) == 0);
        // every flow lands in exactly one side, keyed by its src_ip
        CHECK(split.train.size() + split.test.size() == trace.size());
        for (const auto& f : split.train.flows) CHECK(split.train_ips.count(f.src_ip) == 1);
        for (const auto& f : split.test.flows) CHECK(split.test_ips.count(f.src_ip) == 1);
        CHECK_FALSE(split.train.flows.empty());
        CHECK_FALSE(split.test.flows.empty());
    }
}

TEST_CASE("ip_split is deterministic per seed") {
    const auto trace = generate_trace(testutil::tiny_scenario());
    IpSplitConfig cfg;
    cfg.seed = 5;
    const auto a = ip_split(trace, cfg);
    const auto b = ip_split(trace, cfg);
    CHECK(a.train_ips == b.train_ips);
    CHECK(a.test_ips == b.test_ips);
    CHECK(a.train.size() == b.train.size());
}

TEST_CASE("ip_split honors the key choice") {
    const auto trace = generate_trace(testutil::tiny_scenario());
    IpSplitConfig cfg;
    cfg.seed = 1;
    cfg.key = SplitKey::Dst;
    const auto split = ip_split(trace, cfg);
    for (const auto& f : split.test.flows) CHECK(split.test_ips.count(f.dst_ip) == 1);

    cfg.key = SplitKey::Both;
    const auto both = ip_split(trace, cfg);
    CHECK(both.train.size() + both.test.size() + both.dropped == trace.size());
    for (const auto& f : both.train.flows) {
        CHECK(both.train_ips.count(f.src_ip) == 1);
        CHECK(both.train_ips.count(f.dst_ip) == 1);
    }
}

TEST_CASE("ip_split flags degenerate sides instead of failing") {
    // two source IPs, one of which only sends normal traffic
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "x", "scanning"),
                                      testutil::make_flow(2, "a", "x", "normal"),
                                      testutil::make_flow(3, "b", "x", "normal")});
    IpSplitConfig cfg;
    cfg.test_fraction = 0.5;
    cfg.seed = 0;
    const auto split = ip_split(ds, cfg);
    CHECK_FALSE(split.warnings.empty());

    auto tiny = testutil::make_dataset({testutil::make_flow(1, "a", "a", "normal")});
    CHECK_THROWS_AS(ip_split(tiny, cfg), InvalidConfig);
    IpSplitConfig bad;
    bad.test_fraction = 1.5;
    CHECK_THROWS_AS(ip_split(ds, bad), InvalidConfig);
}

TEST_CASE("timeline export lists one row per malicious flow") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "atk", "victim", "scanning"),
                                      testutil::make_flow(2, "usr", "srv", "normal"),
                                      testutil::make_flow(3, "atk", "victim", "ransomware")});
    std::ostringstream attackers, targets;
    export_timeline(ds, attackers, targets);
    const std::string a = attackers.str();
    CHECK(a.rfind("# flowstage.timeline.v1\n", 0) == 0);
    CHECK(a.find("atk,victim,1,1") != std::string::npos);
    CHECK(a.find("atk,victim,3,3") != std::string::npos);
    CHECK(a.find("usr") == std::string::npos);
    const std::string t = targets.str();
    CHECK(t.find("victim,atk,1,1") != std::string::npos);
}
