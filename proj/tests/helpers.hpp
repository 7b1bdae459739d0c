#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "flowstage/detector.hpp"
#include "flowstage/flow.hpp"
#include "flowstage/scenario.hpp"

namespace testutil {

using namespace flowstage;

// Minimal schema used by hand-built datasets: two numeric, one categorical.
inline FeatureSchema tiny_schema() {
    FeatureSchema s;
    s.numeric_names = {"duration", "src_bytes"};
    s.categorical_names = {"service"};
    return s;
}

inline FlowRecord make_flow(double ts, const std::string& src, const std::string& dst,
                            const std::string& attack = "normal", double duration = 1.0,
                            double src_bytes = 100.0, const std::string& service = "http") {
    FlowRecord f;
    f.timestamp = ts;
    f.src_ip = src;
    f.src_port = 40000;
    f.dst_ip = dst;
    f.dst_port = 80;
    f.protocol = "tcp";
    f.numeric_features = {duration, src_bytes};
    f.categorical_features = {service};
    f.attack_type = attack;
    return f;
}

inline LabeledDataset make_dataset(std::vector<FlowRecord> flows) {
    LabeledDataset ds;
    ds.schema = tiny_schema();
    const auto mapping = StageMapping::default_mapping();
    std::stable_sort(flows.begin(), flows.end(),
                     [](const FlowRecord& a, const FlowRecord& b) { return a.timestamp < b.timestamp; });
    for (auto& f : flows) {
        ds.stage_labels.push_back(map_attack_to_stage(f.attack_type, mapping));
        ds.flows.push_back(std::move(f));
    }
    return ds;
}

// Random flows over an IP pool, for graph-oracle style checks.
inline LabeledDataset random_flows(Rng& rng, std::size_t n, int n_ips) {
    std::vector<FlowRecord> flows;
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = uniform_index(rng, static_cast<std::uint64_t>(n_ips));
        auto b = uniform_index(rng, static_cast<std::uint64_t>(n_ips));
        flows.push_back(make_flow(static_cast<double>(i), "10.0.0." + std::to_string(a),
                                  "10.0.0." + std::to_string(b)));
    }
    return make_dataset(std::move(flows));
}

// Fast settings for detector-level tests.
inline DetectorConfig tiny_detector_config(std::uint64_t seed = 11) {
    DetectorConfig cfg;
    cfg.window_size = 128;
    cfg.self_loops = true;
    cfg.gcn.hidden_dim = 8;
    cfg.gcn.epochs = 80;
    cfg.forest.tree_count = 20;
    cfg.forest.max_depth = 10;
    cfg.stacker.folds = 3;
    cfg.seed = seed;
    return cfg;
}

inline ScenarioConfig tiny_scenario(std::uint64_t seed = 5) {
    ScenarioConfig cfg = ScenarioConfig::example(2, 4, 6);
    cfg.seed = seed;
    cfg.duration_s = 150.0;
    cfg.benign_rate = 4.0;
    cfg.chains_per_attacker = 6;
    cfg.class_separation = 1.3;
    return cfg;
}

inline std::string serialize_to_string(const LabeledDataset& ds) {
    std::ostringstream out;
    serialize_flows(ds, out);
    return out.str();
}

}  // namespace testutil
