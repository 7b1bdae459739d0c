#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "flowstage/common.hpp"
#include "flowstage/flow.hpp"

namespace flowstage {

// Per-class generator profile over the canonical numeric columns
// (duration, src_pkts, dst_pkts, src_bytes, dst_bytes) plus token pools for
// the categorical columns. Pools overlap across classes on purpose.
struct StageProfile {
    std::array<double, 5> mean{};
    std::array<double, 5> spread{};
    std::vector<std::string> protos;
    std::vector<std::string> services;
    std::vector<std::string> conn_states;
    std::vector<int> dst_ports;
};

struct ScenarioConfig {
    std::uint64_t seed = 1;
    std::vector<std::string> attacker_ips;
    std::vector<std::string> target_ips;
    std::vector<std::string> benign_ips;
    double benign_rate = 5.0;  // flows per second
    double duration_s = 600.0;
    std::vector<std::vector<int>> stage_patterns{{1, 2, 3}, {1, 1, 2, 3}, {1, 2, 2, 3}};
    int min_stage_repeat = 1;
    int max_stage_repeat = 2;
    double ae_follow_prob = 0.5;
    double mean_attack_gap_s = 1.0;
    int chains_per_attacker = 8;
    double ip_churn_prob = 0.0;   // chance to rotate source IP between stages
    double class_separation = 1.0;  // scales attack-profile distance from benign
    // Chains that will escalate to stage 3 shift their stage-1/2 features by
    // this many spreads; the signal the AE predictor is supposed to find.
    double escalation_bias = 1.2;
    std::map<int, StageProfile> profiles;  // 0=benign, 1..3 = stages

    static std::map<int, StageProfile> default_profiles() {
        std::map<int, StageProfile> p;
        p[0] = StageProfile{{2.0, 9.0, 8.0, 900.0, 1100.0},
                            {1.5, 4.0, 4.0, 450.0, 550.0},
                            {"tcp", "udp"},
                            {"http", "dns", "ssl", "-"},
                            {"SF", "S1"},
                            {80, 53, 443, 8080}};
        p[1] = StageProfile{{0.08, 2.0, 1.0, 90.0, 60.0},
                            {0.08, 1.2, 1.0, 45.0, 50.0},
                            {"tcp"},
                            {"-", "dns"},
                            {"S0", "REJ", "SF"},
                            {22, 23, 80, 443, 3389}};
        p[2] = StageProfile{{3.5, 14.0, 11.0, 1700.0, 700.0},
                            {2.0, 6.0, 5.0, 700.0, 350.0},
                            {"tcp"},
                            {"http", "ssl", "-"},
                            {"SF", "RSTO"},
                            {80, 443, 22}};
        p[3] = StageProfile{{9.0, 42.0, 30.0, 4200.0, 2600.0},
                            {5.0, 18.0, 14.0, 2200.0, 1400.0},
                            {"tcp"},
                            {"http", "-"},
                            {"SF", "OTH"},
                            {80, 443, 4444}};
        return p;
    }

    static ScenarioConfig example(int attackers = 3, int targets = 10, int benign = 20) {
        ScenarioConfig c;
        for (int i = 0; i < attackers; ++i)
            c.attacker_ips.push_back("10.0.9." + std::to_string(10 + i));
        for (int i = 0; i < targets; ++i)
            c.target_ips.push_back("192.168.1." + std::to_string(10 + i));
        for (int i = 0; i < benign; ++i)
            c.benign_ips.push_back("192.168.2." + std::to_string(10 + i));
        c.profiles = default_profiles();
        return c;
    }

    void validate() const {
        if (attacker_ips.empty() || target_ips.empty() || benign_ips.empty())
            throw InvalidConfig("scenario needs attacker, target and benign IPs");
        std::set<std::string> seen;
        for (const auto* role : {&attacker_ips, &target_ips, &benign_ips})
            for (const auto& ip : *role)
                if (!seen.insert(ip).second)
                    throw InvalidConfig("IP " + ip + " appears in more than one role");
        if (ae_follow_prob < 0.0 || ae_follow_prob > 1.0)
            throw InvalidConfig("ae_follow_prob must be in [0, 1]");
        if (ip_churn_prob < 0.0 || ip_churn_prob > 1.0)
            throw InvalidConfig("ip_churn_prob must be in [0, 1]");
        if (duration_s <= 0.0 || benign_rate <= 0.0 || mean_attack_gap_s <= 0.0)
            throw InvalidConfig("durations and rates must be positive");
        if (min_stage_repeat < 1 || max_stage_repeat < min_stage_repeat)
            throw InvalidConfig("bad stage repetition bounds");
        if (chains_per_attacker < 1) throw InvalidConfig("chains_per_attacker must be >= 1");
        if (stage_patterns.empty()) throw InvalidConfig("need at least one stage pattern");
        for (const auto& pattern : stage_patterns) {
            int first1 = -1, first2 = -1, first3 = -1;
            for (std::size_t i = 0; i < pattern.size(); ++i) {
                const int s = pattern[i];
                if (s < 1 || s > 3) throw InvalidConfig("pattern stages must be 1..3");
                if (s == 1 && first1 < 0) first1 = static_cast<int>(i);
                if (s == 2 && first2 < 0) first2 = static_cast<int>(i);
                if (s == 3 && first3 < 0) first3 = static_cast<int>(i);
            }
            if (first1 < 0 || first2 < 0 || first1 > first2)
                throw InvalidConfig("every pattern must reach stage 1 before stage 2");
            if (first3 >= 0 && first3 < first2)
                throw InvalidConfig("stage 3 may not precede stage 2 in a pattern");
        }
        if (profiles.count(0) + profiles.count(1) + profiles.count(2) + profiles.count(3) != 4)
            throw InvalidConfig("profiles for benign and all three stages are required");
    }
};

namespace detail {

inline const char* stage2_tokens[] = {"password", "xss", "injection", "mitm"};
inline const char* stage3_tokens[] = {"backdoor", "ransomware", "ddos", "dos"};

template <typename T>
inline const T& pick(Rng& rng, const std::vector<T>& pool) {
    return pool[static_cast<std::size_t>(uniform_index(rng, pool.size()))];
}

struct RawFlow {
    FlowRecord rec;
    StageLabel label;
};

inline FlowRecord make_flow(Rng& rng, const StageProfile& prof, const StageProfile& benign_prof,
                            double ts, const std::string& src, const std::string& dst,
                            double separation, double escalation, const std::string& attack) {
    FlowRecord f;
    f.timestamp = ts;
    f.src_ip = src;
    f.dst_ip = dst;
    f.src_port = 1024 + static_cast<int>(uniform_index(rng, 64512));
    f.dst_port = prof.dst_ports[static_cast<std::size_t>(uniform_index(rng, prof.dst_ports.size()))];
    f.protocol = pick(rng, prof.protos);
    f.attack_type = attack;

    const bool is_attack = attack != "normal";
    // Escalation pushes duration/src_pkts/src_bytes/dst_bytes upward.
    static constexpr std::array<double, 5> esc_dir{1.0, 1.0, 0.0, 1.0, 1.0};
    std::array<double, 5> v{};
    for (std::size_t j = 0; j < 5; ++j) {
        double mean = prof.mean[j];
        if (is_attack) mean = benign_prof.mean[j] + separation * (prof.mean[j] - benign_prof.mean[j]);
        mean += escalation * esc_dir[j] * prof.spread[j];
        v[j] = std::max(0.0, normal_real(rng, mean, prof.spread[j]));
    }
    // src_ip_bytes is deliberately a giveaway column (offset per class);
    // ingestion drops it, mirroring how it behaves in the real data.
    const double src_ip_bytes =
        v[3] + 40.0 * v[1] + (is_attack ? 50000.0 : 0.0) + normal_real(rng, 0.0, 25.0);
    const double dst_ip_bytes = v[4] + 40.0 * v[2] + normal_real(rng, 0.0, 25.0);
    f.numeric_features = {v[0], v[1], v[2], v[3], v[4], std::max(0.0, src_ip_bytes),
                          std::max(0.0, dst_ip_bytes)};
    f.categorical_features = {f.protocol, pick(rng, prof.services), pick(rng, prof.conn_states)};
    return f;
}

}  // namespace detail

// Seeded synthetic trace: Poisson benign background plus per-attacker
// kill-chain sequences with strictly increasing timestamps inside a chain.
// Escalating chains (the ae_follow coin) emit the pattern's stage-3 suffix
// and carry the escalation feature bias in their stage-1/2 flows.
inline LabeledDataset generate_trace(const ScenarioConfig& cfg) {
    cfg.validate();
    const StageProfile& benign_prof = cfg.profiles.at(0);
    std::vector<detail::RawFlow> raw;

    // Benign background among benign and target hosts.
    {
        Rng rng(derive_seed(cfg.seed, "scenario.benign"));
        std::vector<std::string> pool = cfg.benign_ips;
        pool.insert(pool.end(), cfg.target_ips.begin(), cfg.target_ips.end());
        double t = 0.0;
        while (true) {
            t += exponential_real(rng, cfg.benign_rate);
            if (t >= cfg.duration_s) break;
            const auto& src = detail::pick(rng, pool);
            const std::string* dst = &detail::pick(rng, pool);
            while (*dst == src) dst = &detail::pick(rng, pool);
            raw.push_back({detail::make_flow(rng, benign_prof, benign_prof, t, src, *dst,
                                             cfg.class_separation, 0.0, "normal"),
                           StageLabel::Normal});
        }
    }

    for (std::size_t a = 0; a < cfg.attacker_ips.size(); ++a) {
        Rng rng(derive_seed(cfg.seed, "scenario.attacker", a));
        int churn_counter = 0;
        for (int chain = 0; chain < cfg.chains_per_attacker; ++chain) {
            // Chains occupy staggered slots so every attacker stays active
            // across the whole trace.
            const double slot = cfg.duration_s / static_cast<double>(cfg.chains_per_attacker);
            double t = (static_cast<double>(chain) + uniform_real(rng, 0.0, 0.5)) * slot;
            const auto& target = detail::pick(rng, cfg.target_ips);
            const auto& pattern = detail::pick(rng, cfg.stage_patterns);
            const bool escalate = bernoulli(rng, cfg.ae_follow_prob);

            std::vector<int> steps;
            for (int s : pattern) {
                if (s == 3) continue;
                const int repeats =
                    cfg.min_stage_repeat +
                    static_cast<int>(uniform_index(
                        rng, static_cast<std::uint64_t>(cfg.max_stage_repeat - cfg.min_stage_repeat + 1)));
                for (int r = 0; r < repeats; ++r) steps.push_back(s);
            }
            std::vector<int> suffix;
            for (int s : pattern)
                if (s == 3) suffix.push_back(3);
            if (suffix.empty()) suffix.push_back(3);
            if (escalate) steps.insert(steps.end(), suffix.begin(), suffix.end());

            std::string src = cfg.attacker_ips[a];
            int prev_stage = 0;
            for (int stage : steps) {
                if (stage != prev_stage && prev_stage != 0 && bernoulli(rng, cfg.ip_churn_prob))
                    src = "172.31." + std::to_string(a) + "." + std::to_string(++churn_counter);
                prev_stage = stage;
                t += std::max(exponential_real(rng, 1.0 / cfg.mean_attack_gap_s), 1e-4);
                std::string token = "scanning";
                if (stage == 2)
                    token = detail::stage2_tokens[uniform_index(rng, 4)];
                else if (stage == 3)
                    token = detail::stage3_tokens[uniform_index(rng, 4)];
                const double esc_bias = (escalate && stage <= 2) ? cfg.escalation_bias : 0.0;
                raw.push_back({detail::make_flow(rng, cfg.profiles.at(stage), benign_prof, t,
                                                 src, target, cfg.class_separation, esc_bias,
                                                 token),
                               static_cast<StageLabel>(stage)});
            }
        }
    }

    std::stable_sort(raw.begin(), raw.end(), [](const detail::RawFlow& x, const detail::RawFlow& y) {
        return x.rec.timestamp < y.rec.timestamp;
    });

    LabeledDataset ds;
    ds.schema.numeric_names = FeatureSchemaSpec::default_ton_iot().numeric_names;
    ds.schema.categorical_names = FeatureSchemaSpec::default_ton_iot().categorical_names;
    ds.schema.dropped_names.clear();  // the raw trace still carries src_ip_bytes
    ds.flows.reserve(raw.size());
    ds.stage_labels.reserve(raw.size());
    for (auto& rf : raw) {
        ds.flows.push_back(std::move(rf.rec));
        ds.stage_labels.push_back(rf.label);
    }
    if (ds.flows.empty()) throw EmptyDataset("scenario produced no flows");
    return ds;
}

struct ChainLabel {
    std::string target_ip;
    int label = 0;  // 1 iff a stage-3 flow followed the target's last stage-2 flow
};

// Generator-side oracle for the AE labeling rule, computed from ground
// truth alone: one row per target that received both stage 1 and stage 2.
inline std::vector<ChainLabel> chain_ground_truth(
    const LabeledDataset& trace,
    double horizon_s = std::numeric_limits<double>::infinity()) {
    struct Times {
        bool has1 = false, has2 = false;
        double last2 = 0.0;
        std::vector<double> stage3_ts;
    };
    std::map<std::string, Times> per_target;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto stage = trace.stage_labels[i];
        if (stage == StageLabel::Normal) continue;
        Times& t = per_target[trace.flows[i].dst_ip];
        const double ts = trace.flows[i].timestamp;
        if (stage == StageLabel::Stage1) t.has1 = true;
        if (stage == StageLabel::Stage2) {
            t.has2 = true;
            t.last2 = std::max(t.last2, ts);
        }
        if (stage == StageLabel::Stage3) t.stage3_ts.push_back(ts);
    }
    std::vector<ChainLabel> out;
    for (const auto& [ip, t] : per_target) {
        if (!t.has1 || !t.has2) continue;
        ChainLabel cl{ip, 0};
        for (double ts : t.stage3_ts)
            if (ts > t.last2 && ts <= t.last2 + horizon_s) {
                cl.label = 1;
                break;
            }
        out.push_back(std::move(cl));
    }
    return out;
}

}  // namespace flowstage
