#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "flowstage/common.hpp"
#include "flowstage/flow.hpp"

namespace flowstage {

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const { return tp + fp + tn + fn; }
};

// Point metrics for one detector. Zero-denominator cases report 0 and set
// the flag instead of failing, so batch evaluation always completes.
struct MetricsEntry {
    ConfusionMatrix cm;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double fpr = 0.0;
    bool zero_division = false;
};

inline MetricsEntry compute_metrics(const std::vector<std::uint8_t>& predictions,
                                    const std::vector<std::uint8_t>& labels) {
    if (predictions.size() != labels.size())
        throw LengthMismatch("predictions and labels differ in length");
    if (predictions.empty()) throw LengthMismatch("nothing to evaluate");
    MetricsEntry e;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] && labels[i]) ++e.cm.tp;
        else if (predictions[i] && !labels[i]) ++e.cm.fp;
        else if (!predictions[i] && labels[i]) ++e.cm.fn;
        else ++e.cm.tn;
    }
    const auto& c = e.cm;
    if (c.tp + c.fp > 0) e.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    else e.zero_division = true;
    if (c.tp + c.fn > 0) e.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    else e.zero_division = true;
    if (e.precision + e.recall > 0.0) e.f1 = 2.0 * e.precision * e.recall / (e.precision + e.recall);
    else e.zero_division = true;
    if (c.fp + c.tn > 0) e.fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
    return e;
}

enum class SplitKey { Src, Dst, Both };

struct IpSplitConfig {
    double test_fraction = 0.3;
    std::uint64_t seed = 0;
    SplitKey key = SplitKey::Src;
};

struct IpSplit {
    LabeledDataset train;
    LabeledDataset test;
    std::set<std::string> train_ips;
    std::set<std::string> test_ips;
    std::size_t dropped = 0;  // only with key=both: flows straddling the cut
    std::vector<std::string> warnings;
};

// Splits by user: the partitioning IPs are randomly divided and every flow
// follows its key IP, so no IP contributes to both sides. Degenerate
// outcomes (an empty side, or a side without positives for any stage) are
// reported as warnings, not errors.
inline IpSplit ip_split(const LabeledDataset& ds, const IpSplitConfig& cfg) {
    if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0)
        throw InvalidConfig("test_fraction must be in (0, 1)");
    std::set<std::string> ip_set;
    for (const auto& f : ds.flows) {
        if (cfg.key != SplitKey::Dst) ip_set.insert(f.src_ip);
        if (cfg.key != SplitKey::Src) ip_set.insert(f.dst_ip);
    }
    if (ip_set.size() < 2) throw InvalidConfig("need at least 2 distinct partitioning IPs");

    std::vector<std::string> ips(ip_set.begin(), ip_set.end());
    Rng rng(cfg.seed);
    for (std::size_t i = ips.size(); i > 1; --i)
        std::swap(ips[i - 1], ips[uniform_index(rng, i)]);
    std::size_t n_test = static_cast<std::size_t>(
        std::llround(cfg.test_fraction * static_cast<double>(ips.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, ips.size() - 1);

    IpSplit split;
    split.train.schema = ds.schema;
    split.test.schema = ds.schema;
    for (std::size_t i = 0; i < ips.size(); ++i)
        (i < n_test ? split.test_ips : split.train_ips).insert(ips[i]);

    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& f = ds.flows[i];
        bool to_test;
        if (cfg.key == SplitKey::Src) {
            to_test = split.test_ips.count(f.src_ip) > 0;
        } else if (cfg.key == SplitKey::Dst) {
            to_test = split.test_ips.count(f.dst_ip) > 0;
        } else {
            const bool src_test = split.test_ips.count(f.src_ip) > 0;
            const bool dst_test = split.test_ips.count(f.dst_ip) > 0;
            if (src_test != dst_test) {  // straddles the cut; keeping it would leak
                ++split.dropped;
                continue;
            }
            to_test = src_test;
        }
        LabeledDataset& side = to_test ? split.test : split.train;
        side.flows.push_back(f);
        side.stage_labels.push_back(ds.stage_labels[i]);
    }

    if (split.train.flows.empty()) split.warnings.push_back("DegenerateSplit: train side is empty");
    if (split.test.flows.empty()) split.warnings.push_back("DegenerateSplit: test side is empty");
    for (int stage = 1; stage <= 3; ++stage) {
        auto count = [&](const LabeledDataset& d) {
            std::size_t c = 0;
            for (auto s : d.stage_labels) c += stage_index(s) == stage ? 1 : 0;
            return c;
        };
        if (!split.train.flows.empty() && count(split.train) == 0)
            split.warnings.push_back("DegenerateSplit: no stage" + std::to_string(stage) +
                                     " positives in train");
        if (!split.test.flows.empty() && count(split.test) == 0)
            split.warnings.push_back("DegenerateSplit: no stage" + std::to_string(stage) +
                                     " positives in test");
    }
    return split;
}

// Per-attacker and per-target stage timelines: the rows behind the attack
// progression plots. Malicious flows only.
inline void export_timeline(const LabeledDataset& ds, std::ostream& attackers_out,
                            std::ostream& targets_out) {
    attackers_out << "# flowstage.timeline.v1\n";
    attackers_out << "attacker_ip,peer_ip,timestamp,stage\n";
    targets_out << "# flowstage.timeline.v1\n";
    targets_out << "target_ip,peer_ip,timestamp,stage\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int stage = stage_index(ds.stage_labels[i]);
        if (stage == 0) continue;
        const auto& f = ds.flows[i];
        attackers_out << f.src_ip << ',' << f.dst_ip << ',' << format_double(f.timestamp) << ','
                      << stage << '\n';
        targets_out << f.dst_ip << ',' << f.src_ip << ',' << format_double(f.timestamp) << ','
                    << stage << '\n';
    }
}

}  // namespace flowstage
