#pragma once

#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowstage/ae.hpp"
#include "flowstage/common.hpp"
#include "flowstage/detector.hpp"
#include "flowstage/metrics.hpp"
#include "flowstage/scenario.hpp"

namespace flowstage {

namespace detail {

// Section/key file format: `[section]` headers, `key = value` lines, `#`
// comments. Unknown keys are rejected so typos fail loudly.
struct IniFile {
    std::map<std::string, std::map<std::string, std::string>> sections;
    std::set<std::string> consumed;

    static IniFile parse(std::istream& in, const std::string& origin) {
        IniFile ini;
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto t = trim(line);
            if (t.empty() || t.front() == '#' || t.front() == ';') continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw InvalidConfig(origin + ":" + std::to_string(lineno) + ": bad section header");
                section = std::string(trim(t.substr(1, t.size() - 2)));
                ini.sections[section];
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string_view::npos)
                throw InvalidConfig(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            const std::string key = std::string(trim(t.substr(0, eq)));
            const std::string value = std::string(trim(t.substr(eq + 1)));
            if (section.empty())
                throw InvalidConfig(origin + ":" + std::to_string(lineno) + ": key outside any section");
            if (!ini.sections[section].emplace(key, value).second)
                throw InvalidConfig(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                    section + "." + key + "'");
        }
        return ini;
    }

    std::string get(const std::string& section, const std::string& key, const std::string& dflt) {
        consumed.insert(section + "." + key);
        const auto s = sections.find(section);
        if (s == sections.end()) return dflt;
        const auto k = s->second.find(key);
        return k == s->second.end() ? dflt : k->second;
    }

    double get_double(const std::string& s, const std::string& k, double dflt) {
        const auto v = get(s, k, format_double(dflt));
        return parse_double(v);
    }
    long long get_int(const std::string& s, const std::string& k, long long dflt) {
        const auto v = get(s, k, std::to_string(dflt));
        return parse_int(v);
    }
    bool get_bool(const std::string& s, const std::string& k, bool dflt) {
        const auto v = lower(get(s, k, dflt ? "true" : "false"));
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw InvalidConfig("bad boolean for " + s + "." + k + ": '" + v + "'");
    }

    void reject_unknown(const std::string& origin) const {
        for (const auto& [section, keys] : sections)
            for (const auto& [key, value] : keys)
                if (!consumed.count(section + "." + key))
                    throw InvalidConfig(origin + ": unknown config key '" + section + "." + key + "'");
    }
};

}  // namespace detail

// The one knob file for the whole pipeline. Every random component derives
// its seed from master_seed through a fixed tag, so the echo of this config
// reproduces a run exactly.
struct PipelineConfig {
    std::uint64_t master_seed = 7;
    std::string source = "simulate";  // simulate | ingest
    std::string data_path;
    std::string schema_path;
    std::string mapping_path;
    std::string out_dir = "out";

    double split_test_fraction = 0.3;
    std::string split_key = "src";  // src | dst | both

    std::size_t window_size = 1024;
    std::size_t stride = 0;  // 0 = window_size
    bool self_loops = true;
    double threshold1 = 0.5, threshold2 = 0.5, threshold3 = 0.5;

    GcnConfig gcn;        // seeds filled in make_detector_config
    ForestConfig forest;
    StackerConfig stacker;

    int ae_sequence_length = 16;
    double ae_horizon_s = 0.0;  // 0 = unbounded
    RnnConfig rnn;
    double ae_threshold = 0.5;
    int ae_cv_folds = 5;

    int scenario_attackers = 3;
    int scenario_targets = 10;
    int scenario_benign_hosts = 20;
    double scenario_benign_rate = 5.0;
    double scenario_duration_s = 600.0;
    int scenario_chains_per_attacker = 8;
    int scenario_min_stage_repeat = 1;
    int scenario_max_stage_repeat = 2;
    double scenario_ae_follow_prob = 0.5;
    double scenario_mean_attack_gap_s = 1.0;
    double scenario_ip_churn_prob = 0.0;
    double scenario_class_separation = 1.0;
    double scenario_escalation_bias = 1.2;
    std::string scenario_patterns = "1,2,3 | 1,1,2,3 | 1,2,2,3";

    static PipelineConfig load(std::istream& in, const std::string& origin = "config") {
        auto ini = detail::IniFile::parse(in, origin);
        PipelineConfig c;
        c.master_seed = parse_uint64(ini.get("pipeline", "master_seed", "7"));
        c.source = ini.get("pipeline", "source", c.source);
        if (c.source != "simulate" && c.source != "ingest")
            throw InvalidConfig("pipeline.source must be 'simulate' or 'ingest'");
        c.data_path = ini.get("pipeline", "data_path", "");
        c.schema_path = ini.get("pipeline", "schema_path", "");
        c.mapping_path = ini.get("pipeline", "mapping_path", "");
        c.out_dir = ini.get("pipeline", "out_dir", c.out_dir);

        c.split_test_fraction = ini.get_double("split", "test_fraction", c.split_test_fraction);
        c.split_key = ini.get("split", "key", c.split_key);
        if (c.split_key != "src" && c.split_key != "dst" && c.split_key != "both")
            throw InvalidConfig("split.key must be src, dst or both");

        c.window_size = static_cast<std::size_t>(ini.get_int("detector", "window_size", 1024));
        c.stride = static_cast<std::size_t>(ini.get_int("detector", "stride", 0));
        c.self_loops = ini.get_bool("detector", "self_loops", true);
        c.threshold1 = ini.get_double("detector", "threshold1", 0.5);
        c.threshold2 = ini.get_double("detector", "threshold2", 0.5);
        c.threshold3 = ini.get_double("detector", "threshold3", 0.5);

        c.gcn.layers = static_cast<int>(ini.get_int("gcn", "layers", c.gcn.layers));
        c.gcn.hidden_dim = static_cast<int>(ini.get_int("gcn", "hidden_dim", c.gcn.hidden_dim));
        c.gcn.epochs = static_cast<int>(ini.get_int("gcn", "epochs", c.gcn.epochs));
        c.gcn.step_size = ini.get_double("gcn", "step_size", c.gcn.step_size);

        c.forest.tree_count = static_cast<int>(ini.get_int("forest", "trees", c.forest.tree_count));
        c.forest.max_depth = static_cast<int>(ini.get_int("forest", "max_depth", c.forest.max_depth));
        c.forest.min_samples_leaf =
            static_cast<int>(ini.get_int("forest", "min_samples_leaf", c.forest.min_samples_leaf));
        c.forest.features_per_split =
            static_cast<int>(ini.get_int("forest", "features_per_split", c.forest.features_per_split));

        c.stacker.folds = static_cast<int>(ini.get_int("stacker", "folds", c.stacker.folds));
        c.stacker.epochs = static_cast<int>(ini.get_int("stacker", "epochs", c.stacker.epochs));
        c.stacker.step = ini.get_double("stacker", "step", c.stacker.step);

        c.ae_sequence_length =
            static_cast<int>(ini.get_int("ae", "sequence_length", c.ae_sequence_length));
        c.ae_horizon_s = ini.get_double("ae", "horizon_s", c.ae_horizon_s);
        c.rnn.hidden_dim = static_cast<int>(ini.get_int("ae", "hidden_dim", c.rnn.hidden_dim));
        c.rnn.epochs = static_cast<int>(ini.get_int("ae", "epochs", c.rnn.epochs));
        c.rnn.step = ini.get_double("ae", "step", c.rnn.step);
        c.rnn.clip_norm = ini.get_double("ae", "clip_norm", c.rnn.clip_norm);
        c.rnn.weight_decay = ini.get_double("ae", "weight_decay", c.rnn.weight_decay);
        c.ae_threshold = ini.get_double("ae", "threshold", c.ae_threshold);
        c.ae_cv_folds = static_cast<int>(ini.get_int("ae", "cv_folds", c.ae_cv_folds));

        c.scenario_attackers = static_cast<int>(ini.get_int("scenario", "attackers", 3));
        c.scenario_targets = static_cast<int>(ini.get_int("scenario", "targets", 10));
        c.scenario_benign_hosts = static_cast<int>(ini.get_int("scenario", "benign_hosts", 20));
        c.scenario_benign_rate = ini.get_double("scenario", "benign_rate", 5.0);
        c.scenario_duration_s = ini.get_double("scenario", "duration_s", 600.0);
        c.scenario_chains_per_attacker =
            static_cast<int>(ini.get_int("scenario", "chains_per_attacker", 8));
        c.scenario_min_stage_repeat =
            static_cast<int>(ini.get_int("scenario", "min_stage_repeat", 1));
        c.scenario_max_stage_repeat =
            static_cast<int>(ini.get_int("scenario", "max_stage_repeat", 2));
        c.scenario_ae_follow_prob = ini.get_double("scenario", "ae_follow_prob", 0.5);
        c.scenario_mean_attack_gap_s = ini.get_double("scenario", "mean_attack_gap_s", 1.0);
        c.scenario_ip_churn_prob = ini.get_double("scenario", "ip_churn_prob", 0.0);
        c.scenario_class_separation = ini.get_double("scenario", "class_separation", 1.0);
        c.scenario_escalation_bias = ini.get_double("scenario", "escalation_bias", 1.2);
        c.scenario_patterns = ini.get("scenario", "patterns", c.scenario_patterns);

        ini.reject_unknown(origin);
        return c;
    }

    static PipelineConfig load_file(const std::string& path) {
        auto in = open_input(path);
        return load(in, path);
    }

    // Effective-config echo: every key with its resolved value, reloadable,
    // with per-module derived seeds recorded alongside.
    void save(std::ostream& out) const {
        out << "# flowstage.config.v1\n";
        out << "[pipeline]\n";
        out << "master_seed = " << master_seed << "\n";
        out << "source = " << source << "\n";
        out << "data_path = " << data_path << "\n";
        out << "schema_path = " << schema_path << "\n";
        out << "mapping_path = " << mapping_path << "\n";
        out << "out_dir = " << out_dir << "\n";
        out << "# derived seeds: scenario=" << derive_seed(master_seed, "scenario")
            << " split=" << derive_seed(master_seed, "split")
            << " rnn=" << derive_seed(master_seed, "ae.rnn") << "\n";
        out << "\n[split]\n";
        out << "test_fraction = " << format_double(split_test_fraction) << "\n";
        out << "key = " << split_key << "\n";
        out << "\n[detector]\n";
        out << "window_size = " << window_size << "\n";
        out << "stride = " << stride << "\n";
        out << "self_loops = " << (self_loops ? "true" : "false") << "\n";
        out << "threshold1 = " << format_double(threshold1) << "\n";
        out << "threshold2 = " << format_double(threshold2) << "\n";
        out << "threshold3 = " << format_double(threshold3) << "\n";
        out << "\n[gcn]\n";
        out << "layers = " << gcn.layers << "\n";
        out << "hidden_dim = " << gcn.hidden_dim << "\n";
        out << "epochs = " << gcn.epochs << "\n";
        out << "step_size = " << format_double(gcn.step_size) << "\n";
        out << "\n[forest]\n";
        out << "trees = " << forest.tree_count << "\n";
        out << "max_depth = " << forest.max_depth << "\n";
        out << "min_samples_leaf = " << forest.min_samples_leaf << "\n";
        out << "features_per_split = " << forest.features_per_split << "\n";
        out << "\n[stacker]\n";
        out << "folds = " << stacker.folds << "\n";
        out << "epochs = " << stacker.epochs << "\n";
        out << "step = " << format_double(stacker.step) << "\n";
        out << "\n[ae]\n";
        out << "sequence_length = " << ae_sequence_length << "\n";
        out << "horizon_s = " << format_double(ae_horizon_s) << "\n";
        out << "hidden_dim = " << rnn.hidden_dim << "\n";
        out << "epochs = " << rnn.epochs << "\n";
        out << "step = " << format_double(rnn.step) << "\n";
        out << "clip_norm = " << format_double(rnn.clip_norm) << "\n";
        out << "weight_decay = " << format_double(rnn.weight_decay) << "\n";
        out << "threshold = " << format_double(ae_threshold) << "\n";
        out << "cv_folds = " << ae_cv_folds << "\n";
        out << "\n[scenario]\n";
        out << "attackers = " << scenario_attackers << "\n";
        out << "targets = " << scenario_targets << "\n";
        out << "benign_hosts = " << scenario_benign_hosts << "\n";
        out << "benign_rate = " << format_double(scenario_benign_rate) << "\n";
        out << "duration_s = " << format_double(scenario_duration_s) << "\n";
        out << "chains_per_attacker = " << scenario_chains_per_attacker << "\n";
        out << "min_stage_repeat = " << scenario_min_stage_repeat << "\n";
        out << "max_stage_repeat = " << scenario_max_stage_repeat << "\n";
        out << "ae_follow_prob = " << format_double(scenario_ae_follow_prob) << "\n";
        out << "mean_attack_gap_s = " << format_double(scenario_mean_attack_gap_s) << "\n";
        out << "ip_churn_prob = " << format_double(scenario_ip_churn_prob) << "\n";
        out << "class_separation = " << format_double(scenario_class_separation) << "\n";
        out << "escalation_bias = " << format_double(scenario_escalation_bias) << "\n";
        out << "patterns = " << scenario_patterns << "\n";
    }

    std::string echo_text() const {
        std::ostringstream ss;
        save(ss);
        return ss.str();
    }

    // FNV-1a over the effective echo: identical configs hash identically.
    std::string fingerprint() const {
        std::ostringstream hex;
        hex << std::hex << fnv1a64(echo_text());
        return hex.str();
    }

    DetectorConfig make_detector_config() const {
        DetectorConfig d;
        d.window_size = window_size;
        d.stride = stride;
        d.self_loops = self_loops;
        d.gcn = gcn;
        d.forest = forest;
        d.stacker = stacker;
        d.thresholds = {threshold1, threshold2, threshold3};
        d.seed = master_seed;
        return d;
    }

    IpSplitConfig make_split_config() const {
        IpSplitConfig s;
        s.test_fraction = split_test_fraction;
        s.seed = derive_seed(master_seed, "split");
        s.key = split_key == "dst" ? SplitKey::Dst
                                   : (split_key == "both" ? SplitKey::Both : SplitKey::Src);
        return s;
    }

    AeConfig make_ae_config() const {
        AeConfig a;
        a.sequence_length = ae_sequence_length;
        a.horizon_s = ae_horizon_s > 0.0 ? ae_horizon_s : std::numeric_limits<double>::infinity();
        return a;
    }

    RnnConfig make_rnn_config() const {
        RnnConfig r = rnn;
        r.seed = derive_seed(master_seed, "ae.rnn");
        return r;
    }

    ScenarioConfig make_scenario_config() const {
        ScenarioConfig s = ScenarioConfig::example(scenario_attackers, scenario_targets,
                                                   scenario_benign_hosts);
        s.seed = derive_seed(master_seed, "scenario");
        s.benign_rate = scenario_benign_rate;
        s.duration_s = scenario_duration_s;
        s.chains_per_attacker = scenario_chains_per_attacker;
        s.min_stage_repeat = scenario_min_stage_repeat;
        s.max_stage_repeat = scenario_max_stage_repeat;
        s.ae_follow_prob = scenario_ae_follow_prob;
        s.mean_attack_gap_s = scenario_mean_attack_gap_s;
        s.ip_churn_prob = scenario_ip_churn_prob;
        s.class_separation = scenario_class_separation;
        s.escalation_bias = scenario_escalation_bias;
        s.stage_patterns.clear();
        for (const auto& pattern_text : split(scenario_patterns, '|')) {
            std::vector<int> pattern;
            for (const auto& num : split(pattern_text, ',')) {
                const auto t = trim(num);
                if (!t.empty()) pattern.push_back(static_cast<int>(parse_int(t)));
            }
            if (!pattern.empty()) s.stage_patterns.push_back(std::move(pattern));
        }
        s.validate();
        return s;
    }

    FeatureSchemaSpec make_schema_spec() const {
        return schema_path.empty() ? FeatureSchemaSpec::default_ton_iot()
                                   : FeatureSchemaSpec::load(schema_path);
    }

    StageMapping make_stage_mapping() const {
        return mapping_path.empty() ? StageMapping::default_mapping()
                                    : StageMapping::load(mapping_path);
    }
};

}  // namespace flowstage
