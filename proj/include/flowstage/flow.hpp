#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowstage/common.hpp"
#include "flowstage/csv.hpp"

namespace flowstage {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class StageLabel : int { Normal = 0, Stage1 = 1, Stage2 = 2, Stage3 = 3 };

inline int stage_index(StageLabel s) { return static_cast<int>(s); }

inline const char* stage_name(StageLabel s) {
    switch (s) {
        case StageLabel::Normal: return "normal";
        case StageLabel::Stage1: return "stage1";
        case StageLabel::Stage2: return "stage2";
        case StageLabel::Stage3: return "stage3";
    }
    return "?";
}

// One summarized network conversation. Numeric/categorical feature vectors
// are ordered exactly as the schema names them.
struct FlowRecord {
    double timestamp = 0.0;
    std::string src_ip;
    int src_port = 0;
    std::string dst_ip;
    int dst_port = 0;
    std::string protocol;
    std::vector<double> numeric_features;
    std::vector<std::string> categorical_features;
    std::string attack_type = "normal";
};

// Attack-type token -> kill-chain stage. Loaded from an editable mapping
// file; the shipped default covers the ToN IoT attack vocabulary.
struct StageMapping {
    std::map<std::string, StageLabel> table;

    static StageMapping default_mapping() {
        StageMapping m;
        m.table = {
            {"scanning", StageLabel::Stage1},
            {"password", StageLabel::Stage2},
            {"injection", StageLabel::Stage2},
            {"xss", StageLabel::Stage2},
            {"mitm", StageLabel::Stage2},
            {"backdoor", StageLabel::Stage3},
            {"ransomware", StageLabel::Stage3},
            {"dos", StageLabel::Stage3},
            {"ddos", StageLabel::Stage3},
        };
        return m;
    }

    // File format: one `attack_token = stage` pair per line, stage in 1..3.
    // '#' starts a comment. "normal" cannot be remapped.
    static StageMapping load(const std::string& path) {
        auto in = open_input(path);
        StageMapping m;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos)
                throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'attack = stage'");
            const std::string key = lower(trim(t.substr(0, eq)));
            const auto value = trim(t.substr(eq + 1));
            if (key == "normal")
                throw ParseError(path + ":" + std::to_string(lineno) + ": 'normal' is not remappable");
            const long long s = parse_int(value);
            if (s < 1 || s > 3)
                throw ParseError(path + ":" + std::to_string(lineno) + ": stage must be 1, 2 or 3");
            m.table[key] = static_cast<StageLabel>(s);
        }
        if (m.table.empty()) throw ParseError(path + ": empty stage mapping");
        return m;
    }

    void save(std::ostream& out) const {
        out << "# flowstage.mapping.v1\n";
        for (const auto& [k, v] : table) out << k << " = " << stage_index(v) << "\n";
    }
};

inline StageLabel map_attack_to_stage(const std::string& attack_type, const StageMapping& mapping) {
    const std::string key = lower(attack_type);
    if (key == "normal") return StageLabel::Normal;
    const auto it = mapping.table.find(key);
    if (it == mapping.table.end())
        throw UnmappedAttackType("attack type not covered by stage mapping: '" + attack_type + "'");
    return it->second;
}

// Declared column layout before any data has been seen.
struct FeatureSchemaSpec {
    std::vector<std::string> numeric_names;
    std::vector<std::string> categorical_names;
    std::vector<std::string> dropped_names{"src_ip_bytes"};

    static FeatureSchemaSpec default_ton_iot() {
        FeatureSchemaSpec s;
        s.numeric_names = {"duration",  "src_pkts",     "dst_pkts",
                           "src_bytes", "dst_bytes",    "src_ip_bytes",
                           "dst_ip_bytes"};
        s.categorical_names = {"proto", "service", "conn_state"};
        s.dropped_names = {"src_ip_bytes"};
        return s;
    }

    // File format: `numeric = a, b, c` / `categorical = ...` / `dropped = ...`.
    static FeatureSchemaSpec load(const std::string& path) {
        auto in = open_input(path);
        FeatureSchemaSpec s;
        s.dropped_names.clear();
        std::string line;
        int lineno = 0;
        bool saw_numeric = false;
        while (std::getline(in, line)) {
            ++lineno;
            auto t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos)
                throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'key = values'");
            const std::string key = std::string(trim(t.substr(0, eq)));
            std::vector<std::string> names;
            for (auto& part : split(t.substr(eq + 1), ',')) {
                auto p = trim(part);
                if (!p.empty()) names.emplace_back(p);
            }
            if (key == "numeric") { s.numeric_names = names; saw_numeric = true; }
            else if (key == "categorical") s.categorical_names = names;
            else if (key == "dropped") s.dropped_names = names;
            else throw ParseError(path + ":" + std::to_string(lineno) + ": unknown schema key '" + key + "'");
        }
        if (!saw_numeric) throw ParseError(path + ": schema file must declare numeric columns");
        return s;
    }
};

// Fitted feature schema: surviving column names plus the categorical
// encodings and standardization statistics learned from training data.
struct FeatureSchema {
    std::vector<std::string> numeric_names;
    std::vector<std::string> categorical_names;
    std::vector<std::string> dropped_names;

    // token -> one-hot slot, per categorical column, learned at fit time.
    // Slot `encodings[c].size()` is reserved for tokens unseen in training.
    std::vector<std::map<std::string, int>> categorical_encodings;
    std::vector<double> numeric_means;
    std::vector<double> numeric_stdevs;
    bool fitted = false;

    std::size_t encoded_dim() const {
        std::size_t d = numeric_names.size();
        for (const auto& enc : categorical_encodings) d += enc.size() + 1;
        return d;
    }
};

struct LabeledDataset {
    std::vector<FlowRecord> flows;  // sorted nondecreasing by timestamp
    FeatureSchema schema;
    std::vector<StageLabel> stage_labels;
    std::size_t malformed_rows = 0;

    std::size_t size() const { return flows.size(); }
};

namespace detail {

inline int find_column(const std::vector<std::string>& header, const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

inline int require_column(const std::vector<std::string>& header, const std::string& name) {
    const int idx = find_column(header, name);
    if (idx < 0) throw MissingColumn("missing required column: " + name);
    return idx;
}

inline bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace detail

// Parses a header-row CSV of flows into a timestamp-sorted dataset. Columns
// named in `spec.dropped_names` are removed from the resulting schema.
// Rows with unparsable numerics or out-of-range ports are dropped and
// counted in `malformed_rows`; unknown attack types abort ingestion.
inline LabeledDataset parse_flows(std::istream& in, const FeatureSchemaSpec& spec,
                                  const StageMapping& mapping) {
    std::vector<std::string> header;
    if (!read_csv_row(in, header)) throw EmptyDataset("input has no header row");

    const int c_ts = detail::require_column(header, "ts");
    const int c_src_ip = detail::require_column(header, "src_ip");
    const int c_src_port = detail::require_column(header, "src_port");
    const int c_dst_ip = detail::require_column(header, "dst_ip");
    const int c_dst_port = detail::require_column(header, "dst_port");
    const int c_type = detail::require_column(header, "type");
    const int c_proto = detail::find_column(header, "proto");

    LabeledDataset ds;
    for (const auto& name : spec.numeric_names) {
        detail::require_column(header, name);
        if (!detail::contains(spec.dropped_names, name)) ds.schema.numeric_names.push_back(name);
    }
    for (const auto& name : spec.categorical_names) {
        detail::require_column(header, name);
        if (!detail::contains(spec.dropped_names, name)) ds.schema.categorical_names.push_back(name);
    }
    ds.schema.dropped_names = spec.dropped_names;

    std::vector<int> numeric_idx, categorical_idx;
    for (const auto& name : ds.schema.numeric_names)
        numeric_idx.push_back(detail::find_column(header, name));
    for (const auto& name : ds.schema.categorical_names)
        categorical_idx.push_back(detail::find_column(header, name));

    std::vector<std::string> row;
    while (read_csv_row(in, row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() != header.size()) {
            ++ds.malformed_rows;
            continue;
        }
        FlowRecord rec;
        try {
            rec.timestamp = parse_double(trim(row[c_ts]));
            rec.src_port = static_cast<int>(parse_int(trim(row[c_src_port])));
            rec.dst_port = static_cast<int>(parse_int(trim(row[c_dst_port])));
            rec.numeric_features.reserve(numeric_idx.size());
            for (int idx : numeric_idx)
                rec.numeric_features.push_back(parse_double(trim(row[idx])));
        } catch (const ParseError&) {
            ++ds.malformed_rows;
            continue;
        }
        if (!std::isfinite(rec.timestamp) || rec.src_port < 0 || rec.src_port > 65535 ||
            rec.dst_port < 0 || rec.dst_port > 65535) {
            ++ds.malformed_rows;
            continue;
        }
        rec.src_ip = row[c_src_ip];
        rec.dst_ip = row[c_dst_ip];
        rec.protocol = c_proto >= 0 ? row[c_proto] : "-";
        for (int idx : categorical_idx) rec.categorical_features.push_back(row[idx]);
        rec.attack_type = lower(trim(row[c_type]));
        ds.stage_labels.push_back(map_attack_to_stage(rec.attack_type, mapping));
        ds.flows.push_back(std::move(rec));
    }
    if (ds.flows.empty()) throw EmptyDataset("no valid flow rows in input");

    // Stable sort keeps equal-timestamp flows in file order.
    std::vector<std::size_t> order(ds.flows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ds.flows[a].timestamp < ds.flows[b].timestamp;
    });
    LabeledDataset sorted;
    sorted.schema = std::move(ds.schema);
    sorted.malformed_rows = ds.malformed_rows;
    sorted.flows.reserve(ds.flows.size());
    sorted.stage_labels.reserve(ds.flows.size());
    for (std::size_t i : order) {
        sorted.flows.push_back(std::move(ds.flows[i]));
        sorted.stage_labels.push_back(ds.stage_labels[i]);
    }
    return sorted;
}

inline LabeledDataset parse_flows(const std::string& path, const FeatureSchemaSpec& spec,
                                  const StageMapping& mapping) {
    auto in = open_input(path);
    return parse_flows(in, spec, mapping);
}

// Canonical CSV export: endpoint columns, declared numerics, declared
// categoricals, attack type. A categorical named like an endpoint column
// (proto) is emitted once. parse(serialize(ds)) reproduces ds exactly.
inline void serialize_flows(const LabeledDataset& ds, std::ostream& out) {
    std::vector<std::string> header{"ts", "src_ip", "src_port", "dst_ip", "dst_port", "proto"};
    std::vector<std::size_t> cat_cols;  // categorical columns not already emitted
    for (std::size_t c = 0; c < ds.schema.categorical_names.size(); ++c)
        if (!detail::contains(header, ds.schema.categorical_names[c])) cat_cols.push_back(c);
    std::vector<std::string> row = header;
    row.insert(row.end(), ds.schema.numeric_names.begin(), ds.schema.numeric_names.end());
    for (std::size_t c : cat_cols) row.push_back(ds.schema.categorical_names[c]);
    row.push_back("type");
    write_csv_row(out, row);
    for (const auto& f : ds.flows) {
        row.clear();
        row.push_back(format_double(f.timestamp));
        row.push_back(f.src_ip);
        row.push_back(std::to_string(f.src_port));
        row.push_back(f.dst_ip);
        row.push_back(std::to_string(f.dst_port));
        row.push_back(f.protocol);
        for (double v : f.numeric_features) row.push_back(format_double(v));
        for (std::size_t c : cat_cols) row.push_back(f.categorical_features[c]);
        row.push_back(f.attack_type);
        write_csv_row(out, row);
    }
}

inline void serialize_flows(const LabeledDataset& ds, const std::string& path) {
    auto out = open_output(path);
    serialize_flows(ds, out);
}

// Positive iff the flow's stage equals the requested one; Normal and the
// other stages form the "Other" class.
inline std::vector<std::uint8_t> binarize_for_stage(const LabeledDataset& ds, int stage) {
    if (stage < 1 || stage > 3) throw InvalidConfig("stage must be 1, 2 or 3");
    std::vector<std::uint8_t> labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        labels[i] = stage_index(ds.stage_labels[i]) == stage ? 1 : 0;
    return labels;
}

// Applies a fitted schema without mutating the dataset: standardized
// numerics followed by one-hot categorical blocks, unseen tokens in the
// reserved slot.
inline Matrix encode_features(const LabeledDataset& ds, const FeatureSchema& schema) {
    if (!schema.fitted) throw SchemaMismatch("schema has not been fitted");
    const std::size_t n_num = schema.numeric_names.size();
    Matrix x(ds.size(), schema.encoded_dim());
    x.setZero();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const FlowRecord& f = ds.flows[i];
        if (f.numeric_features.size() != n_num ||
            f.categorical_features.size() != schema.categorical_names.size())
            throw SchemaMismatch("flow feature counts do not match schema");
        for (std::size_t j = 0; j < n_num; ++j)
            x(i, j) = (f.numeric_features[j] - schema.numeric_means[j]) / schema.numeric_stdevs[j];
        std::size_t offset = n_num;
        for (std::size_t c = 0; c < schema.categorical_names.size(); ++c) {
            const auto& enc = schema.categorical_encodings[c];
            const auto it = enc.find(f.categorical_features[c]);
            const int slot = it == enc.end() ? static_cast<int>(enc.size()) : it->second;
            x(i, offset + slot) = 1.0;
            offset += enc.size() + 1;
        }
    }
    return x;
}

// Encodes categoricals as one-hot (with a reserved unseen slot) and
// standardizes numerics with training-set statistics. fit=true learns the
// encodings and statistics in place; fit=false applies previously fitted
// ones and maps unseen tokens to the reserved slot.
inline Matrix preprocess_features(LabeledDataset& ds, bool fit,
                                  const FeatureSchema* fitted = nullptr) {
    FeatureSchema& schema = ds.schema;
    if (fit) {
        const std::size_t n_num = schema.numeric_names.size();
        schema.numeric_means.assign(n_num, 0.0);
        schema.numeric_stdevs.assign(n_num, 1.0);
        const double n = static_cast<double>(ds.size());
        for (std::size_t j = 0; j < n_num; ++j) {
            double mean = 0.0;
            for (const auto& f : ds.flows) mean += f.numeric_features[j];
            mean /= n;
            double var = 0.0;
            for (const auto& f : ds.flows) {
                const double d = f.numeric_features[j] - mean;
                var += d * d;
            }
            var /= n;
            schema.numeric_means[j] = mean;
            schema.numeric_stdevs[j] = var < 1e-24 ? 1.0 : std::sqrt(var);
        }
        schema.categorical_encodings.assign(schema.categorical_names.size(), {});
        for (std::size_t c = 0; c < schema.categorical_names.size(); ++c) {
            std::map<std::string, int>& enc = schema.categorical_encodings[c];
            for (const auto& f : ds.flows) enc.emplace(f.categorical_features[c], 0);
            int next = 0;
            for (auto& [tok, idx] : enc) idx = next++;  // sorted token order
        }
        schema.fitted = true;
    } else {
        if (fitted == nullptr || !fitted->fitted)
            throw SchemaMismatch("applying preprocessing without a fitted schema");
        if (fitted->numeric_names != schema.numeric_names ||
            fitted->categorical_names != schema.categorical_names)
            throw SchemaMismatch("fitted schema columns do not match dataset columns");
        schema = *fitted;
    }
    return encode_features(ds, schema);
}

}  // namespace flowstage
