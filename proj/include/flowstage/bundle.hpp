#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "flowstage/ae.hpp"
#include "flowstage/common.hpp"
#include "flowstage/detector.hpp"

namespace flowstage {

// Everything a deployment needs: the three stage detectors with their
// fitted schema, and optionally the trained AE predictor. Text format with
// shortest-round-trip doubles, so save/load reproduces forward passes
// bit-exactly.
struct ModelBundle {
    DetectorBundle detectors;
    std::optional<MultiInputRnn> rnn;
    int ae_sequence_length = 16;
    double ae_threshold = 0.5;
    std::string fingerprint;
};

inline constexpr const char* kBundleFormat = "flowstage.bundle.v1";

namespace detail {

inline std::string escape_token(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '%' || c == ' ' || c == '\n' || c == '\r' || c == '\t') {
            static const char* hex = "0123456789ABCDEF";
            out.push_back('%');
            out.push_back(hex[(static_cast<unsigned char>(c) >> 4) & 0xF]);
            out.push_back(hex[static_cast<unsigned char>(c) & 0xF]);
        } else {
            out.push_back(c);
        }
    }
    return out;
}

inline std::string unescape_token(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size()) {
            out.push_back(static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16)));
            i += 2;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

inline void write_matrix(std::ostream& out, const std::string& name, const Matrix& m) {
    out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ' ';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

inline void write_vector(std::ostream& out, const std::string& name, const Vector& v) {
    out << "vector " << name << ' ' << v.size() << '\n';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) out << ' ';
        out << format_double(v(i));
    }
    out << '\n';
}

struct LineReader {
    std::istream& in;
    int lineno = 0;

    std::string next() {
        std::string line;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return line;
        }
        throw ParseError("bundle truncated at line " + std::to_string(lineno));
    }

    std::vector<std::string> next_fields() {
        std::vector<std::string> fields;
        for (auto& f : split(next(), ' '))
            if (!f.empty()) fields.push_back(std::move(f));
        return fields;
    }

    void expect(const std::string& head, std::vector<std::string>& fields) {
        fields = next_fields();
        if (fields.empty() || fields[0] != head)
            throw ParseError("bundle line " + std::to_string(lineno) + ": expected '" + head + "'");
    }
};

inline Matrix read_matrix(LineReader& r, const std::string& name) {
    std::vector<std::string> f;
    r.expect("matrix", f);
    if (f.size() != 4 || f[1] != name)
        throw ParseError("bundle line " + std::to_string(r.lineno) + ": expected matrix " + name);
    const auto rows = static_cast<Eigen::Index>(parse_int(f[2]));
    const auto cols = static_cast<Eigen::Index>(parse_int(f[3]));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto vals = r.next_fields();
        if (static_cast<Eigen::Index>(vals.size()) != cols)
            throw ParseError("bundle line " + std::to_string(r.lineno) + ": bad matrix row");
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = parse_double(vals[static_cast<std::size_t>(j)]);
    }
    return m;
}

inline Vector read_vector(LineReader& r, const std::string& name) {
    std::vector<std::string> f;
    r.expect("vector", f);
    if (f.size() != 3 || f[1] != name)
        throw ParseError("bundle line " + std::to_string(r.lineno) + ": expected vector " + name);
    const auto n = static_cast<Eigen::Index>(parse_int(f[2]));
    const auto vals = r.next_fields();
    if (static_cast<Eigen::Index>(vals.size()) != n)
        throw ParseError("bundle line " + std::to_string(r.lineno) + ": bad vector length");
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = parse_double(vals[static_cast<std::size_t>(i)]);
    return v;
}

}  // namespace detail

inline void save_bundle(std::ostream& out, const ModelBundle& bundle) {
    const DetectorBundle& db = bundle.detectors;
    out << kBundleFormat << '\n';
    out << "fingerprint " << (bundle.fingerprint.empty() ? "-" : bundle.fingerprint) << '\n';
    const DetectorConfig& c = db.config;
    out << "config " << c.window_size << ' ' << c.effective_stride() << ' ' << (c.self_loops ? 1 : 0)
        << ' ' << c.seed << '\n';
    out << "config.gcn " << c.gcn.layers << ' ' << c.gcn.hidden_dim << ' ' << c.gcn.epochs << ' '
        << format_double(c.gcn.step_size) << '\n';
    out << "config.forest " << c.forest.tree_count << ' ' << c.forest.max_depth << ' '
        << c.forest.min_samples_leaf << ' ' << c.forest.features_per_split << '\n';
    out << "config.stacker " << c.stacker.folds << ' ' << c.stacker.epochs << ' '
        << format_double(c.stacker.step) << '\n';
    out << "thresholds " << format_double(c.thresholds[0]) << ' ' << format_double(c.thresholds[1])
        << ' ' << format_double(c.thresholds[2]) << '\n';

    const FeatureSchema& s = db.schema;
    out << "schema.numeric " << s.numeric_names.size() << '\n';
    for (std::size_t i = 0; i < s.numeric_names.size(); ++i)
        out << detail::escape_token(s.numeric_names[i]) << ' ' << format_double(s.numeric_means[i])
            << ' ' << format_double(s.numeric_stdevs[i]) << '\n';
    out << "schema.categorical " << s.categorical_names.size() << '\n';
    for (std::size_t c2 = 0; c2 < s.categorical_names.size(); ++c2) {
        const auto& enc = s.categorical_encodings[c2];
        out << detail::escape_token(s.categorical_names[c2]) << ' ' << enc.size() << '\n';
        // Tokens in slot order.
        std::vector<std::string> by_slot(enc.size());
        for (const auto& [tok, slot] : enc) by_slot[static_cast<std::size_t>(slot)] = tok;
        for (const auto& tok : by_slot) out << detail::escape_token(tok) << '\n';
    }
    out << "schema.dropped " << s.dropped_names.size() << '\n';
    for (const auto& name : s.dropped_names) out << detail::escape_token(name) << '\n';

    for (int stage = 1; stage <= 3; ++stage) {
        const auto& opt = db.stages[static_cast<std::size_t>(stage - 1)];
        out << "detector " << stage << ' ' << (opt ? 1 : 0) << '\n';
        if (!opt) {
            out << "error " << detail::escape_token(db.errors[static_cast<std::size_t>(stage - 1)])
                << '\n';
            continue;
        }
        const StageDetector& det = *opt;
        out << "gcn " << det.gcn.layer_weights.size() << ' ' << det.gcn.seed << '\n';
        for (std::size_t l = 0; l < det.gcn.layer_weights.size(); ++l)
            detail::write_matrix(out, "w" + std::to_string(l), det.gcn.layer_weights[l]);
        detail::write_matrix(out, "head", det.gcn.head_weights);
        detail::write_vector(out, "head_bias", det.gcn.head_bias);

        out << "forest " << det.forest.trees.size() << ' ' << det.forest.feature_dim << ' '
            << det.forest.config.seed << '\n';
        for (const auto& tree : det.forest.trees) {
            out << "tree " << tree.nodes.size() << '\n';
            for (const auto& node : tree.nodes)
                out << node.feature << ' ' << format_double(node.threshold) << ' ' << node.left
                    << ' ' << node.right << ' ' << format_double(node.count_neg) << ' '
                    << format_double(node.count_pos) << '\n';
        }
        detail::write_vector(out, "meta_weights", det.meta.weights);
        out << "meta " << format_double(det.meta.bias) << ' ' << format_double(det.meta.threshold)
            << '\n';
    }

    out << "rnn " << (bundle.rnn ? 1 : 0) << ' ' << bundle.ae_sequence_length << ' '
        << format_double(bundle.ae_threshold) << '\n';
    if (bundle.rnn) {
        const MultiInputRnn& r = *bundle.rnn;
        out << "rnn.seed " << r.seed << '\n';
        detail::write_matrix(out, "w_in1", r.w_in1);
        detail::write_matrix(out, "w_in2", r.w_in2);
        detail::write_matrix(out, "w_rec", r.w_rec);
        detail::write_vector(out, "b_h", r.b_h);
        detail::write_matrix(out, "w_out", r.w_out);
        detail::write_vector(out, "b_out", r.b_out);
    }
}

inline void save_bundle(const std::string& path, const ModelBundle& bundle) {
    auto out = open_output(path);
    save_bundle(out, bundle);
}

inline ModelBundle load_bundle(std::istream& in) {
    detail::LineReader r{in};
    if (r.next() != kBundleFormat) throw ParseError("not a " + std::string(kBundleFormat) + " file");
    ModelBundle bundle;
    DetectorBundle& db = bundle.detectors;
    std::vector<std::string> f;

    r.expect("fingerprint", f);
    bundle.fingerprint = f.at(1) == "-" ? "" : f.at(1);
    r.expect("config", f);
    db.config.window_size = static_cast<std::size_t>(parse_int(f.at(1)));
    db.config.stride = static_cast<std::size_t>(parse_int(f.at(2)));
    db.config.self_loops = parse_int(f.at(3)) != 0;
    db.config.seed = parse_uint64(f.at(4));
    r.expect("config.gcn", f);
    db.config.gcn.layers = static_cast<int>(parse_int(f.at(1)));
    db.config.gcn.hidden_dim = static_cast<int>(parse_int(f.at(2)));
    db.config.gcn.epochs = static_cast<int>(parse_int(f.at(3)));
    db.config.gcn.step_size = parse_double(f.at(4));
    r.expect("config.forest", f);
    db.config.forest.tree_count = static_cast<int>(parse_int(f.at(1)));
    db.config.forest.max_depth = static_cast<int>(parse_int(f.at(2)));
    db.config.forest.min_samples_leaf = static_cast<int>(parse_int(f.at(3)));
    db.config.forest.features_per_split = static_cast<int>(parse_int(f.at(4)));
    r.expect("config.stacker", f);
    db.config.stacker.folds = static_cast<int>(parse_int(f.at(1)));
    db.config.stacker.epochs = static_cast<int>(parse_int(f.at(2)));
    db.config.stacker.step = parse_double(f.at(3));
    r.expect("thresholds", f);
    for (int i = 0; i < 3; ++i)
        db.config.thresholds[static_cast<std::size_t>(i)] = parse_double(f.at(static_cast<std::size_t>(i + 1)));

    FeatureSchema& s = db.schema;
    r.expect("schema.numeric", f);
    const auto n_num = static_cast<std::size_t>(parse_int(f.at(1)));
    for (std::size_t i = 0; i < n_num; ++i) {
        const auto fields = r.next_fields();
        if (fields.size() != 3) throw ParseError("bad schema.numeric entry");
        s.numeric_names.push_back(detail::unescape_token(fields[0]));
        s.numeric_means.push_back(parse_double(fields[1]));
        s.numeric_stdevs.push_back(parse_double(fields[2]));
    }
    r.expect("schema.categorical", f);
    const auto n_cat = static_cast<std::size_t>(parse_int(f.at(1)));
    for (std::size_t c = 0; c < n_cat; ++c) {
        const auto fields = r.next_fields();
        if (fields.size() != 2) throw ParseError("bad schema.categorical entry");
        s.categorical_names.push_back(detail::unescape_token(fields[0]));
        const auto n_tok = static_cast<std::size_t>(parse_int(fields[1]));
        std::map<std::string, int> enc;
        for (std::size_t t = 0; t < n_tok; ++t)
            enc[detail::unescape_token(r.next())] = static_cast<int>(t);
        s.categorical_encodings.push_back(std::move(enc));
    }
    r.expect("schema.dropped", f);
    const auto n_drop = static_cast<std::size_t>(parse_int(f.at(1)));
    for (std::size_t i = 0; i < n_drop; ++i)
        s.dropped_names.push_back(detail::unescape_token(r.next()));
    s.fitted = true;

    for (int stage = 1; stage <= 3; ++stage) {
        r.expect("detector", f);
        if (parse_int(f.at(1)) != stage) throw ParseError("detector blocks out of order");
        const bool present = parse_int(f.at(2)) != 0;
        if (!present) {
            r.expect("error", f);
            db.errors[static_cast<std::size_t>(stage - 1)] =
                detail::unescape_token(f.size() > 1 ? f.at(1) : "");
            continue;
        }
        StageDetector det;
        det.stage = stage;
        r.expect("gcn", f);
        const auto layers = static_cast<std::size_t>(parse_int(f.at(1)));
        det.gcn.seed = parse_uint64(f.at(2));
        for (std::size_t l = 0; l < layers; ++l)
            det.gcn.layer_weights.push_back(detail::read_matrix(r, "w" + std::to_string(l)));
        det.gcn.head_weights = detail::read_matrix(r, "head");
        det.gcn.head_bias = detail::read_vector(r, "head_bias");

        r.expect("forest", f);
        const auto n_trees = static_cast<std::size_t>(parse_int(f.at(1)));
        det.forest.feature_dim = static_cast<Eigen::Index>(parse_int(f.at(2)));
        det.forest.config = db.config.forest;
        det.forest.config.seed = parse_uint64(f.at(3));
        for (std::size_t t = 0; t < n_trees; ++t) {
            r.expect("tree", f);
            const auto n_nodes = static_cast<std::size_t>(parse_int(f.at(1)));
            DecisionTree tree;
            for (std::size_t n = 0; n < n_nodes; ++n) {
                const auto fields = r.next_fields();
                if (fields.size() != 6) throw ParseError("bad tree node");
                TreeNode node;
                node.feature = static_cast<int>(parse_int(fields[0]));
                node.threshold = parse_double(fields[1]);
                node.left = static_cast<int>(parse_int(fields[2]));
                node.right = static_cast<int>(parse_int(fields[3]));
                node.count_neg = parse_double(fields[4]);
                node.count_pos = parse_double(fields[5]);
                node.p_pos = node.count_pos / (node.count_pos + node.count_neg);
                tree.nodes.push_back(node);
            }
            det.forest.trees.push_back(std::move(tree));
        }
        det.meta.weights = detail::read_vector(r, "meta_weights");
        r.expect("meta", f);
        det.meta.bias = parse_double(f.at(1));
        det.meta.threshold = parse_double(f.at(2));
        db.stages[static_cast<std::size_t>(stage - 1)] = std::move(det);
    }

    r.expect("rnn", f);
    const bool has_rnn = parse_int(f.at(1)) != 0;
    bundle.ae_sequence_length = static_cast<int>(parse_int(f.at(2)));
    bundle.ae_threshold = parse_double(f.at(3));
    if (has_rnn) {
        MultiInputRnn rnn;
        r.expect("rnn.seed", f);
        rnn.seed = parse_uint64(f.at(1));
        rnn.w_in1 = detail::read_matrix(r, "w_in1");
        rnn.w_in2 = detail::read_matrix(r, "w_in2");
        rnn.w_rec = detail::read_matrix(r, "w_rec");
        rnn.b_h = detail::read_vector(r, "b_h");
        rnn.w_out = detail::read_matrix(r, "w_out");
        rnn.b_out = detail::read_vector(r, "b_out");
        bundle.rnn = std::move(rnn);
    }
    return bundle;
}

inline ModelBundle load_bundle(const std::string& path) {
    auto in = open_input(path);
    return load_bundle(in);
}

}  // namespace flowstage
