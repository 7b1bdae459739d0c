#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "flowstage/common.hpp"
#include "flowstage/flow.hpp"
#include "flowstage/forest.hpp"
#include "flowstage/gcn.hpp"
#include "flowstage/graph.hpp"
#include "flowstage/stacker.hpp"

namespace flowstage {

struct DetectorConfig {
    std::size_t window_size = 1024;
    std::size_t stride = 0;  // 0 = window_size (non-overlapping)
    bool self_loops = true;
    GcnConfig gcn;
    ForestConfig forest;
    StackerConfig stacker;
    std::array<double, 3> thresholds{0.5, 0.5, 0.5};
    std::uint64_t seed = 0;

    std::size_t effective_stride() const { return stride == 0 ? window_size : stride; }
};

// One fitted stage detector: context-aware GCN, context-agnostic forest,
// logistic meta-model fusing the two.
struct StageDetector {
    int stage = 0;
    GcnModel gcn;
    RandomForest forest;
    LogisticMeta meta;
};

struct DetectorBundle {
    FeatureSchema schema;
    DetectorConfig config;
    std::array<std::optional<StageDetector>, 3> stages;
    std::array<std::string, 3> errors;  // nonempty if that stage was untrainable
    std::array<std::vector<double>, 3> gcn_loss_curves;
    std::array<std::vector<int>, 3> oof_folds;  // per training flow, audit trail
    std::vector<std::string> warnings;

    const StageDetector& stage_detector(int stage) const {
        const auto& opt = stages[static_cast<std::size_t>(stage - 1)];
        if (!opt) throw InvalidConfig("stage " + std::to_string(stage) + " detector not fitted");
        return *opt;
    }
};

struct Alert {
    int stage = 0;
    std::size_t flow_index = 0;
    double timestamp = 0.0;
    std::string src_ip;
    std::string dst_ip;
    double probability = 0.0;
    std::size_t window_id = 0;
};

// Embedding of one detected-malicious flow, tagged with what the AE
// predictor needs to build per-target sequences.
struct FlowEmbedding {
    std::size_t flow_index = 0;
    std::size_t window_id = 0;
    double timestamp = 0.0;
    std::string src_ip;
    std::string dst_ip;
    Vector values;
};

struct StageScores {
    std::vector<double> stacked;  // per flow
    std::vector<double> gcn;
    std::vector<double> forest;
};

struct DetectionResult {
    std::vector<Alert> alerts;  // ordered by (flow index, stage)
    std::array<std::vector<FlowEmbedding>, 2> stage_embeddings;  // stages 1 and 2 only
    std::array<StageScores, 3> scores;  // empty vectors for untrained stages
};

namespace detail {

struct WindowedGraphs {
    std::vector<Window> windows;
    std::vector<FlowGraph> graphs;
    FlowGraph merged;                      // disjoint union over windows
    std::vector<std::size_t> instance_flow;  // union node -> flow index
};

inline WindowedGraphs build_windowed_graphs(const LabeledDataset& ds, const Matrix& features,
                                            const DetectorConfig& cfg) {
    WindowedGraphs out;
    out.windows = window_flows(ds, cfg.window_size, cfg.effective_stride());
    for (std::size_t w = 0; w < out.windows.size(); ++w) {
        const Window& win = out.windows[w];
        Matrix rows = features.middleRows(static_cast<Eigen::Index>(win.begin),
                                          static_cast<Eigen::Index>(win.size()));
        out.graphs.push_back(build_flow_graph(ds, win, rows, cfg.self_loops, w));
        for (std::size_t i = win.begin; i < win.end; ++i) out.instance_flow.push_back(i);
    }
    out.merged = disjoint_union(out.graphs);
    return out;
}

}  // namespace detail

// Trains the three binary detectors on one training split. Stages without
// both classes are reported untrainable instead of failing the others.
// Meta-features are strictly out-of-fold: fold models never see the labels
// of the flows they score.
inline DetectorBundle train_all_stages(LabeledDataset& train, const DetectorConfig& cfg) {
    DetectorBundle bundle;
    bundle.config = cfg;

    const Matrix features = preprocess_features(train, /*fit=*/true);
    bundle.schema = train.schema;
    const auto wg = detail::build_windowed_graphs(train, features, cfg);
    const std::size_t n_flows = train.size();
    const std::size_t n_inst = wg.instance_flow.size();

    for (int stage = 1; stage <= 3; ++stage) {
        const auto s = static_cast<std::size_t>(stage - 1);
        const std::string tag = "stage" + std::to_string(stage);
        const auto y_flow = binarize_for_stage(train, stage);
        std::size_t n_pos = 0;
        for (auto v : y_flow) n_pos += v;
        if (n_pos == 0 || n_pos == y_flow.size()) {
            bundle.errors[s] = "DegenerateLabels: training split has " +
                               std::string(n_pos == 0 ? "no" : "only") + " stage " +
                               std::to_string(stage) + " flows";
            continue;
        }

        std::vector<std::uint8_t> y_inst(n_inst);
        for (std::size_t i = 0; i < n_inst; ++i) y_inst[i] = y_flow[wg.instance_flow[i]];

        // Out-of-fold base probabilities, one row per training flow.
        const auto folds = assign_folds(n_flows, cfg.stacker.folds,
                                        derive_seed(cfg.seed, "stacker.folds." + tag));
        bundle.oof_folds[s] = folds;
        std::vector<double> oof_gcn(n_flows, 0.5), oof_forest(n_flows, 0.5);
        std::vector<int> hits(n_flows, 0);
        for (int k = 0; k < cfg.stacker.folds; ++k) {
            std::vector<std::uint8_t> mask_inst(n_inst);
            for (std::size_t i = 0; i < n_inst; ++i)
                mask_inst[i] = folds[wg.instance_flow[i]] != k ? 1 : 0;
            bool fold_pos = false, fold_neg = false;
            for (std::size_t i = 0; i < n_inst; ++i)
                if (mask_inst[i]) (y_inst[i] ? fold_pos : fold_neg) = true;
            if (!fold_pos || !fold_neg) {
                bundle.warnings.push_back(tag + ": fold " + std::to_string(k) +
                                          " complement is single-class; neutral 0.5 meta inputs");
                for (std::size_t i = 0; i < n_flows; ++i)
                    if (folds[i] == k) hits[i] = 1;
                continue;
            }

            GcnConfig gcfg = cfg.gcn;
            gcfg.seed = derive_seed(cfg.seed, "gcn." + tag + ".fold", static_cast<std::uint64_t>(k));
            const auto gcn_fold = train_gcn(wg.merged, y_inst, mask_inst, gcfg);
            const auto fwd = gcn_forward(gcn_fold.model, wg.merged);

            std::vector<std::size_t> fold_rows;
            for (std::size_t i = 0; i < n_flows; ++i)
                if (folds[i] == k) fold_rows.push_back(i);
            Matrix x_rest(static_cast<Eigen::Index>(n_flows - fold_rows.size()), features.cols());
            std::vector<std::uint8_t> y_rest;
            Eigen::Index r = 0;
            for (std::size_t i = 0; i < n_flows; ++i) {
                if (folds[i] == k) continue;
                x_rest.row(r++) = features.row(static_cast<Eigen::Index>(i));
                y_rest.push_back(y_flow[i]);
            }
            ForestConfig fcfg = cfg.forest;
            fcfg.seed = derive_seed(cfg.seed, "forest." + tag + ".fold", static_cast<std::uint64_t>(k));
            const auto forest_fold = fit_forest(x_rest, y_rest, fcfg);

            std::vector<double> gcn_sum(n_flows, 0.0);
            std::vector<int> gcn_cnt(n_flows, 0);
            for (std::size_t i = 0; i < n_inst; ++i) {
                const std::size_t flow = wg.instance_flow[i];
                if (folds[flow] != k) continue;
                gcn_sum[flow] += fwd.class_probs(static_cast<Eigen::Index>(i), 1);
                gcn_cnt[flow] += 1;
            }
            for (std::size_t flow : fold_rows) {
                if (gcn_cnt[flow] > 0) oof_gcn[flow] = gcn_sum[flow] / gcn_cnt[flow];
                Matrix row = features.row(static_cast<Eigen::Index>(flow));
                oof_forest[flow] = forest_predict_proba(forest_fold, row)(0, 1);
                hits[flow] = 1;
            }
        }
        for (std::size_t i = 0; i < n_flows; ++i)
            if (!hits[i])
                throw Error("internal: flow " + std::to_string(i) + " missing out-of-fold score");

        Matrix meta_x(static_cast<Eigen::Index>(n_flows), 2);
        for (std::size_t i = 0; i < n_flows; ++i) {
            meta_x(static_cast<Eigen::Index>(i), 0) = oof_gcn[i];
            meta_x(static_cast<Eigen::Index>(i), 1) = oof_forest[i];
        }
        StackerConfig scfg = cfg.stacker;
        scfg.seed = derive_seed(cfg.seed, "stacker." + tag);
        StageDetector det;
        det.stage = stage;
        det.meta = fit_logistic_meta(meta_x, y_flow, scfg);
        det.meta.threshold = cfg.thresholds[s];

        // Final base models refit on the full training split; inference uses these.
        GcnConfig gcfg = cfg.gcn;
        gcfg.seed = derive_seed(cfg.seed, "gcn." + tag + ".final");
        auto trained = train_gcn(wg.merged, y_inst, std::vector<std::uint8_t>(n_inst, 1), gcfg);
        bundle.gcn_loss_curves[s] = std::move(trained.loss_curve);
        det.gcn = std::move(trained.model);
        ForestConfig fcfg = cfg.forest;
        fcfg.seed = derive_seed(cfg.seed, "forest." + tag + ".final");
        det.forest = fit_forest(features, y_flow, fcfg);
        bundle.stages[s] = std::move(det);
    }
    return bundle;
}

// Scores one window with every fitted detector. Embeddings are retained
// only for flows the stage-1/stage-2 detectors flagged; stage-3 embeddings
// are not kept (nothing downstream consumes them).
inline DetectionResult detect_window(const DetectorBundle& bundle, const LabeledDataset& ds,
                                     const Window& window, std::size_t window_id = 0) {
    const Matrix all = encode_features(ds, bundle.schema);
    Matrix rows = all.middleRows(static_cast<Eigen::Index>(window.begin),
                                 static_cast<Eigen::Index>(window.size()));
    const FlowGraph g = build_flow_graph(ds, window, rows, bundle.config.self_loops, window_id);

    DetectionResult result;
    const std::size_t n = window.size();
    for (int stage = 1; stage <= 3; ++stage) {
        const auto s = static_cast<std::size_t>(stage - 1);
        if (!bundle.stages[s]) continue;
        const StageDetector& det = *bundle.stages[s];
        const auto fwd = gcn_forward(det.gcn, g);
        const Matrix forest_probs = forest_predict_proba(det.forest, rows);
        auto& scores = result.scores[s];
        scores.stacked.resize(n);
        scores.gcn.resize(n);
        scores.forest.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const double pg = fwd.class_probs(r, 1);
            const double pf = forest_probs(r, 1);
            const auto pred = stacked_predict(det.meta, pg, pf);
            scores.gcn[i] = pg;
            scores.forest[i] = pf;
            scores.stacked[i] = pred.probability;
            if (!pred.is_attack) continue;
            const FlowRecord& f = ds.flows[window.begin + i];
            result.alerts.push_back(Alert{stage, window.begin + i, f.timestamp, f.src_ip, f.dst_ip,
                                          pred.probability, window_id});
            if (stage <= 2)
                result.stage_embeddings[s].push_back(FlowEmbedding{
                    window.begin + i, window_id, f.timestamp, f.src_ip, f.dst_ip,
                    fwd.embeddings.row(r).transpose()});
        }
    }
    std::sort(result.alerts.begin(), result.alerts.end(), [](const Alert& a, const Alert& b) {
        return std::tie(a.flow_index, a.stage, a.window_id) <
               std::tie(b.flow_index, b.stage, b.window_id);
    });
    return result;
}

// Windows the dataset and runs detection over all of it. Per-flow scores
// are averaged over the windows containing the flow (one window in the
// default non-overlapping configuration).
inline DetectionResult detect_all(const DetectorBundle& bundle, const LabeledDataset& ds) {
    const Matrix features = encode_features(ds, bundle.schema);
    const auto windows =
        window_flows(ds, bundle.config.window_size, bundle.config.effective_stride());

    DetectionResult result;
    std::array<std::vector<double>, 3> sums;
    std::array<std::vector<double>, 3> gcn_sums, forest_sums;
    std::array<std::vector<int>, 3> counts;
    for (int s = 0; s < 3; ++s) {
        if (!bundle.stages[static_cast<std::size_t>(s)]) continue;
        sums[static_cast<std::size_t>(s)].assign(ds.size(), 0.0);
        gcn_sums[static_cast<std::size_t>(s)].assign(ds.size(), 0.0);
        forest_sums[static_cast<std::size_t>(s)].assign(ds.size(), 0.0);
        counts[static_cast<std::size_t>(s)].assign(ds.size(), 0);
    }

    for (std::size_t w = 0; w < windows.size(); ++w) {
        const Window& win = windows[w];
        Matrix rows = features.middleRows(static_cast<Eigen::Index>(win.begin),
                                          static_cast<Eigen::Index>(win.size()));
        const FlowGraph g = build_flow_graph(ds, win, rows, bundle.config.self_loops, w);
        for (int stage = 1; stage <= 3; ++stage) {
            const auto s = static_cast<std::size_t>(stage - 1);
            if (!bundle.stages[s]) continue;
            const StageDetector& det = *bundle.stages[s];
            const auto fwd = gcn_forward(det.gcn, g);
            const Matrix forest_probs = forest_predict_proba(det.forest, rows);
            for (std::size_t i = 0; i < win.size(); ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                const double pg = fwd.class_probs(r, 1);
                const double pf = forest_probs(r, 1);
                const auto pred = stacked_predict(det.meta, pg, pf);
                const std::size_t flow = win.begin + i;
                sums[s][flow] += pred.probability;
                gcn_sums[s][flow] += pg;
                forest_sums[s][flow] += pf;
                counts[s][flow] += 1;
                if (!pred.is_attack) continue;
                const FlowRecord& f = ds.flows[flow];
                result.alerts.push_back(
                    Alert{stage, flow, f.timestamp, f.src_ip, f.dst_ip, pred.probability, w});
                if (stage <= 2)
                    result.stage_embeddings[s].push_back(FlowEmbedding{
                        flow, w, f.timestamp, f.src_ip, f.dst_ip, fwd.embeddings.row(r).transpose()});
            }
        }
    }
    for (int s = 0; s < 3; ++s) {
        const auto si = static_cast<std::size_t>(s);
        if (!bundle.stages[si]) continue;
        auto& scores = result.scores[si];
        scores.stacked.resize(ds.size());
        scores.gcn.resize(ds.size());
        scores.forest.resize(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const double c = counts[si][i] > 0 ? static_cast<double>(counts[si][i]) : 1.0;
            scores.stacked[i] = sums[si][i] / c;
            scores.gcn[i] = gcn_sums[si][i] / c;
            scores.forest[i] = forest_sums[si][i] / c;
        }
    }
    std::sort(result.alerts.begin(), result.alerts.end(), [](const Alert& a, const Alert& b) {
        return std::tie(a.flow_index, a.stage, a.window_id) <
               std::tie(b.flow_index, b.stage, b.window_id);
    });
    return result;
}

}  // namespace flowstage
