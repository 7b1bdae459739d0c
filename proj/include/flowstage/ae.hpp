#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "flowstage/common.hpp"
#include "flowstage/detector.hpp"
#include "flowstage/flow.hpp"
#include "flowstage/linalg.hpp"

namespace flowstage {

// Per-target training sample: the stage-1 and stage-2 embedding histories
// of one dst_ip, padded/truncated to a fixed T with validity masks, and the
// binary "a stage-3 attack followed" label.
struct AeSample {
    std::string target_ip;
    Matrix seq1;  // T x D, rows past len1 are zero padding
    Matrix seq2;
    std::vector<std::uint8_t> mask1;  // length T
    std::vector<std::uint8_t> mask2;
    std::size_t len1 = 0;
    std::size_t len2 = 0;
    int label = 0;
};

struct AeConfig {
    int sequence_length = 16;  // T: most-recent embeddings kept per stage
    double horizon_s = std::numeric_limits<double>::infinity();
};

namespace detail {

inline Matrix pad_sequence(const std::vector<const FlowEmbedding*>& emb, int t_len,
                           Eigen::Index dim, std::vector<std::uint8_t>& mask,
                           std::size_t& true_len) {
    Matrix seq = Matrix::Zero(t_len, dim);
    mask.assign(static_cast<std::size_t>(t_len), 0);
    // Keep the most recent t_len entries, oldest first.
    const std::size_t keep = std::min<std::size_t>(emb.size(), static_cast<std::size_t>(t_len));
    const std::size_t skip = emb.size() - keep;
    for (std::size_t i = 0; i < keep; ++i) {
        seq.row(static_cast<Eigen::Index>(i)) = emb[skip + i]->values.transpose();
        mask[i] = 1;
    }
    true_len = keep;
    return seq;
}

}  // namespace detail

// One sample per dst_ip that was flagged by both the stage-1 and stage-2
// detectors. Label 1 iff ground truth holds a stage-3 flow against that
// target after its last stage-2-flagged flow (within the horizon).
inline std::vector<AeSample> build_ae_dataset(const std::vector<FlowEmbedding>& stage1,
                                              const std::vector<FlowEmbedding>& stage2,
                                              const LabeledDataset& ground_truth,
                                              const AeConfig& cfg = {}) {
    if (cfg.sequence_length < 1) throw InvalidConfig("sequence_length must be >= 1");
    std::map<std::string, std::pair<std::vector<const FlowEmbedding*>,
                                    std::vector<const FlowEmbedding*>>> by_target;
    for (const auto& e : stage1) by_target[e.dst_ip].first.push_back(&e);
    for (const auto& e : stage2) by_target[e.dst_ip].second.push_back(&e);

    std::vector<AeSample> samples;
    for (auto& [target, lists] : by_target) {
        auto& [s1, s2] = lists;
        if (s1.empty() || s2.empty()) continue;
        auto by_time = [](const FlowEmbedding* a, const FlowEmbedding* b) {
            return std::tie(a->timestamp, a->flow_index) < std::tie(b->timestamp, b->flow_index);
        };
        std::sort(s1.begin(), s1.end(), by_time);
        std::sort(s2.begin(), s2.end(), by_time);

        const Eigen::Index dim = s1.front()->values.size();
        AeSample sample;
        sample.target_ip = target;
        sample.seq1 = detail::pad_sequence(s1, cfg.sequence_length, dim, sample.mask1, sample.len1);
        sample.seq2 = detail::pad_sequence(s2, cfg.sequence_length, dim, sample.mask2, sample.len2);

        const double last_stage2 = s2.back()->timestamp;
        for (std::size_t i = 0; i < ground_truth.size(); ++i) {
            if (ground_truth.stage_labels[i] != StageLabel::Stage3) continue;
            const auto& f = ground_truth.flows[i];
            if (f.dst_ip != target) continue;
            if (f.timestamp > last_stage2 && f.timestamp <= last_stage2 + cfg.horizon_s) {
                sample.label = 1;
                break;
            }
        }
        samples.push_back(std::move(sample));
    }
    if (samples.empty())
        throw EmptyDataset("no target was flagged by both stage-1 and stage-2 detectors");
    return samples;
}

// Two aligned input sequences, one shared recurrent state, softmax head on
// the final hidden state.
struct MultiInputRnn {
    Matrix w_in1;  // H x D
    Matrix w_in2;  // H x D
    Matrix w_rec;  // H x H
    Vector b_h;    // H
    Matrix w_out;  // 2 x H
    Vector b_out;  // 2
    std::uint64_t seed = 0;

    Eigen::Index hidden_dim() const { return w_rec.rows(); }
    Eigen::Index input_dim() const { return w_in1.cols(); }
};

struct RnnConfig {
    int hidden_dim = 16;
    int epochs = 400;
    double step = 0.01;
    double clip_norm = 5.0;
    double weight_decay = 0.0;  // decoupled, matrices only
    std::uint64_t seed = 0;
};

inline MultiInputRnn init_rnn(Eigen::Index input_dim, const RnnConfig& cfg) {
    Rng rng(cfg.seed);
    MultiInputRnn m;
    m.seed = cfg.seed;
    m.w_in1 = glorot_uniform(cfg.hidden_dim, input_dim, rng);
    m.w_in2 = glorot_uniform(cfg.hidden_dim, input_dim, rng);
    m.w_rec = glorot_uniform(cfg.hidden_dim, cfg.hidden_dim, rng);
    m.b_h = Vector::Zero(cfg.hidden_dim);
    m.w_out = glorot_uniform(2, cfg.hidden_dim, rng);
    m.b_out = Vector::Zero(2);
    return m;
}

// h_t = tanh(W_in1 x1 + W_in2 x2 + W_rec h_{t-1} + b). A masked-out input
// contributes nothing; a fully masked step freezes the hidden state, which
// makes trailing padding an exact no-op.
inline Vector rnn_step(const MultiInputRnn& m, const Vector& x1, const Vector& x2,
                       const Vector& h_prev, bool m1, bool m2) {
    if (h_prev.size() != m.hidden_dim()) throw DimensionMismatch("hidden state size mismatch");
    if ((m1 && x1.size() != m.input_dim()) || (m2 && x2.size() != m.input_dim()))
        throw DimensionMismatch("input size mismatch");
    if (!m1 && !m2) return h_prev;
    Vector a = m.w_rec * h_prev + m.b_h;
    if (m1) a += m.w_in1 * x1;
    if (m2) a += m.w_in2 * x2;
    return a.array().tanh();
}

inline Vector rnn_forward(const MultiInputRnn& m, const AeSample& sample) {
    if (sample.seq1.cols() != m.input_dim() || sample.seq2.cols() != m.input_dim())
        throw DimensionMismatch("sample embedding dim does not match model");
    Vector h = Vector::Zero(m.hidden_dim());
    for (Eigen::Index t = 0; t < sample.seq1.rows(); ++t) {
        h = rnn_step(m, sample.seq1.row(t).transpose(), sample.seq2.row(t).transpose(), h,
                     sample.mask1[static_cast<std::size_t>(t)] != 0,
                     sample.mask2[static_cast<std::size_t>(t)] != 0);
    }
    return softmax_vec(m.w_out * h + m.b_out);
}

struct RnnGradients {
    double loss = 0.0;
    Matrix d_in1, d_in2, d_rec, d_out;
    Vector d_bh, d_bout;
};

// Backpropagation through time over all steps, class-weighted cross
// entropy. Frozen (fully masked) steps pass the hidden-state gradient
// through unchanged.
inline RnnGradients compute_rnn_gradients(const MultiInputRnn& m,
                                          const std::vector<AeSample>& samples,
                                          const std::array<double, 2>& class_weights) {
    RnnGradients g;
    g.d_in1 = Matrix::Zero(m.w_in1.rows(), m.w_in1.cols());
    g.d_in2 = Matrix::Zero(m.w_in2.rows(), m.w_in2.cols());
    g.d_rec = Matrix::Zero(m.w_rec.rows(), m.w_rec.cols());
    g.d_out = Matrix::Zero(m.w_out.rows(), m.w_out.cols());
    g.d_bh = Vector::Zero(m.b_h.size());
    g.d_bout = Vector::Zero(2);

    double weight_sum = 0.0;
    for (const auto& s : samples) weight_sum += class_weights[static_cast<std::size_t>(s.label)];

    for (const auto& s : samples) {
        const Eigen::Index t_len = s.seq1.rows();
        std::vector<Vector> hs(static_cast<std::size_t>(t_len) + 1, Vector::Zero(m.hidden_dim()));
        std::vector<std::uint8_t> active(static_cast<std::size_t>(t_len));
        for (Eigen::Index t = 0; t < t_len; ++t) {
            const bool m1 = s.mask1[static_cast<std::size_t>(t)] != 0;
            const bool m2 = s.mask2[static_cast<std::size_t>(t)] != 0;
            active[static_cast<std::size_t>(t)] = m1 || m2 ? 1 : 0;
            hs[static_cast<std::size_t>(t) + 1] =
                rnn_step(m, s.seq1.row(t).transpose(), s.seq2.row(t).transpose(),
                         hs[static_cast<std::size_t>(t)], m1, m2);
        }
        const Vector& h_final = hs[static_cast<std::size_t>(t_len)];
        const Vector probs = softmax_vec(m.w_out * h_final + m.b_out);
        const double w = class_weights[static_cast<std::size_t>(s.label)] / weight_sum;
        g.loss += w * -std::log(std::max(probs(s.label), 1e-12));

        Vector dlogits = probs * w;
        dlogits(s.label) -= w;
        g.d_out += dlogits * h_final.transpose();
        g.d_bout += dlogits;
        Vector dh = m.w_out.transpose() * dlogits;
        for (Eigen::Index t = t_len; t-- > 0;) {
            const auto ti = static_cast<std::size_t>(t);
            if (!active[ti]) continue;  // frozen step: dh flows through
            const Vector& h_t = hs[ti + 1];
            Vector da = dh.array() * (1.0 - h_t.array().square());
            if (s.mask1[ti]) g.d_in1 += da * s.seq1.row(t);
            if (s.mask2[ti]) g.d_in2 += da * s.seq2.row(t);
            g.d_rec += da * hs[ti].transpose();
            g.d_bh += da;
            dh = m.w_rec.transpose() * da;
        }
    }
    return g;
}

struct RnnTrainResult {
    MultiInputRnn model;
    std::vector<double> loss_curve;
};

// Full-batch Adam with global-norm gradient clipping and inverse-frequency
// class weights. Optional decoupled weight decay on the matrices is the
// small-data stabilizer; it is not part of the differentiated loss.
inline RnnTrainResult train_rnn(const std::vector<AeSample>& samples, const RnnConfig& cfg) {
    if (samples.empty()) throw EmptyDataset("no AE samples to train on");
    double n_pos = 0.0;
    for (const auto& s : samples) n_pos += s.label ? 1.0 : 0.0;
    const double n = static_cast<double>(samples.size());
    if (n_pos == 0.0 || n_pos == n) throw DegenerateLabels("AE labels contain a single class");
    const std::array<double, 2> class_weights{n / (2.0 * (n - n_pos)), n / (2.0 * n_pos)};

    RnnTrainResult result;
    result.model = init_rnn(samples.front().seq1.cols(), cfg);
    MultiInputRnn& m = result.model;

    AdamState o_in1(m.w_in1.rows(), m.w_in1.cols()), o_in2(m.w_in2.rows(), m.w_in2.cols()),
        o_rec(m.w_rec.rows(), m.w_rec.cols()), o_out(m.w_out.rows(), m.w_out.cols()),
        o_bh(m.b_h.size(), 1), o_bout(2, 1);

    result.loss_curve.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto g = compute_rnn_gradients(m, samples, class_weights);
        result.loss_curve.push_back(g.loss);

        const double norm =
            std::sqrt(frobenius_sq(g.d_in1) + frobenius_sq(g.d_in2) + frobenius_sq(g.d_rec) +
                      frobenius_sq(g.d_out) + g.d_bh.squaredNorm() + g.d_bout.squaredNorm());
        if (norm > cfg.clip_norm) {
            const double scale = cfg.clip_norm / norm;
            g.d_in1 *= scale;
            g.d_in2 *= scale;
            g.d_rec *= scale;
            g.d_out *= scale;
            g.d_bh *= scale;
            g.d_bout *= scale;
        }
        o_in1.update(m.w_in1, g.d_in1, cfg.step);
        o_in2.update(m.w_in2, g.d_in2, cfg.step);
        o_rec.update(m.w_rec, g.d_rec, cfg.step);
        o_out.update(m.w_out, g.d_out, cfg.step);
        o_bh.update(m.b_h, g.d_bh, cfg.step);
        o_bout.update(m.b_out, g.d_bout, cfg.step);
        if (cfg.weight_decay > 0.0) {
            const double keep = 1.0 - cfg.step * cfg.weight_decay;
            m.w_in1 *= keep;
            m.w_in2 *= keep;
            m.w_rec *= keep;
            m.w_out *= keep;
        }
        if (!(m.w_in1.allFinite() && m.w_in2.allFinite() && m.w_rec.allFinite() &&
              m.w_out.allFinite() && m.b_h.allFinite() && m.b_out.allFinite()))
            throw NumericalDivergence("non-finite RNN weights at epoch " + std::to_string(epoch));
    }
    return result;
}

struct RiskPrediction {
    double probability = 0.0;
    bool will_be_attacked = false;
};

inline RiskPrediction predict_target_risk(const MultiInputRnn& m, const AeSample& sample,
                                          double threshold = 0.5) {
    const double p = rnn_forward(m, sample)(1);
    return RiskPrediction{p, p >= threshold};
}

// Target-level K-fold cross validation with pooled predictions: every
// sample is scored by a model that never saw its label. The honest way to
// evaluate on a handful of targets.
struct RnnCvResult {
    std::vector<double> probabilities;        // aligned with samples
    std::vector<std::uint8_t> predictions;
    std::vector<std::uint8_t> labels;
};

inline RnnCvResult cross_validate_rnn(const std::vector<AeSample>& samples, int folds,
                                      const RnnConfig& cfg, double threshold = 0.5) {
    if (samples.size() < 2) throw EmptyDataset("need at least 2 AE samples for cross validation");
    folds = std::min<int>(folds, static_cast<int>(samples.size()));
    const auto assignment = assign_folds(samples.size(), folds, derive_seed(cfg.seed, "ae.cv"));
    RnnCvResult result;
    result.probabilities.assign(samples.size(), 0.0);
    result.predictions.assign(samples.size(), 0);
    result.labels.resize(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        result.labels[i] = static_cast<std::uint8_t>(samples[i].label);

    for (int k = 0; k < folds; ++k) {
        std::vector<AeSample> train_fold;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (assignment[i] != k) train_fold.push_back(samples[i]);
        double pos = 0.0;
        for (const auto& s : train_fold) pos += s.label ? 1.0 : 0.0;
        if (pos == 0.0 || pos == static_cast<double>(train_fold.size())) {
            // Degenerate fold: fall back to the fold's constant class.
            const double p = pos > 0.0 ? 1.0 : 0.0;
            for (std::size_t i = 0; i < samples.size(); ++i)
                if (assignment[i] == k) {
                    result.probabilities[i] = p;
                    result.predictions[i] = p >= threshold ? 1 : 0;
                }
            continue;
        }
        RnnConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, "ae.cv.fold", static_cast<std::uint64_t>(k));
        const auto trained = train_rnn(train_fold, fold_cfg);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (assignment[i] != k) continue;
            const auto pred = predict_target_risk(trained.model, samples[i], threshold);
            result.probabilities[i] = pred.probability;
            result.predictions[i] = pred.will_be_attacked ? 1 : 0;
        }
    }
    return result;
}

}  // namespace flowstage
