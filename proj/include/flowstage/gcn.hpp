#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "flowstage/common.hpp"
#include "flowstage/graph.hpp"
#include "flowstage/linalg.hpp"

namespace flowstage {

struct GcnConfig {
    int layers = 2;
    int hidden_dim = 32;  // also the embedding dimension
    int epochs = 300;
    double step_size = 0.01;
    std::uint64_t seed = 0;
};

// Graph convolutional classifier. Hidden graph layers use ReLU; the last
// graph layer is linear and its output is the node embedding. A dense
// softmax head on top of the embeddings produces the two class
// probabilities.
struct GcnModel {
    std::vector<Matrix> layer_weights;  // [0] is F x D, the rest D x D
    Matrix head_weights;                // D x 2
    Vector head_bias;                   // 2
    std::uint64_t seed = 0;

    Eigen::Index input_dim() const { return layer_weights.front().rows(); }
    Eigen::Index embedding_dim() const { return layer_weights.back().cols(); }
};

inline GcnModel init_gcn(Eigen::Index feature_dim, const GcnConfig& cfg) {
    if (cfg.layers < 1) throw InvalidConfig("gcn needs at least one layer");
    Rng rng(cfg.seed);
    GcnModel m;
    m.seed = cfg.seed;
    Eigen::Index in = feature_dim;
    for (int l = 0; l < cfg.layers; ++l) {
        m.layer_weights.push_back(glorot_uniform(in, cfg.hidden_dim, rng));
        in = cfg.hidden_dim;
    }
    m.head_weights = glorot_uniform(cfg.hidden_dim, 2, rng);
    m.head_bias = Vector::Zero(2);
    return m;
}

// One graph convolution: H' = act( A_hat * H * W ), where A_hat carries the
// per-edge coefficients 1/sqrt(|N(i)||N(j)|). A node with no neighbors (in
// no-self-loop mode) has an empty sum and yields the zero vector.
inline Matrix gcn_layer_forward(const FlowGraph& g, const Matrix& h, const Matrix& w,
                                bool apply_activation) {
    if (static_cast<std::size_t>(h.rows()) != g.node_count)
        throw DimensionMismatch("node count does not match feature rows");
    if (h.cols() != w.rows()) throw DimensionMismatch("layer weight dims do not chain");
    const SparseMatrix a = g.normalized_adjacency();
    Matrix out = (a * h) * w;
    if (apply_activation) out = out.cwiseMax(0.0);
    return out;
}

struct GcnForward {
    Matrix class_probs;  // N x 2, rows sum to 1
    Matrix embeddings;   // N x D, last graph layer output
};

namespace detail {

// Cached intermediates of a forward pass, reused by the backward sweep.
struct GcnTape {
    std::vector<Matrix> inputs;      // H_l before each layer (inputs[0] = X)
    std::vector<Matrix> aggregated;  // A_hat * H_l per layer
    std::vector<Matrix> pre_act;     // (A_hat * H_l) * W_l per layer
    Matrix embeddings;
    Matrix logits;
    Matrix probs;
};

inline GcnTape gcn_forward_tape(const GcnModel& m, const SparseMatrix& a, const Matrix& x) {
    if (x.cols() != m.input_dim())
        throw DimensionMismatch("graph feature dim does not match first layer input");
    GcnTape t;
    const std::size_t layers = m.layer_weights.size();
    Matrix h = x;
    for (std::size_t l = 0; l < layers; ++l) {
        t.inputs.push_back(h);
        Matrix ah = a * h;
        Matrix z = ah * m.layer_weights[l];
        t.aggregated.push_back(std::move(ah));
        h = l + 1 < layers ? z.cwiseMax(0.0) : z;
        t.pre_act.push_back(std::move(z));
    }
    t.embeddings = h;
    t.logits = (h * m.head_weights).rowwise() + m.head_bias.transpose();
    t.probs = softmax_rows(t.logits);
    return t;
}

}  // namespace detail

inline GcnForward gcn_forward(const GcnModel& m, const FlowGraph& g) {
    const auto tape = detail::gcn_forward_tape(m, g.normalized_adjacency(), g.node_features);
    return GcnForward{tape.probs, tape.embeddings};
}

// Mean over masked nodes of -log p[true class], probabilities clamped at
// 1e-12 so the loss stays finite.
inline double cross_entropy_loss(const Matrix& class_probs, const std::vector<std::uint8_t>& labels,
                                 const std::vector<std::uint8_t>& mask) {
    if (static_cast<std::size_t>(class_probs.rows()) != labels.size() || labels.size() != mask.size())
        throw LengthMismatch("probs, labels and mask must have equal length");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!mask[i]) continue;
        const double p = std::max(class_probs(static_cast<Eigen::Index>(i), labels[i] ? 1 : 0), 1e-12);
        total += -std::log(p);
        ++count;
    }
    if (count == 0) throw EmptyMask("no nodes selected by mask");
    return total / static_cast<double>(count);
}

struct GcnGradients {
    double loss = 0.0;
    std::vector<Matrix> layer_grads;
    Matrix head_grad;
    Vector bias_grad;
};

// Reverse-mode differentiation of the stacked layer equation plus softmax
// cross-entropy head, restricted to masked nodes.
inline GcnGradients compute_gcn_gradients(const GcnModel& m, const SparseMatrix& a,
                                          const Matrix& x, const std::vector<std::uint8_t>& labels,
                                          const std::vector<std::uint8_t>& mask) {
    const auto tape = detail::gcn_forward_tape(m, a, x);
    GcnGradients grads;
    grads.loss = cross_entropy_loss(tape.probs, labels, mask);

    std::size_t count = 0;
    for (auto v : mask) count += v ? 1 : 0;
    const double inv = 1.0 / static_cast<double>(count);

    Matrix dlogits = Matrix::Zero(tape.probs.rows(), 2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!mask[i]) continue;
        const auto r = static_cast<Eigen::Index>(i);
        dlogits.row(r) = tape.probs.row(r) * inv;
        dlogits(r, labels[i] ? 1 : 0) -= inv;
    }

    grads.head_grad = tape.embeddings.transpose() * dlogits;
    grads.bias_grad = dlogits.colwise().sum().transpose();
    Matrix dh = dlogits * m.head_weights.transpose();

    const std::size_t layers = m.layer_weights.size();
    grads.layer_grads.resize(layers);
    for (std::size_t l = layers; l-- > 0;) {
        Matrix dz = l + 1 < layers
                        ? (tape.pre_act[l].array() > 0.0).select(dh, Matrix::Zero(dh.rows(), dh.cols()))
                        : std::move(dh);
        grads.layer_grads[l] = tape.aggregated[l].transpose() * dz;
        if (l > 0) dh = a * (dz * m.layer_weights[l].transpose());  // A_hat is symmetric
    }
    return grads;
}

inline GcnGradients compute_gcn_gradients(const GcnModel& m, const FlowGraph& g,
                                          const std::vector<std::uint8_t>& labels,
                                          const std::vector<std::uint8_t>& mask) {
    return compute_gcn_gradients(m, g.normalized_adjacency(), g.node_features, labels, mask);
}

struct GcnTrainResult {
    GcnModel model;
    std::vector<double> loss_curve;  // per-epoch training loss
};

// Full-batch Adam on masked cross-entropy. Deterministic for a given seed;
// NaN/Inf weights abort with NumericalDivergence.
inline GcnTrainResult train_gcn(const FlowGraph& g, const std::vector<std::uint8_t>& labels,
                                const std::vector<std::uint8_t>& mask, const GcnConfig& cfg) {
    if (labels.size() != g.node_count || mask.size() != g.node_count)
        throw LengthMismatch("labels/mask length must equal node count");
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!mask[i]) continue;
        (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg)
        throw DegenerateLabels("masked training nodes contain a single class");

    GcnTrainResult result;
    result.model = init_gcn(g.node_features.cols(), cfg);
    GcnModel& m = result.model;
    const SparseMatrix a = g.normalized_adjacency();

    std::vector<AdamState> layer_opt;
    for (const auto& w : m.layer_weights) layer_opt.emplace_back(w.rows(), w.cols());
    AdamState head_opt(m.head_weights.rows(), m.head_weights.cols());
    AdamState bias_opt(2, 1);

    result.loss_curve.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto grads = compute_gcn_gradients(m, a, g.node_features, labels, mask);
        result.loss_curve.push_back(grads.loss);
        for (std::size_t l = 0; l < m.layer_weights.size(); ++l)
            layer_opt[l].update(m.layer_weights[l], grads.layer_grads[l], cfg.step_size);
        head_opt.update(m.head_weights, grads.head_grad, cfg.step_size);
        bias_opt.update(m.head_bias, grads.bias_grad, cfg.step_size);

        bool finite = m.head_weights.allFinite() && m.head_bias.allFinite();
        for (const auto& w : m.layer_weights) finite = finite && w.allFinite();
        if (!finite) throw NumericalDivergence("non-finite weights at epoch " + std::to_string(epoch));
    }
    return result;
}

// Last-graph-layer vectors for the requested nodes (rows of the forward
// pass embedding matrix).
inline Matrix extract_embeddings(const GcnModel& m, const FlowGraph& g,
                                 const std::vector<std::size_t>& node_indices) {
    const auto fwd = gcn_forward(m, g);
    Matrix out(static_cast<Eigen::Index>(node_indices.size()), fwd.embeddings.cols());
    for (std::size_t i = 0; i < node_indices.size(); ++i) {
        if (node_indices[i] >= g.node_count)
            throw IndexOutOfRange("embedding index " + std::to_string(node_indices[i]) +
                                  " out of range");
        out.row(static_cast<Eigen::Index>(i)) =
            fwd.embeddings.row(static_cast<Eigen::Index>(node_indices[i]));
    }
    return out;
}

}  // namespace flowstage
