#pragma once

#include <algorithm>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "flowstage/common.hpp"
#include "flowstage/flow.hpp"

namespace flowstage {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Window {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t size() const { return end - begin; }
};

// Tiles [0, n) with windows of at most `window_size` flows starting every
// `stride` flows. Emission stops with the first window that reaches the end,
// so a trailing partial window is kept but never repeated.
inline std::vector<Window> window_flows(std::size_t n_flows, std::size_t window_size,
                                        std::size_t stride) {
    if (window_size < 2) throw InvalidConfig("window size must be at least 2");
    if (stride < 1 || stride > window_size)
        throw InvalidConfig("stride must be in [1, window_size]");
    std::vector<Window> windows;
    if (n_flows == 0) return windows;
    for (std::size_t start = 0;; start += stride) {
        const std::size_t end = std::min(start + window_size, n_flows);
        windows.push_back(Window{start, end});
        if (end == n_flows) break;
    }
    return windows;
}

inline std::vector<Window> window_flows(const LabeledDataset& ds, std::size_t window_size,
                                        std::size_t stride) {
    return window_flows(ds.size(), window_size, stride);
}

// Window of flows as a graph: nodes are flows, an edge joins two flows that
// share an endpoint IP. Adjacency is kept in CSR form with the symmetric
// normalization coefficient 1/sqrt(|N(i)||N(j)|) stored per edge.
struct FlowGraph {
    std::size_t node_count = 0;
    Matrix node_features;
    std::vector<std::size_t> adj_offsets;    // CSR row offsets, size node_count+1
    std::vector<std::uint32_t> adj_index;    // neighbor ids, sorted per row
    std::vector<double> norm_coeffs;         // aligned with adj_index
    bool self_loops = true;
    std::vector<std::uint32_t> isolated_nodes;  // only populated without self-loops
    std::size_t window_id = 0;

    std::size_t degree(std::size_t i) const { return adj_offsets[i + 1] - adj_offsets[i]; }

    bool has_edge(std::size_t i, std::size_t j) const {
        const auto b = adj_index.begin() + static_cast<std::ptrdiff_t>(adj_offsets[i]);
        const auto e = adj_index.begin() + static_cast<std::ptrdiff_t>(adj_offsets[i + 1]);
        return std::binary_search(b, e, static_cast<std::uint32_t>(j));
    }

    double coeff(std::size_t i, std::size_t j) const {
        const auto b = adj_index.begin() + static_cast<std::ptrdiff_t>(adj_offsets[i]);
        const auto e = adj_index.begin() + static_cast<std::ptrdiff_t>(adj_offsets[i + 1]);
        const auto it = std::lower_bound(b, e, static_cast<std::uint32_t>(j));
        if (it == e || *it != j) throw IndexOutOfRange("no such edge");
        return norm_coeffs[static_cast<std::size_t>(it - adj_index.begin())];
    }

    SparseMatrix normalized_adjacency() const {
        SparseMatrix a(static_cast<Eigen::Index>(node_count), static_cast<Eigen::Index>(node_count));
        std::vector<Eigen::Triplet<double>> triplets;
        triplets.reserve(adj_index.size());
        for (std::size_t i = 0; i < node_count; ++i)
            for (std::size_t k = adj_offsets[i]; k < adj_offsets[i + 1]; ++k)
                triplets.emplace_back(static_cast<int>(i), static_cast<int>(adj_index[k]),
                                      norm_coeffs[k]);
        a.setFromTriplets(triplets.begin(), triplets.end());
        return a;
    }
};

// Per-IP bucket cap: one IP shared by b flows produces a b-clique, so a hot
// server IP can blow the window up quadratically. Past this cap we refuse
// the ingestion instead of silently subsampling.
inline constexpr std::size_t kIpBucketCap = 4096;

// Connects flows i != j of the window iff they share an endpoint IP
// (either direction). Buckets flows per IP so the main path never does an
// all-pairs scan.
inline FlowGraph build_flow_graph(const LabeledDataset& ds, const Window& window,
                                  const Matrix& features, bool self_loops,
                                  std::size_t window_id = 0) {
    const std::size_t n = window.size();
    if (n < 1) throw WindowTooSmall("window has no flows");
    if (window.end > ds.size()) throw IndexOutOfRange("window outside dataset");
    if (static_cast<std::size_t>(features.rows()) != n)
        throw DimensionMismatch("feature row count does not match window length");

    std::map<std::string, std::vector<std::uint32_t>> buckets;
    for (std::size_t i = 0; i < n; ++i) {
        const FlowRecord& f = ds.flows[window.begin + i];
        buckets[f.src_ip].push_back(static_cast<std::uint32_t>(i));
        if (f.dst_ip != f.src_ip) buckets[f.dst_ip].push_back(static_cast<std::uint32_t>(i));
    }

    std::vector<std::vector<std::uint32_t>> neighbors(n);
    for (const auto& [ip, members] : buckets) {
        if (members.size() > kIpBucketCap)
            throw BucketOverflow("IP " + ip + " appears in " + std::to_string(members.size()) +
                                 " flows of one window (cap " + std::to_string(kIpBucketCap) + ")");
        for (std::size_t a = 0; a < members.size(); ++a)
            for (std::size_t b = a + 1; b < members.size(); ++b) {
                neighbors[members[a]].push_back(members[b]);
                neighbors[members[b]].push_back(members[a]);
            }
    }

    FlowGraph g;
    g.node_count = n;
    g.node_features = features;
    g.self_loops = self_loops;
    g.window_id = window_id;
    g.adj_offsets.assign(n + 1, 0);

    for (std::size_t i = 0; i < n; ++i) {
        auto& nb = neighbors[i];
        if (self_loops) nb.push_back(static_cast<std::uint32_t>(i));
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
        g.adj_offsets[i + 1] = g.adj_offsets[i] + nb.size();
        if (!self_loops && nb.empty()) g.isolated_nodes.push_back(static_cast<std::uint32_t>(i));
    }
    g.adj_index.reserve(g.adj_offsets[n]);
    g.norm_coeffs.reserve(g.adj_offsets[n]);
    for (std::size_t i = 0; i < n; ++i) {
        const double deg_i = static_cast<double>(neighbors[i].size());
        for (std::uint32_t j : neighbors[i]) {
            const double deg_j = static_cast<double>(neighbors[j].size());
            g.adj_index.push_back(j);
            g.norm_coeffs.push_back(1.0 / std::sqrt(deg_i * deg_j));
        }
    }
    return g;
}

// Block-diagonal composition: training over many windows is a single
// forward pass on the disjoint union (no inter-window edges by design).
inline FlowGraph disjoint_union(const std::vector<FlowGraph>& graphs) {
    if (graphs.empty()) throw WindowTooSmall("no graphs to merge");
    FlowGraph g;
    g.self_loops = graphs.front().self_loops;
    std::size_t total = 0, edges = 0;
    const Eigen::Index cols = graphs.front().node_features.cols();
    for (const auto& part : graphs) {
        if (part.node_features.cols() != cols)
            throw DimensionMismatch("mismatched feature dims in graph union");
        total += part.node_count;
        edges += part.adj_index.size();
    }
    g.node_count = total;
    g.node_features.resize(static_cast<Eigen::Index>(total), cols);
    g.adj_offsets.assign(total + 1, 0);
    g.adj_index.reserve(edges);
    g.norm_coeffs.reserve(edges);
    std::size_t base = 0;
    for (const auto& part : graphs) {
        g.node_features.middleRows(static_cast<Eigen::Index>(base),
                                   static_cast<Eigen::Index>(part.node_count)) = part.node_features;
        for (std::size_t i = 0; i < part.node_count; ++i) {
            g.adj_offsets[base + i + 1] = g.adj_offsets[base + i] + part.degree(i);
            for (std::size_t k = part.adj_offsets[i]; k < part.adj_offsets[i + 1]; ++k) {
                g.adj_index.push_back(static_cast<std::uint32_t>(part.adj_index[k] + base));
                g.norm_coeffs.push_back(part.norm_coeffs[k]);
            }
        }
        for (std::uint32_t iso : part.isolated_nodes)
            g.isolated_nodes.push_back(static_cast<std::uint32_t>(iso + base));
        base += part.node_count;
    }
    return g;
}

// Edge list "i j coeff" plus a node-feature CSV, for outside inspection.
inline void dump_graph(const FlowGraph& g, std::ostream& edges_out, std::ostream& features_out) {
    edges_out << "# flowstage.graph-edges.v1\n";
    for (std::size_t i = 0; i < g.node_count; ++i)
        for (std::size_t k = g.adj_offsets[i]; k < g.adj_offsets[i + 1]; ++k)
            edges_out << i << ' ' << g.adj_index[k] << ' ' << format_double(g.norm_coeffs[k])
                      << '\n';
    for (std::uint32_t iso : g.isolated_nodes) edges_out << "# isolated " << iso << '\n';

    features_out << "# flowstage.graph-features.v1\n";
    for (std::size_t i = 0; i < g.node_count; ++i) {
        for (Eigen::Index j = 0; j < g.node_features.cols(); ++j) {
            if (j) features_out << ',';
            features_out << format_double(g.node_features(static_cast<Eigen::Index>(i), j));
        }
        features_out << '\n';
    }
}

}  // namespace flowstage
