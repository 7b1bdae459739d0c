#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "flowstage/graph.hpp"
#include "helpers.hpp"

using namespace flowstage;

namespace {

Matrix unit_features(std::size_t n) { return Matrix::Ones(static_cast<Eigen::Index>(n), 1); }

// O(N^2) endpoint-intersection oracle, independent of the bucketed path.
std::set<std::pair<std::size_t, std::size_t>> brute_force_edges(const LabeledDataset& ds,
                                                                const Window& w) {
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = w.begin; i < w.end; ++i)
        for (std::size_t j = i + 1; j < w.end; ++j) {
            const auto& a = ds.flows[i];
            const auto& b = ds.flows[j];
            const bool share = a.src_ip == b.src_ip || a.src_ip == b.dst_ip ||
                               a.dst_ip == b.src_ip || a.dst_ip == b.dst_ip;
            if (share) edges.insert({i - w.begin, j - w.begin});
        }
    return edges;
}

std::set<std::pair<std::size_t, std::size_t>> graph_edges(const FlowGraph& g) {
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < g.node_count; ++i)
        for (std::size_t k = g.adj_offsets[i]; k < g.adj_offsets[i + 1]; ++k) {
            const std::size_t j = g.adj_index[k];
            if (i < j) edges.insert({i, j});
        }
    return edges;
}

}  // namespace

TEST_CASE("window_flows tiles the dataset") {
    auto ws = window_flows(10, 4, 4);
    REQUIRE(ws.size() == 3);
    CHECK((ws[0].begin == 0 && ws[0].end == 4));
    CHECK((ws[1].begin == 4 && ws[1].end == 8));
    CHECK((ws[2].begin == 8 && ws[2].end == 10));

    ws = window_flows(4, 8, 8);
    REQUIRE(ws.size() == 1);
    CHECK((ws[0].begin == 0 && ws[0].end == 4));

    // stride < window: hand-enumerated against the stride rule
    ws = window_flows(5, 4, 2);
    REQUIRE(ws.size() == 2);
    CHECK((ws[0].begin == 0 && ws[0].end == 4));
    CHECK((ws[1].begin == 2 && ws[1].end == 5));

    CHECK_THROWS_AS(window_flows(5, 1, 1), InvalidConfig);
    CHECK_THROWS_AS(window_flows(5, 4, 5), InvalidConfig);
}

TEST_CASE("build_flow_graph connects flows sharing an endpoint") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b"),
                                      testutil::make_flow(2, "b", "c"),
                                      testutil::make_flow(3, "d", "e")});
    const Window w{0, 3};
    const auto g = build_flow_graph(ds, w, unit_features(3), /*self_loops=*/false);
    CHECK(g.has_edge(0, 1));
    CHECK(g.has_edge(1, 0));
    CHECK_FALSE(g.has_edge(0, 2));
    CHECK_FALSE(g.has_edge(1, 2));
    CHECK(g.degree(2) == 0);
    REQUIRE(g.isolated_nodes.size() == 1);
    CHECK(g.isolated_nodes[0] == 2);
    // both endpoints degree 1
    CHECK(g.coeff(0, 1) == 1.0);
}

TEST_CASE("self-loops change degrees and coefficients") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b"),
                                      testutil::make_flow(2, "b", "c")});
    const auto g = build_flow_graph(ds, Window{0, 2}, unit_features(2), /*self_loops=*/true);
    CHECK(g.degree(0) == 2);
    CHECK(g.coeff(0, 1) == 0.5);
    CHECK(g.coeff(0, 0) == 0.5);
    CHECK(g.coeff(1, 1) == 0.5);
    CHECK(g.isolated_nodes.empty());
}

TEST_CASE("bucketed construction equals the all-pairs oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 20 + uniform_index(rng, 180);
        auto ds = testutil::random_flows(rng, n, 3 + static_cast<int>(uniform_index(rng, 12)));
        const Window w{0, n};
        const auto g = build_flow_graph(ds, w, unit_features(n), false);
        CHECK(graph_edges(g) == brute_force_edges(ds, w));
    }
}

TEST_CASE("adjacency is symmetric with symmetric coefficients") {
    Rng rng(7);
    auto ds = testutil::random_flows(rng, 120, 6);
    const auto g = build_flow_graph(ds, Window{0, 120}, unit_features(120), true);
    for (std::size_t i = 0; i < g.node_count; ++i)
        for (std::size_t k = g.adj_offsets[i]; k < g.adj_offsets[i + 1]; ++k) {
            const std::size_t j = g.adj_index[k];
            CHECK(g.has_edge(j, i));
            CHECK(g.coeff(j, i) == g.norm_coeffs[k]);
        }
}

TEST_CASE("normalization identity: sum_j coeff(i,j) sqrt(dj/di) = 1") {
    Rng rng(8);
    auto ds = testutil::random_flows(rng, 150, 8);
    for (bool loops : {false, true}) {
        const auto g = build_flow_graph(ds, Window{0, 150}, unit_features(150), loops);
        for (std::size_t i = 0; i < g.node_count; ++i) {
            if (g.degree(i) == 0) continue;
            const double di = static_cast<double>(g.degree(i));
            double sum = 0.0;
            for (std::size_t k = g.adj_offsets[i]; k < g.adj_offsets[i + 1]; ++k) {
                const double dj = static_cast<double>(g.degree(g.adj_index[k]));
                sum += g.norm_coeffs[k] * std::sqrt(dj / di);
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("window sharing one IP forms a clique") {
    std::vector<FlowRecord> flows;
    for (int i = 0; i < 12; ++i)
        flows.push_back(testutil::make_flow(i, "hub", "peer" + std::to_string(i)));
    auto ds = testutil::make_dataset(std::move(flows));
    const auto g = build_flow_graph(ds, Window{0, 12}, unit_features(12), false);
    for (std::size_t i = 0; i < 12; ++i) CHECK(g.degree(i) == 11);
}

TEST_CASE("permuting flows yields an isomorphic graph with equal coefficients") {
    Rng rng(31);
    auto ds = testutil::random_flows(rng, 60, 5);
    const auto g = build_flow_graph(ds, Window{0, 60}, unit_features(60), true);

    std::vector<std::size_t> perm(60);
    for (std::size_t i = 0; i < 60; ++i) perm[i] = i;
    for (std::size_t i = 60; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
    std::vector<FlowRecord> shuffled(60);
    for (std::size_t i = 0; i < 60; ++i) {
        shuffled[perm[i]] = ds.flows[i];
        shuffled[perm[i]].timestamp = static_cast<double>(perm[i]);  // keep sort stable
    }
    auto ds2 = testutil::make_dataset(std::move(shuffled));
    const auto g2 = build_flow_graph(ds2, Window{0, 60}, unit_features(60), true);

    for (std::size_t i = 0; i < 60; ++i) {
        CHECK(g.degree(i) == g2.degree(perm[i]));
        for (std::size_t k = g.adj_offsets[i]; k < g.adj_offsets[i + 1]; ++k) {
            const std::size_t j = g.adj_index[k];
            CHECK(g2.has_edge(perm[i], perm[j]));
            CHECK(g2.coeff(perm[i], perm[j]) == g.norm_coeffs[k]);
        }
    }
}

TEST_CASE("per-IP bucket cap triggers an error instead of subsampling") {
    std::vector<FlowRecord> flows;
    for (std::size_t i = 0; i < kIpBucketCap + 1; ++i)
        flows.push_back(testutil::make_flow(static_cast<double>(i), "hub",
                                            "peer" + std::to_string(i)));
    auto ds = testutil::make_dataset(std::move(flows));
    CHECK_THROWS_AS(
        build_flow_graph(ds, Window{0, ds.size()}, unit_features(ds.size()), false),
        BucketOverflow);
}

TEST_CASE("empty window is rejected") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b")});
    CHECK_THROWS_AS(build_flow_graph(ds, Window{0, 0}, Matrix(0, 1), false), WindowTooSmall);
    CHECK_THROWS_AS(build_flow_graph(ds, Window{0, 1}, Matrix(2, 1), false), DimensionMismatch);
}

TEST_CASE("disjoint_union stacks graphs block-diagonally") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b"),
                                      testutil::make_flow(2, "a", "c"),
                                      testutil::make_flow(3, "x", "y"),
                                      testutil::make_flow(4, "y", "z")});
    Matrix f1(2, 1), f2(2, 1);
    f1 << 1, 2;
    f2 << 3, 4;
    const auto g1 = build_flow_graph(ds, Window{0, 2}, f1, true, 0);
    const auto g2 = build_flow_graph(ds, Window{2, 4}, f2, true, 1);
    const auto u = disjoint_union({g1, g2});
    REQUIRE(u.node_count == 4);
    CHECK(u.node_features(2, 0) == 3.0);
    CHECK(u.has_edge(0, 1));
    CHECK(u.has_edge(2, 3));
    CHECK_FALSE(u.has_edge(1, 2));
    CHECK(u.coeff(2, 3) == g2.coeff(0, 1));
}

TEST_CASE("graph dump emits versioned edge and feature files") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b"),
                                      testutil::make_flow(2, "b", "c")});
    const auto g = build_flow_graph(ds, Window{0, 2}, unit_features(2), false);
    std::ostringstream edges, feats;
    dump_graph(g, edges, feats);
    CHECK(edges.str().rfind("# flowstage.graph-edges.v1\n", 0) == 0);
    CHECK(feats.str().rfind("# flowstage.graph-features.v1\n", 0) == 0);
    CHECK(edges.str().find("0 1 1") != std::string::npos);
}
