#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "sgcn/grid_graph.hpp"
#include "test_support.hpp"

namespace sgcn {
namespace {

GridGraph graph_from_edges(Index n, const std::vector<std::tuple<Index, Index, double>>& edges) {
    GridGraph g;
    for (Index i = 0; i < n; ++i) g.coords.push_back({static_cast<double>(i), 0.0});
    g.adjacency = detail::symmetric_from_pairs(n, edges);
    return g;
}

GridGraph path_graph(Index n) {
    std::vector<std::tuple<Index, Index, double>> e;
    for (Index i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1, 1.0);
    return graph_from_edges(n, e);
}

GridGraph cycle_graph(Index n) {
    std::vector<std::tuple<Index, Index, double>> e;
    for (Index i = 0; i < n; ++i) e.emplace_back(std::min(i, (i + 1) % n), std::max(i, (i + 1) % n), 1.0);
    return graph_from_edges(n, e);
}

SparseMatrix triangle_laplacian() {
    return normalized_laplacian(graph_from_edges(3, {{0, 1, 1.0}, {0, 2, 1.0}, {1, 2, 1.0}}).adjacency);
}

std::vector<std::pair<double, double>> grid_points(int h, int w) {
    std::vector<std::pair<double, double>> pts;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) pts.emplace_back(c, r);
    return pts;
}

std::vector<Coord> to_coords(const std::vector<std::pair<double, double>>& pts) {
    std::vector<Coord> out;
    for (auto [x, y] : pts) out.push_back({x, y});
    return out;
}

// --- compute_sigma -----------------------------------------------------------

TEST(ComputeSigma, UnitSquare) {
    EXPECT_NEAR(compute_sigma(to_coords(grid_points(2, 2))), std::sqrt(2.0), 1e-15);
}

TEST(ComputeSigma, TwoPoints) {
    const std::vector<Coord> pts{{0, 0}, {0, 3}};
    EXPECT_DOUBLE_EQ(compute_sigma(pts), 3.0);
}

TEST(ComputeSigma, ThreeByThreeMatchesBruteForce) {
    const auto pts = grid_points(3, 3);
    const double oracle = testing::brute_sigma(pts);
    // corners reach 2*sqrt(2), edge midpoints sqrt(5), the centre sqrt(2)
    EXPECT_NEAR(oracle, (4 * 2 * std::sqrt(2.0) + 4 * std::sqrt(5.0) + std::sqrt(2.0)) / 9.0, 1e-14);
    EXPECT_NEAR(compute_sigma(to_coords(pts)), oracle, 1e-14);
}

TEST(ComputeSigma, RejectsSingleVertex) {
    const std::vector<Coord> pts{{1, 1}};
    EXPECT_THROW(compute_sigma(pts), InvalidInput);
}


// --- build_stochastic_graph --------------------------------------------------

TEST(BuildGraph, FiveByFiveCentreHas24PotentialNeighbours) {
    // brute-force count of offsets inside the 5x5 window with dx^2 + dy^2 <= 8
    int potential = 0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx)
            if ((dx || dy) && dx * dx + dy * dy <= 8) ++potential;
    ASSERT_EQ(potential, 24);

    const GraphParams params{8, 2, 2.0 * std::sqrt(2.0), 7};
    const auto sel = select_neighbors(5, 5, params);
    const auto& centre = sel[12];
    ASSERT_EQ(centre.size(), 10u);
    std::set<std::uint32_t> fixed(centre.begin(), centre.begin() + 8);
    // the 8 nearest are the 3x3 ring
    for (std::uint32_t v : {6u, 7u, 8u, 11u, 13u, 16u, 17u, 18u}) EXPECT_TRUE(fixed.count(v)) << v;
    for (std::size_t k = 8; k < 10; ++k) {
        const int r = static_cast<int>(centre[k]) / 5, c = static_cast<int>(centre[k]) % 5;
        EXPECT_TRUE(std::max(std::abs(r - 2), std::abs(c - 2)) == 2) << "stochastic pick outside ring 2";
    }
    EXPECT_NE(centre[8], centre[9]);
}

TEST(BuildGraph, FourNearestNeighbourGrid) {
    const auto g = build_stochastic_graph(6, 7, {4, 0, 1.0, 123});
    EXPECT_EQ(g.repair_edges, 0);
    for (Index r = 0; r < 6; ++r)
        for (Index c = 0; c < 7; ++c) {
            const Index i = r * 7 + c;
            std::set<Index> expect;
            if (r > 0) expect.insert(i - 7);
            if (r < 5) expect.insert(i + 7);
            if (c > 0) expect.insert(i - 1);
            if (c < 6) expect.insert(i + 1);
            std::set<Index> got;
            for (SparseMatrix::InnerIterator it(g.adjacency, i); it; ++it) got.insert(it.col());
            EXPECT_EQ(got, expect) << "vertex " << i;
        }
    // interior vertices have exactly 4 edges
    EXPECT_EQ(g.adjacency.row(2 * 7 + 3).nonZeros(), 4);
}

TEST(BuildGraph, SingleEdge) {
    const auto g = build_stochastic_graph(1, 2, {1, 0, 1.0, 0});
    EXPECT_DOUBLE_EQ(g.sigma, 1.0);
    ASSERT_EQ(g.adjacency.nonZeros(), 2);
    EXPECT_DOUBLE_EQ(g.adjacency.coeff(0, 1), std::exp(-1.0));
    EXPECT_DOUBLE_EQ(g.adjacency.coeff(1, 0), std::exp(-1.0));
}

TEST(BuildGraph, Errors) {
    EXPECT_THROW(build_stochastic_graph(1, 1, {1, 0, 1.0, 0}), InvalidInput);
    EXPECT_THROW(build_stochastic_graph(4, 4, {1, 0, 0.5, 0}), DisconnectedGraph);
    EXPECT_THROW(build_stochastic_graph(4, 4, {0, 0, 1.0, 0}), InvalidConfig);
    EXPECT_THROW(build_stochastic_graph(4, 4, {1, 0, -1.0, 0}), InvalidConfig);
}

TEST(BuildGraph, DisconnectedSelectionIsRepaired) {
    // a single random neighbour per vertex leaves several components
    const auto g = build_stochastic_graph(6, 6, {0, 1, 1.0, 0});
    EXPECT_GT(g.repair_edges, 0);
    EXPECT_TRUE(is_connected(g.adjacency));
    for (const auto& [s, d, w] : g.edge_list()) {
        EXPECT_LE(std::sqrt(squared_distance(g.coords[s], g.coords[d])), 1.0 + 1e-12);
        EXPECT_NEAR(w, kernel_weight(g.coords[s], g.coords[d], g.sigma), 1e-15);
    }
}

// Random (p, q, T, seed) grids: selection counts, weight law, symmetry, bounds.
TEST(BuildGraph, GraphLawProperties) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> side(2, 10), pp(0, 12), qq(0, 8);
    std::uniform_real_distribution<double> tt(1.0, 4.0);
    for (int trial = 0; trial < 60; ++trial) {
        const int h = side(rng), w = side(rng);
        GraphParams params{static_cast<std::uint32_t>(pp(rng)), static_cast<std::uint32_t>(qq(rng)), tt(rng), rng()};
        if (params.p + params.q == 0) params.p = 1;
        const auto sel = select_neighbors(h, w, params);
        for (int i = 0; i < h * w; ++i) {
            int potential = 0;
            for (int j = 0; j < h * w; ++j) {
                const double d = std::hypot(i % w - j % w, i / w - j / w);
                if (j != i && d <= params.threshold + 1e-12) ++potential;
            }
            const std::size_t expected = std::min<std::size_t>(params.p, potential) +
                                         std::min<std::size_t>(params.q, std::max(0, potential - static_cast<int>(params.p)));
            EXPECT_EQ(sel[i].size(), expected);
            EXPECT_EQ(std::set<std::uint32_t>(sel[i].begin(), sel[i].end()).size(), sel[i].size());
        }
        const auto g = build_stochastic_graph(h, w, params);
        EXPECT_TRUE(is_connected(g.adjacency));
        for (Index r = 0; r < g.adjacency.outerSize(); ++r)
            for (SparseMatrix::InnerIterator it(g.adjacency, r); it; ++it) {
                EXPECT_NE(r, it.col());
                EXPECT_EQ(it.value(), g.adjacency.coeff(it.col(), r));
                const auto& a = g.coords[r];
                const auto& b = g.coords[it.col()];
                EXPECT_LT(std::abs(it.value() - std::exp(-squared_distance(a, b) / (g.sigma * g.sigma))), 1e-12);
                EXPECT_GT(it.value(), 0.0);
                EXPECT_LE(it.value(), 1.0);
                EXPECT_LE(std::sqrt(squared_distance(a, b)), params.threshold + 1e-12);
            }
    }
}

TEST(BuildGraph, SeedDeterminism) {
    const GraphParams params{8, 2, 2.0 * std::sqrt(2.0), 99};
    const auto a = build_stochastic_graph(10, 10, params);
    const auto b = build_stochastic_graph(10, 10, params);
    EXPECT_EQ(serialize_graph(a), serialize_graph(b));

    int differing = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto other = params;
        other.seed = seed + 1000;
        if (serialize_graph(build_stochastic_graph(10, 10, other)) != serialize_graph(a)) ++differing;
    }
    EXPECT_GE(differing, 1);
}

TEST(BuildGraph, NoStochasticPartIsSeedIndependent) {
    const auto a = build_stochastic_graph(8, 9, {6, 0, 2.5, 1});
    auto b = build_stochastic_graph(8, 9, {6, 0, 2.5, 987654});
    b.params.seed = 1;
    EXPECT_EQ(serialize_graph(a), serialize_graph(b));
}

// --- Laplacians --------------------------------------------------------------

TEST(Laplacian, SingleEdge) {
    for (double w : {0.1, 1.0, 7.5}) {
        const auto lap = normalized_laplacian(graph_from_edges(2, {{0, 1, w}}).adjacency);
        EXPECT_NEAR(lap.coeff(0, 0), 1.0, 1e-15);
        EXPECT_NEAR(lap.coeff(1, 1), 1.0, 1e-15);
        EXPECT_NEAR(lap.coeff(0, 1), -1.0, 1e-15);
        EXPECT_NEAR(lap.coeff(1, 0), -1.0, 1e-15);
    }
}

TEST(Laplacian, TriangleSpectrum) {
    const auto ev = testing::dense_eigenvalues(triangle_laplacian());
    EXPECT_NEAR(ev[0], 0.0, 1e-12);
    EXPECT_NEAR(ev[1], 1.5, 1e-12);
    EXPECT_NEAR(ev[2], 1.5, 1e-12);
}

TEST(Laplacian, FourNeighbourGridNullVector) {
    const auto g = build_stochastic_graph(3, 3, {4, 0, 1.0, 0});
    const auto lap = normalized_laplacian(g);
    const Eigen::MatrixXd dense(lap);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
    EXPECT_NEAR(solver.eigenvalues()[0], 0.0, 1e-12);
    Eigen::VectorXd d(9);
    for (Index i = 0; i < 9; ++i) d[i] = std::sqrt(Eigen::MatrixXd(g.adjacency).row(i).sum());
    const Eigen::VectorXd v = solver.eigenvectors().col(0);
    EXPECT_NEAR(std::abs(v.dot(d.normalized())), 1.0, 1e-10);
}

TEST(Laplacian, ZeroDegreeIsDegenerate) {
    EXPECT_THROW(normalized_laplacian(graph_from_edges(3, {{0, 1, 1.0}}).adjacency), DegenerateGraph);
}

TEST(LambdaMax, Examples) {
    const auto edge = normalized_laplacian(graph_from_edges(2, {{0, 1, 1.0}}).adjacency);
    EXPECT_NEAR(estimate_lambda_max(edge).value, 2.0, 1e-6);
    EXPECT_NEAR(estimate_lambda_max(triangle_laplacian()).value, 1.5, 1e-6);
    SparseMatrix eye(5, 5);
    eye.setIdentity();
    const auto est = estimate_lambda_max(eye);
    EXPECT_TRUE(est.converged);
    EXPECT_NEAR(est.value, 1.0, 1e-12);
}

TEST(LambdaMax, FallsBackToBoundWithoutConvergence) {
    const auto g = build_stochastic_graph(10, 10, {8, 2, 2.0 * std::sqrt(2.0), 3});
    const auto est = estimate_lambda_max(normalized_laplacian(g), 1e-14, 3);
    EXPECT_FALSE(est.converged);
    EXPECT_EQ(est.value, 2.0);
}

TEST(ScaleLaplacian, Examples) {
    const auto edge = normalized_laplacian(graph_from_edges(2, {{0, 1, 1.0}}).adjacency);
    const auto s = scale_laplacian(edge, 2.0);
    EXPECT_NEAR(s.matrix.coeff(0, 0), 0.0, 1e-15);
    EXPECT_NEAR(s.matrix.coeff(0, 1), -1.0, 1e-15);

    SparseMatrix eye(3, 3);
    eye.setIdentity();
    EXPECT_NEAR((Eigen::MatrixXd(scale_laplacian(eye, 1.0).matrix) - Eigen::MatrixXd::Identity(3, 3)).norm(), 0, 1e-15);

    const auto ev = testing::dense_eigenvalues(scale_laplacian(triangle_laplacian(), 1.5).matrix);
    EXPECT_NEAR(ev[0], -1.0, 1e-12);
    EXPECT_NEAR(ev[1], 1.0, 1e-12);
    EXPECT_NEAR(ev[2], 1.0, 1e-12);

    EXPECT_THROW(scale_laplacian(eye, 0.0), InvalidInput);
    EXPECT_THROW(scale_laplacian(eye, -1.0), InvalidInput);
}

TEST(Laplacian, SpectralBoundsOnRandomGraphs) {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> side(2, 10), pp(1, 10), qq(0, 6);
    std::uniform_real_distribution<double> tt(1.0, 3.5);
    for (int trial = 0; trial < 40; ++trial) {
        const GraphParams params{static_cast<std::uint32_t>(pp(rng)), static_cast<std::uint32_t>(qq(rng)), tt(rng), rng()};
        const auto g = build_stochastic_graph(side(rng), side(rng), params);
        const auto lap = normalized_laplacian(g);
        const auto ev = testing::dense_eigenvalues(lap);
        EXPECT_GE(ev.minCoeff(), -1e-9);
        EXPECT_LE(ev.maxCoeff(), 2.0 + 1e-9);
        const auto est = estimate_lambda_max(lap);
        if (est.converged) {
            EXPECT_NEAR(est.value, ev.maxCoeff(), 1e-6 * ev.maxCoeff() + 1e-12);
        }
        const auto sev = testing::dense_eigenvalues(scale_laplacian(lap, est.value).matrix);
        EXPECT_GE(sev.minCoeff(), -1.0 - 1e-9);
        EXPECT_LE(sev.maxCoeff(), 1.0 + 1e-9);
    }
}

// --- coarsening --------------------------------------------------------------

TEST(Coarsen, PathOfFour) {
    const auto h = coarsen(path_graph(4), 1);
    ASSERT_EQ(h.n_levels(), 2);
    EXPECT_EQ(h.levels[1].graph.n_vertices(), 2);
    const auto& parent = h.levels[0].parent;
    EXPECT_EQ(parent[0], parent[1]);
    EXPECT_EQ(parent[2], parent[3]);
    EXPECT_NE(parent[0], parent[2]);
    EXPECT_EQ(h.levels[0].padded_size(), 4);
}

TEST(Coarsen, ZeroLevelsIsIdentity) {
    const auto g = build_stochastic_graph(4, 4, {4, 0, 1.0, 0});
    const auto h = coarsen(g, 0);
    ASSERT_EQ(h.n_levels(), 1);
    EXPECT_EQ(serialize_graph(h.levels[0].graph), serialize_graph(g));
    EXPECT_EQ(h.input_permutation().size(), 16u);
}

TEST(Coarsen, EightCycleTwoLevels) {
    const auto h = coarsen(cycle_graph(8), 2);
    ASSERT_EQ(h.n_levels(), 3);
    EXPECT_EQ(h.levels[1].graph.n_vertices(), 4);
    EXPECT_EQ(h.levels[2].graph.n_vertices(), 2);
    // exhaustive check: every level-2 vertex holds exactly 4 consecutive cycle vertices
    std::vector<std::vector<Index>> groups(2);
    for (Index v = 0; v < 8; ++v) groups[h.levels[1].parent[h.levels[0].parent[v]]].push_back(v);
    for (const auto& grp : groups) {
        ASSERT_EQ(grp.size(), 4u);
        int adjacent = 0;
        for (Index a : grp)
            for (Index b : grp) adjacent += ((a + 1) % 8 == b);
        EXPECT_EQ(adjacent, 3);
    }
}

TEST(Coarsen, TooManyLevels) {
    EXPECT_THROW(coarsen(path_graph(4), 3), InvalidConfig);
}

TEST(Coarsen, HierarchyInvariants) {
    const auto g = build_stochastic_graph(12, 11, {8, 2, 2.0 * std::sqrt(2.0), 5});
    const auto h = coarsen(g, 4);
    ASSERT_EQ(h.n_levels(), 5);
    auto total_weight = [](const SparseMatrix& a) { return a.sum() / 2.0; };
    for (Index l = 0; l + 1 < h.n_levels(); ++l) {
        const auto& fine = h.levels[l];
        const auto& coarse = h.levels[l + 1];
        EXPECT_EQ(fine.padded_size(), 2 * coarse.padded_size());
        EXPECT_LE(total_weight(coarse.graph.adjacency), total_weight(fine.graph.adjacency) + 1e-12);
        EXPECT_GE(coarse.graph.n_vertices(), (fine.graph.n_vertices() + 1) / 2);
        // contiguous pairs of padded positions pool into their parent's position
        for (Index pos = 0; pos < fine.padded_size(); ++pos) {
            const Index v = fine.order[pos];
            const Index cpos = pos / 2;
            if (v < 0) continue;
            EXPECT_EQ(coarse.order[cpos], fine.parent[v]);
        }
        // each real vertex appears exactly once in the padded order
        std::multiset<Index> seen(fine.order.begin(), fine.order.end());
        for (Index v = 0; v < fine.graph.n_vertices(); ++v) EXPECT_EQ(seen.count(v), 1u);
        // fake vertices carry no Laplacian weight
        for (Index pos = 0; pos < fine.padded_size(); ++pos)
            if (fine.is_fake(pos)) {
                EXPECT_EQ(fine.padded_laplacian.row(pos).nonZeros(), 0);
            }
        EXPECT_GT(coarse.graph.sigma, 0.0);
    }
    for (const auto& level : h.levels) {
        if (level.graph.n_vertices() < 2) continue;
        const auto ev = testing::dense_eigenvalues(level.laplacian.matrix);
        EXPECT_GE(ev.minCoeff(), -1.0 - 1e-9);
        EXPECT_LE(ev.maxCoeff(), 1.0 + 1e-9);
    }
    // deterministic
    const auto h2 = coarsen(g, 4);
    for (Index l = 0; l < h.n_levels(); ++l) EXPECT_EQ(h.levels[l].order, h2.levels[l].order);
}

// --- serialization -----------------------------------------------------------

TEST(GraphFile, RoundTrip) {
    const auto g = build_stochastic_graph(7, 5, {8, 2, 2.0 * std::sqrt(2.0), 11});
    const auto bytes = serialize_graph(g);
    ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SGCN");
    const auto edges = g.edge_list();
    EXPECT_EQ(bytes.size(), 4 + 2 + 8 + 4 + 4 + 8 + 8 + 8 + 8 + edges.size() * 16);
    const auto back = deserialize_graph(bytes, 5);
    EXPECT_EQ(back.n_vertices(), 35);
    EXPECT_EQ(back.params, g.params);
    EXPECT_EQ(back.sigma, g.sigma);
    EXPECT_EQ(back.coords, g.coords);
    EXPECT_EQ(serialize_graph(back), bytes);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_THROW(deserialize_graph(truncated, 5), FormatError);
}

}  // namespace
}  // namespace sgcn
