#include <gtest/gtest.h>

#include <random>

#include "sgcn/cheb_conv.hpp"
#include "sgcn/grid_graph.hpp"
#include "test_support.hpp"

namespace sgcn {
namespace {

using testing::numeric_gradient;
using testing::random_matrix;
using testing::relative_error;
using testing::random_scaled_laplacian;
using testing::dense_cheb_oracle;

ChebLayer random_layer(int k, Index fin, Index fout, std::mt19937_64& rng) {
    auto layer = make_cheb_layer(k, fin, fout, rng);
    layer.bias = random_matrix(1, fout, rng);
    return layer;
}

// --- forward -----------------------------------------------------------------

TEST(ChebForward, OrderOneIgnoresLaplacian) {
    std::mt19937_64 rng(1);
    const auto layer = random_layer(1, 3, 2, rng);
    const Matrix x = random_matrix(10, 3, rng);
    const auto l1 = random_scaled_laplacian(5, rng);
    const auto l2 = random_scaled_laplacian(5, rng);
    const Matrix expect = (x * layer.weights).rowwise() + layer.bias;
    EXPECT_LT((cheb_forward(l1, x, layer) - expect).norm(), 1e-14);
    EXPECT_LT((cheb_forward(l2, x, layer) - expect).norm(), 1e-14);
}

TEST(ChebForward, OrderTwoHandExample) {
    SparseMatrix l(2, 2);
    l.insert(0, 1) = -1.0;
    l.insert(1, 0) = -1.0;
    ChebLayer layer{2, 1, 1, Matrix::Ones(2, 1), RowVector::Zero(1), true};
    Matrix x(2, 1);
    x << 1, 0;
    const Matrix y = cheb_forward(l, x, layer);
    EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(y(1, 0), -1.0);
}

TEST(ChebForward, OrderFourOnEightCycle) {
    std::vector<std::tuple<Index, Index, double>> e;
    for (Index i = 0; i < 8; ++i) e.emplace_back(std::min(i, (i + 1) % 8), std::max(i, (i + 1) % 8), 1.0);
    const auto lap = scaled_laplacian_of(detail::symmetric_from_pairs(8, e)).matrix;
    std::mt19937_64 rng(4);
    const auto layer = random_layer(4, 3, 5, rng);
    const Matrix x = random_matrix(16, 3, rng);
    const Matrix oracle = dense_cheb_oracle(lap, x, layer);
    EXPECT_LT((cheb_forward(lap, x, layer) - oracle).norm() / oracle.norm(), 1e-10);
}

TEST(ChebForward, MatchesDenseOracleOnRandomGraphs) {
    std::mt19937_64 rng(2025);
    std::uniform_int_distribution<int> nn(2, 50), kk(1, 10), ff(1, 4), bb(1, 3);
    for (int trial = 0; trial < 30; ++trial) {
        const Index n = nn(rng);
        const auto lap = random_scaled_laplacian(n, rng);
        const auto layer = random_layer(kk(rng), ff(rng), ff(rng), rng);
        const Matrix x = random_matrix(n * bb(rng), layer.in_channels, rng);
        const Matrix oracle = dense_cheb_oracle(lap, x, layer);
        EXPECT_LT((cheb_forward(lap, x, layer) - oracle).norm() / oracle.norm(), 1e-10);
    }
}

TEST(ChebForward, ShapeErrors) {
    std::mt19937_64 rng(3);
    const auto lap = random_scaled_laplacian(4, rng);
    const auto layer = random_layer(3, 2, 2, rng);
    EXPECT_THROW(cheb_forward(lap, Matrix::Zero(5, 2), layer), InvalidInput);
    EXPECT_THROW(cheb_forward(lap, Matrix::Zero(4, 3), layer), InvalidInput);
}

TEST(ChebForward, OrderTwoIsOneHopLocal) {
    std::mt19937_64 rng(8);
    const auto g = build_stochastic_graph(6, 6, {8, 2, 2.0 * std::sqrt(2.0), 8});
    const auto lap = scaled_laplacian_of(g.adjacency).matrix;
    auto layer = random_layer(2, 1, 3, rng);
    layer.bias.setZero();
    for (Index v : {0, 14, 35}) {
        Matrix x = Matrix::Zero(36, 1);
        x(v, 0) = 1.0;
        const Matrix y = cheb_forward(lap, x, layer);
        for (Index u = 0; u < 36; ++u) {
            const bool in_hood = u == v || g.adjacency.coeff(u, v) != 0.0;
            if (!in_hood) {
                EXPECT_EQ(y.row(u).norm(), 0.0) << u;
            }
        }
    }
}

TEST(ChebForward, LinearInSignal) {
    std::mt19937_64 rng(9);
    const auto lap = random_scaled_laplacian(12, rng);
    const auto layer = random_layer(5, 2, 3, rng);
    const Matrix x1 = random_matrix(12, 2, rng), x2 = random_matrix(12, 2, rng);
    const double a = 1.7, b = -0.6;
    const Matrix lhs = cheb_forward(lap, a * x1 + b * x2, layer);
    Matrix rhs = a * cheb_forward(lap, x1, layer) + b * cheb_forward(lap, x2, layer);
    rhs.rowwise() -= (a + b - 1.0) * layer.bias;
    EXPECT_LT((lhs - rhs).norm(), 1e-12);
}

// --- backward ----------------------------------------------------------------

TEST(ChebBackward, OrderOneIsLinearLayer) {
    std::mt19937_64 rng(11);
    const auto lap = random_scaled_laplacian(4, rng);
    const auto layer = random_layer(1, 3, 2, rng);
    const Matrix x = random_matrix(8, 3, rng);
    ChebCache cache;
    cheb_forward(lap, x, layer, &cache);
    const Matrix g = random_matrix(8, 2, rng);
    const auto grads = cheb_backward(cache, layer, g);
    EXPECT_LT((grads.weights - x.transpose() * g).norm(), 1e-13);
    EXPECT_LT((grads.input - g * layer.weights.transpose()).norm(), 1e-13);
    EXPECT_LT((grads.bias - g.colwise().sum()).norm(), 1e-13);
}

TEST(ChebBackward, FiniteDifferences) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const Index n = 6;
        const auto lap = random_scaled_laplacian(n, rng);
        auto layer = random_layer(3 + trial % 4, 2, 3, rng);
        Matrix x = random_matrix(2 * n, 2, rng);
        const Matrix probe = random_matrix(2 * n, 3, rng);
        auto loss = [&] { return (cheb_forward(lap, x, layer).array() * probe.array()).sum(); };

        ChebCache cache;
        cheb_forward(lap, x, layer, &cache);
        const auto grads = cheb_backward(cache, layer, probe);
        EXPECT_LT(relative_error(grads.input, numeric_gradient(loss, x)), 1e-4);
        EXPECT_LT(relative_error(grads.weights, numeric_gradient(loss, layer.weights)), 1e-4);
        Matrix bias = layer.bias;
        auto bias_loss = [&] {
            layer.bias = bias.row(0);
            return loss();
        };
        EXPECT_LT(relative_error(grads.bias, numeric_gradient(bias_loss, bias)), 1e-4);
    }
}

TEST(ChebBackward, RejectsMismatchedCache) {
    std::mt19937_64 rng(13);
    const auto lap = random_scaled_laplacian(4, rng);
    const auto a = random_layer(2, 1, 1, rng);
    const auto b = random_layer(2, 1, 1, rng);
    ChebCache cache;
    cheb_forward(lap, Matrix::Ones(4, 1), a, &cache);
    EXPECT_THROW(cheb_backward(cache, b, Matrix::Ones(4, 1)), ContractViolation);
    EXPECT_THROW(cheb_backward(cache, a, Matrix::Ones(8, 1)), ContractViolation);
    EXPECT_THROW(cheb_backward(ChebCache{}, a, Matrix::Ones(4, 1)), ContractViolation);
}

// --- relu --------------------------------------------------------------------

TEST(Relu, Examples) {
    Matrix x(1, 3);
    x << -1, 0, 2;
    EXPECT_EQ(relu(x), (Matrix(1, 3) << 0, 0, 2).finished());
    EXPECT_EQ(relu_backward(x, Matrix::Ones(1, 3)), (Matrix(1, 3) << 0, 0, 1).finished());
}

TEST(Relu, FiniteDifferencesAwayFromZero) {
    std::mt19937_64 rng(14);
    Matrix x = random_matrix(5, 4, rng);
    for (Index i = 0; i < x.size(); ++i)
        if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.3;
    const Matrix probe = random_matrix(5, 4, rng);
    auto loss = [&] { return (relu(x).array() * probe.array()).sum(); };
    EXPECT_LT(relative_error(relu_backward(x, probe), numeric_gradient(loss, x)), 1e-8);
}

// --- pooling -----------------------------------------------------------------

TEST(GraphMaxPool, Examples) {
    Matrix x(4, 1);
    x << 5, 1, 3, 9;
    EXPECT_EQ(graph_max_pool(x, 4, 1), x);
    PoolCache cache;
    const Matrix y = graph_max_pool(x, 4, 2, {}, &cache);
    ASSERT_EQ(y.rows(), 2);
    EXPECT_EQ(y(0, 0), 5);
    EXPECT_EQ(y(1, 0), 9);
    EXPECT_EQ(cache.argmax(0, 0), 0);
    EXPECT_EQ(cache.argmax(1, 0), 3);
    EXPECT_THROW(graph_max_pool(x, 4, 3), InvalidConfig);
}

TEST(GraphMaxPool, FakeVerticesNeverWin) {
    Matrix x(4, 1);
    x << 5, 100, -3, 100;
    const std::vector<std::uint8_t> fake{0, 1, 1, 1};
    PoolCache cache;
    const Matrix y = graph_max_pool(x, 4, 2, fake, &cache);
    EXPECT_EQ(y(0, 0), 5);
    EXPECT_EQ(y(1, 0), 0);
    EXPECT_EQ(cache.argmax(1, 0), -1);
    const Matrix g = graph_max_pool_backward(cache, Matrix::Ones(2, 1));
    EXPECT_EQ(g, (Matrix(4, 1) << 1, 0, 0, 0).finished());
}

TEST(GraphMaxPool, TiesGoToLowestChild) {
    Matrix x(2, 1);
    x << 2, 2;
    PoolCache cache;
    graph_max_pool(x, 2, 2, {}, &cache);
    EXPECT_EQ(cache.argmax(0, 0), 0);
}

TEST(GraphMaxPool, BackwardFiniteDifferences) {
    std::mt19937_64 rng(15);
    Matrix x = random_matrix(16, 3, rng);  // two samples of 8 vertices, distinct values
    const Matrix probe = random_matrix(4, 3, rng);
    auto loss = [&] { return (graph_max_pool(x, 8, 4).array() * probe.array()).sum(); };
    PoolCache cache;
    graph_max_pool(x, 8, 4, {}, &cache);
    EXPECT_LT(relative_error(graph_max_pool_backward(cache, probe), numeric_gradient(loss, x)), 1e-8);
}

// --- SGCW --------------------------------------------------------------------

TEST(WeightFile, RoundTrip) {
    std::mt19937_64 rng(16);
    auto a = random_layer(9, 1, 4, rng);
    auto b = random_layer(1, 8, 3, rng);
    const std::vector<const ChebLayer*> layers{&a, &b};
    const auto bytes = serialize_weights(layers);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SGCW");
    EXPECT_EQ(bytes.size(), 4u + 2 + 4 + 2 * 12 + 8 * (36 + 4 + 24 + 3));

    auto a2 = make_cheb_layer(9, 1, 4, rng);
    auto b2 = make_cheb_layer(1, 8, 3, rng);
    const std::vector<ChebLayer*> out{&a2, &b2};
    deserialize_weights(bytes, out);
    EXPECT_EQ(a2.weights, a.weights);
    EXPECT_EQ(b2.bias, b.bias);

    auto wrong = make_cheb_layer(2, 1, 4, rng);
    const std::vector<ChebLayer*> bad{&wrong, &b2};
    EXPECT_THROW(deserialize_weights(bytes, bad), FormatError);
}

}  // namespace
}  // namespace sgcn
