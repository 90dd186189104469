#pragma once

// Chebyshev spectral graph convolution with analytic gradients, plus the ReLU
// and graph max-pooling primitives placed between convolution layers.
//
// Batched signals are (batch * n) x channels matrices made of per-sample
// blocks of n consecutive rows (see sgcn::Matrix).

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sgcn/binary_io.hpp"
#include "sgcn/core.hpp"

namespace sgcn {

/// Y = sum_k T_k(L~) X W_k + b. Weights are a K x F_in x F_out tensor stored
/// as a (K * F_in) x F_out matrix; row k * F_in + f holds W_k[f, :].
/// A K = 1 layer ignores the Laplacian and is a plain affine map, which is how
/// fully connected layers are represented.
struct ChebLayer {
    int order = 1;
    Index in_channels = 1;
    Index out_channels = 1;
    Matrix weights;
    RowVector bias;
    bool use_bias = true;

    Index n_params() const noexcept { return weights.size() + bias.size(); }
};

inline ChebLayer make_cheb_layer(int order, Index in_channels, Index out_channels, std::mt19937_64& rng,
                                 bool use_bias = true) {
    require<InvalidConfig>(order >= 1, "cheb layer: order K must be >= 1");
    require<InvalidConfig>(in_channels >= 1 && out_channels >= 1, "cheb layer: channel counts must be >= 1");
    ChebLayer layer{order, in_channels, out_channels, Matrix(order * in_channels, out_channels),
                    RowVector::Zero(out_channels), use_bias};
    const double limit = std::sqrt(6.0 / static_cast<double>(order * in_channels + out_channels));
    std::uniform_real_distribution<double> unif(-limit, limit);
    for (Index i = 0; i < layer.weights.rows(); ++i)
        for (Index j = 0; j < layer.weights.cols(); ++j) layer.weights(i, j) = unif(rng);
    return layer;
}

/// Backward cache of one forward call.
struct ChebCache {
    const ChebLayer* layer = nullptr;
    const SparseMatrix* laplacian = nullptr;
    Index vertices = 0;
    Index batch = 0;
    Matrix basis;  // [T_0 X | T_1 X | ... | T_{K-1} X], (batch * n) x (K * F_in)
};

struct ChebGrads {
    Matrix input;    // (batch * n) x F_in
    Matrix weights;  // (K * F_in) x F_out
    RowVector bias;  // F_out
};

namespace detail {

/// out = alpha * L * in, applied to each sample block of n rows.
template <class Out, class In>
void apply_laplacian_blocks(const SparseMatrix& lap, Index n, Index batch, Out&& out, const In& in, double alpha) {
    for (Index s = 0; s < batch; ++s) {
        auto block = out.middleRows(s * n, n);
        block.noalias() = lap * in.middleRows(s * n, n);
        if (alpha != 1.0) block *= alpha;
    }
}

}  // namespace detail

/// Chebyshev basis [T_0 X | ... | T_{K-1} X] by the three-term recurrence;
/// T_k(L~) itself is never formed.
inline Matrix chebyshev_basis(const SparseMatrix* lap, const Matrix& x, Index n, int order) {
    const Index rows = x.rows();
    const Index f = x.cols();
    const Index batch = rows / n;
    Matrix basis(rows, order * f);
    basis.leftCols(f) = x;
    if (order == 1) return basis;

    Matrix prev2 = x;
    Matrix prev1(rows, f);
    detail::apply_laplacian_blocks(*lap, n, batch, prev1, x, 1.0);
    basis.middleCols(f, f) = prev1;
    Matrix next(rows, f);
    for (int k = 2; k < order; ++k) {
        detail::apply_laplacian_blocks(*lap, n, batch, next, prev1, 2.0);
        next -= prev2;
        basis.middleCols(k * f, f) = next;
        std::swap(prev2, prev1);
        std::swap(prev1, next);
    }
    return basis;
}

/// Forward pass over a batch of per-sample blocks of `lap.rows()` vertices.
/// `lap` may be null for K = 1 layers with n given by `vertices`.
inline Matrix cheb_forward(const SparseMatrix* lap, const Matrix& x, const ChebLayer& layer, ChebCache* cache = nullptr,
                           Index vertices = 0) {
    const Index n = lap ? lap->rows() : vertices;
    require(layer.order == 1 || lap != nullptr, "cheb_forward: Laplacian required for K > 1");
    require(n > 0 && x.rows() % n == 0, "cheb_forward: row count " + std::to_string(x.rows()) +
                                            " is not a multiple of the vertex count " + std::to_string(n));
    require(x.cols() == layer.in_channels, "cheb_forward: expected " + std::to_string(layer.in_channels) +
                                               " input channels, got " + std::to_string(x.cols()));
    require(layer.weights.rows() == layer.order * layer.in_channels && layer.weights.cols() == layer.out_channels,
            "cheb_forward: weight tensor shape mismatch");

    Matrix basis = chebyshev_basis(lap, x, n, layer.order);
    Matrix y = basis * layer.weights;
    if (layer.use_bias) y.rowwise() += layer.bias;
    if (cache) *cache = {&layer, lap, n, x.rows() / n, std::move(basis)};
    return y;
}

inline Matrix cheb_forward(const SparseMatrix& lap, const Matrix& x, const ChebLayer& layer,
                           ChebCache* cache = nullptr) {
    return cheb_forward(&lap, x, layer, cache);
}

/// Gradients of a forward call. Uses the symmetry of L~, so
/// dX = sum_k T_k(L~) dZ_k, evaluated by running the recurrence backwards.
inline ChebGrads cheb_backward(const ChebCache& cache, const ChebLayer& layer, const Matrix& grad_out) {
    if (cache.layer != &layer)
        throw ContractViolation("cheb_backward: cache was produced by a different layer");
    const Index rows = cache.vertices * cache.batch;
    if (grad_out.rows() != rows || grad_out.cols() != layer.out_channels ||
        cache.basis.rows() != rows || cache.basis.cols() != layer.order * layer.in_channels)
        throw ContractViolation("cheb_backward: cache does not match gradient shape");

    const Index f = layer.in_channels;
    ChebGrads g;
    g.weights.noalias() = cache.basis.transpose() * grad_out;
    g.bias = layer.use_bias ? RowVector(grad_out.colwise().sum()) : RowVector::Zero(layer.out_channels);

    Matrix adj = grad_out * layer.weights.transpose();  // dZ_k in column block k
    Matrix tmp(rows, f);
    for (int k = layer.order - 1; k >= 2; --k) {
        detail::apply_laplacian_blocks(*cache.laplacian, cache.vertices, cache.batch, tmp, adj.middleCols(k * f, f), 2.0);
        adj.middleCols((k - 1) * f, f) += tmp;
        adj.middleCols((k - 2) * f, f) -= adj.middleCols(k * f, f);
    }
    if (layer.order >= 2) {
        detail::apply_laplacian_blocks(*cache.laplacian, cache.vertices, cache.batch, tmp, adj.middleCols(f, f), 1.0);
        adj.leftCols(f) += tmp;
    }
    g.input = adj.leftCols(f);
    return g;
}

// -----------------------------------------------------------------------------
// ReLU
// -----------------------------------------------------------------------------

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

/// Subgradient at 0 is 0.
inline Matrix relu_backward(const Matrix& x, const Matrix& grad) {
    return (x.array() > 0.0).select(grad, 0.0);
}

// -----------------------------------------------------------------------------
// Graph max pooling
// -----------------------------------------------------------------------------

struct PoolCache {
    Index input_rows = 0;
    /// Winning input row per output entry, -1 when all children are fake.
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
};

/// Max over each run of `stride` contiguous vertices. `fake` flags padded
/// vertices of one sample block (length n, or empty); they never win, and a
/// group made only of fake vertices outputs 0. Ties go to the lowest child.
inline Matrix graph_max_pool(const Matrix& x, Index n, Index stride, std::span<const std::uint8_t> fake = {},
                             PoolCache* cache = nullptr) {
    require<InvalidConfig>(stride >= 1 && (stride & (stride - 1)) == 0,
                           "graph_max_pool: stride " + std::to_string(stride) + " is not a power of two");
    require(n > 0 && x.rows() % n == 0, "graph_max_pool: row count is not a multiple of n");
    require(n % stride == 0, "graph_max_pool: vertex count not divisible by stride");
    require(fake.empty() || static_cast<Index>(fake.size()) == n, "graph_max_pool: fake mask length mismatch");

    const Index batch = x.rows() / n;
    const Index out_n = n / stride;
    Matrix y(batch * out_n, x.cols());
    PoolCache local;
    auto& c = cache ? *cache : local;
    c.input_rows = x.rows();
    c.argmax.resize(y.rows(), y.cols());
    for (Index s = 0; s < batch; ++s)
        for (Index o = 0; o < out_n; ++o)
            for (Index ch = 0; ch < x.cols(); ++ch) {
                Index best = -1;
                double best_v = -std::numeric_limits<double>::infinity();
                for (Index k = 0; k < stride; ++k) {
                    const Index v = o * stride + k;
                    if (!fake.empty() && fake[static_cast<std::size_t>(v)]) continue;
                    const double val = x(s * n + v, ch);
                    if (best < 0 || val > best_v) {
                        best_v = val;
                        best = s * n + v;
                    }
                }
                y(s * out_n + o, ch) = best < 0 ? 0.0 : best_v;
                c.argmax(s * out_n + o, ch) = best;
            }
    return y;
}

inline Matrix graph_max_pool_backward(const PoolCache& cache, const Matrix& grad_out) {
    if (grad_out.rows() != cache.argmax.rows() || grad_out.cols() != cache.argmax.cols())
        throw ContractViolation("graph_max_pool_backward: cache does not match gradient shape");
    Matrix g = Matrix::Zero(cache.input_rows, grad_out.cols());
    for (Index r = 0; r < grad_out.rows(); ++r)
        for (Index ch = 0; ch < grad_out.cols(); ++ch) {
            const auto src = cache.argmax(r, ch);
            if (src >= 0) g(src, ch) += grad_out(r, ch);
        }
    return g;
}

// -----------------------------------------------------------------------------
// "SGCW" weight container
// -----------------------------------------------------------------------------

inline constexpr std::uint16_t kWeightFormatVersion = 1;

inline std::vector<char> serialize_weights(std::span<const ChebLayer* const> layers) {
    io::Writer w;
    w.magic("SGCW");
    w.put<std::uint16_t>(kWeightFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layers.size()));
    for (const ChebLayer* layer : layers) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(layer->order));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(layer->in_channels));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(layer->out_channels));
        for (Index i = 0; i < layer->weights.size(); ++i) w.put<double>(layer->weights.data()[i]);
        for (Index i = 0; i < layer->bias.size(); ++i) w.put<double>(layer->bias[i]);
    }
    return w.take();
}

/// Reads an SGCW block into `layers`, whose shapes must already match.
inline void deserialize_weights(const std::vector<char>& bytes, std::span<ChebLayer* const> layers) {
    io::Reader r(bytes);
    r.expect_magic("SGCW");
    const auto version = r.get<std::uint16_t>();
    if (version != kWeightFormatVersion) throw FormatError("unsupported SGCW version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    if (count != layers.size())
        throw FormatError("SGCW: expected " + std::to_string(layers.size()) + " layers, found " + std::to_string(count));
    for (ChebLayer* layer : layers) {
        const auto k = r.get<std::uint32_t>();
        const auto fin = r.get<std::uint32_t>();
        const auto fout = r.get<std::uint32_t>();
        if (static_cast<int>(k) != layer->order || fin != layer->in_channels || fout != layer->out_channels)
            throw FormatError("SGCW: layer shape mismatch");
        for (Index i = 0; i < layer->weights.size(); ++i) layer->weights.data()[i] = r.get<double>();
        for (Index i = 0; i < layer->bias.size(); ++i) layer->bias[i] = r.get<double>();
    }
    if (!r.at_end()) throw FormatError("SGCW: trailing bytes");
}

}  // namespace sgcn
