#pragma once

// SGCN stacks, the dual (two-graph) feature extractor and the fusion head that
// classifies a video from its spatial and temporal feature rows.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sgcn/cheb_conv.hpp"
#include "sgcn/core.hpp"
#include "sgcn/grid_graph.hpp"

namespace sgcn {

struct LayerSpec {
    int order = 1;             // K
    Index channels = 1;        // d
    int pool_levels = 0;       // s: pooling stride 2^s
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct SgcnConfig {
    std::vector<LayerSpec> layers{{9, 32, 2}, {9, 32, 2}, {6, 64, 1}, {6, 64, 1}, {4, 128, 1}, {4, 128, 1}};
    Index fc_width = 512;
    double dropout = 0.5;
    bool use_bias = true;

    int total_levels() const {
        int s = 0;
        for (const auto& l : layers) s += l.pool_levels;
        return s;
    }

    void validate() const {
        require<InvalidConfig>(!layers.empty(), "sgcn config: at least one layer required");
        for (const auto& l : layers) {
            require<InvalidConfig>(l.order >= 1 && l.channels >= 1, "sgcn config: K and d must be >= 1");
            require<InvalidConfig>(l.pool_levels >= 0 && l.pool_levels < 30, "sgcn config: s must be >= 0");
        }
        require<InvalidConfig>(fc_width >= 1, "sgcn config: fc width must be >= 1");
        require<InvalidConfig>(dropout >= 0.0 && dropout < 1.0, "sgcn config: dropout rate must be in [0, 1)");
    }

    friend bool operator==(const SgcnConfig&, const SgcnConfig&) = default;
};

// -----------------------------------------------------------------------------
// Dropout
// -----------------------------------------------------------------------------

/// Inverted-dropout mask: 0 with probability `rate`, else 1 / (1 - rate).
inline Matrix dropout_mask(Index rows, Index cols, double rate, std::uint64_t seed) {
    require<InvalidConfig>(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
    Matrix mask(rows, cols);
    if (rate == 0.0) {
        mask.setOnes();
        return mask;
    }
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
    return mask;
}

/// Training mode applies a fresh seeded mask (returned through `mask`); eval
/// mode is the identity.
inline Matrix dropout_forward(const Matrix& x, double rate, std::uint64_t seed, bool training, Matrix* mask = nullptr) {
    require<InvalidConfig>(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
    if (!training) {
        if (mask) mask->setOnes(x.rows(), x.cols());
        return x;
    }
    Matrix m = dropout_mask(x.rows(), x.cols(), rate, seed);
    Matrix y = x.cwiseProduct(m);
    if (mask) *mask = std::move(m);
    return y;
}

inline Matrix dropout_backward(const Matrix& mask, const Matrix& grad) { return grad.cwiseProduct(mask); }

// -----------------------------------------------------------------------------
// Gradients
// -----------------------------------------------------------------------------

struct LayerGrad {
    Matrix weights;
    RowVector bias;
};

inline LayerGrad zero_grad(const ChebLayer& layer) {
    return {Matrix::Zero(layer.weights.rows(), layer.weights.cols()), RowVector::Zero(layer.bias.size())};
}

inline void accumulate(LayerGrad& acc, const ChebGrads& g) {
    acc.weights += g.weights;
    acc.bias += g.bias;
}

// -----------------------------------------------------------------------------
// SGCN stack
// -----------------------------------------------------------------------------

/// One graph-convolution stack: Chebyshev layers with ReLU and pooling over a
/// fixed coarsening hierarchy, then a fully connected ReLU/dropout layer.
class SgcnModel {
public:
    struct Cache {
        Index batch = 0;
        std::vector<ChebCache> conv;
        std::vector<Matrix> pre_relu;
        std::vector<PoolCache> pool;
        ChebCache fc;
        Matrix fc_pre;
        Matrix dropout;
    };

    SgcnModel() = default;

    SgcnModel(const GridGraph& graph, const SgcnConfig& config, Index input_channels, std::mt19937_64& rng)
        : config_(config), graph_(std::make_shared<GridGraph>(graph)) {
        config.validate();
        require<InvalidConfig>(graph.height > 0 && graph.width > 0, "sgcn: graph must be a pixel grid");
        hierarchy_ = std::make_shared<CoarseningHierarchy>(coarsen(graph, config.total_levels()));
        Index fin = input_channels;
        for (const auto& spec : config.layers) {
            layers_.push_back(make_cheb_layer(spec.order, fin, spec.channels, rng, config.use_bias));
            fin = spec.channels;
        }
        fc_ = make_cheb_layer(1, flat_width(), config.fc_width, rng, config.use_bias);
        build_masks();
    }

    const SgcnConfig& config() const noexcept { return config_; }
    const GridGraph& graph() const noexcept { return *graph_; }
    const CoarseningHierarchy& hierarchy() const noexcept { return *hierarchy_; }
    Index input_channels() const noexcept { return layers_.front().in_channels; }
    Index n_pixels() const noexcept { return graph_->n_vertices(); }
    Index output_width() const noexcept { return fc_.out_channels; }

    /// Padded vertex count at the input of each layer, then after the last pooling.
    std::vector<Index> vertex_chain() const {
        std::vector<Index> out;
        int level = 0;
        for (const auto& spec : config_.layers) {
            out.push_back(level_size(level));
            level += spec.pool_levels;
        }
        out.push_back(level_size(level));
        return out;
    }

    Index flat_width() const {
        return level_size(config_.total_levels()) * config_.layers.back().channels;
    }

    std::vector<ChebLayer*> parameters() {
        std::vector<ChebLayer*> out;
        for (auto& l : layers_) out.push_back(&l);
        out.push_back(&fc_);
        return out;
    }
    std::vector<const ChebLayer*> parameters() const {
        std::vector<const ChebLayer*> out;
        for (const auto& l : layers_) out.push_back(&l);
        out.push_back(&fc_);
        return out;
    }
    std::size_t n_conv_layers() const noexcept { return layers_.size(); }

    /// Reorders natural pixel-order signals (batch * H * W rows) into the
    /// padded hierarchy order; fake vertices are zero.
    Matrix permute_input(const Matrix& x) const {
        const Index n = n_pixels();
        require(x.rows() % n == 0, "sgcn: input rows are not a multiple of the pixel count " + std::to_string(n));
        require(x.cols() == input_channels(), "sgcn: expected " + std::to_string(input_channels()) +
                                                  " input channels, got " + std::to_string(x.cols()));
        const Index batch = x.rows() / n;
        const auto& order = hierarchy_->input_permutation();
        const Index m = static_cast<Index>(order.size());
        Matrix out = Matrix::Zero(batch * m, x.cols());
        for (Index s = 0; s < batch; ++s)
            for (Index pos = 0; pos < m; ++pos) {
                const Index v = order[static_cast<std::size_t>(pos)];
                if (v >= 0) out.row(s * m + pos) = x.row(s * n + v);
            }
        return out;
    }

    /// batch x d_fc features from natural-order input. With `cache` the call
    /// records what backward() needs; `dropout_seed` is used in training mode.
    Matrix forward(const Matrix& x, bool training = false, std::uint64_t dropout_seed = 0, Cache* cache = nullptr) const {
        Matrix h = permute_input(x);
        const Index batch = x.rows() / n_pixels();
        if (cache) {
            cache->batch = batch;
            cache->conv.assign(layers_.size(), {});
            cache->pre_relu.assign(layers_.size(), {});
            cache->pool.assign(layers_.size(), {});
        }
        int level = 0;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& lvl = hierarchy_->levels[static_cast<std::size_t>(level)];
            Matrix pre = cheb_forward(lvl.padded_laplacian, h, layers_[l], cache ? &cache->conv[l] : nullptr);
            Matrix act = relu(pre);
            const int s = config_.layers[l].pool_levels;
            h = graph_max_pool(act, lvl.padded_size(), Index{1} << s, masks_[static_cast<std::size_t>(level)],
                               cache ? &cache->pool[l] : nullptr);
            if (cache) cache->pre_relu[l] = std::move(pre);
            level += s;
        }
        // Flatten each sample block (row-major, vertex-major) into one row.
        Matrix flat = Eigen::Map<const Matrix>(h.data(), batch, flat_width());
        Matrix fc_pre = cheb_forward(nullptr, flat, fc_, cache ? &cache->fc : nullptr, 1);
        Matrix mask;
        Matrix out = dropout_forward(relu(fc_pre), config_.dropout, dropout_seed, training, cache ? &mask : nullptr);
        if (cache) {
            cache->fc_pre = std::move(fc_pre);
            cache->dropout = std::move(mask);
        }
        return out;
    }

    /// Accumulates parameter gradients (ordered as parameters()) into `grads`.
    void backward(const Cache& cache, const Matrix& grad_out, std::span<LayerGrad> grads) const {
        require<ContractViolation>(grads.size() == layers_.size() + 1, "sgcn backward: gradient list size mismatch");
        require<ContractViolation>(cache.conv.size() == layers_.size(), "sgcn backward: stale cache");
        Matrix g = relu_backward(cache.fc_pre, dropout_backward(cache.dropout, grad_out));
        const auto fc_grads = cheb_backward(cache.fc, fc_, g);
        accumulate(grads.back(), fc_grads);
        const Index final_level_n = level_size(config_.total_levels());
        g = Eigen::Map<const Matrix>(fc_grads.input.data(), cache.batch * final_level_n,
                                     config_.layers.back().channels);
        for (std::size_t l = layers_.size(); l-- > 0;) {
            g = graph_max_pool_backward(cache.pool[l], g);
            g = relu_backward(cache.pre_relu[l], g);
            const auto cg = cheb_backward(cache.conv[l], layers_[l], g);
            accumulate(grads[l], cg);
            g = cg.input;
        }
    }

    std::vector<LayerGrad> zero_grads() const {
        std::vector<LayerGrad> out;
        for (const auto* l : parameters()) out.push_back(zero_grad(*l));
        return out;
    }

private:
    Index level_size(int level) const { return hierarchy_->levels[static_cast<std::size_t>(level)].padded_size(); }

    void build_masks() {
        masks_.clear();
        for (const auto& lvl : hierarchy_->levels) {
            std::vector<std::uint8_t> m(static_cast<std::size_t>(lvl.padded_size()));
            for (Index pos = 0; pos < lvl.padded_size(); ++pos) m[static_cast<std::size_t>(pos)] = lvl.is_fake(pos);
            masks_.push_back(std::move(m));
        }
    }

    SgcnConfig config_;
    std::shared_ptr<const GridGraph> graph_;
    std::shared_ptr<const CoarseningHierarchy> hierarchy_;
    std::vector<std::vector<std::uint8_t>> masks_;
    std::vector<ChebLayer> layers_;
    ChebLayer fc_;
};

// -----------------------------------------------------------------------------
// Dual model
// -----------------------------------------------------------------------------

/// Two SGCN stacks over different graphs; features are [sgcn1 | sgcn2].
struct DualModel {
    SgcnModel sgcn1;
    SgcnModel sgcn2;

    struct Cache {
        SgcnModel::Cache c1;
        SgcnModel::Cache c2;
    };

    Index feature_width() const { return sgcn1.output_width() + sgcn2.output_width(); }

    Matrix forward(const Matrix& x, bool training = false, std::uint64_t dropout_seed = 0, Cache* cache = nullptr) const {
        require(sgcn1.n_pixels() == sgcn2.n_pixels(), "dual: stacks disagree on input resolution");
        const Matrix a = sgcn1.forward(x, training, sub_seed(dropout_seed, 1), cache ? &cache->c1 : nullptr);
        const Matrix b = sgcn2.forward(x, training, sub_seed(dropout_seed, 2), cache ? &cache->c2 : nullptr);
        Matrix out(a.rows(), a.cols() + b.cols());
        out << a, b;
        return out;
    }

    std::vector<ChebLayer*> parameters() {
        auto out = sgcn1.parameters();
        for (auto* p : sgcn2.parameters()) out.push_back(p);
        return out;
    }
    std::vector<const ChebLayer*> parameters() const {
        auto out = sgcn1.parameters();
        for (const auto* p : sgcn2.parameters()) out.push_back(p);
        return out;
    }

    std::vector<LayerGrad> zero_grads() const {
        auto out = sgcn1.zero_grads();
        for (auto& g : sgcn2.zero_grads()) out.push_back(std::move(g));
        return out;
    }

    void backward(const Cache& cache, const Matrix& grad_out, std::span<LayerGrad> grads) const {
        const Index w1 = sgcn1.output_width();
        const auto n1 = sgcn1.parameters().size();
        sgcn1.backward(cache.c1, grad_out.leftCols(w1), grads.first(n1));
        sgcn2.backward(cache.c2, grad_out.rightCols(grad_out.cols() - w1), grads.subspan(n1));
    }
};

// -----------------------------------------------------------------------------
// Fusion head
// -----------------------------------------------------------------------------

enum class RowVote { mean, max };

inline std::string to_string(RowVote v) { return v == RowVote::mean ? "mean" : "max"; }

inline RowVote row_vote_from_string(const std::string& s) {
    if (s == "mean") return RowVote::mean;
    if (s == "max") return RowVote::max;
    throw InvalidConfig("row vote must be 'mean' or 'max', got '" + s + "'");
}

/// Row-stacks spatial and temporal feature rows of one video.
inline Matrix stack_branches(const Matrix& spatial, const Matrix& temporal) {
    if (spatial.rows() > 0 && temporal.rows() > 0)
        require(spatial.cols() == temporal.cols(), "fuse: spatial and temporal feature widths differ (" +
                                                       std::to_string(spatial.cols()) + " vs " +
                                                       std::to_string(temporal.cols()) + ")");
    Matrix out(spatial.rows() + temporal.rows(), spatial.rows() > 0 ? spatial.cols() : temporal.cols());
    if (spatial.rows() > 0) out.topRows(spatial.rows()) = spatial;
    if (temporal.rows() > 0) out.bottomRows(temporal.rows()) = temporal;
    return out;
}

/// Target-network head: fc (d_fc3) + ReLU, a linear classifier per row, and
/// a vote over each video's rows.
struct FusionHead {
    ChebLayer fc;
    ChebLayer classifier;
    RowVote vote = RowVote::mean;

    struct Cache {
        std::vector<Index> row_counts;
        ChebCache fc;
        Matrix fc_pre;
        ChebCache cls;
        Matrix row_logits;
    };

    static FusionHead make(Index in_width, Index hidden, Index n_classes, RowVote vote, std::mt19937_64& rng,
                           bool use_bias = true) {
        FusionHead h;
        h.fc = make_cheb_layer(1, in_width, hidden, rng, use_bias);
        h.classifier = make_cheb_layer(1, hidden, n_classes, rng, use_bias);
        h.vote = vote;
        return h;
    }

    Index in_width() const noexcept { return fc.in_channels; }
    Index n_classes() const noexcept { return classifier.out_channels; }

    Matrix row_logits(const Matrix& rows, Cache* cache = nullptr) const {
        require(rows.cols() == fc.in_channels, "fuse: feature width " + std::to_string(rows.cols()) +
                                                   " does not match head input " + std::to_string(fc.in_channels));
        Matrix pre = cheb_forward(nullptr, rows, fc, cache ? &cache->fc : nullptr, 1);
        Matrix logits = cheb_forward(nullptr, relu(pre), classifier, cache ? &cache->cls : nullptr, 1);
        if (cache) cache->fc_pre = std::move(pre);
        return logits;
    }

    /// Videos x classes logits. Rows of video v are the next row_counts[v] rows.
    Matrix forward(const Matrix& rows, std::span<const Index> row_counts, Cache* cache = nullptr) const {
        Matrix per_row = row_logits(rows, cache);
        Matrix out(static_cast<Index>(row_counts.size()), n_classes());
        Index start = 0;
        for (std::size_t v = 0; v < row_counts.size(); ++v) {
            const Index cnt = row_counts[v];
            require(cnt >= 1 && start + cnt <= rows.rows(), "fuse: row counts do not cover the feature rows");
            const auto block = per_row.middleRows(start, cnt);
            if (vote == RowVote::mean)
                out.row(static_cast<Index>(v)) = block.colwise().mean();
            else
                out.row(static_cast<Index>(v)) = block.colwise().maxCoeff();
            start += cnt;
        }
        require(start == rows.rows(), "fuse: row counts do not cover the feature rows");
        if (cache) {
            cache->row_counts.assign(row_counts.begin(), row_counts.end());
            cache->row_logits = std::move(per_row);
        }
        return out;
    }

    std::vector<ChebLayer*> parameters() { return {&fc, &classifier}; }
    std::vector<const ChebLayer*> parameters() const { return {&fc, &classifier}; }
    std::vector<LayerGrad> zero_grads() const { return {zero_grad(fc), zero_grad(classifier)}; }

    /// Accumulates into grads and returns the gradient with respect to the rows.
    Matrix backward(const Cache& cache, const Matrix& grad_video, std::span<LayerGrad> grads) const {
        Matrix g_rows = Matrix::Zero(cache.row_logits.rows(), cache.row_logits.cols());
        Index start = 0;
        for (std::size_t v = 0; v < cache.row_counts.size(); ++v) {
            const Index cnt = cache.row_counts[v];
            for (Index c = 0; c < g_rows.cols(); ++c) {
                if (vote == RowVote::mean) {
                    g_rows.block(start, c, cnt, 1).setConstant(grad_video(static_cast<Index>(v), c) / static_cast<double>(cnt));
                } else {
                    Index arg = 0;
                    cache.row_logits.col(c).segment(start, cnt).maxCoeff(&arg);
                    g_rows(start + arg, c) = grad_video(static_cast<Index>(v), c);
                }
            }
            start += cnt;
        }
        const auto cg = cheb_backward(cache.cls, classifier, g_rows);
        accumulate(grads[1], cg);
        const auto fg = cheb_backward(cache.fc, fc, relu_backward(cache.fc_pre, cg.input));
        accumulate(grads[0], fg);
        return fg.input;
    }
};

}  // namespace sgcn
