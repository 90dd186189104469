#pragma once

// Losses, ADAM, early stopping, evaluation and the two training phases:
// source pre-training of the dual stacks and target fine-tuning of the
// fusion head.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgcn/core.hpp"
#include "sgcn/data.hpp"
#include "sgcn/model.hpp"
#include "sgcn/network.hpp"
#include "sgcn/optical_flow.hpp"

namespace sgcn {

// -----------------------------------------------------------------------------
// Losses
// -----------------------------------------------------------------------------

enum class LossKind { cross_entropy, focal };

inline std::string to_string(LossKind k) { return k == LossKind::focal ? "focal" : "cross_entropy"; }

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "focal") return LossKind::focal;
    if (s == "cross_entropy" || s == "ce") return LossKind::cross_entropy;
    throw InvalidConfig("loss must be 'focal' or 'cross_entropy', got '" + s + "'");
}

struct FocalParams {
    double alpha = 1.5;
    double gamma = 0.2;

    void validate() const {
        require<InvalidConfig>(alpha >= 0.0 && gamma >= 0.0, "focal loss: alpha and gamma must be >= 0");
    }
    friend bool operator==(const FocalParams&, const FocalParams&) = default;
};

inline constexpr double kProbEpsilon = 1e-12;

/// Row-wise softmax with max subtraction.
inline Matrix softmax_probs(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - mx).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

/// Row-wise log-softmax.
inline Matrix log_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        const double lse = std::log((logits.row(i).array() - mx).exp().sum());
        out.row(i) = (logits.row(i).array() - mx - lse).matrix();
    }
    return out;
}

struct LossResult {
    double loss = 0.0;
    Matrix grad;   // d loss / d logits
    Matrix probs;
};

namespace detail {

inline void check_labels(const Matrix& logits, std::span<const int> labels) {
    require(static_cast<Index>(labels.size()) == logits.rows(), "loss: one label per row required");
    require(logits.rows() > 0, "loss: empty batch");
    for (int y : labels)
        require(y >= 0 && y < logits.cols(), "loss: label " + std::to_string(y) + " out of range");
}

}  // namespace detail

/// Mean cross-entropy over the batch.
inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
    detail::check_labels(logits, labels);
    const Matrix lp = log_softmax(logits);
    LossResult r;
    r.probs = lp.array().exp().matrix();
    r.grad = r.probs;
    const double inv = 1.0 / static_cast<double>(logits.rows());
    for (Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        r.loss -= lp(i, y);
        r.grad(i, y) -= 1.0;
    }
    r.loss *= inv;
    r.grad *= inv;
    return r;
}

/// -alpha (1 - p)^gamma log p for one true-class probability.
inline double focal_term(double p, const FocalParams& fp) {
    p = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
    return -fp.alpha * std::pow(1.0 - p, fp.gamma) * std::log(p);
}

/// Mean focal loss with p_t the softmax probability of the true class,
/// clamped to [eps, 1 - eps]. The gradient goes through the softmax:
/// dFL/dz = alpha [gamma (1-p)^(gamma-1) p log p - (1-p)^gamma] (e_t - q).
inline LossResult focal_loss(const Matrix& logits, std::span<const int> labels, const FocalParams& fp) {
    fp.validate();
    detail::check_labels(logits, labels);
    const Matrix lp = log_softmax(logits);
    LossResult r;
    r.probs = lp.array().exp().matrix();
    r.grad = Matrix::Zero(logits.rows(), logits.cols());
    const double inv = 1.0 / static_cast<double>(logits.rows());
    const double lo = std::log(kProbEpsilon), hi = std::log1p(-kProbEpsilon);
    for (Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double log_p = std::clamp(lp(i, y), lo, hi);
        const double p = std::exp(log_p);
        const double one_minus = -std::expm1(log_p);
        const double weight = fp.gamma == 0.0 ? 1.0 : std::pow(one_minus, fp.gamma);
        r.loss += -fp.alpha * weight * log_p;
        const double dweight = fp.gamma == 0.0 ? 0.0 : fp.gamma * std::pow(one_minus, fp.gamma - 1.0) * p * log_p;
        const double factor = fp.alpha * (dweight - weight);
        r.grad.row(i) = -factor * r.probs.row(i);
        r.grad(i, y) += factor;
    }
    r.loss *= inv;
    r.grad *= inv;
    return r;
}

inline LossResult compute_loss(LossKind kind, const FocalParams& fp, const Matrix& logits, std::span<const int> labels) {
    return kind == LossKind::focal ? focal_loss(logits, labels, fp) : cross_entropy(logits, labels);
}

/// Index of the largest logit per row; ties go to the lowest class.
inline std::vector<int> argmax_rows(const Matrix& logits) {
    std::vector<int> out;
    for (Index i = 0; i < logits.rows(); ++i) {
        Index best = 0;
        for (Index c = 1; c < logits.cols(); ++c)
            if (logits(i, c) > logits(i, best)) best = c;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

// -----------------------------------------------------------------------------
// ADAM
// -----------------------------------------------------------------------------

/// lr: eta_t = eta / (1 + decay * t). l2: constant eta, decay * w added to
/// the weight gradient.
enum class DecayMode { lr, l2 };

inline std::string to_string(DecayMode m) { return m == DecayMode::lr ? "lr" : "l2"; }

inline DecayMode decay_mode_from_string(const std::string& s) {
    if (s == "lr") return DecayMode::lr;
    if (s == "l2") return DecayMode::l2;
    throw InvalidConfig("decay_mode must be 'lr' or 'l2', got '" + s + "'");
}

struct AdamConfig {
    double lr = 1e-5;
    double decay = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    DecayMode mode = DecayMode::lr;

    void validate() const {
        require<InvalidConfig>(lr > 0.0 && decay >= 0.0, "adam: lr must be > 0 and decay >= 0");
        require<InvalidConfig>(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "adam: betas must be in [0, 1)");
        require<InvalidConfig>(epsilon > 0.0, "adam: epsilon must be > 0");
    }
    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

class Adam {
public:
    Adam() = default;

    Adam(const AdamConfig& cfg, std::span<const ChebLayer* const> params) : cfg_(cfg) {
        cfg.validate();
        for (const ChebLayer* p : params) {
            m_.push_back(zero_grad(*p));
            v_.push_back(zero_grad(*p));
        }
    }

    long steps() const noexcept { return t_; }
    double current_lr() const noexcept {
        return cfg_.mode == DecayMode::lr ? cfg_.lr / (1.0 + cfg_.decay * static_cast<double>(t_)) : cfg_.lr;
    }

    /// One update. Layers with frozen[i] != 0 are left untouched, moments included.
    void step(std::span<ChebLayer* const> params, std::span<const LayerGrad> grads,
              std::span<const std::uint8_t> frozen = {}) {
        require<ContractViolation>(params.size() == m_.size() && grads.size() == m_.size(),
                                   "adam: parameter list does not match optimizer state");
        require<ContractViolation>(frozen.empty() || frozen.size() == m_.size(), "adam: frozen mask size mismatch");
        for (std::size_t i = 0; i < grads.size(); ++i) {
            if (!grads[i].weights.allFinite())
                throw NumericError("adam: non-finite gradient in weights of parameter block " + std::to_string(i) +
                                   " at step " + std::to_string(t_ + 1));
            if (!grads[i].bias.allFinite())
                throw NumericError("adam: non-finite gradient in bias of parameter block " + std::to_string(i) +
                                   " at step " + std::to_string(t_ + 1));
        }
        const double lr = current_lr();
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!frozen.empty() && frozen[i]) continue;
            ChebLayer& p = *params[i];
            require<ContractViolation>(p.weights.rows() == m_[i].weights.rows() && p.weights.cols() == m_[i].weights.cols(),
                                       "adam: parameter shape changed");
            Matrix gw = grads[i].weights;
            if (cfg_.mode == DecayMode::l2 && cfg_.decay > 0.0) gw += cfg_.decay * p.weights;
            update(p.weights, m_[i].weights, v_[i].weights, gw, lr, c1, c2);
            if (p.use_bias) update(p.bias, m_[i].bias, v_[i].bias, grads[i].bias, lr, c1, c2);
        }
    }

private:
    template <class W, class G>
    void update(W& w, W& m, W& v, const G& g, double lr, double c1, double c2) const {
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
    }

    AdamConfig cfg_;
    std::vector<LayerGrad> m_;
    std::vector<LayerGrad> v_;
    long t_ = 0;
};

// -----------------------------------------------------------------------------
// Early stopping and configuration
// -----------------------------------------------------------------------------

/// Stops once the epoch loss has not improved by more than `min_delta` for
/// `patience` consecutive epochs.
struct EarlyStopping {
    int patience = 10;
    double min_delta = 1e-5;
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;

    bool update(double loss) {
        if (loss < best - min_delta) {
            best = loss;
            stale = 0;
        } else {
            ++stale;
        }
        return stale >= patience;
    }
};

struct TrainConfig {
    int max_epochs = 100;
    int patience = 10;
    double min_delta = 1e-5;
    Index batch_size = 16;
    LossKind loss = LossKind::focal;
    FocalParams focal;
    AdamConfig adam;
    bool unfreeze = false;              // target phase: allow training the transferred stacks
    std::vector<std::uint8_t> frozen;   // target phase: per dual layer; empty = all frozen unless unfreeze
    std::uint64_t seed = 0;
    int threads = 1;
    // Ends training once the epoch callback's metric reaches this value
    // (used to count epochs to a target accuracy). NaN disables it.
    double stop_at_eval = std::numeric_limits<double>::quiet_NaN();

    bool reached(double eval) const { return !std::isnan(stop_at_eval) && eval >= stop_at_eval; }

    void validate() const {
        require<InvalidConfig>(max_epochs >= 1, "train: max_epochs must be >= 1");
        require<InvalidConfig>(patience >= 1, "train: patience must be >= 1");
        require<InvalidConfig>(batch_size >= 1, "train: batch_size must be >= 1");
        require<InvalidConfig>(min_delta >= 0.0, "train: min_delta must be >= 0");
        require<InvalidConfig>(threads >= 1, "train: threads must be >= 1");
        focal.validate();
        adam.validate();
    }
};

struct EpochRecord {
    int epoch = 0;
    std::string phase;
    double loss = 0.0;
    double train_acc = 0.0;
    double eval_acc = std::numeric_limits<double>::quiet_NaN();  // from the epoch callback, if any
};

struct History {
    std::vector<EpochRecord> epochs;
    bool early_stopped = false;

    /// First epoch (1-based) whose callback accuracy reached `bar`, or -1.
    int first_epoch_reaching(double bar) const {
        for (const auto& e : epochs)
            if (e.eval_acc >= bar) return e.epoch;
        return -1;
    }

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "epoch,phase,loss,train_acc\n";
        for (const auto& e : epochs) out << e.epoch << "," << e.phase << "," << e.loss << "," << e.train_acc << "\n";
        return out.str();
    }
};

// -----------------------------------------------------------------------------
// Evaluation
// -----------------------------------------------------------------------------

struct EvalReport {
    double accuracy = 0.0;
    Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> confusion;  // rows = true
    Matrix normalized;                                                               // row-normalized
    std::vector<std::string> class_names;

    Index n_classes() const noexcept { return confusion.rows(); }

    std::string confusion_csv() const {
        std::ostringstream out;
        out << "true\\predicted";
        for (Index c = 0; c < n_classes(); ++c) out << "," << name(c);
        out << "\n";
        for (Index r = 0; r < n_classes(); ++r) {
            out << name(r);
            for (Index c = 0; c < n_classes(); ++c) out << "," << confusion(r, c);
            out << "\n";
        }
        return out.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json counts = nlohmann::json::array(), norm = nlohmann::json::array(), names = nlohmann::json::array();
        for (Index r = 0; r < n_classes(); ++r) {
            std::vector<long> row;
            std::vector<double> nrow;
            for (Index c = 0; c < n_classes(); ++c) {
                row.push_back(confusion(r, c));
                nrow.push_back(normalized(r, c));
            }
            counts.push_back(row);
            norm.push_back(nrow);
            names.push_back(name(r));
        }
        return {{"accuracy", accuracy}, {"n_samples", confusion.sum()}, {"classes", names},
                {"confusion", counts}, {"confusion_normalized", norm}};
    }

private:
    std::string name(Index c) const {
        return c < static_cast<Index>(class_names.size()) ? class_names[static_cast<std::size_t>(c)]
                                                          : std::to_string(c);
    }
};

inline EvalReport evaluate_predictions(std::span<const int> predicted, std::span<const int> truth, Index n_classes,
                                       std::vector<std::string> class_names = {}) {
    require(!truth.empty(), "evaluate: empty test set");
    require(predicted.size() == truth.size(), "evaluate: prediction count does not match label count");
    require(n_classes >= 1, "evaluate: need at least one class");
    EvalReport r;
    r.class_names = std::move(class_names);
    r.confusion.setZero(n_classes, n_classes);
    long correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        require(truth[i] >= 0 && truth[i] < n_classes && predicted[i] >= 0 && predicted[i] < n_classes,
                "evaluate: class index out of range");
        ++r.confusion(truth[i], predicted[i]);
        correct += truth[i] == predicted[i];
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    r.normalized = Matrix::Zero(n_classes, n_classes);
    for (Index c = 0; c < n_classes; ++c) {
        const long total = r.confusion.row(c).sum();
        if (total > 0) r.normalized.row(c) = r.confusion.row(c).cast<double>() / static_cast<double>(total);
    }
    return r;
}

/// Stratified k-fold: returns the test indices of each fold. Each class is
/// shuffled with the seed and dealt round-robin across folds.
inline std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
    require<InvalidConfig>(k >= 2, "kfold: k must be >= 2");
    require<InvalidConfig>(static_cast<std::size_t>(k) <= labels.size(), "kfold: k exceeds the sample count");
    const int n_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    std::size_t next = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i : members) folds[next++ % static_cast<std::size_t>(k)].push_back(i);
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

// -----------------------------------------------------------------------------
// Inputs
// -----------------------------------------------------------------------------

/// Frame as an n x channels signal: intensity in channel 0, other channels zero.
inline Matrix frame_signal(const Image& frame, Index channels = 2) {
    Matrix s = Matrix::Zero(frame.size(), channels);
    for (Index i = 0; i < frame.size(); ++i) s(i, 0) = frame.data()[i];
    return s;
}

/// Flow image as an n x channels signal: (u, v) in channels 0 and 1.
inline Matrix flow_signal(const FlowField& flow, Index channels = 2) {
    require<InvalidConfig>(channels >= 2, "flow signal: need at least 2 input channels");
    Matrix s = Matrix::Zero(flow.u.size(), channels);
    s.leftCols(2) = flow_to_image(flow);
    return s;
}

inline Matrix stack_signals(std::span<const Matrix> signals) {
    require(!signals.empty(), "stack_signals: nothing to stack");
    Index rows = 0;
    for (const auto& s : signals) rows += s.rows();
    Matrix out(rows, signals.front().cols());
    Index at = 0;
    for (const auto& s : signals) {
        out.middleRows(at, s.rows()) = s;
        at += s.rows();
    }
    return out;
}

struct FrameOptions {
    Index spatial_frames = 8;   // M_s
    Index temporal_frames = 7;  // M_t
    FlowOptions flow;
    friend bool operator==(const FrameOptions&, const FrameOptions&) = default;
};

/// Labeled single-frame signals for the source phase.
struct SourceData {
    std::vector<Matrix> signals;
    std::vector<int> labels;
    std::size_t size() const noexcept { return labels.size(); }
};

/// The flow-selected frames of every sequence become independent samples.
inline SourceData make_source_data(const Dataset& data, const FrameOptions& opts, Index channels = 2, int threads = 1) {
    require(!data.empty(), "source data: empty dataset");
    std::vector<std::vector<Index>> picks(data.size());
    auto work = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < data.size(); i += step) {
            const auto& frames = data.samples[i].frames;
            picks[i] = select_frames(frames, std::min<Index>(opts.spatial_frames, static_cast<Index>(frames.size())), opts.flow);
        }
    };
    run_parallel(work, threads);
    SourceData out;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (Index f : picks[i]) {
            out.signals.push_back(frame_signal(data.samples[i].frames[static_cast<std::size_t>(f)], channels));
            out.labels.push_back(data.samples[i].label);
        }
    return out;
}

/// One video for the target phase: M_s flow-selected frames and M_t flow
/// images spaced uniformly over the frame pairs.
struct VideoInput {
    std::string id;
    int label = 0;
    std::vector<Matrix> spatial;
    std::vector<Matrix> temporal;
};

inline VideoInput make_video_input(const SequenceSample& s, const FrameOptions& opts, Index channels = 2) {
    require(s.frames.size() >= 2, "video input: sample '" + s.id + "' has fewer than 2 frames");
    const auto flows = pair_flows(s.frames, opts.flow);
    std::vector<double> means;
    for (const auto& f : flows) means.push_back(f.magnitude().mean());
    VideoInput v;
    v.id = s.id;
    v.label = s.label;
    const Index n_frames = static_cast<Index>(s.frames.size());
    for (Index f : select_frames(means, std::min(opts.spatial_frames, n_frames)))
        v.spatial.push_back(frame_signal(s.frames[static_cast<std::size_t>(f)], channels));
    const Index n_pairs = static_cast<Index>(flows.size());
    for (Index p : uniform_indices(n_pairs, std::min(opts.temporal_frames, n_pairs)))
        v.temporal.push_back(flow_signal(flows[static_cast<std::size_t>(p)], channels));
    return v;
}

inline std::vector<VideoInput> make_video_inputs(const Dataset& data, const FrameOptions& opts, Index channels = 2,
                                                 int threads = 1) {
    std::vector<VideoInput> out(data.size());
    run_parallel(
        [&](std::size_t begin, std::size_t step) {
            for (std::size_t i = begin; i < data.size(); i += step)
                out[i] = make_video_input(data.samples[i], opts, channels);
        },
        threads);
    return out;
}

enum class Branches { spatial, temporal, fused };

inline std::string to_string(Branches b) {
    return b == Branches::spatial ? "spatial" : b == Branches::temporal ? "temporal" : "fused";
}

// -----------------------------------------------------------------------------
// Source phase
// -----------------------------------------------------------------------------

using SourceCallback = std::function<double(int epoch, const TransferModel&)>;

/// Trains both stacks and the source classifier on single-frame samples.
inline History train_source(TransferModel& m, const SourceData& data, const TrainConfig& cfg,
                            const SourceCallback& on_epoch = {}) {
    cfg.validate();
    require(data.size() > 0, "train_source: empty dataset");
    require(data.signals.size() == data.labels.size(), "train_source: signals and labels differ in count");
    for (int y : data.labels)
        require(y >= 0 && y < m.config.source_classes, "train_source: label out of range");

    auto params = m.dual.parameters();
    params.push_back(&m.source_head);
    std::vector<const ChebLayer*> cparams(params.begin(), params.end());
    Adam adam(cfg.adam, cparams);
    EarlyStopping stop{cfg.patience, cfg.min_delta};
    History hist;
    std::vector<std::size_t> order(data.size());

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(sub_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        long correct = 0;
        for (std::size_t start = 0, b = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++b) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Matrix> xs;
            std::vector<int> ys;
            for (std::size_t k = start; k < end; ++k) {
                xs.push_back(data.signals[order[k]]);
                ys.push_back(data.labels[order[k]]);
            }
            const Matrix x = stack_signals(xs);
            DualModel::Cache dc;
            const std::uint64_t drop_seed = sub_seed(sub_seed(cfg.seed, SeedStream::dropout),
                                                     static_cast<std::uint64_t>(epoch) * 1000003ull + b);
            const Matrix feats = m.dual.forward(x, true, drop_seed, &dc);
            ChebCache hc;
            const Matrix logits = cheb_forward(nullptr, feats, m.source_head, &hc, 1);
            const LossResult lr = compute_loss(cfg.loss, cfg.focal, logits, ys);
            if (!std::isfinite(lr.loss))
                throw NumericError("train_source: non-finite loss at epoch " + std::to_string(epoch));
            const auto pred = argmax_rows(logits);
            for (std::size_t k = 0; k < ys.size(); ++k) correct += pred[k] == ys[k];
            loss_sum += lr.loss * static_cast<double>(ys.size());

            auto grads = m.dual.zero_grads();
            grads.push_back(zero_grad(m.source_head));
            const ChebGrads hg = cheb_backward(hc, m.source_head, lr.grad);
            accumulate(grads.back(), hg);
            m.dual.backward(dc, hg.input, std::span<LayerGrad>(grads).first(grads.size() - 1));
            adam.step(params, grads);
        }
        EpochRecord rec{epoch, "source", loss_sum / static_cast<double>(data.size()),
                        static_cast<double>(correct) / static_cast<double>(data.size())};
        if (on_epoch) rec.eval_acc = on_epoch(epoch, m);
        hist.epochs.push_back(rec);
        if (cfg.reached(rec.eval_acc)) break;
        if (stop.update(rec.loss)) {
            hist.early_stopped = epoch < cfg.max_epochs;
            break;
        }
    }
    return hist;
}

inline EvalReport evaluate_source(const TransferModel& m, const SourceData& data) {
    require(data.size() > 0, "evaluate: empty test set");
    std::vector<int> pred;
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        const Matrix x = stack_signals(std::span<const Matrix>(data.signals).subspan(start, end - start));
        const Matrix logits = cheb_forward(nullptr, m.dual.forward(x), m.source_head, nullptr, 1);
        for (int p : argmax_rows(logits)) pred.push_back(p);
    }
    return evaluate_predictions(pred, data.labels, m.config.source_classes);
}

// -----------------------------------------------------------------------------
// Target phase
// -----------------------------------------------------------------------------

/// Feature rows of a set of videos, row-stacked video after video.
struct VideoFeatures {
    Matrix rows;
    std::vector<Index> counts;
    std::vector<int> labels;
    std::size_t size() const noexcept { return labels.size(); }
};

inline Matrix video_rows(const TransferModel& m, const VideoInput& v, Branches branches) {
    const bool use_s = branches != Branches::temporal && !v.spatial.empty();
    const bool use_t = branches != Branches::spatial && !v.temporal.empty();
    require(use_s || use_t, "video '" + v.id + "' has no rows for the " + to_string(branches) + " branch");
    const Matrix s = use_s ? m.dual.forward(stack_signals(v.spatial)) : Matrix(0, m.feature_width());
    const Matrix t = use_t ? m.temporal_dual().forward(stack_signals(v.temporal)) : Matrix(0, m.feature_width());
    return stack_branches(s, t);
}

/// Eval-mode features of every video. Videos are independent, so `threads`
/// does not change the result.
inline VideoFeatures extract_features(const TransferModel& m, std::span<const VideoInput> videos, Branches branches,
                                      int threads = 1) {
    require(!videos.empty(), "extract_features: no videos");
    std::vector<Matrix> per(videos.size());
    run_parallel(
        [&](std::size_t begin, std::size_t step) {
            for (std::size_t i = begin; i < videos.size(); i += step) per[i] = video_rows(m, videos[i], branches);
        },
        threads);
    VideoFeatures f;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        f.counts.push_back(per[i].rows());
        f.labels.push_back(videos[i].label);
    }
    f.rows = stack_signals(per);
    return f;
}

inline EvalReport evaluate_head(const FusionHead& head, const VideoFeatures& f, std::vector<std::string> names = {}) {
    require(f.size() > 0, "evaluate: empty test set");
    return evaluate_predictions(argmax_rows(head.forward(f.rows, f.counts)), f.labels, head.n_classes(), std::move(names));
}

inline EvalReport evaluate(const TransferModel& m, std::span<const VideoInput> videos, Branches branches,
                           std::vector<std::string> names = {}, int threads = 1) {
    require(!videos.empty(), "evaluate: empty test set");
    return evaluate_head(m.head, extract_features(m, videos, branches, threads), std::move(names));
}

namespace detail {

/// Rows and counts of the videos listed in `pick`.
inline void gather_videos(const VideoFeatures& f, const std::vector<Index>& offsets, std::span<const std::size_t> pick,
                          Matrix& rows, std::vector<Index>& counts, std::vector<int>& labels) {
    Index total = 0;
    for (std::size_t v : pick) total += f.counts[v];
    rows.resize(total, f.rows.cols());
    counts.clear();
    labels.clear();
    Index at = 0;
    for (std::size_t v : pick) {
        rows.middleRows(at, f.counts[v]) = f.rows.middleRows(offsets[v], f.counts[v]);
        at += f.counts[v];
        counts.push_back(f.counts[v]);
        labels.push_back(f.labels[v]);
    }
}

}  // namespace detail

using HeadCallback = std::function<double(int epoch, const FusionHead&)>;

/// Trains only the fusion head on fixed features.
inline History train_head(FusionHead& head, const VideoFeatures& f, const TrainConfig& cfg,
                          const HeadCallback& on_epoch = {}) {
    cfg.validate();
    require(f.size() > 0, "fine_tune: empty training set");
    for (int y : f.labels) require(y >= 0 && y < head.n_classes(), "fine_tune: label out of range");
    std::vector<Index> offsets(f.size(), 0);
    for (std::size_t i = 1; i < f.size(); ++i) offsets[i] = offsets[i - 1] + f.counts[i - 1];

    auto params = head.parameters();
    Adam adam(cfg.adam, std::as_const(head).parameters());
    EarlyStopping stop{cfg.patience, cfg.min_delta};
    History hist;
    std::vector<std::size_t> order(f.size());
    Matrix rows;
    std::vector<Index> counts;
    std::vector<int> labels;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(sub_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        long correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            detail::gather_videos(f, offsets, std::span<const std::size_t>(order).subspan(start, end - start), rows,
                                  counts, labels);
            FusionHead::Cache cache;
            const Matrix logits = head.forward(rows, counts, &cache);
            const LossResult lr = compute_loss(cfg.loss, cfg.focal, logits, labels);
            if (!std::isfinite(lr.loss))
                throw NumericError("fine_tune: non-finite loss at epoch " + std::to_string(epoch));
            const auto pred = argmax_rows(logits);
            for (std::size_t k = 0; k < labels.size(); ++k) correct += pred[k] == labels[k];
            loss_sum += lr.loss * static_cast<double>(labels.size());
            auto grads = head.zero_grads();
            head.backward(cache, lr.grad, grads);
            adam.step(params, grads);
        }
        EpochRecord rec{epoch, "target", loss_sum / static_cast<double>(f.size()),
                        static_cast<double>(correct) / static_cast<double>(f.size())};
        if (on_epoch) rec.eval_acc = on_epoch(epoch, head);
        hist.epochs.push_back(rec);
        if (cfg.reached(rec.eval_acc)) break;
        if (stop.update(rec.loss)) {
            hist.early_stopped = epoch < cfg.max_epochs;
            break;
        }
    }
    return hist;
}

using TargetCallback = std::function<double(int epoch, const TransferModel&)>;

namespace detail {

/// Full fine-tuning: the head and every unfrozen dual layer are trained by
/// backpropagating through the stacks.
inline History fine_tune_unfrozen(TransferModel& m, std::span<const VideoInput> videos, Branches branches,
                                  const TrainConfig& cfg, std::vector<std::uint8_t> frozen,
                                  const TargetCallback& on_epoch) {
    if (m.config.separate_temporal && !m.temporal) m.temporal = m.dual;
    DualModel* spatial_net = &m.dual;
    DualModel* temporal_net = m.temporal ? &*m.temporal : &m.dual;
    const bool separate = temporal_net != spatial_net;

    std::vector<ChebLayer*> params = spatial_net->parameters();
    const std::size_t n_dual = params.size();
    std::vector<std::uint8_t> mask = frozen.empty() ? std::vector<std::uint8_t>(n_dual, 0) : frozen;
    if (separate) {
        for (auto* p : temporal_net->parameters()) params.push_back(p);
        mask.insert(mask.end(), mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(n_dual));
    }
    for (auto* p : m.head.parameters()) params.push_back(p);
    mask.push_back(0);
    mask.push_back(0);
    std::vector<const ChebLayer*> cparams(params.begin(), params.end());
    Adam adam(cfg.adam, cparams);
    EarlyStopping stop{cfg.patience, cfg.min_delta};
    History hist;
    std::vector<std::size_t> order(videos.size());

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(sub_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        long correct = 0;
        for (std::size_t start = 0, b = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++b) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Matrix> s_in, t_in;
            std::vector<Index> s_cnt, t_cnt, counts;
            std::vector<int> labels;
            for (std::size_t k = start; k < end; ++k) {
                const VideoInput& v = videos[order[k]];
                const Index ns = branches == Branches::temporal ? 0 : static_cast<Index>(v.spatial.size());
                const Index nt = branches == Branches::spatial ? 0 : static_cast<Index>(v.temporal.size());
                require(ns + nt > 0, "video '" + v.id + "' has no rows for the " + to_string(branches) + " branch");
                for (Index i = 0; i < ns; ++i) s_in.push_back(v.spatial[static_cast<std::size_t>(i)]);
                for (Index i = 0; i < nt; ++i) t_in.push_back(v.temporal[static_cast<std::size_t>(i)]);
                s_cnt.push_back(ns);
                t_cnt.push_back(nt);
                counts.push_back(ns + nt);
                labels.push_back(v.label);
            }
            const std::uint64_t drop = sub_seed(sub_seed(cfg.seed, SeedStream::dropout),
                                                static_cast<std::uint64_t>(epoch) * 1000003ull + b);
            DualModel::Cache sc, tc;
            const Matrix sf = s_in.empty() ? Matrix(0, m.feature_width())
                                           : spatial_net->forward(stack_signals(s_in), true, sub_seed(drop, 1), &sc);
            const Matrix tf = t_in.empty() ? Matrix(0, m.feature_width())
                                           : temporal_net->forward(stack_signals(t_in), true, sub_seed(drop, 2), &tc);
            // Interleave per video: its spatial rows, then its temporal rows.
            Matrix rows(sf.rows() + tf.rows(), m.feature_width());
            std::vector<Index> s_pos, t_pos;
            Index at = 0, si = 0, ti = 0;
            for (std::size_t v = 0; v < counts.size(); ++v) {
                for (Index i = 0; i < s_cnt[v]; ++i, ++si) {
                    rows.row(at) = sf.row(si);
                    s_pos.push_back(at++);
                }
                for (Index i = 0; i < t_cnt[v]; ++i, ++ti) {
                    rows.row(at) = tf.row(ti);
                    t_pos.push_back(at++);
                }
            }
            FusionHead::Cache hc;
            const Matrix logits = m.head.forward(rows, counts, &hc);
            const LossResult lr = compute_loss(cfg.loss, cfg.focal, logits, labels);
            if (!std::isfinite(lr.loss))
                throw NumericError("fine_tune: non-finite loss at epoch " + std::to_string(epoch));
            const auto pred = argmax_rows(logits);
            for (std::size_t k = 0; k < labels.size(); ++k) correct += pred[k] == labels[k];
            loss_sum += lr.loss * static_cast<double>(labels.size());

            std::vector<LayerGrad> grads;
            for (const auto* p : cparams) grads.push_back(zero_grad(*p));
            std::span<LayerGrad> all(grads);
            const Matrix g_rows = m.head.backward(hc, lr.grad, all.last(2));
            if (!s_in.empty()) {
                Matrix gs(sf.rows(), sf.cols());
                for (std::size_t i = 0; i < s_pos.size(); ++i) gs.row(static_cast<Index>(i)) = g_rows.row(s_pos[i]);
                spatial_net->backward(sc, gs, all.first(n_dual));
            }
            if (!t_in.empty()) {
                Matrix gt(tf.rows(), tf.cols());
                for (std::size_t i = 0; i < t_pos.size(); ++i) gt.row(static_cast<Index>(i)) = g_rows.row(t_pos[i]);
                temporal_net->backward(tc, gt, separate ? all.subspan(n_dual, n_dual) : all.first(n_dual));
            }
            adam.step(params, grads, mask);
        }
        EpochRecord rec{epoch, "target", loss_sum / static_cast<double>(videos.size()),
                        static_cast<double>(correct) / static_cast<double>(videos.size())};
        if (on_epoch) rec.eval_acc = on_epoch(epoch, m);
        hist.epochs.push_back(rec);
        if (cfg.reached(rec.eval_acc)) break;
        if (stop.update(rec.loss)) {
            hist.early_stopped = epoch < cfg.max_epochs;
            break;
        }
    }
    return hist;
}

}  // namespace detail

/// Target phase. By default the transferred stacks are frozen and only the
/// fusion head is trained on eval-mode features; unfreezing any stack layer
/// requires cfg.unfreeze.
inline History fine_tune_target(TransferModel& m, std::span<const VideoInput> videos, Branches branches,
                                const TrainConfig& cfg, const TargetCallback& on_epoch = {}) {
    cfg.validate();
    require(!videos.empty(), "fine_tune: empty training set");
    const std::size_t n_dual = m.dual.parameters().size();
    require<InvalidConfig>(cfg.frozen.empty() || cfg.frozen.size() == n_dual,
                           "fine_tune: frozen mask needs " + std::to_string(n_dual) + " entries");
    const bool mask_unfreezes = std::any_of(cfg.frozen.begin(), cfg.frozen.end(), [](std::uint8_t f) { return f == 0; });
    if (mask_unfreezes && !cfg.unfreeze)
        throw InvalidConfig("fine_tune: unfreezing transferred layers requires the unfreeze flag");
    if (cfg.unfreeze && (cfg.frozen.empty() || mask_unfreezes))
        return detail::fine_tune_unfrozen(m, videos, branches, cfg, cfg.frozen, on_epoch);

    const VideoFeatures feats = extract_features(m, videos, branches, cfg.threads);
    HeadCallback cb;
    if (on_epoch)
        cb = [&](int epoch, const FusionHead&) { return on_epoch(epoch, m); };
    return train_head(m.head, feats, cfg, cb);
}

}  // namespace sgcn
