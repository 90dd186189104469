#pragma once

// Dense Horn-Schunck optical flow, flow statistics over a sequence and
// flow-driven frame selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "sgcn/binary_io.hpp"
#include "sgcn/core.hpp"

namespace sgcn {

/// Grayscale frame, height x width, intensities in [0, 1].
using Image = Matrix;

struct FlowField {
    Matrix u;  // horizontal displacement, pixels/frame
    Matrix v;  // vertical displacement

    Matrix magnitude() const { return (u.array().square() + v.array().square()).sqrt().matrix(); }
};

struct FlowOptions {
    double smoothness = 1.0;  // alpha of the smoothness term
    int iterations = 200;
};

namespace detail {

/// Half-sample symmetric reflection: -1 -> 0, n -> n - 1.
inline Index reflect(Index i, Index n) noexcept {
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - i - 1;
    return i;
}

inline Matrix neighbourhood_average(const Matrix& f) {
    const Index h = f.rows();
    const Index w = f.cols();
    Matrix out(h, w);
    for (Index r = 0; r < h; ++r) {
        const Index rm = reflect(r - 1, h), rp = reflect(r + 1, h);
        for (Index c = 0; c < w; ++c) {
            const Index cm = reflect(c - 1, w), cp = reflect(c + 1, w);
            out(r, c) = (f(rm, c) + f(rp, c) + f(r, cm) + f(r, cp)) / 6.0 +
                        (f(rm, cm) + f(rm, cp) + f(rp, cm) + f(rp, cp)) / 12.0;
        }
    }
    return out;
}

}  // namespace detail

/// Classic Horn-Schunck: central-difference spatial gradients averaged over
/// both frames, temporal difference b - a, Jacobi iterations from zero flow.
inline FlowField horn_schunck(const Image& a, const Image& b, const FlowOptions& opts = {}) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            "horn_schunck: frame dimensions differ (" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
    require(a.size() > 0, "horn_schunck: empty frames");
    require(opts.iterations >= 1, "horn_schunck: iterations must be >= 1");
    require(opts.smoothness > 0.0, "horn_schunck: smoothness must be > 0");

    const Index h = a.rows();
    const Index w = a.cols();
    Matrix ix(h, w), iy(h, w);
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) {
            const Index cm = detail::reflect(c - 1, w), cp = detail::reflect(c + 1, w);
            const Index rm = detail::reflect(r - 1, h), rp = detail::reflect(r + 1, h);
            ix(r, c) = 0.25 * (a(r, cp) - a(r, cm) + b(r, cp) - b(r, cm));
            iy(r, c) = 0.25 * (a(rp, c) - a(rm, c) + b(rp, c) - b(rm, c));
        }
    const Matrix it = b - a;
    const Matrix denom = (opts.smoothness * opts.smoothness + ix.array().square() + iy.array().square()).matrix();

    FlowField flow{Matrix::Zero(h, w), Matrix::Zero(h, w)};
    for (int k = 0; k < opts.iterations; ++k) {
        const Matrix ubar = detail::neighbourhood_average(flow.u);
        const Matrix vbar = detail::neighbourhood_average(flow.v);
        const Matrix t = ((ix.array() * ubar.array() + iy.array() * vbar.array() + it.array()) / denom.array()).matrix();
        flow.u = (ubar.array() - ix.array() * t.array()).matrix();
        flow.v = (vbar.array() - iy.array() * t.array()).matrix();
    }
    return flow;
}

/// Flow of every consecutive pair. Pairs are independent; `threads` > 1
/// splits them across workers without changing the result.
inline std::vector<FlowField> pair_flows(const std::vector<Image>& frames, const FlowOptions& opts = {},
                                         int threads = 1) {
    require(frames.size() >= 2, "pair_flows: need at least 2 frames");
    std::vector<FlowField> out(frames.size() - 1);
    auto work = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < out.size(); i += step) out[i] = horn_schunck(frames[i], frames[i + 1], opts);
    };
    run_parallel(work, threads);
    return out;
}

struct FlowStats {
    std::vector<double> pair_means;  // mean magnitude of each consecutive pair
    double mean = 0.0;               // mean of pair_means
    double variance = 0.0;           // population variance of pair_means
};

inline FlowStats stats_from_flows(const std::vector<FlowField>& flows) {
    require(!flows.empty(), "flow stats: need at least one frame pair");
    FlowStats s;
    for (const auto& f : flows) s.pair_means.push_back(f.magnitude().mean());
    const double n = static_cast<double>(s.pair_means.size());
    s.mean = std::accumulate(s.pair_means.begin(), s.pair_means.end(), 0.0) / n;
    for (double m : s.pair_means) s.variance += (m - s.mean) * (m - s.mean);
    s.variance /= n;
    return s;
}

inline FlowStats flow_magnitude_stats(const std::vector<Image>& frames, const FlowOptions& opts = {}, int threads = 1) {
    require(frames.size() >= 2, "flow_magnitude_stats: need at least 2 frames");
    return stats_from_flows(pair_flows(frames, opts, threads));
}

/// Picks the `count` frames with the largest adjacent-pair motion (max of the
/// incoming and outgoing pair means), ties to the earlier frame, returned in
/// temporal order.
inline std::vector<Index> select_frames(const std::vector<double>& pair_means, Index count) {
    const Index n_frames = static_cast<Index>(pair_means.size()) + 1;
    require(count >= 1, "select_frames: need to select at least one frame");
    require(count <= n_frames, "select_frames: cannot select " + std::to_string(count) + " of " +
                                   std::to_string(n_frames) + " frames");
    std::vector<double> score(static_cast<std::size_t>(n_frames), 0.0);
    for (Index f = 0; f < n_frames; ++f) {
        double s = 0.0;
        if (f > 0) s = std::max(s, pair_means[static_cast<std::size_t>(f - 1)]);
        if (f + 1 < n_frames) s = std::max(s, pair_means[static_cast<std::size_t>(f)]);
        score[static_cast<std::size_t>(f)] = s;
    }
    std::vector<Index> idx(static_cast<std::size_t>(n_frames));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
    });
    idx.resize(static_cast<std::size_t>(count));
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline std::vector<Index> select_frames(const std::vector<Image>& frames, Index count, const FlowOptions& opts = {},
                                        int threads = 1) {
    require(count <= static_cast<Index>(frames.size()), "select_frames: cannot select " + std::to_string(count) +
                                                            " of " + std::to_string(frames.size()) + " frames");
    return select_frames(flow_magnitude_stats(frames, opts, threads).pair_means, count);
}

/// `count` indices spread uniformly over [0, n).
inline std::vector<Index> uniform_indices(Index n, Index count) {
    require(count >= 1 && count <= n, "uniform_indices: need 1 <= count <= n");
    std::vector<Index> out;
    for (Index i = 0; i < count; ++i)
        out.push_back(count == 1 ? 0 : static_cast<Index>(std::llround(static_cast<double>(i) * (n - 1) / (count - 1))));
    return out;
}

/// Two-channel signal (u, v) in natural pixel order, each channel shifted to
/// zero mean and scaled to unit max-abs. Constant channels map to zero.
inline Matrix flow_to_image(const FlowField& flow) {
    const Index n = flow.u.size();
    Matrix out(n, 2);
    const Matrix* channels[2] = {&flow.u, &flow.v};
    for (int ch = 0; ch < 2; ++ch) {
        const Matrix& f = *channels[ch];
        const double mean = f.mean();
        double peak = 0.0;
        for (Index i = 0; i < n; ++i) peak = std::max(peak, std::abs(f.data()[i] - mean));
        for (Index i = 0; i < n; ++i) out(i, ch) = peak > 1e-12 ? (f.data()[i] - mean) / peak : 0.0;
    }
    return out;
}

// -----------------------------------------------------------------------------
// "SGCF" flow dump
// -----------------------------------------------------------------------------

inline constexpr std::uint16_t kFlowFormatVersion = 1;

inline std::vector<char> serialize_flow(const FlowField& flow) {
    io::Writer w;
    w.magic("SGCF");
    w.put<std::uint16_t>(kFlowFormatVersion);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(flow.u.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(flow.u.cols()));
    for (Index i = 0; i < flow.u.size(); ++i) w.put<double>(flow.u.data()[i]);
    for (Index i = 0; i < flow.v.size(); ++i) w.put<double>(flow.v.data()[i]);
    return w.take();
}

inline FlowField deserialize_flow(const std::vector<char>& bytes) {
    io::Reader r(bytes);
    r.expect_magic("SGCF");
    const auto version = r.get<std::uint16_t>();
    if (version != kFlowFormatVersion) throw FormatError("unsupported SGCF version " + std::to_string(version));
    const auto h = static_cast<Index>(r.get<std::uint64_t>());
    const auto w = static_cast<Index>(r.get<std::uint64_t>());
    FlowField f{Matrix(h, w), Matrix(h, w)};
    for (Index i = 0; i < f.u.size(); ++i) f.u.data()[i] = r.get<double>();
    for (Index i = 0; i < f.v.size(); ++i) f.v.data()[i] = r.get<double>();
    if (!r.at_end()) throw FormatError("SGCF: trailing bytes");
    return f;
}

}  // namespace sgcn
