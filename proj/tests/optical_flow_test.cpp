#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sgcn/optical_flow.hpp"
#include "test_support.hpp"

using namespace sgcn;
using sgcn::testing::shift_x;
using sgcn::testing::texture;

namespace {

/// Gaussian blob centred at (cx, cy).
Image blob(Index n, double cx, double cy, double width = 2.5) {
    Image img(n, n);
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c)
            img(r, c) = std::exp(-((c - cx) * (c - cx) + (r - cy) * (r - cy)) / (2 * width * width));
    return img;
}

}  // namespace

TEST(HornSchunck, IdenticalFramesGiveExactlyZero) {
    const Image a = texture(32, 1.0, 1);
    const FlowField f = horn_schunck(a, a);
    EXPECT_EQ(f.u.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(f.v.cwiseAbs().maxCoeff(), 0.0);
}

TEST(HornSchunck, ConstantFramesGiveZero) {
    const FlowField f = horn_schunck(Image::Constant(8, 8, 0.3), Image::Constant(8, 8, 0.3));
    EXPECT_EQ(f.u.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(f.v.cwiseAbs().maxCoeff(), 0.0);
}

TEST(HornSchunck, RecoversOnePixelTranslation) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Image a = texture(64, 1.0, seed);
        const FlowField f = horn_schunck(a, shift_x(a, 1));
        const Index m = 4;
        const auto u = f.u.block(m, m, 64 - 2 * m, 64 - 2 * m);
        const auto v = f.v.block(m, m, 64 - 2 * m, 64 - 2 * m);
        EXPECT_LT(std::abs(u.mean() - 1.0), 0.25) << "seed " << seed;
        EXPECT_LT(v.cwiseAbs().mean(), 0.15) << "seed " << seed;
    }
}

TEST(HornSchunck, DimensionAndOptionChecks) {
    EXPECT_THROW(horn_schunck(Image::Zero(4, 4), Image::Zero(4, 5)), InvalidInput);
    EXPECT_THROW(horn_schunck(Image::Zero(4, 4), Image::Zero(4, 4), {1.0, 0}), InvalidInput);
    EXPECT_THROW(horn_schunck(Image::Zero(4, 4), Image::Zero(4, 4), {0.0, 10}), InvalidInput);
}

TEST(FlowStats, StaticSequence) {
    const Image a = texture(16, 1.0, 4);
    const FlowStats s = flow_magnitude_stats({a, a, a, a});
    EXPECT_EQ(s.pair_means.size(), 3u);
    EXPECT_EQ(s.mean, 0.0);
    EXPECT_EQ(s.variance, 0.0);
}

TEST(FlowStats, TwoPairVarianceDefinition) {
    const Image a = texture(24, 1.0, 5);
    const std::vector<Image> seq{a, shift_x(a, 1), shift_x(a, 1)};
    const FlowStats s = flow_magnitude_stats(seq);
    const double m1 = s.pair_means[0], m2 = s.pair_means[1];
    const double mu = 0.5 * (m1 + m2);
    EXPECT_NEAR(s.mean, mu, 1e-15);
    EXPECT_NEAR(s.variance, ((m1 - mu) * (m1 - mu) + (m2 - mu) * (m2 - mu)) / 2, 1e-15);
    EXPECT_GT(m1, 0.0);
    EXPECT_EQ(m2, 0.0);
}

TEST(FlowStats, AcceleratingBlobIncreases) {
    std::vector<Image> seq;
    double x = 10.0;
    for (int f = 0; f < 5; ++f) {
        seq.push_back(blob(32, x, 16.0));
        x += 0.2 * (f + 1);
    }
    const FlowStats s = flow_magnitude_stats(seq);
    for (std::size_t i = 1; i < s.pair_means.size(); ++i) EXPECT_GT(s.pair_means[i], s.pair_means[i - 1]);
}

TEST(FlowStats, InvariantToIntensityOffset) {
    const Image a = texture(24, 1.0, 6);
    const std::vector<Image> seq{a, shift_x(a, 1), shift_x(a, 2)};
    std::vector<Image> shifted;
    for (const auto& f : seq) shifted.push_back((f.array() + 0.25).matrix());
    const FlowStats s1 = flow_magnitude_stats(seq);
    const FlowStats s2 = flow_magnitude_stats(shifted);
    for (std::size_t i = 0; i < s1.pair_means.size(); ++i) EXPECT_NEAR(s1.pair_means[i], s2.pair_means[i], 1e-12);
}

TEST(FlowStats, ThreadsDoNotChangeResults) {
    std::vector<Image> seq;
    for (int f = 0; f < 6; ++f) seq.push_back(blob(24, 8.0 + f, 12.0));
    const FlowStats s1 = flow_magnitude_stats(seq, {}, 1);
    const FlowStats s3 = flow_magnitude_stats(seq, {}, 3);
    EXPECT_EQ(s1.pair_means, s3.pair_means);
}

TEST(FlowStats, NeedsTwoFrames) { EXPECT_THROW(flow_magnitude_stats({Image::Zero(4, 4)}), InvalidInput); }

TEST(SelectFrames, AllFramesInOrder) {
    const std::vector<double> pm{0.3, 0.1, 0.5, 0.2};
    EXPECT_EQ(select_frames(pm, 5), (std::vector<Index>{0, 1, 2, 3, 4}));
}

TEST(SelectFrames, SingleFrameIsArgmax) {
    // Scores per frame: 0.3, 0.3, 0.5, 0.5, 0.2; ties go to the earlier frame.
    const std::vector<double> pm{0.3, 0.1, 0.5, 0.2};
    EXPECT_EQ(select_frames(pm, 1), (std::vector<Index>{2}));
}

TEST(SelectFrames, MotionBurst) {
    // Blob moves only between frames 5 -> 6 -> 7 of a 12-frame sequence.
    std::vector<Image> seq;
    double x = 10.0;
    for (int f = 0; f < 12; ++f) {
        if (f == 6 || f == 7) x += 2.0;
        seq.push_back(blob(32, x, 16.0));
    }
    EXPECT_EQ(select_frames(seq, 3), (std::vector<Index>{5, 6, 7}));
}

TEST(SelectFrames, SortedUniqueAndChecked) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> pm(9);
        for (double& v : pm) v = u(rng);
        const Index m = 1 + trial % 10;
        const auto sel = select_frames(pm, m);
        ASSERT_EQ(static_cast<Index>(sel.size()), m);
        for (std::size_t i = 1; i < sel.size(); ++i) EXPECT_LT(sel[i - 1], sel[i]);
        const auto top = select_frames(pm, 1);
        EXPECT_NE(std::find(sel.begin(), sel.end(), top[0]), sel.end());
    }
    EXPECT_THROW(select_frames(std::vector<double>{0.1, 0.2}, 4), InvalidInput);
    EXPECT_THROW(select_frames(std::vector<double>{0.1, 0.2}, 0), InvalidInput);
}

TEST(UniformIndices, SpreadsOverRange) {
    EXPECT_EQ(uniform_indices(15, 7), (std::vector<Index>{0, 2, 5, 7, 9, 12, 14}));
    EXPECT_EQ(uniform_indices(5, 1), (std::vector<Index>{0}));
    EXPECT_EQ(uniform_indices(3, 3), (std::vector<Index>{0, 1, 2}));
    EXPECT_THROW(uniform_indices(3, 4), InvalidInput);
}

TEST(FlowToImage, ZeroAndConstantFields) {
    FlowField zero{Matrix::Zero(4, 4), Matrix::Zero(4, 4)};
    EXPECT_EQ(flow_to_image(zero).cwiseAbs().maxCoeff(), 0.0);
    FlowField constant{Matrix::Constant(4, 4, 2.0), Matrix::Constant(4, 4, -1.0)};
    EXPECT_EQ(flow_to_image(constant).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FlowToImage, DipoleKeepsShapeAndSign) {
    const Index n = 8;
    FlowField f{Matrix::Zero(n, n), Matrix::Zero(n, n)};
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c) {
            f.u(r, c) = c < n / 2 ? -3.0 : 3.0;
            f.v(r, c) = r < n / 2 ? 0.5 : -0.5;
        }
    const Matrix img = flow_to_image(f);
    ASSERT_EQ(img.rows(), n * n);
    ASSERT_EQ(img.cols(), 2);
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c) {
            EXPECT_DOUBLE_EQ(img(r * n + c, 0), c < n / 2 ? -1.0 : 1.0);
            EXPECT_DOUBLE_EQ(img(r * n + c, 1), r < n / 2 ? 1.0 : -1.0);
        }
    EXPECT_NEAR(img.col(0).mean(), 0.0, 1e-15);
}

TEST(FlowIo, RoundTrip) {
    std::mt19937_64 rng(9);
    FlowField f{sgcn::testing::random_matrix(3, 5, rng), sgcn::testing::random_matrix(3, 5, rng)};
    const auto bytes = serialize_flow(f);
    EXPECT_EQ(bytes.size(), 4u + 2u + 16u + 2u * 15u * 8u);
    const FlowField g = deserialize_flow(bytes);
    EXPECT_EQ(g.u, f.u);
    EXPECT_EQ(g.v, f.v);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(deserialize_flow(bad), FormatError);
    bad = bytes;
    bad.pop_back();
    EXPECT_THROW(deserialize_flow(bad), FormatError);
}
