#pragma once

// Stochastic p+q grid graphs, normalized Laplacians and the coarsening
// hierarchy consumed by the Chebyshev layers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sgcn/binary_io.hpp"
#include "sgcn/core.hpp"

namespace sgcn {

struct GraphParams {
    std::uint32_t p = 8;
    std::uint32_t q = 2;
    double threshold = 2.0 * std::sqrt(2.0);
    std::uint64_t seed = 0;

    void validate() const {
        require<InvalidConfig>(p + q >= 1, "graph params: p + q must be >= 1");
        require<InvalidConfig>(std::isfinite(threshold) && threshold > 0.0,
                               "graph params: threshold T must be > 0");
    }

    friend bool operator==(const GraphParams&, const GraphParams&) = default;
};

/// Pixel coordinate. x is the column, y the row.
struct Coord {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Coord&, const Coord&) = default;
};

inline double squared_distance(const Coord& a, const Coord& b) noexcept {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

struct GridGraph {
    Index height = 0;  // zero for coarsened levels
    Index width = 0;
    std::vector<Coord> coords;
    SparseMatrix adjacency;  // symmetric, zero diagonal
    double sigma = 0.0;
    GraphParams params;
    /// Edges added to join disconnected components.
    Index repair_edges = 0;

    Index n_vertices() const noexcept { return static_cast<Index>(coords.size()); }

    /// Each undirected edge once, as (src < dst, weight), sorted.
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> edge_list() const {
        std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> out;
        for (Index r = 0; r < adjacency.outerSize(); ++r)
            for (SparseMatrix::InnerIterator it(adjacency, r); it; ++it)
                if (it.col() > r)
                    out.emplace_back(static_cast<std::uint32_t>(r),
                                     static_cast<std::uint32_t>(it.col()), it.value());
        return out;
    }
};

/// Mean over vertices of the distance to that vertex's farthest vertex.
inline double compute_sigma(std::span<const Coord> coords) {
    require(coords.size() >= 2, "compute_sigma: need at least 2 vertices");
    double total = 0.0;
    for (const auto& a : coords) {
        double far = 0.0;
        for (const auto& b : coords) far = std::max(far, squared_distance(a, b));
        total += std::sqrt(far);
    }
    const double sigma = total / static_cast<double>(coords.size());
    require(sigma > 0.0, "compute_sigma: all coordinates coincide");
    return sigma;
}

inline double kernel_weight(const Coord& a, const Coord& b, double sigma) noexcept {
    return std::exp(-squared_distance(a, b) / (sigma * sigma));
}

namespace detail {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t i) {
        while (parent_[i] != i) {
            parent_[i] = parent_[parent_[i]];
            i = parent_[i];
        }
        return i;
    }

    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (a < b) std::swap(a, b);
        parent_[a] = b;
        return true;
    }

private:
    std::vector<std::size_t> parent_;
};

struct Offset {
    std::int64_t dy;
    std::int64_t dx;
    std::int64_t d2;
};

/// Grid offsets within `radius`, ordered by (distance, dy, dx). For a fixed
/// centre vertex this is the (distance, vertex index) order.
inline std::vector<Offset> sorted_offsets(double radius, Index height, Index width) {
    const double r2 = radius * radius * (1.0 + 1e-12);
    const auto ry = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(radius)), height - 1);
    const auto rx = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(radius)), width - 1);
    std::vector<Offset> out;
    for (std::int64_t dy = -ry; dy <= ry; ++dy)
        for (std::int64_t dx = -rx; dx <= rx; ++dx) {
            const auto d2 = dy * dy + dx * dx;
            if (d2 == 0 || static_cast<double>(d2) > r2) continue;
            out.push_back({dy, dx, d2});
        }
    std::sort(out.begin(), out.end(), [](const Offset& a, const Offset& b) {
        return std::tie(a.d2, a.dy, a.dx) < std::tie(b.d2, b.dy, b.dx);
    });
    return out;
}

inline SparseMatrix symmetric_from_pairs(Index n, const std::vector<std::tuple<Index, Index, double>>& pairs) {
    std::vector<Eigen::Triplet<double, std::int64_t>> trips;
    trips.reserve(pairs.size() * 2);
    for (const auto& [i, j, w] : pairs) {
        trips.emplace_back(i, j, w);
        trips.emplace_back(j, i, w);
    }
    SparseMatrix a(n, n);
    a.setFromTriplets(trips.begin(), trips.end());
    a.makeCompressed();
    return a;
}

}  // namespace detail

/// Directed neighbour selection of a stochastic p+q grid graph, before
/// symmetrization. Entry i lists the p nearest members of i's potential
/// neighbourhood followed by the q sampled ones.
inline std::vector<std::vector<std::uint32_t>> select_neighbors(Index height, Index width,
                                                                const GraphParams& params) {
    params.validate();
    require(height >= 1 && width >= 1 && height * width >= 2, "grid must have at least 2 vertices");
    const auto offsets = detail::sorted_offsets(params.threshold, height, width);
    const Index n = height * width;

    std::mt19937_64 rng(params.seed);
    std::vector<std::vector<std::uint32_t>> selection(static_cast<std::size_t>(n));
    std::vector<std::uint32_t> potential;
    for (Index i = 0; i < n; ++i) {
        const Index r = i / width;
        const Index c = i % width;
        potential.clear();
        for (const auto& o : offsets) {
            const Index rr = r + o.dy;
            const Index cc = c + o.dx;
            if (rr < 0 || rr >= height || cc < 0 || cc >= width) continue;
            potential.push_back(static_cast<std::uint32_t>(rr * width + cc));
        }
        if (potential.empty())
            throw DisconnectedGraph("vertex " + std::to_string(i) +
                                    " has no potential neighbours within threshold T=" +
                                    std::to_string(params.threshold));

        const std::size_t n_fixed = std::min<std::size_t>(params.p, potential.size());
        const std::size_t n_rand = std::min<std::size_t>(params.q, potential.size() - n_fixed);
        auto& sel = selection[static_cast<std::size_t>(i)];
        sel.assign(potential.begin(), potential.begin() + static_cast<std::ptrdiff_t>(n_fixed));
        // Partial Fisher-Yates over the remainder.
        for (std::size_t k = 0; k < n_rand; ++k) {
            const std::size_t lo = n_fixed + k;
            std::uniform_int_distribution<std::size_t> pick(lo, potential.size() - 1);
            std::swap(potential[lo], potential[pick(rng)]);
            sel.push_back(potential[lo]);
        }
    }
    return selection;
}

/// Builds the stochastic p+q graph over a height x width pixel grid. The
/// directed selection is closed under symmetry and, if the result is
/// disconnected, components are joined by their shortest grid edges.
inline GridGraph build_stochastic_graph(Index height, Index width, const GraphParams& params) {
    const auto selection = select_neighbors(height, width, params);
    const Index n = height * width;

    GridGraph g;
    g.height = height;
    g.width = width;
    g.params = params;
    g.coords.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
        g.coords[static_cast<std::size_t>(i)] = {static_cast<double>(i % width), static_cast<double>(i / width)};
    g.sigma = compute_sigma(g.coords);

    std::vector<std::pair<Index, Index>> pairs;
    for (Index i = 0; i < n; ++i)
        for (auto j : selection[static_cast<std::size_t>(i)])
            pairs.emplace_back(std::min<Index>(i, j), std::max<Index>(i, j));
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    detail::DisjointSets sets(static_cast<std::size_t>(n));
    Index components = n;
    for (const auto& [i, j] : pairs)
        if (sets.unite(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) --components;

    if (components > 1) {
        // Kruskal over inter-component grid edges in (distance, i, j) order;
        // each accepted edge is the shortest one joining two components.
        const auto offsets = detail::sorted_offsets(std::hypot(height, width), height, width);
        std::size_t k = 0;
        while (components > 1 && k < offsets.size()) {
            const auto d2 = offsets[k].d2;
            std::vector<std::pair<Index, Index>> candidates;
            for (; k < offsets.size() && offsets[k].d2 == d2; ++k) {
                const auto& o = offsets[k];
                if (o.dy < 0 || (o.dy == 0 && o.dx < 0)) continue;
                for (Index r = 0; r < height; ++r)
                    for (Index c = 0; c < width; ++c) {
                        const Index rr = r + o.dy;
                        const Index cc = c + o.dx;
                        if (rr < 0 || rr >= height || cc < 0 || cc >= width) continue;
                        const Index a = r * width + c;
                        const Index b = rr * width + cc;
                        candidates.emplace_back(std::min(a, b), std::max(a, b));
                    }
            }
            std::sort(candidates.begin(), candidates.end());
            for (const auto& [i, j] : candidates) {
                if (components == 1) break;
                if (sets.unite(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) {
                    pairs.emplace_back(i, j);
                    --components;
                    ++g.repair_edges;
                }
            }
        }
        std::sort(pairs.begin(), pairs.end());
    }

    std::vector<std::tuple<Index, Index, double>> weighted;
    weighted.reserve(pairs.size());
    for (const auto& [i, j] : pairs)
        weighted.emplace_back(i, j,
                              kernel_weight(g.coords[static_cast<std::size_t>(i)],
                                            g.coords[static_cast<std::size_t>(j)], g.sigma));
    g.adjacency = detail::symmetric_from_pairs(n, weighted);
    return g;
}

inline bool is_connected(const SparseMatrix& adjacency) {
    const Index n = adjacency.rows();
    if (n == 0) return true;
    detail::DisjointSets sets(static_cast<std::size_t>(n));
    Index components = n;
    for (Index r = 0; r < adjacency.outerSize(); ++r)
        for (SparseMatrix::InnerIterator it(adjacency, r); it; ++it)
            if (sets.unite(static_cast<std::size_t>(r), static_cast<std::size_t>(it.col()))) --components;
    return components == 1;
}

// -----------------------------------------------------------------------------
// Laplacians
// -----------------------------------------------------------------------------

/// L = I - D^{-1/2} A D^{-1/2}.
inline SparseMatrix normalized_laplacian(const SparseMatrix& adjacency) {
    const Index n = adjacency.rows();
    require(adjacency.cols() == n, "normalized_laplacian: adjacency must be square");
    Vector degree = Vector::Zero(n);
    for (Index r = 0; r < adjacency.outerSize(); ++r)
        for (SparseMatrix::InnerIterator it(adjacency, r); it; ++it) degree[r] += it.value();
    for (Index i = 0; i < n; ++i)
        if (!(degree[i] > 0.0))
            throw DegenerateGraph("normalized_laplacian: vertex " + std::to_string(i) + " has zero degree");
    const Vector inv_sqrt = degree.cwiseSqrt().cwiseInverse();

    std::vector<Eigen::Triplet<double, std::int64_t>> trips;
    trips.reserve(static_cast<std::size_t>(adjacency.nonZeros() + n));
    for (Index i = 0; i < n; ++i) trips.emplace_back(i, i, 1.0);
    for (Index r = 0; r < adjacency.outerSize(); ++r)
        for (SparseMatrix::InnerIterator it(adjacency, r); it; ++it)
            trips.emplace_back(r, it.col(), -it.value() * inv_sqrt[r] * inv_sqrt[it.col()]);
    SparseMatrix lap(n, n);
    lap.setFromTriplets(trips.begin(), trips.end());
    lap.makeCompressed();
    return lap;
}

inline SparseMatrix normalized_laplacian(const GridGraph& graph) { return normalized_laplacian(graph.adjacency); }

struct LambdaEstimate {
    double value = 2.0;
    bool converged = false;  // false: the value is the analytic bound 2.0
    int iterations = 0;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration. On
/// convergence the Rayleigh quotient is lifted by the residual norm so the
/// result does not undershoot the true maximum. Falls back to 2.0, the
/// normalized-Laplacian bound, when the iteration does not converge.
inline LambdaEstimate estimate_lambda_max(const SparseMatrix& lap, double tol = 1e-6, int max_iter = 1000) {
    const Index n = lap.rows();
    require(n >= 1 && lap.cols() == n, "estimate_lambda_max: matrix must be square and non-empty");

    std::mt19937_64 rng(0x5EEDu);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Vector x(n);
    for (Index i = 0; i < n; ++i) x[i] = unif(rng);
    x.normalize();

    for (int it = 1; it <= max_iter; ++it) {
        Vector y = lap * x;
        const double theta = x.dot(y);
        const double norm = y.norm();
        if (!(norm > 0.0)) return {0.0, true, it};  // zero matrix
        const double residual = (y - theta * x).norm();
        if (residual <= tol * std::abs(theta)) return {theta + residual, true, it};
        x = y / norm;
    }
    return {2.0, false, max_iter};
}

struct ScaledLaplacian {
    SparseMatrix matrix;
    double lambda_max = 2.0;
};

/// L~ = (2 / lambda_max) L - I.
inline ScaledLaplacian scale_laplacian(const SparseMatrix& lap, double lambda_max) {
    require(lambda_max > 0.0 && std::isfinite(lambda_max), "scale_laplacian: lambda_max must be > 0");
    const Index n = lap.rows();
    SparseMatrix eye(n, n);
    eye.setIdentity();
    SparseMatrix scaled = (2.0 / lambda_max) * lap - eye;
    scaled.prune(0.0);
    scaled.makeCompressed();
    return {std::move(scaled), lambda_max};
}

inline ScaledLaplacian scaled_laplacian_of(const SparseMatrix& adjacency) {
    const SparseMatrix lap = normalized_laplacian(adjacency);
    return scale_laplacian(lap, estimate_lambda_max(lap).value);
}

// -----------------------------------------------------------------------------
// Coarsening
// -----------------------------------------------------------------------------

struct CoarseLevel {
    GridGraph graph;          // real vertices only, natural order
    ScaledLaplacian laplacian;  // of graph; 1x1 zero matrix for a single vertex
    /// Real vertex -> real vertex of the next coarser level. Empty on the last level.
    std::vector<Index> parent;
    /// Padded position -> real vertex, or -1 for a fake vertex.
    std::vector<Index> order;
    /// laplacian.matrix permuted into `order`; fake rows and columns are zero.
    SparseMatrix padded_laplacian;

    Index padded_size() const noexcept { return static_cast<Index>(order.size()); }
    bool is_fake(Index pos) const noexcept { return order[static_cast<std::size_t>(pos)] < 0; }
};

/// Multi-level graph hierarchy. Level l+1 pads to exactly half of level l so
/// pooling over 2^s contiguous padded positions is the coarsening map.
struct CoarseningHierarchy {
    std::vector<CoarseLevel> levels;

    Index n_levels() const noexcept { return static_cast<Index>(levels.size()); }
    const std::vector<Index>& input_permutation() const { return levels.front().order; }
};

namespace detail {

/// Greedy heavy-edge matching. Vertices are visited by ascending weighted
/// degree (ties by index); each unmatched vertex takes its heaviest unmatched
/// neighbour (ties by lowest index) or stays a singleton.
inline std::vector<Index> heavy_edge_matching(const SparseMatrix& adj, Index& n_clusters) {
    const Index n = adj.rows();
    Vector degree = Vector::Zero(n);
    for (Index r = 0; r < n; ++r)
        for (SparseMatrix::InnerIterator it(adj, r); it; ++it) degree[r] += it.value();
    std::vector<Index> visit(static_cast<std::size_t>(n));
    std::iota(visit.begin(), visit.end(), Index{0});
    std::stable_sort(visit.begin(), visit.end(), [&](Index a, Index b) { return degree[a] < degree[b]; });

    std::vector<Index> cluster(static_cast<std::size_t>(n), -1);
    n_clusters = 0;
    for (Index v : visit) {
        if (cluster[static_cast<std::size_t>(v)] >= 0) continue;
        Index best = -1;
        double best_w = 0.0;
        for (SparseMatrix::InnerIterator it(adj, v); it; ++it) {
            const Index u = it.col();
            if (u == v || cluster[static_cast<std::size_t>(u)] >= 0) continue;
            if (it.value() > best_w) {
                best_w = it.value();
                best = u;
            }
        }
        cluster[static_cast<std::size_t>(v)] = n_clusters;
        if (best >= 0) cluster[static_cast<std::size_t>(best)] = n_clusters;
        ++n_clusters;
    }
    return cluster;
}

inline ScaledLaplacian level_laplacian(const SparseMatrix& adjacency) {
    if (adjacency.rows() == 1) {
        SparseMatrix zero(1, 1);
        return {zero, 2.0};
    }
    return scaled_laplacian_of(adjacency);
}

}  // namespace detail

/// Coarsens `graph` `total_levels` times by heavy-edge matching. Merged edge
/// weights are sums of the constituent fine weights; intra-cluster weight is
/// dropped. Coarse coordinates are the mean of the merged fine coordinates.
inline CoarseningHierarchy coarsen(const GridGraph& graph, Index total_levels) {
    require<InvalidConfig>(total_levels >= 0, "coarsen: total_levels must be >= 0");
    require<DisconnectedGraph>(is_connected(graph.adjacency), "coarsen: graph must be connected");

    CoarseningHierarchy h;
    h.levels.push_back({graph, detail::level_laplacian(graph.adjacency), {}, {}, {}});

    for (Index lvl = 0; lvl < total_levels; ++lvl) {
        auto& fine = h.levels.back();
        const Index n = fine.graph.n_vertices();
        if (n < 2)
            throw InvalidConfig("coarsen: graph too small for " + std::to_string(total_levels) +
                                " levels (level " + std::to_string(lvl) + " has " + std::to_string(n) +
                                " vertex)");
        Index n_coarse = 0;
        auto cluster = detail::heavy_edge_matching(fine.graph.adjacency, n_coarse);
        if (n_coarse >= n)
            throw InvalidConfig("coarsen: no edge to match at level " + std::to_string(lvl));

        GridGraph coarse;
        coarse.params = fine.graph.params;
        coarse.coords.assign(static_cast<std::size_t>(n_coarse), Coord{});
        std::vector<int> members(static_cast<std::size_t>(n_coarse), 0);
        for (Index i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(cluster[static_cast<std::size_t>(i)]);
            coarse.coords[c].x += fine.graph.coords[static_cast<std::size_t>(i)].x;
            coarse.coords[c].y += fine.graph.coords[static_cast<std::size_t>(i)].y;
            ++members[c];
        }
        for (std::size_t c = 0; c < coarse.coords.size(); ++c) {
            coarse.coords[c].x /= members[c];
            coarse.coords[c].y /= members[c];
        }
        coarse.sigma = n_coarse >= 2 ? compute_sigma(coarse.coords) : 0.0;

        std::vector<Eigen::Triplet<double, std::int64_t>> trips;
        for (Index r = 0; r < n; ++r)
            for (SparseMatrix::InnerIterator it(fine.graph.adjacency, r); it; ++it) {
                const Index a = cluster[static_cast<std::size_t>(r)];
                const Index b = cluster[static_cast<std::size_t>(it.col())];
                if (a != b) trips.emplace_back(a, b, it.value());
            }
        coarse.adjacency.resize(n_coarse, n_coarse);
        coarse.adjacency.setFromTriplets(trips.begin(), trips.end());
        coarse.adjacency.makeCompressed();

        fine.parent = std::move(cluster);
        auto lap = detail::level_laplacian(coarse.adjacency);
        h.levels.push_back({std::move(coarse), std::move(lap), {}, {}, {}});
    }

    // Padded binary layout, built from the coarsest level down.
    auto& last = h.levels.back();
    last.order.resize(static_cast<std::size_t>(last.graph.n_vertices()));
    std::iota(last.order.begin(), last.order.end(), Index{0});
    for (Index lvl = h.n_levels() - 2; lvl >= 0; --lvl) {
        auto& fine = h.levels[static_cast<std::size_t>(lvl)];
        const auto& coarse = h.levels[static_cast<std::size_t>(lvl + 1)];
        std::vector<std::vector<Index>> children(static_cast<std::size_t>(coarse.graph.n_vertices()));
        for (Index i = 0; i < fine.graph.n_vertices(); ++i)
            children[static_cast<std::size_t>(fine.parent[static_cast<std::size_t>(i)])].push_back(i);
        fine.order.clear();
        for (Index c : coarse.order) {
            if (c < 0) {
                fine.order.insert(fine.order.end(), {-1, -1});
                continue;
            }
            const auto& kids = children[static_cast<std::size_t>(c)];
            fine.order.push_back(kids[0]);
            fine.order.push_back(kids.size() > 1 ? kids[1] : -1);
        }
    }

    for (auto& level : h.levels) {
        const Index m = level.padded_size();
        std::vector<Index> position(static_cast<std::size_t>(level.graph.n_vertices()));
        for (Index pos = 0; pos < m; ++pos)
            if (!level.is_fake(pos)) position[static_cast<std::size_t>(level.order[static_cast<std::size_t>(pos)])] = pos;
        std::vector<Eigen::Triplet<double, std::int64_t>> trips;
        const auto& lt = level.laplacian.matrix;
        for (Index r = 0; r < lt.outerSize(); ++r)
            for (SparseMatrix::InnerIterator it(lt, r); it; ++it)
                trips.emplace_back(position[static_cast<std::size_t>(r)],
                                   position[static_cast<std::size_t>(it.col())], it.value());
        level.padded_laplacian.resize(m, m);
        level.padded_laplacian.setFromTriplets(trips.begin(), trips.end());
        level.padded_laplacian.makeCompressed();
    }
    return h;
}

// -----------------------------------------------------------------------------
// "SGCN" graph container
// -----------------------------------------------------------------------------

inline constexpr std::uint16_t kGraphFormatVersion = 1;

inline std::vector<char> serialize_graph(const GridGraph& g) {
    io::Writer w;
    w.magic("SGCN");
    w.put<std::uint16_t>(kGraphFormatVersion);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(g.n_vertices()));
    w.put<std::uint32_t>(g.params.p);
    w.put<std::uint32_t>(g.params.q);
    w.put<double>(g.params.threshold);
    w.put<double>(g.sigma);
    w.put<std::uint64_t>(g.params.seed);
    const auto edges = g.edge_list();
    w.put<std::uint64_t>(edges.size());
    for (const auto& [s, d, wt] : edges) {
        w.put<std::uint32_t>(s);
        w.put<std::uint32_t>(d);
        w.put<double>(wt);
    }
    return w.take();
}

/// The container does not carry the grid width; the caller supplies it to
/// restore pixel coordinates.
inline GridGraph deserialize_graph(const std::vector<char>& bytes, Index width) {
    io::Reader r(bytes);
    r.expect_magic("SGCN");
    const auto version = r.get<std::uint16_t>();
    if (version != kGraphFormatVersion) throw FormatError("unsupported SGCN version " + std::to_string(version));
    GridGraph g;
    const auto n = static_cast<Index>(r.get<std::uint64_t>());
    require<FormatError>(width > 0 && n % width == 0, "SGCN: vertex count not divisible by grid width");
    g.params.p = r.get<std::uint32_t>();
    g.params.q = r.get<std::uint32_t>();
    g.params.threshold = r.get<double>();
    g.sigma = r.get<double>();
    g.params.seed = r.get<std::uint64_t>();
    const auto m = r.get<std::uint64_t>();
    std::vector<std::tuple<Index, Index, double>> edges;
    edges.reserve(m);
    for (std::uint64_t k = 0; k < m; ++k) {
        const Index s = r.get<std::uint32_t>();
        const Index d = r.get<std::uint32_t>();
        const double wt = r.get<double>();
        require<FormatError>(s < d && d < n, "SGCN: malformed edge");
        edges.emplace_back(s, d, wt);
    }
    require<FormatError>(r.at_end(), "SGCN: trailing bytes");
    g.width = width;
    g.height = n / width;
    g.coords.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
        g.coords[static_cast<std::size_t>(i)] = {static_cast<double>(i % width), static_cast<double>(i / width)};
    g.adjacency = detail::symmetric_from_pairs(n, edges);
    return g;
}

}  // namespace sgcn
