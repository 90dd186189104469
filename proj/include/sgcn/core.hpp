#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace sgcn {

using Index = Eigen::Index;

/// Dense row-major matrix. Batched signals are stored as vertically stacked
/// per-sample blocks of n rows, so a sample block is contiguous in memory.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, std::int64_t>;

// -----------------------------------------------------------------------------
// Errors
// -----------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

#define SGCN_DEFINE_ERROR(Name, Kind)                                    \
    class Name : public Error {                                          \
    public:                                                              \
        using Error::Error;                                              \
        const char* kind() const noexcept override { return Kind; }      \
    };

SGCN_DEFINE_ERROR(InvalidInput, "invalid-input")
SGCN_DEFINE_ERROR(InvalidConfig, "invalid-config")
SGCN_DEFINE_ERROR(DisconnectedGraph, "disconnected-graph")
SGCN_DEFINE_ERROR(DegenerateGraph, "degenerate-graph")
SGCN_DEFINE_ERROR(ContractViolation, "contract-violation")
SGCN_DEFINE_ERROR(NumericError, "numeric-failure")
SGCN_DEFINE_ERROR(DataError, "data-error")
SGCN_DEFINE_ERROR(FormatError, "format-error")

#undef SGCN_DEFINE_ERROR

template <class E = InvalidInput>
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw E(msg);
}

// -----------------------------------------------------------------------------
// Seeds
// -----------------------------------------------------------------------------

/// SplitMix64 finalizer. Used to derive independent sub-seeds from one
/// global seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Fixed stream constants for the global-seed fan-out.
enum class SeedStream : std::uint64_t {
    graph1 = 0x6772617068310001ull,
    graph2 = 0x6772617068320002ull,
    init = 0x696E697400000003ull,
    data = 0x6461746100000004ull,
    train_source = 0x7372637472000005ull,
    train_target = 0x7467747472000006ull,
    dropout = 0x64726F7000000007ull,
};

constexpr std::uint64_t sub_seed(std::uint64_t global, SeedStream stream) noexcept {
    return mix_seed(global ^ static_cast<std::uint64_t>(stream));
}

constexpr std::uint64_t sub_seed(std::uint64_t parent, std::uint64_t index) noexcept {
    return mix_seed(parent + mix_seed(index + 0x51ED270B27A3D5C1ull));
}

// -----------------------------------------------------------------------------
// Threads
// -----------------------------------------------------------------------------

/// Runs work(t, threads) on `threads` workers; work strides over its items
/// starting at t. Callers write results into per-item slots, so the thread
/// count never changes the output.
template <class Work>
void run_parallel(Work&& work, int threads) {
    const auto n = static_cast<std::size_t>(threads < 1 ? 1 : threads);
    if (n == 1) {
        work(std::size_t{0}, std::size_t{1});
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back([&work, t, n] { work(t, n); });
    for (auto& th : pool) th.join();
}

}  // namespace sgcn
