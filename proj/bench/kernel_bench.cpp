// Serial reference kernels against the OpenMP kernels on message-passing
// shaped inputs.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "quadgfm/numerics/kernels.hpp"
#include "quadgfm/numerics/reference.hpp"

using namespace quadgfm::numerics;

namespace {

Matrix<float> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Matrix<float> m(rows, cols);
    for (auto& x : m.values()) x = u(rng);
    return m;
}

std::vector<std::uint32_t> random_index(std::size_t n, std::size_t range, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint32_t> u(0, static_cast<std::uint32_t>(range - 1));
    std::vector<std::uint32_t> idx(n);
    for (auto& i : idx) i = u(rng);
    return idx;
}

// Graph with n nodes, 8n edges, d-wide features.
struct EdgeSet {
    std::size_t nodes;
    Matrix<float> features, relations, messages;
    std::vector<std::uint32_t> src, rel, dst;
    SegmentIndex groups;

    EdgeSet(std::size_t n, std::size_t d)
        : nodes(n),
          features(random_matrix(n, d, 1)),
          relations(random_matrix(16, d, 2)),
          messages(random_matrix(8 * n, d, 3)),
          src(random_index(8 * n, n, 4)),
          rel(random_index(8 * n, 16, 5)),
          dst(random_index(8 * n, n, 6)),
          groups(SegmentIndex::build(dst, n)) {}
};

void BM_matmul_ref(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto x = random_matrix(n, n, 1), w = random_matrix(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(ref::matmul(x, w));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_matmul_omp(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto x = random_matrix(n, n, 1), w = random_matrix(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(x, w));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_segment_sum_ref(benchmark::State& state) {
    const EdgeSet e(static_cast<std::size_t>(state.range(0)), 64);
    for (auto _ : state) benchmark::DoNotOptimize(ref::segment_sum(e.messages, e.dst, e.nodes));
}

void BM_segment_sum_omp(benchmark::State& state) {
    const EdgeSet e(static_cast<std::size_t>(state.range(0)), 64);
    const auto mode = state.range(1) ? Reduction::Deterministic : Reduction::Fast;
    for (auto _ : state) benchmark::DoNotOptimize(segment_sum(e.messages, e.groups, mode));
}

void BM_gather_product_sum_ref(benchmark::State& state) {
    const EdgeSet e(static_cast<std::size_t>(state.range(0)), 64);
    for (auto _ : state)
        benchmark::DoNotOptimize(ref::gather_product_sum(e.features, e.src, e.relations, e.rel, e.dst, e.nodes));
}

void BM_gather_product_sum_omp(benchmark::State& state) {
    const EdgeSet e(static_cast<std::size_t>(state.range(0)), 64);
    const auto mode = state.range(1) ? Reduction::Deterministic : Reduction::Fast;
    for (auto _ : state)
        benchmark::DoNotOptimize(gather_product_sum(e.features, e.src, e.relations, e.rel, e.groups, mode));
}

}  // namespace

BENCHMARK(BM_matmul_ref)->Arg(128)->Arg(256);
BENCHMARK(BM_matmul_omp)->Arg(128)->Arg(256);
BENCHMARK(BM_segment_sum_ref)->Arg(1 << 12)->Arg(1 << 15);
// second argument: 0 = fast, 1 = deterministic
BENCHMARK(BM_segment_sum_omp)->ArgsProduct({{1 << 12, 1 << 15}, {0, 1}});
BENCHMARK(BM_gather_product_sum_ref)->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(BM_gather_product_sum_omp)->ArgsProduct({{1 << 12, 1 << 15}, {0, 1}});

BENCHMARK_MAIN();
