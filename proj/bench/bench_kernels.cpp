#include <benchmark/benchmark.h>

#include "nola/kernels.hpp"
#include "nola/rng.hpp"

using namespace nola;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (double& v : m.values()) v = g(rng);
  return m;
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&)>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 256, 1), b = random_matrix(n, 256, 2);
  Matrix out;
  for (auto _ : state) {
    Gemm(a, b, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * 256));
}

template <void (*Softmax)(Matrix&)>
void BM_Softmax(benchmark::State& state) {
  const Matrix src = random_matrix(static_cast<std::size_t>(state.range(0)), 1000, 3);
  for (auto _ : state) {
    Matrix m = src;
    Softmax(m);
    benchmark::DoNotOptimize(m.values().data());
  }
}

template <void (*Pool)(const Matrix&, std::size_t, std::span<const double>, Matrix&, Matrix&)>
void BM_AttentionPool(benchmark::State& state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0)), seq = 66, dim = 64;
  const Matrix tokens = random_matrix(batch * seq, dim, 4);
  const Matrix q = random_matrix(1, dim, 5);
  Matrix pooled, weights;
  for (auto _ : state) {
    Pool(tokens, seq, q.row(0), pooled, weights);
    benchmark::DoNotOptimize(pooled.values().data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<kernels::serial::gemm_nt>)->Name("gemm_nt/serial")->Arg(128)->Arg(512);
BENCHMARK(BM_Gemm<kernels::omp::gemm_nt>)->Name("gemm_nt/omp")->Arg(128)->Arg(512);
BENCHMARK(BM_Softmax<kernels::serial::softmax_rows>)->Name("softmax_rows/serial")->Arg(512);
BENCHMARK(BM_Softmax<kernels::omp::softmax_rows>)->Name("softmax_rows/omp")->Arg(512);
BENCHMARK(BM_AttentionPool<kernels::serial::attention_pool>)->Name("attention_pool/serial")->Arg(256);
BENCHMARK(BM_AttentionPool<kernels::omp::attention_pool>)->Name("attention_pool/omp")->Arg(256);

BENCHMARK_MAIN();
