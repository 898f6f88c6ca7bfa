#pragma once

#include <span>
#include <vector>

#include "nola/tensor.hpp"

// Data-parallel inner loops. Every kernel exists twice: a plain serial
// reference and an OpenMP version that parallelizes over independent rows or
// samples. The two produce bit-identical results (no cross-thread
// reductions), which tests assert directly.

namespace nola::kernels {

enum class Exec { serial, parallel };

namespace serial {

/// out[m,n] = a[m,k] * b[n,k]^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out);
void softmax_rows(Matrix& m);
/// Scales every row to unit L2 norm; returns the original norms.
std::vector<double> normalize_rows(Matrix& m);
/// tokens holds B consecutive blocks of seq_len rows. For each block:
/// weights = softmax(tokens * query), pooled = weights^T * tokens.
void attention_pool(const Matrix& tokens, std::size_t seq_len, std::span<const double> query,
                    Matrix& pooled, Matrix& weights);

}  // namespace serial

namespace omp {

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out);
void softmax_rows(Matrix& m);
std::vector<double> normalize_rows(Matrix& m);
void attention_pool(const Matrix& tokens, std::size_t seq_len, std::span<const double> query,
                    Matrix& pooled, Matrix& weights);

}  // namespace omp

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, Exec exec = Exec::parallel);
void softmax_rows(Matrix& m, Exec exec = Exec::parallel);
std::vector<double> normalize_rows(Matrix& m, Exec exec = Exec::parallel);
void attention_pool(const Matrix& tokens, std::size_t seq_len, std::span<const double> query,
                    Matrix& pooled, Matrix& weights, Exec exec = Exec::parallel);

/// Softmax of a single row in place (max-shifted).
void softmax_inplace(std::span<double> row);

}  // namespace nola::kernels
