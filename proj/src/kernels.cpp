#include "nola/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nola::kernels {

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

namespace {

void check_gemm(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols()) throw std::invalid_argument("gemm_nt: inner dimension mismatch");
  if (out.rows() != a.rows() || out.cols() != b.rows()) out = Matrix(a.rows(), b.rows());
}

inline void gemm_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  auto ai = a.row(i);
  for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ai, b.row(j));
}

inline double normalize_row(std::span<double> r) {
  const double n = l2_norm(r);
  if (n > 0.0)
    for (double& v : r) v /= n;
  return n;
}

inline void pool_block(const Matrix& tokens, std::size_t seq_len, std::span<const double> query,
                       Matrix& pooled, Matrix& weights, std::size_t b) {
  auto w = weights.row(b);
  for (std::size_t t = 0; t < seq_len; ++t) w[t] = dot(tokens.row(b * seq_len + t), query);
  softmax_inplace(w);
  auto p = pooled.row(b);
  std::fill(p.begin(), p.end(), 0.0);
  for (std::size_t t = 0; t < seq_len; ++t) {
    auto x = tokens.row(b * seq_len + t);
    for (std::size_t c = 0; c < p.size(); ++c) p[c] += w[t] * x[c];
  }
}

void check_pool(const Matrix& tokens, std::size_t seq_len, std::span<const double> query,
                Matrix& pooled, Matrix& weights) {
  if (seq_len == 0 || tokens.rows() % seq_len != 0)
    throw std::invalid_argument("attention_pool: token rows not a multiple of seq_len");
  if (query.size() != tokens.cols()) throw std::invalid_argument("attention_pool: query width");
  const std::size_t batch = tokens.rows() / seq_len;
  if (pooled.rows() != batch || pooled.cols() != tokens.cols()) pooled = Matrix(batch, tokens.cols());
  if (weights.rows() != batch || weights.cols() != seq_len) weights = Matrix(batch, seq_len);
}

}  // namespace

namespace serial {

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  check_gemm(a, b, out);
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_row(a, b, out, i);
}

void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) softmax_inplace(m.row(i));
}

std::vector<double> normalize_rows(Matrix& m) {
  std::vector<double> norms(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) norms[i] = normalize_row(m.row(i));
  return norms;
}

void attention_pool(const Matrix& tokens, std::size_t seq_len, std::span<const double> query,
                    Matrix& pooled, Matrix& weights) {
  check_pool(tokens, seq_len, query, pooled, weights);
  for (std::size_t b = 0; b < pooled.rows(); ++b) pool_block(tokens, seq_len, query, pooled, weights, b);
}

}  // namespace serial

namespace omp {

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  check_gemm(a, b, out);
  const auto rows = static_cast<long>(a.rows());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) gemm_row(a, b, out, static_cast<std::size_t>(i));
}

void softmax_rows(Matrix& m) {
  const auto rows = static_cast<long>(m.rows());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) softmax_inplace(m.row(static_cast<std::size_t>(i)));
}

std::vector<double> normalize_rows(Matrix& m) {
  std::vector<double> norms(m.rows());
  const auto rows = static_cast<long>(m.rows());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    norms[r] = normalize_row(m.row(r));
  }
  return norms;
}

void attention_pool(const Matrix& tokens, std::size_t seq_len, std::span<const double> query,
                    Matrix& pooled, Matrix& weights) {
  check_pool(tokens, seq_len, query, pooled, weights);
  const auto batch = static_cast<long>(pooled.rows());
#pragma omp parallel for schedule(static)
  for (long b = 0; b < batch; ++b)
    pool_block(tokens, seq_len, query, pooled, weights, static_cast<std::size_t>(b));
}

}  // namespace omp

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, Exec exec) {
  exec == Exec::parallel ? omp::gemm_nt(a, b, out) : serial::gemm_nt(a, b, out);
}

void softmax_rows(Matrix& m, Exec exec) {
  exec == Exec::parallel ? omp::softmax_rows(m) : serial::softmax_rows(m);
}

std::vector<double> normalize_rows(Matrix& m, Exec exec) {
  return exec == Exec::parallel ? omp::normalize_rows(m) : serial::normalize_rows(m);
}

void attention_pool(const Matrix& tokens, std::size_t seq_len, std::span<const double> query,
                    Matrix& pooled, Matrix& weights, Exec exec) {
  exec == Exec::parallel ? omp::attention_pool(tokens, seq_len, query, pooled, weights)
                         : serial::attention_pool(tokens, seq_len, query, pooled, weights);
}

}  // namespace nola::kernels
