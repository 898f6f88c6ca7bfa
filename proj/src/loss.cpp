#include "nola/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "nola/error.hpp"

namespace nola {
namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw Error(ErrorCode::InvalidEpsilon, std::to_string(epsilon));
}

void check_targets(std::span<const int> targets, std::size_t rows, std::size_t classes) {
  if (targets.size() != rows) throw Error(ErrorCode::AlignmentMismatch, "targets/rows length");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= classes) throw Error(ErrorCode::LabelOutOfRange, std::to_string(t));
}

// log-softmax of one row
void log_softmax(std::span<const double> in, std::vector<double>& out) {
  out.resize(in.size());
  const double mx = *std::max_element(in.begin(), in.end());
  double sum = 0.0;
  for (double v : in) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] - lse;
}

}  // namespace

double smoothed_cross_entropy(const Matrix& logits, std::span<const int> targets, double epsilon, Matrix* grad_logits) {
  check_epsilon(epsilon);
  check_targets(targets, logits.rows(), logits.cols());
  Matrix q(logits.rows(), logits.cols(), epsilon / static_cast<double>(logits.cols()));
  for (std::size_t b = 0; b < logits.rows(); ++b) q(b, static_cast<std::size_t>(targets[b])) += 1.0 - epsilon;
  return soft_cross_entropy(logits, q, 0.0, grad_logits);
}

double smoothed_cross_entropy_from_probs(const Matrix& probs, std::span<const int> targets, double epsilon) {
  check_epsilon(epsilon);
  check_targets(targets, probs.rows(), probs.cols());
  if (probs.rows() == 0) throw Error(ErrorCode::EmptyInput, "no rows");
  const double c = static_cast<double>(probs.cols());
  double total = 0.0;
  for (std::size_t b = 0; b < probs.rows(); ++b)
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      const double q = epsilon / c + (static_cast<int>(k) == targets[b] ? 1.0 - epsilon : 0.0);
      if (q > 0.0) total -= q * std::log(probs(b, k));
    }
  return total / static_cast<double>(probs.rows());
}

double soft_cross_entropy(const Matrix& logits, const Matrix& target_probs, double epsilon, Matrix* grad_logits) {
  check_epsilon(epsilon);
  if (!logits.same_shape(target_probs)) throw Error(ErrorCode::ShapeMismatch, "logits/targets shape");
  if (logits.rows() == 0) throw Error(ErrorCode::EmptyInput, "no rows");
  const double batch = static_cast<double>(logits.rows());
  const double c = static_cast<double>(logits.cols());
  if (grad_logits) *grad_logits = Matrix(logits.rows(), logits.cols());
  std::vector<double> logp;
  double total = 0.0;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    log_softmax(logits.row(b), logp);
    for (std::size_t k = 0; k < logits.cols(); ++k) {
      const double q = (1.0 - epsilon) * target_probs(b, k) + epsilon / c;
      total -= q * logp[k];
      if (grad_logits) (*grad_logits)(b, k) = (std::exp(logp[k]) - q) / batch;
    }
  }
  return total / batch;
}

}  // namespace nola
