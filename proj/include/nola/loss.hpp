#pragma once

#include <span>

#include "nola/tensor.hpp"

namespace nola {

/// Label-smoothed cross-entropy from logits:
///   mean_b  -sum_c q_bc log softmax(logits_b)_c,  q_b = (1 - eps) onehot(t_b) + eps / C.
/// Writes d loss / d logits = (softmax - q) / B into `grad_logits` when given.
double smoothed_cross_entropy(const Matrix& logits, std::span<const int> targets, double epsilon,
                              Matrix* grad_logits = nullptr);

/// Same loss evaluated on probabilities (rows must be positive and sum to 1).
double smoothed_cross_entropy_from_probs(const Matrix& probs, std::span<const int> targets, double epsilon);

/// Soft-target variant: q_b = (1 - eps) target_b + eps / C.
double soft_cross_entropy(const Matrix& logits, const Matrix& target_probs, double epsilon,
                          Matrix* grad_logits = nullptr);

}  // namespace nola
