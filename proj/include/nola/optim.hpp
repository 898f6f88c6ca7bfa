#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "nola/tensor.hpp"

namespace nola {

enum class OptimizerKind { sgd, adam, adamw };

OptimizerKind optimizer_from_string(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled for AdamW, L2-coupled for Adam and SGD.
  double weight_decay = 0.01;
};

/// First-order optimizer over a fixed list of parameter matrices. The
/// optimizer keeps pointers; the parameters must outlive it.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void add(Matrix& param);
  /// One update; grads[i] pairs with the i-th added parameter.
  void step(std::span<const Matrix* const> grads);
  std::size_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<Matrix*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t steps_ = 0;
};

}  // namespace nola
