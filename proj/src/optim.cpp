#include "nola/optim.hpp"

#include <cmath>
#include <string>

#include "nola/error.hpp"

namespace nola {

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "adamw") return OptimizerKind::adamw;
  throw Error(ErrorCode::InvalidConfig, "unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "adamw";
}

void Optimizer::add(Matrix& param) {
  params_.push_back(&param);
  m_.emplace_back(param.rows(), param.cols());
  v_.emplace_back(param.rows(), param.cols());
}

void Optimizer::step(std::span<const Matrix* const> grads) {
  if (grads.size() != params_.size()) throw Error(ErrorCode::ShapeMismatch, "optimizer: gradient count");
  ++steps_;
  const double lr = config_.lr;
  const double wd = config_.weight_decay;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Matrix& p = *params_[i];
    const Matrix& g = *grads[i];
    if (!g.same_shape(p)) throw Error(ErrorCode::ShapeMismatch, "optimizer: gradient shape");
    for (std::size_t j = 0; j < p.size(); ++j) {
      double gj = g.data()[j];
      double& w = p.data()[j];
      if (config_.kind != OptimizerKind::adamw) gj += wd * w;
      if (config_.kind == OptimizerKind::sgd) {
        w -= lr * gj;
        continue;
      }
      if (config_.kind == OptimizerKind::adamw) w -= lr * wd * w;
      double& m = m_[i].data()[j];
      double& v = v_[i].data()[j];
      m = config_.beta1 * m + (1.0 - config_.beta1) * gj;
      v = config_.beta2 * v + (1.0 - config_.beta2) * gj * gj;
      w -= lr * (m / bc1) / (std::sqrt(v / bc2) + config_.eps);
    }
  }
}

}  // namespace nola
