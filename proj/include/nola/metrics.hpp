#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "nola/tensor.hpp"

namespace nola {

struct Metrics {
  double top1 = 0.0;
  std::size_t n = 0;
  std::vector<double> per_class_accuracy;  ///< 0 for classes with no samples
  std::vector<std::size_t> per_class_count;
  /// confusion[truth][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes);

nlohmann::json to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);

/// trace(S_between) / trace(S_within) of labelled features.
double fisher_ratio(const Matrix& features, std::span<const int> labels, std::size_t num_classes);

}  // namespace nola
