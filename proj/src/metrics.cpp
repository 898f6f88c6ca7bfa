#include "nola/metrics.hpp"

#include "nola/error.hpp"

namespace nola {

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw Error(ErrorCode::AlignmentMismatch, "truth/prediction length");
  Metrics m;
  m.n = truth.size();
  m.per_class_accuracy.assign(num_classes, 0.0);
  m.per_class_count.assign(num_classes, 0);
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (t >= num_classes || p >= num_classes) throw Error(ErrorCode::LabelOutOfRange, "label outside [0, C)");
    ++m.confusion[t][p];
    ++m.per_class_count[t];
    if (t == p) ++correct;
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (m.per_class_count[c] > 0)
      m.per_class_accuracy[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(m.per_class_count[c]);
  m.top1 = m.n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(m.n);
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  return {{"top1", m.top1},
          {"n", m.n},
          {"per_class_accuracy", m.per_class_accuracy},
          {"per_class_count", m.per_class_count},
          {"confusion", m.confusion}};
}

Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.top1 = j.at("top1").get<double>();
  m.n = j.at("n").get<std::size_t>();
  m.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
  m.per_class_count = j.at("per_class_count").get<std::vector<std::size_t>>();
  m.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
  return m;
}

double fisher_ratio(const Matrix& features, std::span<const int> labels, std::size_t num_classes) {
  if (labels.size() != features.rows()) throw Error(ErrorCode::AlignmentMismatch, "fisher_ratio: labels");
  const std::size_t d = features.cols();
  Matrix means(num_classes, d);
  std::vector<double> counts(num_classes, 0.0);
  std::vector<double> global(d, 0.0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    counts[c] += 1.0;
    for (std::size_t k = 0; k < d; ++k) {
      means(c, k) += features(i, k);
      global[k] += features(i, k);
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c] > 0)
      for (std::size_t k = 0; k < d; ++k) means(c, k) /= counts[c];
  for (double& g : global) g /= static_cast<double>(features.rows());

  double between = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = means(c, k) - global[k];
      between += counts[c] * diff * diff;
    }
  double within = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = features(i, k) - means(c, k);
      within += diff * diff;
    }
  }
  return within > 0.0 ? between / within : 0.0;
}

}  // namespace nola
