#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nola/cde.hpp"

namespace nola {

/// Per-class sample budget: k = clamp(floor(fraction * n_train / n_classes), floor, cap).
struct SelectionPolicy {
  double fraction = 0.2;
  int floor = 16;
  int cap = 512;

  void validate() const;
};

struct PseudoLabel {
  std::string sample_id;
  int label = 0;
  double confidence = 0.0;  ///< softmax probability of `label`

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> entries;  ///< grouped by class, most confident first
  int k_used = 0;
  std::vector<int> per_class_counts;
  SelectionPolicy policy;

  friend bool operator==(const PseudoLabelSet& a, const PseudoLabelSet& b) {
    return a.entries == b.entries && a.k_used == b.k_used && a.per_class_counts == b.per_class_counts;
  }
};

int compute_k(long long n_train, long long n_classes, const SelectionPolicy& policy = {});

/// Assigns every sample to its argmax class (lowest index on ties), ranks each
/// class's members by that class's probability (descending, then sample id
/// ascending) and keeps the first min(k, population).
PseudoLabelSet select_topk(const ProbabilityBatch& probs, std::span<const std::string> sample_ids, int k);

/// JSON lines: a header object {format, version, k_used, policy, count,
/// checksum, per_class_counts} followed by one {id, label, confidence} per entry.
void save_pseudo_labels(const PseudoLabelSet& set, const std::filesystem::path& path);
PseudoLabelSet load_pseudo_labels(const std::filesystem::path& path);

}  // namespace nola
