#pragma once

#include <cstdint>

namespace nola {

// Ground-truth labels may only be read by evaluation code. Training stages
// open a TrainingScope; any label read while a training scope is open and no
// EvaluationScope is nested inside it counts as a violation.

class TrainingScope {
 public:
  TrainingScope();
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;
};

class EvaluationScope {
 public:
  EvaluationScope();
  ~EvaluationScope();
  EvaluationScope(const EvaluationScope&) = delete;
  EvaluationScope& operator=(const EvaluationScope&) = delete;
};

/// Called by ImageRecord on every label read.
void note_label_access();

std::int64_t label_access_violations();
std::int64_t label_accesses_total();
void reset_label_access_counters();

}  // namespace nola
