#include "nola/label_guard.hpp"

#include <atomic>

namespace nola {
namespace {

std::atomic<int> g_training_depth{0};
std::atomic<int> g_evaluation_depth{0};
std::atomic<std::int64_t> g_violations{0};
std::atomic<std::int64_t> g_total{0};

}  // namespace

TrainingScope::TrainingScope() { ++g_training_depth; }
TrainingScope::~TrainingScope() { --g_training_depth; }

EvaluationScope::EvaluationScope() { ++g_evaluation_depth; }
EvaluationScope::~EvaluationScope() { --g_evaluation_depth; }

void note_label_access() {
  ++g_total;
  if (g_training_depth.load() > 0 && g_evaluation_depth.load() == 0) ++g_violations;
}

std::int64_t label_access_violations() { return g_violations.load(); }
std::int64_t label_accesses_total() { return g_total.load(); }

void reset_label_access_counters() {
  g_violations = 0;
  g_total = 0;
}

}  // namespace nola
