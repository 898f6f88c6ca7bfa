#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nola/augment.hpp"
#include "nola/cde.hpp"
#include "nola/dl_network.hpp"
#include "nola/encoders.hpp"
#include "nola/metrics.hpp"
#include "nola/optim.hpp"

namespace nola {

enum class TargetMode { hard, soft };

TargetMode target_mode_from_string(std::string_view name);
std::string_view to_string(TargetMode mode);

struct PromptTuneConfig {
  std::size_t num_prompts = 16;
  double lr = 2e-3;
  /// Reduced to the training split size when larger.
  std::size_t batch_size = 512;
  int epochs = 30;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double weight_decay = 0.01;
  double label_smoothing = 0.1;
  double logit_scale = kDefaultLogitScale;
  TargetMode targets = TargetMode::hard;
  bool train_prompts = true;
  bool train_classifier = true;
  /// Stop after this many epochs without a lower training loss; 0 disables.
  int patience = 0;
  /// Score the test split after every epoch (labels read under evaluation only).
  bool log_test_accuracy = false;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  /// AdamW, lr 2e-3.
  static PromptTuneConfig preset_main();
  /// Adam, lr 4e-3.
  static PromptTuneConfig preset_suppl();

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> test_top1;
  double wall_seconds = 0.0;
};

struct TunedModel {
  PromptSet prompts;
  CDEClassifier classifier;
  std::vector<EpochRecord> log;
  std::size_t steps = 0;
};

/// Pseudo-label source evaluated on weak views. Returns class probabilities.
using Labeller = std::function<ProbabilityBatch(const ImageBatch&)>;

Labeller dl_labeller(const DLNetwork& dl);
/// Frozen stage-(a) classifier over unprompted VLM features.
Labeller cde_labeller(const CDEClassifier& classifier, const EncoderBundle& bundle,
                      double logit_scale = kDefaultLogitScale);

/// Loss of the prompted classifier on one batch and its gradients with respect
/// to the prompt tokens and the classifier weights.
struct TuneStep {
  double loss = 0.0;
  Matrix grad_prompts;     ///< [V, d_model]
  Matrix grad_classifier;  ///< [C, d_vlm]
};

/// Smoothed CE of logit_scale * cos(F_v(images; prompts), w) against `targets`
/// (hard labels) or `soft_targets` (probabilities, when non-empty).
TuneStep tune_objective(const VisionEncoder& vision, const ImageBatch& images, const PromptSet& prompts,
                        const Matrix& classifier_weights, std::span<const int> targets, const Matrix& soft_targets,
                        double epsilon, double logit_scale);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Learns prompts and a copy of the classifier on the training split. Targets
/// come from `labeller` on the unaugmented view; predictions from the strong
/// view. Encoders stay frozen.
TunedModel tune_prompts(const EncoderBundle& bundle, const CDEClassifier& init_classifier, const Labeller& labeller,
                        const DatasetManifest& manifest, const PromptTuneConfig& config,
                        const EpochCallback& on_epoch = {}, std::shared_ptr<const ImageLoader> loader = nullptr);

/// Same with the DL network as labeller. Throws UntrainedDL.
TunedModel tune_prompts(const EncoderBundle& bundle, const CDEClassifier& init_classifier, const DLNetwork& dl,
                        const DatasetManifest& manifest, const PromptTuneConfig& config,
                        const EpochCallback& on_epoch = {}, std::shared_ptr<const ImageLoader> loader = nullptr);

/// Prompted predictions for every record of a split, in manifest order.
SplitPredictions tuned_predict(const TunedModel& model, const EncoderBundle& bundle, const DatasetManifest& manifest,
                               Split split, const EvalOptions& options = {});

/// Test-split top-1 of the tuned model; no augmentation.
Metrics evaluate(const TunedModel& model, const EncoderBundle& bundle, const DatasetManifest& manifest,
                 const EvalOptions& options = {});

/// CSV with columns epoch, loss, test_top1, wall_seconds.
void write_training_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path);

}  // namespace nola
