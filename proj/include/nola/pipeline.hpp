#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nola/cde.hpp"
#include "nola/dl_network.hpp"
#include "nola/encoders.hpp"
#include "nola/metrics.hpp"
#include "nola/prompt_tune.hpp"
#include "nola/pseudo_select.hpp"
#include "nola/synthetic.hpp"

namespace nola {

enum class PseudoLabellerKind { dl, cde };
enum class SSLSource { dino, vlm_vision };

struct EncoderSettings {
  std::string kind = "toy";
  std::uint64_t seed = 0;  ///< toy weights; stands in for the pretrained checkpoint
  ToyEncoderConfig toy;
  std::filesystem::path vlm_checkpoint;
  std::filesystem::path ssl_checkpoint;
  SSLSource ssl_source = SSLSource::dino;
};

struct DescriptionSettings {
  std::filesystem::path cache;
  std::vector<std::string> templates;
  std::vector<std::string> class_templates;
  /// Empty endpoint: no LLM; the cache must exist.
  HttpClientSettings llm;
};

struct Seeds {
  std::uint64_t data = 0;
  std::uint64_t align = 0;
  std::uint64_t tune = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::filesystem::path manifest;
  std::optional<SyntheticConfig> synthetic;  ///< generated under output_dir/dataset
  DescriptionSettings descriptions;
  EncoderSettings encoders;
  SelectionPolicy selection;
  AlignTrainConfig align;
  PromptTuneConfig tune;
  PseudoLabellerKind pseudo_labeller = PseudoLabellerKind::dl;
  std::size_t eval_batch_size = 256;
  double logit_scale = kDefaultLogitScale;
  std::filesystem::path output_dir;
  Seeds seeds;

  /// Checks values and that every referenced input exists.
  void validate() const;
};

/// Parses YAML (JSON is accepted too). Relative paths resolve against the
/// file's directory. The `seeds` block with data, align and tune is required.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
nlohmann::json to_json(const ExperimentConfig& config);

std::string_view to_string(PseudoLabellerKind kind);
std::string_view to_string(SSLSource source);

/// Ablation variants; each changes exactly one stage.
enum class AblationVariant { no_dl, clip_dl, frozen_cde, frozen_prompts };
AblationVariant ablation_from_string(std::string_view name);
std::string_view to_string(AblationVariant variant);
/// Applies the variant and moves output_dir to <output_dir>/ablations/<variant>.
ExperimentConfig apply_ablation(ExperimentConfig config, AblationVariant variant);

EncoderBundle make_encoders(const EncoderSettings& settings);

inline constexpr const char* kStageNames[] = {"data", "cde", "pseudo", "align", "tune"};

struct RunOptions {
  /// Skip stages whose checkpoint exists with a matching fingerprint.
  bool resume = false;
  /// Stop cleanly after this stage; empty runs everything.
  std::string stop_after;
  /// Completed run whose matching stages are reused instead of recomputed.
  std::optional<std::filesystem::path> reuse_from;
};

struct StageRecord {
  std::string fingerprint;
  double seconds = 0.0;
  bool reused = false;
  bool skipped = false;
  std::optional<Metrics> metrics;
};

struct MetricsReport {
  std::string name;
  std::string version;
  /// zero_shot_cde, dl_network, nola_final; nullopt when the stage did not run.
  std::map<std::string, std::optional<double>> stage_accuracies;
  std::map<std::string, Metrics> per_class;
  std::map<std::string, double> timings;
  std::map<std::string, double> diagnostics;
  std::vector<std::string> class_names;
  nlohmann::json config;
  std::size_t label_access_violations = 0;
  bool complete = false;
};

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
/// Fixed-width table of the stage accuracies and per-class breakdown.
std::string format_report(const MetricsReport& report);
/// Mean of each stage accuracy over reports (stages missing anywhere are dropped).
MetricsReport average_reports(const std::vector<MetricsReport>& reports);

/// Runs data -> cde -> pseudo -> align -> tune, checkpointing every stage under
/// output_dir. Failures surface as StageError naming the stage; files written
/// by earlier stages stay in place.
MetricsReport run_pipeline(const ExperimentConfig& config, const RunOptions& options = {});

/// Artifact locations inside a run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path dataset_dir() const { return root / "dataset"; }
  std::filesystem::path stage_record(std::string_view stage) const { return root / "stages" / (std::string(stage) + ".json"); }
  std::filesystem::path classifier() const { return root / "cde_classifier.ckpt"; }
  std::filesystem::path pseudo_labels() const { return root / "pseudo_labels.jsonl"; }
  std::filesystem::path head() const { return root / "alignment_head.ckpt"; }
  std::filesystem::path tuned() const { return root / "tuned_model.ckpt"; }
  std::filesystem::path training_log() const { return root / "training_log.csv"; }
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path config_snapshot() const { return root / "config.json"; }
  std::filesystem::path lock() const { return root / ".lock"; }
};

/// Manifest and descriptions the data stage of a run resolved to.
struct RunInputs {
  DatasetManifest manifest;
  DescriptionSet descriptions;
};
RunInputs load_run_inputs(const std::filesystem::path& run_dir);

enum class EmbeddingSource { clip_base, nola_tuned };
EmbeddingSource embedding_source_from_string(std::string_view name);  ///< base|tuned
std::string_view to_string(EmbeddingSource source);

struct EmbeddingDump {
  EmbeddingSource source = EmbeddingSource::clip_base;
  std::vector<std::string> ids;
  std::vector<std::optional<int>> labels;
  Matrix vectors;
};

/// One row per test image. The tuned source needs the run's tuned checkpoint
/// (MissingCheckpoint otherwise). Writes CSV: sample_id,label,e0,...
EmbeddingDump export_embeddings(EmbeddingSource source, const ExperimentConfig& config,
                                const std::filesystem::path& out);

/// Exclusive per-directory lock; a lock left by a dead process is taken over.
class RunLock {
 public:
  explicit RunLock(std::filesystem::path path);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

std::string version_string();

}  // namespace nola
