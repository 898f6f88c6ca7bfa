#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nola/cde.hpp"
#include "nola/dl_network.hpp"
#include "nola/prompt_tune.hpp"
#include "nola/tensor.hpp"

namespace nola {

inline constexpr int kCheckpointVersion = 1;

/// On-disk layout:
///   "NOLA-TENSORS\n"
///   uint64 little-endian header length
///   JSON header {kind, format_version, payload_checksum, tensors: [{name, rows, cols}], meta}
///   float64 payload, tensors concatenated row-major
struct TensorFile {
  std::string kind;
  int format_version = kCheckpointVersion;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(std::string_view name) const;
};

/// Writes atomically (temporary file then rename).
void write_tensor_file(const TensorFile& file, const std::filesystem::path& path);
/// Throws MissingCheckpoint, CorruptFile (bad magic, size or checksum) or
/// VersionMismatch; `expected_kind` is checked when non-empty.
TensorFile read_tensor_file(const std::filesystem::path& path, std::string_view expected_kind = {});

void save_classifier(const CDEClassifier& classifier, const std::string& dataset, const std::filesystem::path& path);
CDEClassifier load_classifier(const std::filesystem::path& path);

struct HeadMeta {
  std::string dataset;
  AlignTrainConfig config;
};
void save_head(const AlignmentHead& head, const HeadMeta& meta, const std::filesystem::path& path);
AlignmentHead load_head(const std::filesystem::path& path, HeadMeta* meta = nullptr);

/// `meta` carries the config snapshot and seeds.
void save_tuned(const TunedModel& model, const nlohmann::json& meta, const std::filesystem::path& path);
TunedModel load_tuned(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

nlohmann::json to_json(const AlignTrainConfig& c);
AlignTrainConfig align_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PromptTuneConfig& c);
PromptTuneConfig tune_config_from_json(const nlohmann::json& j);

}  // namespace nola
