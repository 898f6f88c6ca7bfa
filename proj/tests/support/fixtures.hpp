#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nola/dataset.hpp"
#include "nola/descriptions.hpp"
#include "nola/encoders.hpp"
#include "nola/pipeline.hpp"

namespace nola::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "nola-test");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// 16x16 inputs, two 8x8 patches per side, d_model 8, d_vlm 8, d_ssl 6.
ToyEncoderConfig tiny_toy_config();
EncoderBundle tiny_bundle(std::uint64_t seed = 3);

ImageBatch random_batch(std::size_t n, std::size_t side, std::uint64_t seed);
Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0);

/// Class c images share a mean colour and a horizontal ramp; per-image noise.
/// Writes PNGs plus manifest.json under `dir` and returns the loaded manifest.
DatasetManifest write_cluster_dataset(const std::filesystem::path& dir, std::size_t num_classes,
                                      std::size_t train_per_class, std::size_t test_per_class, std::size_t side,
                                      std::uint64_t seed);

/// K short descriptions per class mentioning the class name.
DescriptionSet simple_descriptions(const DatasetManifest& manifest, std::size_t k = 2);

/// Small synthetic experiment that runs end to end in a few seconds.
ExperimentConfig small_experiment(const std::filesystem::path& output_dir, std::uint64_t seed = 0);

/// The bundled synthetic benchmark config with output_dir and seeds replaced.
ExperimentConfig benchmark_experiment(const std::filesystem::path& output_dir, std::uint64_t seed);

std::string read_file(const std::filesystem::path& path);

}  // namespace nola::testing
