#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nola/dataset.hpp"
#include "nola/descriptions.hpp"
#include "nola/encoders.hpp"

namespace nola {

/// Seeded Gaussian-cluster image benchmark.
///
/// Each image carries two class cues. A spatial pattern, drawn from a
/// per-class Gaussian in a low-dimensional latent space and rendered through
/// fixed low-frequency basis images, is visible to both encoders. A global
/// colour tint, also drawn per class, is removed by the SSL encoder's per-image
/// standardization and so only reaches the VLM. Per-image brightness and
/// contrast nuisance perturbs the VLM features but not the SSL features.
struct SyntheticConfig {
  std::size_t num_classes = 4;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 100;
  std::size_t image_size = 32;
  std::size_t latent_dim = 6;
  double class_separation = 1.0;  ///< norm of each class's latent mean
  double latent_noise = 0.45;     ///< per-coordinate std around the mean
  double pattern_amplitude = 0.12;
  double tint_separation = 0.15;  ///< radius of class tints in the chroma plane
  double tint_noise = 0.03;
  double brightness = 0.35;  ///< uniform in [-b, b]
  double contrast = 0.7;     ///< log-uniform in [-c, c]
  double pixel_noise = 0.02;

  std::size_t completions_per_prompt = 3;
  std::size_t words_per_description = 12;
  std::size_t candidate_words = 160;
  /// Pull of each class's description target toward the next class.
  double description_mix = 0.3;

  std::uint64_t seed = 0;

  void validate() const;
};

/// Offline stand-in for the LLM: completions are bags of vocabulary words
/// chosen greedily so their text embedding approaches a per-class target in
/// the joint embedding space. Deterministic in (seed, prompt).
class SyntheticLLMClient : public LLMClient {
 public:
  SyntheticLLMClient(std::shared_ptr<const TextEncoder> text, std::vector<std::string> class_names,
                     Matrix targets, std::size_t completions, std::size_t words, std::size_t candidates,
                     std::uint64_t seed);

  std::vector<std::string> complete(const std::string& prompt) override;

  static const std::vector<std::string>& vocabulary();

 private:
  std::shared_ptr<const TextEncoder> text_;
  std::vector<std::string> class_names_;
  Matrix targets_;
  std::size_t completions_, words_, candidates_;
  std::uint64_t seed_;
};

struct SyntheticBenchmark {
  std::filesystem::path manifest_path;
  std::filesystem::path descriptions_path;
  DatasetManifest manifest;
  DescriptionSet descriptions;
};

/// Question templates used for the synthetic description cache.
const std::vector<std::string>& synthetic_questions();
/// Class-name templates appended to every class's descriptions.
const std::vector<std::string>& synthetic_class_templates();

/// Writes PNG images, manifest.json and descriptions.json under `dir`. The
/// description targets are VLM embeddings of each class's noise-free
/// prototype image; no sample labels are consulted.
SyntheticBenchmark make_synthetic_benchmark(const SyntheticConfig& config, const EncoderBundle& bundle,
                                            const std::filesystem::path& dir);

}  // namespace nola
