#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nola/dataset.hpp"
#include "nola/kernels.hpp"
#include "nola/tensor.hpp"

namespace nola {

struct EmbeddingBatch {
  Matrix vectors;  ///< [B, d]
  bool normalized = false;

  std::size_t size() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }
  /// Largest |row norm - 1| over the batch.
  double max_norm_error() const;
};

/// Token sequence of one image before any prompts are inserted.
struct ImageTokens {
  std::vector<double> cls;  ///< [d_model]
  Matrix patch_tokens;      ///< [M, d_model]
};

/// Learnable visual prompt tokens, inserted after CLS at the input layer.
struct PromptSet {
  Matrix tokens;  ///< [V, d_model]

  std::size_t count() const { return tokens.rows(); }
  std::size_t width() const { return tokens.cols(); }

  static PromptSet none(std::size_t d_model) { return {Matrix(0, d_model)}; }
  /// Uniform in [-r, r] with r = sqrt(6 / (d_model + V)).
  static PromptSet initialize(std::size_t count, std::size_t d_model, std::uint64_t seed);
  static PromptSet zeros(std::size_t count, std::size_t d_model) { return {Matrix(count, d_model)}; }
};

/// Named frozen weight tensor. Encoders own these and never expose them for
/// update; the checksum covers all of them.
struct Parameter {
  std::string name;
  Matrix value;
};

std::uint64_t checksum(std::span<const Parameter> params);

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t output_dim() const = 0;
  /// L2-normalized [texts, output_dim]. Throws EmptyInput for no texts.
  virtual EmbeddingBatch encode(std::span<const std::string> texts) const = 0;
  virtual std::uint64_t checksum() const = 0;
  /// Texts cut to the context length so far.
  virtual std::size_t truncation_count() const { return 0; }
};

/// Encoder-specific intermediate state kept by forward_prompted for the
/// backward pass.
struct ForwardCache {
  virtual ~ForwardCache() = default;
};

struct PromptedPass {
  EmbeddingBatch features;
  std::size_t num_prompts = 0;
  std::unique_ptr<ForwardCache> cache;
};

class VisionEncoder {
 public:
  virtual ~VisionEncoder() = default;

  virtual std::size_t width() const = 0;  ///< internal token width d_model
  virtual std::size_t output_dim() const = 0;
  virtual std::size_t input_size() const = 0;
  virtual std::size_t patch_size() const = 0;
  std::size_t patch_count() const {
    const std::size_t side = input_size() / patch_size();
    return side * side;
  }
  /// CLS + prompts + patches.
  std::size_t sequence_length(std::size_t num_prompts) const { return 1 + num_prompts + patch_count(); }

  virtual ImageTokens tokenize(const ImageBatch& batch, std::size_t index) const = 0;

  EmbeddingBatch encode(const ImageBatch& batch) const { return encode_prompted(batch, PromptSet::none(width())); }
  virtual EmbeddingBatch encode_prompted(const ImageBatch& batch, const PromptSet& prompts) const = 0;

  /// Differentiable path with respect to the prompt tokens only.
  virtual bool supports_prompt_gradients() const { return false; }
  virtual PromptedPass forward_prompted(const ImageBatch& batch, const PromptSet& prompts) const;
  /// d loss / d prompts given d loss / d features.
  virtual Matrix backward_prompts(const PromptedPass& pass, const Matrix& grad_features) const;

  virtual std::uint64_t checksum() const = 0;
  virtual std::size_t trainable_parameter_count() const { return 0; }

 protected:
  void check_batch(const ImageBatch& batch) const;
  void check_prompts(const PromptSet& prompts) const;
};

class SSLEncoder {
 public:
  virtual ~SSLEncoder() = default;
  virtual std::size_t output_dim() const = 0;
  virtual std::size_t input_size() const = 0;
  /// Raw (unnormalized) features [B, output_dim].
  virtual EmbeddingBatch encode(const ImageBatch& batch) const = 0;
  virtual std::uint64_t checksum() const = 0;
};

/// Text and vision encoders share d_vlm; the SSL encoder may differ.
struct EncoderBundle {
  std::shared_ptr<const TextEncoder> text;
  std::shared_ptr<const VisionEncoder> vision;
  std::shared_ptr<const SSLEncoder> ssl;

  std::size_t d_vlm() const { return vision->output_dim(); }
  std::size_t d_ssl() const { return ssl->output_dim(); }
  std::uint64_t text_checksum() const { return text->checksum(); }
  std::uint64_t vision_checksum() const { return vision->checksum(); }
  std::uint64_t ssl_checksum() const { return ssl->checksum(); }
  void validate() const;
};

EmbeddingBatch encode_text(const EncoderBundle& bundle, std::span<const std::string> texts);
EmbeddingBatch encode_image(const EncoderBundle& bundle, const ImageBatch& batch);
EmbeddingBatch encode_image_prompted(const EncoderBundle& bundle, const ImageBatch& batch, const PromptSet& prompts);
EmbeddingBatch encode_ssl(const EncoderBundle& bundle, const ImageBatch& batch);

// ---------------------------------------------------------------------------
// Toy encoders for desk-scale runs.

struct ToyEncoderConfig {
  std::size_t input_size = 32;
  std::size_t patch_size = 8;
  std::size_t d_model = 16;
  std::size_t d_vlm = 32;
  std::size_t ssl_width = 64;
  std::size_t d_ssl = 48;
  std::size_t text_buckets = 4096;
  std::size_t context_length = 77;
  kernels::Exec exec = kernels::Exec::parallel;
};

/// Lowercased alphanumeric words.
std::vector<std::string> toy_tokenize(std::string_view text);

/// Feature-hashed bag of words: every token hashes to a column of a fixed
/// Gaussian projection; an end-of-text column is always added; the sum is
/// L2-normalized.
class ToyTextEncoder : public TextEncoder {
 public:
  ToyTextEncoder(const ToyEncoderConfig& config, std::uint64_t seed);

  std::size_t output_dim() const override { return projection_.value.rows(); }
  EmbeddingBatch encode(std::span<const std::string> texts) const override;
  std::uint64_t checksum() const override;
  std::size_t truncation_count() const override { return truncated_.load(); }

  std::size_t bucket_of(std::string_view token) const;
  std::size_t end_of_text_column() const { return projection_.value.cols() - 1; }
  std::uint64_t hash_seed() const { return hash_seed_; }
  std::size_t context_length() const { return context_length_; }
  /// [d_vlm, buckets + 1]
  const Matrix& projection() const { return projection_.value; }

 private:
  Parameter projection_;
  std::uint64_t hash_seed_;
  std::size_t context_length_;
  mutable std::atomic<std::size_t> truncated_{0};
};

/// Single-block vision transformer with attention pooling:
///   x -> CLIP pixel normalization -> patch embedding + positions
///   sequence = [CLS, prompts..., patches...]
///   a = softmax(sequence * query), pooled = a^T sequence
///   out = CLS + W_value pooled, feature = normalize(W_proj out + b_proj)
class ToyVisionEncoder : public VisionEncoder {
 public:
  ToyVisionEncoder(const ToyEncoderConfig& config, std::uint64_t seed);

  std::size_t width() const override { return config_.d_model; }
  std::size_t output_dim() const override { return config_.d_vlm; }
  std::size_t input_size() const override { return config_.input_size; }
  std::size_t patch_size() const override { return config_.patch_size; }

  ImageTokens tokenize(const ImageBatch& batch, std::size_t index) const override;
  EmbeddingBatch encode_prompted(const ImageBatch& batch, const PromptSet& prompts) const override;

  bool supports_prompt_gradients() const override { return true; }
  PromptedPass forward_prompted(const ImageBatch& batch, const PromptSet& prompts) const override;
  Matrix backward_prompts(const PromptedPass& pass, const Matrix& grad_features) const override;

  std::uint64_t checksum() const override;
  std::span<const Parameter> parameters() const { return params_; }
  const Matrix& parameter(std::string_view name) const;

  static constexpr float kPixelMean[3] = {0.48145466f, 0.4578275f, 0.40821073f};
  static constexpr float kPixelStd[3] = {0.26862954f, 0.26130258f, 0.27577711f};

 private:
  Matrix patchify(const ImageBatch& batch) const;
  PromptedPass run(const ImageBatch& batch, const PromptSet& prompts, bool keep_cache) const;

  ToyEncoderConfig config_;
  std::vector<Parameter> params_;
};

/// Stand-in for a self-supervised backbone. Each image is standardized per
/// channel first, so features ignore global brightness and contrast (the
/// photometric invariance SSL training instills); then
///   tokens = tanh(W_embed patch + b + pos), feature = W_out flatten(tokens) + b_out.
class ToySSLEncoder : public SSLEncoder {
 public:
  ToySSLEncoder(const ToyEncoderConfig& config, std::uint64_t seed);

  std::size_t output_dim() const override { return config_.d_ssl; }
  std::size_t input_size() const override { return config_.input_size; }
  EmbeddingBatch encode(const ImageBatch& batch) const override;
  std::uint64_t checksum() const override;
  std::span<const Parameter> parameters() const { return params_; }

 private:
  ToyEncoderConfig config_;
  std::vector<Parameter> params_;
};

/// Uses the VLM vision encoder as the labelling backbone (DINO-replaced-by-
/// CLIP ablation).
class VisionAsSSLEncoder : public SSLEncoder {
 public:
  explicit VisionAsSSLEncoder(std::shared_ptr<const VisionEncoder> vision) : vision_(std::move(vision)) {}
  std::size_t output_dim() const override { return vision_->output_dim(); }
  std::size_t input_size() const override { return vision_->input_size(); }
  EmbeddingBatch encode(const ImageBatch& batch) const override { return vision_->encode(batch); }
  std::uint64_t checksum() const override { return vision_->checksum(); }

 private:
  std::shared_ptr<const VisionEncoder> vision_;
};

/// Deterministic bundle; text, vision and SSL weights come from independent
/// streams of `seed`.
EncoderBundle make_toy_encoders(const ToyEncoderConfig& config, std::uint64_t seed);

}  // namespace nola
