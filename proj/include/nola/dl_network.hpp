#pragma once

#include <memory>
#include <span>
#include <vector>

#include "nola/cde.hpp"
#include "nola/encoders.hpp"
#include "nola/optim.hpp"
#include "nola/pseudo_select.hpp"

namespace nola {

struct AlignTrainConfig {
  int epochs = 50;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  double label_smoothing = 0.1;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double weight_decay = 0.01;
  /// 0 selects the linear head; > 0 adds one ReLU hidden layer of this width.
  std::size_t hidden = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Maps SSL features to class logits. Linear (weight [d_ssl, C], bias [C])
/// unless a hidden layer is configured.
struct AlignmentHead {
  Matrix hidden_weight;  ///< [d_ssl, H]; empty for the linear head
  Matrix hidden_bias;    ///< [1, H]
  Matrix weight;         ///< [d_in, C]
  Matrix bias;           ///< [1, C]
  bool trained = false;

  struct Gradients {
    Matrix hidden_weight, hidden_bias, weight, bias;
  };

  /// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  static AlignmentHead initialize(std::size_t d_ssl, std::size_t num_classes, std::size_t hidden, std::uint64_t seed);

  bool has_hidden() const { return !hidden_weight.empty(); }
  std::size_t input_dim() const { return has_hidden() ? hidden_weight.rows() : weight.rows(); }
  std::size_t num_classes() const { return weight.cols(); }

  Matrix forward(const Matrix& features) const;
  Gradients backward(const Matrix& features, const Matrix& grad_logits) const;
  /// Smoothed CE of the head on (features, labels); fills gradients if asked.
  double loss(const Matrix& features, std::span<const int> labels, double epsilon, Gradients* grads = nullptr) const;
};

/// Frozen SSL encoder plus trained alignment head; the auto-labeller.
struct DLNetwork {
  std::shared_ptr<const SSLEncoder> ssl;
  AlignmentHead head;
  std::vector<double> loss_history;  ///< mean training loss per epoch
};

/// Trains a head on precomputed features (rows aligned with labels).
AlignmentHead train_head(const Matrix& features, std::span<const int> labels, std::size_t num_classes,
                         const AlignTrainConfig& config, std::vector<double>* loss_history = nullptr);

/// Trains the head on the SSL features of the pseudo-labelled training
/// samples only. The SSL encoder is left untouched.
DLNetwork train_alignment(const EncoderBundle& bundle, const PseudoLabelSet& pseudo, const DatasetManifest& manifest,
                          const AlignTrainConfig& config, std::shared_ptr<const ImageLoader> loader = nullptr);

/// softmax(h(g_s(batch))). Throws UntrainedHead before training.
ProbabilityBatch dl_predict(const DLNetwork& dl, const ImageBatch& batch);

}  // namespace nola
