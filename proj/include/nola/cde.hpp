#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nola/dataset.hpp"
#include "nola/descriptions.hpp"
#include "nola/encoders.hpp"
#include "nola/metrics.hpp"
#include "nola/tensor.hpp"

namespace nola {

inline constexpr double kDefaultLogitScale = 100.0;

/// Class-description-embedding classifier: row c is the renormalized mean of
/// class c's normalized description embeddings.
struct CDEClassifier {
  Matrix weights;  ///< [C, d_vlm]
  std::vector<std::string> class_names;
  bool row_normalized = true;

  std::size_t num_classes() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }
};

struct ProbabilityBatch {
  Matrix logits;  ///< [B, C]
  Matrix probs;   ///< row-softmax of logits
  double logit_scale = 1.0;

  std::size_t size() const { return probs.rows(); }
  std::vector<int> predictions() const;
};

/// Softmax over `logits` (already scaled).
ProbabilityBatch make_probabilities(Matrix logits, double logit_scale = 1.0);

/// Throws DegenerateClass when a class's mean embedding has norm < 1e-8.
CDEClassifier build_cde(const DescriptionSet& descriptions, const EncoderBundle& bundle);

/// Unit-norm mean of the rows of `embeddings`, summed in a canonical
/// (lexicographic) row order so the result is independent of input order.
std::vector<double> class_embedding(const Matrix& embeddings);

/// logits[b,c] = logit_scale * cos(features[b], weights[c]).
ProbabilityBatch predict(const CDEClassifier& classifier, const EmbeddingBatch& features,
                         double logit_scale = kDefaultLogitScale);

struct EvalOptions {
  std::size_t batch_size = 256;
  double logit_scale = kDefaultLogitScale;
  std::shared_ptr<const ImageLoader> loader;  ///< defaults to the vision encoder's input size
};

/// Probabilities for every record of a split, in manifest order. Reads no labels.
struct SplitPredictions {
  std::vector<std::string> ids;
  ProbabilityBatch probs;
};

SplitPredictions zero_shot_predict(const CDEClassifier& classifier, const EncoderBundle& bundle,
                                   const DatasetManifest& manifest, Split split, const EvalOptions& options = {});

/// Top-1 / per-class accuracy against ground truth (the only label read).
Metrics zero_shot_eval(const CDEClassifier& classifier, const EncoderBundle& bundle, const DatasetManifest& manifest,
                       Split split, const EvalOptions& options = {});

/// Scores predictions for labelled records of `split`; ids index into it.
Metrics score_predictions(const DatasetManifest& manifest, Split split, const std::vector<std::string>& ids,
                          const std::vector<int>& predictions);

using BatchFeatureFn = std::function<Matrix(const ImageBatch&)>;

/// Runs `fn` over a split in manifest order and stacks the resulting rows.
Matrix map_split(const DatasetManifest& manifest, Split split, std::size_t batch_size, const ImageLoader& loader,
                 const BatchFeatureFn& fn, std::vector<std::string>* ids = nullptr);

}  // namespace nola
