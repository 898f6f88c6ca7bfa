#include "nola/cde.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nola/error.hpp"
#include "nola/kernels.hpp"
#include "nola/label_guard.hpp"

namespace nola {

std::vector<int> ProbabilityBatch::predictions() const {
  std::vector<int> out(probs.rows());
  for (std::size_t b = 0; b < probs.rows(); ++b) out[b] = static_cast<int>(argmax(logits.row(b)));
  return out;
}

ProbabilityBatch make_probabilities(Matrix logits, double logit_scale) {
  ProbabilityBatch p;
  p.logit_scale = logit_scale;
  p.probs = logits;
  kernels::softmax_rows(p.probs);
  p.logits = std::move(logits);
  return p;
}

std::vector<double> class_embedding(const Matrix& embeddings) {
  if (embeddings.rows() == 0) throw Error(ErrorCode::EmptyInput, "class has no description embeddings");
  std::vector<std::size_t> order(embeddings.rows());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ra = embeddings.row(a);
    auto rb = embeddings.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  std::vector<double> mean(embeddings.cols(), 0.0);
  for (std::size_t i : order) {
    auto r = embeddings.row(i);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += r[k];
  }
  for (double& v : mean) v /= static_cast<double>(embeddings.rows());
  const double n = l2_norm(mean);
  if (n < 1e-8) throw Error(ErrorCode::DegenerateClass, "mean description embedding vanishes");
  for (double& v : mean) v /= n;
  return mean;
}

CDEClassifier build_cde(const DescriptionSet& descriptions, const EncoderBundle& bundle) {
  if (descriptions.class_names.empty()) throw Error(ErrorCode::EmptyClassList, "description set has no classes");
  CDEClassifier cls;
  cls.class_names = descriptions.class_names;
  cls.weights = Matrix(descriptions.class_names.size(), bundle.d_vlm());
  for (std::size_t c = 0; c < descriptions.class_names.size(); ++c) {
    const auto& name = descriptions.class_names[c];
    auto it = descriptions.per_class.find(name);
    if (it == descriptions.per_class.end() || it->second.empty()) throw Error(ErrorCode::MissingClass, name);
    EmbeddingBatch emb = encode_text(bundle, it->second);
    // Text encoders normalize already; re-normalizing keeps adapters honest.
    kernels::normalize_rows(emb.vectors, kernels::Exec::serial);
    std::vector<double> row;
    try {
      row = class_embedding(emb.vectors);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateClass) throw Error(ErrorCode::DegenerateClass, "class '" + name + "'");
      throw;
    }
    std::copy(row.begin(), row.end(), cls.weights.row(c).begin());
  }
  cls.row_normalized = true;
  return cls;
}

ProbabilityBatch predict(const CDEClassifier& classifier, const EmbeddingBatch& features, double logit_scale) {
  if (features.dim() != classifier.dim())
    throw Error(ErrorCode::DimMismatch, "feature dim " + std::to_string(features.dim()) + " != classifier dim " +
                                            std::to_string(classifier.dim()));
  if (!(logit_scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "logit_scale must be positive");
  Matrix w = classifier.weights;
  kernels::normalize_rows(w);
  Matrix f = features.vectors;
  kernels::normalize_rows(f);
  Matrix logits;
  kernels::gemm_nt(f, w, logits);
  for (double& v : logits.values()) v *= logit_scale;
  return make_probabilities(std::move(logits), logit_scale);
}

Matrix map_split(const DatasetManifest& manifest, Split split, std::size_t batch_size, const ImageLoader& loader,
                 const BatchFeatureFn& fn, std::vector<std::string>* ids) {
  const auto& items = manifest.items(split);
  if (items.empty()) throw Error(ErrorCode::EmptySplit, std::string(to_string(split)));
  if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  Matrix out;
  for (std::size_t lo = 0; lo < items.size(); lo += batch_size) {
    const std::size_t hi = std::min(items.size(), lo + batch_size);
    std::vector<const ImageRecord*> recs;
    for (std::size_t i = lo; i < hi; ++i) recs.push_back(&items[i]);
    const ImageBatch batch = loader.load_batch(recs);
    const Matrix rows = fn(batch);
    if (rows.rows() != batch.size()) throw Error(ErrorCode::ShapeMismatch, "map_split: row count");
    if (out.empty()) out = Matrix(items.size(), rows.cols());
    for (std::size_t r = 0; r < rows.rows(); ++r) std::copy(rows.row(r).begin(), rows.row(r).end(), out.row(lo + r).begin());
    if (ids) ids->insert(ids->end(), batch.ids.begin(), batch.ids.end());
  }
  return out;
}

namespace {

std::shared_ptr<const ImageLoader> loader_for(const EvalOptions& options, const EncoderBundle& bundle) {
  return options.loader ? options.loader : std::make_shared<ImageLoader>(bundle.vision->input_size());
}

}  // namespace

SplitPredictions zero_shot_predict(const CDEClassifier& classifier, const EncoderBundle& bundle,
                                   const DatasetManifest& manifest, Split split, const EvalOptions& options) {
  const auto loader = loader_for(options, bundle);
  SplitPredictions out;
  Matrix logits = map_split(
      manifest, split, options.batch_size, *loader,
      [&](const ImageBatch& batch) { return predict(classifier, encode_image(bundle, batch), options.logit_scale).logits; },
      &out.ids);
  out.probs = make_probabilities(std::move(logits), options.logit_scale);
  return out;
}

Metrics score_predictions(const DatasetManifest& manifest, Split split, const std::vector<std::string>& ids,
                          const std::vector<int>& predictions) {
  if (ids.size() != predictions.size()) throw Error(ErrorCode::AlignmentMismatch, "ids/predictions length");
  EvaluationScope eval;
  const auto& items = manifest.items(split);
  std::vector<int> truth, pred;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const ImageRecord* rec = nullptr;
    if (i < items.size() && items[i].id() == ids[i]) {
      rec = &items[i];
    } else if (auto idx = manifest.find(split, ids[i])) {
      rec = &items[*idx];
    }
    if (rec == nullptr) throw Error(ErrorCode::AlignmentMismatch, "unknown id " + ids[i]);
    if (auto label = rec->true_label()) {
      truth.push_back(*label);
      pred.push_back(predictions[i]);
    }
  }
  return compute_metrics(truth, pred, manifest.num_classes());
}

Metrics zero_shot_eval(const CDEClassifier& classifier, const EncoderBundle& bundle, const DatasetManifest& manifest,
                       Split split, const EvalOptions& options) {
  const SplitPredictions p = zero_shot_predict(classifier, bundle, manifest, split, options);
  return score_predictions(manifest, split, p.ids, p.probs.predictions());
}

}  // namespace nola
