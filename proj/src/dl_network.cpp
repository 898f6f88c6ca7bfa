#include "nola/dl_network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "nola/error.hpp"
#include "nola/label_guard.hpp"
#include "nola/loss.hpp"
#include "nola/rng.hpp"

namespace nola {

void AlignTrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::InvalidConfig, "align.epochs must be >= 0");
  if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "align.lr must be >= 0");
  if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "align.batch_size must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw Error(ErrorCode::InvalidEpsilon, "align.label_smoothing must be in [0, 1)");
}

namespace {

Matrix uniform(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

// out[n, k] = x[n, d] * w[d, k] + bias[k]
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& bias) {
  Matrix out(x.rows(), w.cols());
  for (std::size_t n = 0; n < x.rows(); ++n) {
    auto o = out.row(n);
    for (std::size_t k = 0; k < w.cols(); ++k) o[k] = bias(0, k);
    for (std::size_t d = 0; d < x.cols(); ++d) {
      const double xv = x(n, d);
      for (std::size_t k = 0; k < w.cols(); ++k) o[k] += xv * w(d, k);
    }
  }
  return out;
}

// grad_w = x^T g, grad_b = colsum(g), grad_x = g w^T (when requested)
void affine_backward(const Matrix& x, const Matrix& w, const Matrix& g, Matrix& grad_w, Matrix& grad_b,
                     Matrix* grad_x) {
  grad_w = Matrix(w.rows(), w.cols());
  grad_b = Matrix(1, w.cols());
  for (std::size_t n = 0; n < x.rows(); ++n) {
    for (std::size_t d = 0; d < x.cols(); ++d) {
      const double xv = x(n, d);
      for (std::size_t k = 0; k < w.cols(); ++k) grad_w(d, k) += xv * g(n, k);
    }
    for (std::size_t k = 0; k < w.cols(); ++k) grad_b(0, k) += g(n, k);
  }
  if (grad_x) {
    *grad_x = Matrix(x.rows(), x.cols());
    for (std::size_t n = 0; n < x.rows(); ++n)
      for (std::size_t d = 0; d < x.cols(); ++d) (*grad_x)(n, d) = dot(g.row(n), w.row(d));
  }
}

Matrix relu(Matrix m) {
  for (double& v : m.values()) v = std::max(0.0, v);
  return m;
}

}  // namespace

AlignmentHead AlignmentHead::initialize(std::size_t d_ssl, std::size_t num_classes, std::size_t hidden,
                                        std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x68656164ULL));
  AlignmentHead h;
  std::size_t fan_in = d_ssl;
  if (hidden > 0) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_ssl));
    h.hidden_weight = uniform(d_ssl, hidden, bound, rng);
    h.hidden_bias = uniform(1, hidden, bound, rng);
    fan_in = hidden;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  h.weight = uniform(fan_in, num_classes, bound, rng);
  h.bias = uniform(1, num_classes, bound, rng);
  return h;
}

Matrix AlignmentHead::forward(const Matrix& features) const {
  if (features.cols() != input_dim())
    throw Error(ErrorCode::DimMismatch, "head expects " + std::to_string(input_dim()) + " features");
  if (!has_hidden()) return affine(features, weight, bias);
  return affine(relu(affine(features, hidden_weight, hidden_bias)), weight, bias);
}

AlignmentHead::Gradients AlignmentHead::backward(const Matrix& features, const Matrix& grad_logits) const {
  Gradients g;
  if (!has_hidden()) {
    affine_backward(features, weight, grad_logits, g.weight, g.bias, nullptr);
    return g;
  }
  const Matrix pre = affine(features, hidden_weight, hidden_bias);
  const Matrix act = relu(pre);
  Matrix grad_act;
  affine_backward(act, weight, grad_logits, g.weight, g.bias, &grad_act);
  for (std::size_t i = 0; i < pre.size(); ++i)
    if (pre.data()[i] <= 0.0) grad_act.data()[i] = 0.0;
  affine_backward(features, hidden_weight, grad_act, g.hidden_weight, g.hidden_bias, nullptr);
  return g;
}

double AlignmentHead::loss(const Matrix& features, std::span<const int> labels, double epsilon,
                           Gradients* grads) const {
  const Matrix logits = forward(features);
  if (grads == nullptr) return smoothed_cross_entropy(logits, labels, epsilon);
  Matrix grad_logits;
  const double l = smoothed_cross_entropy(logits, labels, epsilon, &grad_logits);
  *grads = backward(features, grad_logits);
  return l;
}

AlignmentHead train_head(const Matrix& features, std::span<const int> labels, std::size_t num_classes,
                         const AlignTrainConfig& config, std::vector<double>* loss_history) {
  config.validate();
  if (features.rows() == 0) throw Error(ErrorCode::EmptyPseudoSet, "no training samples");
  if (labels.size() != features.rows()) throw Error(ErrorCode::AlignmentMismatch, "features/labels length");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw Error(ErrorCode::LabelOutOfRange, std::to_string(l));

  AlignmentHead head = AlignmentHead::initialize(features.cols(), num_classes, config.hidden, config.seed);
  Optimizer opt({config.optimizer, config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  if (head.has_hidden()) {
    opt.add(head.hidden_weight);
    opt.add(head.hidden_bias);
  }
  opt.add(head.weight);
  opt.add(head.bias);

  std::vector<std::size_t> order(features.rows());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::min(config.batch_size, features.rows());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, 0x65706f6368ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      Matrix x(hi - lo, features.cols());
      std::vector<int> y(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        std::copy(features.row(order[i]).begin(), features.row(order[i]).end(), x.row(i - lo).begin());
        y[i - lo] = labels[order[i]];
      }
      AlignmentHead::Gradients g;
      epoch_loss += head.loss(x, y, config.label_smoothing, &g) * static_cast<double>(hi - lo);
      if (head.has_hidden()) {
        const Matrix* grads[] = {&g.hidden_weight, &g.hidden_bias, &g.weight, &g.bias};
        opt.step(grads);
      } else {
        const Matrix* grads[] = {&g.weight, &g.bias};
        opt.step(grads);
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (loss_history) loss_history->push_back(epoch_loss);
    spdlog::debug("align epoch {} loss {:.6f}", epoch + 1, epoch_loss);
  }
  head.trained = true;
  return head;
}

DLNetwork train_alignment(const EncoderBundle& bundle, const PseudoLabelSet& pseudo, const DatasetManifest& manifest,
                          const AlignTrainConfig& config, std::shared_ptr<const ImageLoader> loader) {
  TrainingScope training;
  if (pseudo.entries.empty()) throw Error(ErrorCode::EmptyPseudoSet, "pseudo-label set is empty");
  config.validate();
  const std::size_t num_classes = manifest.num_classes();
  if (!loader) loader = std::make_shared<ImageLoader>(bundle.ssl->input_size());

  std::unordered_map<std::string, std::size_t> index;
  const auto& train = manifest.train_items;
  for (std::size_t i = 0; i < train.size(); ++i) index.emplace(train[i].id(), i);

  std::vector<const ImageRecord*> records;
  std::vector<int> labels;
  for (const auto& e : pseudo.entries) {
    auto it = index.find(e.sample_id);
    if (it == index.end()) throw Error(ErrorCode::AlignmentMismatch, "pseudo label for unknown id " + e.sample_id);
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= num_classes)
      throw Error(ErrorCode::LabelOutOfRange, e.sample_id);
    records.push_back(&train[it->second]);
    labels.push_back(e.label);
  }

  Matrix features(records.size(), bundle.d_ssl());
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < records.size(); lo += kChunk) {
    const std::size_t hi = std::min(records.size(), lo + kChunk);
    const ImageBatch batch = loader->load_batch(std::span(records).subspan(lo, hi - lo));
    const EmbeddingBatch f = encode_ssl(bundle, batch);
    for (std::size_t r = 0; r < f.size(); ++r) std::copy(f.vectors.row(r).begin(), f.vectors.row(r).end(), features.row(lo + r).begin());
  }

  DLNetwork dl;
  dl.ssl = bundle.ssl;
  dl.head = train_head(features, labels, num_classes, config, &dl.loss_history);
  if (!dl.loss_history.empty())
    spdlog::info("alignment head: {} samples, loss {:.4f} -> {:.4f}", labels.size(), dl.loss_history.front(),
                 dl.loss_history.back());
  return dl;
}

ProbabilityBatch dl_predict(const DLNetwork& dl, const ImageBatch& batch) {
  if (!dl.head.trained) throw Error(ErrorCode::UntrainedHead, "alignment head has not been trained");
  if (!dl.ssl) throw Error(ErrorCode::InvalidConfig, "DL network has no SSL encoder");
  const EmbeddingBatch f = dl.ssl->encode(batch);
  return make_probabilities(dl.head.forward(f.vectors), 1.0);
}

}  // namespace nola
