#include "nola/prompt_tune.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <spdlog/spdlog.h>

#include "nola/error.hpp"
#include "nola/kernels.hpp"
#include "nola/label_guard.hpp"
#include "nola/loss.hpp"
#include "nola/rng.hpp"

namespace nola {

TargetMode target_mode_from_string(std::string_view name) {
  if (name == "hard") return TargetMode::hard;
  if (name == "soft") return TargetMode::soft;
  throw Error(ErrorCode::InvalidConfig, "unknown target mode '" + std::string(name) + "'");
}

std::string_view to_string(TargetMode mode) { return mode == TargetMode::soft ? "soft" : "hard"; }

PromptTuneConfig PromptTuneConfig::preset_main() { return {}; }

PromptTuneConfig PromptTuneConfig::preset_suppl() {
  PromptTuneConfig c;
  c.optimizer = OptimizerKind::adam;
  c.lr = 4e-3;
  return c;
}

void PromptTuneConfig::validate() const {
  if (num_prompts < 1) throw Error(ErrorCode::InvalidConfig, "tune.num_prompts must be >= 1");
  if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "tune.lr must be >= 0");
  if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "tune.batch_size must be >= 1");
  if (epochs < 0) throw Error(ErrorCode::InvalidConfig, "tune.epochs must be >= 0");
  if (patience < 0) throw Error(ErrorCode::InvalidConfig, "tune.patience must be >= 0");
  if (!(logit_scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "tune.logit_scale must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw Error(ErrorCode::InvalidEpsilon, "tune.label_smoothing must be in [0, 1)");
}

Labeller dl_labeller(const DLNetwork& dl) {
  if (!dl.head.trained) throw Error(ErrorCode::UntrainedDL, "DL network has not been trained");
  return [dl](const ImageBatch& batch) { return dl_predict(dl, batch); };
}

Labeller cde_labeller(const CDEClassifier& classifier, const EncoderBundle& bundle, double logit_scale) {
  return [classifier, bundle, logit_scale](const ImageBatch& batch) {
    return predict(classifier, encode_image(bundle, batch), logit_scale);
  };
}

TuneStep tune_objective(const VisionEncoder& vision, const ImageBatch& images, const PromptSet& prompts,
                        const Matrix& classifier_weights, std::span<const int> targets, const Matrix& soft_targets,
                        double epsilon, double logit_scale) {
  if (classifier_weights.cols() != vision.output_dim())
    throw Error(ErrorCode::DimMismatch, "classifier dim does not match vision output dim");
  const PromptedPass pass = vision.forward_prompted(images, prompts);

  Matrix f = pass.features.vectors;
  const std::vector<double> f_norms = kernels::normalize_rows(f);
  Matrix w = classifier_weights;
  const std::vector<double> w_norms = kernels::normalize_rows(w);
  Matrix logits;
  kernels::gemm_nt(f, w, logits);
  for (double& v : logits.values()) v *= logit_scale;

  TuneStep step;
  Matrix g;
  step.loss = soft_targets.empty() ? smoothed_cross_entropy(logits, targets, epsilon, &g)
                                   : soft_cross_entropy(logits, soft_targets, epsilon, &g);

  const std::size_t batch = f.rows(), classes = w.rows(), dim = w.cols();
  Matrix grad_f(batch, dim);
  Matrix grad_w(classes, dim);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < classes; ++c) {
      const double s = logit_scale * g(b, c);
      for (std::size_t k = 0; k < dim; ++k) {
        grad_f(b, k) += s * w(c, k);
        grad_w(c, k) += s * f(b, k);
      }
    }
  // Through x -> x / |x|: (g - x_hat (x_hat . g)) / |x|.
  const auto unnormalize = [](Matrix& grad, const Matrix& unit, const std::vector<double>& norms) {
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      const double proj = dot(grad.row(r), unit.row(r));
      const double inv = norms[r] > 0.0 ? 1.0 / norms[r] : 0.0;
      for (std::size_t k = 0; k < grad.cols(); ++k) grad(r, k) = (grad(r, k) - unit(r, k) * proj) * inv;
    }
  };
  unnormalize(grad_f, f, f_norms);
  unnormalize(grad_w, w, w_norms);

  step.grad_classifier = std::move(grad_w);
  step.grad_prompts = prompts.count() > 0 ? vision.backward_prompts(pass, grad_f) : Matrix(0, prompts.width());
  return step;
}

TunedModel tune_prompts(const EncoderBundle& bundle, const CDEClassifier& init_classifier, const Labeller& labeller,
                        const DatasetManifest& manifest, const PromptTuneConfig& config, const EpochCallback& on_epoch,
                        std::shared_ptr<const ImageLoader> loader) {
  TrainingScope training;
  config.validate();
  bundle.validate();
  if (init_classifier.dim() != bundle.d_vlm())
    throw Error(ErrorCode::DimMismatch, "classifier dim " + std::to_string(init_classifier.dim()) + " != d_vlm " +
                                            std::to_string(bundle.d_vlm()));
  if (config.train_prompts && !bundle.vision->supports_prompt_gradients())
    throw Error(ErrorCode::Unsupported, "vision encoder has no prompt gradient path");
  if (!loader) loader = std::make_shared<ImageLoader>(bundle.vision->input_size());

  TunedModel model;
  model.prompts = PromptSet::initialize(config.num_prompts, bundle.vision->width(), config.seed);
  model.classifier = init_classifier;

  Optimizer opt({config.optimizer, config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  if (config.train_prompts) opt.add(model.prompts.tokens);
  if (config.train_classifier) opt.add(model.classifier.weights);

  const std::size_t n = manifest.train_items.size();
  const std::size_t bs = std::min(config.batch_size, std::max<std::size_t>(n, 1));
  const AugmentationPipeline strong = AugmentationPipeline::strong(config.augment);
  const auto start = std::chrono::steady_clock::now();
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    BatchStream stream(manifest, Split::train, bs, mix_seed(config.seed, 0x74756e65ULL + static_cast<std::uint64_t>(epoch)),
                       loader);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < stream.num_batches(); ++i) {
      const ImageBatch weak = weak_augment(stream.batch(i));
      const ProbabilityBatch target_probs = labeller(weak);
      const ImageBatch view =
          strong_augment(weak, strong, mix_seed(config.seed, (static_cast<std::uint64_t>(epoch) << 32) + i));
      const std::vector<int> hard = target_probs.predictions();
      const Matrix soft = config.targets == TargetMode::soft ? target_probs.probs : Matrix();

      const TuneStep step = tune_objective(*bundle.vision, view, model.prompts, model.classifier.weights, hard, soft,
                                           config.label_smoothing, config.logit_scale);
      std::vector<const Matrix*> grads;
      if (config.train_prompts) grads.push_back(&step.grad_prompts);
      if (config.train_classifier) grads.push_back(&step.grad_classifier);
      opt.step(grads);
      ++model.steps;
      total += step.loss * static_cast<double>(weak.size());
      seen += weak.size();
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = total / static_cast<double>(seen);
    if (config.log_test_accuracy && !manifest.test_items.empty())
      rec.test_top1 = evaluate(model, bundle, manifest, {.logit_scale = config.logit_scale, .loader = loader}).top1;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    model.log.push_back(rec);
    spdlog::debug("tune epoch {} loss {:.6f}", rec.epoch, rec.loss);
    if (on_epoch) on_epoch(rec);

    if (config.patience > 0) {
      if (rec.loss < best - 1e-12) {
        best = rec.loss;
        stale = 0;
      } else if (++stale >= config.patience) {
        spdlog::info("tune: early stop after epoch {}", rec.epoch);
        break;
      }
    }
  }
  return model;
}

TunedModel tune_prompts(const EncoderBundle& bundle, const CDEClassifier& init_classifier, const DLNetwork& dl,
                        const DatasetManifest& manifest, const PromptTuneConfig& config, const EpochCallback& on_epoch,
                        std::shared_ptr<const ImageLoader> loader) {
  if (dl.head.trained && dl.head.input_dim() != dl.ssl->output_dim())
    throw Error(ErrorCode::DimMismatch, "alignment head does not match SSL encoder");
  return tune_prompts(bundle, init_classifier, dl_labeller(dl), manifest, config, on_epoch, std::move(loader));
}

SplitPredictions tuned_predict(const TunedModel& model, const EncoderBundle& bundle, const DatasetManifest& manifest,
                               Split split, const EvalOptions& options) {
  const auto loader = options.loader ? options.loader : std::make_shared<ImageLoader>(bundle.vision->input_size());
  SplitPredictions out;
  Matrix logits = map_split(
      manifest, split, options.batch_size, *loader,
      [&](const ImageBatch& batch) {
        return predict(model.classifier, encode_image_prompted(bundle, batch, model.prompts), options.logit_scale).logits;
      },
      &out.ids);
  out.probs = make_probabilities(std::move(logits), options.logit_scale);
  return out;
}

Metrics evaluate(const TunedModel& model, const EncoderBundle& bundle, const DatasetManifest& manifest,
                 const EvalOptions& options) {
  const SplitPredictions p = tuned_predict(model, bundle, manifest, Split::test, options);
  return score_predictions(manifest, Split::test, p.ids, p.probs.predictions());
}

void write_training_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  out << "epoch,loss,test_top1,wall_seconds\n";
  out.precision(10);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.loss << ',';
    if (r.test_top1) out << *r.test_top1;
    out << ',' << r.wall_seconds << '\n';
  }
}

}  // namespace nola
