#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "nola/cde.hpp"
#include "nola/error.hpp"
#include "nola/prompt_tune.hpp"

using namespace nola;
using nola::testing::TempDir;

namespace {

struct TuneFixture {
  TempDir dir;
  EncoderBundle bundle = nola::testing::tiny_bundle();
  DatasetManifest manifest;
  CDEClassifier classifier;

  TuneFixture() {
    manifest = nola::testing::write_cluster_dataset(dir.path(), 3, 8, 4, 16, 2);
    classifier = build_cde(nola::testing::simple_descriptions(manifest, 3), bundle);
  }

  PromptTuneConfig config(int epochs = 2) const {
    PromptTuneConfig c;
    c.num_prompts = 3;
    c.epochs = epochs;
    c.batch_size = 8;
    c.lr = 1e-2;
    c.seed = 4;
    return c;
  }

  Labeller labeller() const { return cde_labeller(classifier, bundle); }
};

}  // namespace

TEST(TuneObjective, PromptGradientMatchesFiniteDifferences) {
  const auto bundle = nola::testing::tiny_bundle();
  const ImageBatch images = nola::testing::random_batch(4, 16, 1);
  PromptSet prompts = PromptSet::initialize(3, bundle.vision->width(), 2);
  for (double& v : prompts.tokens.values()) v *= 5.0;
  const Matrix w = nola::testing::random_matrix(3, bundle.d_vlm(), 3);
  const std::vector<int> y = {0, 2, 1, 2};
  for (double scale : {1.0, 10.0}) {
    const TuneStep step = tune_objective(*bundle.vision, images, prompts, w, y, {}, 0.1, scale);
    const auto f = [&] { return tune_objective(*bundle.vision, images, prompts, w, y, {}, 0.1, scale).loss; };
    const Matrix num = nola::oracle::numeric_gradient(f, prompts.tokens);
    EXPECT_LT(nola::oracle::relative_error(step.grad_prompts, num), 1e-3) << "scale " << scale;
  }
}

TEST(TuneObjective, ClassifierGradientMatchesFiniteDifferences) {
  const auto bundle = nola::testing::tiny_bundle();
  const ImageBatch images = nola::testing::random_batch(5, 16, 4);
  const PromptSet prompts = PromptSet::initialize(4, bundle.vision->width(), 5);
  Matrix w = nola::testing::random_matrix(4, bundle.d_vlm(), 6);
  const std::vector<int> y = {0, 1, 2, 3, 1};
  const TuneStep step = tune_objective(*bundle.vision, images, prompts, w, y, {}, 0.1, 10.0);
  const auto f = [&] { return tune_objective(*bundle.vision, images, prompts, w, y, {}, 0.1, 10.0).loss; };
  EXPECT_LT(nola::oracle::relative_error(step.grad_classifier, nola::oracle::numeric_gradient(f, w)), 1e-3);
}

TEST(TuneObjective, SoftTargetGradientsMatchFiniteDifferences) {
  const auto bundle = nola::testing::tiny_bundle();
  const ImageBatch images = nola::testing::random_batch(3, 16, 7);
  PromptSet prompts = PromptSet::initialize(2, bundle.vision->width(), 8);
  Matrix w = nola::testing::random_matrix(3, bundle.d_vlm(), 9);
  const Matrix soft = make_probabilities(nola::testing::random_matrix(3, 3, 10)).probs;
  const TuneStep step = tune_objective(*bundle.vision, images, prompts, w, {}, soft, 0.1, 5.0);
  const auto f = [&] { return tune_objective(*bundle.vision, images, prompts, w, {}, soft, 0.1, 5.0).loss; };
  EXPECT_LT(nola::oracle::relative_error(step.grad_classifier, nola::oracle::numeric_gradient(f, w)), 1e-3);
  EXPECT_LT(nola::oracle::relative_error(step.grad_prompts, nola::oracle::numeric_gradient(f, prompts.tokens)), 1e-3);
}

TEST(TuneObjective, ClassifierDimChecked) {
  const auto bundle = nola::testing::tiny_bundle();
  const std::vector<int> y = {0};
  EXPECT_THROW(tune_objective(*bundle.vision, nola::testing::random_batch(1, 16, 0),
                              PromptSet::initialize(1, bundle.vision->width(), 0), Matrix(2, 5), y, {}, 0.1, 1.0),
               Error);
}

TEST(TunePrompts, ZeroLearningRateLeavesParameters) {
  TuneFixture fx;
  PromptTuneConfig cfg = fx.config(1);
  cfg.lr = 0.0;
  const TunedModel m = tune_prompts(fx.bundle, fx.classifier, fx.labeller(), fx.manifest, cfg);
  EXPECT_GT(m.steps, 0u);
  EXPECT_EQ(m.prompts.tokens, PromptSet::initialize(cfg.num_prompts, fx.bundle.vision->width(), cfg.seed).tokens);
  EXPECT_EQ(m.classifier.weights, fx.classifier.weights);
}

TEST(TunePrompts, FrozenEncodersTrainablePromptsAndClassifier) {
  TuneFixture fx;
  const std::uint64_t v = fx.bundle.vision_checksum(), t = fx.bundle.text_checksum(), g = fx.bundle.ssl_checksum();
  const PromptTuneConfig cfg = fx.config(3);
  const TunedModel m = tune_prompts(fx.bundle, fx.classifier, fx.labeller(), fx.manifest, cfg);
  EXPECT_EQ(fx.bundle.vision_checksum(), v);
  EXPECT_EQ(fx.bundle.text_checksum(), t);
  EXPECT_EQ(fx.bundle.ssl_checksum(), g);
  EXPECT_NE(m.prompts.tokens, PromptSet::initialize(cfg.num_prompts, fx.bundle.vision->width(), cfg.seed).tokens);
  EXPECT_NE(m.classifier.weights, fx.classifier.weights);
  EXPECT_EQ(m.log.size(), 3u);
}

TEST(TunePrompts, SettingsFreezeExactlyOneComponent) {
  TuneFixture fx;
  const PromptSet init = PromptSet::initialize(3, fx.bundle.vision->width(), 4);

  PromptTuneConfig prompts_only = fx.config();
  prompts_only.train_classifier = false;
  const TunedModel a = tune_prompts(fx.bundle, fx.classifier, fx.labeller(), fx.manifest, prompts_only);
  EXPECT_NE(a.prompts.tokens, init.tokens);
  EXPECT_EQ(a.classifier.weights, fx.classifier.weights);

  PromptTuneConfig classifier_only = fx.config();
  classifier_only.train_prompts = false;
  const TunedModel b = tune_prompts(fx.bundle, fx.classifier, fx.labeller(), fx.manifest, classifier_only);
  EXPECT_EQ(b.prompts.tokens, init.tokens);
  EXPECT_NE(b.classifier.weights, fx.classifier.weights);
}

TEST(TunePrompts, DeterministicForFixedSeed) {
  TuneFixture fx;
  const TunedModel a = tune_prompts(fx.bundle, fx.classifier, fx.labeller(), fx.manifest, fx.config());
  const TunedModel b = tune_prompts(fx.bundle, fx.classifier, fx.labeller(), fx.manifest, fx.config());
  EXPECT_EQ(a.prompts.tokens, b.prompts.tokens);
  EXPECT_EQ(a.classifier.weights, b.classifier.weights);
}

TEST(TunePrompts, LabellerSeesUnaugmentedBatches) {
  TuneFixture fx;
  const Labeller inner = fx.labeller();
  std::size_t calls = 0;
  const ImageLoader loader(16);
  const Labeller checking = [&](const ImageBatch& batch) {
    std::vector<const ImageRecord*> recs;
    for (const auto& id : batch.ids)
      for (const auto& r : fx.manifest.train_items)
        if (r.id() == id) recs.push_back(&r);
    EXPECT_EQ(loader.load_batch(recs).pixels, batch.pixels);
    ++calls;
    return inner(batch);
  };
  tune_prompts(fx.bundle, fx.classifier, checking, fx.manifest, fx.config(1));
  EXPECT_EQ(calls, 3u);
}

TEST(TunePrompts, UntrainedDLAndDimMismatch) {
  TuneFixture fx;
  const DLNetwork dl{fx.bundle.ssl, AlignmentHead::initialize(fx.bundle.d_ssl(), 3, 0, 0), {}};
  try {
    tune_prompts(fx.bundle, fx.classifier, dl, fx.manifest, fx.config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UntrainedDL);
  }
  CDEClassifier wrong = fx.classifier;
  wrong.weights = Matrix(3, fx.bundle.d_vlm() + 1);
  try {
    tune_prompts(fx.bundle, wrong, fx.labeller(), fx.manifest, fx.config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
}

TEST(Evaluate, NoPromptsUntunedEqualsZeroShot) {
  TuneFixture fx;
  TunedModel m;
  m.prompts = PromptSet::none(fx.bundle.vision->width());
  m.classifier = fx.classifier;
  const Metrics tuned = evaluate(m, fx.bundle, fx.manifest);
  const Metrics zs = zero_shot_eval(fx.classifier, fx.bundle, fx.manifest, Split::test);
  EXPECT_EQ(tuned.top1, zs.top1);
  EXPECT_EQ(tuned.per_class_accuracy, zs.per_class_accuracy);
  const SplitPredictions p = tuned_predict(m, fx.bundle, fx.manifest, Split::test);
  EXPECT_EQ(p.probs.probs.rows(), fx.manifest.test_items.size());
}

TEST(Evaluate, PromptedWithoutPromptsEqualsUnprompted) {
  const auto bundle = nola::testing::tiny_bundle();
  const ImageBatch b = nola::testing::random_batch(4, 16, 3);
  EXPECT_EQ(encode_image_prompted(bundle, b, PromptSet::none(bundle.vision->width())).vectors,
            encode_image(bundle, b).vectors);
}

TEST(TuneConfig, PresetsAndValidation) {
  const PromptTuneConfig main = PromptTuneConfig::preset_main();
  EXPECT_EQ(main.optimizer, OptimizerKind::adamw);
  EXPECT_DOUBLE_EQ(main.lr, 2e-3);
  EXPECT_EQ(main.batch_size, 512u);
  EXPECT_EQ(main.num_prompts, 16u);
  EXPECT_EQ(main.epochs, 30);
  EXPECT_DOUBLE_EQ(main.label_smoothing, 0.1);
  const PromptTuneConfig suppl = PromptTuneConfig::preset_suppl();
  EXPECT_EQ(suppl.optimizer, OptimizerKind::adam);
  EXPECT_DOUBLE_EQ(suppl.lr, 4e-3);

  PromptTuneConfig bad = main;
  bad.num_prompts = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = main;
  bad.label_smoothing = 1.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(TrainingLog, CsvColumns) {
  TempDir dir;
  std::vector<EpochRecord> log = {{1, 0.5, 0.25, 0.1}, {2, 0.4, std::nullopt, 0.2}};
  write_training_log(log, dir / "log.csv");
  std::istringstream in(nola::testing::read_file(dir / "log.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,loss,test_top1,wall_seconds");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("1,0.5,0.25,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("2,0.4,,", 0), 0u);
}
