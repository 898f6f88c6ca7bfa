#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "nola/cde.hpp"
#include "nola/error.hpp"
#include "nola/rng.hpp"

using namespace nola;
using nola::testing::TempDir;

namespace {

DescriptionSet two_class_set(std::vector<std::string> a, std::vector<std::string> b) {
  DescriptionSet set;
  set.class_names = {"cat", "dog"};
  set.per_class["cat"] = std::move(a);
  set.per_class["dog"] = std::move(b);
  return set;
}

}  // namespace

TEST(BuildCDE, MatchesDirectRecomputation) {
  const auto bundle = make_toy_encoders({}, 3);
  DescriptionSet set;
  Rng rng(1);
  for (int c = 0; c < 5; ++c) {
    const std::string name = "class" + std::to_string(c);
    set.class_names.push_back(name);
    for (int k = 0; k < 4 + c; ++k)
      set.per_class[name].push_back("a " + name + " has trait " + std::to_string(rng() % 1000) + " and shape " +
                                    std::to_string(k));
  }
  const CDEClassifier cls = build_cde(set, bundle);
  const Matrix want = nola::oracle::class_description_matrix(set, *bundle.text);
  EXPECT_LT(max_abs_diff(cls.weights, want), 1e-6);
  EXPECT_EQ(cls.class_names, set.class_names);
  for (std::size_t c = 0; c < cls.num_classes(); ++c) EXPECT_NEAR(l2_norm(cls.weights.row(c)), 1.0, 1e-12);
}

TEST(BuildCDE, PermutationInvariant) {
  const auto bundle = make_toy_encoders({}, 3);
  std::vector<std::string> a = {"small furry pet", "whiskers and a tail", "purrs when content", "chases mice"};
  std::vector<std::string> b = {"loyal canine", "wagging tail", "barks at strangers"};
  const CDEClassifier ref = build_cde(two_class_set(a, b), bundle);
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(a.begin(), a.end(), rng);
    std::shuffle(b.begin(), b.end(), rng);
    EXPECT_EQ(build_cde(two_class_set(a, b), bundle).weights, ref.weights);
  }
}

TEST(BuildCDE, SingleDescriptionRowIsItsEmbedding) {
  const auto bundle = make_toy_encoders({}, 3);
  const CDEClassifier cls = build_cde(two_class_set({"a small furry pet"}, {"a loyal canine"}), bundle);
  const std::vector<std::string> texts = {"a small furry pet", "a loyal canine"};
  EXPECT_LT(max_abs_diff(cls.weights, encode_text(bundle, texts).vectors), 1e-12);
}

TEST(ClassEmbedding, OrthogonalPairMean) {
  const auto row = class_embedding(Matrix{{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_NEAR(row[0], 0.70710678, 1e-8);
  EXPECT_NEAR(row[1], 0.70710678, 1e-8);
}

TEST(ClassEmbedding, CancellationIsDegenerate) {
  try {
    class_embedding(Matrix{{0.6, 0.8}, {-0.6, -0.8}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateClass);
  }
}

TEST(BuildCDE, DegenerateClassNamed) {
  struct OppositeText : TextEncoder {
    std::size_t output_dim() const override { return 2; }
    EmbeddingBatch encode(std::span<const std::string> texts) const override {
      EmbeddingBatch e{Matrix(texts.size(), 2), true};
      for (std::size_t i = 0; i < texts.size(); ++i) e.vectors(i, 0) = texts[i] == "up" ? 1.0 : -1.0;
      return e;
    }
    std::uint64_t checksum() const override { return 0; }
  };
  EncoderBundle bundle = nola::testing::tiny_bundle();
  bundle.text = std::make_shared<OppositeText>();
  ToyEncoderConfig cfg = nola::testing::tiny_toy_config();
  cfg.d_vlm = 2;
  bundle.vision = std::make_shared<ToyVisionEncoder>(cfg, 0);
  try {
    build_cde(two_class_set({"up"}, {"up", "down"}), bundle);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateClass);
    EXPECT_NE(std::string(e.what()).find("dog"), std::string::npos);
  }
}

TEST(Predict, EqualCosinesGiveUniform) {
  CDEClassifier cls;
  cls.weights = Matrix{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  EmbeddingBatch f{Matrix{{0.5, 0.5, 0.5, 0.5}}, true};
  const ProbabilityBatch p = predict(cls, f);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(p.probs(0, c), 0.25, 1e-12);
}

TEST(Predict, TwoClassSigmoidOracle) {
  CDEClassifier cls;
  const double a = 0.2, b = 0.1;
  cls.weights = Matrix{{a, std::sqrt(1 - a * a), 0}, {b, 0, std::sqrt(1 - b * b)}};
  EmbeddingBatch f{Matrix{{1, 0, 0}}, true};
  const ProbabilityBatch p = predict(cls, f, 100.0);
  const double want = 1.0 / (1.0 + std::exp(-10.0));
  EXPECT_NEAR(p.probs(0, 0), want, 1e-12);
  EXPECT_NEAR(p.probs(0, 0), 0.9999546, 1e-7);
  EXPECT_NEAR(p.probs(0, 1), 1.0 - want, 1e-12);
}

TEST(Predict, ScaleInvariantInClassifierRows) {
  CDEClassifier cls;
  cls.weights = nola::testing::random_matrix(5, 8, 1);
  EmbeddingBatch f{nola::testing::random_matrix(20, 8, 2), false};
  const ProbabilityBatch p = predict(cls, f);
  CDEClassifier scaled = cls;
  for (std::size_t c = 0; c < 5; ++c)
    for (double& v : scaled.weights.row(c)) v *= 0.1 + 3.0 * static_cast<double>(c);
  const ProbabilityBatch q = predict(scaled, f);
  EXPECT_LT(max_abs_diff(p.probs, q.probs), 1e-12);
  EXPECT_EQ(p.predictions(), q.predictions());
}

TEST(Predict, RowsSumToOneAndDimChecked) {
  CDEClassifier cls;
  cls.weights = nola::testing::random_matrix(3, 4, 1);
  EmbeddingBatch f{nola::testing::random_matrix(6, 4, 2), false};
  const ProbabilityBatch p = predict(cls, f);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (double v : p.probs.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EmbeddingBatch wrong{Matrix(1, 5), false};
  EXPECT_THROW(predict(cls, wrong), Error);
}

TEST(ZeroShotEval, CentroidClassifierOnSeparableSet) {
  TempDir dir;
  const auto bundle = nola::testing::tiny_bundle();
  const DatasetManifest m = nola::testing::write_cluster_dataset(dir.path(), 3, 2, 6, 16, 5);
  const ImageLoader loader(16);
  std::vector<std::string> ids;
  const Matrix feats =
      map_split(m, Split::test, 4, loader, [&](const ImageBatch& b) { return encode_image(bundle, b).vectors; }, &ids);
  CDEClassifier cls;
  cls.weights = Matrix(3, bundle.d_vlm());
  for (std::size_t i = 0; i < feats.rows(); ++i)
    for (std::size_t k = 0; k < feats.cols(); ++k) cls.weights(i % 3, k) += feats(i, k);
  cls.class_names = m.class_names;
  const Metrics metrics = zero_shot_eval(cls, bundle, m, Split::test, {.batch_size = 4});
  EXPECT_EQ(metrics.top1, 1.0);
  EXPECT_EQ(metrics.n, 18u);
}

TEST(ZeroShotEval, RandomClassifierNearChance) {
  Rng rng(11);
  std::vector<int> truth, pred;
  CDEClassifier cls;
  cls.weights = nola::testing::random_matrix(10, 16, 3);
  EmbeddingBatch f{nola::testing::random_matrix(1000, 16, 4), false};
  pred = predict(cls, f).predictions();
  for (int i = 0; i < 1000; ++i) truth.push_back(i % 10);
  const Metrics m = compute_metrics(truth, pred, 10);
  EXPECT_GE(m.top1, 0.07);
  EXPECT_LE(m.top1, 0.13);
}

TEST(ZeroShotEval, PerClassWeightedAverageIsOverall) {
  std::vector<int> truth = {0, 0, 0, 1, 1, 2, 2, 2, 2, 2};
  std::vector<int> pred = {0, 1, 0, 1, 0, 2, 2, 0, 2, 1};
  const Metrics m = compute_metrics(truth, pred, 3);
  double weighted = 0.0;
  for (std::size_t c = 0; c < 3; ++c) weighted += m.per_class_accuracy[c] * static_cast<double>(m.per_class_count[c]);
  EXPECT_NEAR(weighted / static_cast<double>(m.n), m.top1, 1e-12);
  EXPECT_NEAR(m.top1, 0.6, 1e-12);
  EXPECT_EQ(m.confusion[2][0], 1u);
}
