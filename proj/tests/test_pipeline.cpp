#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "nola/checkpoint.hpp"
#include "nola/error.hpp"
#include "nola/label_guard.hpp"
#include "nola/pipeline.hpp"

using namespace nola;
using nola::testing::TempDir;
namespace fs = std::filesystem;

namespace {

constexpr const char* kMinimalConfig = R"(
name: demo
output_dir: out
seeds: {data: 1, align: 2, tune: 3}
dataset:
  synthetic: {num_classes: 3, train_per_class: 10}
tune: {preset: suppl, epochs: 4}
)";

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidConfig;
}

int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(NOLA_CLI_PATH) + " -q " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Two-class manifest whose description cache covers only the first class.
ExperimentConfig missing_class_experiment(const fs::path& dir) {
  const DatasetManifest m = nola::testing::write_cluster_dataset(dir / "data", 2, 4, 2, 16, 1);
  DescriptionSet desc;
  desc.class_names = {m.class_names[0]};
  desc.per_class[m.class_names[0]] = {"a " + m.class_names[0]};
  save_descriptions(desc, dir / "desc.json");
  ExperimentConfig cfg;
  cfg.manifest = dir / "data" / "manifest.json";
  cfg.descriptions.cache = dir / "desc.json";
  cfg.encoders.toy = nola::testing::tiny_toy_config();
  cfg.output_dir = dir / "run";
  return cfg;
}

// One complete small run shared by the tests that only read its outputs.
class CompletedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("nola-run");
    config_ = new ExperimentConfig(nola::testing::small_experiment(dir_->path() / "base", 1));
    report_ = new MetricsReport(run_pipeline(*config_));
  }
  static void TearDownTestSuite() {
    delete report_;
    delete config_;
    delete dir_;
  }
  static TempDir* dir_;
  static ExperimentConfig* config_;
  static MetricsReport* report_;
};

TempDir* CompletedRun::dir_ = nullptr;
ExperimentConfig* CompletedRun::config_ = nullptr;
MetricsReport* CompletedRun::report_ = nullptr;

}  // namespace

TEST(Config, ParsesMinimalYamlAndResolvesPaths) {
  const ExperimentConfig c = parse_config(kMinimalConfig, "/base");
  EXPECT_EQ(c.name, "demo");
  EXPECT_EQ(c.output_dir, fs::path("/base/out"));
  EXPECT_EQ(c.seeds.align, 2u);
  EXPECT_EQ(c.tune.seed, 3u);
  EXPECT_EQ(c.align.seed, 2u);
  ASSERT_TRUE(c.synthetic);
  EXPECT_EQ(c.synthetic->num_classes, 3u);
  EXPECT_EQ(c.tune.optimizer, OptimizerKind::adam);
  EXPECT_DOUBLE_EQ(c.tune.lr, 4e-3);
  EXPECT_EQ(c.tune.epochs, 4);
}

TEST(Config, RejectsUnknownKeysAndMissingSeeds) {
  EXPECT_EQ(code_of([] { parse_config(std::string(kMinimalConfig) + "bogus: 1\n", "/"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_config("output_dir: x\ntune: {lrr: 1}\nseeds: {data: 0, align: 0, tune: 0}\n", "/"); }),
            ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_config("output_dir: x\nseeds: {data: 0, align: 0}\n", "/"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_config("output_dir: x\n", "/"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { parse_config("[1, 2", "/"); }), ErrorCode::ParseError);
}

TEST(Config, JsonSnapshotRoundTrips) {
  const ExperimentConfig c = parse_config(kMinimalConfig, "/base");
  const ExperimentConfig back = parse_config(to_json(c).dump(), "/elsewhere");
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, BundledSyntheticConfigLoads) {
  const ExperimentConfig c = nola::testing::benchmark_experiment("/tmp/unused", 4);
  EXPECT_EQ(c.seeds.tune, 4u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Checkpoint, ClassifierRoundTripAndTampering) {
  TempDir dir;
  CDEClassifier cls;
  cls.weights = nola::testing::random_matrix(3, 5, 1);
  cls.class_names = {"a", "b", "c"};
  save_classifier(cls, "toy", dir / "c.ckpt");
  const CDEClassifier back = load_classifier(dir / "c.ckpt");
  EXPECT_EQ(back.weights, cls.weights);
  EXPECT_EQ(back.class_names, cls.class_names);

  const std::string bytes = nola::testing::read_file(dir / "c.ckpt");
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  EXPECT_EQ(code_of([&] { load_classifier(dir / "short.ckpt"); }), ErrorCode::CorruptFile);

  std::string flipped = bytes;
  flipped.back() = static_cast<char>(flipped.back() ^ 0x40);
  std::ofstream(dir / "flip.ckpt", std::ios::binary) << flipped;
  EXPECT_EQ(code_of([&] { load_classifier(dir / "flip.ckpt"); }), ErrorCode::CorruptFile);

  TensorFile f = read_tensor_file(dir / "c.ckpt");
  f.format_version = kCheckpointVersion + 1;
  write_tensor_file(f, dir / "v2.ckpt");
  EXPECT_EQ(code_of([&] { load_classifier(dir / "v2.ckpt"); }), ErrorCode::VersionMismatch);
  EXPECT_EQ(code_of([&] { load_classifier(dir / "absent.ckpt"); }), ErrorCode::MissingCheckpoint);
}

TEST(Checkpoint, HeadAndTunedRoundTrip) {
  TempDir dir;
  AlignmentHead head = AlignmentHead::initialize(6, 3, 4, 1);
  head.trained = true;
  AlignTrainConfig ac;
  ac.epochs = 7;
  save_head(head, {"toy", ac}, dir / "h.ckpt");
  HeadMeta meta;
  const AlignmentHead h2 = load_head(dir / "h.ckpt", &meta);
  EXPECT_EQ(h2.weight, head.weight);
  EXPECT_EQ(h2.hidden_weight, head.hidden_weight);
  EXPECT_EQ(h2.bias, head.bias);
  EXPECT_TRUE(h2.trained);
  EXPECT_EQ(meta.config.epochs, 7);

  TunedModel m;
  m.prompts = PromptSet::initialize(4, 8, 2);
  m.classifier.weights = nola::testing::random_matrix(3, 8, 3);
  m.classifier.class_names = {"x", "y", "z"};
  m.steps = 12;
  save_tuned(m, {{"seed", 5}}, dir / "t.ckpt");
  nlohmann::json tmeta;
  const TunedModel m2 = load_tuned(dir / "t.ckpt", &tmeta);
  EXPECT_EQ(m2.prompts.tokens, m.prompts.tokens);
  EXPECT_EQ(m2.classifier.weights, m.classifier.weights);
  EXPECT_EQ(m2.classifier.class_names, m.classifier.class_names);
  EXPECT_EQ(tmeta.at("seed"), 5);
  EXPECT_EQ(code_of([&] { load_head(dir / "t.ckpt"); }), ErrorCode::CorruptFile);
}

TEST_F(CompletedRun, ReportIsCompleteAndLabelClean) {
  EXPECT_TRUE(report_->complete);
  EXPECT_EQ(report_->label_access_violations, 0u);
  for (const char* k : {"zero_shot_cde", "dl_network", "nola_final"}) {
    ASSERT_TRUE(report_->stage_accuracies.at(k).has_value()) << k;
    EXPECT_GE(*report_->stage_accuracies.at(k), 0.0);
    EXPECT_LE(*report_->stage_accuracies.at(k), 1.0);
  }
  const RunPaths paths{config_->output_dir};
  for (const fs::path& p : {paths.classifier(), paths.pseudo_labels(), paths.head(), paths.tuned(),
                            paths.training_log(), paths.report(), paths.config_snapshot()})
    EXPECT_TRUE(fs::exists(p)) << p;
  EXPECT_FALSE(fs::exists(paths.lock()));
  std::ifstream in(paths.report());
  EXPECT_EQ(report_from_json(nlohmann::json::parse(in)).stage_accuracies, report_->stage_accuracies);
}

TEST_F(CompletedRun, DeterministicRerun) {
  ExperimentConfig again = *config_;
  again.output_dir = dir_->path() / "again";
  const MetricsReport r = run_pipeline(again);
  EXPECT_EQ(r.stage_accuracies, report_->stage_accuracies);
  EXPECT_EQ(load_tuned(RunPaths{again.output_dir}.tuned()).prompts.tokens,
            load_tuned(RunPaths{config_->output_dir}.tuned()).prompts.tokens);
}

TEST_F(CompletedRun, ResumeAfterAlignmentMatchesUninterrupted) {
  ExperimentConfig cfg = *config_;
  cfg.output_dir = dir_->path() / "resumed";
  const MetricsReport partial = run_pipeline(cfg, {.stop_after = "align"});
  EXPECT_FALSE(partial.complete);
  EXPECT_FALSE(fs::exists(RunPaths{cfg.output_dir}.tuned()));
  const MetricsReport resumed = run_pipeline(cfg, {.resume = true});
  EXPECT_TRUE(resumed.complete);
  EXPECT_EQ(resumed.stage_accuracies, report_->stage_accuracies);
  EXPECT_EQ(load_tuned(RunPaths{cfg.output_dir}.tuned()).classifier.weights,
            load_tuned(RunPaths{config_->output_dir}.tuned()).classifier.weights);
}

TEST_F(CompletedRun, ResumeWithChangedTuneConfigRerunsOnlyTune) {
  ExperimentConfig cfg = *config_;
  cfg.output_dir = dir_->path() / "changed";
  run_pipeline(cfg, {.stop_after = "align"});
  const std::string head_before = nola::testing::read_file(RunPaths{cfg.output_dir}.head());
  cfg.tune.epochs = 1;
  const MetricsReport r = run_pipeline(cfg, {.resume = true});
  EXPECT_EQ(nola::testing::read_file(RunPaths{cfg.output_dir}.head()), head_before);
  EXPECT_EQ(load_tuned(RunPaths{cfg.output_dir}.tuned()).log.size(), 1u);
  EXPECT_EQ(r.stage_accuracies.at("dl_network"), report_->stage_accuracies.at("dl_network"));
}

TEST_F(CompletedRun, NoDLAblationSkipsAlignment) {
  const ExperimentConfig cfg = apply_ablation(*config_, AblationVariant::no_dl);
  EXPECT_EQ(cfg.output_dir, config_->output_dir / "ablations" / "no_dl");
  const MetricsReport r = run_pipeline(cfg, {.reuse_from = config_->output_dir});
  EXPECT_FALSE(r.stage_accuracies.at("dl_network").has_value());
  ASSERT_TRUE(r.stage_accuracies.at("nola_final").has_value());
  EXPECT_EQ(r.stage_accuracies.at("zero_shot_cde"), report_->stage_accuracies.at("zero_shot_cde"));
  EXPECT_FALSE(fs::exists(RunPaths{cfg.output_dir}.head()));
  EXPECT_EQ(r.label_access_violations, 0u);
}

TEST_F(CompletedRun, ClipDLAblationUsesVisionFeatures) {
  const ExperimentConfig cfg = apply_ablation(*config_, AblationVariant::clip_dl);
  const MetricsReport r = run_pipeline(cfg, {.reuse_from = config_->output_dir});
  ASSERT_TRUE(r.stage_accuracies.at("dl_network").has_value());
  EXPECT_EQ(load_head(RunPaths{cfg.output_dir}.head()).input_dim(), make_encoders(cfg.encoders).d_vlm());
  EXPECT_EQ(load_head(RunPaths{config_->output_dir}.head()).input_dim(), make_encoders(config_->encoders).d_ssl());
}

TEST_F(CompletedRun, FrozenVariantsFreezeOneComponent) {
  const TunedModel base = load_tuned(RunPaths{config_->output_dir}.tuned());
  const CDEClassifier init = load_classifier(RunPaths{config_->output_dir}.classifier());
  const ExperimentConfig fc = apply_ablation(*config_, AblationVariant::frozen_cde);
  run_pipeline(fc, {.reuse_from = config_->output_dir});
  const TunedModel a = load_tuned(RunPaths{fc.output_dir}.tuned());
  EXPECT_EQ(a.classifier.weights, init.weights);
  EXPECT_NE(a.prompts.tokens, base.prompts.tokens);

  const ExperimentConfig fp = apply_ablation(*config_, AblationVariant::frozen_prompts);
  run_pipeline(fp, {.reuse_from = config_->output_dir});
  const TunedModel b = load_tuned(RunPaths{fp.output_dir}.tuned());
  EXPECT_EQ(b.prompts.tokens,
            PromptSet::initialize(config_->tune.num_prompts, make_encoders(config_->encoders).vision->width(),
                                  config_->seeds.tune)
                .tokens);
  EXPECT_NE(b.classifier.weights, init.weights);
}

TEST_F(CompletedRun, ExportRowsAndDeterminism) {
  const fs::path a = dir_->path() / "emb_a.csv", b = dir_->path() / "emb_b.csv";
  const EmbeddingDump d = export_embeddings(EmbeddingSource::nola_tuned, *config_, a);
  export_embeddings(EmbeddingSource::nola_tuned, *config_, b);
  const RunInputs inputs = load_run_inputs(config_->output_dir);
  EXPECT_EQ(d.vectors.rows(), inputs.manifest.test_items.size());
  EXPECT_EQ(d.ids.size(), d.vectors.rows());
  EXPECT_EQ(nola::testing::read_file(a), nola::testing::read_file(b));
  for (std::size_t r = 0; r < d.vectors.rows(); ++r) EXPECT_NEAR(l2_norm(d.vectors.row(r)), 1.0, 1e-9);
  const EmbeddingDump base = export_embeddings(EmbeddingSource::clip_base, *config_, dir_->path() / "base.csv");
  EXPECT_NE(base.vectors, d.vectors);

  ExperimentConfig empty = *config_;
  empty.output_dir = dir_->path() / "partial";
  run_pipeline(empty, {.stop_after = "cde"});
  EXPECT_EQ(code_of([&] { export_embeddings(EmbeddingSource::nola_tuned, empty, dir_->path() / "x.csv"); }),
            ErrorCode::MissingCheckpoint);
}

TEST(Pipeline, StageErrorsNameTheStageAndKeepEarlierOutputs) {
  TempDir dir;
  const ExperimentConfig cfg = missing_class_experiment(dir.path());
  try {
    run_pipeline(cfg);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "data");
    EXPECT_EQ(e.code(), ErrorCode::MissingClass);
    EXPECT_NE(std::string(e.what()).find("[data]"), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(RunPaths{cfg.output_dir}.config_snapshot()));
  EXPECT_FALSE(fs::exists(RunPaths{cfg.output_dir}.lock()));
}

TEST(RunLockTest, ExclusiveAndStaleTakeover) {
  TempDir dir;
  const fs::path p = dir / "run" / ".lock";
  {
    RunLock lock(p);
    EXPECT_TRUE(fs::exists(p));
    EXPECT_EQ(code_of([&] { RunLock second(p); }), ErrorCode::Locked);
  }
  EXPECT_FALSE(fs::exists(p));
  std::ofstream(p) << "999999999\n";
  EXPECT_NO_THROW(RunLock taken(p));
}

TEST(Report, AverageAndFormat) {
  MetricsReport a, b;
  a.stage_accuracies = {{"zero_shot_cde", 0.5}, {"nola_final", 0.7}, {"dl_network", std::nullopt}};
  b.stage_accuracies = {{"zero_shot_cde", 0.7}, {"nola_final", 0.9}, {"dl_network", 0.8}};
  const MetricsReport avg = average_reports({a, b});
  EXPECT_NEAR(*avg.stage_accuracies.at("zero_shot_cde"), 0.6, 1e-12);
  EXPECT_NEAR(*avg.stage_accuracies.at("nola_final"), 0.8, 1e-12);
  EXPECT_FALSE(avg.stage_accuracies.count("dl_network") && avg.stage_accuracies.at("dl_network").has_value());
  EXPECT_NE(format_report(avg).find("nola_final"), std::string::npos);
  EXPECT_EQ(code_of([] { average_reports({}); }), ErrorCode::EmptyInput);
}

TEST(Cli, ExitCodesAndStageTaggedErrors) {
  TempDir dir;
  EXPECT_EQ(run_cli("--version", dir / "err.txt"), 0);
  EXPECT_NE(run_cli("run", dir / "err.txt"), 0);

  std::ofstream(dir / "bad.yaml") << "output_dir: out\nseeds: {data: 0, align: 0, tune: 0}\n"
                                     "dataset: {synthetic: {num_classes: 2, train_per_class: 4, test_per_class: 2}}\n"
                                     "tune: {lr: -1}\n";
  EXPECT_EQ(run_cli("run --config " + (dir / "bad.yaml").string(), dir / "err.txt"), 2);
  EXPECT_NE(nola::testing::read_file(dir / "err.txt").find("InvalidConfig"), std::string::npos);

  const ExperimentConfig staged = missing_class_experiment(dir.path());
  std::ofstream(dir / "staged.yaml") << "output_dir: run\nseeds: {data: 0, align: 0, tune: 0}\n"
                                        "dataset: {manifest: data/manifest.json}\n"
                                        "descriptions: {cache: desc.json}\n"
                                        "encoders: {toy: {input_size: 16, patch_size: 8, d_model: 8, d_vlm: 8}}\n";
  EXPECT_EQ(run_cli("run --config " + (dir / "staged.yaml").string(), dir / "err2.txt"), 1);
  const std::string err = nola::testing::read_file(dir / "err2.txt");
  EXPECT_NE(err.find("[data]"), std::string::npos) << err;
  EXPECT_NE(err.find("MissingClass"), std::string::npos) << err;
}
