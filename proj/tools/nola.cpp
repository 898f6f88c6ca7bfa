#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "nola/checkpoint.hpp"
#include "nola/error.hpp"
#include "nola/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SeedOverrides {
  std::optional<std::uint64_t> data, align, tune;

  void add(CLI::App* cmd) {
    cmd->add_option("--seed-data", data, "Override seeds.data");
    cmd->add_option("--seed-align", align, "Override seeds.align");
    cmd->add_option("--seed-tune", tune, "Override seeds.tune");
  }
  void apply(nola::ExperimentConfig& c) const {
    if (data) c.seeds.data = *data;
    if (align) c.seeds.align = c.align.seed = *align;
    if (tune) c.seeds.tune = c.tune.seed = *tune;
  }
};

nola::ExperimentConfig load(const std::string& path, const SeedOverrides& seeds, const std::string& output_dir) {
  nola::ExperimentConfig c = nola::load_config(path);
  seeds.apply(c);
  if (!output_dir.empty()) c.output_dir = fs::absolute(output_dir);
  return c;
}

void print_report(const nola::MetricsReport& r, bool as_json) {
  if (as_json) std::cout << nola::to_json(r).dump(2) << "\n";
  else std::cout << nola::format_report(r);
}

int eval_run(const fs::path& dir) {
  const nola::ExperimentConfig config = nola::load_config(dir / "config.json");
  const nola::RunPaths paths{dir};
  const nola::RunInputs inputs = nola::load_run_inputs(dir);
  const nola::EncoderBundle bundle = nola::make_encoders(config.encoders);
  nola::EvalOptions options;
  options.batch_size = config.eval_batch_size;
  options.logit_scale = config.logit_scale;

  nola::MetricsReport report;
  report.name = config.name;
  report.version = nola::version_string();
  report.class_names = inputs.manifest.class_names;
  const auto record = [&](const char* key, const nola::Metrics& m) {
    report.stage_accuracies[key] = m.top1;
    report.per_class[key] = m;
  };
  if (fs::exists(paths.classifier()))
    record("zero_shot_cde",
           nola::zero_shot_eval(nola::load_classifier(paths.classifier()), bundle, inputs.manifest, nola::Split::test,
                                options));
  if (fs::exists(paths.head())) {
    nola::DLNetwork dl{bundle.ssl, nola::load_head(paths.head()), {}};
    std::vector<std::string> ids;
    const nola::ImageLoader loader(bundle.ssl->input_size());
    const nola::Matrix logits = nola::map_split(inputs.manifest, nola::Split::test, options.batch_size, loader,
                                                [&](const nola::ImageBatch& b) { return nola::dl_predict(dl, b).logits; },
                                                &ids);
    record("dl_network", nola::score_predictions(inputs.manifest, nola::Split::test, ids,
                                                 nola::make_probabilities(logits).predictions()));
  }
  nola::TunedModel tuned = nola::load_tuned(paths.tuned());
  record("nola_final", nola::evaluate(tuned, bundle, inputs.manifest, options));
  report.complete = true;
  print_report(report, false);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-free adaptation of a vision-language classifier"};
  app.require_subcommand(1);
  app.set_version_flag("--version", nola::version_string());
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

  std::string config_path, output_dir, stop_after, variant, which, out, checkpoint;
  bool resume = false, as_json = false;
  SeedOverrides seeds;

  auto* run = app.add_subcommand("run", "Run the full pipeline");
  run->add_option("--config", config_path, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  run->add_option("--output-dir", output_dir, "Override output_dir");
  run->add_flag("--resume", resume, "Skip stages with matching checkpoints");
  run->add_option("--stop-after", stop_after, "Stop after this stage (data|cde|pseudo|align|tune)");
  run->add_flag("--json", as_json, "Print the report as JSON");
  seeds.add(run);

  auto* ablate = app.add_subcommand("ablate", "Run one ablation variant, reusing the base run's stages");
  ablate->add_option("--config", config_path, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--variant", variant, "no_dl | clip_dl | frozen_cde | frozen_prompts")
      ->required()
      ->check(CLI::IsMember({"no_dl", "clip_dl", "frozen_cde", "frozen_prompts"}));
  ablate->add_option("--output-dir", output_dir, "Override the base output_dir");
  ablate->add_flag("--resume", resume, "Skip stages with matching checkpoints");
  ablate->add_flag("--json", as_json, "Print the report as JSON");
  seeds.add(ablate);

  auto* eval = app.add_subcommand("eval", "Re-evaluate the checkpoints of a finished run");
  eval->add_option("--checkpoint", checkpoint, "Run directory")->required()->check(CLI::ExistingDirectory);

  auto* exp = app.add_subcommand("export-embeddings", "Write test-split embeddings as CSV");
  exp->add_option("--config", config_path, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  exp->add_option("--which", which, "base | tuned")->required()->check(CLI::IsMember({"base", "tuned"}));
  exp->add_option("--out", out, "Output CSV (default <output_dir>/embeddings_<which>.csv)");
  exp->add_option("--output-dir", output_dir, "Override output_dir");
  seeds.add(exp);

  std::string dataset, templates_file;
  std::vector<std::string> templates;
  bool mock = false;
  auto* gen = app.add_subcommand("gen-descriptions", "Query the LLM for class descriptions");
  gen->add_option("--dataset", dataset, "Dataset manifest")->required()->check(CLI::ExistingFile);
  gen->add_option("--template", templates, "Question template containing {} (repeatable)")->required();
  gen->add_option("--out", out, "Description cache to write")->required();
  gen->add_flag("--mock", mock, "Use the offline echo client instead of NOLA_LLM_ENDPOINT");

  std::uint64_t synth_seed = 0, encoder_seed = 0;
  nola::SyntheticConfig synth;
  auto* make = app.add_subcommand("make-synthetic", "Generate the synthetic benchmark");
  make->add_option("--out", out, "Output directory")->required();
  make->add_option("--seed", synth_seed, "Data seed");
  make->add_option("--encoder-seed", encoder_seed, "Toy encoder seed");
  make->add_option("--classes", synth.num_classes, "Number of classes");
  make->add_option("--train-per-class", synth.train_per_class);
  make->add_option("--test-per-class", synth.test_per_class);

  std::vector<std::string> report_files;
  auto* report = app.add_subcommand("report", "Print or average saved reports");
  report->add_option("files", report_files, "report.json files")->required()->check(CLI::ExistingFile);
  report->add_flag("--json", as_json, "Print as JSON");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*run) {
      const nola::ExperimentConfig config = load(config_path, seeds, output_dir);
      print_report(nola::run_pipeline(config, {resume, stop_after, std::nullopt}), as_json);
    } else if (*ablate) {
      const nola::ExperimentConfig base = load(config_path, seeds, output_dir);
      const nola::ExperimentConfig config = nola::apply_ablation(base, nola::ablation_from_string(variant));
      print_report(nola::run_pipeline(config, {resume, "", base.output_dir}), as_json);
    } else if (*eval) {
      return eval_run(checkpoint);
    } else if (*exp) {
      const nola::ExperimentConfig config = load(config_path, seeds, output_dir);
      const fs::path target = out.empty() ? config.output_dir / ("embeddings_" + which + ".csv") : fs::path(out);
      const nola::EmbeddingDump dump =
          nola::export_embeddings(nola::embedding_source_from_string(which), config, target);
      std::cout << "wrote " << dump.ids.size() << " rows to " << target.string() << "\n";
    } else if (*gen) {
      const nola::DatasetManifest manifest = nola::load_manifest(dataset);
      std::unique_ptr<nola::LLMClient> client;
      if (mock) client = std::make_unique<nola::MockLLMClient>();
      else client = std::make_unique<nola::HttpLLMClient>(nola::HttpClientSettings::from_environment());
      try {
        const nola::DescriptionSet set = nola::generate_descriptions(*client, manifest, templates, fs::path(out));
        std::cout << "wrote " << set.total() << " descriptions to " << out << "\n";
      } catch (const nola::RateLimitedError& e) {
        const fs::path partial = fs::path(out) += ".partial";
        nola::save_descriptions(e.partial(), partial);
        std::cerr << "error: " << e.what() << "; partial set saved to " << partial.string() << ", retry after "
                  << e.retry_after_seconds() << " s\n";
        return 3;
      }
    } else if (*make) {
      synth.seed = synth_seed;
      nola::ToyEncoderConfig toy;
      const nola::EncoderBundle bundle = nola::make_toy_encoders(toy, encoder_seed);
      const nola::SyntheticBenchmark b = nola::make_synthetic_benchmark(synth, bundle, out);
      std::cout << "manifest: " << b.manifest_path.string() << "\ndescriptions: " << b.descriptions_path.string()
                << "\n";
    } else if (*report) {
      std::vector<nola::MetricsReport> reports;
      for (const auto& f : report_files) {
        std::ifstream in(f);
        reports.push_back(nola::report_from_json(json::parse(in)));
      }
      print_report(reports.size() == 1 ? reports.front() : nola::average_reports(reports), as_json);
    }
  } catch (const nola::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nola::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
