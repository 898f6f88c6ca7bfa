#include "nola/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <spdlog/spdlog.h>

#include "nola/checkpoint.hpp"
#include "nola/error.hpp"
#include "nola/label_guard.hpp"
#include "nola/rng.hpp"

#ifndef NOLA_VERSION
#define NOLA_VERSION "0.0.0"
#endif
#ifndef NOLA_GIT_REVISION
#define NOLA_GIT_REVISION "unknown"
#endif

namespace nola {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string version_string() { return std::string(NOLA_VERSION) + "+" + NOLA_GIT_REVISION; }

// ---------------------------------------------------------------------------
// Lock

RunLock::RunLock(fs::path path) : path_(std::move(path)) {
  fs::create_directories(path_.parent_path());
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) throw Error(ErrorCode::Locked, "cannot create " + path_.string());
    long owner = 0;
    std::ifstream(path_) >> owner;
    if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM))
      throw Error(ErrorCode::Locked, path_.parent_path().string() + " is in use by process " + std::to_string(owner));
    spdlog::warn("removing stale lock {}", path_.string());
    fs::remove(path_);
  }
  throw Error(ErrorCode::Locked, "could not acquire " + path_.string());
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Report

nlohmann::json to_json(const MetricsReport& r) {
  json acc = json::object();
  for (const auto& [k, v] : r.stage_accuracies) acc[k] = v ? json(*v) : json();
  json per_class = json::object();
  for (const auto& [k, m] : r.per_class) per_class[k] = to_json(m);
  return {{"name", r.name},
          {"version", r.version},
          {"complete", r.complete},
          {"stage_accuracies", acc},
          {"per_class", per_class},
          {"class_names", r.class_names},
          {"timings", r.timings},
          {"diagnostics", r.diagnostics},
          {"label_access_violations", r.label_access_violations},
          {"config", r.config}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.name = j.value("name", "");
    r.version = j.value("version", "");
    r.complete = j.value("complete", false);
    for (const auto& [k, v] : j.at("stage_accuracies").items())
      r.stage_accuracies[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    const json per_class = j.value("per_class", json::object());
    for (const auto& [k, v] : per_class.items()) r.per_class[k] = metrics_from_json(v);
    r.class_names = j.value("class_names", std::vector<std::string>{});
    r.timings = j.value("timings", std::map<std::string, double>{});
    r.diagnostics = j.value("diagnostics", std::map<std::string, double>{});
    r.label_access_violations = j.value("label_access_violations", std::size_t{0});
    r.config = j.value("config", json::object());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("report: ") + e.what());
  }
  return r;
}

namespace {

constexpr const char* kReportStages[] = {"zero_shot_cde", "dl_network", "nola_final"};

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  os << r.name << " (" << r.version << ")\n";
  os << std::left << std::setw(16) << "stage" << std::right << std::setw(9) << "top-1 %" << std::setw(8) << "n"
     << "\n";
  for (const char* stage : kReportStages) {
    auto it = r.stage_accuracies.find(stage);
    os << std::left << std::setw(16) << stage << std::right;
    if (it == r.stage_accuracies.end() || !it->second) {
      os << std::setw(9) << "-" << std::setw(8) << "-" << "\n";
      continue;
    }
    auto pc = r.per_class.find(stage);
    os << std::setw(9) << percent(*it->second) << std::setw(8) << (pc == r.per_class.end() ? 0 : pc->second.n)
       << "\n";
  }
  bool header = false;
  for (std::size_t c = 0; c < r.class_names.size(); ++c) {
    if (!header) {
      os << "\n" << std::left << std::setw(16) << "class" << std::right;
      for (const char* stage : kReportStages)
        if (r.per_class.contains(stage)) os << std::setw(15) << stage;
      os << "\n";
      header = true;
    }
    os << std::left << std::setw(16) << r.class_names[c] << std::right;
    for (const char* stage : kReportStages) {
      auto pc = r.per_class.find(stage);
      if (pc == r.per_class.end()) continue;
      os << std::setw(15) << (c < pc->second.per_class_accuracy.size() ? percent(pc->second.per_class_accuracy[c]) : "-");
    }
    os << "\n";
  }
  if (r.label_access_violations > 0)
    os << "\nWARNING: " << r.label_access_violations << " label read(s) outside evaluation\n";
  return os.str();
}

MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw Error(ErrorCode::EmptyInput, "no reports to average");
  MetricsReport out;
  out.name = "average of " + std::to_string(reports.size()) + " report(s)";
  out.version = version_string();
  out.complete = true;
  for (const char* stage : kReportStages) {
    double sum = 0.0;
    bool all = true;
    for (const auto& r : reports) {
      auto it = r.stage_accuracies.find(stage);
      if (it == r.stage_accuracies.end() || !it->second) {
        all = false;
        break;
      }
      sum += *it->second;
    }
    out.stage_accuracies[stage] = all ? std::optional<double>(sum / static_cast<double>(reports.size())) : std::nullopt;
  }
  json names = json::array();
  for (const auto& r : reports) {
    names.push_back(r.name);
    out.label_access_violations += r.label_access_violations;
    out.complete = out.complete && r.complete;
  }
  out.config = {{"averaged", names}};
  return out;
}

// ---------------------------------------------------------------------------
// Runner

namespace {

std::string fingerprint(const json& parts) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(parts.dump())));
  return buf;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, "missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = fs::path(path) += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

json record_to_json(const StageRecord& r, const json& extra) {
  json j = {{"fingerprint", r.fingerprint}, {"seconds", r.seconds}, {"skipped", r.skipped}, {"extra", extra}};
  j["metrics"] = r.metrics ? to_json(*r.metrics) : json();
  return j;
}

class Runner {
 public:
  Runner(const ExperimentConfig& config, const RunOptions& options)
      : config_(config), options_(options), paths_{config.output_dir} {
    if (options.reuse_from) upstream_ = RunPaths{*options.reuse_from};
  }

  MetricsReport run() {
    const std::size_t violations_before = label_access_violations();
    bundle_ = make_encoders(config_.encoders);
    loader_ = std::make_shared<ImageLoader>(bundle_.vision->input_size());
    write_json(to_json(config_), paths_.config_snapshot());

    report_.name = config_.name;
    report_.version = version_string();
    report_.config = to_json(config_);

    bool stopped = false;
    for (const char* stage : kStageNames) {
      run_stage(stage);
      if (options_.stop_after == stage) {
        spdlog::info("stopping after stage '{}'", stage);
        stopped = true;
        break;
      }
    }
    report_.complete = !stopped;
    report_.label_access_violations = label_access_violations() - violations_before;
    write_json(to_json(report_), paths_.report());
    return report_;
  }

 private:
  using Clock = std::chrono::steady_clock;

  void run_stage(const std::string& stage) {
    const auto start = Clock::now();
    try {
      if (stage == "data") data_stage();
      else if (stage == "cde") cde_stage();
      else if (stage == "pseudo") pseudo_stage();
      else if (stage == "align") align_stage();
      else if (stage == "tune") tune_stage();
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(stage, e);
    } catch (const std::exception& e) {
      throw StageError(stage, Error(ErrorCode::InvalidConfig, e.what()));
    }
    report_.timings[stage] = std::chrono::duration<double>(Clock::now() - start).count();
  }

  // Loads a completed record with the given fingerprint from `dir`, if any.
  std::optional<json> completed(const RunPaths& dir, const std::string& stage, const std::string& fp,
                                std::initializer_list<fs::path> artifacts) const {
    const fs::path rec = dir.stage_record(stage);
    if (!fs::exists(rec)) return std::nullopt;
    json j = read_json(rec);
    if (j.value("fingerprint", "") != fp) return std::nullopt;
    for (const auto& a : artifacts)
      if (!fs::exists(dir.root / a.filename())) return std::nullopt;
    return j;
  }

  // Either the run's own record (resume) or an upstream record whose
  // artifacts are copied in.
  std::optional<json> try_skip(const std::string& stage, const std::string& fp,
                               std::initializer_list<fs::path> artifacts) {
    if (options_.resume)
      if (auto j = completed(paths_, stage, fp, artifacts)) {
        spdlog::info("stage '{}': resumed from checkpoint", stage);
        return j;
      }
    if (upstream_)
      if (auto j = completed(*upstream_, stage, fp, artifacts)) {
        for (const auto& a : artifacts)
          fs::copy_file(upstream_->root / a.filename(), paths_.root / a.filename(),
                        fs::copy_options::overwrite_existing);
        write_json(*j, paths_.stage_record(stage));
        spdlog::info("stage '{}': reused from {}", stage, upstream_->root.string());
        return j;
      }
    return std::nullopt;
  }

  void save_record(const std::string& stage, const StageRecord& r, const json& extra = json::object()) {
    write_json(record_to_json(r, extra), paths_.stage_record(stage));
  }

  void note_metrics(const char* key, const json& record) {
    if (record.contains("metrics") && !record.at("metrics").is_null()) {
      const Metrics m = metrics_from_json(record.at("metrics"));
      report_.stage_accuracies[key] = m.top1;
      report_.per_class[key] = m;
    }
  }

  EvalOptions eval_options() const {
    EvalOptions o;
    o.batch_size = config_.eval_batch_size;
    o.logit_scale = config_.logit_scale;
    o.loader = loader_;
    return o;
  }

  // -- stages ---------------------------------------------------------------

  void data_stage() {
    json parts = {{"dataset", report_.config.at("dataset")},
                  {"descriptions", report_.config.at("descriptions")},
                  {"seed", config_.seeds.data}};
    if (config_.synthetic) parts["encoders"] = report_.config.at("encoders");
    fp_data_ = fingerprint(parts);

    const fs::path desc_out = paths_.root / "descriptions.json";
    if (options_.resume)
      if (auto j = completed(paths_, "data", fp_data_, {desc_out})) {
        load_inputs(*j);
        return;
      }
    if (upstream_)
      if (auto j = completed(*upstream_, "data", fp_data_, {desc_out})) {
        fs::copy_file(upstream_->root / "descriptions.json", desc_out, fs::copy_options::overwrite_existing);
        write_json(*j, paths_.stage_record("data"));
        load_inputs(*j);
        spdlog::info("stage 'data': reused from {}", upstream_->root.string());
        return;
      }

    const auto start = Clock::now();
    fs::path manifest_path;
    if (config_.synthetic) {
      SyntheticConfig sc = *config_.synthetic;
      sc.seed = config_.seeds.data;
      SyntheticBenchmark bench = make_synthetic_benchmark(sc, bundle_, paths_.dataset_dir());
      manifest_path = bench.manifest_path;
      inputs_.manifest = std::move(bench.manifest);
      inputs_.descriptions = std::move(bench.descriptions);
    } else {
      manifest_path = config_.manifest;
      inputs_.manifest = load_manifest(manifest_path);
      const auto& ds = config_.descriptions;
      if (!ds.cache.empty() && fs::exists(ds.cache)) {
        inputs_.descriptions = load_descriptions(ds.cache, inputs_.manifest);
      } else {
        HttpLLMClient client(ds.llm);
        inputs_.descriptions = generate_descriptions(client, inputs_.manifest, ds.templates,
                                                     ds.cache.empty() ? std::nullopt : std::optional(ds.cache));
      }
      std::vector<std::string> fresh;
      for (const auto& t : ds.class_templates)
        if (std::find(inputs_.descriptions.templates.begin(), inputs_.descriptions.templates.end(), t) ==
            inputs_.descriptions.templates.end())
          fresh.push_back(t);
      add_class_templates(inputs_.descriptions, fresh);
    }
    save_descriptions(inputs_.descriptions, desc_out);

    StageRecord rec;
    rec.fingerprint = fp_data_;
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    const json extra = {{"manifest", fs::absolute(manifest_path).string()},
                        {"train", inputs_.manifest.train_items.size()},
                        {"test", inputs_.manifest.test_items.size()},
                        {"descriptions", inputs_.descriptions.total()},
                        {"diagnostics", feature_diagnostics()}};
    save_record("data", rec, extra);
    note_diagnostics(extra);
  }

  void load_inputs(const json& record) {
    inputs_.manifest = load_manifest(record.at("extra").at("manifest").get<std::string>());
    inputs_.descriptions = load_descriptions(paths_.root / "descriptions.json", inputs_.manifest);
    note_diagnostics(record.at("extra"));
  }

  void note_diagnostics(const json& extra) {
    const json diag = extra.value("diagnostics", json::object());
    for (const auto& [k, v] : diag.items()) report_.diagnostics[k] = v;
    report_.class_names = inputs_.manifest.class_names;
  }

  // Fisher ratios of test features under both encoders (labels read under
  // evaluation only).
  json feature_diagnostics() {
    if (inputs_.manifest.test_items.empty()) return json::object();
    std::vector<std::string> ids;
    const Matrix vlm = map_split(inputs_.manifest, Split::test, config_.eval_batch_size, *loader_,
                                 [&](const ImageBatch& b) { return encode_image(bundle_, b).vectors; }, &ids);
    const Matrix ssl = map_split(inputs_.manifest, Split::test, config_.eval_batch_size, *loader_,
                                 [&](const ImageBatch& b) { return encode_ssl(bundle_, b).vectors; });
    EvaluationScope eval;
    std::vector<int> labels;
    for (const auto& rec : inputs_.manifest.test_items) {
      const auto l = rec.true_label();
      if (!l) return json::object();
      labels.push_back(*l);
    }
    const std::size_t c = inputs_.manifest.num_classes();
    return {{"fisher_vlm_test", fisher_ratio(vlm, labels, c)}, {"fisher_ssl_test", fisher_ratio(ssl, labels, c)}};
  }

  void cde_stage() {
    fp_cde_ = fingerprint({fp_data_, report_.config.at("encoders"), config_.logit_scale});
    if (auto j = try_skip("cde", fp_cde_, {paths_.classifier()})) {
      classifier_ = load_classifier(paths_.classifier());
      note_metrics("zero_shot_cde", *j);
      return;
    }
    const auto start = Clock::now();
    classifier_ = build_cde(inputs_.descriptions, bundle_);
    save_classifier(classifier_, inputs_.manifest.name, paths_.classifier());
    StageRecord rec;
    rec.fingerprint = fp_cde_;
    if (!inputs_.manifest.test_items.empty())
      rec.metrics = zero_shot_eval(classifier_, bundle_, inputs_.manifest, Split::test, eval_options());
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    const json extra = {{"truncated_texts", bundle_.text->truncation_count()}};
    save_record("cde", rec, extra);
    note_metrics("zero_shot_cde", record_to_json(rec, extra));
  }

  void pseudo_stage() {
    fp_pseudo_ = fingerprint({fp_cde_, report_.config.at("selection")});
    if (auto j = try_skip("pseudo", fp_pseudo_, {paths_.pseudo_labels()})) {
      pseudo_ = load_pseudo_labels(paths_.pseudo_labels());
      note_pseudo(j->at("extra"));
      return;
    }
    const auto start = Clock::now();
    const SplitPredictions p = zero_shot_predict(classifier_, bundle_, inputs_.manifest, Split::train, eval_options());
    const int k = compute_k(static_cast<long long>(inputs_.manifest.train_items.size()),
                            static_cast<long long>(inputs_.manifest.num_classes()), config_.selection);
    pseudo_ = select_topk(p.probs, p.ids, k);
    pseudo_.policy = config_.selection;
    save_pseudo_labels(pseudo_, paths_.pseudo_labels());

    json extra = {{"k", k}, {"selected", pseudo_.entries.size()}};
    // Precision of the selected labels, for the report only.
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& e : pseudo_.entries) ids.push_back(e.sample_id), labels.push_back(e.label);
    if (!ids.empty()) {
      const Metrics m = score_predictions(inputs_.manifest, Split::train, ids, labels);
      if (m.n > 0) extra["precision"] = m.top1;
    }
    StageRecord rec;
    rec.fingerprint = fp_pseudo_;
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    save_record("pseudo", rec, extra);
    note_pseudo(extra);
  }

  void note_pseudo(const json& extra) {
    report_.diagnostics["k_used"] = extra.value("k", 0);
    report_.diagnostics["pseudo_labels"] = extra.value("selected", 0);
    if (extra.contains("precision")) report_.diagnostics["pseudo_label_precision"] = extra.at("precision");
  }

  void align_stage() {
    if (config_.pseudo_labeller == PseudoLabellerKind::cde) {
      report_.stage_accuracies["dl_network"] = std::nullopt;
      StageRecord rec;
      rec.skipped = true;
      save_record("align", rec);
      spdlog::info("stage 'align': skipped (CDE is the pseudo-labeller)");
      return;
    }
    fp_align_ = fingerprint({fp_pseudo_, report_.config.at("align"), config_.seeds.align,
                             std::string(to_string(config_.encoders.ssl_source))});
    if (auto j = try_skip("align", fp_align_, {paths_.head()})) {
      dl_.ssl = bundle_.ssl;
      dl_.head = load_head(paths_.head());
      note_metrics("dl_network", *j);
      return;
    }
    const auto start = Clock::now();
    dl_ = train_alignment(bundle_, pseudo_, inputs_.manifest, config_.align, loader_);
    save_head(dl_.head, {inputs_.manifest.name, config_.align}, paths_.head());
    StageRecord rec;
    rec.fingerprint = fp_align_;
    if (!inputs_.manifest.test_items.empty()) {
      std::vector<std::string> ids;
      const Matrix probs = map_split(inputs_.manifest, Split::test, config_.eval_batch_size, *loader_,
                                     [&](const ImageBatch& b) { return dl_predict(dl_, b).logits; }, &ids);
      rec.metrics = score_predictions(inputs_.manifest, Split::test, ids, make_probabilities(probs).predictions());
    }
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    const json extra = {{"loss_first", dl_.loss_history.empty() ? 0.0 : dl_.loss_history.front()},
                        {"loss_last", dl_.loss_history.empty() ? 0.0 : dl_.loss_history.back()}};
    save_record("align", rec, extra);
    note_metrics("dl_network", record_to_json(rec, extra));
  }

  void tune_stage() {
    const bool use_dl = config_.pseudo_labeller == PseudoLabellerKind::dl;
    fp_tune_ = fingerprint({use_dl ? fp_align_ : fp_pseudo_, report_.config.at("tune"), config_.seeds.tune,
                            std::string(to_string(config_.pseudo_labeller)), config_.logit_scale});
    if (auto j = try_skip("tune", fp_tune_, {paths_.tuned(), paths_.training_log()})) {
      note_metrics("nola_final", *j);
      return;
    }
    const auto start = Clock::now();
    const Labeller labeller =
        use_dl ? dl_labeller(dl_) : cde_labeller(classifier_, bundle_, config_.logit_scale);
    PromptTuneConfig tc = config_.tune;
    tc.seed = config_.seeds.tune;
    const TunedModel model = tune_prompts(
        bundle_, classifier_, labeller, inputs_.manifest, tc,
        [](const EpochRecord& r) {
          if (r.test_top1) spdlog::info("tune epoch {:3d} loss {:.4f} test {:.2f}%", r.epoch, r.loss, 100 * *r.test_top1);
          else spdlog::info("tune epoch {:3d} loss {:.4f}", r.epoch, r.loss);
        },
        loader_);
    const json meta = {{"dataset", inputs_.manifest.name},
                       {"config", report_.config.at("tune")},
                       {"seeds", {{"data", config_.seeds.data}, {"align", config_.seeds.align}, {"tune", config_.seeds.tune}}},
                       {"pseudo_labeller", std::string(to_string(config_.pseudo_labeller))}};
    save_tuned(model, meta, paths_.tuned());
    write_training_log(model.log, paths_.training_log());
    StageRecord rec;
    rec.fingerprint = fp_tune_;
    if (!inputs_.manifest.test_items.empty()) rec.metrics = evaluate(model, bundle_, inputs_.manifest, eval_options());
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    const json extra = {{"steps", model.steps}, {"epochs_run", model.log.size()}};
    save_record("tune", rec, extra);
    note_metrics("nola_final", record_to_json(rec, extra));
  }

  const ExperimentConfig& config_;
  const RunOptions& options_;
  RunPaths paths_;
  std::optional<RunPaths> upstream_;
  EncoderBundle bundle_;
  std::shared_ptr<const ImageLoader> loader_;
  MetricsReport report_;
  RunInputs inputs_;
  CDEClassifier classifier_;
  PseudoLabelSet pseudo_;
  DLNetwork dl_;
  std::string fp_data_, fp_cde_, fp_pseudo_, fp_align_, fp_tune_;
};

}  // namespace

MetricsReport run_pipeline(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  if (!options.stop_after.empty() &&
      std::find(std::begin(kStageNames), std::end(kStageNames), options.stop_after) == std::end(kStageNames))
    throw Error(ErrorCode::InvalidConfig, "unknown stage '" + options.stop_after + "'");
  fs::create_directories(config.output_dir);
  RunLock lock(RunPaths{config.output_dir}.lock());
  return Runner(config, options).run();
}

RunInputs load_run_inputs(const fs::path& run_dir) {
  const RunPaths paths{run_dir};
  const json rec = read_json(paths.stage_record("data"));
  RunInputs in;
  try {
    in.manifest = load_manifest(rec.at("extra").at("manifest").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, paths.stage_record("data").string() + ": " + e.what());
  }
  in.descriptions = load_descriptions(run_dir / "descriptions.json", in.manifest);
  return in;
}

// ---------------------------------------------------------------------------
// Embedding export

EmbeddingSource embedding_source_from_string(std::string_view name) {
  if (name == "base" || name == "clip_base") return EmbeddingSource::clip_base;
  if (name == "tuned" || name == "nola_tuned") return EmbeddingSource::nola_tuned;
  throw Error(ErrorCode::InvalidConfig, "embedding source must be base or tuned");
}

std::string_view to_string(EmbeddingSource source) {
  return source == EmbeddingSource::nola_tuned ? "nola_tuned" : "clip_base";
}

EmbeddingDump export_embeddings(EmbeddingSource source, const ExperimentConfig& config, const fs::path& out) {
  const RunPaths paths{config.output_dir};
  const RunInputs inputs = load_run_inputs(config.output_dir);
  const EncoderBundle bundle = make_encoders(config.encoders);
  const ImageLoader loader(bundle.vision->input_size());

  PromptSet prompts = PromptSet::none(bundle.vision->width());
  if (source == EmbeddingSource::nola_tuned) prompts = load_tuned(paths.tuned()).prompts;

  EmbeddingDump dump;
  dump.source = source;
  dump.vectors = map_split(
      inputs.manifest, Split::test, config.eval_batch_size, loader,
      [&](const ImageBatch& b) { return encode_image_prompted(bundle, b, prompts).vectors; }, &dump.ids);
  {
    EvaluationScope eval;
    for (const auto& rec : inputs.manifest.test_items) dump.labels.push_back(rec.true_label());
  }

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw Error(ErrorCode::MissingFile, "cannot write " + out.string());
  os << "# source=" << to_string(source) << " dim=" << dump.vectors.cols() << "\n";
  os << "sample_id,label";
  for (std::size_t k = 0; k < dump.vectors.cols(); ++k) os << ",e" << k;
  os << "\n";
  char buf[32];
  for (std::size_t r = 0; r < dump.ids.size(); ++r) {
    os << dump.ids[r] << ',';
    if (dump.labels[r]) os << *dump.labels[r];
    for (double v : dump.vectors.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << "\n";
  }
  return dump;
}

}  // namespace nola
