#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "nola/checkpoint.hpp"
#include "nola/error.hpp"
#include "nola/pipeline.hpp"

namespace nola {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json scalar_to_json(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  if (node.Tag() == "!") return s;  // quoted
  if (s == "~" || s == "null" || s.empty()) return nullptr;
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  return s;
}

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Map: {
      json out = json::object();
      for (const auto& kv : node) out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return out;
    }
    case YAML::NodeType::Sequence: {
      json out = json::array();
      for (const auto& item : node) out.push_back(yaml_to_json(item));
      return out;
    }
    case YAML::NodeType::Scalar:
      return scalar_to_json(node);
    default:
      return nullptr;
  }
}

void check_keys(const json& section, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!section.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be a mapping");
  const std::set<std::string_view> ok(allowed);
  for (const auto& [key, value] : section.items())
    if (!ok.contains(key)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + where + "." + key + "'");
}

json section(const json& root, const char* key) {
  if (!root.contains(key) || root.at(key).is_null()) return json::object();
  return root.at(key);
}

fs::path resolve(const fs::path& base, const json& value) {
  if (value.is_null()) return {};
  const fs::path p = value.get<std::string>();
  if (p.empty()) return {};
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

SyntheticConfig parse_synthetic(const json& j) {
  check_keys(j, "dataset.synthetic",
             {"num_classes", "train_per_class", "test_per_class", "image_size", "latent_dim", "class_separation",
              "latent_noise", "pattern_amplitude", "tint_separation", "tint_noise", "brightness", "contrast",
              "pixel_noise", "completions_per_prompt", "words_per_description", "candidate_words",
              "description_mix"});
  SyntheticConfig s;
  read(j, "num_classes", s.num_classes);
  read(j, "train_per_class", s.train_per_class);
  read(j, "test_per_class", s.test_per_class);
  read(j, "image_size", s.image_size);
  read(j, "latent_dim", s.latent_dim);
  read(j, "class_separation", s.class_separation);
  read(j, "latent_noise", s.latent_noise);
  read(j, "pattern_amplitude", s.pattern_amplitude);
  read(j, "tint_separation", s.tint_separation);
  read(j, "tint_noise", s.tint_noise);
  read(j, "brightness", s.brightness);
  read(j, "contrast", s.contrast);
  read(j, "pixel_noise", s.pixel_noise);
  read(j, "completions_per_prompt", s.completions_per_prompt);
  read(j, "words_per_description", s.words_per_description);
  read(j, "candidate_words", s.candidate_words);
  read(j, "description_mix", s.description_mix);
  return s;
}

json synthetic_to_json(const SyntheticConfig& s) {
  return {{"num_classes", s.num_classes},
          {"train_per_class", s.train_per_class},
          {"test_per_class", s.test_per_class},
          {"image_size", s.image_size},
          {"latent_dim", s.latent_dim},
          {"class_separation", s.class_separation},
          {"latent_noise", s.latent_noise},
          {"pattern_amplitude", s.pattern_amplitude},
          {"tint_separation", s.tint_separation},
          {"tint_noise", s.tint_noise},
          {"brightness", s.brightness},
          {"contrast", s.contrast},
          {"pixel_noise", s.pixel_noise},
          {"completions_per_prompt", s.completions_per_prompt},
          {"words_per_description", s.words_per_description},
          {"candidate_words", s.candidate_words},
          {"description_mix", s.description_mix}};
}

ToyEncoderConfig parse_toy(const json& j) {
  check_keys(j, "encoders.toy",
             {"input_size", "patch_size", "d_model", "d_vlm", "ssl_width", "d_ssl", "text_buckets", "context_length",
              "exec"});
  ToyEncoderConfig t;
  read(j, "input_size", t.input_size);
  read(j, "patch_size", t.patch_size);
  read(j, "d_model", t.d_model);
  read(j, "d_vlm", t.d_vlm);
  read(j, "ssl_width", t.ssl_width);
  read(j, "d_ssl", t.d_ssl);
  read(j, "text_buckets", t.text_buckets);
  read(j, "context_length", t.context_length);
  if (j.contains("exec")) {
    const auto e = j.at("exec").get<std::string>();
    if (e == "serial") t.exec = kernels::Exec::serial;
    else if (e == "parallel") t.exec = kernels::Exec::parallel;
    else throw Error(ErrorCode::InvalidConfig, "encoders.toy.exec must be serial or parallel");
  }
  return t;
}

AlignTrainConfig parse_align(const json& j) {
  check_keys(j, "align", {"epochs", "lr", "batch_size", "label_smoothing", "optimizer", "weight_decay", "hidden"});
  return align_config_from_json(j);
}

PromptTuneConfig parse_tune(const json& j) {
  check_keys(j, "tune",
             {"preset", "num_prompts", "lr", "batch_size", "epochs", "optimizer", "weight_decay", "label_smoothing",
              "logit_scale", "targets", "train_prompts", "train_classifier", "patience", "log_test_accuracy",
              "augment"});
  PromptTuneConfig base;
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "main") base = PromptTuneConfig::preset_main();
    else if (p == "suppl") base = PromptTuneConfig::preset_suppl();
    else throw Error(ErrorCode::InvalidConfig, "tune.preset must be main or suppl");
  }
  json merged = to_json(base);
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    if (key == "augment") {
      check_keys(value, "tune.augment",
                 {"crop_scale", "crop_ratio", "flip_probability", "jitter_probability", "jitter", "blur_probability",
                  "blur_sigma", "scale", "perspective_probability", "perspective_distortion"});
      for (const auto& [k, v] : value.items()) merged["augment"][k] = v;
      continue;
    }
    merged[key] = value;
  }
  return tune_config_from_json(merged);
}

json strip_seed(json j) {
  j.erase("seed");
  return j;
}

}  // namespace

std::string_view to_string(PseudoLabellerKind kind) { return kind == PseudoLabellerKind::cde ? "cde" : "dl"; }
std::string_view to_string(SSLSource source) { return source == SSLSource::vlm_vision ? "vlm_vision" : "dino"; }

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json root;
  try {
    root = yaml_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw Error(ErrorCode::ParseError, "config: top level must be a mapping");

  ExperimentConfig c;
  try {
    check_keys(root, "config",
               {"name", "output_dir", "seeds", "dataset", "descriptions", "encoders", "selection", "align", "tune",
                "pseudo_labeller", "eval"});
    read(root, "name", c.name);
    if (!root.contains("output_dir")) throw Error(ErrorCode::InvalidConfig, "output_dir is required");
    c.output_dir = resolve(base_dir, root.at("output_dir"));

    if (!root.contains("seeds")) throw Error(ErrorCode::InvalidConfig, "seeds {data, align, tune} are required");
    const json seeds = root.at("seeds");
    check_keys(seeds, "seeds", {"data", "align", "tune"});
    for (const char* k : {"data", "align", "tune"})
      if (!seeds.contains(k)) throw Error(ErrorCode::InvalidConfig, std::string("seeds.") + k + " is required");
    c.seeds = {seeds.at("data").get<std::uint64_t>(), seeds.at("align").get<std::uint64_t>(),
               seeds.at("tune").get<std::uint64_t>()};

    const json dataset = section(root, "dataset");
    check_keys(dataset, "dataset", {"manifest", "synthetic"});
    if (dataset.contains("manifest")) c.manifest = resolve(base_dir, dataset.at("manifest"));
    if (dataset.contains("synthetic")) c.synthetic = parse_synthetic(dataset.at("synthetic"));

    const json desc = section(root, "descriptions");
    check_keys(desc, "descriptions", {"cache", "templates", "class_templates", "llm"});
    if (desc.contains("cache")) c.descriptions.cache = resolve(base_dir, desc.at("cache"));
    read(desc, "templates", c.descriptions.templates);
    read(desc, "class_templates", c.descriptions.class_templates);
    if (desc.contains("llm")) {
      const json llm = desc.at("llm");
      check_keys(llm, "descriptions.llm", {"endpoint", "model", "completions", "temperature", "timeout_seconds"});
      read(llm, "endpoint", c.descriptions.llm.endpoint);
      read(llm, "model", c.descriptions.llm.model);
      read(llm, "completions", c.descriptions.llm.completions_per_prompt);
      read(llm, "temperature", c.descriptions.llm.temperature);
      read(llm, "timeout_seconds", c.descriptions.llm.timeout_seconds);
      if (const char* key = std::getenv("NOLA_LLM_KEY")) c.descriptions.llm.api_key = key;
    }

    const json enc = section(root, "encoders");
    check_keys(enc, "encoders", {"kind", "seed", "toy", "vlm_checkpoint", "ssl_checkpoint", "ssl_source"});
    read(enc, "kind", c.encoders.kind);
    read(enc, "seed", c.encoders.seed);
    if (enc.contains("toy")) c.encoders.toy = parse_toy(enc.at("toy"));
    if (enc.contains("vlm_checkpoint")) c.encoders.vlm_checkpoint = resolve(base_dir, enc.at("vlm_checkpoint"));
    if (enc.contains("ssl_checkpoint")) c.encoders.ssl_checkpoint = resolve(base_dir, enc.at("ssl_checkpoint"));
    if (enc.contains("ssl_source")) {
      const auto s = enc.at("ssl_source").get<std::string>();
      if (s == "dino") c.encoders.ssl_source = SSLSource::dino;
      else if (s == "vlm_vision") c.encoders.ssl_source = SSLSource::vlm_vision;
      else throw Error(ErrorCode::InvalidConfig, "encoders.ssl_source must be dino or vlm_vision");
    }

    const json sel = section(root, "selection");
    check_keys(sel, "selection", {"fraction", "floor", "cap"});
    read(sel, "fraction", c.selection.fraction);
    read(sel, "floor", c.selection.floor);
    read(sel, "cap", c.selection.cap);

    c.align = parse_align(section(root, "align"));
    c.tune = parse_tune(section(root, "tune"));

    if (root.contains("pseudo_labeller")) {
      const auto p = root.at("pseudo_labeller").get<std::string>();
      if (p == "dl") c.pseudo_labeller = PseudoLabellerKind::dl;
      else if (p == "cde") c.pseudo_labeller = PseudoLabellerKind::cde;
      else throw Error(ErrorCode::InvalidConfig, "pseudo_labeller must be dl or cde");
    }

    const json ev = section(root, "eval");
    check_keys(ev, "eval", {"batch_size", "logit_scale"});
    read(ev, "batch_size", c.eval_batch_size);
    read(ev, "logit_scale", c.logit_scale);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
  }
  c.align.seed = c.seeds.align;
  c.tune.seed = c.seeds.tune;
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), fs::absolute(path).parent_path());
}

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw Error(ErrorCode::InvalidConfig, "output_dir is required");
  if (synthetic) {
    synthetic->validate();
  } else {
    if (manifest.empty()) throw Error(ErrorCode::InvalidConfig, "dataset.manifest or dataset.synthetic is required");
    if (!fs::exists(manifest)) throw Error(ErrorCode::MissingFile, "dataset.manifest " + manifest.string());
    const bool cached = !descriptions.cache.empty() && fs::exists(descriptions.cache);
    if (!cached && descriptions.llm.endpoint.empty())
      throw Error(ErrorCode::MissingFile, "descriptions.cache '" + descriptions.cache.string() +
                                              "' does not exist and no descriptions.llm endpoint is configured");
    if (!cached && descriptions.templates.empty())
      throw Error(ErrorCode::InvalidConfig, "descriptions.templates are required to query the LLM");
  }
  for (const auto& t : descriptions.templates) format_template(t, "x");
  for (const auto& t : descriptions.class_templates) format_template(t, "x");
  if (encoders.kind != "toy") throw Error(ErrorCode::InvalidConfig, "encoders.kind must be toy");
  for (const auto* p : {&encoders.vlm_checkpoint, &encoders.ssl_checkpoint})
    if (!p->empty() && !fs::exists(*p)) throw Error(ErrorCode::MissingFile, "encoder checkpoint " + p->string());
  selection.validate();
  align.validate();
  tune.validate();
  if (eval_batch_size == 0) throw Error(ErrorCode::InvalidConfig, "eval.batch_size must be >= 1");
  if (!(logit_scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "eval.logit_scale must be positive");
}

json to_json(const ExperimentConfig& c) {
  json dataset = json::object();
  if (!c.manifest.empty()) dataset["manifest"] = c.manifest.string();
  if (c.synthetic) dataset["synthetic"] = synthetic_to_json(*c.synthetic);
  json desc = {{"cache", c.descriptions.cache.string()},
               {"templates", c.descriptions.templates},
               {"class_templates", c.descriptions.class_templates}};
  if (!c.descriptions.llm.endpoint.empty())
    desc["llm"] = {{"endpoint", c.descriptions.llm.endpoint},
                   {"model", c.descriptions.llm.model},
                   {"completions", c.descriptions.llm.completions_per_prompt},
                   {"temperature", c.descriptions.llm.temperature},
                   {"timeout_seconds", c.descriptions.llm.timeout_seconds}};
  const ToyEncoderConfig& t = c.encoders.toy;
  return {{"name", c.name},
          {"output_dir", c.output_dir.string()},
          {"seeds", {{"data", c.seeds.data}, {"align", c.seeds.align}, {"tune", c.seeds.tune}}},
          {"dataset", dataset},
          {"descriptions", desc},
          {"encoders",
           {{"kind", c.encoders.kind},
            {"seed", c.encoders.seed},
            {"toy",
             {{"input_size", t.input_size},
              {"patch_size", t.patch_size},
              {"d_model", t.d_model},
              {"d_vlm", t.d_vlm},
              {"ssl_width", t.ssl_width},
              {"d_ssl", t.d_ssl},
              {"text_buckets", t.text_buckets},
              {"context_length", t.context_length},
              {"exec", t.exec == kernels::Exec::serial ? "serial" : "parallel"}}},
            {"vlm_checkpoint", c.encoders.vlm_checkpoint.string()},
            {"ssl_checkpoint", c.encoders.ssl_checkpoint.string()},
            {"ssl_source", std::string(to_string(c.encoders.ssl_source))}}},
          {"selection", {{"fraction", c.selection.fraction}, {"floor", c.selection.floor}, {"cap", c.selection.cap}}},
          {"align", strip_seed(to_json(c.align))},
          {"tune", strip_seed(to_json(c.tune))},
          {"pseudo_labeller", std::string(to_string(c.pseudo_labeller))},
          {"eval", {{"batch_size", c.eval_batch_size}, {"logit_scale", c.logit_scale}}}};
}

AblationVariant ablation_from_string(std::string_view name) {
  if (name == "no_dl") return AblationVariant::no_dl;
  if (name == "clip_dl") return AblationVariant::clip_dl;
  if (name == "frozen_cde") return AblationVariant::frozen_cde;
  if (name == "frozen_prompts") return AblationVariant::frozen_prompts;
  throw Error(ErrorCode::InvalidConfig, "unknown ablation variant '" + std::string(name) + "'");
}

std::string_view to_string(AblationVariant variant) {
  switch (variant) {
    case AblationVariant::no_dl: return "no_dl";
    case AblationVariant::clip_dl: return "clip_dl";
    case AblationVariant::frozen_cde: return "frozen_cde";
    case AblationVariant::frozen_prompts: return "frozen_prompts";
  }
  return "no_dl";
}

ExperimentConfig apply_ablation(ExperimentConfig config, AblationVariant variant) {
  switch (variant) {
    case AblationVariant::no_dl: config.pseudo_labeller = PseudoLabellerKind::cde; break;
    case AblationVariant::clip_dl: config.encoders.ssl_source = SSLSource::vlm_vision; break;
    case AblationVariant::frozen_cde: config.tune.train_classifier = false; break;
    case AblationVariant::frozen_prompts: config.tune.train_prompts = false; break;
  }
  config.name += "/" + std::string(to_string(variant));
  config.output_dir = config.output_dir / "ablations" / std::string(to_string(variant));
  return config;
}

EncoderBundle make_encoders(const EncoderSettings& settings) {
  if (settings.kind != "toy") throw Error(ErrorCode::InvalidConfig, "encoders.kind must be toy");
  if (!settings.vlm_checkpoint.empty() || !settings.ssl_checkpoint.empty())
    throw Error(ErrorCode::Unsupported,
                "pretrained checkpoint loading is not available in this build; leave encoders.vlm_checkpoint and "
                "encoders.ssl_checkpoint empty to use the toy encoders");
  EncoderBundle bundle = make_toy_encoders(settings.toy, settings.seed);
  if (settings.ssl_source == SSLSource::vlm_vision) bundle.ssl = std::make_shared<VisionAsSSLEncoder>(bundle.vision);
  bundle.validate();
  return bundle;
}

}  // namespace nola
