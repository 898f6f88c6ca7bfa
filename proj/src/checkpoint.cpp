#include "nola/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nola/error.hpp"
#include "nola/rng.hpp"

namespace nola {

namespace {

constexpr std::string_view kMagic = "NOLA-TENSORS\n";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

const Matrix& TensorFile::tensor(std::string_view name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw Error(ErrorCode::CorruptFile, kind + " checkpoint has no tensor '" + std::string(name) + "'");
}

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  std::uint64_t sum = kFnvOffset;
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& [name, m] : file.tensors) {
    sum = fnv1a_values(std::span<const double>(m.values()), sum);
    listing.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  const nlohmann::json header = {{"kind", file.kind},
                                 {"format_version", file.format_version},
                                 {"payload_checksum", hex(sum)},
                                 {"tensors", listing},
                                 {"meta", file.meta}};
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + tmp.string());
    out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : file.tensors)
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!out) throw Error(ErrorCode::MissingFile, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorFile read_tensor_file(const std::filesystem::path& path, std::string_view expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, "no checkpoint at " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto corrupt = [&](const std::string& why) { return Error(ErrorCode::CorruptFile, path.string() + ": " + why); };

  if (bytes.size() < kMagic.size() + 8 || bytes.compare(0, kMagic.size(), kMagic) != 0) throw corrupt("bad magic");
  std::uint64_t length = 0;
  std::memcpy(&length, bytes.data() + kMagic.size(), sizeof length);
  const std::size_t body = kMagic.size() + 8;
  if (length > bytes.size() - body) throw corrupt("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(body, length));
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(std::string("header: ") + e.what());
  }

  TensorFile file;
  try {
    file.kind = header.at("kind").get<std::string>();
    file.format_version = header.at("format_version").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(std::string("header: ") + e.what());
  }
  if (file.format_version != kCheckpointVersion)
    throw Error(ErrorCode::VersionMismatch, path.string() + ": format_version " + std::to_string(file.format_version) +
                                                ", expected " + std::to_string(kCheckpointVersion));
  if (!expected_kind.empty() && file.kind != expected_kind)
    throw corrupt("holds a " + file.kind + " checkpoint, expected " + std::string(expected_kind));

  std::size_t offset = body + length;
  std::uint64_t sum = kFnvOffset;
  try {
    file.meta = header.value("meta", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      Matrix m(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>());
      const std::size_t n = m.size() * sizeof(double);
      if (n > bytes.size() - offset) throw corrupt("truncated payload");
      std::memcpy(m.data(), bytes.data() + offset, n);
      offset += n;
      sum = fnv1a_values(std::span<const double>(m.values()), sum);
      file.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
    if (offset != bytes.size()) throw corrupt("trailing bytes");
    if (header.at("payload_checksum").get<std::string>() != hex(sum)) throw corrupt("checksum mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(std::string("header: ") + e.what());
  }
  return file;
}

void save_classifier(const CDEClassifier& classifier, const std::string& dataset, const std::filesystem::path& path) {
  TensorFile f;
  f.kind = "cde_classifier";
  f.meta = {{"dataset", dataset},
            {"class_names", classifier.class_names},
            {"d", classifier.dim()},
            {"row_normalized", classifier.row_normalized},
            {"builder_version", 1}};
  f.tensors.emplace_back("weights", classifier.weights);
  write_tensor_file(f, path);
}

CDEClassifier load_classifier(const std::filesystem::path& path) {
  const TensorFile f = read_tensor_file(path, "cde_classifier");
  CDEClassifier c;
  c.weights = f.tensor("weights");
  try {
    c.class_names = f.meta.at("class_names").get<std::vector<std::string>>();
    c.row_normalized = f.meta.value("row_normalized", true);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
  if (c.class_names.size() != c.weights.rows()) throw Error(ErrorCode::CorruptFile, path.string() + ": class count");
  return c;
}

nlohmann::json to_json(const AlignTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"label_smoothing", c.label_smoothing},
          {"optimizer", std::string(to_string(c.optimizer))},
          {"weight_decay", c.weight_decay},
          {"hidden", c.hidden},
          {"seed", c.seed}};
}

AlignTrainConfig align_config_from_json(const nlohmann::json& j) {
  AlignTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.optimizer = optimizer_from_string(j.value("optimizer", std::string(to_string(c.optimizer))));
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.hidden = j.value("hidden", c.hidden);
  c.seed = j.value("seed", c.seed);
  return c;
}

void save_head(const AlignmentHead& head, const HeadMeta& meta, const std::filesystem::path& path) {
  TensorFile f;
  f.kind = "alignment_head";
  f.meta = {{"dataset", meta.dataset},
            {"d_ssl", head.input_dim()},
            {"C", head.num_classes()},
            {"trained", head.trained},
            {"epochs", meta.config.epochs},
            {"lr", meta.config.lr},
            {"epsilon", meta.config.label_smoothing},
            {"seed", meta.config.seed},
            {"config", to_json(meta.config)}};
  if (head.has_hidden()) {
    f.tensors.emplace_back("hidden_weight", head.hidden_weight);
    f.tensors.emplace_back("hidden_bias", head.hidden_bias);
  }
  f.tensors.emplace_back("weight", head.weight);
  f.tensors.emplace_back("bias", head.bias);
  write_tensor_file(f, path);
}

AlignmentHead load_head(const std::filesystem::path& path, HeadMeta* meta) {
  const TensorFile f = read_tensor_file(path, "alignment_head");
  AlignmentHead h;
  if (f.tensors.size() == 4) {
    h.hidden_weight = f.tensor("hidden_weight");
    h.hidden_bias = f.tensor("hidden_bias");
  }
  h.weight = f.tensor("weight");
  h.bias = f.tensor("bias");
  h.trained = f.meta.value("trained", true);
  if (meta) {
    meta->dataset = f.meta.value("dataset", "");
    meta->config = align_config_from_json(f.meta.value("config", nlohmann::json::object()));
  }
  return h;
}

nlohmann::json to_json(const PromptTuneConfig& c) {
  const AugmentConfig& a = c.augment;
  return {{"num_prompts", c.num_prompts},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"optimizer", std::string(to_string(c.optimizer))},
          {"weight_decay", c.weight_decay},
          {"label_smoothing", c.label_smoothing},
          {"logit_scale", c.logit_scale},
          {"targets", std::string(to_string(c.targets))},
          {"train_prompts", c.train_prompts},
          {"train_classifier", c.train_classifier},
          {"patience", c.patience},
          {"log_test_accuracy", c.log_test_accuracy},
          {"seed", c.seed},
          {"augment",
           {{"crop_scale", {a.crop_scale_min, a.crop_scale_max}},
            {"crop_ratio", {a.crop_ratio_min, a.crop_ratio_max}},
            {"flip_probability", a.flip_probability},
            {"jitter_probability", a.jitter_probability},
            {"jitter", {a.brightness, a.contrast, a.saturation, a.hue}},
            {"blur_probability", a.blur_probability},
            {"blur_sigma", {a.blur_sigma_min, a.blur_sigma_max}},
            {"scale", {a.scale_min, a.scale_max}},
            {"perspective_probability", a.perspective_probability},
            {"perspective_distortion", a.perspective_distortion}}}};
}

PromptTuneConfig tune_config_from_json(const nlohmann::json& j) {
  PromptTuneConfig c;
  c.num_prompts = j.value("num_prompts", c.num_prompts);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.optimizer = optimizer_from_string(j.value("optimizer", std::string(to_string(c.optimizer))));
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.logit_scale = j.value("logit_scale", c.logit_scale);
  c.targets = target_mode_from_string(j.value("targets", std::string("hard")));
  c.train_prompts = j.value("train_prompts", c.train_prompts);
  c.train_classifier = j.value("train_classifier", c.train_classifier);
  c.patience = j.value("patience", c.patience);
  c.log_test_accuracy = j.value("log_test_accuracy", c.log_test_accuracy);
  c.seed = j.value("seed", c.seed);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    AugmentConfig& o = c.augment;
    const auto pair = [&](const char* key, double& lo, double& hi) {
      if (a.contains(key)) lo = a.at(key).at(0).get<double>(), hi = a.at(key).at(1).get<double>();
    };
    pair("crop_scale", o.crop_scale_min, o.crop_scale_max);
    pair("crop_ratio", o.crop_ratio_min, o.crop_ratio_max);
    pair("blur_sigma", o.blur_sigma_min, o.blur_sigma_max);
    pair("scale", o.scale_min, o.scale_max);
    o.flip_probability = a.value("flip_probability", o.flip_probability);
    o.jitter_probability = a.value("jitter_probability", o.jitter_probability);
    if (a.contains("jitter")) {
      const auto& s = a.at("jitter");
      o.brightness = s.at(0), o.contrast = s.at(1), o.saturation = s.at(2), o.hue = s.at(3);
    }
    o.blur_probability = a.value("blur_probability", o.blur_probability);
    o.perspective_probability = a.value("perspective_probability", o.perspective_probability);
    o.perspective_distortion = a.value("perspective_distortion", o.perspective_distortion);
  }
  return c;
}

void save_tuned(const TunedModel& model, const nlohmann::json& meta, const std::filesystem::path& path) {
  TensorFile f;
  f.kind = "tuned_model";
  f.meta = meta;
  f.meta["V"] = model.prompts.count();
  f.meta["d_model"] = model.prompts.width();
  f.meta["C"] = model.classifier.num_classes();
  f.meta["class_names"] = model.classifier.class_names;
  f.meta["steps"] = model.steps;
  nlohmann::json log = nlohmann::json::array();
  for (const auto& r : model.log)
    log.push_back({{"epoch", r.epoch},
                   {"loss", r.loss},
                   {"test_top1", r.test_top1 ? nlohmann::json(*r.test_top1) : nlohmann::json()},
                   {"wall_seconds", r.wall_seconds}});
  f.meta["log"] = log;
  f.tensors.emplace_back("prompts", model.prompts.tokens);
  f.tensors.emplace_back("classifier", model.classifier.weights);
  write_tensor_file(f, path);
}

TunedModel load_tuned(const std::filesystem::path& path, nlohmann::json* meta) {
  const TensorFile f = read_tensor_file(path, "tuned_model");
  TunedModel m;
  m.prompts.tokens = f.tensor("prompts");
  m.classifier.weights = f.tensor("classifier");
  try {
    m.classifier.class_names = f.meta.at("class_names").get<std::vector<std::string>>();
    m.steps = f.meta.value("steps", std::size_t{0});
    for (const auto& r : f.meta.value("log", nlohmann::json::array())) {
      EpochRecord rec;
      rec.epoch = r.at("epoch");
      rec.loss = r.at("loss");
      if (!r.at("test_top1").is_null()) rec.test_top1 = r.at("test_top1").get<double>();
      rec.wall_seconds = r.at("wall_seconds");
      m.log.push_back(rec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
  if (meta) *meta = f.meta;
  return m;
}

}  // namespace nola
