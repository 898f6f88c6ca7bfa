#include "nola/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "nola/error.hpp"
#include "nola/label_guard.hpp"
#include "nola/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nola {

std::optional<int> ImageRecord::true_label() const {
  note_label_access();
  return label_;
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw Error(ErrorCode::InvalidConfig, "unknown split '" + std::string(name) + "'");
}

std::optional<std::size_t> DatasetManifest::find(Split split, const std::string& id) const {
  const auto& v = items(split);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i].id() == id) return i;
  return std::nullopt;
}

namespace {

json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

std::vector<ImageRecord> parse_records(const json& doc, const char* field, const fs::path& base,
                                       const std::vector<std::string>& classes) {
  std::vector<ImageRecord> out;
  if (!doc.contains(field)) return out;
  const json& arr = doc.at(field);
  if (!arr.is_array()) throw Error(ErrorCode::SchemaViolation, std::string(field) + " must be an array");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& r = arr[i];
    const std::string where = std::string(field) + "[" + std::to_string(i) + "]";
    if (!r.is_object() || !r.contains("id") || !r["id"].is_string())
      throw Error(ErrorCode::SchemaViolation, where + ".id");
    if (!r.contains("path") || !r["path"].is_string())
      throw Error(ErrorCode::SchemaViolation, where + ".path");
    fs::path p = r["path"].get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, where + ".path: " + p.string());
    std::optional<int> label;
    if (r.contains("label") && !r["label"].is_null()) {
      const json& l = r["label"];
      if (l.is_number_integer()) {
        label = l.get<int>();
      } else if (l.is_string()) {
        auto it = std::find(classes.begin(), classes.end(), l.get<std::string>());
        if (it == classes.end()) throw Error(ErrorCode::SchemaViolation, where + ".label: unknown class");
        label = static_cast<int>(it - classes.begin());
      } else {
        throw Error(ErrorCode::SchemaViolation, where + ".label");
      }
      if (*label < 0 || *label >= static_cast<int>(classes.size()))
        throw Error(ErrorCode::SchemaViolation, where + ".label out of range");
    }
    out.emplace_back(r["id"].get<std::string>(), p, label);
  }
  return out;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  const json doc = read_json_file(path);
  if (!doc.is_object()) throw Error(ErrorCode::SchemaViolation, "manifest root must be an object");
  DatasetManifest m;
  if (!doc.contains("name") || !doc["name"].is_string()) throw Error(ErrorCode::SchemaViolation, "name");
  m.name = doc["name"].get<std::string>();
  if (!doc.contains("classes") || !doc["classes"].is_array())
    throw Error(ErrorCode::SchemaViolation, "classes");
  for (const json& c : doc["classes"]) {
    if (!c.is_string() || c.get<std::string>().empty())
      throw Error(ErrorCode::SchemaViolation, "classes: entries must be nonempty strings");
    m.class_names.push_back(c.get<std::string>());
  }
  if (m.class_names.empty()) throw Error(ErrorCode::EmptyClassList, path.string());
  if (m.class_names.size() < 2) throw Error(ErrorCode::SchemaViolation, "classes: need at least 2");
  std::set<std::string> seen;
  for (const auto& c : m.class_names)
    if (!seen.insert(c).second) throw Error(ErrorCode::SchemaViolation, "classes: duplicate '" + c + "'");

  const fs::path base = path.parent_path();
  m.train_items = parse_records(doc, "train", base, m.class_names);
  m.test_items = parse_records(doc, "test", base, m.class_names);

  std::set<std::string> train_ids;
  for (const auto& r : m.train_items)
    if (!train_ids.insert(r.id()).second) throw Error(ErrorCode::SchemaViolation, "train: duplicate id " + r.id());
  std::set<std::string> test_ids;
  for (const auto& r : m.test_items) {
    if (!test_ids.insert(r.id()).second) throw Error(ErrorCode::SchemaViolation, "test: duplicate id " + r.id());
    if (train_ids.count(r.id())) throw Error(ErrorCode::SchemaViolation, "test: id " + r.id() + " also in train");
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const fs::path base = path.parent_path();
  auto records = [&](const std::vector<ImageRecord>& items) {
    EvaluationScope eval;  // serializing labels is not a training read
    json arr = json::array();
    for (const auto& r : items) {
      json e{{"id", r.id()}, {"path", fs::relative(r.path(), base.empty() ? "." : base).generic_string()}};
      if (auto l = r.true_label()) e["label"] = *l;
      arr.push_back(std::move(e));
    }
    return arr;
  };
  json doc{{"name", manifest.name},
           {"classes", manifest.class_names},
           {"train", records(manifest.train_items)},
           {"test", records(manifest.test_items)}};
  std::ofstream out(path);
  out << doc.dump(1) << '\n';
}

ImageBatch ImageBatch::zeros(std::size_t batch, std::size_t side, std::size_t channels) {
  ImageBatch b;
  b.ids.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) b.ids[i] = std::to_string(i);
  b.height = b.width = side;
  b.channels = channels;
  b.pixels.assign(batch * side * side * channels, 0.0f);
  return b;
}

std::uint64_t checksum(const ImageBatch& batch) {
  std::uint64_t h = fnv1a_values(std::span<const float>(batch.pixels));
  for (const auto& id : batch.ids) h = fnv1a(id, h);
  return h;
}

std::vector<float> ImageLoader::load(const fs::path& path) const {
  const std::string key = path.string();
  if (memoize_) {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return *it->second;
  }
  cv::Mat bgr = cv::imread(key, cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorCode::ParseError, "cannot decode image " + key);
  const int side = static_cast<int>(input_size_);
  if (bgr.rows != side || bgr.cols != side) {
    const double scale = static_cast<double>(side) / std::min(bgr.rows, bgr.cols);
    cv::Mat resized;
    cv::resize(bgr, resized,
               cv::Size(std::max(side, static_cast<int>(std::lround(bgr.cols * scale))),
                        std::max(side, static_cast<int>(std::lround(bgr.rows * scale)))),
               0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
    const int x0 = (resized.cols - side) / 2;
    const int y0 = (resized.rows - side) / 2;
    bgr = resized(cv::Rect(x0, y0, side, side)).clone();
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  std::vector<float> pixels(static_cast<std::size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    for (int i = 0; i < side * 3; ++i) pixels[static_cast<std::size_t>(y) * side * 3 + i] = row[i] / 255.0f;
  }
  if (memoize_) {
    std::lock_guard lock(mutex_);
    cache_.emplace(key, std::make_shared<const std::vector<float>>(pixels));
  }
  return pixels;
}

ImageBatch ImageLoader::load_batch(std::span<const ImageRecord* const> records) const {
  ImageBatch batch;
  batch.height = batch.width = input_size_;
  batch.channels = 3;
  batch.ids.reserve(records.size());
  for (const auto* r : records) batch.ids.push_back(r->id());
  batch.pixels.resize(records.size() * batch.image_stride());
  const auto n = static_cast<long>(records.size());
  // Decode failures are rethrown on the calling thread.
  std::vector<std::string> errors(records.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto b = static_cast<std::size_t>(i);
    try {
      const auto px = load(records[b]->path());
      std::copy(px.begin(), px.end(), batch.image(b).begin());
    } catch (const std::exception& e) {
      errors[b] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(ErrorCode::ParseError, e);
  return batch;
}

void write_image(const fs::path& path, std::span<const float> pixels, std::size_t side, std::size_t channels) {
  if (pixels.size() != side * side * channels) throw Error(ErrorCode::ShapeMismatch, "write_image");
  const int type = channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat img(static_cast<int>(side), static_cast<int>(side), type);
  for (std::size_t y = 0; y < side; ++y) {
    auto* row = img.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < side; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        // RGB -> BGR for OpenCV
        const std::size_t src_c = channels == 3 ? 2 - c : c;
        const float v = std::clamp(pixels[(y * side + x) * channels + src_c], 0.0f, 1.0f);
        row[x * channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  }
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
}

BatchStream::BatchStream(const DatasetManifest& manifest, Split split, std::size_t batch_size, std::uint64_t seed,
                         std::shared_ptr<const ImageLoader> loader)
    : records_(manifest.items(split)), batch_size_(batch_size), loader_(std::move(loader)) {
  if (batch_size_ == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (records_.empty()) throw Error(ErrorCode::EmptySplit, std::string(to_string(split)));
  order_.resize(records_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng(mix_seed(seed, 0x6261746368ULL));
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::size_t BatchStream::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::vector<std::string> BatchStream::batch_ids(std::size_t i) const {
  std::vector<std::string> ids;
  const std::size_t lo = i * batch_size_;
  const std::size_t hi = std::min(order_.size(), lo + batch_size_);
  for (std::size_t j = lo; j < hi; ++j) ids.push_back(records_[order_[j]].id());
  return ids;
}

ImageBatch BatchStream::batch(std::size_t i) const {
  if (i >= num_batches()) throw Error(ErrorCode::ShapeMismatch, "batch index out of range");
  std::vector<const ImageRecord*> recs;
  const std::size_t lo = i * batch_size_;
  const std::size_t hi = std::min(order_.size(), lo + batch_size_);
  for (std::size_t j = lo; j < hi; ++j) recs.push_back(&records_[order_[j]]);
  return loader_->load_batch(recs);
}

std::optional<ImageBatch> BatchStream::next() {
  if (cursor_ >= num_batches()) return std::nullopt;
  return batch(cursor_++);
}

BatchStream iterate_batches(const DatasetManifest& manifest, Split split, std::size_t batch_size, std::uint64_t seed,
                            std::shared_ptr<const ImageLoader> loader) {
  return BatchStream(manifest, split, batch_size, seed, std::move(loader));
}

}  // namespace nola
