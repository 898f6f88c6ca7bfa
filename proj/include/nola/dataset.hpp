#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nola/kernels.hpp"

namespace nola {

/// One image of a split. The ground-truth label is held for evaluation only;
/// every read goes through the label guard.
class ImageRecord {
 public:
  ImageRecord(std::string id, std::filesystem::path path, std::optional<int> label = std::nullopt)
      : id_(std::move(id)), path_(std::move(path)), label_(label) {}

  const std::string& id() const { return id_; }
  const std::filesystem::path& path() const { return path_; }
  bool has_label() const { return label_.has_value(); }
  std::optional<int> true_label() const;

 private:
  std::string id_;
  std::filesystem::path path_;
  std::optional<int> label_;
};

enum class Split { train, test };
std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct DatasetManifest {
  std::string name;
  /// Canonical class order; every label index downstream refers to it.
  std::vector<std::string> class_names;
  std::vector<ImageRecord> train_items;
  std::vector<ImageRecord> test_items;

  std::size_t num_classes() const { return class_names.size(); }
  const std::vector<ImageRecord>& items(Split split) const {
    return split == Split::train ? train_items : test_items;
  }
  /// Index of `id` within the split, or nullopt.
  std::optional<std::size_t> find(Split split, const std::string& id) const;
};

/// Reads and validates a manifest. Relative image paths resolve against the
/// manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Writes paths relative to the manifest's directory when possible.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Batch of decoded images, NHWC floats in [0,1].
struct ImageBatch {
  std::vector<std::string> ids;
  std::vector<float> pixels;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;

  std::size_t size() const { return ids.size(); }
  std::size_t image_stride() const { return height * width * channels; }
  std::span<float> image(std::size_t b) { return {pixels.data() + b * image_stride(), image_stride()}; }
  std::span<const float> image(std::size_t b) const {
    return {pixels.data() + b * image_stride(), image_stride()};
  }

  static ImageBatch zeros(std::size_t batch, std::size_t side, std::size_t channels = 3);
};

std::uint64_t checksum(const ImageBatch& batch);

/// Decodes image files to RGB floats in [0,1] at a fixed square size
/// (shorter side resized, then center-cropped). Decoded images are memoized.
class ImageLoader {
 public:
  explicit ImageLoader(std::size_t input_size = 224, bool memoize = true)
      : input_size_(input_size), memoize_(memoize) {}

  std::size_t input_size() const { return input_size_; }
  std::vector<float> load(const std::filesystem::path& path) const;
  /// Loads records into one batch; decoding runs in parallel, order is kept.
  ImageBatch load_batch(std::span<const ImageRecord* const> records) const;

 private:
  std::size_t input_size_;
  bool memoize_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const std::vector<float>>> cache_;
};

/// Writes an NHWC [0,1] image as 8-bit PNG (or any format OpenCV knows by
/// extension).
void write_image(const std::filesystem::path& path, std::span<const float> pixels, std::size_t side,
                 std::size_t channels = 3);

/// Deterministic epoch over one split: the order is a pure function of
/// (records, batch_size, seed). Every record appears exactly once; the last
/// batch may be short.
class BatchStream {
 public:
  BatchStream(const DatasetManifest& manifest, Split split, std::size_t batch_size, std::uint64_t seed,
              std::shared_ptr<const ImageLoader> loader);

  std::size_t num_batches() const;
  std::size_t batch_size() const { return batch_size_; }
  /// Record indices into the split, in emission order.
  const std::vector<std::size_t>& order() const { return order_; }
  std::vector<std::string> batch_ids(std::size_t i) const;
  ImageBatch batch(std::size_t i) const;
  /// Sequential access; nullopt after the last batch.
  std::optional<ImageBatch> next();
  void rewind() { cursor_ = 0; }

 private:
  std::vector<ImageRecord> records_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  std::shared_ptr<const ImageLoader> loader_;
};

BatchStream iterate_batches(const DatasetManifest& manifest, Split split, std::size_t batch_size,
                            std::uint64_t seed,
                            std::shared_ptr<const ImageLoader> loader = std::make_shared<ImageLoader>());

}  // namespace nola
