#include "fixtures.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "nola/rng.hpp"

namespace fs = std::filesystem;

namespace nola::testing {

TempDir::TempDir(const std::string& prefix) {
  std::string pattern = (fs::temp_directory_path() / (prefix + "-XXXXXX")).string();
  if (::mkdtemp(pattern.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

ToyEncoderConfig tiny_toy_config() {
  ToyEncoderConfig c;
  c.input_size = 16;
  c.patch_size = 8;
  c.d_model = 8;
  c.d_vlm = 8;
  c.ssl_width = 8;
  c.d_ssl = 6;
  c.text_buckets = 64;
  return c;
}

EncoderBundle tiny_bundle(std::uint64_t seed) { return make_toy_encoders(tiny_toy_config(), seed); }

ImageBatch random_batch(std::size_t n, std::size_t side, std::uint64_t seed) {
  ImageBatch b = ImageBatch::zeros(n, side);
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : b.pixels) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) b.ids[i] = "img" + std::to_string(i);
  return b;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale) {
  Matrix m(rows, cols);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (double& v : m.values()) v = g(rng);
  return m;
}

DatasetManifest write_cluster_dataset(const fs::path& dir, std::size_t num_classes, std::size_t train_per_class,
                                      std::size_t test_per_class, std::size_t side, std::uint64_t seed) {
  fs::create_directories(dir / "images");
  DatasetManifest m;
  m.name = "clusters";
  for (std::size_t c = 0; c < num_classes; ++c) m.class_names.push_back("class" + std::to_string(c));
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<float> px(side * side * 3);
  for (Split split : {Split::train, Split::test}) {
    const std::size_t per = split == Split::train ? train_per_class : test_per_class;
    auto& items = split == Split::train ? m.train_items : m.test_items;
    for (std::size_t i = 0; i < per * num_classes; ++i) {
      const std::size_t c = i % num_classes;
      const double angle = 2.0 * 3.14159265358979 * static_cast<double>(c) / static_cast<double>(num_classes);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double base = 0.5 + 0.3 * std::cos(angle + 2.1 * static_cast<double>(ch));
            const double ramp = (c % 2 ? 0.1 : -0.1) * (static_cast<double>(x) / static_cast<double>(side) - 0.5);
            px[(y * side + x) * 3 + ch] = static_cast<float>(std::clamp(base + ramp + noise(rng), 0.0, 1.0));
          }
      const std::string id = std::string(to_string(split)) + "_" + std::to_string(i);
      const fs::path path = dir / "images" / (id + ".png");
      write_image(path, px, side);
      items.emplace_back(id, path, static_cast<int>(c));
    }
  }
  save_manifest(m, dir / "manifest.json");
  return load_manifest(dir / "manifest.json");
}

DescriptionSet simple_descriptions(const DatasetManifest& manifest, std::size_t k) {
  DescriptionSet set;
  set.dataset = manifest.name;
  set.class_names = manifest.class_names;
  set.templates = {"Describe a {}."};
  for (const auto& name : manifest.class_names)
    for (std::size_t i = 0; i < k; ++i)
      set.per_class[name].push_back("a " + name + " with feature " + std::to_string(i));
  return set;
}

ExperimentConfig small_experiment(const fs::path& output_dir, std::uint64_t seed) {
  ExperimentConfig c;
  c.name = "small";
  SyntheticConfig s;
  s.train_per_class = 24;
  s.test_per_class = 12;
  c.synthetic = s;
  c.encoders.seed = 7;
  c.align.epochs = 10;
  c.align.lr = 1e-2;
  c.tune.epochs = 2;
  c.tune.batch_size = 32;
  c.tune.num_prompts = 4;
  c.output_dir = output_dir;
  c.seeds = {seed, seed, seed};
  c.align.seed = seed;
  c.tune.seed = seed;
  return c;
}

ExperimentConfig benchmark_experiment(const fs::path& output_dir, std::uint64_t seed) {
  ExperimentConfig c = load_config(fs::path(NOLA_SOURCE_DIR) / "configs" / "synthetic.yaml");
  c.output_dir = output_dir;
  c.seeds = {seed, seed, seed};
  c.align.seed = seed;
  c.tune.seed = seed;
  return c;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace nola::testing
