#include "nola/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <spdlog/spdlog.h>

#include "nola/error.hpp"
#include "nola/rng.hpp"

namespace nola {

namespace fs = std::filesystem;

void SyntheticConfig::validate() const {
  if (num_classes < 2) throw Error(ErrorCode::InvalidConfig, "synthetic.num_classes must be >= 2");
  if (latent_dim < num_classes) throw Error(ErrorCode::InvalidConfig, "synthetic.latent_dim must be >= num_classes");
  if (train_per_class == 0 || test_per_class == 0)
    throw Error(ErrorCode::InvalidConfig, "synthetic split sizes must be positive");
  if (image_size < 8) throw Error(ErrorCode::InvalidConfig, "synthetic.image_size must be >= 8");
  if (completions_per_prompt == 0 || words_per_description == 0 || candidate_words == 0)
    throw Error(ErrorCode::InvalidConfig, "synthetic description settings must be positive");
  if (!(description_mix >= 0.0 && description_mix <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "synthetic.description_mix must be in [0, 1]");
}

const std::vector<std::string>& synthetic_questions() {
  static const std::vector<std::string> q = {"Describe what a {} looks like.",
                                             "What are the identifying characteristics of a {}?"};
  return q;
}

const std::vector<std::string>& synthetic_class_templates() {
  static const std::vector<std::string> t = {"a photo of a {}."};
  return t;
}

namespace {

const std::vector<std::string> kClassNames = {"alpha", "bravo",  "charlie", "delta",  "echo",    "foxtrot", "golf",
                                              "hotel", "india",  "juliett", "kilo",   "lima",    "mike",    "november",
                                              "oscar", "papa",   "quebec",  "romeo",  "sierra",  "tango",   "uniform",
                                              "victor", "whiskey", "xray",   "yankee", "zulu"};

std::string class_name(std::size_t c) {
  if (c < kClassNames.size()) return kClassNames[c];
  return kClassNames[c % kClassNames.size()] + std::to_string(c / kClassNames.size());
}

double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

// Zero-mean, unit-RMS sums of a few random low-frequency cosines.
std::vector<std::vector<float>> make_basis(std::size_t count, std::size_t side, Rng& rng) {
  std::vector<std::vector<float>> basis(count, std::vector<float>(side * side));
  std::uniform_int_distribution<int> freq(0, 3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (auto& b : basis) {
    std::vector<double> img(side * side, 0.0);
    for (int wave = 0; wave < 3; ++wave) {
      int fx = freq(rng), fy = freq(rng);
      if (fx == 0 && fy == 0) fx = 1;
      const double ph = phase(rng);
      const double amp = gaussian(rng);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          img[y * side + x] += amp * std::cos(2.0 * std::numbers::pi *
                                                   (fx * static_cast<double>(x) + fy * static_cast<double>(y)) /
                                                   static_cast<double>(side) +
                                               ph);
    }
    double mean = 0.0, sq = 0.0;
    for (double v : img) mean += v;
    mean /= static_cast<double>(img.size());
    for (double v : img) sq += (v - mean) * (v - mean);
    const double rms = std::sqrt(sq / static_cast<double>(img.size()));
    for (std::size_t i = 0; i < img.size(); ++i) b[i] = static_cast<float>((img[i] - mean) / (rms > 0 ? rms : 1.0));
  }
  return basis;
}

// Orthonormal rows via Gram-Schmidt on Gaussian vectors.
Matrix orthonormal_rows(std::size_t rows, std::size_t dim, Rng& rng) {
  Matrix m(rows, dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (;;) {
      for (double& v : m.row(r)) v = gaussian(rng);
      for (std::size_t p = 0; p < r; ++p) {
        const double d = dot(m.row(r), m.row(p));
        for (std::size_t k = 0; k < dim; ++k) m(r, k) -= d * m(p, k);
      }
      const double n = l2_norm(m.row(r));
      if (n > 1e-6) {
        for (double& v : m.row(r)) v /= n;
        break;
      }
    }
  }
  return m;
}

struct ClassModel {
  Matrix latent_means;               // [C, L]
  std::vector<std::array<double, 3>> tints;
  std::vector<std::vector<float>> basis;
};

struct Nuisance {
  double brightness = 0.0;
  double contrast = 1.0;
};

void render(const SyntheticConfig& cfg, const ClassModel& model, std::span<const double> latent,
            const std::array<double, 3>& tint, const Nuisance& nuisance, Rng* noise_rng, std::span<float> out) {
  const std::size_t n = cfg.image_size * cfg.image_size;
  for (std::size_t i = 0; i < n; ++i) {
    double pattern = 0.0;
    for (std::size_t j = 0; j < latent.size(); ++j) pattern += latent[j] * model.basis[j][i];
    pattern *= cfg.pattern_amplitude * nuisance.contrast;
    for (std::size_t c = 0; c < 3; ++c) {
      double v = 0.5 + nuisance.brightness + pattern + tint[c];
      if (noise_rng) v += cfg.pixel_noise * gaussian(*noise_rng);
      out[i * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
}

ClassModel make_class_model(const SyntheticConfig& cfg, Rng& rng) {
  ClassModel m;
  m.basis = make_basis(cfg.latent_dim, cfg.image_size, rng);
  m.latent_means = orthonormal_rows(cfg.num_classes, cfg.latent_dim, rng);
  for (double& v : m.latent_means.values()) v *= cfg.class_separation;
  // Zero-sum chroma plane, so tints do not change mean intensity.
  const std::array<double, 3> u1{1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0), 0.0};
  const std::array<double, 3> u2{1.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0), -2.0 / std::sqrt(6.0)};
  const double offset = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const double th = offset + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(cfg.num_classes);
    std::array<double, 3> t{};
    for (int k = 0; k < 3; ++k) t[k] = cfg.tint_separation * (std::cos(th) * u1[k] + std::sin(th) * u2[k]);
    m.tints.push_back(t);
  }
  return m;
}

}  // namespace

const std::vector<std::string>& SyntheticLLMClient::vocabulary() {
  static const std::vector<std::string> words = [] {
    const char* onset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    const char* nucleus[] = {"a", "e", "i", "o", "u"};
    const char* coda[] = {"n", "r", "l", "s", "k", "m", "th", "sh"};
    std::vector<std::string> out;
    for (const char* a : onset)
      for (const char* b : nucleus)
        for (const char* c : coda) out.push_back(std::string(a) + b + c + "o");
    return out;
  }();
  return words;
}

SyntheticLLMClient::SyntheticLLMClient(std::shared_ptr<const TextEncoder> text, std::vector<std::string> class_names,
                                       Matrix targets, std::size_t completions, std::size_t words,
                                       std::size_t candidates, std::uint64_t seed)
    : text_(std::move(text)),
      class_names_(std::move(class_names)),
      targets_(std::move(targets)),
      completions_(completions),
      words_(words),
      candidates_(candidates),
      seed_(seed) {
  if (targets_.rows() != class_names_.size() || targets_.cols() != text_->output_dim())
    throw Error(ErrorCode::DimMismatch, "synthetic LLM targets shape");
}

std::vector<std::string> SyntheticLLMClient::complete(const std::string& prompt) {
  // Longest class name contained in the prompt.
  std::size_t cls = class_names_.size();
  for (std::size_t c = 0; c < class_names_.size(); ++c)
    if (prompt.find(class_names_[c]) != std::string::npos &&
        (cls == class_names_.size() || class_names_[c].size() > class_names_[cls].size()))
      cls = c;
  if (cls == class_names_.size()) throw Error(ErrorCode::MissingClass, "prompt names no known class: " + prompt);

  const auto& vocab = vocabulary();
  const auto target = targets_.row(cls);
  std::vector<std::string> out;
  for (std::size_t k = 0; k < completions_; ++k) {
    Rng rng(mix_seed(seed_, fnv1a(prompt) + k));
    const std::string prefix = "A " + class_names_[cls] + " has";
    std::string body;
    for (std::size_t step = 0; step < words_; ++step) {
      std::vector<std::string> texts;
      std::vector<std::size_t> picks;
      std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
      for (std::size_t i = 0; i < candidates_; ++i) {
        picks.push_back(pick(rng));
        texts.push_back(prefix + body + " " + vocab[picks.back()] + ".");
      }
      const EmbeddingBatch e = text_->encode(texts);
      std::size_t best = 0;
      double best_cos = -2.0;
      for (std::size_t i = 0; i < texts.size(); ++i) {
        const double c = dot(e.vectors.row(i), target);
        if (c > best_cos) best_cos = c, best = i;
      }
      body += " " + vocab[picks[best]];
    }
    out.push_back(prefix + body + ".");
  }
  return out;
}

SyntheticBenchmark make_synthetic_benchmark(const SyntheticConfig& cfg, const EncoderBundle& bundle,
                                            const fs::path& dir) {
  cfg.validate();
  bundle.validate();
  Rng rng(mix_seed(cfg.seed, 0x73796e7468ULL));
  const ClassModel model = make_class_model(cfg, rng);
  const std::size_t side = cfg.image_size;
  const std::size_t stride = side * side * 3;

  fs::create_directories(dir / "images");
  DatasetManifest manifest;
  manifest.name = "synthetic-" + std::to_string(cfg.seed);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) manifest.class_names.push_back(class_name(c));

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<float> pixels(stride);
  for (Split split : {Split::train, Split::test}) {
    const std::size_t per_class = split == Split::train ? cfg.train_per_class : cfg.test_per_class;
    std::vector<int> labels;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) labels.insert(labels.end(), per_class, static_cast<int>(c));
    std::shuffle(labels.begin(), labels.end(), rng);
    auto& items = split == Split::train ? manifest.train_items : manifest.test_items;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int c = labels[i];
      std::vector<double> z(cfg.latent_dim);
      for (std::size_t j = 0; j < z.size(); ++j) z[j] = model.latent_means(c, j) + cfg.latent_noise * gaussian(rng);
      std::array<double, 3> tint = model.tints[c];
      for (double& t : tint) t += cfg.tint_noise * gaussian(rng);
      const Nuisance nuisance{cfg.brightness * unit(rng), std::exp(cfg.contrast * unit(rng))};
      render(cfg, model, z, tint, nuisance, &rng, pixels);

      char id[32];
      std::snprintf(id, sizeof id, "%s_%04zu", std::string(to_string(split)).c_str(), i);
      const fs::path path = dir / "images" / (std::string(id) + ".png");
      write_image(path, pixels, side);
      items.emplace_back(id, path, c);
    }
  }
  SyntheticBenchmark bench;
  bench.manifest_path = dir / "manifest.json";
  save_manifest(manifest, bench.manifest_path);
  bench.manifest = load_manifest(bench.manifest_path);

  // Description targets from noise-free class prototypes.
  ImageBatch protos = ImageBatch::zeros(cfg.num_classes, side);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    protos.ids[c] = manifest.class_names[c];
    render(cfg, model, model.latent_means.row(c), model.tints[c], Nuisance{}, nullptr, protos.image(c));
  }
  const EmbeddingBatch proto_embed = encode_image(bundle, protos);
  Matrix targets(cfg.num_classes, proto_embed.dim());
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const std::size_t next = (c + 1) % cfg.num_classes;
    for (std::size_t k = 0; k < targets.cols(); ++k)
      targets(c, k) = (1.0 - cfg.description_mix) * proto_embed.vectors(c, k) +
                      cfg.description_mix * proto_embed.vectors(next, k);
    const double n = l2_norm(targets.row(c));
    for (double& v : targets.row(c)) v /= n;
  }

  SyntheticLLMClient client(bundle.text, manifest.class_names, std::move(targets), cfg.completions_per_prompt,
                            cfg.words_per_description, cfg.candidate_words, mix_seed(cfg.seed, 0x6c6c6dULL));
  bench.descriptions = generate_descriptions(client, bench.manifest, synthetic_questions());
  add_class_templates(bench.descriptions, synthetic_class_templates());
  bench.descriptions_path = dir / "descriptions.json";
  save_descriptions(bench.descriptions, bench.descriptions_path);
  spdlog::info("synthetic benchmark: {} train, {} test images in {}", manifest.train_items.size(),
               manifest.test_items.size(), dir.string());
  return bench;
}

}  // namespace nola
