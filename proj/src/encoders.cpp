#include "nola/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "nola/error.hpp"
#include "nola/rng.hpp"

namespace nola {

double EmbeddingBatch::max_norm_error() const {
  double worst = 0.0;
  for (std::size_t r = 0; r < vectors.rows(); ++r) worst = std::max(worst, std::abs(l2_norm(vectors.row(r)) - 1.0));
  return worst;
}

PromptSet PromptSet::initialize(std::size_t count, std::size_t d_model, std::uint64_t seed) {
  PromptSet p{Matrix(count, d_model)};
  if (count == 0) return p;
  const double r = std::sqrt(6.0 / static_cast<double>(d_model + count));
  Rng rng(mix_seed(seed, 0x70726f6d7074ULL));
  std::uniform_real_distribution<double> dist(-r, r);
  for (double& v : p.tokens.values()) v = dist(rng);
  return p;
}

std::uint64_t checksum(std::span<const Parameter> params) {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params) {
    h = fnv1a(p.name, h);
    h = fnv1a_values(p.value.values(), h);
  }
  return h;
}

PromptedPass VisionEncoder::forward_prompted(const ImageBatch&, const PromptSet&) const {
  throw Error(ErrorCode::Unsupported, "this vision encoder has no differentiable prompt path");
}

Matrix VisionEncoder::backward_prompts(const PromptedPass&, const Matrix&) const {
  throw Error(ErrorCode::Unsupported, "this vision encoder has no differentiable prompt path");
}

void VisionEncoder::check_batch(const ImageBatch& batch) const {
  if (batch.size() == 0) throw Error(ErrorCode::EmptyInput, "empty image batch");
  if (batch.height != input_size() || batch.width != input_size() || batch.channels != 3)
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(input_size()) + "x" +
                                              std::to_string(input_size()) + "x3, got " +
                                              std::to_string(batch.height) + "x" + std::to_string(batch.width) +
                                              "x" + std::to_string(batch.channels));
  if (batch.pixels.size() != batch.size() * batch.image_stride())
    throw Error(ErrorCode::ShapeMismatch, "pixel buffer size does not match batch shape");
}

void VisionEncoder::check_prompts(const PromptSet& prompts) const {
  if (prompts.count() > 0 && prompts.width() != width())
    throw Error(ErrorCode::WidthMismatch, "prompt width " + std::to_string(prompts.width()) +
                                              " != encoder width " + std::to_string(width()));
}

void EncoderBundle::validate() const {
  if (!text || !vision || !ssl) throw Error(ErrorCode::InvalidConfig, "encoder bundle is incomplete");
  if (text->output_dim() != vision->output_dim())
    throw Error(ErrorCode::DimMismatch, "text and vision encoders disagree on embedding size");
}

EmbeddingBatch encode_text(const EncoderBundle& bundle, std::span<const std::string> texts) {
  return bundle.text->encode(texts);
}

EmbeddingBatch encode_image(const EncoderBundle& bundle, const ImageBatch& batch) {
  return bundle.vision->encode(batch);
}

EmbeddingBatch encode_image_prompted(const EncoderBundle& bundle, const ImageBatch& batch,
                                     const PromptSet& prompts) {
  return bundle.vision->encode_prompted(batch, prompts);
}

EmbeddingBatch encode_ssl(const EncoderBundle& bundle, const ImageBatch& batch) {
  return bundle.ssl->encode(batch);
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

const Matrix& find_param(std::span<const Parameter> params, std::string_view name) {
  for (const auto& p : params)
    if (p.name == name) return p.value;
  throw Error(ErrorCode::InvalidConfig, "no parameter named " + std::string(name));
}

}  // namespace

// --------------------------------------------------------------------------
// Text

std::vector<std::string> toy_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

ToyTextEncoder::ToyTextEncoder(const ToyEncoderConfig& config, std::uint64_t seed)
    : hash_seed_(mix_seed(seed, 0x68617368ULL)), context_length_(config.context_length) {
  Rng rng(mix_seed(seed, 0x74657874ULL));
  projection_ = {"text.projection", gaussian(config.d_vlm, config.text_buckets + 1, 1.0, rng)};
}

std::size_t ToyTextEncoder::bucket_of(std::string_view token) const {
  return fnv1a(token, kFnvOffset ^ hash_seed_) % (projection_.value.cols() - 1);
}

EmbeddingBatch ToyTextEncoder::encode(std::span<const std::string> texts) const {
  if (texts.empty()) throw Error(ErrorCode::EmptyInput, "no texts to encode");
  const Matrix& w = projection_.value;
  const std::size_t d = w.rows();
  // Start and end markers take two slots, as in CLIP's context window.
  const std::size_t max_tokens = context_length_ > 2 ? context_length_ - 2 : 0;
  EmbeddingBatch out{Matrix(texts.size(), d), true};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto tokens = toy_tokenize(texts[i]);
    if (tokens.size() > max_tokens) {
      tokens.resize(max_tokens);
      ++truncated_;
    }
    auto row = out.vectors.row(i);
    const std::size_t eot = end_of_text_column();
    for (std::size_t r = 0; r < d; ++r) row[r] = w(r, eot);
    for (const auto& tok : tokens) {
      const std::size_t col = bucket_of(tok);
      for (std::size_t r = 0; r < d; ++r) row[r] += w(r, col);
    }
  }
  kernels::normalize_rows(out.vectors, kernels::Exec::serial);
  return out;
}

std::uint64_t ToyTextEncoder::checksum() const {
  return nola::checksum(std::span<const Parameter>(&projection_, 1));
}

// --------------------------------------------------------------------------
// Vision

ToyVisionEncoder::ToyVisionEncoder(const ToyEncoderConfig& config, std::uint64_t seed) : config_(config) {
  if (config.patch_size == 0 || config.input_size % config.patch_size != 0)
    throw Error(ErrorCode::InvalidConfig, "input_size must be a multiple of patch_size");
  Rng rng(mix_seed(seed, 0x766973696f6eULL));
  const std::size_t d = config.d_model;
  const std::size_t pd = config.patch_size * config.patch_size * 3;
  const std::size_t m = patch_count();
  params_.push_back({"patch_embed.weight", gaussian(d, pd, 1.0 / std::sqrt(double(pd)), rng)});
  params_.push_back({"patch_embed.bias", gaussian(1, d, 0.02, rng)});
  params_.push_back({"pos_embed", gaussian(m, d, 0.1, rng)});
  params_.push_back({"cls_token", gaussian(1, d, 0.5, rng)});
  params_.push_back({"attn.query", gaussian(1, d, 1.0 / std::sqrt(double(d)), rng)});
  params_.push_back({"attn.value", gaussian(d, d, 1.0 / std::sqrt(double(d)), rng)});
  params_.push_back({"proj.weight", gaussian(config.d_vlm, d, 1.0 / std::sqrt(double(d)), rng)});
  params_.push_back({"proj.bias", gaussian(1, config.d_vlm, 0.1, rng)});
}

const Matrix& ToyVisionEncoder::parameter(std::string_view name) const { return find_param(params_, name); }

std::uint64_t ToyVisionEncoder::checksum() const { return nola::checksum(params_); }

Matrix ToyVisionEncoder::patchify(const ImageBatch& batch) const {
  const std::size_t p = config_.patch_size;
  const std::size_t side = config_.input_size / p;
  const std::size_t m = side * side;
  const std::size_t pd = p * p * 3;
  Matrix patches(batch.size() * m, pd);
  const auto n = static_cast<long>(batch.size());
#pragma omp parallel for schedule(static) if (config_.exec == kernels::Exec::parallel)
  for (long bi = 0; bi < n; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const auto img = batch.image(b);
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px) {
        auto row = patches.row(b * m + py * side + px);
        std::size_t k = 0;
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
              const float v = img[((py * p + y) * config_.input_size + (px * p + x)) * 3 + c];
              row[k++] = (static_cast<double>(v) - kPixelMean[c]) / kPixelStd[c];
            }
      }
  }
  return patches;
}

ImageTokens ToyVisionEncoder::tokenize(const ImageBatch& batch, std::size_t index) const {
  check_batch(batch);
  if (index >= batch.size()) throw Error(ErrorCode::ShapeMismatch, "image index out of range");
  ImageBatch one;
  one.ids = {batch.ids[index]};
  one.height = batch.height;
  one.width = batch.width;
  one.channels = batch.channels;
  const auto img = batch.image(index);
  one.pixels.assign(img.begin(), img.end());

  const Matrix patches = patchify(one);
  ImageTokens tokens;
  kernels::gemm_nt(patches, parameter("patch_embed.weight"), tokens.patch_tokens, config_.exec);
  const Matrix& bias = parameter("patch_embed.bias");
  const Matrix& pos = parameter("pos_embed");
  for (std::size_t r = 0; r < tokens.patch_tokens.rows(); ++r)
    for (std::size_t c = 0; c < width(); ++c) tokens.patch_tokens(r, c) += bias(0, c) + pos(r, c);
  const auto cls = parameter("cls_token").row(0);
  tokens.cls.assign(cls.begin(), cls.end());
  return tokens;
}

namespace {

struct ToyVisionCache : ForwardCache {
  Matrix sequence;  // [B*T, d]
  Matrix weights;   // [B, T]
  std::vector<double> norms;
};

}  // namespace

PromptedPass ToyVisionEncoder::run(const ImageBatch& batch, const PromptSet& prompts, bool keep_cache) const {
  check_batch(batch);
  check_prompts(prompts);
  const auto exec = config_.exec;
  const std::size_t d = width();
  const std::size_t m = patch_count();
  const std::size_t v = prompts.count();
  const std::size_t t_len = sequence_length(v);
  const std::size_t nb = batch.size();

  Matrix emb;
  kernels::gemm_nt(patchify(batch), parameter("patch_embed.weight"), emb, exec);

  const auto cls = parameter("cls_token").row(0);
  const Matrix& bias = parameter("patch_embed.bias");
  const Matrix& pos = parameter("pos_embed");
  Matrix sequence(nb * t_len, d);
  const auto n = static_cast<long>(nb);
#pragma omp parallel for schedule(static) if (exec == kernels::Exec::parallel)
  for (long bi = 0; bi < n; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const std::size_t base = b * t_len;
    std::copy(cls.begin(), cls.end(), sequence.row(base).begin());
    for (std::size_t j = 0; j < v; ++j) {
      auto src = prompts.tokens.row(j);
      std::copy(src.begin(), src.end(), sequence.row(base + 1 + j).begin());
    }
    for (std::size_t j = 0; j < m; ++j) {
      auto dst = sequence.row(base + 1 + v + j);
      auto src = emb.row(b * m + j);
      for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] + bias(0, c) + pos(j, c);
    }
  }

  Matrix pooled, weights;
  kernels::attention_pool(sequence, t_len, parameter("attn.query").row(0), pooled, weights, exec);

  Matrix out;
  kernels::gemm_nt(pooled, parameter("attn.value"), out, exec);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < d; ++c) out(b, c) += cls[c];

  PromptedPass pass;
  pass.num_prompts = v;
  pass.features.normalized = true;
  kernels::gemm_nt(out, parameter("proj.weight"), pass.features.vectors, exec);
  const auto pb = parameter("proj.bias").row(0);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < pb.size(); ++c) pass.features.vectors(b, c) += pb[c];
  auto norms = kernels::normalize_rows(pass.features.vectors, exec);

  if (keep_cache) {
    auto cache = std::make_unique<ToyVisionCache>();
    cache->sequence = std::move(sequence);
    cache->weights = std::move(weights);
    cache->norms = std::move(norms);
    pass.cache = std::move(cache);
  }
  return pass;
}

EmbeddingBatch ToyVisionEncoder::encode_prompted(const ImageBatch& batch, const PromptSet& prompts) const {
  return run(batch, prompts, false).features;
}

PromptedPass ToyVisionEncoder::forward_prompted(const ImageBatch& batch, const PromptSet& prompts) const {
  return run(batch, prompts, true);
}

Matrix ToyVisionEncoder::backward_prompts(const PromptedPass& pass, const Matrix& grad_features) const {
  const auto* cache = dynamic_cast<const ToyVisionCache*>(pass.cache.get());
  if (cache == nullptr) throw Error(ErrorCode::Unsupported, "forward pass was not recorded by this encoder");
  if (!grad_features.same_shape(pass.features.vectors))
    throw Error(ErrorCode::ShapeMismatch, "gradient shape does not match features");

  const std::size_t d = width();
  const std::size_t v = pass.num_prompts;
  const std::size_t t_len = sequence_length(v);
  const std::size_t nb = pass.features.size();
  const Matrix& proj = parameter("proj.weight");
  const Matrix& value = parameter("attn.value");
  const auto query = parameter("attn.query").row(0);

  // Per-image contributions, summed in batch order afterwards so the result
  // does not depend on thread scheduling.
  Matrix per_image(nb * v, d);
  const auto n = static_cast<long>(nb);
#pragma omp parallel for schedule(static) if (config_.exec == kernels::Exec::parallel)
  for (long bi = 0; bi < n; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const auto f = pass.features.vectors.row(b);
    const auto gf = grad_features.row(b);
    const double fg = dot(f, gf);
    std::vector<double> gy(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) gy[k] = (gf[k] - f[k] * fg) / cache->norms[b];

    std::vector<double> g_out(d, 0.0);
    for (std::size_t k = 0; k < proj.rows(); ++k)
      for (std::size_t c = 0; c < d; ++c) g_out[c] += proj(k, c) * gy[k];
    std::vector<double> g_pooled(d, 0.0);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) g_pooled[c] += value(r, c) * g_out[r];

    const auto a = cache->weights.row(b);
    std::vector<double> ga(t_len);
    double mean_ga = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      ga[t] = dot(g_pooled, cache->sequence.row(b * t_len + t));
      mean_ga += a[t] * ga[t];
    }
    for (std::size_t j = 0; j < v; ++j) {
      const std::size_t t = 1 + j;
      const double gs = a[t] * (ga[t] - mean_ga);
      auto dst = per_image.row(b * v + j);
      for (std::size_t c = 0; c < d; ++c) dst[c] = a[t] * g_pooled[c] + gs * query[c];
    }
  }

  Matrix grad(v, d);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t j = 0; j < v; ++j)
      for (std::size_t c = 0; c < d; ++c) grad(j, c) += per_image(b * v + j, c);
  return grad;
}

// --------------------------------------------------------------------------
// SSL

ToySSLEncoder::ToySSLEncoder(const ToyEncoderConfig& config, std::uint64_t seed) : config_(config) {
  if (config.patch_size == 0 || config.input_size % config.patch_size != 0)
    throw Error(ErrorCode::InvalidConfig, "input_size must be a multiple of patch_size");
  Rng rng(mix_seed(seed, 0x73736cULL));
  const std::size_t w = config.ssl_width;
  const std::size_t pd = config.patch_size * config.patch_size * 3;
  const std::size_t side = config.input_size / config.patch_size;
  params_.push_back({"embed.weight", gaussian(w, pd, 1.0 / std::sqrt(double(pd)), rng)});
  params_.push_back({"embed.bias", gaussian(1, w, 0.02, rng)});
  params_.push_back({"pos_embed", gaussian(side * side, w, 0.1, rng)});
  params_.push_back({"head.weight", gaussian(config.d_ssl, side * side * w, 1.0 / std::sqrt(double(side * side * w)), rng)});
  params_.push_back({"head.bias", gaussian(1, config.d_ssl, 0.1, rng)});
}

std::uint64_t ToySSLEncoder::checksum() const { return nola::checksum(params_); }

EmbeddingBatch ToySSLEncoder::encode(const ImageBatch& batch) const {
  const std::size_t s = config_.input_size;
  if (batch.size() == 0) throw Error(ErrorCode::EmptyInput, "empty image batch");
  if (batch.height != s || batch.width != s || batch.channels != 3 ||
      batch.pixels.size() != batch.size() * batch.image_stride())
    throw Error(ErrorCode::ShapeMismatch, "SSL encoder expects " + std::to_string(s) + "x" + std::to_string(s) + "x3");

  const std::size_t p = config_.patch_size;
  const std::size_t side = s / p;
  const std::size_t m = side * side;
  const std::size_t pd = p * p * 3;
  const std::size_t nb = batch.size();

  Matrix patches(nb * m, pd);
  const auto n = static_cast<long>(nb);
#pragma omp parallel for schedule(static) if (config_.exec == kernels::Exec::parallel)
  for (long bi = 0; bi < n; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const auto img = batch.image(b);
    double mean[3] = {0, 0, 0}, var[3] = {0, 0, 0};
    for (std::size_t i = 0; i < s * s; ++i)
      for (std::size_t c = 0; c < 3; ++c) mean[c] += img[i * 3 + c];
    for (double& mu : mean) mu /= static_cast<double>(s * s);
    for (std::size_t i = 0; i < s * s; ++i)
      for (std::size_t c = 0; c < 3; ++c) var[c] += (img[i * 3 + c] - mean[c]) * (img[i * 3 + c] - mean[c]);
    double inv_std[3];
    for (std::size_t c = 0; c < 3; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] / static_cast<double>(s * s) + 1e-6);
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px) {
        auto row = patches.row(b * m + py * side + px);
        std::size_t k = 0;
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t c = 0; c < 3; ++c)
              row[k++] = (img[((py * p + y) * s + (px * p + x)) * 3 + c] - mean[c]) * inv_std[c];
      }
  }

  Matrix tokens;
  kernels::gemm_nt(patches, find_param(params_, "embed.weight"), tokens, config_.exec);
  const Matrix& bias = find_param(params_, "embed.bias");
  const Matrix& pos = find_param(params_, "pos_embed");
  const std::size_t w = config_.ssl_width;
  Matrix grid(nb, m * w);
#pragma omp parallel for schedule(static) if (config_.exec == kernels::Exec::parallel)
  for (long bi = 0; bi < n; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    auto dst = grid.row(b);
    for (std::size_t j = 0; j < m; ++j) {
      auto t = tokens.row(b * m + j);
      for (std::size_t c = 0; c < w; ++c) dst[j * w + c] = std::tanh(t[c] + bias(0, c) + pos(j, c));
    }
  }

  EmbeddingBatch out{Matrix(), false};
  kernels::gemm_nt(grid, find_param(params_, "head.weight"), out.vectors, config_.exec);
  const auto hb = find_param(params_, "head.bias").row(0);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < hb.size(); ++c) out.vectors(b, c) += hb[c];
  return out;
}

EncoderBundle make_toy_encoders(const ToyEncoderConfig& config, std::uint64_t seed) {
  if (config.input_size == 0 || config.patch_size == 0 || config.d_model == 0 || config.d_vlm == 0 ||
      config.d_ssl == 0 || config.ssl_width == 0 || config.text_buckets == 0)
    throw Error(ErrorCode::InvalidConfig, "toy encoder dimensions must be positive");
  EncoderBundle bundle;
  bundle.text = std::make_shared<ToyTextEncoder>(config, mix_seed(seed, 1));
  bundle.vision = std::make_shared<ToyVisionEncoder>(config, mix_seed(seed, 2));
  bundle.ssl = std::make_shared<ToySSLEncoder>(config, mix_seed(seed, 3));
  return bundle;
}

}  // namespace nola
