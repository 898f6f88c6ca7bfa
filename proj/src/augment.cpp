#include "nola/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nola/error.hpp"

namespace nola {

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.crop_scale_min = c.crop_scale_max = 1.0;
  c.flip_probability = 0.0;
  c.brightness = c.contrast = c.saturation = c.hue = 0.0;
  c.blur_sigma_min = c.blur_sigma_max = 0.0;
  c.scale_min = c.scale_max = 1.0;
  c.perspective_probability = 0.0;
  c.perspective_distortion = 0.0;
  return c;
}

AugmentationPipeline AugmentationPipeline::strong(AugmentConfig params) {
  return {{AugmentOp::random_resized_crop, AugmentOp::random_scaling, AugmentOp::random_perspective,
           AugmentOp::horizontal_flip, AugmentOp::color_jitter, AugmentOp::gaussian_blur},
          params};
}

bool AugmentationPipeline::has(AugmentOp op) const { return std::find(ops.begin(), ops.end(), op) != ops.end(); }

Homography identity_homography() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Homography compose(const Homography& a, const Homography& b) {
  Homography out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) out[r * 3 + c] += a[r * 3 + k] * b[k * 3 + c];
  return out;
}

Homography homography_from_points(std::span<const std::array<double, 2>, 4> src,
                                  std::span<const std::array<double, 2>, 4> dst) {
  // Unknowns h0..h7 with h8 = 1; two equations per correspondence.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i][0], y = src[i][1], u = dst[i][0], v = dst[i][1];
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x, r0[1] = y, r0[2] = 1, r0[6] = -u * x, r0[7] = -u * y, r0[8] = u;
    r1[3] = x, r1[4] = y, r1[5] = 1, r1[6] = -v * x, r1[7] = -v * y, r1[8] = v;
  }
  for (int col = 0; col < 8; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12) throw Error(ErrorCode::DegenerateClass, "degenerate homography points");
    std::swap(a[col], a[pivot]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Homography h{};
  for (int i = 0; i < 8; ++i) h[i] = a[i][8] / a[i][i];
  h[8] = 1.0;
  return h;
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

// Crop rectangle (x0, y0, w, h) following torchvision's RandomResizedCrop.
std::array<double, 4> sample_crop(const AugmentConfig& p, double side, Rng& rng) {
  const double area = side * side;
  const double log_lo = std::log(p.crop_ratio_min), log_hi = std::log(p.crop_ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, p.crop_scale_min, p.crop_scale_max);
    const double ratio = std::exp(uniform(rng, log_lo, log_hi));
    const double w = std::round(std::sqrt(target * ratio));
    const double h = std::round(std::sqrt(target / ratio));
    if (w > 0 && h > 0 && w <= side && h <= side) {
      const double x0 = std::floor(uniform(rng, 0.0, side - w + 1.0 - 1e-9));
      const double y0 = std::floor(uniform(rng, 0.0, side - h + 1.0 - 1e-9));
      return {x0, y0, w, h};
    }
  }
  return {0.0, 0.0, side, side};
}

float gray(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

float clip01(float v) { return std::clamp(v, 0.0f, 1.0f); }

void jitter(std::span<float> img, const AugmentDraw& d) {
  const std::size_t n = img.size() / 3;
  for (int op : d.jitter_order) {
    switch (op) {
      case 0:
        if (d.brightness != 1.0)
          for (float& v : img) v = clip01(static_cast<float>(v * d.brightness));
        break;
      case 1:
        if (d.contrast != 1.0) {
          double mean = 0.0;
          for (std::size_t i = 0; i < n; ++i) mean += gray(img[3 * i], img[3 * i + 1], img[3 * i + 2]);
          mean /= static_cast<double>(n);
          for (float& v : img) v = clip01(static_cast<float>((v - mean) * d.contrast + mean));
        }
        break;
      case 2:
        if (d.saturation != 1.0)
          for (std::size_t i = 0; i < n; ++i) {
            const float g = gray(img[3 * i], img[3 * i + 1], img[3 * i + 2]);
            for (int c = 0; c < 3; ++c)
              img[3 * i + c] = clip01(static_cast<float>(g + (img[3 * i + c] - g) * d.saturation));
          }
        break;
      case 3:
        if (d.hue != 0.0) {
          // Hue rotation in YIQ space: rotate the chroma plane by hue * 2pi.
          const double th = d.hue * 2.0 * std::numbers::pi;
          const double cs = std::cos(th), sn = std::sin(th);
          for (std::size_t i = 0; i < n; ++i) {
            const double r = img[3 * i], g = img[3 * i + 1], b = img[3 * i + 2];
            const double y = 0.299 * r + 0.587 * g + 0.114 * b;
            const double ci = 0.596 * r - 0.274 * g - 0.322 * b;
            const double cq = 0.211 * r - 0.523 * g + 0.312 * b;
            const double i2 = cs * ci - sn * cq;
            const double q2 = sn * ci + cs * cq;
            img[3 * i] = clip01(static_cast<float>(y + 0.956 * i2 + 0.621 * q2));
            img[3 * i + 1] = clip01(static_cast<float>(y - 0.272 * i2 - 0.647 * q2));
            img[3 * i + 2] = clip01(static_cast<float>(y - 1.106 * i2 + 1.703 * q2));
          }
        }
        break;
    }
  }
}

void blur(std::span<float> img, std::size_t side, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  const int s = static_cast<int>(side);
  const auto reflect = [s](int i) {
    while (i < 0 || i >= s) i = i < 0 ? -i - 1 : 2 * s - i - 1;
    return i;
  };
  std::vector<float> tmp(img.size());
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img[(y * s + reflect(x + i)) * 3 + c];
        tmp[(y * s + x) * 3 + c] = static_cast<float>(acc);
      }
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[(reflect(y + i) * s + x) * 3 + c];
        img[(y * s + x) * 3 + c] = clip01(static_cast<float>(acc));
      }
}

}  // namespace

AugmentDraw sample_augmentation(const AugmentationPipeline& pipeline, std::size_t side_px, Rng& rng) {
  const AugmentConfig& p = pipeline.params;
  const double side = static_cast<double>(side_px);
  const double center = (side - 1.0) / 2.0;
  AugmentDraw d;

  // Output -> source mapping, composed from the last geometric op backwards.
  Homography crop = identity_homography();
  if (pipeline.has(AugmentOp::random_resized_crop)) {
    const auto [x0, y0, w, h] = sample_crop(p, side, rng);
    const double sx = w / side, sy = h / side;
    crop = {sx, 0, x0 + 0.5 * sx - 0.5, 0, sy, y0 + 0.5 * sy - 0.5, 0, 0, 1};
  }
  Homography scaling = identity_homography();
  if (pipeline.has(AugmentOp::random_scaling)) {
    const double s = uniform(rng, p.scale_min, p.scale_max);
    scaling = {1.0 / s, 0, center - center / s, 0, 1.0 / s, center - center / s, 0, 0, 1};
  }
  Homography perspective = identity_homography();
  if (pipeline.has(AugmentOp::random_perspective) && coin(rng, p.perspective_probability) &&
      p.perspective_distortion > 0.0) {
    const double dx = p.perspective_distortion * side / 2.0;
    const double m = side - 1.0;
    const std::array<std::array<double, 2>, 4> start{{{0, 0}, {m, 0}, {m, m}, {0, m}}};
    std::array<std::array<double, 2>, 4> end = start;
    const double sign[4][2] = {{1, 1}, {-1, 1}, {-1, -1}, {1, -1}};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) end[i][j] += sign[i][j] * uniform(rng, 0.0, dx);
    perspective = homography_from_points(end, start);
  }
  Homography flip = identity_homography();
  if (pipeline.has(AugmentOp::horizontal_flip) && coin(rng, p.flip_probability)) flip = {-1, 0, side - 1.0, 0, 1, 0, 0, 0, 1};
  d.output_to_source = compose(crop, compose(scaling, compose(perspective, flip)));

  if (pipeline.has(AugmentOp::color_jitter) && coin(rng, p.jitter_probability)) {
    d.jitter = true;
    if (p.brightness > 0) d.brightness = uniform(rng, std::max(0.0, 1.0 - p.brightness), 1.0 + p.brightness);
    if (p.contrast > 0) d.contrast = uniform(rng, std::max(0.0, 1.0 - p.contrast), 1.0 + p.contrast);
    if (p.saturation > 0) d.saturation = uniform(rng, std::max(0.0, 1.0 - p.saturation), 1.0 + p.saturation);
    if (p.hue > 0) d.hue = uniform(rng, -p.hue, p.hue);
    std::shuffle(d.jitter_order.begin(), d.jitter_order.end(), rng);
  }
  if (pipeline.has(AugmentOp::gaussian_blur) && p.blur_sigma_max > 0.0 && coin(rng, p.blur_probability))
    d.blur_sigma = uniform(rng, p.blur_sigma_min, p.blur_sigma_max);
  return d;
}

void apply_augmentation(const AugmentDraw& draw, std::span<const float> src, std::span<float> dst, std::size_t side) {
  if (src.size() != side * side * 3 || dst.size() != src.size())
    throw Error(ErrorCode::ShapeMismatch, "apply_augmentation: buffer sizes");
  const auto& h = draw.output_to_source;
  const double lim = static_cast<double>(side) - 1.0;
  const auto at = [&](std::size_t y, std::size_t x, std::size_t c) { return src[(y * side + x) * 3 + c]; };
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double xf = static_cast<double>(x), yf = static_cast<double>(y);
      const double w = h[6] * xf + h[7] * yf + h[8];
      double sx = (h[0] * xf + h[1] * yf + h[2]) / w;
      double sy = (h[3] * xf + h[4] * yf + h[5]) / w;
      float* out = &dst[(y * side + x) * 3];
      if (sx < -0.5 || sy < -0.5 || sx > lim + 0.5 || sy > lim + 0.5) {
        out[0] = out[1] = out[2] = 0.0f;
        continue;
      }
      sx = std::clamp(sx, 0.0, lim);
      sy = std::clamp(sy, 0.0, lim);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, side - 1), y1 = std::min(y0 + 1, side - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = at(y0, x0, c) * (1.0 - fx) + at(y0, x1, c) * fx;
        const double bottom = at(y1, x0, c) * (1.0 - fx) + at(y1, x1, c) * fx;
        out[c] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
      }
    }
  if (draw.jitter) jitter(dst, draw);
  if (draw.blur_sigma > 0.0) blur(dst, side, draw.blur_sigma);
  for (float& v : dst) v = clip01(v);
}

ImageBatch strong_augment(const ImageBatch& batch, const AugmentationPipeline& pipeline, std::uint64_t seed) {
  if (batch.height != batch.width || batch.channels != 3)
    throw Error(ErrorCode::ShapeMismatch, "strong_augment expects square RGB images");
  ImageBatch out;
  out.ids = batch.ids;
  out.height = batch.height;
  out.width = batch.width;
  out.channels = batch.channels;
  out.pixels.resize(batch.pixels.size());
  const auto n = static_cast<long>(batch.size());
#pragma omp parallel for schedule(static)
  for (long bi = 0; bi < n; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    Rng rng(mix_seed(seed, b));
    const AugmentDraw draw = sample_augmentation(pipeline, batch.height, rng);
    apply_augmentation(draw, batch.image(b), out.image(b), batch.height);
  }
  return out;
}

ImageBatch weak_augment(const ImageBatch& batch) { return batch; }

}  // namespace nola
