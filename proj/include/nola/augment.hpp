#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "nola/dataset.hpp"
#include "nola/rng.hpp"

namespace nola {

enum class AugmentOp {
  gaussian_blur,
  random_resized_crop,
  horizontal_flip,
  color_jitter,
  random_scaling,
  random_perspective,
};

/// SimSiam-style parameter ranges. Scaling and perspective use mild defaults.
struct AugmentConfig {
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_probability = 0.5;
  double jitter_probability = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double blur_probability = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double perspective_probability = 0.5;
  double perspective_distortion = 0.2;

  /// Every op reduced to the identity.
  static AugmentConfig identity();
};

struct AugmentationPipeline {
  std::vector<AugmentOp> ops;
  AugmentConfig params;

  static AugmentationPipeline weak() { return {}; }
  /// All six op families.
  static AugmentationPipeline strong(AugmentConfig params = {});
  bool is_weak() const { return ops.empty(); }
  bool has(AugmentOp op) const;
};

/// Row-major 3x3 projective transform.
using Homography = std::array<double, 9>;

Homography identity_homography();
Homography compose(const Homography& a, const Homography& b);  ///< a * b
/// Solves for the homography taking each src[i] to dst[i] (four points).
Homography homography_from_points(std::span<const std::array<double, 2>, 4> src,
                                  std::span<const std::array<double, 2>, 4> dst);

/// Per-image sampled transform.
struct AugmentDraw {
  Homography output_to_source = identity_homography();
  bool jitter = false;
  std::array<int, 4> jitter_order{0, 1, 2, 3};  ///< brightness, contrast, saturation, hue
  double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
  double blur_sigma = 0.0;
};

AugmentDraw sample_augmentation(const AugmentationPipeline& pipeline, std::size_t side, Rng& rng);

/// Applies a drawn transform to one HWC RGB image; output clipped to [0,1].
void apply_augmentation(const AugmentDraw& draw, std::span<const float> src, std::span<float> dst, std::size_t side);

/// Independently sampled parameters per image; deterministic per
/// (seed, position in batch).
ImageBatch strong_augment(const ImageBatch& batch, const AugmentationPipeline& pipeline, std::uint64_t seed);

/// Identity view.
ImageBatch weak_augment(const ImageBatch& batch);

}  // namespace nola
