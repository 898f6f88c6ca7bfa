#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "nola/augment.hpp"
#include "nola/error.hpp"
#include "nola/rng.hpp"

using namespace nola;
using nola::testing::random_batch;

TEST(WeakAugment, BytePassthroughOver100Batches) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const ImageBatch in = random_batch(1 + rng() % 8, 8 + 8 * (rng() % 3), rng());
    const ImageBatch out = weak_augment(in);
    ASSERT_EQ(out.pixels.size(), in.pixels.size());
    EXPECT_EQ(std::memcmp(out.pixels.data(), in.pixels.data(), in.pixels.size() * sizeof(float)), 0);
    EXPECT_EQ(checksum(out), checksum(in));
    EXPECT_EQ(checksum(weak_augment(out)), checksum(in));
    EXPECT_EQ(out.ids, in.ids);
  }
}

TEST(StrongAugment, DeterministicPerSeedAndShapePreserving) {
  const ImageBatch in = random_batch(5, 32, 1);
  const auto pipe = AugmentationPipeline::strong();
  const ImageBatch a = strong_augment(in, pipe, 42);
  const ImageBatch b = strong_augment(in, pipe, 42);
  const ImageBatch c = strong_augment(in, pipe, 43);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_NE(a.pixels, c.pixels);
  EXPECT_EQ(a.height, in.height);
  EXPECT_EQ(a.width, in.width);
  EXPECT_EQ(a.pixels.size(), in.pixels.size());
  for (float v : a.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(StrongAugment, IdentityParametersReturnInput) {
  const ImageBatch in = random_batch(6, 32, 5);
  const ImageBatch out = strong_augment(in, AugmentationPipeline::strong(AugmentConfig::identity()), 7);
  for (std::size_t i = 0; i < in.pixels.size(); ++i) ASSERT_NEAR(out.pixels[i], in.pixels[i], 1e-6);
}

TEST(StrongAugment, AllSixOpFamilies) {
  const auto pipe = AugmentationPipeline::strong();
  for (AugmentOp op : {AugmentOp::gaussian_blur, AugmentOp::random_resized_crop, AugmentOp::horizontal_flip,
                       AugmentOp::color_jitter, AugmentOp::random_scaling, AugmentOp::random_perspective})
    EXPECT_TRUE(pipe.has(op));
  EXPECT_TRUE(AugmentationPipeline::weak().is_weak());
}

TEST(StrongAugment, FlipOnlyMirrorsColumns) {
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.flip_probability = 1.0;
  const ImageBatch in = random_batch(1, 8, 2);
  const ImageBatch out = strong_augment(in, AugmentationPipeline::strong(cfg), 0);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(out.pixels[(y * 8 + x) * 3 + c], in.pixels[(y * 8 + 7 - x) * 3 + c], 1e-6);
}

TEST(Homography, FromPointsRecoversCorners) {
  const std::array<std::array<double, 2>, 4> src = {{{0, 0}, {10, 0}, {10, 10}, {0, 10}}};
  const std::array<std::array<double, 2>, 4> dst = {{{1, 2}, {9, 1}, {11, 12}, {-1, 9}}};
  const Homography h = homography_from_points(src, dst);
  for (std::size_t i = 0; i < 4; ++i) {
    const double w = h[6] * src[i][0] + h[7] * src[i][1] + h[8];
    EXPECT_NEAR((h[0] * src[i][0] + h[1] * src[i][1] + h[2]) / w, dst[i][0], 1e-9);
    EXPECT_NEAR((h[3] * src[i][0] + h[4] * src[i][1] + h[5]) / w, dst[i][1], 1e-9);
  }
  const Homography id = compose(identity_homography(), h);
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(id[k], h[k], 1e-12);
}

TEST(Homography, CollinearPointsDegenerate) {
  const std::array<std::array<double, 2>, 4> src = {{{0, 0}, {1, 1}, {2, 2}, {3, 3}}};
  EXPECT_THROW(homography_from_points(src, src), Error);
}
