#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "ecdiff/metrics.hpp"
#include "ecdiff/random.hpp"

using namespace ecdiff;

TEST(Mse, SimpleValues) {
  EXPECT_DOUBLE_EQ(mse(Tensor::vector({1.0, 2.0}), Tensor::vector({1.0, 4.0})), 2.0);
  EXPECT_EQ(mse(Tensor::vector({0.5, 0.5}), Tensor::vector({0.5, 0.5})), 0.0);
  EXPECT_THROW(mse(Tensor::vector({1.0}), Tensor::vector({1.0, 2.0})), ShapeError);
}

TEST(Psnr, TwentyDecibelsAtOnePercent) {
  EXPECT_NEAR(psnr_from_mse(0.01, 1.0), 20.0, 1e-12);
  // mse 0.01 from a constant offset of 0.1
  Tensor a = Tensor::vector({0.2, 0.4, 0.6, 0.8});
  Tensor b = Tensor::vector({0.3, 0.5, 0.7, 0.9});
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Psnr, PeakEqualToRmsGivesZero) {
  MetricConfig cfg;
  cfg.peak_value = 255.0;
  EXPECT_NEAR(psnr_from_mse(255.0 * 255.0, cfg.peak_value), 0.0, 1e-12);
}

TEST(Psnr, IdenticalInputsAreInfinite) {
  Tensor a = Tensor::vector({0.1, 0.2});
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0.0);
}

TEST(Psnr, StrictlyDecreasingInMse) {
  double previous = std::numeric_limits<double>::infinity();
  for (double m : {1e-6, 1e-4, 0.01, 0.5, 1.0, 4.0, 100.0}) {
    const double v = psnr_from_mse(m, 1.0);
    EXPECT_LT(v, previous);
    previous = v;
  }
}

TEST(Ssim, IdenticalIsOne) {
  auto rng = make_substream(1, "test");
  Tensor a = standard_normal({3, 8, 8}, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  MetricConfig windowed;
  windowed.ssim_window = 4;
  EXPECT_NEAR(ssim(a, a, windowed), 1.0, 1e-12);
  Tensor flat(Shape{16}, std::vector<double>(16, 0.3));
  EXPECT_NEAR(ssim(flat, flat), 1.0, 1e-12);
}

TEST(Ssim, FourElementHandValue) {
  // a = (0, 1, 2, 3), b = (1, 1, 2, 2), R = 1.
  // mean_a = 1.5, mean_b = 1.5, var_a = 1.25, var_b = 0.25, cov = 0.5.
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double expected = ((2 * 1.5 * 1.5 + c1) * (2 * 0.5 + c2)) /
                          ((1.5 * 1.5 + 1.5 * 1.5 + c1) * (1.25 + 0.25 + c2));
  EXPECT_NEAR(ssim(Tensor::vector({0, 1, 2, 3}), Tensor::vector({1, 1, 2, 2})), expected, 1e-15);
  EXPECT_NEAR(expected, 0.6669, 1e-4);
}

TEST(Ssim, SymmetricAndBounded) {
  auto rng = make_substream(2, "test");
  for (int i = 0; i < 20; ++i) {
    Tensor a = standard_normal({2, 6, 6}, rng);
    Tensor b = standard_normal({2, 6, 6}, rng);
    EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
    EXPECT_LE(ssim(a, b), 1.0);
    EXPECT_GE(ssim(a, b), -1.0);
    MetricConfig w;
    w.ssim_window = 3;
    EXPECT_DOUBLE_EQ(ssim(a, b, w), ssim(b, a, w));
  }
}

TEST(Ssim, DropsAsNoiseGrows) {
  auto rng = make_substream(3, "test");
  Tensor a = standard_normal({64}, rng);
  Tensor n = standard_normal({64}, rng);
  double previous = 1.0;
  for (double s : {0.01, 0.1, 0.5, 1.0, 3.0}) {
    const double v = ssim(a, a + s * n);
    EXPECT_LT(v, previous);
    previous = v;
  }
}

TEST(Ssim, WindowedIsMeanOverWindows) {
  // 1 x 2 x 3 tensor with a 2 x 2 window: two positions.
  Tensor a(Shape{1, 2, 3}, {0.0, 1.0, 2.0, 3.0, 4.0, 5.0});
  Tensor b(Shape{1, 2, 3}, {0.5, 1.0, 2.5, 3.0, 4.0, 4.0});
  MetricConfig w;
  w.ssim_window = 2;
  const double left = ssim(Tensor::vector({0.0, 1.0, 3.0, 4.0}), Tensor::vector({0.5, 1.0, 3.0, 4.0}));
  const double right = ssim(Tensor::vector({1.0, 2.0, 4.0, 5.0}), Tensor::vector({1.0, 2.5, 4.0, 4.0}));
  EXPECT_NEAR(ssim(a, b, w), 0.5 * (left + right), 1e-15);
  w.ssim_window = 3;
  EXPECT_THROW(ssim(a, b, w), ShapeError);
}

TEST(Ssim, Errors) {
  EXPECT_THROW(ssim(Tensor::vector({1.0}), Tensor::vector({1.0})), ShapeError);
  EXPECT_THROW(ssim(Tensor::vector({1.0, 2.0}), Tensor::vector({1.0, 2.0, 3.0})), ShapeError);
  MetricConfig bad;
  bad.peak_value = 0.0;
  EXPECT_THROW(ssim(Tensor::vector({1.0, 2.0}), Tensor::vector({1.0, 2.0}), bad), ParameterError);
}

TEST(FrameAverage, MeanOfFrames) {
  // Per-frame values 0.8 and 1.0 average to 0.9.
  std::vector<Tensor> frames = {Tensor::vector({0.0}), Tensor::vector({1.0})};
  auto r = frame_average([](const Tensor& a, const Tensor&) { return a[0] > 0.5 ? 1.0 : 0.8; },
                         std::span<const Tensor>(frames), std::span<const Tensor>(frames));
  EXPECT_NEAR(r.value, 0.9, 1e-15);
  EXPECT_EQ(r.frames_used, 2u);
  EXPECT_EQ(r.frames_skipped, 0u);
}

TEST(FrameAverage, InfinitePsnrFramesAreSkipped) {
  Tensor a(Shape{3, 4}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0});
  Tensor b(Shape{3, 4}, {0.1, 0.2, 0.3, 0.4, 0.6, 0.6, 0.6, 0.6, 0.1, 0.1, 0.1, 0.1});
  auto fa = split_frames(a);
  auto fb = split_frames(b);
  ASSERT_EQ(fa.size(), 3u);
  auto r = frame_average([](const Tensor& x, const Tensor& y) { return psnr(x, y); },
                         std::span<const Tensor>(fa), std::span<const Tensor>(fb));
  EXPECT_EQ(r.frames_used, 2u);
  EXPECT_EQ(r.frames_skipped, 1u);
  EXPECT_NEAR(r.value, 20.0, 1e-9);

  auto all_same = frame_average([](const Tensor& x, const Tensor& y) { return psnr(x, y); },
                                std::span<const Tensor>(fa), std::span<const Tensor>(fa));
  EXPECT_TRUE(std::isinf(all_same.value));
  EXPECT_EQ(all_same.frames_skipped, 3u);
}

TEST(FrameAverage, Errors) {
  std::vector<Tensor> one = {Tensor::vector({1.0})};
  std::vector<Tensor> two = {Tensor::vector({1.0}), Tensor::vector({2.0})};
  auto m = [](const Tensor&, const Tensor&) { return 1.0; };
  EXPECT_THROW(frame_average(m, std::span<const Tensor>(one), std::span<const Tensor>(two)), ShapeError);
  std::vector<Tensor> none;
  EXPECT_THROW(frame_average(m, std::span<const Tensor>(none), std::span<const Tensor>(none)), ShapeError);
  EXPECT_THROW(split_frames(Tensor::vector({1.0, 2.0})), ShapeError);
}
