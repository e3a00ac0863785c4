#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "ecdiff/errors.hpp"
#include "ecdiff/tensor.hpp"

namespace ecdiff {

struct MetricConfig {
  double peak_value = 1.0;  ///< R, the largest representable value
  double ssim_k1 = 0.01;    ///< C1 = (k1 R)^2
  double ssim_k2 = 0.03;    ///< C2 = (k2 R)^2
  /// 0 selects global-statistics SSIM; otherwise uniform square windows of
  /// this size over the last two dimensions.
  std::size_t ssim_window = 0;

  double c1() const { return (ssim_k1 * peak_value) * (ssim_k1 * peak_value); }
  double c2() const { return (ssim_k2 * peak_value) * (ssim_k2 * peak_value); }

  void validate() const {
    if (!(peak_value > 0.0) || !(ssim_k1 > 0.0) || !(ssim_k2 > 0.0)) {
      throw ParameterError("metric constants must be positive");
    }
  }
};

inline double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) throw ShapeError("mse of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline double psnr_from_mse(double mse_value, double peak_value) {
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak_value * peak_value / mse_value);
}

/// Peak signal-to-noise ratio in dB; identical inputs give +infinity.
inline double psnr(const Tensor& a, const Tensor& b, const MetricConfig& cfg = {}) {
  cfg.validate();
  return psnr_from_mse(mse(a, b), cfg.peak_value);
}

namespace detail {

// Population statistics over a strided 2-D patch (or the whole tensor when
// rows == 1 and row_stride is unused).
struct PatchStats {
  double mean_a = 0, mean_b = 0, var_a = 0, var_b = 0, cov = 0;
};

template <typename Index>
PatchStats patch_stats(const Tensor& a, const Tensor& b, std::size_t count, Index index) {
  PatchStats s;
  for (std::size_t n = 0; n < count; ++n) {
    s.mean_a += a[index(n)];
    s.mean_b += b[index(n)];
  }
  const double inv = 1.0 / static_cast<double>(count);
  s.mean_a *= inv;
  s.mean_b *= inv;
  for (std::size_t n = 0; n < count; ++n) {
    const double da = a[index(n)] - s.mean_a;
    const double db = b[index(n)] - s.mean_b;
    s.var_a += da * da;
    s.var_b += db * db;
    s.cov += da * db;
  }
  s.var_a *= inv;
  s.var_b *= inv;
  s.cov *= inv;
  return s;
}

inline double ssim_from_stats(const PatchStats& s, double c1, double c2) {
  return ((2.0 * s.mean_a * s.mean_b + c1) * (2.0 * s.cov + c2)) /
         ((s.mean_a * s.mean_a + s.mean_b * s.mean_b + c1) * (s.var_a + s.var_b + c2));
}

}  // namespace detail

/// Structural similarity. Global statistics by default; with a window size
/// set, the mean over every window position in every leading slice.
inline double ssim(const Tensor& a, const Tensor& b, const MetricConfig& cfg = {}) {
  cfg.validate();
  require_same_shape(a, b, "ssim");
  if (a.size() < 2) throw ShapeError("ssim needs at least 2 elements");
  const double c1 = cfg.c1();
  const double c2 = cfg.c2();

  if (cfg.ssim_window == 0) {
    const auto s = detail::patch_stats(a, b, a.size(), [](std::size_t n) { return n; });
    return detail::ssim_from_stats(s, c1, c2);
  }

  const auto& shape = a.shape();
  if (shape.size() < 2) throw ShapeError("windowed ssim needs at least 2 dimensions");
  const std::size_t h = shape[shape.size() - 2];
  const std::size_t w = shape[shape.size() - 1];
  const std::size_t win = cfg.ssim_window;
  if (win > h || win > w || win * win < 2) {
    throw ShapeError("ssim window does not fit the tensor");
  }
  const std::size_t slices = a.size() / (h * w);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t sl = 0; sl < slices; ++sl) {
    const std::size_t base = sl * h * w;
    for (std::size_t r = 0; r + win <= h; ++r) {
      for (std::size_t c = 0; c + win <= w; ++c) {
        const auto s = detail::patch_stats(a, b, win * win, [&](std::size_t n) {
          return base + (r + n / win) * w + c + n % win;
        });
        total += detail::ssim_from_stats(s, c1, c2);
        ++windows;
      }
    }
  }
  return total / static_cast<double>(windows);
}

struct FrameAverage {
  double value = 0.0;
  std::size_t frames_used = 0;
  std::size_t frames_skipped = 0;  ///< non-finite per-frame values (identical PSNR frames)
};

/// Mean of a per-frame metric. Frames whose value is infinite are excluded
/// and counted; if every frame is excluded the value is +infinity.
template <typename Metric>
FrameAverage frame_average(Metric&& metric, std::span<const Tensor> a_frames,
                           std::span<const Tensor> b_frames) {
  if (a_frames.size() != b_frames.size()) {
    throw ShapeError("frame_average: frame counts differ");
  }
  if (a_frames.empty()) throw ShapeError("frame_average: no frames");
  FrameAverage out;
  double sum = 0.0;
  for (std::size_t i = 0; i < a_frames.size(); ++i) {
    const double v = metric(a_frames[i], b_frames[i]);
    if (std::isinf(v)) {
      ++out.frames_skipped;
      continue;
    }
    sum += v;
    ++out.frames_used;
  }
  out.value = out.frames_used ? sum / static_cast<double>(out.frames_used)
                              : std::numeric_limits<double>::infinity();
  return out;
}

/// Splits a tensor along its first dimension into frames.
inline std::vector<Tensor> split_frames(const Tensor& t) {
  const auto& shape = t.shape();
  if (shape.size() < 2) throw ShapeError("split_frames needs at least 2 dimensions");
  Shape frame_shape(shape.begin() + 1, shape.end());
  const std::size_t n = element_count(frame_shape);
  std::vector<Tensor> frames;
  for (std::size_t f = 0; f < shape[0]; ++f) {
    std::vector<double> data(t.values().begin() + static_cast<std::ptrdiff_t>(f * n),
                             t.values().begin() + static_cast<std::ptrdiff_t>((f + 1) * n));
    frames.emplace_back(frame_shape, std::move(data));
  }
  return frames;
}

}  // namespace ecdiff
