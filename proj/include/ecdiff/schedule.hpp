#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ecdiff/errors.hpp"
#include "ecdiff/tensor.hpp"

namespace ecdiff {

/// Update coefficients for one deterministic DDIM transition:
/// x_dst = f * x_src - g * eps.
struct StepCoefficients {
  double f = 1.0;
  double g = 0.0;
};

/// Noise schedule over T inference steps. alpha_bar has T+1 entries indexed
/// by timestep; alpha_bar[0] == 1 is the clean-data endpoint. Immutable after
/// construction.
class SamplerSchedule {
 public:
  /// Builds a schedule from an explicit cumulative-product table. The table
  /// must start at exactly 1 and be non-increasing with values in (0, 1].
  explicit SamplerSchedule(std::vector<double> alpha_bar,
                           double beta_start = 0.0, double beta_end = 0.0)
      : alpha_bar_(std::move(alpha_bar)),
        beta_start_(beta_start),
        beta_end_(beta_end) {
    if (alpha_bar_.size() < 3) {
      throw ParameterError("schedule needs at least 2 steps");
    }
    if (alpha_bar_.front() != 1.0) {
      throw ParameterError("alpha_bar[0] must be exactly 1");
    }
    for (std::size_t t = 0; t < alpha_bar_.size(); ++t) {
      double a = alpha_bar_[t];
      if (!(a > 0.0 && a <= 1.0)) {
        throw ParameterError("alpha_bar[" + std::to_string(t) +
                             "] outside (0, 1]");
      }
      if (t > 0 && a > alpha_bar_[t - 1]) {
        throw ParameterError("alpha_bar must be non-increasing in t");
      }
    }
  }

  int total_steps() const noexcept {
    return static_cast<int>(alpha_bar_.size()) - 1;
  }
  const std::vector<double>& alpha_bar() const noexcept { return alpha_bar_; }
  double alpha_bar(int t) const { return alpha_bar_.at(checked(t, 0, total_steps())); }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  /// Coefficients of the transition that lands on timestep t (from t+1).
  StepCoefficients coefficients(int t) const {
    checked(t, 0, total_steps() - 1);
    const double a_dst = alpha_bar_[t];
    const double a_src = alpha_bar_[t + 1];
    const double f = std::sqrt(a_dst / a_src);
    const double g = f * std::sqrt(1.0 - a_src) - std::sqrt(1.0 - a_dst);
    return {f, g};
  }

  double f(int t) const { return coefficients(t).f; }
  double g(int t) const { return coefficients(t).g; }

 private:
  static int checked(int t, int lo, int hi) {
    if (t < lo || t > hi) {
      throw IndexError("timestep " + std::to_string(t) + " outside [" +
                       std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return t;
  }

  std::vector<double> alpha_bar_;
  double beta_start_;
  double beta_end_;
};

namespace detail {

inline void validate_beta_range(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw ParameterError("schedule needs T >= 2");
  if (!(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ParameterError("beta range must satisfy 0 <= start <= end < 1");
  }
}

inline std::vector<double> cumulative_alpha(const std::vector<double>& betas) {
  std::vector<double> alpha_bar(betas.size() + 1, 1.0);
  for (std::size_t j = 0; j < betas.size(); ++j) {
    alpha_bar[j + 1] = alpha_bar[j] * (1.0 - betas[j]);
  }
  return alpha_bar;
}

inline std::vector<double> linear_betas(int n, double beta_start,
                                        double beta_end) {
  std::vector<double> betas(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    double w = n == 1 ? 0.0 : static_cast<double>(j) / (n - 1);
    betas[static_cast<std::size_t>(j)] = beta_start + w * (beta_end - beta_start);
  }
  return betas;
}

}  // namespace detail

/// alpha_bar[t] = prod_{j<=t} (1 - beta_j), beta linear from beta_start at
/// t=1 to beta_end at t=T. A zero beta_start is accepted so that a flat
/// (identity) schedule can be expressed.
inline SamplerSchedule make_linear_schedule(int steps, double beta_start,
                                            double beta_end) {
  detail::validate_beta_range(steps, beta_start, beta_end);
  return SamplerSchedule(
      detail::cumulative_alpha(detail::linear_betas(steps, beta_start, beta_end)),
      beta_start, beta_end);
}

/// Betas linear in sqrt-space ("scaled linear", as used by latent diffusion
/// checkpoints).
inline SamplerSchedule make_scaled_linear_schedule(int steps, double beta_start,
                                                   double beta_end) {
  detail::validate_beta_range(steps, beta_start, beta_end);
  auto roots = detail::linear_betas(steps, std::sqrt(beta_start), std::sqrt(beta_end));
  for (double& b : roots) b *= b;
  return SamplerSchedule(detail::cumulative_alpha(roots), beta_start, beta_end);
}

enum class BetaSpacing { linear, scaled_linear };

/// DDIM-style subsampling of a longer training schedule: betas over
/// train_steps (linear, or linear in sqrt-space), alpha_bar[t] taken at
/// training index t * (train_steps / T).
inline SamplerSchedule make_ddim_schedule(int steps, int train_steps,
                                          double beta_start, double beta_end,
                                          BetaSpacing spacing = BetaSpacing::linear) {
  detail::validate_beta_range(steps, beta_start, beta_end);
  if (train_steps < steps || train_steps % steps != 0) {
    throw ParameterError("train_steps must be a positive multiple of T");
  }
  std::vector<double> betas;
  if (spacing == BetaSpacing::linear) {
    betas = detail::linear_betas(train_steps, beta_start, beta_end);
  } else {
    betas = detail::linear_betas(train_steps, std::sqrt(beta_start), std::sqrt(beta_end));
    for (double& b : betas) b *= b;
  }
  const auto full = detail::cumulative_alpha(betas);
  const int stride = train_steps / steps;
  std::vector<double> alpha_bar(static_cast<std::size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) {
    alpha_bar[static_cast<std::size_t>(t)] = full[static_cast<std::size_t>(t * stride)];
  }
  return SamplerSchedule(std::move(alpha_bar), beta_start, beta_end);
}

/// Latent tensor tagged with its diffusion timestep.
struct LatentState {
  Tensor data;
  int timestep = 0;
};

/// One deterministic update x_{t-1} = f(t-1) x_t - g(t-1) eps.
inline LatentState denoise_step(const LatentState& x, const Tensor& eps,
                                const SamplerSchedule& schedule) {
  if (x.timestep < 1 || x.timestep > schedule.total_steps()) {
    throw IndexError("denoise_step: timestep " + std::to_string(x.timestep) +
                     " cannot be stepped");
  }
  require_same_shape(x.data, eps, "denoise_step");
  const auto [f, g] = schedule.coefficients(x.timestep - 1);
  return {linear_combination(f, x.data, -g, eps), x.timestep - 1};
}

}  // namespace ecdiff
