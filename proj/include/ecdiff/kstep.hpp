#pragma once

#include <string>
#include <utility>

#include "ecdiff/errors.hpp"
#include "ecdiff/predictors.hpp"
#include "ecdiff/schedule.hpp"
#include "ecdiff/step_log.hpp"
#include "ecdiff/tensor.hpp"

namespace ecdiff {

/// Parameters of the k-step noise approximation strategy.
struct StrategyConfig {
  int pre_inference_steps = 10;  ///< p: full cloud steps before extrapolating
  int approximation_steps = 3;   ///< k: extrapolated steps per cycle
  double smoothing_factor = 0.2; ///< alpha: damping of the gradient update
  int switching_point = 38;      ///< s: hand off once the timestep is <= s
  int correction_steps = 1;      ///< predictor steps closing each cycle (1 or 2)

  /// p >= 2, k >= 1, alpha in (0, 1], s in [0, T) and p <= T - s. The case
  /// p == T - s is accepted and runs no approximation cycle at all.
  void validate(int total_steps) const {
    if (pre_inference_steps < 2) {
      throw ParameterError("pre-inference steps p must be >= 2");
    }
    if (approximation_steps < 1) {
      throw ParameterError("approximation steps k must be >= 1");
    }
    if (!(smoothing_factor > 0.0 && smoothing_factor <= 1.0)) {
      throw ParameterError("smoothing factor alpha must be in (0, 1]");
    }
    if (switching_point < 0 || switching_point >= total_steps) {
      throw ParameterError("switching point s must be in [0, T)");
    }
    if (pre_inference_steps > total_steps - switching_point) {
      throw ParameterError("pre-inference steps p must satisfy p <= T - s");
    }
    if (correction_steps < 1 || correction_steps > 2) {
      throw ParameterError("correction steps must be 1 or 2");
    }
  }
};

/// Initial noise gradient: newer prediction minus older prediction.
inline Tensor init_gradient(const Tensor& eps_newer, const Tensor& eps_older) {
  require_same_shape(eps_newer, eps_older, "init_gradient");
  return eps_newer - eps_older;
}

/// Closed form base + j * gradient.
inline Tensor approximate_noise(const Tensor& base, const Tensor& gradient, int j) {
  if (j < 1) throw ParameterError("approximation index j must be >= 1");
  require_same_shape(base, gradient, "approximate_noise");
  return linear_combination(1.0, base, static_cast<double>(j), gradient);
}

/// The same extrapolation written as j successive single-step additions,
/// which is the form the strategy loop executes.
inline Tensor approximate_noise_cumulative(const Tensor& base, const Tensor& gradient,
                                           int j) {
  if (j < 1) throw ParameterError("approximation index j must be >= 1");
  require_same_shape(base, gradient, "approximate_noise");
  Tensor out = base;
  for (int n = 0; n < j; ++n) out += gradient;
  return out;
}

/// Smoothed gradient update: alpha * (model prediction - last approximation).
inline Tensor update_gradient(const Tensor& eps_model_corrected,
                              const Tensor& eps_last_approx, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ParameterError("smoothing factor alpha must be in (0, 1]");
  }
  require_same_shape(eps_model_corrected, eps_last_approx, "update_gradient");
  return linear_combination(alpha, eps_model_corrected, -alpha, eps_last_approx);
}

/// Running state of the strategy: the last two noises used (model or
/// extrapolated) and the current gradient. Older entries are never read.
struct StrategyState {
  Tensor newest_noise;
  Tensor previous_noise;
  Tensor gradient;

  void push(Tensor eps) {
    previous_noise = std::move(newest_noise);
    newest_noise = std::move(eps);
  }
};

struct CloudPhaseResult {
  LatentState latent_at_switch;
  int model_calls = 0;
  int completed_cycles = 0;
  StepLog log;
};

/// Cloud phase with k-step noise approximation.
///
/// p predictor steps, gradient initialised from the last two, then cycles of
/// k extrapolated steps followed by the correction step(s) and a smoothed
/// gradient update. The switch test runs after each correction, so the phase
/// may end up to k+1 steps below s. If the pre-inference steps already reach
/// s, no cycle runs. The phase also stops if timestep 0 is reached.
inline CloudPhaseResult run_cloud_phase(const NoisePredictor& cloud,
                                        const SamplerSchedule& schedule,
                                        const LatentState& x_T,
                                        const StrategyConfig& cfg,
                                        const Condition& condition) {
  const int T = schedule.total_steps();
  cfg.validate(T);
  if (x_T.timestep != T) {
    throw ParameterError("cloud phase must start at timestep T");
  }

  CloudPhaseResult result{x_T, 0, 0, {}};
  LatentState& x = result.latent_at_switch;
  StrategyState state;

  auto model_step = [&](StepSource source) {
    Tensor eps = cloud.evaluate(x.data, x.timestep, condition);
    ++result.model_calls;
    const int step = x.timestep;
    x = denoise_step(x, eps, schedule);
    result.log.push_back({step, source, eps, x.data});
    state.push(std::move(eps));
  };

  for (int n = 0; n < cfg.pre_inference_steps; ++n) model_step(StepSource::model);
  state.gradient = init_gradient(state.newest_noise, state.previous_noise);

  if (x.timestep <= cfg.switching_point) return result;

  while (x.timestep > 0) {
    for (int j = 1; j <= cfg.approximation_steps && x.timestep > 0; ++j) {
      Tensor eps = state.newest_noise + state.gradient;
      const int step = x.timestep;
      x = denoise_step(x, eps, schedule);
      result.log.push_back({step, StepSource::approximated, eps, x.data});
      state.push(std::move(eps));
    }
    if (x.timestep == 0) break;
    for (int c = 0; c < cfg.correction_steps && x.timestep > 0; ++c) {
      model_step(StepSource::corrected);
    }
    state.gradient = update_gradient(state.newest_noise, state.previous_noise,
                                     cfg.smoothing_factor);
    ++result.completed_cycles;
    if (x.timestep <= cfg.switching_point) break;
  }
  return result;
}

}  // namespace ecdiff
