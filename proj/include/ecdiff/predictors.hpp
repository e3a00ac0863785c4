#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ecdiff/errors.hpp"
#include "ecdiff/random.hpp"
#include "ecdiff/schedule.hpp"
#include "ecdiff/tensor.hpp"

namespace ecdiff {

enum class Fidelity { cloud, edge };

inline const char* to_string(Fidelity f) {
  return f == Fidelity::cloud ? "cloud" : "edge";
}

/// Conditioning signal. Stands in for a prompt embedding: selects which
/// mixture components the generated sample may come from.
struct Condition {
  std::vector<std::size_t> components;

  static Condition all(std::size_t n) {
    Condition c;
    c.components.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.components[i] = i;
    return c;
  }

  friend bool operator==(const Condition&, const Condition&) = default;
};

/// Noise-estimation contract eps(x, t, c). Implementations are immutable and
/// deterministic, so one instance may be shared across threads.
class NoisePredictor {
 public:
  NoisePredictor(double cost_seconds, Fidelity fidelity)
      : cost_seconds_(cost_seconds), fidelity_(fidelity) {
    if (!(cost_seconds >= 0.0) || !std::isfinite(cost_seconds)) {
      throw ParameterError("predictor cost must be finite and >= 0");
    }
  }
  virtual ~NoisePredictor() = default;

  virtual Tensor evaluate(const Tensor& x, int t, const Condition& c) const = 0;

  double cost_seconds() const noexcept { return cost_seconds_; }
  Fidelity fidelity() const noexcept { return fidelity_; }

 private:
  double cost_seconds_;
  Fidelity fidelity_;
};

using PredictorPtr = std::shared_ptr<const NoisePredictor>;

// --------------------------------------------------------------------------
// Gaussian-mixture data and its Bayes-optimal noise estimate

struct GaussianMixtureModelSpec {
  std::vector<Tensor> component_means;
  std::vector<double> component_weights;
  double data_sigma = 1.0;

  const Shape& shape() const { return component_means.front().shape(); }

  void validate() const {
    if (component_means.empty()) {
      throw ParameterError("mixture needs at least one component");
    }
    if (component_weights.size() != component_means.size()) {
      throw ParameterError("mixture weights and means differ in count");
    }
    double sum = 0.0;
    for (double w : component_weights) {
      if (!(w >= 0.0)) throw ParameterError("mixture weight must be >= 0");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ParameterError("mixture weights must sum to 1");
    }
    if (!(data_sigma > 0.0)) throw ParameterError("data_sigma must be > 0");
    for (const auto& m : component_means) {
      require_same_shape(m, component_means.front(), "mixture means");
    }
  }
};

/// Random mixture with means drawn N(0, mean_scale^2) and uniform weights.
inline GaussianMixtureModelSpec make_random_mixture(const Shape& shape,
                                                    std::size_t components,
                                                    double mean_scale,
                                                    double data_sigma,
                                                    std::uint64_t seed) {
  if (components == 0) throw ParameterError("mixture needs components");
  auto rng = make_substream(seed, "mixture");
  GaussianMixtureModelSpec spec;
  for (std::size_t j = 0; j < components; ++j) {
    spec.component_means.push_back(mean_scale * standard_normal(shape, rng));
  }
  spec.component_weights.assign(components, 1.0 / static_cast<double>(components));
  spec.data_sigma = data_sigma;
  spec.validate();
  return spec;
}

/// E[eps | x_t = x, c] for x_0 drawn from the condition's sub-mixture.
///
/// Each component j gives x_t ~ N(sqrt(a) mu_j, v I) with
/// v = a sigma^2 + 1 - a, and E[eps | x, j] = sqrt(1-a) (x - sqrt(a) mu_j) / v.
/// The result is the posterior-weighted sum; component posteriors are
/// computed in log space.
inline Tensor optimal_noise(const GaussianMixtureModelSpec& spec,
                            const SamplerSchedule& schedule, const Tensor& x,
                            int t, const Condition& condition) {
  if (t < 1 || t > schedule.total_steps()) {
    throw IndexError("optimal_noise: t must be in [1, T]");
  }
  if (condition.components.empty()) {
    throw ParameterError("condition selects no mixture components");
  }
  require_same_shape(x, spec.component_means.front(), "optimal_noise");

  const double a = schedule.alpha_bar(t);
  const double sa = std::sqrt(a);
  const double var = a * spec.data_sigma * spec.data_sigma + 1.0 - a;
  const double gain = std::sqrt(1.0 - a) / var;

  std::vector<double> logw;
  logw.reserve(condition.components.size());
  for (std::size_t j : condition.components) {
    if (j >= spec.component_means.size()) {
      throw ParameterError("condition references unknown component " +
                           std::to_string(j));
    }
    const Tensor& mu = spec.component_means[j];
    double d2 = 0.0;
    for (std::size_t e = 0; e < x.size(); ++e) {
      double d = x[e] - sa * mu[e];
      d2 += d * d;
    }
    const double w = spec.component_weights[j];
    logw.push_back(w > 0.0 ? std::log(w) - 0.5 * d2 / var
                           : -std::numeric_limits<double>::infinity());
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(top)) {
    throw ParameterError("condition selects only zero-weight components");
  }
  double norm = 0.0;
  for (double& lw : logw) {
    lw = std::exp(lw - top);
    norm += lw;
  }

  // sum_j p_j (x - sqrt(a) mu_j) = x - sqrt(a) * sum_j p_j mu_j
  Tensor mean_mu(x.shape());
  for (std::size_t n = 0; n < logw.size(); ++n) {
    const double p = logw[n] / norm;
    const Tensor& mu = spec.component_means[condition.components[n]];
    for (std::size_t e = 0; e < x.size(); ++e) mean_mu[e] += p * mu[e];
  }
  Tensor out(x.shape());
  for (std::size_t e = 0; e < x.size(); ++e) {
    out[e] = gain * (x[e] - sa * mean_mu[e]);
  }
  return out;
}

/// Analytic "cloud model": the Bayes-optimal predictor for a mixture.
class GaussianMixturePredictor final : public NoisePredictor {
 public:
  GaussianMixturePredictor(GaussianMixtureModelSpec spec,
                           SamplerSchedule schedule, double cost_seconds,
                           Fidelity fidelity = Fidelity::cloud)
      : NoisePredictor(cost_seconds, fidelity),
        spec_(std::move(spec)),
        schedule_(std::move(schedule)) {
    spec_.validate();
  }

  Tensor evaluate(const Tensor& x, int t, const Condition& c) const override {
    return optimal_noise(spec_, schedule_, x, t, c);
  }

  const GaussianMixtureModelSpec& spec() const noexcept { return spec_; }

 private:
  GaussianMixtureModelSpec spec_;
  SamplerSchedule schedule_;
};

/// eps(x, t) = offset + slope * (T - t), independent of x. With slope = 0
/// this is the constant predictor.
class AffineTimePredictor final : public NoisePredictor {
 public:
  AffineTimePredictor(Tensor offset, Tensor slope, int total_steps,
                      double cost_seconds = 0.0,
                      Fidelity fidelity = Fidelity::cloud)
      : NoisePredictor(cost_seconds, fidelity),
        offset_(std::move(offset)),
        slope_(std::move(slope)),
        total_steps_(total_steps) {
    require_same_shape(offset_, slope_, "AffineTimePredictor");
  }

  Tensor evaluate(const Tensor& x, int t, const Condition&) const override {
    require_same_shape(x, offset_, "AffineTimePredictor");
    return linear_combination(1.0, offset_,
                              static_cast<double>(total_steps_ - t), slope_);
  }

 private:
  Tensor offset_;
  Tensor slope_;
  int total_steps_;
};

// --------------------------------------------------------------------------
// Degraded "edge model"

struct Degradation {
  /// 0 disables quantization; otherwise outputs are snapped to 2^bits levels
  /// spanning the per-call output range.
  int parameter_quantization_bits = 0;
  /// Per-element systematic bias, bounded by scale * (1 + |base|).
  double additive_bias_scale = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (parameter_quantization_bits < 0 || parameter_quantization_bits > 24) {
      throw ParameterError("quantization bits must be in [0, 24]");
    }
    if (!(additive_bias_scale >= 0.0) || !std::isfinite(additive_bias_scale)) {
      throw ParameterError("bias scale must be finite and >= 0");
    }
  }
};

/// Snap each value to the uniform grid of 2^bits levels over [min, max].
inline void quantize_to_range(Tensor& t, int bits) {
  if (bits <= 0 || t.empty()) return;
  auto vals = t.values();
  const auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return;
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double step = (hi - lo) / levels;
  for (double& v : vals) {
    const double q = std::clamp(std::round((v - lo) / step), 0.0, levels);
    v = lo + q * step;
  }
}

/// Deterministically degraded copy of a base predictor.
class DegradedPredictor final : public NoisePredictor {
 public:
  DegradedPredictor(PredictorPtr base, Degradation degradation,
                    double cost_seconds)
      : NoisePredictor(cost_seconds, Fidelity::edge),
        base_(std::move(base)),
        degradation_(degradation) {
    if (!base_) throw ParameterError("degraded predictor needs a base");
    degradation_.validate();
  }

  Tensor evaluate(const Tensor& x, int t, const Condition& c) const override {
    Tensor out = base_->evaluate(x, t, c);
    if (degradation_.additive_bias_scale > 0.0) {
      const double s = degradation_.additive_bias_scale;
      for (std::size_t e = 0; e < out.size(); ++e) {
        const double u = hashed_unit(degradation_.seed, e, 0);
        out[e] += s * u * (1.0 + std::abs(out[e]));
      }
    }
    quantize_to_range(out, degradation_.parameter_quantization_bits);
    return out;
  }

  const Degradation& degradation() const noexcept { return degradation_; }

 private:
  PredictorPtr base_;
  Degradation degradation_;
};

inline PredictorPtr make_edge_predictor(PredictorPtr base, Degradation degradation,
                                        double cost_seconds) {
  return std::make_shared<DegradedPredictor>(std::move(base), degradation,
                                             cost_seconds);
}

/// Rounds every prediction of the wrapped model to binary32, so a run that
/// uses it can be replayed bit-for-bit from a trace file.
class Float32Predictor final : public NoisePredictor {
 public:
  explicit Float32Predictor(PredictorPtr base)
      : NoisePredictor(base->cost_seconds(), base->fidelity()),
        base_(std::move(base)) {}

  Tensor evaluate(const Tensor& x, int t, const Condition& c) const override {
    Tensor out = base_->evaluate(x, t, c);
    for (double& v : out.values()) v = static_cast<double>(static_cast<float>(v));
    return out;
  }

 private:
  PredictorPtr base_;
};

}  // namespace ecdiff
