#pragma once

// Exact error bookkeeping for the k-step noise approximation.
//
// Two trajectories start from the same x_T: the reference runs the cloud
// predictor at every step, the perturbed one runs the strategy. With
//
//   beta_t   = eps(x_ref_t, t) - eps_approx_t          (approximated steps)
//   beta'_t  = eps(x_pert_t, t) - eps(x_ref_t, t)      (correction steps)
//
// the latent difference after the first cycle is a finite sum of these
// terms weighted by products of the sampler coefficients, with no remainder.
// Later cycles are compared against a branch that restarts plain inference
// from the post-correction latent; the residual of its predictions relative
// to a straight-line extrapolation of the reference noise is beta_triangle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ecdiff/errors.hpp"
#include "ecdiff/kstep.hpp"
#include "ecdiff/predictors.hpp"
#include "ecdiff/schedule.hpp"
#include "ecdiff/step_log.hpp"
#include "ecdiff/tensor.hpp"

namespace ecdiff {

struct StepError {
  int step = 0;
  StepSource source = StepSource::model;
  std::optional<Tensor> beta;        ///< approximated steps, against the reference
  std::optional<Tensor> beta_local;  ///< approximated steps, against the visited state
  std::optional<Tensor> beta_prime;  ///< correction steps
  double latent_error = 0.0;         ///< |x_pert - x_ref| after the step
};

struct FirstCycleTerms {
  int start_step = 0;  ///< timestep of the first approximated step (T - p)
  int k = 0;
  std::vector<Tensor> beta;  ///< beta[m] belongs to timestep start_step - m
  Tensor beta_prime;         ///< at timestep start_step - k
  Tensor brute_force_delta;  ///< x_pert - x_ref at timestep start_step - k - 1
};

struct SubsequentCycleTerms {
  int correction_step = 0;  ///< timestep i of the correction that opens the cycle
  int k = 0;
  double alpha = 0.0;
  Tensor beta_prime;        ///< beta'_i
  Tensor beta_previous;     ///< beta_{i+1}, last approximation of the prior cycle
  Tensor model_noise_diff;  ///< eps_ref(i) - eps_ref(i+1)
  std::vector<Tensor> beta_triangle;  ///< entry m-1 belongs to timestep i - m
  /// weights[m-1] = (prod_{j=m+1..k} f(i-1-j)) * g(i-1-m)
  std::vector<double> weights;
  Tensor brute_force_delta;  ///< x_pert - x_branch at timestep i - 1 - k
};

struct ErrorTrace {
  int total_steps = 0;
  std::vector<StepCoefficients> coefficients;  ///< indexed by destination timestep
  std::vector<StepError> steps;
  std::optional<FirstCycleTerms> first_cycle;
  std::vector<SubsequentCycleTerms> subsequent_cycles;

  const StepCoefficients& coeff(int t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= coefficients.size()) {
      throw IndexError("coefficient index " + std::to_string(t) + " out of range");
    }
    return coefficients[static_cast<std::size_t>(t)];
  }
};

inline std::vector<StepCoefficients> coefficient_table(const SamplerSchedule& schedule) {
  std::vector<StepCoefficients> table;
  for (int t = 0; t < schedule.total_steps(); ++t) table.push_back(schedule.coefficients(t));
  return table;
}

inline double product_of_f(const ErrorTrace& trace, int from, int to) {
  double p = 1.0;
  for (int j = from; j <= to; ++j) p *= trace.coeff(j).f;
  return p;
}

/// Latent error after n approximated steps starting at `start_step`, with no
/// correction: sum_m (prod_{j=start-n}^{start-m-2} f(j)) g(start-m-1) beta[m].
inline Tensor approximation_error_sum(const ErrorTrace& trace, int start_step,
                                      const std::vector<Tensor>& betas) {
  if (betas.empty()) throw IncompleteTraceError("no approximation errors given");
  const int n = static_cast<int>(betas.size());
  Tensor acc(betas.front().shape());
  for (int m = 0; m < n; ++m) {
    const double w = product_of_f(trace, start_step - n, start_step - m - 2) *
                     trace.coeff(start_step - m - 1).g;
    acc += w * betas[static_cast<std::size_t>(m)];
  }
  return acc;
}

/// Measures every error term of a strategy run against the plain-inference
/// reference. Requires single-correction cycles.
inline ErrorTrace measure_betas(const NoisePredictor& cloud,
                                const SamplerSchedule& schedule,
                                const StrategyConfig& cfg, const Tensor& x_T,
                                const Condition& condition,
                                Norm norm_kind = Norm::l2) {
  if (cfg.correction_steps != 1) {
    throw ParameterError("error ledger assumes one correction step per cycle");
  }
  const int T = schedule.total_steps();
  const LatentState start{x_T, T};
  const auto phase = run_cloud_phase(cloud, schedule, start, cfg, condition);
  const int end_step = phase.latent_at_switch.timestep;

  LatentState ref = start;
  StepLog ref_log;
  run_plain_inference(cloud, schedule, ref, end_step, condition, &ref_log);

  // Reference lookups by timestep.
  auto ref_noise = [&](int t) -> const Tensor& {
    return ref_log.at(static_cast<std::size_t>(T - t)).noise;
  };
  auto ref_latent = [&](int t) -> const Tensor& {
    return t == T ? x_T : ref_log.at(static_cast<std::size_t>(T - t - 1)).latent_after;
  };

  ErrorTrace trace;
  trace.total_steps = T;
  trace.coefficients = coefficient_table(schedule);

  const auto& log = phase.log;
  for (std::size_t n = 0; n < log.size(); ++n) {
    const auto& rec = log[n];
    const Tensor& visited = n == 0 ? x_T : log[n - 1].latent_after;
    StepError e;
    e.step = rec.step;
    e.source = rec.source;
    if (rec.source == StepSource::approximated) {
      e.beta = ref_noise(rec.step) - rec.noise;
      e.beta_local = cloud.evaluate(visited, rec.step, condition) - rec.noise;
    } else if (rec.source == StepSource::corrected) {
      e.beta_prime = rec.noise - ref_noise(rec.step);
    }
    e.latent_error = norm(rec.latent_after - ref_latent(rec.step - 1), norm_kind);
    trace.steps.push_back(std::move(e));
  }

  const int k = cfg.approximation_steps;
  auto approximated_run = [&](std::size_t from) {
    if (from + static_cast<std::size_t>(k) > log.size()) return false;
    for (int m = 0; m < k; ++m) {
      if (log[from + static_cast<std::size_t>(m)].source != StepSource::approximated) {
        return false;
      }
    }
    return true;
  };

  // First cycle: k approximations right after the pre-inference steps, then
  // the correction.
  const auto p = static_cast<std::size_t>(cfg.pre_inference_steps);
  if (approximated_run(p) && p + static_cast<std::size_t>(k) < log.size() &&
      log[p + static_cast<std::size_t>(k)].source == StepSource::corrected) {
    FirstCycleTerms first;
    first.start_step = log[p].step;
    first.k = k;
    for (int m = 0; m < k; ++m) {
      first.beta.push_back(*trace.steps[p + static_cast<std::size_t>(m)].beta);
    }
    const std::size_t corr = p + static_cast<std::size_t>(k);
    first.beta_prime = *trace.steps[corr].beta_prime;
    first.brute_force_delta =
        log[corr].latent_after - ref_latent(first.start_step - k - 1);
    trace.first_cycle = std::move(first);
  }

  // Later cycles: a correction at i preceded by an approximation at i+1 and
  // followed by k approximations.
  for (std::size_t n = 1; n < log.size(); ++n) {
    if (log[n].source != StepSource::corrected) continue;
    if (log[n - 1].source != StepSource::approximated) continue;
    if (!approximated_run(n + 1)) continue;
    const int i = log[n].step;
    SubsequentCycleTerms cyc;
    cyc.correction_step = i;
    cyc.k = k;
    cyc.alpha = cfg.smoothing_factor;
    cyc.beta_prime = *trace.steps[n].beta_prime;
    cyc.beta_previous = *trace.steps[n - 1].beta;
    cyc.model_noise_diff = ref_noise(i) - ref_noise(i + 1);

    LatentState branch{log[n].latent_after, i - 1};
    for (int m = 1; m <= k; ++m) {
      Tensor eps = cloud.evaluate(branch.data, branch.timestep, condition);
      Tensor tri = eps - ref_noise(i);
      tri -= static_cast<double>(m) * cyc.model_noise_diff;
      cyc.beta_triangle.push_back(std::move(tri));
      branch = denoise_step(branch, eps, schedule);

      const double w = product_of_f(trace, i - 1 - k, i - 2 - m) * trace.coeff(i - 1 - m).g;
      cyc.weights.push_back(w);
    }
    cyc.brute_force_delta =
        log[n + static_cast<std::size_t>(k)].latent_after - branch.data;
    trace.subsequent_cycles.push_back(std::move(cyc));
  }
  return trace;
}

/// Closed-form latent error after the first cycle:
///   sum_{m=0}^{k-1} (prod_{j=i-k-2}^{i-3-m} f(j)) g(i-2-m) beta_{i-1-m}
///     - g(i-k-2) beta'_{i-k-1}
/// with i - 1 the first approximated timestep. Exact coefficient products.
inline Tensor first_cycle_error_identity(const ErrorTrace& trace) {
  if (!trace.first_cycle) {
    throw IncompleteTraceError("trace does not cover a complete first cycle");
  }
  const auto& fc = *trace.first_cycle;
  const int top = fc.start_step;  // i - 1
  const int k = fc.k;
  if (static_cast<int>(fc.beta.size()) != k) {
    throw IncompleteTraceError("first cycle holds " + std::to_string(fc.beta.size()) +
                               " approximation errors, expected " + std::to_string(k));
  }
  Tensor delta(fc.beta_prime.shape());
  for (int m = 0; m < k; ++m) {
    const double w = product_of_f(trace, top - k - 1, top - m - 2) *
                     trace.coeff(top - m - 1).g;
    delta += w * fc.beta[static_cast<std::size_t>(m)];
  }
  delta -= trace.coeff(top - k - 1).g * fc.beta_prime;
  return delta;
}

struct BoundReport {
  double bound = 0.0;           ///< norm of the relaxed (coefficient-free) sum
  double identity_norm = 0.0;   ///< norm of the exact identity
  double max_f = 0.0;
  double max_abs_g = 0.0;
  /// True when every coefficient involved is <= 1 in magnitude, the
  /// condition under which dropping the coefficients yields an upper bound.
  bool relaxation_applies = false;
};

/// Norm of sum(beta) - beta' for the first cycle, alongside the coefficient
/// range that decides whether it bounds the exact identity.
inline BoundReport theorem1_bound(const ErrorTrace& trace, Norm norm_kind = Norm::l2) {
  const Tensor identity = first_cycle_error_identity(trace);
  const auto& fc = *trace.first_cycle;
  Tensor relaxed(fc.beta_prime.shape());
  for (const auto& b : fc.beta) relaxed += b;
  relaxed -= fc.beta_prime;

  BoundReport r;
  r.bound = norm(relaxed, norm_kind);
  r.identity_norm = norm(identity, norm_kind);
  for (int t = fc.start_step - fc.k - 1; t <= fc.start_step - 1; ++t) {
    r.max_f = std::max(r.max_f, trace.coeff(t).f);
    r.max_abs_g = std::max(r.max_abs_g, std::abs(trace.coeff(t).g));
  }
  r.relaxation_applies = r.max_f <= 1.0 && r.max_abs_g <= 1.0;
  return r;
}

/// Exact pre-relaxation expansion of the error after a later cycle's k
/// approximated steps:
///   sum c_m beta_tri_m - sum c_m (1 + m a) beta'_i - sum c_m m a beta_{i+1}
///   - sum c_m (m a - m) (eps(i) - eps(i+1))
inline Tensor subsequent_cycle_error(const SubsequentCycleTerms& cyc) {
  if (!(cyc.alpha >= 0.0 && cyc.alpha <= 1.0)) {
    throw ParameterError("smoothing factor alpha must be in [0, 1]");
  }
  if (cyc.k < 1 || static_cast<int>(cyc.beta_triangle.size()) != cyc.k ||
      static_cast<int>(cyc.weights.size()) != cyc.k) {
    throw IncompleteTraceError("cycle terms do not cover k approximated steps");
  }
  Tensor triangle(cyc.beta_prime.shape());
  double w_prime = 0.0;
  double w_prev = 0.0;
  double w_diff = 0.0;
  for (int m = 1; m <= cyc.k; ++m) {
    const double c = cyc.weights[static_cast<std::size_t>(m - 1)];
    triangle += c * cyc.beta_triangle[static_cast<std::size_t>(m - 1)];
    w_prime += c * (1.0 + m * cyc.alpha);
    w_prev += c * m * cyc.alpha;
    w_diff += c * (m * cyc.alpha - m);
  }
  Tensor delta = std::move(triangle);
  delta -= w_prime * cyc.beta_prime;
  delta -= w_prev * cyc.beta_previous;
  delta -= w_diff * cyc.model_noise_diff;
  return delta;
}

inline Tensor subsequent_cycle_error(const ErrorTrace& trace, std::size_t cycle) {
  if (cycle >= trace.subsequent_cycles.size()) {
    throw IncompleteTraceError("trace holds no subsequent cycle " + std::to_string(cycle));
  }
  return subsequent_cycle_error(trace.subsequent_cycles[cycle]);
}

/// Norm of sum_m (beta_tri_m - (1 + m a) beta'_i - m a beta_{i+1}).
inline double subsequent_cycle_bound(const SubsequentCycleTerms& cyc, Norm norm_kind = Norm::l2) {
  Tensor acc(cyc.beta_prime.shape());
  for (int m = 1; m <= cyc.k; ++m) {
    acc += cyc.beta_triangle.at(static_cast<std::size_t>(m - 1));
    acc -= (1.0 + m * cyc.alpha) * cyc.beta_prime;
    acc -= (m * cyc.alpha) * cyc.beta_previous;
  }
  return norm(acc, norm_kind);
}

/// Per-step latent error series: header "step,source,l2_error".
inline std::string error_curve_csv(const ErrorTrace& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,source,l2_error\n";
  for (const auto& s : trace.steps) {
    os << s.step << ',' << static_cast<int>(s.source) << ',' << s.latent_error << '\n';
  }
  return os.str();
}

}  // namespace ecdiff
