#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ecdiff/errors.hpp"
#include "ecdiff/kstep.hpp"
#include "ecdiff/metrics.hpp"
#include "ecdiff/pipeline.hpp"
#include "ecdiff/predictors.hpp"
#include "ecdiff/random.hpp"
#include "ecdiff/schedule.hpp"

namespace ecdiff {

// --------------------------------------------------------------------------
// Objective

struct ObjectiveWeights {
  double w1 = 0.3;  ///< quality
  double w2 = 0.3;  ///< efficiency
  double w3 = 0.4;  ///< cloud burden
  int s_prime = 30; ///< earliest admissible switching point

  void validate(int total_steps) const {
    for (double w : {w1, w2, w3}) {
      if (!std::isfinite(w) || w < 0.0) {
        throw ParameterError("objective weights must be finite and >= 0");
      }
    }
    if (s_prime < 0 || s_prime >= total_steps) {
      throw ParameterError("s_prime must be in [0, T)");
    }
  }
};

/// SSIM between the cloud-only output and the collaborative output.
inline double quality(const Tensor& x_cloud, const Tensor& x_ec,
                      const MetricConfig& cfg = {}) {
  return ssim(x_cloud, x_ec, cfg);
}

/// Fraction of the cloud-to-edge latency gap recovered. Not clamped: values
/// above 1 mean the run beat edge-only latency.
inline double efficiency(double t_cloud, double t_edge, double t_ec) {
  if (!(t_cloud > t_edge)) {
    throw ParameterError("efficiency needs t_cloud > t_edge");
  }
  return (t_cloud - t_ec) / (t_cloud - t_edge);
}

/// Cloud load of switching at s, relative to the earliest switch s'.
inline double burden(int total_steps, int s, int s_prime) {
  if (s_prime >= total_steps) throw ParameterError("s_prime must be < T");
  return static_cast<double>(total_steps - s) / static_cast<double>(total_steps - s_prime);
}

inline double objective(const ObjectiveWeights& w, double q, double e, double b) {
  return w.w1 * q + w.w2 * e + w.w3 * b;
}

// --------------------------------------------------------------------------
// Greedy search

struct SearchSpace {
  std::vector<int> k_values{1, 2, 3, 4, 5};
  std::vector<double> alpha_values{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<int> s_values{30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40};
  double alpha_start = 0.5;
  int s_start = 35;
  int patience = 3;

  std::size_t alpha_start_index() const { return index_of(alpha_values, alpha_start, "alpha_start"); }
  std::size_t s_start_index() const { return index_of(s_values, s_start, "s_start"); }

  void validate() const {
    if (k_values.empty() || alpha_values.empty() || s_values.empty()) {
      throw ParameterError("search grids must be non-empty");
    }
    if (!std::is_sorted(alpha_values.begin(), alpha_values.end()) ||
        std::adjacent_find(alpha_values.begin(), alpha_values.end()) != alpha_values.end() ||
        !std::is_sorted(s_values.begin(), s_values.end()) ||
        std::adjacent_find(s_values.begin(), s_values.end()) != s_values.end()) {
      throw ParameterError("alpha and s grids must be strictly increasing");
    }
    if (patience < 1) throw ParameterError("patience must be >= 1");
    alpha_start_index();
    s_start_index();
  }

 private:
  template <typename V>
  static std::size_t index_of(const std::vector<V>& grid, V value, const char* what) {
    auto it = std::find(grid.begin(), grid.end(), value);
    if (it == grid.end()) throw ParameterError(std::string(what) + " is not on its grid");
    return static_cast<std::size_t>(it - grid.begin());
  }
};

struct Visit {
  int stage = 1;
  int k = 0;
  double alpha = 0.0;
  int s = 0;
  double value = 0.0;
};

/// Thrown when an evaluator fails mid-search; carries the visits so far.
class SearchAborted : public std::runtime_error {
 public:
  SearchAborted(const std::string& what, std::vector<Visit> visits)
      : std::runtime_error(what), visits_(std::move(visits)) {}
  const std::vector<Visit>& visits() const noexcept { return visits_; }

 private:
  std::vector<Visit> visits_;
};

struct WalkResult {
  std::size_t best_index = 0;
  double best_value = 0.0;
  std::vector<std::size_t> visited;  ///< grid indices in visit order
};

/// Direction-flipping walk over an ascending grid. Moves to the nearest
/// unvisited neighbour in the current direction; a non-improving value (ties
/// included) flips the direction and counts toward `patience`, an
/// improvement resets the count. Stops on patience, grid exhaustion, or when
/// no unvisited value lies in the current direction.
template <typename Eval>
WalkResult greedy_walk(std::size_t grid_size, std::size_t start, int patience, Eval&& eval) {
  WalkResult r;
  std::vector<bool> seen(grid_size, false);
  std::size_t cur = start;
  seen[cur] = true;
  r.visited.push_back(cur);
  r.best_value = eval(cur);
  r.best_index = cur;
  int direction = 1;
  int worse = 0;
  while (worse < patience && r.visited.size() < grid_size) {
    std::optional<std::size_t> next;
    if (direction == 1) {
      for (std::size_t v = cur + 1; v < grid_size; ++v) {
        if (!seen[v]) { next = v; break; }
      }
    } else {
      for (std::size_t v = cur; v-- > 0;) {
        if (!seen[v]) { next = v; break; }
      }
    }
    if (!next) break;
    cur = *next;
    seen[cur] = true;
    r.visited.push_back(cur);
    const double value = eval(cur);
    if (value > r.best_value) {
      r.best_value = value;
      r.best_index = cur;
      worse = 0;
    } else {
      ++worse;
      direction = -direction;
    }
  }
  return r;
}

struct Stage1Result {
  int k_best = 0;
  double alpha_best = 0.0;
  double value = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
  std::vector<Visit> visits;
};

struct Stage2Result {
  int s_best = 0;
  double value = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
  std::vector<Visit> visits;
};

using Stage1Evaluator = std::function<double(int k, double alpha)>;
using Stage2Evaluator = std::function<double(int s)>;

/// Stage 1: for each k in order, an alpha walk from alpha_start; stops after
/// `patience` consecutive k values without a global improvement.
inline Stage1Result greedy_stage1(const Stage1Evaluator& evaluate, const SearchSpace& space) {
  space.validate();
  Stage1Result result;
  int non_improving = 0;
  for (int k : space.k_values) {
    auto eval = [&](std::size_t ai) {
      const double alpha = space.alpha_values[ai];
      double v;
      try {
        v = evaluate(k, alpha);
      } catch (const std::exception& e) {
        throw SearchAborted(std::string("stage-1 evaluation failed: ") + e.what(),
                            result.visits);
      }
      result.visits.push_back({1, k, alpha, 0, v});
      ++result.evaluations;
      return v;
    };
    const auto walk = greedy_walk(space.alpha_values.size(), space.alpha_start_index(),
                                  space.patience, eval);
    if (walk.best_value > result.value) {
      result.value = walk.best_value;
      result.k_best = k;
      result.alpha_best = space.alpha_values[walk.best_index];
      non_improving = 0;
    } else {
      ++non_improving;
    }
    if (non_improving >= space.patience) break;
  }
  return result;
}

/// Stage 2: one walk over s from s_start with (k, alpha) fixed.
inline Stage2Result greedy_stage2(const Stage2Evaluator& evaluate, const SearchSpace& space) {
  space.validate();
  Stage2Result result;
  auto eval = [&](std::size_t si) {
    const int s = space.s_values[si];
    double v;
    try {
      v = evaluate(s);
    } catch (const std::exception& e) {
      throw SearchAborted(std::string("stage-2 evaluation failed: ") + e.what(),
                          result.visits);
    }
    result.visits.push_back({2, 0, 0.0, s, v});
    ++result.evaluations;
    return v;
  };
  const auto walk = greedy_walk(space.s_values.size(), space.s_start_index(), space.patience, eval);
  result.s_best = space.s_values[walk.best_index];
  result.value = walk.best_value;
  return result;
}

/// Full-grid argmax over (k, alpha), scanning k then alpha in the given
/// order; the first strict maximum wins ties.
inline Stage1Result exhaustive_stage1(const Stage1Evaluator& evaluate, const SearchSpace& space) {
  Stage1Result r;
  for (int k : space.k_values) {
    for (double alpha : space.alpha_values) {
      const double v = evaluate(k, alpha);
      r.visits.push_back({1, k, alpha, 0, v});
      ++r.evaluations;
      if (v > r.value) {
        r.value = v;
        r.k_best = k;
        r.alpha_best = alpha;
      }
    }
  }
  return r;
}

inline Stage2Result exhaustive_stage2(const Stage2Evaluator& evaluate, const SearchSpace& space) {
  Stage2Result r;
  for (int s : space.s_values) {
    const double v = evaluate(s);
    r.visits.push_back({2, 0, 0.0, s, v});
    ++r.evaluations;
    if (v > r.value) {
      r.value = v;
      r.s_best = s;
    }
  }
  return r;
}

struct SearchResult {
  int p = 0;
  int k_best = 0;
  double alpha_best = 0.0;
  int s_best = 0;
  double objective = 0.0;
  int evaluations = 0;
  std::vector<Visit> visit_log;
};

/// Stage 1 then stage 2 with the stage-1 winner fixed.
inline SearchResult two_stage_search(int p, const Stage1Evaluator& stage1_eval,
                                     const std::function<double(int, double, int)>& stage2_eval,
                                     const SearchSpace& space) {
  const auto s1 = greedy_stage1(stage1_eval, space);
  std::vector<Visit> log = s1.visits;
  Stage2Result s2;
  try {
    s2 = greedy_stage2([&](int s) { return stage2_eval(s1.k_best, s1.alpha_best, s); }, space);
  } catch (const SearchAborted& e) {
    log.insert(log.end(), e.visits().begin(), e.visits().end());
    throw SearchAborted(e.what(), std::move(log));
  }
  for (auto v : s2.visits) {
    v.k = s1.k_best;
    v.alpha = s1.alpha_best;
    log.push_back(v);
  }
  return {p, s1.k_best, s1.alpha_best, s2.s_best, s2.value,
          s1.evaluations + s2.evaluations, std::move(log)};
}

// --------------------------------------------------------------------------
// Pipeline-backed evaluator

/// One evaluation prompt: a mixture condition plus its own initial noise.
struct Prompt {
  Condition condition;
  Tensor initial_noise;
};

/// Seeded prompt set: each prompt draws a non-empty component subset from
/// the "prompts" substream and x_T from the "prompt_noise" substream.
inline std::vector<Prompt> make_prompt_set(std::size_t count, std::size_t components,
                                           const Shape& shape, std::uint64_t seed) {
  if (components == 0) throw ParameterError("prompt set needs mixture components");
  std::vector<Prompt> prompts;
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = make_substream(seed, "prompts", i);
    std::bernoulli_distribution pick(0.5);
    Condition c;
    for (std::size_t j = 0; j < components; ++j) {
      if (pick(rng)) c.components.push_back(j);
    }
    if (c.components.empty()) {
      c.components.push_back(std::uniform_int_distribution<std::size_t>(0, components - 1)(rng));
    }
    auto noise_rng = make_substream(seed, "prompt_noise", i);
    prompts.push_back({std::move(c), standard_normal(shape, noise_rng)});
  }
  return prompts;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results land in a
/// caller-owned slot per index, so reductions stay in a fixed order.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> threads;
    for (unsigned w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Objective evaluator over a prompt set. Quality is the mean SSIM against
/// cloud-only outputs (computed once); efficiency and burden come from the
/// latency model and s.
class PipelineEvaluator {
 public:
  PipelineEvaluator(PredictorPtr cloud, PredictorPtr edge, SamplerSchedule schedule,
                    LatencyModel latency, std::vector<Prompt> prompts, ObjectiveWeights weights,
                    MetricConfig metric_cfg = {}, unsigned jobs = 1)
      : cloud_(std::move(cloud)),
        edge_(std::move(edge)),
        schedule_(std::move(schedule)),
        latency_(std::move(latency)),
        prompts_(std::move(prompts)),
        weights_(weights),
        metric_cfg_(metric_cfg),
        jobs_(jobs) {
    if (prompts_.empty()) throw ParameterError("evaluator needs at least one prompt");
    weights_.validate(schedule_.total_steps());
    reference_.resize(prompts_.size());
    PipelineConfig cfg = base_config(PipelineMode::cloud_only);
    parallel_for(prompts_.size(), jobs_, [&](std::size_t i) {
      PipelineConfig c = cfg;
      c.condition = prompts_[i].condition;
      reference_[i] =
          run_pipeline_from(c, prompts_[i].initial_noise, *cloud_, *edge_, schedule_).final_latent;
    });
  }

  /// Objective of (p, k, alpha, s). Configurations the strategy rejects
  /// (p > T - s) score -infinity.
  double evaluate(const StrategyConfig& strategy) const {
    const int T = schedule_.total_steps();
    try {
      strategy.validate(T);
    } catch (const ParameterError&) {
      return -std::numeric_limits<double>::infinity();
    }
    PipelineConfig cfg = base_config(PipelineMode::ec_diff);
    cfg.strategy = strategy;
    std::vector<double> q(prompts_.size());
    std::vector<double> t(prompts_.size());
    parallel_for(prompts_.size(), jobs_, [&](std::size_t i) {
      PipelineConfig c = cfg;
      c.condition = prompts_[i].condition;
      const auto rep = run_pipeline_from(c, prompts_[i].initial_noise, *cloud_, *edge_, schedule_);
      q[i] = quality(reference_[i], rep.final_latent, metric_cfg_);
      t[i] = rep.latency.total;
    });
    double q_mean = 0.0;
    double t_mean = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      q_mean += q[i];
      t_mean += t[i];
    }
    q_mean /= static_cast<double>(q.size());
    t_mean /= static_cast<double>(t.size());
    const double t_cloud = cloud_only_latency(latency_, T);
    const double t_edge = latency_.edge_step_seconds * T;
    const double e = efficiency(t_cloud, t_edge, t_mean);
    const double b = burden(T, strategy.switching_point, weights_.s_prime);
    return objective(weights_, q_mean, e, b);
  }

  const std::vector<Tensor>& reference_outputs() const noexcept { return reference_; }

 private:
  PipelineConfig base_config(PipelineMode mode) const {
    PipelineConfig cfg;
    cfg.mode = mode;
    cfg.latency = latency_;
    cfg.latent_shape = prompts_.front().initial_noise.shape();
    return cfg;
  }

  PredictorPtr cloud_;
  PredictorPtr edge_;
  SamplerSchedule schedule_;
  LatencyModel latency_;
  std::vector<Prompt> prompts_;
  ObjectiveWeights weights_;
  MetricConfig metric_cfg_;
  unsigned jobs_;
  std::vector<Tensor> reference_;
};

/// Two-stage search against the pipeline. Stage 1 holds s at s_start.
inline SearchResult search_pipeline(const PipelineEvaluator& evaluator, int p,
                                    const SearchSpace& space) {
  auto make = [&](int k, double alpha, int s) {
    StrategyConfig c;
    c.pre_inference_steps = p;
    c.approximation_steps = k;
    c.smoothing_factor = alpha;
    c.switching_point = s;
    return c;
  };
  return two_stage_search(
      p, [&](int k, double alpha) { return evaluator.evaluate(make(k, alpha, space.s_start)); },
      [&](int k, double alpha, int s) { return evaluator.evaluate(make(k, alpha, s)); }, space);
}

}  // namespace ecdiff
