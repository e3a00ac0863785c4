#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecdiff/errors.hpp"
#include "ecdiff/kstep.hpp"
#include "ecdiff/metrics.hpp"
#include "ecdiff/pipeline.hpp"
#include "ecdiff/predictors.hpp"
#include "ecdiff/random.hpp"
#include "ecdiff/schedule.hpp"
#include "ecdiff/search.hpp"
#include "ecdiff/trace.hpp"

namespace ecdiff {

using json = nlohmann::json;

struct ScheduleConfig {
  std::string kind = "linear";  ///< linear | scaled_linear | ddim
  int steps = 50;
  int train_steps = 1000;       ///< ddim only
  double beta_start = 1e-4;
  double beta_end = 0.02;
  BetaSpacing spacing = BetaSpacing::linear;  ///< ddim only

  SamplerSchedule build() const {
    if (kind == "linear") return make_linear_schedule(steps, beta_start, beta_end);
    if (kind == "scaled_linear") return make_scaled_linear_schedule(steps, beta_start, beta_end);
    if (kind == "ddim") return make_ddim_schedule(steps, train_steps, beta_start, beta_end, spacing);
    throw ConfigError("unknown schedule kind '" + kind + "'");
  }
};

struct MixtureConfig {
  std::size_t components = 8;
  double mean_scale = 5.0;
  double data_sigma = 1.0;
  std::optional<std::uint64_t> seed;  ///< defaults to the experiment seed
};

struct CloudConfig {
  std::string kind = "gaussian_mixture";  ///< gaussian_mixture | affine | trace
  MixtureConfig mixture;
  double affine_offset = 0.0;
  double affine_slope = 0.0;
  std::filesystem::path trace_path;
};

struct EdgeConfig {
  std::string kind = "degraded";  ///< degraded | trace
  int quantization_bits = 0;
  double bias_scale = 0.05;
  std::filesystem::path trace_path;
};

struct SearchConfig {
  int p = 10;
  SearchSpace space;
  ObjectiveWeights weights;
  std::size_t prompts = 16;
  std::string evaluator = "pipeline";  ///< pipeline | constant | quadratic
  double constant_value = 0.5;
  int peak_k = 2;
  double peak_alpha = 0.7;
  int peak_s = 38;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  Shape latent_shape{16};
  CloudConfig cloud;
  EdgeConfig edge;
  std::optional<std::vector<std::size_t>> condition;  ///< default: all components
  std::vector<PipelineMode> modes{PipelineMode::cloud_only};
  int switch_step = 38;
  std::optional<StrategyConfig> strategy;
  std::optional<SearchConfig> search;
  LatencyModel latency;
  MetricConfig metrics;
  std::filesystem::path output_dir = "out";
  bool write_latents = false;

  bool has_mode(PipelineMode m) const {
    for (auto x : modes) {
      if (x == m) return true;
    }
    return false;
  }

  std::size_t mixture_components() const {
    return cloud.kind == "gaussian_mixture" ? cloud.mixture.components : 1;
  }

  Condition resolved_condition() const {
    if (condition) return Condition{*condition};
    return Condition::all(mixture_components());
  }

  std::uint64_t mixture_seed() const { return cloud.mixture.seed.value_or(seed); }
  std::uint64_t degradation_seed() const { return substream_seed(seed, "degradation"); }
};

namespace detail {

inline void check_keys(const json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + where + "." + it.key() + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad type for '" + where + "." + key + "'");
  }
}

inline void read_shape(const json& obj, const char* key, Shape& out, const std::string& where) {
  std::vector<std::size_t> v = out;
  read(obj, key, v, where);
  for (auto d : v) {
    if (d == 0) throw ConfigError(where + "." + key + " dims must be positive");
  }
  out = v;
}

inline ScheduleConfig parse_schedule(const json& j) {
  check_keys(j, "schedule", {"kind", "steps", "train_steps", "beta_start", "beta_end", "beta_spacing"});
  ScheduleConfig s;
  read(j, "kind", s.kind, "schedule");
  read(j, "steps", s.steps, "schedule");
  read(j, "train_steps", s.train_steps, "schedule");
  read(j, "beta_start", s.beta_start, "schedule");
  read(j, "beta_end", s.beta_end, "schedule");
  std::string spacing = s.spacing == BetaSpacing::linear ? "linear" : "scaled_linear";
  read(j, "beta_spacing", spacing, "schedule");
  if (spacing == "linear") {
    s.spacing = BetaSpacing::linear;
  } else if (spacing == "scaled_linear") {
    s.spacing = BetaSpacing::scaled_linear;
  } else {
    throw ConfigError("schedule.beta_spacing must be linear or scaled_linear");
  }
  return s;
}

inline CloudConfig parse_cloud(const json& j) {
  check_keys(j, "cloud", {"kind", "mixture", "offset", "slope", "trace"});
  CloudConfig c;
  read(j, "kind", c.kind, "cloud");
  if (auto it = j.find("mixture"); it != j.end()) {
    check_keys(*it, "cloud.mixture", {"components", "mean_scale", "data_sigma", "seed"});
    read(*it, "components", c.mixture.components, "cloud.mixture");
    read(*it, "mean_scale", c.mixture.mean_scale, "cloud.mixture");
    read(*it, "data_sigma", c.mixture.data_sigma, "cloud.mixture");
    if (it->contains("seed")) {
      std::uint64_t s = 0;
      read(*it, "seed", s, "cloud.mixture");
      c.mixture.seed = s;
    }
  }
  read(j, "offset", c.affine_offset, "cloud");
  read(j, "slope", c.affine_slope, "cloud");
  std::string path;
  read(j, "trace", path, "cloud");
  c.trace_path = path;
  if (c.kind != "gaussian_mixture" && c.kind != "affine" && c.kind != "trace") {
    throw ConfigError("cloud.kind must be gaussian_mixture, affine or trace");
  }
  if (c.kind == "trace" && path.empty()) throw ConfigError("cloud.trace is required for kind trace");
  return c;
}

inline EdgeConfig parse_edge(const json& j) {
  check_keys(j, "edge", {"kind", "quantization_bits", "bias_scale", "trace"});
  EdgeConfig e;
  read(j, "kind", e.kind, "edge");
  read(j, "quantization_bits", e.quantization_bits, "edge");
  read(j, "bias_scale", e.bias_scale, "edge");
  std::string path;
  read(j, "trace", path, "edge");
  e.trace_path = path;
  if (e.kind != "degraded" && e.kind != "trace") {
    throw ConfigError("edge.kind must be degraded or trace");
  }
  if (e.kind == "trace" && path.empty()) throw ConfigError("edge.trace is required for kind trace");
  return e;
}

inline StrategyConfig parse_strategy(const json& j) {
  check_keys(j, "strategy", {"p", "k", "alpha", "s", "correction_steps"});
  StrategyConfig s;
  read(j, "p", s.pre_inference_steps, "strategy");
  read(j, "k", s.approximation_steps, "strategy");
  read(j, "alpha", s.smoothing_factor, "strategy");
  read(j, "s", s.switching_point, "strategy");
  read(j, "correction_steps", s.correction_steps, "strategy");
  return s;
}

inline SearchConfig parse_search(const json& j) {
  check_keys(j, "search", {"p", "k_values", "alpha_values", "s_values", "alpha_start", "s_start",
                           "patience", "weights", "prompts", "evaluator", "constant_value",
                           "peak_k", "peak_alpha", "peak_s"});
  SearchConfig s;
  read(j, "p", s.p, "search");
  read(j, "k_values", s.space.k_values, "search");
  read(j, "alpha_values", s.space.alpha_values, "search");
  read(j, "s_values", s.space.s_values, "search");
  read(j, "alpha_start", s.space.alpha_start, "search");
  read(j, "s_start", s.space.s_start, "search");
  read(j, "patience", s.space.patience, "search");
  if (auto it = j.find("weights"); it != j.end()) {
    check_keys(*it, "search.weights", {"w1", "w2", "w3", "s_prime"});
    read(*it, "w1", s.weights.w1, "search.weights");
    read(*it, "w2", s.weights.w2, "search.weights");
    read(*it, "w3", s.weights.w3, "search.weights");
    read(*it, "s_prime", s.weights.s_prime, "search.weights");
  }
  read(j, "prompts", s.prompts, "search");
  read(j, "evaluator", s.evaluator, "search");
  read(j, "constant_value", s.constant_value, "search");
  read(j, "peak_k", s.peak_k, "search");
  read(j, "peak_alpha", s.peak_alpha, "search");
  read(j, "peak_s", s.peak_s, "search");
  if (s.evaluator != "pipeline" && s.evaluator != "constant" && s.evaluator != "quadratic") {
    throw ConfigError("search.evaluator must be pipeline, constant or quadratic");
  }
  if (s.prompts == 0) throw ConfigError("search.prompts must be positive");
  return s;
}

inline LatencyModel parse_latency(const json& j) {
  check_keys(j, "latency", {"cloud_step_seconds", "edge_step_seconds", "bandwidth_bits_per_second",
                            "payload", "transfer_seconds"});
  LatencyModel m;
  read(j, "cloud_step_seconds", m.cloud_step_seconds, "latency");
  read(j, "edge_step_seconds", m.edge_step_seconds, "latency");
  read(j, "bandwidth_bits_per_second", m.bandwidth_bits_per_second, "latency");
  if (auto it = j.find("payload"); it != j.end()) {
    check_keys(*it, "latency.payload", {"latent_dims", "embedding_dims", "bytes_per_element"});
    read_shape(*it, "latent_dims", m.payload.latent_dims, "latency.payload");
    read_shape(*it, "embedding_dims", m.payload.embedding_dims, "latency.payload");
    read(*it, "bytes_per_element", m.payload.bytes_per_element, "latency.payload");
  }
  if (j.contains("transfer_seconds") && !j["transfer_seconds"].is_null()) {
    double t = 0.0;
    read(j, "transfer_seconds", t, "latency");
    m.fixed_transfer_seconds = t;
  }
  return m;
}

inline MetricConfig parse_metrics(const json& j) {
  check_keys(j, "metrics", {"peak_value", "ssim_k1", "ssim_k2", "ssim_window"});
  MetricConfig m;
  read(j, "peak_value", m.peak_value, "metrics");
  read(j, "ssim_k1", m.ssim_k1, "metrics");
  read(j, "ssim_k2", m.ssim_k2, "metrics");
  read(j, "ssim_window", m.ssim_window, "metrics");
  return m;
}

}  // namespace detail

/// Builds and validates a config. Relative trace paths resolve against
/// base_dir (the config file's directory).
inline ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  check_keys(j, "config", {"seed", "schedule", "latent_shape", "cloud", "edge", "condition", "mode",
                           "modes", "switch_step", "strategy", "search", "latency", "metrics",
                           "output_dir", "write_latents"});
  ExperimentConfig c;
  read(j, "seed", c.seed, "config");
  if (auto it = j.find("schedule"); it != j.end()) c.schedule = parse_schedule(*it);
  read_shape(j, "latent_shape", c.latent_shape, "config");
  if (c.latent_shape.empty()) throw ConfigError("latent_shape must be non-empty");
  if (auto it = j.find("cloud"); it != j.end()) c.cloud = parse_cloud(*it);
  if (auto it = j.find("edge"); it != j.end()) c.edge = parse_edge(*it);
  if (auto it = j.find("condition"); it != j.end() && !(it->is_string() && *it == "all")) {
    std::vector<std::size_t> comps;
    read(j, "condition", comps, "config");
    if (comps.empty()) throw ConfigError("condition must select at least one component");
    for (auto k : comps) {
      if (k >= c.mixture_components()) throw ConfigError("condition references unknown component");
    }
    c.condition = comps;
  }
  if (j.contains("mode") && j.contains("modes")) throw ConfigError("give either mode or modes");
  std::vector<std::string> mode_names;
  if (j.contains("mode")) {
    std::string m;
    read(j, "mode", m, "config");
    mode_names.push_back(m);
  }
  read(j, "modes", mode_names, "config");
  if (!mode_names.empty()) {
    c.modes.clear();
    for (const auto& m : mode_names) {
      try {
        c.modes.push_back(parse_pipeline_mode(m));
      } catch (const ParameterError& e) {
        throw ConfigError(e.what());
      }
    }
  }
  read(j, "switch_step", c.switch_step, "config");
  if (auto it = j.find("strategy"); it != j.end()) c.strategy = parse_strategy(*it);
  if (auto it = j.find("search"); it != j.end()) c.search = parse_search(*it);
  if (auto it = j.find("latency"); it != j.end()) c.latency = parse_latency(*it);
  if (auto it = j.find("metrics"); it != j.end()) c.metrics = parse_metrics(*it);
  std::string out = c.output_dir.string();
  read(j, "output_dir", out, "config");
  c.output_dir = out;
  read(j, "write_latents", c.write_latents, "config");

  for (auto* p : {&c.cloud.trace_path, &c.edge.trace_path}) {
    if (!p->empty() && p->is_relative()) *p = base_dir / *p;
  }

  // Semantic validation; library errors surface as config errors.
  try {
    const auto schedule = c.schedule.build();
    const int T = schedule.total_steps();
    c.latency.validate();
    c.metrics.validate();
    if (c.has_mode(PipelineMode::hybrid_baseline) && (c.switch_step < 0 || c.switch_step > T)) {
      throw ConfigError("switch_step must be in [0, T]");
    }
    if (c.has_mode(PipelineMode::ec_diff) && c.strategy.has_value() == c.search.has_value()) {
      throw ConfigError("ec_diff needs exactly one of 'strategy' or 'search'");
    }
    if (c.strategy) c.strategy->validate(T);
    if (c.search) {
      c.search->space.validate();
      c.search->weights.validate(T);
    }
    if (c.cloud.kind == "gaussian_mixture") {
      if (c.cloud.mixture.components == 0) throw ConfigError("mixture needs components");
      if (!(c.cloud.mixture.data_sigma > 0.0)) throw ConfigError("data_sigma must be > 0");
    }
    Degradation{c.edge.quantization_bits, c.edge.bias_scale, 0}.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(e.what());
  }
  for (const auto* p : {&c.cloud.trace_path, &c.edge.trace_path}) {
    if (!p->empty() && !std::filesystem::exists(*p)) {
      throw ConfigError("trace file not found: " + p->string());
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
  return parse_config(j, path.parent_path());
}

/// Predictors described by a config. Mixture and affine predictors are
/// built from the config; trace predictors replay their files.
struct PredictorPair {
  PredictorPtr cloud;
  PredictorPtr edge;
};

inline PredictorPair build_predictors(const ExperimentConfig& c, const SamplerSchedule& schedule) {
  const int T = schedule.total_steps();
  PredictorPair out;
  auto load = [&](const std::filesystem::path& path, double cost, Fidelity fid) {
    auto trace = read_trace(path);
    if (trace.total_steps != T) {
      throw ConfigError("trace " + path.string() + " has T=" + std::to_string(trace.total_steps) +
                        " but the schedule has T=" + std::to_string(T));
    }
    if (trace.dims != c.latent_shape) {
      throw ConfigError("trace " + path.string() + " dims differ from latent_shape");
    }
    return replay_predictor(trace, cost, fid);
  };
  if (c.cloud.kind == "gaussian_mixture") {
    auto spec = make_random_mixture(c.latent_shape, c.cloud.mixture.components,
                                    c.cloud.mixture.mean_scale, c.cloud.mixture.data_sigma,
                                    c.mixture_seed());
    out.cloud = std::make_shared<GaussianMixturePredictor>(std::move(spec), schedule,
                                                           c.latency.cloud_step_seconds);
  } else if (c.cloud.kind == "affine") {
    Tensor offset(c.latent_shape);
    Tensor slope(c.latent_shape);
    for (auto& v : offset.values()) v = c.cloud.affine_offset;
    for (auto& v : slope.values()) v = c.cloud.affine_slope;
    out.cloud = std::make_shared<AffineTimePredictor>(offset, slope, T, c.latency.cloud_step_seconds);
  } else {
    out.cloud = load(c.cloud.trace_path, c.latency.cloud_step_seconds, Fidelity::cloud);
  }
  if (c.edge.kind == "degraded") {
    if (c.cloud.kind == "trace") throw ConfigError("a degraded edge needs a live cloud predictor");
    out.edge = make_edge_predictor(
        out.cloud, Degradation{c.edge.quantization_bits, c.edge.bias_scale, c.degradation_seed()},
        c.latency.edge_step_seconds);
  } else {
    out.edge = load(c.edge.trace_path, c.latency.edge_step_seconds, Fidelity::edge);
  }
  return out;
}

}  // namespace ecdiff
