#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "ecdiff/errors.hpp"
#include "ecdiff/kstep.hpp"
#include "ecdiff/metrics.hpp"
#include "ecdiff/predictors.hpp"
#include "ecdiff/random.hpp"
#include "ecdiff/schedule.hpp"
#include "ecdiff/step_log.hpp"
#include "ecdiff/tensor.hpp"

namespace ecdiff {

// --------------------------------------------------------------------------
// Transfer model

/// Data shipped from cloud to edge at handoff: the latent plus the prompt
/// embedding. An empty embedding shape contributes nothing.
struct PayloadSpec {
  Shape latent_dims;
  Shape embedding_dims;
  std::uint64_t bytes_per_element = 2;  // FP16
};

namespace detail {
inline std::uint64_t checked_product(const Shape& dims) {
  std::uint64_t p = 1;
  for (auto d : dims) {
    if (d == 0) throw ParameterError("payload dims must be positive");
    if (p > std::numeric_limits<std::uint64_t>::max() / d) {
      throw ParameterError("payload size overflows");
    }
    p *= d;
  }
  return p;
}
}  // namespace detail

inline std::uint64_t payload_bytes(const PayloadSpec& spec) {
  if (spec.latent_dims.empty()) throw ParameterError("payload needs latent dims");
  if (spec.bytes_per_element == 0) throw ParameterError("bytes per element must be positive");
  const std::uint64_t latent = detail::checked_product(spec.latent_dims);
  const std::uint64_t embed =
      spec.embedding_dims.empty() ? 0 : detail::checked_product(spec.embedding_dims);
  if (latent > std::numeric_limits<std::uint64_t>::max() - embed) {
    throw ParameterError("payload size overflows");
  }
  const std::uint64_t elements = latent + embed;
  if (elements > std::numeric_limits<std::uint64_t>::max() / spec.bytes_per_element) {
    throw ParameterError("payload size overflows");
  }
  return elements * spec.bytes_per_element;
}

/// t = D / B with D in bits.
inline double transfer_time(std::uint64_t bytes, double bandwidth_bits_per_second) {
  if (!(bandwidth_bits_per_second > 0.0) || !std::isfinite(bandwidth_bits_per_second)) {
    throw ParameterError("bandwidth must be positive");
  }
  return 8.0 * static_cast<double>(bytes) / bandwidth_bits_per_second;
}

struct LatencyModel {
  double cloud_step_seconds = 4.9;
  double edge_step_seconds = 1.82;
  double bandwidth_bits_per_second = 18.88e6;
  PayloadSpec payload{{4, 64, 64}, {2, 77, 768}, 2};
  /// Overrides the payload/bandwidth computation when set.
  std::optional<double> fixed_transfer_seconds;

  void validate() const {
    if (!(cloud_step_seconds >= 0.0) || !(edge_step_seconds >= 0.0) ||
        !std::isfinite(cloud_step_seconds) || !std::isfinite(edge_step_seconds)) {
      throw ParameterError("step costs must be finite and >= 0");
    }
    if (!(bandwidth_bits_per_second > 0.0)) throw ParameterError("bandwidth must be positive");
    if (fixed_transfer_seconds && !(*fixed_transfer_seconds >= 0.0)) {
      throw ParameterError("fixed transfer time must be >= 0");
    }
  }

  double transfer_seconds() const {
    if (fixed_transfer_seconds) return *fixed_transfer_seconds;
    return transfer_time(payload_bytes(payload), bandwidth_bits_per_second);
  }
};

// --------------------------------------------------------------------------
// Runs

enum class PipelineMode { cloud_only, edge_only, hybrid_baseline, ec_diff };

inline const char* to_string(PipelineMode m) {
  switch (m) {
    case PipelineMode::cloud_only: return "cloud_only";
    case PipelineMode::edge_only: return "edge_only";
    case PipelineMode::hybrid_baseline: return "hybrid_baseline";
    case PipelineMode::ec_diff: return "ec_diff";
  }
  return "unknown";
}

inline PipelineMode parse_pipeline_mode(const std::string& s) {
  if (s == "cloud_only") return PipelineMode::cloud_only;
  if (s == "edge_only") return PipelineMode::edge_only;
  if (s == "hybrid_baseline") return PipelineMode::hybrid_baseline;
  if (s == "ec_diff") return PipelineMode::ec_diff;
  throw ParameterError("unknown pipeline mode '" + s + "'");
}

struct PipelineConfig {
  PipelineMode mode = PipelineMode::cloud_only;
  int switch_step = 0;        ///< hybrid_baseline: edge runs this many final steps
  StrategyConfig strategy;    ///< ec_diff only
  Shape latent_shape{16};
  std::uint64_t seed = 0;
  LatencyModel latency;
  Condition condition;
};

struct PhaseCounts {
  int steps = 0;
  int model_calls = 0;
};

struct LatencyBreakdown {
  double cloud_compute = 0.0;
  double transfer = 0.0;
  double edge_compute = 0.0;
  double total = 0.0;
};

struct QualityMetrics {
  double mse = 0.0;
  double psnr_db = 0.0;  ///< +infinity when identical
  double ssim = 1.0;
};

struct RunReport {
  PipelineMode mode = PipelineMode::cloud_only;
  int total_steps = 0;
  std::uint64_t seed = 0;
  int handoff_step = 0;  ///< timestep at which the edge takes over
  Tensor final_latent;
  PhaseCounts cloud;
  std::optional<PhaseCounts> edge;
  int approximated_steps = 0;
  int transfers = 0;
  LatencyBreakdown latency;
  double speedup_vs_cloud_only = 1.0;
  std::optional<QualityMetrics> metrics;
  std::optional<StrategyConfig> strategy;
  StepLog cloud_log;
  StepLog edge_log;
};

/// Seeded x_T ~ N(0, I) from the "init_noise" substream.
inline Tensor initial_noise(const Shape& shape, std::uint64_t seed) {
  auto rng = make_substream(seed, "init_noise");
  return standard_normal(shape, rng);
}

inline double cloud_only_latency(const LatencyModel& latency, int total_steps) {
  return latency.cloud_step_seconds * total_steps;
}

/// Runs one configuration from an explicit x_T.
inline RunReport run_pipeline_from(const PipelineConfig& cfg, const Tensor& x_T,
                                   const NoisePredictor& cloud, const NoisePredictor& edge,
                                   const SamplerSchedule& schedule) {
  const int T = schedule.total_steps();
  cfg.latency.validate();
  RunReport report;
  report.mode = cfg.mode;
  report.total_steps = T;
  report.seed = cfg.seed;

  LatentState x{x_T, T};
  int edge_steps = 0;
  switch (cfg.mode) {
    case PipelineMode::cloud_only:
      report.cloud.model_calls =
          run_plain_inference(cloud, schedule, x, 0, cfg.condition, &report.cloud_log);
      report.cloud.steps = T;
      report.handoff_step = 0;
      break;
    case PipelineMode::edge_only:
      report.handoff_step = T;
      edge_steps = T;
      break;
    case PipelineMode::hybrid_baseline:
      if (cfg.switch_step < 0 || cfg.switch_step > T) {
        throw ParameterError("switch_step must be in [0, T]");
      }
      report.cloud.model_calls = run_plain_inference(cloud, schedule, x, cfg.switch_step,
                                                     cfg.condition, &report.cloud_log);
      report.cloud.steps = T - cfg.switch_step;
      report.handoff_step = cfg.switch_step;
      edge_steps = cfg.switch_step;
      report.transfers = 1;
      break;
    case PipelineMode::ec_diff: {
      auto phase = run_cloud_phase(cloud, schedule, x, cfg.strategy, cfg.condition);
      x = phase.latent_at_switch;
      report.cloud.model_calls = phase.model_calls;
      report.cloud.steps = T - x.timestep;
      report.handoff_step = std::min(x.timestep, cfg.strategy.switching_point);
      report.cloud_log = std::move(phase.log);
      for (const auto& r : report.cloud_log) {
        if (r.source == StepSource::approximated) ++report.approximated_steps;
      }
      report.strategy = cfg.strategy;
      edge_steps = report.handoff_step;
      report.transfers = 1;
      break;
    }
  }

  if (cfg.mode != PipelineMode::cloud_only) {
    PhaseCounts e;
    e.steps = edge_steps;
    e.model_calls = run_plain_inference(edge, schedule, x, 0, cfg.condition, &report.edge_log);
    report.edge = e;
  }
  report.final_latent = std::move(x.data);

  auto& lat = report.latency;
  lat.cloud_compute = report.cloud.model_calls * cfg.latency.cloud_step_seconds;
  lat.edge_compute = report.edge ? report.edge->model_calls * cfg.latency.edge_step_seconds : 0.0;
  lat.transfer = report.transfers * cfg.latency.transfer_seconds();
  lat.total = lat.cloud_compute + lat.transfer + lat.edge_compute;
  const double reference = cloud_only_latency(cfg.latency, T);
  report.speedup_vs_cloud_only = lat.total > 0.0 ? reference / lat.total : 1.0;
  return report;
}

inline RunReport run_pipeline(const PipelineConfig& cfg, const NoisePredictor& cloud,
                              const NoisePredictor& edge, const SamplerSchedule& schedule) {
  return run_pipeline_from(cfg, initial_noise(cfg.latent_shape, cfg.seed), cloud, edge,
                           schedule);
}

inline QualityMetrics compare_latents(const Tensor& reference, const Tensor& candidate,
                                      const MetricConfig& metric_cfg) {
  QualityMetrics q;
  q.mse = mse(reference, candidate);
  q.psnr_db = psnr_from_mse(q.mse, metric_cfg.peak_value);
  q.ssim = ssim(reference, candidate, metric_cfg);
  return q;
}

}  // namespace ecdiff
