#pragma once

// Degraded-edge Gaussian-mixture scenario shared by the pipeline tests and
// the acceptance binary.

#include <cstdint>
#include <memory>

#include "ecdiff/metrics.hpp"
#include "ecdiff/pipeline.hpp"
#include "ecdiff/predictors.hpp"
#include "ecdiff/schedule.hpp"

namespace ecdiff::testing {

struct Scenario {
  SamplerSchedule schedule;
  PredictorPtr cloud;
  PredictorPtr edge;
  Tensor x_T;
  Condition condition;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kScenarioComponents = 8;
inline constexpr int kScenarioSeeds = 20;

inline SamplerSchedule scenario_schedule() {
  return make_ddim_schedule(50, 1000, 0.00085, 0.012, BetaSpacing::scaled_linear);
}

inline Scenario make_scenario(std::uint64_t seed) {
  auto schedule = scenario_schedule();
  auto cloud = std::make_shared<GaussianMixturePredictor>(
      make_random_mixture({16}, kScenarioComponents, 5.0, 1.0, 1000 + seed), schedule, 4.9);
  auto edge = make_edge_predictor(cloud, Degradation{0, 0.05, seed}, 1.82);
  return {schedule, cloud, edge, initial_noise({16}, seed), Condition::all(kScenarioComponents), seed};
}

inline StrategyConfig scenario_strategy(double alpha = 0.2, int s = 30) {
  StrategyConfig c;
  c.pre_inference_steps = 10;
  c.approximation_steps = 3;
  c.smoothing_factor = alpha;
  c.switching_point = s;
  return c;
}

inline RunReport run_mode(const Scenario& sc, PipelineMode mode,
                          const StrategyConfig& strategy = scenario_strategy()) {
  PipelineConfig cfg;
  cfg.mode = mode;
  cfg.strategy = strategy;
  cfg.switch_step = strategy.switching_point;
  cfg.latent_shape = {16};
  cfg.seed = sc.seed;
  cfg.condition = sc.condition;
  return run_pipeline_from(cfg, sc.x_T, *sc.cloud, *sc.edge, sc.schedule);
}

struct ScenarioSummary {
  int ec_wins = 0;  ///< seeds with MSE(ec_diff) < MSE(edge_only)
  double ec_mse = 0.0, edge_mse = 0.0, unsmoothed_mse = 0.0;
  double ec_ssim = 0.0, edge_ssim = 0.0;
};

/// Seed-averaged comparison against the cloud-only final latent.
inline ScenarioSummary summarize_scenario(double alpha = 0.2, int s = 30) {
  ScenarioSummary out;
  const MetricConfig metric;
  for (int seed = 0; seed < kScenarioSeeds; ++seed) {
    const auto sc = make_scenario(static_cast<std::uint64_t>(seed));
    const Tensor ref = run_mode(sc, PipelineMode::cloud_only).final_latent;
    const auto ec = compare_latents(ref, run_mode(sc, PipelineMode::ec_diff, scenario_strategy(alpha, s)).final_latent, metric);
    const auto edge = compare_latents(ref, run_mode(sc, PipelineMode::edge_only).final_latent, metric);
    const auto raw = compare_latents(ref, run_mode(sc, PipelineMode::ec_diff, scenario_strategy(1.0, s)).final_latent, metric);
    out.ec_wins += ec.mse < edge.mse;
    out.ec_mse += ec.mse / kScenarioSeeds;
    out.edge_mse += edge.mse / kScenarioSeeds;
    out.unsmoothed_mse += raw.mse / kScenarioSeeds;
    out.ec_ssim += ec.ssim / kScenarioSeeds;
    out.edge_ssim += edge.ssim / kScenarioSeeds;
  }
  return out;
}

}  // namespace ecdiff::testing
