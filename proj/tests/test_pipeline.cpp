#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "ecdiff/pipeline.hpp"
#include "scenario.hpp"

using namespace ecdiff;
using namespace ecdiff::testing;

namespace {

LatencyModel table_latency() {
  LatencyModel m;
  m.cloud_step_seconds = 4.9;
  m.edge_step_seconds = 1.82;
  m.fixed_transfer_seconds = 1.75;
  return m;
}

PipelineConfig config(PipelineMode mode, const StrategyConfig& s, int switch_step) {
  PipelineConfig c;
  c.mode = mode;
  c.strategy = s;
  c.switch_step = switch_step;
  c.latency = table_latency();
  c.condition = Condition::all(kScenarioComponents);
  return c;
}

}  // namespace

TEST(Payload, SizesFromModelDims) {
  EXPECT_EQ(payload_bytes({{4, 64, 64}, {2, 77, 768}, 2}), 269'312u);
  EXPECT_EQ(payload_bytes({{4, 128, 128}, {2, 77, 2048}, 2}), 761'856u);
  EXPECT_EQ(payload_bytes({{3, 16, 60, 90}, {2, 226, 4096}, 2}), 4'221'184u);
  EXPECT_EQ(payload_bytes({{1}, {1}, 2}), 4u);
  EXPECT_EQ(payload_bytes({{4, 64, 64}, {}, 2}), 32'768u);
}

TEST(Payload, Errors) {
  EXPECT_THROW(payload_bytes({{}, {1}, 2}), ParameterError);
  EXPECT_THROW(payload_bytes({{4, 0}, {}, 2}), ParameterError);
  EXPECT_THROW(payload_bytes({{1u << 31, 1u << 31, 1u << 31}, {}, 2}), ParameterError);
  EXPECT_THROW(payload_bytes({{1}, {}, 0}), ParameterError);
}

TEST(Transfer, TimeIsBitsOverBandwidth) {
  EXPECT_NEAR(transfer_time(269'312, 18.88e6), 8.0 * 269'312 / 18.88e6, 1e-15);
  EXPECT_NEAR(transfer_time(269'312, 18.88e6), 0.114, 5e-4);
  EXPECT_NEAR(transfer_time(761'856, 18.88e6), 0.323, 5e-4);
  EXPECT_NEAR(transfer_time(4'221'184, 18.88e6), 1.789, 5e-4);
  EXPECT_EQ(transfer_time(0, 18.88e6), 0.0);
  EXPECT_THROW(transfer_time(10, 0.0), ParameterError);
  EXPECT_THROW(transfer_time(10, -1.0), ParameterError);
}

TEST(Pipeline, LatencyAccountingAtTableSettings) {
  auto sc = make_scenario(0);
  auto r = run_pipeline_from(config(PipelineMode::ec_diff, scenario_strategy(0.2, 38), 38), sc.x_T,
                             *sc.cloud, *sc.edge, sc.schedule);
  EXPECT_EQ(r.cloud.model_calls, 11);
  EXPECT_EQ(r.approximated_steps, 3);
  EXPECT_EQ(r.handoff_step, 36);
  ASSERT_TRUE(r.edge);
  EXPECT_EQ(r.edge->model_calls, 36);
  EXPECT_EQ(r.transfers, 1);
  EXPECT_NEAR(r.latency.total, 11 * 4.9 + 1.75 + 36 * 1.82, 1e-9);
  EXPECT_NEAR(r.speedup_vs_cloud_only, 245.0 / r.latency.total, 1e-12);
}

TEST(Pipeline, EdgeOnlyTakesNinetyOneSeconds) {
  auto sc = make_scenario(0);
  auto r = run_pipeline_from(config(PipelineMode::edge_only, scenario_strategy(), 0), sc.x_T,
                             *sc.cloud, *sc.edge, sc.schedule);
  EXPECT_NEAR(r.latency.total, 91.0, 1e-9);
  EXPECT_EQ(r.transfers, 0);
  EXPECT_EQ(r.cloud.model_calls, 0);
  EXPECT_EQ(r.latency.transfer, 0.0);
}

TEST(Pipeline, CloudOnlyHasNoTransferOrEdge) {
  auto sc = make_scenario(0);
  auto r = run_pipeline_from(config(PipelineMode::cloud_only, scenario_strategy(), 0), sc.x_T,
                             *sc.cloud, *sc.edge, sc.schedule);
  EXPECT_FALSE(r.edge);
  EXPECT_EQ(r.transfers, 0);
  EXPECT_NEAR(r.latency.total, 245.0, 1e-9);
  EXPECT_EQ(r.speedup_vs_cloud_only, 1.0);
  EXPECT_EQ(r.cloud_log.size(), 50u);
}

TEST(Pipeline, DegenerateStrategyEqualsHybridBaseline) {
  auto sc = make_scenario(3);
  auto ec = run_pipeline_from(config(PipelineMode::ec_diff, scenario_strategy(0.2, 40), 40), sc.x_T,
                              *sc.cloud, *sc.edge, sc.schedule);
  auto hb = run_pipeline_from(config(PipelineMode::hybrid_baseline, scenario_strategy(0.2, 40), 40),
                              sc.x_T, *sc.cloud, *sc.edge, sc.schedule);
  EXPECT_EQ(ec.final_latent, hb.final_latent);
  EXPECT_EQ(ec.latency.total, hb.latency.total);
  EXPECT_EQ(ec.handoff_step, hb.handoff_step);
}

TEST(Pipeline, SpeedupOrdering) {
  auto sc = make_scenario(1);
  for (int s : {38, 30, 20}) {
    auto ec = run_pipeline_from(config(PipelineMode::ec_diff, scenario_strategy(0.2, s), s), sc.x_T,
                                *sc.cloud, *sc.edge, sc.schedule);
    auto hb = run_pipeline_from(config(PipelineMode::hybrid_baseline, scenario_strategy(), ec.handoff_step),
                                sc.x_T, *sc.cloud, *sc.edge, sc.schedule);
    auto co = run_pipeline_from(config(PipelineMode::cloud_only, scenario_strategy(), 0), sc.x_T,
                                *sc.cloud, *sc.edge, sc.schedule);
    EXPECT_LT(ec.latency.total, hb.latency.total) << "s=" << s;
    EXPECT_LT(hb.latency.total, co.latency.total) << "s=" << s;
    EXPECT_EQ(ec.transfers, 1);
    EXPECT_EQ(hb.transfers, 1);
    EXPECT_EQ(ec.latency.transfer, 1.75);
  }
}

TEST(Pipeline, SharedSeedGivesSharedInitialNoise) {
  EXPECT_EQ(initial_noise({16}, 5), initial_noise({16}, 5));
  EXPECT_NE(initial_noise({16}, 5), initial_noise({16}, 6));
  auto sc = make_scenario(2);
  PipelineConfig c = config(PipelineMode::cloud_only, scenario_strategy(), 0);
  c.seed = 2;
  EXPECT_EQ(run_pipeline(c, *sc.cloud, *sc.edge, sc.schedule).final_latent,
            run_pipeline_from(c, initial_noise({16}, 2), *sc.cloud, *sc.edge, sc.schedule).final_latent);
}

TEST(Pipeline, RejectsBadSwitchStep) {
  auto sc = make_scenario(0);
  EXPECT_THROW(run_pipeline_from(config(PipelineMode::hybrid_baseline, scenario_strategy(), 51), sc.x_T,
                                 *sc.cloud, *sc.edge, sc.schedule),
               ParameterError);
  EXPECT_THROW(parse_pipeline_mode("fast"), ParameterError);
  EXPECT_EQ(parse_pipeline_mode("ec_diff"), PipelineMode::ec_diff);
}

TEST(Pipeline, ReferenceQualityOrdering) {
  const auto s = summarize_scenario();
  EXPECT_GE(s.ec_wins, 18);
  EXPECT_LT(s.ec_mse, s.edge_mse);
  EXPECT_GT(s.ec_ssim, s.edge_ssim);
}
