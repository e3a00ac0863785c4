// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ecdiff/ecdiff.hpp"
#include "scenario.hpp"

using namespace ecdiff;
using namespace ecdiff::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

StrategyConfig strategy(int p, int k, double alpha, int s) {
  StrategyConfig c;
  c.pre_inference_steps = p;
  c.approximation_steps = k;
  c.smoothing_factor = alpha;
  c.switching_point = s;
  return c;
}

bool within_relative(const Tensor& a, const Tensor& b, double tol) {
  return norm_linf(a - b) <= tol * norm_linf(b) + 1e-14;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

Outcome identity_suite() {
  const auto start = std::chrono::steady_clock::now();
  int checked = 0, failed = 0;
  double worst = 0.0;
  for (const auto& sched : {make_linear_schedule(50, 1e-4, 0.02), scenario_schedule()}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      GaussianMixturePredictor g(make_random_mixture({8}, 4, 2.0, 0.5, 100 + seed), sched, 0.0);
      const Tensor xT = initial_noise({8}, seed);
      for (int k = 1; k <= 3; ++k) {
        const auto trace = measure_betas(g, sched, strategy(10, k, 0.2, 20), xT, Condition::all(4));
        auto check = [&](const Tensor& identity, const Tensor& brute) {
          ++checked;
          const double rel = norm_linf(identity - brute) / std::max(norm_linf(brute), 1e-300);
          worst = std::max(worst, rel);
          if (!within_relative(identity, brute, 1e-5)) ++failed;
        };
        if (!trace.first_cycle || trace.subsequent_cycles.empty()) {
          ++failed;
          continue;
        }
        check(first_cycle_error_identity(trace), trace.first_cycle->brute_force_delta);
        for (const auto& cyc : trace.subsequent_cycles) check(subsequent_cycle_error(cyc), cyc.brute_force_delta);
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Outcome o;
  o.pass = failed == 0 && checked >= 120 && secs < 10.0;
  o.detail = std::to_string(checked) + " identities, " + std::to_string(failed) + " failed, worst rel " +
             fmt("%.2e, %.2f s", worst, secs);
  return o;
}

Outcome linear_exactness() {
  auto sched = make_linear_schedule(50, 1e-4, 0.02);
  auto rng = make_substream(4, "acceptance");
  const Tensor a = standard_normal({6}, rng);
  const Tensor b = 0.05 * standard_normal({6}, rng);
  AffineTimePredictor lin(a, b, 50);
  const Tensor xT = standard_normal({6}, rng);
  double worst = 0.0;
  int cases = 0;
  for (int p = 2; p <= 12; ++p) {
    for (int k = 1; k <= 5; ++k) {
      for (int s : {0, 10, 25}) {
        const auto r = run_cloud_phase(lin, sched, {xT, 50}, strategy(p, k, 1.0, s), Condition{});
        LatentState full{xT, 50};
        run_plain_inference(lin, sched, full, r.latent_at_switch.timestep, Condition{});
        worst = std::max(worst, norm_linf(r.latent_at_switch.data - full.data));
        ++cases;
      }
    }
  }
  return {worst <= 1e-6, std::to_string(cases) + " configurations, max elementwise diff " + fmt("%.2e", worst)};
}

Outcome transfer_arithmetic() {
  struct Row {
    PayloadSpec spec;
    double kib, seconds;
  };
  const Row rows[] = {{{{4, 64, 64}, {2, 77, 768}, 2}, 263, 0.11},
                      {{{4, 128, 128}, {2, 77, 2048}, 2}, 744, 0.32},
                      {{{3, 16, 60, 90}, {2, 226, 4096}, 2}, 4122, 1.75}};
  Outcome o;
  std::ostringstream d;
  for (const auto& r : rows) {
    const auto bytes = payload_bytes(r.spec);
    const double kib = static_cast<double>(bytes) / 1024.0;
    const double t = transfer_time(bytes, 18.88e6);
    const bool ok = std::lround(kib) == std::lround(r.kib) && std::abs(t - r.seconds) <= 0.05 * r.seconds;
    o.pass = o.pass && ok;
    d << bytes << " B = " << fmt("%.1f KiB -> %.3f s; ", kib, t);
  }
  o.detail = d.str() + "sizes in KiB, times with 1 Mbps = 1e6 bit/s";
  return o;
}

Outcome latency_calibration() {
  const auto sc = make_scenario(0);
  PipelineConfig cfg;
  cfg.mode = PipelineMode::ec_diff;
  cfg.strategy = strategy(10, 3, 0.2, 38);
  cfg.latency.cloud_step_seconds = 4.9;
  cfg.latency.edge_step_seconds = 1.82;
  cfg.latency.fixed_transfer_seconds = 1.75;
  cfg.condition = sc.condition;
  const auto r = run_pipeline_from(cfg, sc.x_T, *sc.cloud, *sc.edge, sc.schedule);
  const double rel = (r.latency.total - 105.61) / 105.61;
  return {std::abs(rel) <= 0.25 && r.speedup_vs_cloud_only >= 1.9,
          fmt("total %.2f s (%+.1f%% vs 105.61), speedup %.2fx", r.latency.total, 100 * rel,
              r.speedup_vs_cloud_only)};
}

Outcome quality_ordering(const ScenarioSummary& s) {
  return {s.ec_wins >= 18 && s.ec_ssim > s.edge_ssim,
          std::to_string(s.ec_wins) + "/20 seeds; mean MSE " +
              fmt("%.4g vs %.4g, mean SSIM %.4f vs %.4f", s.ec_mse, s.edge_mse, s.ec_ssim, s.edge_ssim)};
}

Outcome smoothing_ablation(const ScenarioSummary& s) {
  return {s.unsmoothed_mse > s.ec_mse, fmt("mean MSE alpha=0.2 %.4g, alpha=1 %.4g", s.ec_mse, s.unsmoothed_mse)};
}

std::vector<double> unimodal(std::size_t n, std::size_t peak, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> step(0.05, 1.0);
  std::vector<double> v(n);
  v[peak] = 0.0;
  for (std::size_t i = peak; i-- > 0;) v[i] = v[i + 1] - step(rng);
  for (std::size_t i = peak + 1; i < n; ++i) v[i] = v[i - 1] - step(rng);
  return v;
}

Outcome greedy_vs_oracle() {
  SearchSpace space;
  std::mt19937_64 rng(7);
  int agree1 = 0, agree2 = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> pk(0, 4), pa(0, 8), ps(0, 10);
    const auto kp = unimodal(5, pk(rng), rng);
    const auto ap = unimodal(9, pa(rng), rng);
    const auto sp = unimodal(11, ps(rng), rng);
    auto f1 = [&](int k, double a) {
      return kp[static_cast<std::size_t>(k - 1)] + ap[static_cast<std::size_t>(std::lround(a * 10) - 1)];
    };
    auto f2 = [&](int s) { return sp[static_cast<std::size_t>(s - 30)]; };
    const auto g = greedy_stage1(f1, space);
    const auto o = exhaustive_stage1(f1, space);
    agree1 += g.k_best == o.k_best && g.alpha_best == o.alpha_best;
    agree2 += greedy_stage2(f2, space).s_best == exhaustive_stage2(f2, space).s_best;
  }
  // Constant evaluator: hand-simulated visit sequences.
  const auto c1 = greedy_stage1([](int, double) { return 0.5; }, space);
  std::vector<std::pair<int, double>> seq1, want1;
  for (const auto& v : c1.visits) seq1.emplace_back(v.k, v.alpha);
  for (int k = 1; k <= 4; ++k) {
    for (double a : {0.5, 0.6, 0.4, 0.7}) want1.emplace_back(k, a);
  }
  const auto c2 = greedy_stage2([](int) { return 0.5; }, space);
  std::vector<int> seq2;
  for (const auto& v : c2.visits) seq2.push_back(v.s);
  const bool hand = seq1 == want1 && c1.k_best == 1 && c1.alpha_best == 0.5 &&
                    seq2 == std::vector<int>{35, 36, 34, 37} && c2.s_best == 35;
  return {agree1 == 20 && agree2 == 20 && hand,
          "stage 1 " + std::to_string(agree1) + "/20, stage 2 " + std::to_string(agree2) +
              "/20, constant-evaluator sequences " + (hand ? "match" : "differ")};
}

Outcome metric_properties() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failures.push_back(what);
  };
  auto rng = make_substream(8, "acceptance");
  for (int i = 0; i < 10; ++i) {
    const Tensor a = standard_normal({2, 8, 8}, rng);
    const Tensor b = standard_normal({2, 8, 8}, rng);
    expect(std::abs(ssim(a, a) - 1.0) < 1e-12, "ssim(a,a)=1");
    expect(ssim(a, b) == ssim(b, a), "ssim symmetric");
    MetricConfig w;
    w.ssim_window = 4;
    expect(std::abs(ssim(a, a, w) - 1.0) < 1e-12, "windowed ssim(a,a)=1");
    expect(ssim(a, b, w) == ssim(b, a, w), "windowed ssim symmetric");
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double m : {1e-6, 1e-3, 0.01, 0.1, 1.0, 10.0}) {
    expect(psnr_from_mse(m, 1.0) < prev, "psnr decreasing in mse");
    prev = psnr_from_mse(m, 1.0);
  }
  expect(std::abs(psnr_from_mse(0.01, 1.0) - 20.0) < 1e-12, "psnr(R=1, mse=0.01)=20");
  expect(std::isinf(psnr(Tensor::vector({1.0, 2.0}), Tensor::vector({1.0, 2.0}))), "psnr identical inf");
  const Tensor fa(Shape{2, 4}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.5, 0.5, 0.5});
  const Tensor fb(Shape{2, 4}, {0.1, 0.2, 0.3, 0.4, 0.6, 0.6, 0.6, 0.6});
  const auto a_frames = split_frames(fa);
  const auto b_frames = split_frames(fb);
  const auto avg = frame_average([](const Tensor& x, const Tensor& y) { return psnr(x, y); },
                                 std::span<const Tensor>(a_frames), std::span<const Tensor>(b_frames));
  expect(avg.frames_skipped == 1 && std::abs(avg.value - 20.0) < 1e-9, "frame average skips inf");
  std::vector<Tensor> two = {Tensor::vector({0.0}), Tensor::vector({1.0})};
  const auto mean = frame_average([](const Tensor& x, const Tensor&) { return x[0] > 0.5 ? 1.0 : 0.8; },
                                  std::span<const Tensor>(two), std::span<const Tensor>(two));
  expect(std::abs(mean.value - 0.9) < 1e-15, "frame average mean");
  std::string d = failures.empty() ? "all metric properties hold" : "failed:";
  for (const auto& f : failures) d += " " + f + ";";
  return {failures.empty(), d};
}

Outcome determinism_and_round_trips() {
  const auto sc = make_scenario(5);
  auto run_json = [&] {
    auto r = run_mode(sc, PipelineMode::ec_diff);
    r.metrics = compare_latents(run_mode(sc, PipelineMode::cloud_only).final_latent, r.final_latent, {});
    return std::make_pair(run_report_json(r).dump(), latent_bytes(r.final_latent));
  };
  const auto first = run_json();
  const auto second = run_json();
  const bool rerun = first == second;

  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ecdiff_acceptance";
  fs::create_directories(dir);
  auto rounded = std::make_shared<Float32Predictor>(sc.cloud);
  record_trace(sc.cloud, sc.schedule, sc.x_T, sc.condition, dir / "cloud.ecdt");
  LatentState live{sc.x_T, 50};
  run_plain_inference(*rounded, sc.schedule, live, 0, sc.condition);
  const auto replay = replay_predictor(read_trace(dir / "cloud.ecdt"));
  LatentState again{sc.x_T, 50};
  run_plain_inference(*replay, sc.schedule, again, 0, sc.condition);
  const bool round_trip = latent_bytes(live.data) == latent_bytes(again.data) && live.data == again.data;

  const auto bytes = serialize_trace(read_trace(dir / "cloud.ecdt"));
  const auto reparsed = serialize_trace(parse_trace(bytes));
  const bool format = bytes == reparsed;
  return {rerun && round_trip && format,
          std::string("rerun ") + (rerun ? "byte-identical" : "differs") + ", replay " +
              (round_trip ? "bitwise equal" : "differs") + ", trace re-serialization " +
              (format ? "stable" : "differs")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
  };
  const ScenarioSummary summary = summarize_scenario();
  const Criterion criteria[] = {
      {"error identities match brute force", identity_suite},
      {"linear-in-t predictor is exact", linear_exactness},
      {"transfer arithmetic", transfer_arithmetic},
      {"latency calibration", latency_calibration},
      {"quality ordering at desk scale", [&] { return quality_ordering(summary); }},
      {"smoothing ablation", [&] { return smoothing_ablation(summary); }},
      {"greedy search vs exhaustive oracle", greedy_vs_oracle},
      {"metric properties", metric_properties},
      {"determinism and trace round trips", determinism_and_round_trips},
  };
  int failures = 0;
  int n = 0;
  for (const auto& c : criteria) {
    ++n;
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d: %s (%s)\n", o.pass ? "PASS" : "FAIL", n, c.name, o.detail.c_str());
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
