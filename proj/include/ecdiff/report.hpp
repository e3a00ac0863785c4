#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "ecdiff/errors.hpp"
#include "ecdiff/kstep.hpp"
#include "ecdiff/pipeline.hpp"
#include "ecdiff/search.hpp"
#include "ecdiff/step_log.hpp"
#include "ecdiff/trace.hpp"

namespace ecdiff {

/// Shortest round-trip decimal form.
inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf, end);
}

/// JSON has no infinities; non-finite values serialize as null.
inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json strategy_json(const StrategyConfig& s) {
  return {{"p", s.pre_inference_steps},
          {"k", s.approximation_steps},
          {"alpha", s.smoothing_factor},
          {"s", s.switching_point},
          {"correction_steps", s.correction_steps}};
}

inline nlohmann::json metrics_json(const QualityMetrics& q) {
  return {{"reference", "cloud_only"},
          {"mse", q.mse},
          {"psnr_db", finite_or_null(q.psnr_db)},
          {"psnr_infinite", std::isinf(q.psnr_db)},
          {"ssim", q.ssim},
          {"lpips", nullptr},
          {"vbench", nullptr}};
}

/// One run. Field names are fixed; absent phases and metrics are null.
inline nlohmann::json run_report_json(const RunReport& r,
                                      const std::optional<std::string>& latent_file = {}) {
  using nlohmann::json;
  json j;
  j["mode"] = to_string(r.mode);
  j["total_steps"] = r.total_steps;
  j["seed"] = r.seed;
  j["handoff_step"] = r.handoff_step;
  j["cloud"] = {{"steps", r.cloud.steps}, {"model_calls", r.cloud.model_calls}};
  j["edge"] = r.edge ? json{{"steps", r.edge->steps}, {"model_calls", r.edge->model_calls}}
                     : json(nullptr);
  j["approximated_steps"] = r.approximated_steps;
  j["transfers"] = r.transfers;
  j["latency"] = {{"cloud_compute", r.latency.cloud_compute},
                  {"transfer", r.latency.transfer},
                  {"edge_compute", r.latency.edge_compute},
                  {"total", r.latency.total}};
  j["speedup_vs_cloud_only"] = r.speedup_vs_cloud_only;
  j["metrics"] = r.metrics ? metrics_json(*r.metrics) : json(nullptr);
  j["strategy"] = r.strategy ? strategy_json(*r.strategy) : json(nullptr);
  json log = json::array();
  for (const auto& s : r.cloud_log) {
    log.push_back({{"step", s.step}, {"phase", "cloud"}, {"source", to_string(s.source)}});
  }
  for (const auto& s : r.edge_log) {
    log.push_back({{"step", s.step}, {"phase", "edge"}, {"source", to_string(s.source)}});
  }
  j["source_log"] = std::move(log);
  j["final_latent_file"] = latent_file ? json(*latent_file) : json(nullptr);
  return j;
}

inline nlohmann::json search_result_json(const SearchResult& r) {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& v : r.visit_log) {
    log.push_back({{"stage", v.stage}, {"k", v.k}, {"alpha", v.alpha},
                   {"s", v.stage == 2 ? nlohmann::json(v.s) : nlohmann::json(nullptr)},
                   {"value", finite_or_null(v.value)}});
  }
  return {{"p", r.p},
          {"k_best", r.k_best},
          {"alpha_best", r.alpha_best},
          {"s_best", r.s_best},
          {"objective", finite_or_null(r.objective)},
          {"evaluations", r.evaluations},
          {"visit_log", std::move(log)}};
}

// --------------------------------------------------------------------------
// Curves

inline constexpr const char* kNoiseDiffHeader = "step,mean_abs_diff,variance";
inline constexpr const char* kLatentErrorHeader = "step,l2_error,source_flag";

/// Consecutive-step noise differences pooled over traces. For each pair of
/// adjacent records (t+1, t) every element of |eps_t - eps_{t+1}| is pooled
/// across traces; the row reports step t, the mean and the population
/// variance of the pooled values.
inline std::string noise_diff_csv(const std::vector<TraceFile>& traces) {
  if (traces.empty()) throw IncompleteTraceError("no traces given");
  struct Acc {
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t n = 0;
  };
  std::map<int, Acc, std::greater<>> rows;
  for (const auto& tr : traces) {
    if (tr.records.size() < 2) throw IncompleteTraceError("trace needs at least 2 records");
    if (tr.total_steps != traces.front().total_steps || tr.dims != traces.front().dims) {
      throw TraceFormatError("traces differ in T or dims");
    }
    for (std::size_t i = 1; i < tr.records.size(); ++i) {
      const auto& older = tr.records[i - 1];
      const auto& newer = tr.records[i];
      if (older.step != newer.step + 1) {
        throw IncompleteTraceError("trace steps are not consecutive at step " +
                                   std::to_string(newer.step));
      }
      auto& acc = rows[newer.step];
      for (std::size_t e = 0; e < newer.noise.size(); ++e) {
        const double d = std::abs(newer.noise[e] - older.noise[e]);
        acc.sum += d;
        acc.sum_sq += d * d;
        ++acc.n;
      }
    }
  }
  std::string out = std::string(kNoiseDiffHeader) + "\n";
  for (const auto& [step, acc] : rows) {
    const double n = static_cast<double>(acc.n);
    const double mean = acc.sum / n;
    const double var = std::max(0.0, acc.sum_sq / n - mean * mean);
    out += std::to_string(step) + "," + format_number(mean) + "," + format_number(var) + "\n";
  }
  return out;
}

/// L2 distance between the latent after each step of `run` and the latent
/// after the same step of `reference`. source_flag uses the trace codes
/// (0 model, 1 approximated, 2 corrected) of the run record.
inline std::string latent_error_csv(const TraceFile& run, const TraceFile& reference) {
  if (!run.has_latents || !reference.has_latents) {
    throw IncompleteTraceError("latent error needs traces with latents");
  }
  if (run.records.empty()) throw IncompleteTraceError("run trace is empty");
  if (run.total_steps != reference.total_steps || run.dims != reference.dims) {
    throw TraceFormatError("run and reference traces differ in T or dims");
  }
  std::map<int, const Tensor*> ref;
  for (const auto& r : reference.records) ref[r.step] = &r.latent;
  std::string out = std::string(kLatentErrorHeader) + "\n";
  for (const auto& r : run.records) {
    auto it = ref.find(r.step);
    if (it == ref.end()) {
      throw MissingStepError("reference has no latent for step " + std::to_string(r.step));
    }
    out += std::to_string(r.step) + "," + format_number(norm_l2(r.latent - *it->second)) + "," +
           std::to_string(static_cast<int>(r.source)) + "\n";
  }
  return out;
}

/// Both phases of a run as one trace (cloud records then edge records).
inline TraceFile run_trace(const RunReport& r, bool with_latents = true) {
  StepLog all = r.cloud_log;
  all.insert(all.end(), r.edge_log.begin(), r.edge_log.end());
  return trace_from_log(all, r.total_steps, r.final_latent.shape(), with_latents);
}

/// Raw little-endian f32 row-major, the trace payload layout.
inline std::vector<unsigned char> latent_bytes(const Tensor& t) {
  detail::ByteWriter w;
  w.put_floats(t);
  return std::move(w).take();
}

}  // namespace ecdiff
