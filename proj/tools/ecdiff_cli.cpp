// ecdiff command-line runner: run, search, report-curves, trace-record,
// trace-replay. Exit codes: 0 success, 1 runtime failure, 2 usage or
// config error.

#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecdiff/ecdiff.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ecdiff;

namespace {

constexpr const char* kVersion = "0.1.0";

// Input problems that map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
};

ExperimentConfig load(const CommonOptions& o) {
  auto cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

// Timestamps live here only, so report payloads stay byte-identical.
void write_metadata(const fs::path& dir, const std::string& command, const std::string& config) {
  write_json(dir / "metadata.json", {{"tool", "ecdiff"},
                                     {"version", kVersion},
                                     {"command", command},
                                     {"config", config},
                                     {"created_utc", utc_now()}});
}

fs::path prepare_out(const fs::path& dir) {
  fs::create_directories(dir);
  return dir;
}

SearchResult run_search(const ExperimentConfig& cfg, const SamplerSchedule& schedule,
                        const PredictorPair* predictors, unsigned jobs) {
  const SearchConfig& sc = *cfg.search;
  if (sc.evaluator == "constant") {
    const double c = sc.constant_value;
    return two_stage_search(
        sc.p, [c](int, double) { return c; }, [c](int, double, int) { return c; }, sc.space);
  }
  if (sc.evaluator == "quadratic") {
    return two_stage_search(
        sc.p,
        [&](int k, double a) {
          return -(a - sc.peak_alpha) * (a - sc.peak_alpha) -
                 static_cast<double>((k - sc.peak_k) * (k - sc.peak_k));
        },
        [&](int, double, int s) { return -static_cast<double>((s - sc.peak_s) * (s - sc.peak_s)); },
        sc.space);
  }
  if (!predictors) throw std::logic_error("pipeline search needs predictors");
  auto prompts = make_prompt_set(sc.prompts, cfg.mixture_components(), cfg.latent_shape, cfg.seed);
  PipelineEvaluator evaluator(predictors->cloud, predictors->edge, schedule, cfg.latency,
                              std::move(prompts), sc.weights, cfg.metrics, jobs);
  return search_pipeline(evaluator, sc.p, sc.space);
}

PipelineConfig pipeline_config(const ExperimentConfig& cfg, PipelineMode mode,
                               const std::optional<StrategyConfig>& strategy) {
  PipelineConfig pc;
  pc.mode = mode;
  pc.switch_step = cfg.switch_step;
  if (strategy) pc.strategy = *strategy;
  pc.latent_shape = cfg.latent_shape;
  pc.seed = cfg.seed;
  pc.latency = cfg.latency;
  pc.condition = cfg.resolved_condition();
  return pc;
}

// Runs every configured mode against one shared x_T and writes the report.
// The reference for metrics is a cloud_only run with `reference_cloud`.
json execute_modes(const ExperimentConfig& cfg, const SamplerSchedule& schedule,
                   const NoisePredictor& cloud, const NoisePredictor& edge,
                   const NoisePredictor* reference_cloud,
                   const std::optional<StrategyConfig>& strategy, const fs::path& out,
                   std::vector<RunReport>* reports_out = nullptr) {
  const Tensor x_T = initial_noise(cfg.latent_shape, cfg.seed);
  std::optional<RunReport> reference;
  if (reference_cloud) {
    reference = run_pipeline_from(pipeline_config(cfg, PipelineMode::cloud_only, strategy), x_T,
                                  *reference_cloud, edge, schedule);
  }
  json runs = json::array();
  for (auto mode : cfg.modes) {
    auto report = run_pipeline_from(pipeline_config(cfg, mode, strategy), x_T, cloud, edge, schedule);
    std::optional<std::string> latent_file;
    if (reference && mode != PipelineMode::cloud_only) {
      report.metrics = compare_latents(reference->final_latent, report.final_latent, cfg.metrics);
      write_file_atomic(out / (std::string("latent_error_") + to_string(mode) + ".csv"),
                        latent_error_csv(run_trace(report), run_trace(*reference)));
    }
    if (cfg.write_latents) {
      latent_file = std::string("final_latent_") + to_string(mode) + ".bin";
      write_file_atomic(out / *latent_file, latent_bytes(report.final_latent));
    }
    runs.push_back(run_report_json(report, latent_file));
    if (reports_out) reports_out->push_back(std::move(report));
  }
  json condition = cfg.resolved_condition().components;
  return {{"total_steps", schedule.total_steps()},
          {"seed", cfg.seed},
          {"latent_shape", cfg.latent_shape},
          {"condition", condition},
          {"runs", std::move(runs)}};
}

int cmd_run(const CommonOptions& o) {
  const auto cfg = load(o);
  const auto schedule = cfg.schedule.build();
  const auto predictors = build_predictors(cfg, schedule);
  const fs::path out = prepare_out(cfg.output_dir);

  std::optional<StrategyConfig> strategy = cfg.strategy;
  std::optional<SearchResult> searched;
  if (cfg.has_mode(PipelineMode::ec_diff) && cfg.search) {
    searched = run_search(cfg, schedule, &predictors, o.jobs);
    StrategyConfig s;
    s.pre_inference_steps = searched->p;
    s.approximation_steps = searched->k_best;
    s.smoothing_factor = searched->alpha_best;
    s.switching_point = searched->s_best;
    strategy = s;
  }
  json report = execute_modes(cfg, schedule, *predictors.cloud, *predictors.edge,
                              predictors.cloud.get(), strategy, out);
  report["command"] = "run";
  report["search"] = searched ? search_result_json(*searched) : json(nullptr);
  write_json(out / "report.json", report);
  write_metadata(out, "run", o.config);
  return 0;
}

int cmd_search(const CommonOptions& o) {
  const auto cfg = load(o);
  if (!cfg.search) throw UsageError("config has no 'search' block");
  const auto schedule = cfg.schedule.build();
  std::optional<PredictorPair> predictors;
  if (cfg.search->evaluator == "pipeline") predictors = build_predictors(cfg, schedule);
  const fs::path out = prepare_out(cfg.output_dir);
  const auto result = run_search(cfg, schedule, predictors ? &*predictors : nullptr, o.jobs);
  write_json(out / "search.json", search_result_json(result));
  write_metadata(out, "search", o.config);
  return 0;
}

int cmd_trace_record(const CommonOptions& o) {
  const auto cfg = load(o);
  if (cfg.modes.size() != 1) throw UsageError("trace-record needs exactly one mode");
  if (cfg.has_mode(PipelineMode::ec_diff) && !cfg.strategy) {
    throw UsageError("trace-record needs an explicit strategy");
  }
  const auto schedule = cfg.schedule.build();
  const auto live = build_predictors(cfg, schedule);
  // f32-rounded predictors make the recorded run exactly replayable.
  const Float32Predictor cloud(live.cloud);
  const Float32Predictor edge(live.edge);
  const fs::path out = prepare_out(cfg.output_dir);

  std::vector<RunReport> reports;
  json report = execute_modes(cfg, schedule, cloud, edge, &cloud, cfg.strategy, out, &reports);
  report["command"] = "run";
  report["search"] = nullptr;
  const RunReport& r = reports.front();
  const int T = schedule.total_steps();
  write_trace(out / "cloud.ecdt", trace_from_log(r.cloud_log, T, cfg.latent_shape, true));
  write_trace(out / "edge.ecdt", trace_from_log(r.edge_log, T, cfg.latent_shape, true));
  write_trace(out / "run.ecdt", run_trace(r));
  const auto reference = run_pipeline_from(
      pipeline_config(cfg, PipelineMode::cloud_only, cfg.strategy),
      initial_noise(cfg.latent_shape, cfg.seed), cloud, edge, schedule);
  write_trace(out / "reference.ecdt", trace_from_log(reference.cloud_log, T, cfg.latent_shape, true));
  write_json(out / "report.json", report);
  write_metadata(out, "trace-record", o.config);
  return 0;
}

TraceFile load_trace_input(const std::string& path) {
  try {
    return read_trace(path);
  } catch (const TraceFormatError& e) {
    throw UsageError(path + ": " + e.what());
  } catch (const ShapeError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

int cmd_trace_replay(const CommonOptions& o, const std::string& cloud_path,
                     const std::string& edge_path, const std::string& reference_path) {
  const auto cfg = load(o);
  if (cfg.has_mode(PipelineMode::ec_diff) && !cfg.strategy) {
    throw UsageError("trace-replay needs an explicit strategy");
  }
  const auto schedule = cfg.schedule.build();
  const int T = schedule.total_steps();
  auto open = [&](const std::string& path, double cost, Fidelity fid) {
    auto trace = load_trace_input(path);
    if (trace.total_steps != T) {
      throw UsageError(path + ": trace T=" + std::to_string(trace.total_steps) +
                       " but the schedule has T=" + std::to_string(T));
    }
    if (trace.dims != cfg.latent_shape) throw UsageError(path + ": dims differ from latent_shape");
    return replay_predictor(trace, cost, fid);
  };
  const auto cloud = open(cloud_path, cfg.latency.cloud_step_seconds, Fidelity::cloud);
  const auto edge = open(edge_path, cfg.latency.edge_step_seconds, Fidelity::edge);
  PredictorPtr reference;
  if (!reference_path.empty()) {
    reference = open(reference_path, cfg.latency.cloud_step_seconds, Fidelity::cloud);
  } else if (cfg.modes.size() == 1 && cfg.modes.front() == PipelineMode::cloud_only) {
    reference = cloud;
  }
  const fs::path out = prepare_out(cfg.output_dir);
  json report = execute_modes(cfg, schedule, *cloud, *edge, reference.get(), cfg.strategy, out);
  report["command"] = "run";
  report["search"] = nullptr;
  write_json(out / "report.json", report);
  write_metadata(out, "trace-replay", o.config);
  return 0;
}

int cmd_report_curves(const std::vector<std::string>& trace_paths,
                      const std::string& reference_path, const std::string& out_dir) {
  std::vector<TraceFile> traces;
  for (const auto& p : trace_paths) {
    traces.push_back(load_trace_input(p));
    if (traces.back().records.empty()) throw UsageError(p + ": trace has no records");
  }
  const fs::path out = prepare_out(out_dir.empty() ? "out" : out_dir);
  try {
    write_file_atomic(out / "noise_diff.csv", noise_diff_csv(traces));
    if (!reference_path.empty()) {
      const auto reference = load_trace_input(reference_path);
      write_file_atomic(out / "latent_error.csv", latent_error_csv(traces.front(), reference));
    }
  } catch (const IncompleteTraceError& e) {
    throw UsageError(e.what());
  } catch (const TraceFormatError& e) {
    throw UsageError(e.what());
  } catch (const MissingStepError& e) {
    throw UsageError(e.what());
  }
  return 0;
}

void add_common(CLI::App* sub, CommonOptions& o, bool needs_config = true) {
  auto* c = sub->add_option("--config", o.config, "experiment config (JSON)");
  if (needs_config) c->required()->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "output directory (overrides output_dir)");
  sub->add_option("--seed", o.seed, "seed (overrides the config seed)");
  sub->add_option("--jobs", o.jobs, "parallel prompt evaluations")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-cloud collaborative diffusion simulator"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonOptions opts;
  auto* run = app.add_subcommand("run", "run the configured pipeline modes");
  add_common(run, opts);
  auto* search = app.add_subcommand("search", "two-stage greedy parameter search");
  add_common(search, opts);

  std::vector<std::string> curve_traces;
  std::string curve_reference;
  std::string curve_out;
  auto* curves = app.add_subcommand("report-curves", "noise-difference and latent-error CSVs");
  curves->add_option("--trace", curve_traces, "trace file (repeatable)")->required();
  curves->add_option("--reference", curve_reference, "reference trace for latent error");
  curves->add_option("--out", curve_out, "output directory");

  auto* record = app.add_subcommand("trace-record", "run one mode and record its traces");
  add_common(record, opts);

  std::string cloud_trace;
  std::string edge_trace;
  std::string reference_trace;
  auto* replay = app.add_subcommand("trace-replay", "rerun one configuration from traces");
  add_common(replay, opts);
  replay->add_option("--cloud-trace", cloud_trace, "cloud predictor trace")->required();
  replay->add_option("--edge-trace", edge_trace, "edge predictor trace")->required();
  replay->add_option("--reference-trace", reference_trace, "cloud_only trace for metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ecdiff: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*run) return cmd_run(opts);
    if (*search) return cmd_search(opts);
    if (*curves) return cmd_report_curves(curve_traces, curve_reference, curve_out);
    if (*record) return cmd_trace_record(opts);
    if (*replay) return cmd_trace_replay(opts, cloud_trace, edge_trace, reference_trace);
  } catch (const ConfigError& e) {
    std::cerr << "ecdiff: config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "ecdiff: " << e.what() << "\n";
    return 2;
  } catch (const SearchAborted& e) {
    std::cerr << "ecdiff: " << e.what() << " after " << e.visits().size() << " evaluations\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ecdiff: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
