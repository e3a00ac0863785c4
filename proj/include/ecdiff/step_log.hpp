#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecdiff/predictors.hpp"
#include "ecdiff/schedule.hpp"
#include "ecdiff/tensor.hpp"

namespace ecdiff {

/// Where the noise used at a step came from. Values match the trace format.
enum class StepSource : std::uint8_t {
  model = 0,         ///< predictor invocation
  approximated = 1,  ///< gradient extrapolation, no predictor call
  corrected = 2,     ///< predictor invocation that closes an approximation cycle
};

inline const char* to_string(StepSource s) {
  switch (s) {
    case StepSource::model: return "model";
    case StepSource::approximated: return "approximated";
    case StepSource::corrected: return "corrected";
  }
  return "unknown";
}

/// One denoising update: the noise used to leave timestep `step` and the
/// resulting latent (at step - 1).
struct StepRecord {
  int step = 0;
  StepSource source = StepSource::model;
  Tensor noise;
  Tensor latent_after;
};

using StepLog = std::vector<StepRecord>;

/// Plain inference with one predictor from x down to timestep `stop_at`.
/// Returns the number of predictor calls; appends to `log` when given.
inline int run_plain_inference(const NoisePredictor& predictor,
                               const SamplerSchedule& schedule, LatentState& x,
                               int stop_at, const Condition& condition,
                               StepLog* log = nullptr) {
  if (stop_at < 0 || stop_at > x.timestep) {
    throw IndexError("plain inference target " + std::to_string(stop_at) +
                     " not reachable from " + std::to_string(x.timestep));
  }
  int calls = 0;
  while (x.timestep > stop_at) {
    Tensor eps = predictor.evaluate(x.data, x.timestep, condition);
    ++calls;
    const int step = x.timestep;
    x = denoise_step(x, eps, schedule);
    if (log) log->push_back({step, StepSource::model, std::move(eps), x.data});
  }
  return calls;
}

}  // namespace ecdiff
