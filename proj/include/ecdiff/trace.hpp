#pragma once

// Binary noise-trace format ("ECDT", version 1). All integers little-endian.
//
//   header:  "ECDT" | u16 version | u32 T | u8 ndim | u32 dim[ndim] | u8 flags
//   record:  i32 step | u8 source | f32 noise[prod(dim)] | f32 latent[prod(dim)]?
//
// flags bit0 marks latent payloads present in every record. Records are in
// strictly decreasing step order. Latents are the state after the record's
// update (timestep step - 1).

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ecdiff/errors.hpp"
#include "ecdiff/predictors.hpp"
#include "ecdiff/step_log.hpp"
#include "ecdiff/tensor.hpp"

namespace ecdiff {

inline constexpr std::array<char, 4> kTraceMagic{'E', 'C', 'D', 'T'};
inline constexpr std::uint16_t kTraceVersion = 1;

struct TraceRecord {
  int step = 0;
  StepSource source = StepSource::model;
  Tensor noise;
  Tensor latent;  ///< empty when the file carries no latents
};

struct TraceFile {
  int total_steps = 0;
  Shape dims;
  bool has_latents = false;
  std::vector<TraceRecord> records;

  void validate() const {
    if (total_steps <= 0) throw TraceFormatError("trace T must be positive");
    if (dims.empty() || dims.size() > 255) {
      throw TraceFormatError("trace ndim must be in [1, 255]");
    }
    for (auto d : dims) {
      if (d == 0 || d > std::numeric_limits<std::uint32_t>::max()) {
        throw TraceFormatError("trace dims must be positive u32");
      }
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.noise.shape() != dims) throw ShapeError("trace record noise dims differ");
      if (has_latents != !r.latent.empty()) {
        throw TraceFormatError("trace latent presence differs from header flag");
      }
      if (has_latents && r.latent.shape() != dims) {
        throw ShapeError("trace record latent dims differ");
      }
      if (i > 0 && r.step >= records[i - 1].step) {
        throw TraceFormatError("trace records must be in strictly decreasing step order");
      }
    }
  }
};

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U value) {
    static_assert(std::is_trivially_copyable_v<U>);
    std::array<unsigned char, sizeof(U)> raw;
    std::memcpy(raw.data(), &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw.begin(), raw.end());
    }
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }

  void put_floats(const Tensor& t) {
    for (double v : t.values()) put(static_cast<float>(v));
  }

  std::vector<unsigned char> take() && { return std::move(bytes_); }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    if (remaining() < sizeof(U)) {
      throw TraceFormatError(std::string("trace truncated while reading ") + what);
    }
    std::array<unsigned char, sizeof(U)> raw;
    std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw.begin(), raw.end());
    }
    U value;
    std::memcpy(&value, raw.data(), sizeof(U));
    return value;
  }

  Tensor get_floats(const Shape& dims, const char* what) {
    Tensor t(dims);
    if (remaining() < t.size() * sizeof(float)) {
      throw TraceFormatError(std::string("trace truncated inside ") + what);
    }
    for (double& v : t.values()) v = static_cast<double>(get<float>(what));
    return t;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize_trace(const TraceFile& trace) {
  trace.validate();
  detail::ByteWriter w;
  for (char c : kTraceMagic) w.put(c);
  w.put(kTraceVersion);
  w.put(static_cast<std::uint32_t>(trace.total_steps));
  w.put(static_cast<std::uint8_t>(trace.dims.size()));
  for (auto d : trace.dims) w.put(static_cast<std::uint32_t>(d));
  w.put(static_cast<std::uint8_t>(trace.has_latents ? 1 : 0));
  for (const auto& r : trace.records) {
    w.put(static_cast<std::int32_t>(r.step));
    w.put(static_cast<std::uint8_t>(r.source));
    w.put_floats(r.noise);
    if (trace.has_latents) w.put_floats(r.latent);
  }
  return std::move(w).take();
}

inline TraceFile parse_trace(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  for (char expected : kTraceMagic) {
    if (r.get<char>("magic") != expected) throw TraceFormatError("bad trace magic");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kTraceVersion) {
    throw TraceFormatError("unsupported trace version " + std::to_string(version));
  }
  TraceFile trace;
  const auto steps = r.get<std::uint32_t>("T");
  if (steps == 0 || steps > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
    throw TraceFormatError("trace T out of range");
  }
  trace.total_steps = static_cast<int>(steps);
  const auto ndim = r.get<std::uint8_t>("ndim");
  if (ndim == 0) throw TraceFormatError("trace ndim must be positive");
  for (unsigned i = 0; i < ndim; ++i) {
    const auto d = r.get<std::uint32_t>("dim");
    if (d == 0) throw TraceFormatError("trace dim must be positive");
    trace.dims.push_back(d);
  }
  const auto flags = r.get<std::uint8_t>("flags");
  if (flags & ~1u) throw TraceFormatError("unknown trace flags");
  trace.has_latents = (flags & 1u) != 0;

  while (r.remaining() > 0) {
    TraceRecord rec;
    rec.step = r.get<std::int32_t>("record step");
    const auto src = r.get<std::uint8_t>("record source");
    if (src > 2) throw TraceFormatError("bad record source flag");
    rec.source = static_cast<StepSource>(src);
    rec.noise = r.get_floats(trace.dims, "noise payload");
    if (trace.has_latents) rec.latent = r.get_floats(trace.dims, "latent payload");
    trace.records.push_back(std::move(rec));
  }
  trace.validate();
  return trace;
}

/// Write-then-rename so readers never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::span<const unsigned char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& text) {
  write_file_atomic(path, std::span<const unsigned char>(
                              reinterpret_cast<const unsigned char*>(text.data()),
                              text.size()));
}

inline void write_trace(const std::filesystem::path& path, const TraceFile& trace) {
  const auto bytes = serialize_trace(trace);
  write_file_atomic(path, bytes);
}

inline TraceFile read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_trace(bytes);
}

inline TraceFile trace_from_log(const StepLog& log, int total_steps,
                                const Shape& dims, bool with_latents) {
  TraceFile trace{total_steps, dims, with_latents, {}};
  trace.records.reserve(log.size());
  for (const auto& s : log) {
    trace.records.push_back(
        {s.step, s.source, s.noise, with_latents ? s.latent_after : Tensor{}});
  }
  trace.validate();
  return trace;
}

/// Serves recorded predictor outputs by step. Only model and corrected
/// records are servable; approximated records hold extrapolations, not
/// predictor outputs.
class ReplayPredictor final : public NoisePredictor {
 public:
  ReplayPredictor(const TraceFile& trace, double cost_seconds, Fidelity fidelity)
      : NoisePredictor(cost_seconds, fidelity),
        total_steps_(trace.total_steps),
        dims_(trace.dims) {
    for (const auto& r : trace.records) {
      if (r.source != StepSource::approximated) noise_by_step_.emplace(r.step, r.noise);
    }
  }

  Tensor evaluate(const Tensor& x, int t, const Condition&) const override {
    if (x.shape() != dims_) {
      throw ShapeError("replay query shape " + shape_string(x.shape()) +
                       " differs from trace dims " + shape_string(dims_));
    }
    auto it = noise_by_step_.find(t);
    if (it == noise_by_step_.end()) {
      throw MissingStepError("trace holds no predictor output for step " +
                             std::to_string(t));
    }
    return it->second;
  }

  int total_steps() const noexcept { return total_steps_; }

 private:
  int total_steps_;
  Shape dims_;
  std::map<int, Tensor> noise_by_step_;
};

inline PredictorPtr replay_predictor(const TraceFile& trace, double cost_seconds = 0.0,
                                     Fidelity fidelity = Fidelity::cloud) {
  return std::make_shared<ReplayPredictor>(trace, cost_seconds, fidelity);
}

/// Runs full plain inference with the predictor (outputs rounded to f32 so
/// the recording is exact) and writes the trace with latents.
inline TraceFile record_trace(PredictorPtr predictor, const SamplerSchedule& schedule,
                              const Tensor& x_T, const Condition& condition,
                              const std::filesystem::path& path) {
  Float32Predictor rounded(std::move(predictor));
  LatentState x{x_T, schedule.total_steps()};
  StepLog log;
  run_plain_inference(rounded, schedule, x, 0, condition, &log);
  auto trace = trace_from_log(log, schedule.total_steps(), x_T.shape(), true);
  write_trace(path, trace);
  return trace;
}

}  // namespace ecdiff
