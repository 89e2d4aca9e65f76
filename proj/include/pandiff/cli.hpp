#pragma once

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pandiff/datasim.hpp"
#include "pandiff/metrics.hpp"
#include "pandiff/sampler.hpp"
#include "pandiff/trainer.hpp"

namespace pandiff {

// Bad flags or configuration; the command exits with status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOutputRootEnv = "PANDIFF_OUTPUT_ROOT";

struct SampleSettings {
  int steps = 25;
  double eta = 0.0;
  std::uint64_t seed = 0;
  SamplerKind kind = SamplerKind::ddim;
};

// Sections of a run config file; every section and key is optional.
// {"synth": {...}, "train": {...}, "sample": {...}, "metrics": {...}}
struct RunConfig {
  SynthConfig synth;
  int val_count = 0;
  int test_count = 8;
  TrainConfig train;
  SampleSettings sample;
  MetricConfig metrics;
};

nlohmann::json to_json(const RunConfig& c);
// Throws UsageError on unknown sections or keys.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// 8-bit PNG writers. Planes are row-major.
void write_png_gray(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& px);
void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& px);
// Per-band min-max stretch of the first three bands (or band 0 as gray).
void write_preview(const std::filesystem::path& path, const ImageTensor& t);
// Band-mean absolute error, scaled so the largest error maps to 255.
void write_error_map(const std::filesystem::path& path, const ImageTensor& fused, const ImageTensor& gt);

// Entry point of the `pandiff` tool. Returns 0 on success, 2 on usage errors
// and 1 on runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pandiff
