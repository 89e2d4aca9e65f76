#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "pandiff/conditioning.hpp"
#include "pandiff/denoiser.hpp"
#include "pandiff/diffusion.hpp"
#include "pandiff/fusion_sample.hpp"
#include "pandiff/schedule.hpp"
#include "pandiff/tensor_io.hpp"

namespace pandiff {

struct TrainConfig {
  PredictionKind objective = PredictionKind::x0;
  LossKind loss = LossKind::l1;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double ema_decay = 0.995;
  int diffusion_steps = 500;
  double schedule_offset = 8e-3;
  int iterations = 3000;
  int batch_size = 4;
  std::uint64_t seed = 0;
  // Regress HRMS - LrMS; false regresses HRMS directly.
  bool residual = true;
  // 0 writes a checkpoint only at the end.
  int checkpoint_every = 0;
  DenoiserConfig model{.base_channels = 16};

  // Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Keys absent from `j` keep their defaults; unknown keys throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainState {
  nn::ParamStore<float> params;
  nn::ParamStore<float> ema;
  nn::ParamStore<float> adam_m;
  nn::ParamStore<float> adam_v;
  // Number of completed optimizer updates.
  int step = 0;
};

TrainState init_train_state(const TrainConfig& cfg);

// Sample indices for optimizer step `step` (0-based): the dataset is walked
// in a seeded permutation per epoch, batches run across epoch boundaries.
std::vector<int> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed, int step);

// Target for the network given the clean residual (or HRMS) x0 and its noise.
ImageTensor objective_target(PredictionKind objective, const ImageTensor& x0, const ImageTensor& eps,
                             int t, const NoiseSchedule& sch);

// ema <- decay * ema + (1 - decay) * params
void ema_update(nn::ParamStore<float>& ema, const nn::ParamStore<float>& params, double decay);

struct AdamWSettings {
  double lr, beta1, beta2, eps, weight_decay;
};
// One decoupled-weight-decay Adam update; `step` is the 1-based update count.
void adamw_update(nn::ParamStore<float>& params, nn::ParamStore<float>& m, nn::ParamStore<float>& v,
                  const std::map<std::string, std::vector<float>>& grads, const AdamWSettings& s, int step);

struct TrainExample {
  const FusionSample* sample;
  const ConditionBundle* cond;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  std::vector<int> steps;
};

// Draws t and noise from a generator keyed by (cfg.seed, state.step), takes
// one optimizer update and advances state.step. Throws NumericDomainError
// with t, loss and grad-norm when the loss or gradient is not finite.
StepResult train_step(std::span<const TrainExample> batch, TrainState& state, const TrainConfig& cfg,
                      const NoiseSchedule& sch);

// Checkpoint directory: manifest.json plus one .ten blob per tensor.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& cfg);
struct Checkpoint {
  TrainConfig config;
  TrainState state;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);
// Reads only the config and EMA weights (what sampling needs).
Checkpoint load_checkpoint_for_inference(const std::filesystem::path& dir);

struct LogRecord {
  int step;
  double loss;
  double grad_norm;
  double lr;
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;
  std::optional<std::filesystem::path> resume_from;
  // Stop after this many total steps even if cfg.iterations is larger.
  std::optional<int> stop_at;
  // Line-delimited JSON log.
  std::ostream* log = nullptr;
  std::function<void(const LogRecord&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<double> losses;  // losses of the steps run in this call
};

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainOptions& opts);

// Mean of the `window` values ending at index `end` (exclusive), clamped to the series.
double smoothed(std::span<const double> series, std::size_t end, std::size_t window);

}  // namespace pandiff
