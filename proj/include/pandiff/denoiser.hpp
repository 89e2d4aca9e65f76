#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pandiff/conditioning.hpp"
#include "pandiff/diffusion.hpp"
#include "pandiff/nn/graph.hpp"
#include "pandiff/nn/init.hpp"
#include "pandiff/nn/params.hpp"

namespace pandiff {

struct DenoiserConfig {
  int in_bands = 4;
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 4};
  PredictionKind prediction_kind = PredictionKind::x0;
  int norm_groups = 8;
  // Hidden width of the style MLP; 0 means base_channels.
  int style_hidden = 0;
  bool style_modulation = true;
  bool wavelet_modulation = true;
  WaveletInjection wavelet_injection = WaveletInjection::concat;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  int cond_bands() const { return in_bands + 1; }
  int band_stack_channels() const { return in_bands + 3; }
  int time_dim() const { return 4 * base_channels; }
  int channels(int level) const { return base_channels * channel_multipliers.at(level); }
  int spatial_divisor() const { return 1 << (levels() - 1); }

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

nlohmann::json to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

// Every learnable tensor, in a fixed order, with its shape and initializer.
std::vector<nn::ParamDecl> declare_denoiser_params(const DenoiserConfig& cfg);
std::size_t count_params(const DenoiserConfig& cfg);
nn::ParamStore<float> init_denoiser_params(const DenoiserConfig& cfg, std::uint64_t seed);
// Throws ConfigError when keys or shapes disagree with the config.
template <typename T>
void check_params(const DenoiserConfig& cfg, const nn::ParamStore<T>& params);

// Batched graph inputs. x_t is (n, C, H, W); cond (n, C+1, H, W) holds
// [pan, lrms_up]; bands (n, C+3, H/2, W/2). steps has one entry per sample.
template <typename T>
struct DenoiserInputs {
  typename nn::Graph<T>::Id x_t;
  typename nn::Graph<T>::Id cond;
  typename nn::Graph<T>::Id bands;
  std::vector<int> steps;
};

template <typename T>
typename nn::Graph<T>::Id denoiser_graph(nn::ParamBinder<T>& p, const DenoiserConfig& cfg,
                                         const DenoiserInputs<T>& in);

// Stacks single-image tensors into batched graph constants.
template <typename T>
DenoiserInputs<T> make_denoiser_inputs(nn::Graph<T>& g, std::span<const ImageTensor> x_t,
                                       std::span<const int> steps,
                                       std::span<const ConditionBundle* const> cond);

// Single-image inference.
Prediction forward(const ImageTensor& x_t, int t, const ConditionBundle& cond,
                   const nn::ParamStore<float>& params, const DenoiserConfig& cfg);

// Checkpoint blobs: <dir>/<blob_prefix><index>.ten with a JSON index
// {key: {dtype, shape, blob}} returned / consumed by these helpers.
nlohmann::json save_param_blobs(const nn::ParamStore<float>& params, const std::filesystem::path& dir,
                                const std::string& blob_prefix);
nn::ParamStore<float> load_param_blobs(const nlohmann::json& index, const std::filesystem::path& dir);

}  // namespace pandiff
