#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pandiff/conditioning.hpp"
#include "pandiff/denoiser.hpp"
#include "pandiff/diffusion.hpp"
#include "pandiff/schedule.hpp"

namespace pandiff {

enum class SamplerKind { ddpm, ddim };
std::string to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& s);

struct SamplerPlan {
  std::vector<int> tau;  // strictly increasing subset of [1, T], ending at T
  double eta = 0.0;
  SamplerKind kind = SamplerKind::ddim;
};

// Uniform stride over [1, T]: tau_i = round(i * T / steps), i = 1..steps.
SamplerPlan respaced_plan(int T, int steps, double eta = 0.0, SamplerKind kind = SamplerKind::ddim);
// Throws ConfigError when the plan cannot drive a T-step schedule.
void validate_plan(const SamplerPlan& plan, int T);

// Ancestral step: mean (x_t - beta_t / sqrt(1 - ab_t) * eps) / sqrt(alpha_t),
// plus sqrt(posterior variance) * noise for t > 1.
ImageTensor ddpm_step(const NoisyState& state, const Prediction& pred, const NoiseSchedule& sch,
                      const ImageTensor& noise);

// eta * sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev)
double ddim_sigma(const NoiseSchedule& sch, int t, int t_prev, double eta);

// sqrt(ab_prev) x0 + sqrt(1 - ab_prev - sigma^2) eps + sigma * noise, with
// sigma from ddim_sigma. t_prev may be 0 (clean data).
ImageTensor ddim_step(const NoisyState& state, const Prediction& pred, int t_prev,
                      const NoiseSchedule& sch, double eta, const ImageTensor& noise);
// Same update with an explicit sigma.
ImageTensor ddim_step_with_sigma(const NoisyState& state, const Prediction& pred, int t_prev,
                                 const NoiseSchedule& sch, double sigma, const ImageTensor& noise);

using Predictor = std::function<Prediction(const ImageTensor& x_t, int t)>;

// Runs the plan from seeded standard-normal noise of the given dims and
// returns the final x_0 estimate. Calls `predict` once per plan step.
ImageTensor run_sampler(const Predictor& predict, int bands, int height, int width,
                        const SamplerPlan& plan, const NoiseSchedule& sch, std::uint64_t seed);

// Fused image: the network models HRMS - LrMS when `residual` is set, so the
// sampled residual is added back onto lrms_up before clipping to its range.
ImageTensor sample(const ConditionBundle& cond, const SamplerPlan& plan,
                   const nn::ParamStore<float>& params, const DenoiserConfig& cfg,
                   const NoiseSchedule& sch, std::uint64_t seed, bool residual = true,
                   int* denoiser_calls = nullptr);

}  // namespace pandiff
