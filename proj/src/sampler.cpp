#include "pandiff/sampler.hpp"

#include <cmath>
#include <random>

#include "pandiff/error.hpp"

namespace pandiff {

std::string to_string(SamplerKind k) { return k == SamplerKind::ddpm ? "ddpm" : "ddim"; }

SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "ddpm") return SamplerKind::ddpm;
  if (s == "ddim") return SamplerKind::ddim;
  throw InvalidArgument("unknown sampler kind '" + s + "'");
}

SamplerPlan respaced_plan(int T, int steps, double eta, SamplerKind kind) {
  if (steps < 1 || steps > T) {
    throw ConfigError("respaced_plan: steps must lie in [1, " + std::to_string(T) + "]");
  }
  SamplerPlan plan;
  plan.eta = eta;
  plan.kind = kind;
  for (int i = 1; i <= steps; ++i) {
    plan.tau.push_back(static_cast<int>(std::lround(static_cast<double>(i) * T / steps)));
  }
  validate_plan(plan, T);
  return plan;
}

void validate_plan(const SamplerPlan& plan, int T) {
  if (plan.tau.empty()) throw ConfigError("sampler plan: tau is empty");
  if (plan.tau.front() < 1 || plan.tau.back() != T) {
    throw ConfigError("sampler plan: tau must lie in [1, T] and end at T=" + std::to_string(T));
  }
  for (std::size_t i = 1; i < plan.tau.size(); ++i) {
    if (plan.tau[i] <= plan.tau[i - 1]) throw ConfigError("sampler plan: tau must be strictly increasing");
  }
  if (!(plan.eta >= 0.0 && plan.eta <= 1.0)) throw ConfigError("sampler plan: eta must lie in [0, 1]");
  if (plan.kind == SamplerKind::ddpm && static_cast<int>(plan.tau.size()) != T) {
    throw ConfigError("sampler plan: ddpm sampling needs the full step sequence; use ddim to respace");
  }
}

ImageTensor ddpm_step(const NoisyState& state, const Prediction& pred, const NoiseSchedule& sch,
                      const ImageTensor& noise) {
  const int t = state.t;
  if (t < 1 || t > sch.steps()) throw InvalidArgument("ddpm_step: step out of range");
  require_same_dims(state.x_t, noise, "ddpm_step");
  const ImageTensor eps = to_epsilon(pred, state, sch);
  const double alpha = sch.alpha(t), beta = sch.beta(t), ab = sch.alpha_bar(t);
  const double coef = beta / std::sqrt(1.0 - ab);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double sd = t > 1 ? std::sqrt(posterior_variance(sch, t)) : 0.0;
  ImageTensor out = state.x_t;
  auto o = out.data();
  auto e = eps.data();
  auto z = noise.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double mean = inv_sqrt_alpha * (static_cast<double>(o[i]) - coef * e[i]);
    o[i] = static_cast<float>(mean + sd * z[i]);
  }
  return out;
}

double ddim_sigma(const NoiseSchedule& sch, int t, int t_prev, double eta) {
  if (t_prev < 0 || t_prev >= t) throw InvalidArgument("ddim_sigma: need 0 <= t_prev < t");
  const double ab = sch.alpha_bar(t), ab_prev = sch.alpha_bar(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

ImageTensor ddim_step_with_sigma(const NoisyState& state, const Prediction& pred, int t_prev,
                                 const NoiseSchedule& sch, double sigma, const ImageTensor& noise) {
  const int t = state.t;
  if (t < 1 || t > sch.steps()) throw InvalidArgument("ddim_step: step out of range");
  if (t_prev < 0 || t_prev >= t) throw InvalidArgument("ddim_step: need 0 <= t_prev < t");
  const double ab = sch.alpha_bar(t), ab_prev = sch.alpha_bar(t_prev);
  const double dir2 = 1.0 - ab_prev - sigma * sigma;
  if (dir2 < -1e-12) {
    throw NumericDomainError("ddim_step: 1 - alpha_bar_prev - sigma^2 < 0 at t=" + std::to_string(t));
  }
  const double dir = std::sqrt(std::max(dir2, 0.0));
  const ImageTensor x0 = to_x0(pred, state.x_t, ab);
  // The direction term vanishes at t_prev = 0; skip the epsilon inversion there.
  const bool need_eps = dir > 0.0;
  const ImageTensor eps = need_eps ? to_epsilon(pred, state.x_t, ab) : ImageTensor();
  if (sigma != 0.0) require_same_dims(state.x_t, noise, "ddim_step");
  ImageTensor out = x0;
  auto o = out.data();
  const double a = std::sqrt(ab_prev);
  for (std::size_t i = 0; i < o.size(); ++i) {
    double v = a * o[i];
    if (need_eps) v += dir * eps.data()[i];
    if (sigma != 0.0) v += sigma * noise.data()[i];
    o[i] = static_cast<float>(v);
  }
  return out;
}

ImageTensor ddim_step(const NoisyState& state, const Prediction& pred, int t_prev,
                      const NoiseSchedule& sch, double eta, const ImageTensor& noise) {
  return ddim_step_with_sigma(state, pred, t_prev, sch, ddim_sigma(sch, state.t, t_prev, eta), noise);
}

namespace {

ImageTensor gaussian(int c, int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  ImageTensor t(c, h, w);
  for (float& v : t.data()) v = normal(rng);
  return t;
}

}  // namespace

ImageTensor run_sampler(const Predictor& predict, int bands, int height, int width,
                        const SamplerPlan& plan, const NoiseSchedule& sch, std::uint64_t seed) {
  validate_plan(plan, sch.steps());
  std::mt19937_64 rng(seed);
  NoisyState state{gaussian(bands, height, width, rng), plan.tau.back(), {}};
  for (int i = static_cast<int>(plan.tau.size()) - 1; i >= 0; --i) {
    state.t = plan.tau[i];
    const Prediction pred = predict(state.x_t, state.t);
    if (plan.kind == SamplerKind::ddpm) {
      const ImageTensor noise = state.t > 1 ? gaussian(bands, height, width, rng) : ImageTensor();
      state.x_t = ddpm_step(state, pred, sch, state.t > 1 ? noise : ImageTensor(bands, height, width));
    } else {
      const int t_prev = i > 0 ? plan.tau[i - 1] : 0;
      const double sigma = ddim_sigma(sch, state.t, t_prev, plan.eta);
      const ImageTensor noise = sigma > 0.0 ? gaussian(bands, height, width, rng) : ImageTensor();
      state.x_t = ddim_step_with_sigma(state, pred, t_prev, sch, sigma, noise);
    }
  }
  return state.x_t;
}

ImageTensor sample(const ConditionBundle& cond, const SamplerPlan& plan,
                   const nn::ParamStore<float>& params, const DenoiserConfig& cfg,
                   const NoiseSchedule& sch, std::uint64_t seed, bool residual, int* denoiser_calls) {
  if (cond.in_bands() != cfg.in_bands) {
    throw ConfigError("sample: condition has " + std::to_string(cond.in_bands()) +
                      " bands, model expects " + std::to_string(cfg.in_bands));
  }
  int calls = 0;
  const Predictor predict = [&](const ImageTensor& x_t, int t) {
    ++calls;
    return forward(x_t, t, cond, params, cfg);
  };
  const auto& lr = cond.lrms_up;
  ImageTensor out = run_sampler(predict, lr.bands(), lr.height(), lr.width(), plan, sch, seed);
  if (residual) out = out + lr;
  out.set_range_hint(lr.range_hint());
  clip_to(out, lr.range_hint());
  if (denoiser_calls) *denoiser_calls = calls;
  return out;
}

}  // namespace pandiff
