#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pandiff/image_tensor.hpp"
#include "pandiff/nn/graph.hpp"
#include "pandiff/nn/params.hpp"

namespace pandiff::testing {

inline ImageTensor random_tensor(int c, int h, int w, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  ImageTensor t(c, h, w);
  for (float& v : t.data()) v = u(rng);
  return t;
}

inline ImageTensor normal_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  ImageTensor t(c, h, w);
  for (float& v : t.data()) v = n(rng);
  return t;
}

inline double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}

struct GradCheckStats {
  int checked = 0;
  int failed = 0;
  double max_rel = 0.0;
  std::string worst;
};

// Compares f32 reverse-mode gradients of L = sum(out * r) against central
// differences evaluated in double through the same graph code. Relative error
// is |a - n| / max(|a|, |n|, floor) where floor is 1% of the RMS of the
// sampled numerical gradients, so weights with near-zero gradient are judged
// on an absolute scale.
//
// Build is a callable with a templated operator()(Graph<T>&, ParamBinder<T>&)
// returning the output node.
template <typename Build>
GradCheckStats grad_check(const Build& build, const nn::ParamStore<float>& params, int samples,
                          std::uint64_t seed, double tol = 1e-3, double h = 1e-4) {
  std::mt19937_64 rng(seed);

  nn::Graph<float> g(true);
  nn::ParamBinder<float> p(g, params, true);
  const auto out = build(g, p);
  const std::size_t n_out = g.value(out).size();
  std::vector<double> r(n_out);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : r) v = normal(rng);
  g.backward(out, std::vector<float>(r.begin(), r.end()));
  const auto grads = p.gradients();

  nn::ParamStore<double> pd = params.cast<double>();
  auto loss = [&]() {
    nn::Graph<double> gd(false);
    nn::ParamBinder<double> bd(gd, pd, false);
    const auto o = build(gd, bd);
    const auto& v = gd.value(o);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * r[i];
    return acc;
  };

  std::vector<std::pair<std::string, std::size_t>> all;
  for (const auto& [k, t] : params.all())
    for (std::size_t i = 0; i < t.value.size(); ++i) all.emplace_back(k, i);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min<std::size_t>(all.size(), samples));

  std::vector<double> numeric, analytic;
  for (const auto& [k, i] : all) {
    double& w = pd.at(k).value[i];
    const double w0 = w;
    w = w0 + h;
    const double lp = loss();
    w = w0 - h;
    const double lm = loss();
    w = w0;
    numeric.push_back((lp - lm) / (2 * h));
    analytic.push_back(grads.at(k)[i]);
  }
  double ms = 0.0;
  for (double v : numeric) ms += v * v;
  const double floor = 1e-2 * std::sqrt(ms / std::max<std::size_t>(numeric.size(), 1));

  GradCheckStats s;
  for (std::size_t j = 0; j < all.size(); ++j) {
    const double a = analytic[j], n = numeric[j];
    const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor, 1e-12});
    ++s.checked;
    if (rel > s.max_rel) {
      s.max_rel = rel;
      s.worst = all[j].first + "[" + std::to_string(all[j].second) + "] analytic=" + std::to_string(a) +
                " numeric=" + std::to_string(n);
    }
    if (rel >= tol) ++s.failed;
  }
  return s;
}

}  // namespace pandiff::testing
