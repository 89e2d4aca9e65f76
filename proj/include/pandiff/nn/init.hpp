#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pandiff/nn/params.hpp"

namespace pandiff::nn {

enum class Init { kaiming, zeros, ones };

struct ParamDecl {
  std::string key;
  Shape shape;
  Init init = Init::kaiming;
  int fan_in = 1;
};

inline std::size_t count_elements(const std::vector<ParamDecl>& decls) {
  std::size_t n = 0;
  for (const auto& d : decls) n += d.shape.numel();
  return n;
}

// Kaiming-normal (fan-in, gain sqrt(2)) for weights; constants for the rest.
// Draws happen in declaration order so a seed fully determines the result.
inline ParamStore<float> init_params(const std::vector<ParamDecl>& decls, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamStore<float> store;
  for (const auto& d : decls) {
    std::vector<float> v(d.shape.numel());
    switch (d.init) {
      case Init::zeros: break;
      case Init::ones: std::fill(v.begin(), v.end(), 1.0f); break;
      case Init::kaiming: {
        const double std = std::sqrt(2.0 / std::max(d.fan_in, 1));
        for (auto& x : v) x = static_cast<float>(normal(rng) * std);
        break;
      }
    }
    if (store.contains(d.key)) throw ConfigError("duplicate parameter key '" + d.key + "'");
    store.set(d.key, d.shape, std::move(v));
  }
  return store;
}

// Standard shapes.
inline void declare_conv(std::vector<ParamDecl>& out, const std::string& prefix, int cin, int cout,
                         int k) {
  out.push_back({prefix + ".w", Shape{cout, cin, k, k}, Init::kaiming, cin * k * k});
  out.push_back({prefix + ".b", Shape{1, cout, 1, 1}, Init::zeros, 1});
}

inline void declare_group_norm(std::vector<ParamDecl>& out, const std::string& prefix, int ch) {
  out.push_back({prefix + ".g", Shape{1, ch, 1, 1}, Init::ones, 1});
  out.push_back({prefix + ".b", Shape{1, ch, 1, 1}, Init::zeros, 1});
}

}  // namespace pandiff::nn
