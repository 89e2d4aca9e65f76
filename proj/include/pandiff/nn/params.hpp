#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "pandiff/error.hpp"
#include "pandiff/nn/graph.hpp"

namespace pandiff::nn {

template <typename T>
struct ParamTensor {
  Shape shape;
  std::vector<T> value;
};

// Learnable tensors keyed by a stable dotted path ("enc.0.res.1.conv1.w").
// std::map keeps iteration order deterministic for checkpoints and optimizers.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, ParamTensor<T>>;

  void set(const std::string& key, Shape shape, std::vector<T> value) {
    if (value.size() != shape.numel()) {
      throw ConfigError("param " + key + ": value count does not match " + shape.str());
    }
    params_[key] = {shape, std::move(value)};
  }

  bool contains(const std::string& key) const { return params_.count(key) != 0; }

  const ParamTensor<T>& at(const std::string& key) const {
    auto it = params_.find(key);
    if (it == params_.end()) throw ConfigError("missing parameter '" + key + "'");
    return it->second;
  }
  ParamTensor<T>& at(const std::string& key) {
    auto it = params_.find(key);
    if (it == params_.end()) throw ConfigError("missing parameter '" + key + "'");
    return it->second;
  }

  const Map& all() const { return params_; }
  Map& all() { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [k, p] : params_) n += p.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, p] : params_) {
      out.set(k, p.shape, std::vector<U>(p.value.begin(), p.value.end()));
    }
    return out;
  }

 private:
  Map params_;
};

// Lazily materializes parameters as graph leaves, once per key.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Graph<T>& g, const ParamStore<T>& store, bool requires_grad)
      : graph_(g), store_(store), requires_grad_(requires_grad) {}

  typename Graph<T>::Id operator()(const std::string& key) {
    auto it = ids_.find(key);
    if (it != ids_.end()) return it->second;
    const auto& p = store_.at(key);
    const auto id = graph_.leaf(p.shape, p.value, requires_grad_);
    ids_.emplace(key, id);
    return id;
  }

  // Gradient for every parameter in the store (zeros when unused).
  std::map<std::string, std::vector<T>> gradients() const {
    std::map<std::string, std::vector<T>> out;
    for (const auto& [key, p] : store_.all()) {
      auto it = ids_.find(key);
      if (it == ids_.end() || graph_.grad(it->second).empty()) {
        out[key].assign(p.value.size(), T(0));
      } else {
        out[key] = graph_.grad(it->second);
      }
    }
    return out;
  }

  Graph<T>& graph() { return graph_; }

 private:
  Graph<T>& graph_;
  const ParamStore<T>& store_;
  bool requires_grad_;
  std::unordered_map<std::string, typename Graph<T>::Id> ids_;
};

}  // namespace pandiff::nn
