#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pandiff::nn {

// NCHW extent. Matrix-style operands reuse it as (n, rows, 1, cols).
struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
  int hw() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
// tape backwards from the root is a valid topological order. Gradients are
// only tracked for nodes that (transitively) depend on a leaf created with
// requires_grad.
template <typename T>
class Graph {
 public:
  using Id = int;

  explicit Graph(bool record = true) : record_(record) {}

  Id constant(Shape s, std::vector<T> values);
  Id leaf(Shape s, std::vector<T> values, bool requires_grad);

  const Shape& shape(Id id) const { return nodes_[id].shape; }
  const std::vector<T>& value(Id id) const { return nodes_[id].value; }
  // Empty when the node received no gradient.
  const std::vector<T>& grad(Id id) const { return nodes_[id].grad; }
  bool requires_grad(Id id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root) = seed and propagates to every reachable node.
  void backward(Id root, std::vector<T> seed);

  // 'Same' convolution with square odd kernel; w is (cout, cin, k, k).
  Id conv2d(Id x, Id w, Id b);
  Id conv2d(Id x, Id w);
  // x (n, in, 1, 1), w (out, in, 1, 1), b (1, out, 1, 1)
  Id linear(Id x, Id w, Id b);

  Id add(Id a, Id b);
  // Adds v (n, c, 1, 1) to every pixel of x (n, c, h, w).
  Id add_channel_bias(Id x, Id v);
  Id mul(Id a, Id b);
  Id scale(Id x, T s);
  // f * (1 + scale) + shift
  Id modulate(Id f, Id scale, Id shift);
  Id silu(Id x);
  Id group_norm(Id x, Id gamma, Id beta, int groups, T eps = T(1e-5));

  Id concat_channels(std::span<const Id> parts);
  Id slice_channels(Id x, int first, int count);
  Id avg_pool(Id x, int factor);
  Id upsample_nearest(Id x, int factor);
  Id reshape(Id x, Shape s);

  Id softmax_channels(Id x);
  Id softmax_spatial(Id x);
  // Per-sample matrix product of (rows = c, cols = h*w) views with optional
  // transposes. Result has shape (n, m, 1, p).
  Id bmm(Id a, Id b, bool trans_a, bool trans_b);

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Id push(Shape s, std::vector<T> value, std::initializer_list<Id> inputs);
  Id push(Shape s, std::vector<T> value, std::span<const Id> inputs);
  std::vector<T>& grad_buffer(Id id);
  bool tracking(Id id) const { return record_ && nodes_[id].requires_grad; }

  bool record_;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace pandiff::nn
