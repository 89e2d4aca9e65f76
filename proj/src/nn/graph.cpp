#include "pandiff/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "pandiff/error.hpp"

namespace pandiff::nn {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

// Column buffer for a 'same' k x k convolution of one sample (cin, h, w):
// row (ci * k + ky) * k + kx, column y * w + x.
template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, T* col) {
  const int pad = k / 2;
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * h * w;
        const int x0 = std::max(0, pad - kx), x1 = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* out = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ci) * h + sy) * w;
          const int shift = kx - pad;
          std::fill(out, out + x0, T(0));
          std::copy(src + (x0 + shift), src + (x1 + shift), out + x0);
          std::fill(out + x1, out + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int cin, int h, int w, int k, T* dx) {
  const int pad = k / 2;
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * h * w;
        const int x0 = std::max(0, pad - kx), x1 = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* in = row + static_cast<std::size_t>(y) * w;
          T* dst = dx + (static_cast<std::size_t>(ci) * h + sy) * w;
          const int shift = kx - pad;
          for (int xx = x0; xx < x1; ++xx) dst[xx + shift] += in[xx];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
typename Graph<T>::Id Graph<T>::push(Shape s, std::vector<T> value, std::span<const Id> inputs) {
  Node node;
  node.shape = s;
  node.value = std::move(value);
  if (record_) {
    for (Id i : inputs) node.requires_grad = node.requires_grad || nodes_[i].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
typename Graph<T>::Id Graph<T>::push(Shape s, std::vector<T> value, std::initializer_list<Id> inputs) {
  return push(s, std::move(value), std::span<const Id>(inputs.begin(), inputs.size()));
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(Id id) {
  auto& g = nodes_[id].grad;
  if (g.empty()) g.assign(nodes_[id].shape.numel(), T(0));
  return g;
}

template <typename T>
typename Graph<T>::Id Graph<T>::constant(Shape s, std::vector<T> values) {
  require(values.size() == s.numel(), "constant: value count does not match shape " + s.str());
  return push(s, std::move(values), {});
}

template <typename T>
typename Graph<T>::Id Graph<T>::leaf(Shape s, std::vector<T> values, bool requires_grad) {
  require(values.size() == s.numel(), "leaf: value count does not match shape " + s.str());
  const Id id = push(s, std::move(values), {});
  nodes_[id].requires_grad = record_ && requires_grad;
  return id;
}

template <typename T>
void Graph<T>::backward(Id root, std::vector<T> seed) {
  require(seed.size() == nodes_[root].shape.numel(), "backward: seed shape mismatch");
  if (!tracking(root)) return;
  auto& g = grad_buffer(root);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (Id id = root; id >= 0; --id) {
    auto& node = nodes_[id];
    if (node.backward && !node.grad.empty()) node.backward();
  }
}

// ---------------------------------------------------------------- convolution

template <typename T>
typename Graph<T>::Id Graph<T>::conv2d(Id x, Id w, Id b) {
  const Shape xs = shape(x), ws = shape(w);
  require(ws.h == ws.w && ws.h % 2 == 1, "conv2d: kernel must be square and odd, got " + ws.str());
  require(ws.c == xs.c, "conv2d: weight expects " + std::to_string(ws.c) + " input channels, got " +
                            std::to_string(xs.c));
  const bool has_bias = b >= 0;
  if (has_bias) require(shape(b).numel() == static_cast<std::size_t>(ws.n), "conv2d: bias size");
  const int k = ws.h, cin = xs.c, cout = ws.n, hw = xs.hw();
  const int kdim = cin * k * k;
  Shape ys{xs.n, cout, xs.h, xs.w};
  std::vector<T> out(ys.numel());
  Mat<T> col(k == 1 ? 0 : kdim, hw);
  CMapM<T> wm(value(w).data(), cout, kdim);
  for (int n = 0; n < xs.n; ++n) {
    const T* xn = value(x).data() + n * xs.per_sample();
    const T* cp = xn;
    if (k != 1) {
      im2col(xn, cin, xs.h, xs.w, k, col.data());
      cp = col.data();
    }
    MapM<T> ym(out.data() + n * ys.per_sample(), cout, hw);
    ym.noalias() = wm * CMapM<T>(cp, kdim, hw);
    if (has_bias) {
      const T* bv = value(b).data();
      for (int o = 0; o < cout; ++o) ym.row(o).array() += bv[o];
    }
  }
  const Id y = has_bias ? push(ys, std::move(out), {x, w, b}) : push(ys, std::move(out), {x, w});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, w, b, y, xs, k, cin, cout, hw, kdim, has_bias] {
    const auto& gy = nodes_[y].grad;
    const bool gx = tracking(x), gw = tracking(w), gb = has_bias && tracking(b);
    Mat<T> col(k == 1 ? 0 : kdim, hw);
    Mat<T> dcol(k == 1 ? 0 : kdim, hw);
    CMapM<T> wm(value(w).data(), cout, kdim);
    for (int n = 0; n < xs.n; ++n) {
      CMapM<T> gym(gy.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
      const T* xn = value(x).data() + n * xs.per_sample();
      if (gw) {
        const T* cp = xn;
        if (k != 1) {
          im2col(xn, cin, xs.h, xs.w, k, col.data());
          cp = col.data();
        }
        MapM<T>(grad_buffer(w).data(), cout, kdim).noalias() += gym * CMapM<T>(cp, kdim, hw).transpose();
      }
      if (gb) {
        auto& db = grad_buffer(b);
        for (int o = 0; o < cout; ++o) {
          T acc = 0;
          for (int i = 0; i < hw; ++i) acc += gym(o, i);
          db[o] += acc;
        }
      }
      if (gx) {
        T* dxn = grad_buffer(x).data() + n * xs.per_sample();
        if (k == 1) {
          MapM<T>(dxn, kdim, hw).noalias() += wm.transpose() * gym;
        } else {
          dcol.noalias() = wm.transpose() * gym;
          col2im_add(dcol.data(), cin, xs.h, xs.w, k, dxn);
        }
      }
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::conv2d(Id x, Id w) {
  return conv2d(x, w, -1);
}

template <typename T>
typename Graph<T>::Id Graph<T>::linear(Id x, Id w, Id b) {
  require(shape(x).hw() == 1, "linear: input must be (n, c, 1, 1)");
  return conv2d(x, w, b);
}

// ---------------------------------------------------------------- elementwise

template <typename T>
typename Graph<T>::Id Graph<T>::add(Id a, Id b) {
  require(shape(a) == shape(b), "add: shape mismatch " + shape(a).str() + " vs " + shape(b).str());
  std::vector<T> out = value(a);
  const auto& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const Id y = push(shape(a), std::move(out), {a, b});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, a, b, y] {
    const auto& gy = nodes_[y].grad;
    for (Id in : {a, b}) {
      if (!tracking(in)) continue;
      auto& g = grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::add_channel_bias(Id x, Id v) {
  const Shape xs = shape(x), vs = shape(v);
  require(vs.n == xs.n && vs.c == xs.c && vs.hw() == 1,
          "add_channel_bias: expected " + Shape{xs.n, xs.c, 1, 1}.str() + ", got " + vs.str());
  std::vector<T> out = value(x);
  const auto& vv = value(v);
  const std::size_t hw = xs.hw();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
    for (std::size_t i = 0; i < hw; ++i) out[nc * hw + i] += vv[nc];
  }
  const Id y = push(xs, std::move(out), {x, v});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, v, y, xs, hw] {
    const auto& gy = nodes_[y].grad;
    if (tracking(x)) {
      auto& g = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (tracking(v)) {
      auto& g = grad_buffer(v);
      for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += gy[nc * hw + i];
        g[nc] += acc;
      }
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::mul(Id a, Id b) {
  require(shape(a) == shape(b), "mul: shape mismatch " + shape(a).str() + " vs " + shape(b).str());
  std::vector<T> out = value(a);
  const auto& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const Id y = push(shape(a), std::move(out), {a, b});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, a, b, y] {
    const auto& gy = nodes_[y].grad;
    if (tracking(a)) {
      auto& g = grad_buffer(a);
      const auto& bv = value(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bv[i];
    }
    if (tracking(b)) {
      auto& g = grad_buffer(b);
      const auto& av = value(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::scale(Id x, T s) {
  std::vector<T> out = value(x);
  for (auto& v : out) v *= s;
  const Id y = push(shape(x), std::move(out), {x});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, y, s] {
    const auto& gy = nodes_[y].grad;
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * gy[i];
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::modulate(Id f, Id sc, Id sh) {
  require(shape(f) == shape(sc) && shape(f) == shape(sh),
          "modulate: shape mismatch " + shape(f).str() + " / " + shape(sc).str() + " / " +
              shape(sh).str());
  std::vector<T> out(shape(f).numel());
  const auto &fv = value(f), &sv = value(sc), &hv = value(sh);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fv[i] * (T(1) + sv[i]) + hv[i];
  const Id y = push(shape(f), std::move(out), {f, sc, sh});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, f, sc, sh, y] {
    const auto& gy = nodes_[y].grad;
    const auto &fv = value(f), &sv = value(sc);
    if (tracking(f)) {
      auto& g = grad_buffer(f);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * (T(1) + sv[i]);
    }
    if (tracking(sc)) {
      auto& g = grad_buffer(sc);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * fv[i];
    }
    if (tracking(sh)) {
      auto& g = grad_buffer(sh);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::silu(Id x) {
  std::vector<T> out = value(x);
  for (auto& v : out) v = v / (T(1) + std::exp(-v));
  const Id y = push(shape(x), std::move(out), {x});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, y] {
    const auto& gy = nodes_[y].grad;
    const auto& xv = value(x);
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xv[i]));
      g[i] += gy[i] * s * (T(1) + xv[i] * (T(1) - s));
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::group_norm(Id x, Id gamma, Id beta, int groups, T eps) {
  const Shape xs = shape(x);
  require(groups > 0 && xs.c % groups == 0,
          "group_norm: " + std::to_string(xs.c) + " channels not divisible into " +
              std::to_string(groups) + " groups");
  require(shape(gamma).numel() == static_cast<std::size_t>(xs.c) &&
              shape(beta).numel() == static_cast<std::size_t>(xs.c),
          "group_norm: affine size mismatch");
  const int cpg = xs.c / groups;
  const std::size_t hw = xs.hw();
  const std::size_t gsize = cpg * hw;
  std::vector<T> mean(static_cast<std::size_t>(xs.n) * groups), rstd(mean.size());
  std::vector<T> out(xs.numel());
  const auto& xv = value(x);
  const auto &gv = value(gamma), &bv = value(beta);
  for (int n = 0; n < xs.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(n) * xs.c + g * cpg) * hw;
      double s = 0, s2 = 0;
      for (std::size_t i = 0; i < gsize; ++i) s += xv[base + i];
      const double m = s / gsize;
      for (std::size_t i = 0; i < gsize; ++i) {
        const double d = xv[base + i] - m;
        s2 += d * d;
      }
      const double r = 1.0 / std::sqrt(s2 / gsize + static_cast<double>(eps));
      mean[n * groups + g] = static_cast<T>(m);
      rstd[n * groups + g] = static_cast<T>(r);
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = base + cc * hw + i;
          out[idx] = static_cast<T>((xv[idx] - m) * r) * gv[ch] + bv[ch];
        }
      }
    }
  }
  const Id y = push(xs, std::move(out), {x, gamma, beta});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, gamma, beta, y, xs, groups, cpg, hw, gsize, mean = std::move(mean),
                        rstd = std::move(rstd)] {
    const auto& gy = nodes_[y].grad;
    const auto& xv = value(x);
    const auto& gv = value(gamma);
    std::vector<T> dxhat(gsize);
    for (int n = 0; n < xs.n; ++n) {
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(n) * xs.c + g * cpg) * hw;
        const T m = mean[n * groups + g], r = rstd[n * groups + g];
        double sum_d = 0, sum_dx = 0;
        for (int cc = 0; cc < cpg; ++cc) {
          const int ch = g * cpg + cc;
          double dg = 0, db = 0;
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = base + cc * hw + i;
            const T xhat = (xv[idx] - m) * r;
            dg += gy[idx] * xhat;
            db += gy[idx];
            const T d = gy[idx] * gv[ch];
            dxhat[cc * hw + i] = d;
            sum_d += d;
            sum_dx += d * xhat;
          }
          if (tracking(gamma)) grad_buffer(gamma)[ch] += static_cast<T>(dg);
          if (tracking(beta)) grad_buffer(beta)[ch] += static_cast<T>(db);
        }
        if (!tracking(x)) continue;
        auto& gx = grad_buffer(x);
        const double inv = 1.0 / static_cast<double>(gsize);
        for (std::size_t i = 0; i < gsize; ++i) {
          const T xhat = (xv[base + i] - m) * r;
          gx[base + i] += static_cast<T>(r * (dxhat[i] - sum_d * inv - xhat * sum_dx * inv));
        }
      }
    }
  };
  return y;
}

// ---------------------------------------------------------------- layout ops

template <typename T>
typename Graph<T>::Id Graph<T>::concat_channels(std::span<const Id> parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  Shape s = shape(parts[0]);
  s.c = 0;
  for (Id p : parts) {
    const Shape& ps = shape(p);
    require(ps.n == s.n && ps.h == s.h && ps.w == s.w,
            "concat_channels: " + ps.str() + " incompatible with " + shape(parts[0]).str());
    s.c += ps.c;
  }
  std::vector<T> out(s.numel());
  const std::size_t hw = s.hw();
  for (int n = 0; n < s.n; ++n) {
    std::size_t off = static_cast<std::size_t>(n) * s.c * hw;
    for (Id p : parts) {
      const std::size_t len = shape(p).c * hw;
      std::copy_n(value(p).begin() + n * len, len, out.begin() + off);
      off += len;
    }
  }
  std::vector<Id> ids(parts.begin(), parts.end());
  const Id y = push(s, std::move(out), std::span<const Id>(ids));
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, ids, y, s, hw] {
    const auto& gy = nodes_[y].grad;
    for (int n = 0; n < s.n; ++n) {
      std::size_t off = static_cast<std::size_t>(n) * s.c * hw;
      for (Id p : ids) {
        const std::size_t len = shape(p).c * hw;
        if (tracking(p)) {
          T* g = grad_buffer(p).data() + n * len;
          for (std::size_t i = 0; i < len; ++i) g[i] += gy[off + i];
        }
        off += len;
      }
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::slice_channels(Id x, int first, int count) {
  const Shape xs = shape(x);
  require(first >= 0 && count > 0 && first + count <= xs.c,
          "slice_channels: [" + std::to_string(first) + ", +" + std::to_string(count) +
              ") out of " + xs.str());
  Shape s = xs;
  s.c = count;
  const std::size_t hw = xs.hw();
  std::vector<T> out(s.numel());
  for (int n = 0; n < xs.n; ++n) {
    std::copy_n(value(x).begin() + (static_cast<std::size_t>(n) * xs.c + first) * hw, count * hw,
                out.begin() + static_cast<std::size_t>(n) * count * hw);
  }
  const Id y = push(s, std::move(out), {x});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, y, xs, first, count, hw] {
    const auto& gy = nodes_[y].grad;
    auto& g = grad_buffer(x);
    for (int n = 0; n < xs.n; ++n) {
      const std::size_t dst = (static_cast<std::size_t>(n) * xs.c + first) * hw;
      const std::size_t src = static_cast<std::size_t>(n) * count * hw;
      for (std::size_t i = 0; i < count * hw; ++i) g[dst + i] += gy[src + i];
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::avg_pool(Id x, int f) {
  const Shape xs = shape(x);
  require(f >= 1 && xs.h % f == 0 && xs.w % f == 0,
          "avg_pool: " + xs.str() + " not divisible by " + std::to_string(f));
  if (f == 1) return x;
  Shape s{xs.n, xs.c, xs.h / f, xs.w / f};
  std::vector<T> out(s.numel(), T(0));
  const T inv = T(1) / static_cast<T>(f * f);
  const auto& xv = value(x);
  for (std::size_t p = 0; p < static_cast<std::size_t>(xs.n) * xs.c; ++p) {
    for (int y = 0; y < xs.h; ++y) {
      for (int xx = 0; xx < xs.w; ++xx) {
        out[(p * s.h + y / f) * s.w + xx / f] += xv[(p * xs.h + y) * xs.w + xx] * inv;
      }
    }
  }
  const Id y = push(s, std::move(out), {x});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, y, xs, s, f, inv] {
    const auto& gy = nodes_[y].grad;
    auto& g = grad_buffer(x);
    for (std::size_t p = 0; p < static_cast<std::size_t>(xs.n) * xs.c; ++p) {
      for (int yy = 0; yy < xs.h; ++yy) {
        for (int xx = 0; xx < xs.w; ++xx) {
          g[(p * xs.h + yy) * xs.w + xx] += gy[(p * s.h + yy / f) * s.w + xx / f] * inv;
        }
      }
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::upsample_nearest(Id x, int f) {
  const Shape xs = shape(x);
  require(f >= 1, "upsample_nearest: factor must be >= 1");
  if (f == 1) return x;
  Shape s{xs.n, xs.c, xs.h * f, xs.w * f};
  std::vector<T> out(s.numel());
  const auto& xv = value(x);
  for (std::size_t p = 0; p < static_cast<std::size_t>(xs.n) * xs.c; ++p) {
    for (int yy = 0; yy < s.h; ++yy) {
      for (int xx = 0; xx < s.w; ++xx) {
        out[(p * s.h + yy) * s.w + xx] = xv[(p * xs.h + yy / f) * xs.w + xx / f];
      }
    }
  }
  const Id y = push(s, std::move(out), {x});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, y, xs, s, f] {
    const auto& gy = nodes_[y].grad;
    auto& g = grad_buffer(x);
    for (std::size_t p = 0; p < static_cast<std::size_t>(xs.n) * xs.c; ++p) {
      for (int yy = 0; yy < s.h; ++yy) {
        for (int xx = 0; xx < s.w; ++xx) {
          g[(p * xs.h + yy / f) * xs.w + xx / f] += gy[(p * s.h + yy) * s.w + xx];
        }
      }
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::reshape(Id x, Shape s) {
  require(s.numel() == shape(x).numel(), "reshape: " + shape(x).str() + " -> " + s.str());
  const Id y = push(s, value(x), {x});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, y] {
    const auto& gy = nodes_[y].grad;
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
  };
  return y;
}

// ---------------------------------------------------------------- softmax / matmul

template <typename T>
typename Graph<T>::Id Graph<T>::softmax_channels(Id x) {
  const Shape xs = shape(x);
  const std::size_t hw = xs.hw();
  std::vector<T> out(xs.numel());
  const auto& xv = value(x);
  for (int n = 0; n < xs.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * xs.c * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      T mx = xv[base + p];
      for (int c = 1; c < xs.c; ++c) mx = std::max(mx, xv[base + c * hw + p]);
      T sum = 0;
      for (int c = 0; c < xs.c; ++c) {
        const T e = std::exp(xv[base + c * hw + p] - mx);
        out[base + c * hw + p] = e;
        sum += e;
      }
      for (int c = 0; c < xs.c; ++c) out[base + c * hw + p] /= sum;
    }
  }
  const Id y = push(xs, std::move(out), {x});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, y, xs, hw] {
    const auto& gy = nodes_[y].grad;
    const auto& yv = value(y);
    auto& g = grad_buffer(x);
    for (int n = 0; n < xs.n; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * xs.c * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        T dot = 0;
        for (int c = 0; c < xs.c; ++c) dot += gy[base + c * hw + p] * yv[base + c * hw + p];
        for (int c = 0; c < xs.c; ++c) {
          const std::size_t i = base + c * hw + p;
          g[i] += yv[i] * (gy[i] - dot);
        }
      }
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::softmax_spatial(Id x) {
  const Shape xs = shape(x);
  const std::size_t hw = xs.hw();
  std::vector<T> out(xs.numel());
  const auto& xv = value(x);
  for (std::size_t r = 0; r < static_cast<std::size_t>(xs.n) * xs.c; ++r) {
    const T* in = xv.data() + r * hw;
    T* o = out.data() + r * hw;
    const T mx = *std::max_element(in, in + hw);
    T sum = 0;
    for (std::size_t i = 0; i < hw; ++i) sum += (o[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < hw; ++i) o[i] /= sum;
  }
  const Id y = push(xs, std::move(out), {x});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, x, y, xs, hw] {
    const auto& gy = nodes_[y].grad;
    const auto& yv = value(y);
    auto& g = grad_buffer(x);
    for (std::size_t r = 0; r < static_cast<std::size_t>(xs.n) * xs.c; ++r) {
      const std::size_t base = r * hw;
      T dot = 0;
      for (std::size_t i = 0; i < hw; ++i) dot += gy[base + i] * yv[base + i];
      for (std::size_t i = 0; i < hw; ++i) g[base + i] += yv[base + i] * (gy[base + i] - dot);
    }
  };
  return y;
}

template <typename T>
typename Graph<T>::Id Graph<T>::bmm(Id a, Id b, bool ta, bool tb) {
  const Shape as = shape(a), bs = shape(b);
  require(as.n == bs.n, "bmm: batch mismatch");
  const int ar = as.c, ac = as.hw(), br = bs.c, bc = bs.hw();
  const int m = ta ? ac : ar, ka = ta ? ar : ac;
  const int kb = tb ? bc : br, p = tb ? br : bc;
  require(ka == kb, "bmm: inner dims " + std::to_string(ka) + " vs " + std::to_string(kb));
  Shape s{as.n, m, 1, p};
  std::vector<T> out(s.numel());
  for (int n = 0; n < as.n; ++n) {
    CMapM<T> am(value(a).data() + n * as.per_sample(), ar, ac);
    CMapM<T> bm(value(b).data() + n * bs.per_sample(), br, bc);
    MapM<T> om(out.data() + n * s.per_sample(), m, p);
    if (!ta && !tb) om.noalias() = am * bm;
    else if (ta && !tb) om.noalias() = am.transpose() * bm;
    else if (!ta && tb) om.noalias() = am * bm.transpose();
    else om.noalias() = am.transpose() * bm.transpose();
  }
  const Id y = push(s, std::move(out), {a, b});
  if (!tracking(y)) return y;
  nodes_[y].backward = [this, a, b, y, as, bs, s, ar, ac, br, bc, ta, tb, m, p] {
    const auto& gy = nodes_[y].grad;
    for (int n = 0; n < as.n; ++n) {
      CMapM<T> gm(gy.data() + n * s.per_sample(), m, p);
      CMapM<T> am(value(a).data() + n * as.per_sample(), ar, ac);
      CMapM<T> bm(value(b).data() + n * bs.per_sample(), br, bc);
      // Y = opA * opB; dopA = dY * opB^T, dopB = opA^T * dY.
      if (tracking(a)) {
        MapM<T> ga(grad_buffer(a).data() + n * as.per_sample(), ar, ac);
        if (!ta && !tb) ga.noalias() += gm * bm.transpose();
        else if (!ta && tb) ga.noalias() += gm * bm;
        else if (ta && !tb) ga.noalias() += bm * gm.transpose();
        else ga.noalias() += bm.transpose() * gm.transpose();
      }
      if (tracking(b)) {
        MapM<T> gb(grad_buffer(b).data() + n * bs.per_sample(), br, bc);
        if (!ta && !tb) gb.noalias() += am.transpose() * gm;
        else if (ta && !tb) gb.noalias() += am * gm;
        else if (!ta && tb) gb.noalias() += gm.transpose() * am;
        else gb.noalias() += gm.transpose() * am.transpose();
      }
    }
  };
  return y;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace pandiff::nn
