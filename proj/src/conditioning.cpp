#include "pandiff/conditioning.hpp"

#include <array>

#include "pandiff/error.hpp"
#include "pandiff/wavelet.hpp"

namespace pandiff {

using nn::Graph;
using nn::Shape;

ConditionBundle make_condition_bundle(const ImageTensor& pan, const ImageTensor& lrms_up) {
  return {pan, lrms_up, wavelet_condition_stack(lrms_up, pan)};
}

void declare_style_params(std::vector<nn::ParamDecl>& out, const std::string& prefix, int cond_ch,
                          int hidden, int d) {
  nn::declare_conv(out, prefix + ".conv1", cond_ch, hidden, 3);
  nn::declare_conv(out, prefix + ".conv2", hidden, 2 * d, 3);
}

void declare_wavelet_params(std::vector<nn::ParamDecl>& out, const std::string& prefix, int band_ch,
                            int d) {
  nn::declare_conv(out, prefix + ".q", d, d, 1);
  nn::declare_conv(out, prefix + ".kv", band_ch, 2 * d, 1);
}

template <typename T>
typename Graph<T>::Id style_modulate(nn::ParamBinder<T>& p, const std::string& prefix,
                                     typename Graph<T>::Id f, typename Graph<T>::Id cond) {
  auto& g = p.graph();
  const Shape fs = g.shape(f), cs = g.shape(cond);
  if (cs.n != fs.n || cs.h % fs.h != 0 || cs.w % fs.w != 0 || cs.h / fs.h != cs.w / fs.w) {
    throw ConfigError(prefix + ": condition grid " + cs.str() + " cannot be pooled to " + fs.str());
  }
  const auto pooled = g.avg_pool(cond, cs.h / fs.h);
  auto h = g.conv2d(pooled, p(prefix + ".conv1.w"), p(prefix + ".conv1.b"));
  h = g.silu(h);
  h = g.conv2d(h, p(prefix + ".conv2.w"), p(prefix + ".conv2.b"));
  if (g.shape(h).c != 2 * fs.c) {
    throw ConfigError(prefix + ": MLP emits " + std::to_string(g.shape(h).c) +
                      " channels, split needs 2 x " + std::to_string(fs.c));
  }
  const auto scale = g.slice_channels(h, 0, fs.c);
  const auto shift = g.slice_channels(h, fs.c, fs.c);
  return g.modulate(f, scale, shift);
}

template <typename T>
typename Graph<T>::Id linear_cross_attention(Graph<T>& g, typename Graph<T>::Id q,
                                             typename Graph<T>::Id k, typename Graph<T>::Id v) {
  const Shape qs = g.shape(q), ks = g.shape(k), vs = g.shape(v);
  if (qs.c != ks.c || ks != vs || qs.n != ks.n) {
    throw ConfigError("linear_cross_attention: q " + qs.str() + ", k " + ks.str() + ", v " +
                      vs.str() + " do not share channels");
  }
  const auto q_hat = g.softmax_channels(q);  // each pixel's channel vector sums to 1
  const auto k_hat = g.softmax_spatial(k);   // each channel's spatial map sums to 1
  const auto context = g.bmm(k_hat, v, false, true);   // (d, d)
  const auto out = g.bmm(context, q_hat, true, false);  // (d, hq*wq)
  return g.reshape(out, qs);
}

template <typename T>
typename Graph<T>::Id wavelet_modulate(nn::ParamBinder<T>& p, const std::string& prefix,
                                       typename Graph<T>::Id dec_in, typename Graph<T>::Id skip,
                                       typename Graph<T>::Id bands, WaveletInjection mode) {
  auto& g = p.graph();
  const Shape ds = g.shape(dec_in), ss = g.shape(skip), bs = g.shape(bands);
  if (ds.n != ss.n || ds.h != ss.h || ds.w != ss.w) {
    throw ConfigError(prefix + ": decoder input " + ds.str() + " does not match skip " + ss.str());
  }
  auto kv_src = bands;
  if (bs.h > ss.h) {
    if (bs.h % ss.h != 0 || bs.w % ss.w != 0 || bs.h / ss.h != bs.w / ss.w) {
      throw ConfigError(prefix + ": band grid " + bs.str() + " cannot be pooled to " + ss.str());
    }
    kv_src = g.avg_pool(bands, bs.h / ss.h);
  }
  const auto q = g.conv2d(skip, p(prefix + ".q.w"), p(prefix + ".q.b"));
  const auto kv = g.conv2d(kv_src, p(prefix + ".kv.w"), p(prefix + ".kv.b"));
  if (g.shape(kv).c != 2 * ss.c) {
    throw ConfigError(prefix + ": kv projection emits " + std::to_string(g.shape(kv).c) +
                      " channels, expected " + std::to_string(2 * ss.c));
  }
  const auto k = g.slice_channels(kv, 0, ss.c);
  const auto v = g.slice_channels(kv, ss.c, ss.c);
  const auto o = linear_cross_attention(g, q, k, v);
  if (mode == WaveletInjection::add) {
    const std::array parts{dec_in, g.add(skip, o)};
    return g.concat_channels(parts);
  }
  const std::array parts{dec_in, skip, o};
  return g.concat_channels(parts);
}

template <typename T>
typename Graph<T>::Id image_node(Graph<T>& g, const ImageTensor& t) {
  return g.constant(Shape{1, t.bands(), t.height(), t.width()},
                    std::vector<T>(t.storage().begin(), t.storage().end()));
}

FeatureMap node_image(const Graph<float>& g, Graph<float>::Id id) {
  const Shape s = g.shape(id);
  if (s.n != 1) throw InvalidArgument("node_image: expected a single sample, got " + s.str());
  return FeatureMap(s.c, s.h, s.w, g.value(id));
}

FeatureMap style_modulate(const FeatureMap& f, const ConditionBundle& cond,
                          const nn::ParamStore<float>& params, const std::string& prefix) {
  Graph<float> g(false);
  nn::ParamBinder<float> p(g, params, false);
  const std::array parts{image_node(g, cond.pan), image_node(g, cond.lrms_up)};
  const auto out = style_modulate<float>(p, prefix, image_node(g, f), g.concat_channels(parts));
  return node_image(g, out);
}

FeatureMap linear_cross_attention(const AttentionOperands& ops) {
  Graph<float> g(false);
  const auto out = linear_cross_attention<float>(g, image_node(g, ops.q), image_node(g, ops.k),
                                                 image_node(g, ops.v));
  return node_image(g, out);
}

FeatureMap wavelet_modulate(const FeatureMap& dec_in, const FeatureMap& skip,
                            const ConditionBundle& cond, const nn::ParamStore<float>& params,
                            const std::string& prefix, WaveletInjection mode) {
  Graph<float> g(false);
  nn::ParamBinder<float> p(g, params, false);
  const auto out = wavelet_modulate<float>(p, prefix, image_node(g, dec_in), image_node(g, skip),
                                           image_node(g, cond.bands), mode);
  return node_image(g, out);
}

#define PANDIFF_INSTANTIATE(T)                                                                        \
  template Graph<T>::Id style_modulate<T>(nn::ParamBinder<T>&, const std::string&, Graph<T>::Id,  \
                                          Graph<T>::Id);                                           \
  template Graph<T>::Id linear_cross_attention<T>(Graph<T>&, Graph<T>::Id, Graph<T>::Id,          \
                                                  Graph<T>::Id);                                   \
  template Graph<T>::Id wavelet_modulate<T>(nn::ParamBinder<T>&, const std::string&, Graph<T>::Id, \
                                            Graph<T>::Id, Graph<T>::Id, WaveletInjection);         \
  template Graph<T>::Id image_node<T>(Graph<T>&, const ImageTensor&);

PANDIFF_INSTANTIATE(float)
PANDIFF_INSTANTIATE(double)
#undef PANDIFF_INSTANTIATE

}  // namespace pandiff
