#include "pandiff/denoiser.hpp"

#include <array>
#include <cmath>
#include <numeric>

#include "pandiff/error.hpp"
#include "pandiff/tensor_io.hpp"

namespace pandiff {

using nn::Graph;
using nn::ParamDecl;
using nn::Shape;
using json = nlohmann::json;

namespace {

std::string key(const std::string& a, int i) { return a + "." + std::to_string(i); }

int groups_for(const DenoiserConfig& cfg, int ch) { return std::gcd(cfg.norm_groups, ch); }

int style_hidden(const DenoiserConfig& cfg) {
  return cfg.style_hidden > 0 ? cfg.style_hidden : cfg.base_channels;
}

void declare_linear(std::vector<ParamDecl>& out, const std::string& prefix, int in, int o) {
  nn::declare_conv(out, prefix, in, o, 1);
}

void declare_resblock(std::vector<ParamDecl>& out, const std::string& prefix, int in, int o,
                      int tdim) {
  nn::declare_group_norm(out, prefix + ".gn1", in);
  nn::declare_conv(out, prefix + ".conv1", in, o, 3);
  declare_linear(out, prefix + ".temb", tdim, o);
  nn::declare_group_norm(out, prefix + ".gn2", o);
  nn::declare_conv(out, prefix + ".conv2", o, o, 3);
  if (in != o) nn::declare_conv(out, prefix + ".skip", in, o, 1);
}

// Channel count entering decoder level `l`, before its first residual block.
int decoder_in_channels(const DenoiserConfig& cfg, int l) {
  const int dec_in = l == cfg.levels() - 1 ? cfg.channels(l) : cfg.channels(l + 1);
  const int skip = cfg.channels(l);
  if (!cfg.wavelet_modulation || cfg.wavelet_injection == WaveletInjection::add) return dec_in + skip;
  return dec_in + 2 * skip;
}

template <typename T>
typename Graph<T>::Id resblock(nn::ParamBinder<T>& p, const std::string& prefix,
                               typename Graph<T>::Id x, typename Graph<T>::Id temb_act, int out_ch,
                               const DenoiserConfig& cfg) {
  auto& g = p.graph();
  const int in_ch = g.shape(x).c;
  auto h = g.group_norm(x, p(prefix + ".gn1.g"), p(prefix + ".gn1.b"), groups_for(cfg, in_ch));
  h = g.silu(h);
  h = g.conv2d(h, p(prefix + ".conv1.w"), p(prefix + ".conv1.b"));
  h = g.add_channel_bias(h, g.linear(temb_act, p(prefix + ".temb.w"), p(prefix + ".temb.b")));
  h = g.group_norm(h, p(prefix + ".gn2.g"), p(prefix + ".gn2.b"), groups_for(cfg, out_ch));
  h = g.silu(h);
  h = g.conv2d(h, p(prefix + ".conv2.w"), p(prefix + ".conv2.b"));
  const auto skip = in_ch == out_ch ? x : g.conv2d(x, p(prefix + ".skip.w"), p(prefix + ".skip.b"));
  return g.add(h, skip);
}

template <typename T>
typename Graph<T>::Id self_attention(nn::ParamBinder<T>& p, const std::string& prefix,
                                     typename Graph<T>::Id x, const DenoiserConfig& cfg) {
  auto& g = p.graph();
  const Shape xs = g.shape(x);
  const int d = xs.c;
  auto h = g.group_norm(x, p(prefix + ".gn.g"), p(prefix + ".gn.b"), groups_for(cfg, d));
  const auto qkv = g.conv2d(h, p(prefix + ".qkv.w"), p(prefix + ".qkv.b"));
  const auto q = g.slice_channels(qkv, 0, d);
  const auto k = g.slice_channels(qkv, d, d);
  const auto v = g.slice_channels(qkv, 2 * d, d);
  auto scores = g.bmm(q, k, true, false);  // (hw, hw)
  scores = g.scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  const auto attn = g.softmax_spatial(scores);
  auto out = g.bmm(v, attn, false, true);  // (d, hw)
  out = g.reshape(out, xs);
  out = g.conv2d(out, p(prefix + ".proj.w"), p(prefix + ".proj.b"));
  return g.add(x, out);
}

template <typename T>
std::vector<T> sinusoidal_embedding(std::span<const int> steps, int dim) {
  const int half = dim / 2;
  std::vector<T> out(steps.size() * dim);
  for (std::size_t n = 0; n < steps.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = steps[n] * freq;
      out[n * dim + i] = static_cast<T>(std::sin(a));
      out[n * dim + half + i] = static_cast<T>(std::cos(a));
    }
  }
  return out;
}

}  // namespace

void DenoiserConfig::validate() const {
  if (levels() < 1) throw ConfigError("denoiser: at least one resolution level is required");
  if (in_bands < 1) throw ConfigError("denoiser: in_bands must be >= 1");
  if (base_channels < 2 || base_channels % 2 != 0) {
    throw ConfigError("denoiser: base_channels must be even and >= 2");
  }
  for (int m : channel_multipliers) {
    if (m < 1) throw ConfigError("denoiser: channel multipliers must be >= 1");
  }
  if (norm_groups < 1) throw ConfigError("denoiser: norm_groups must be >= 1");
  if (style_hidden < 0) throw ConfigError("denoiser: style_hidden must be >= 0");
}

json to_json(const DenoiserConfig& c) {
  return json{{"in_bands", c.in_bands},
              {"base_channels", c.base_channels},
              {"channel_multipliers", c.channel_multipliers},
              {"prediction_kind", to_string(c.prediction_kind)},
              {"norm_groups", c.norm_groups},
              {"style_hidden", c.style_hidden},
              {"style_modulation", c.style_modulation},
              {"wavelet_modulation", c.wavelet_modulation},
              {"wavelet_injection", c.wavelet_injection == WaveletInjection::add ? "add" : "concat"}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "in_bands") c.in_bands = v.get<int>();
    else if (k == "base_channels") c.base_channels = v.get<int>();
    else if (k == "channel_multipliers") c.channel_multipliers = v.get<std::vector<int>>();
    else if (k == "prediction_kind") c.prediction_kind = prediction_kind_from_string(v.get<std::string>());
    else if (k == "norm_groups") c.norm_groups = v.get<int>();
    else if (k == "style_hidden") c.style_hidden = v.get<int>();
    else if (k == "style_modulation") c.style_modulation = v.get<bool>();
    else if (k == "wavelet_modulation") c.wavelet_modulation = v.get<bool>();
    else if (k == "wavelet_injection") {
      const auto s = v.get<std::string>();
      if (s != "concat" && s != "add") throw ConfigError("unknown wavelet_injection '" + s + "'");
      c.wavelet_injection = s == "add" ? WaveletInjection::add : WaveletInjection::concat;
    } else {
      throw ConfigError("unknown model config key '" + k + "'");
    }
  }
  c.validate();
  return c;
}

std::vector<ParamDecl> declare_denoiser_params(const DenoiserConfig& cfg) {
  cfg.validate();
  std::vector<ParamDecl> out;
  const int b = cfg.base_channels, td = cfg.time_dim();
  declare_linear(out, "temb.fc1", b, td);
  declare_linear(out, "temb.fc2", td, td);
  nn::declare_conv(out, "stem", cfg.in_bands, b, 3);
  int ch = b;
  for (int l = 0; l < cfg.levels(); ++l) {
    const int o = cfg.channels(l);
    for (int i = 0; i < 2; ++i) {
      declare_resblock(out, key(key("enc", l) + ".res", i), ch, o, td);
      if (cfg.style_modulation) {
        declare_style_params(out, key(key("enc", l) + ".style", i), cfg.cond_bands(),
                             style_hidden(cfg), o);
      }
      ch = o;
    }
  }
  for (int j = 0; j < 2; ++j) {
    const std::string pre = key("mid.attn", j);
    nn::declare_group_norm(out, pre + ".gn", ch);
    nn::declare_conv(out, pre + ".qkv", ch, 3 * ch, 1);
    nn::declare_conv(out, pre + ".proj", ch, ch, 1);
  }
  for (int l = cfg.levels() - 1; l >= 0; --l) {
    const int o = cfg.channels(l);
    if (cfg.wavelet_modulation) {
      declare_wavelet_params(out, key("dec", l) + ".wave", cfg.band_stack_channels(), o);
    }
    int in = decoder_in_channels(cfg, l);
    for (int i = 0; i < 2; ++i) {
      declare_resblock(out, key(key("dec", l) + ".res", i), in, o, td);
      in = o;
    }
  }
  nn::declare_group_norm(out, "out.gn", cfg.channels(0));
  nn::declare_conv(out, "out.conv", cfg.channels(0), cfg.in_bands, 1);
  return out;
}

std::size_t count_params(const DenoiserConfig& cfg) {
  return nn::count_elements(declare_denoiser_params(cfg));
}

nn::ParamStore<float> init_denoiser_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  return nn::init_params(declare_denoiser_params(cfg), seed);
}

template <typename T>
void check_params(const DenoiserConfig& cfg, const nn::ParamStore<T>& params) {
  const auto decls = declare_denoiser_params(cfg);
  if (decls.size() != params.size()) {
    throw ConfigError("parameter set has " + std::to_string(params.size()) + " tensors, config expects " +
                      std::to_string(decls.size()));
  }
  for (const auto& d : decls) {
    const auto& p = params.at(d.key);
    if (!(p.shape == d.shape)) {
      throw ConfigError("parameter " + d.key + " has shape " + p.shape.str() + ", config expects " +
                        d.shape.str());
    }
  }
}

template <typename T>
typename Graph<T>::Id denoiser_graph(nn::ParamBinder<T>& p, const DenoiserConfig& cfg,
                                     const DenoiserInputs<T>& in) {
  auto& g = p.graph();
  const Shape xs = g.shape(in.x_t);
  if (xs.c != cfg.in_bands) {
    throw ConfigError("stem: input has " + std::to_string(xs.c) + " bands, config expects " +
                      std::to_string(cfg.in_bands));
  }
  if (xs.h % cfg.spatial_divisor() != 0 || xs.w % cfg.spatial_divisor() != 0) {
    throw ConfigError("stem: input " + xs.str() + " not divisible by " +
                      std::to_string(cfg.spatial_divisor()));
  }
  if (static_cast<int>(in.steps.size()) != xs.n) throw ConfigError("temb: one step per sample required");
  const Shape cs = g.shape(in.cond), bs = g.shape(in.bands);
  if (cs.c != cfg.cond_bands() || cs.h != xs.h || cs.w != xs.w || cs.n != xs.n) {
    throw ConfigError("enc: condition stack " + cs.str() + " does not match input " + xs.str());
  }
  if (bs.c != cfg.band_stack_channels() || 2 * bs.h != xs.h || 2 * bs.w != xs.w || bs.n != xs.n) {
    throw ConfigError("dec: band stack " + bs.str() + " does not match input " + xs.str());
  }

  const int b = cfg.base_channels;
  auto temb = g.constant(Shape{xs.n, b, 1, 1}, sinusoidal_embedding<T>(in.steps, b));
  temb = g.linear(temb, p("temb.fc1.w"), p("temb.fc1.b"));
  temb = g.silu(temb);
  temb = g.linear(temb, p("temb.fc2.w"), p("temb.fc2.b"));
  const auto temb_act = g.silu(temb);

  auto h = g.conv2d(in.x_t, p("stem.w"), p("stem.b"));
  std::vector<typename Graph<T>::Id> skips;
  for (int l = 0; l < cfg.levels(); ++l) {
    for (int i = 0; i < 2; ++i) {
      h = resblock(p, key(key("enc", l) + ".res", i), h, temb_act, cfg.channels(l), cfg);
      if (cfg.style_modulation) h = style_modulate(p, key(key("enc", l) + ".style", i), h, in.cond);
    }
    skips.push_back(h);
    if (l + 1 < cfg.levels()) h = g.avg_pool(h, 2);
  }
  for (int j = 0; j < 2; ++j) h = self_attention(p, key("mid.attn", j), h, cfg);
  for (int l = cfg.levels() - 1; l >= 0; --l) {
    if (cfg.wavelet_modulation) {
      h = wavelet_modulate(p, key("dec", l) + ".wave", h, skips[l], in.bands, cfg.wavelet_injection);
    } else {
      const std::array parts{h, skips[l]};
      h = g.concat_channels(parts);
    }
    for (int i = 0; i < 2; ++i) {
      h = resblock(p, key(key("dec", l) + ".res", i), h, temb_act, cfg.channels(l), cfg);
    }
    if (l > 0) h = g.upsample_nearest(h, 2);
  }
  h = g.group_norm(h, p("out.gn.g"), p("out.gn.b"), groups_for(cfg, cfg.channels(0)));
  h = g.silu(h);
  return g.conv2d(h, p("out.conv.w"), p("out.conv.b"));
}

template <typename T>
DenoiserInputs<T> make_denoiser_inputs(Graph<T>& g, std::span<const ImageTensor> x_t,
                                       std::span<const int> steps,
                                       std::span<const ConditionBundle* const> cond) {
  if (x_t.empty() || x_t.size() != steps.size() || x_t.size() != cond.size()) {
    throw InvalidArgument("make_denoiser_inputs: batch parts disagree in length");
  }
  const int n = static_cast<int>(x_t.size());
  const auto& x0 = x_t[0];
  const auto& c0 = *cond[0];
  std::vector<T> xv, cv, bv;
  for (int i = 0; i < n; ++i) {
    const auto& c = *cond[i];
    if (!x_t[i].same_dims(x0) || !c.lrms_up.same_dims(x0) || !c.pan.same_dims(c0.pan) ||
        !c.bands.same_dims(c0.bands)) {
      throw InvalidArgument("make_denoiser_inputs: sample " + std::to_string(i) +
                            " dims differ from sample 0");
    }
    xv.insert(xv.end(), x_t[i].storage().begin(), x_t[i].storage().end());
    cv.insert(cv.end(), c.pan.storage().begin(), c.pan.storage().end());
    cv.insert(cv.end(), c.lrms_up.storage().begin(), c.lrms_up.storage().end());
    bv.insert(bv.end(), c.bands.storage().begin(), c.bands.storage().end());
  }
  DenoiserInputs<T> in;
  in.x_t = g.constant(Shape{n, x0.bands(), x0.height(), x0.width()}, std::move(xv));
  in.cond = g.constant(Shape{n, x0.bands() + 1, x0.height(), x0.width()}, std::move(cv));
  in.bands = g.constant(Shape{n, c0.bands.bands(), c0.bands.height(), c0.bands.width()}, std::move(bv));
  in.steps.assign(steps.begin(), steps.end());
  return in;
}

Prediction forward(const ImageTensor& x_t, int t, const ConditionBundle& cond,
                   const nn::ParamStore<float>& params, const DenoiserConfig& cfg) {
  Graph<float> g(false);
  nn::ParamBinder<float> p(g, params, false);
  const std::array<const ConditionBundle*, 1> c{&cond};
  const std::array<int, 1> steps{t};
  const auto in = make_denoiser_inputs<float>(g, std::span(&x_t, 1), steps, c);
  const auto out = denoiser_graph(p, cfg, in);
  return {cfg.prediction_kind,
          ImageTensor(x_t.bands(), x_t.height(), x_t.width(), g.value(out), x_t.range_hint())};
}

json save_param_blobs(const nn::ParamStore<float>& params, const std::filesystem::path& dir,
                      const std::string& blob_prefix) {
  json index = json::object();
  int i = 0;
  for (const auto& [k, p] : params.all()) {
    const std::string blob = blob_prefix + std::to_string(i++) + ".ten";
    write_tensor(ImageTensor(1, 1, static_cast<int>(p.value.size()), p.value), dir / blob);
    index[k] = json{{"dtype", "f32"},
                    {"shape", {p.shape.n, p.shape.c, p.shape.h, p.shape.w}},
                    {"blob", blob}};
  }
  return index;
}

nn::ParamStore<float> load_param_blobs(const json& index, const std::filesystem::path& dir) {
  nn::ParamStore<float> out;
  for (const auto& [k, e] : index.items()) {
    if (e.at("dtype").get<std::string>() != "f32") throw ParseError("param " + k + ": unsupported dtype");
    const auto dims = e.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw ParseError("param " + k + ": shape must have 4 dims");
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    const auto t = read_tensor(dir / e.at("blob").get<std::string>());
    if (t.size() != s.numel()) throw ParseError("param " + k + ": blob size does not match shape");
    out.set(k, s, t.storage());
  }
  return out;
}

#define PANDIFF_INSTANTIATE(T)                                                                        \
  template void check_params<T>(const DenoiserConfig&, const nn::ParamStore<T>&);                  \
  template Graph<T>::Id denoiser_graph<T>(nn::ParamBinder<T>&, const DenoiserConfig&,              \
                                          const DenoiserInputs<T>&);                               \
  template DenoiserInputs<T> make_denoiser_inputs<T>(Graph<T>&, std::span<const ImageTensor>,      \
                                                     std::span<const int>,                         \
                                                     std::span<const ConditionBundle* const>);

PANDIFF_INSTANTIATE(float)
PANDIFF_INSTANTIATE(double)
#undef PANDIFF_INSTANTIATE

}  // namespace pandiff
