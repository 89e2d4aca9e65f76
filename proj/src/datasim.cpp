#include "pandiff/datasim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "pandiff/error.hpp"

namespace pandiff {

namespace {

// Symmetric extension with the edge sample repeated: ... x1 x0 | x0 x1 ... x_{n-1} | x_{n-1} ...
int reflect(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

void require_ratio(int ratio, const char* what) {
  if (ratio < 1) throw InvalidArgument(std::string(what) + ": ratio must be >= 1");
}

}  // namespace

double mtf_sigma(int ratio, double nyquist_gain) {
  require_ratio(ratio, "mtf_sigma");
  if (!(nyquist_gain > 0.0 && nyquist_gain < 1.0)) {
    throw InvalidArgument("mtf_sigma: nyquist gain must lie in (0, 1)");
  }
  return ratio * std::sqrt(-2.0 * std::log(nyquist_gain)) / std::numbers::pi;
}

std::vector<double> mtf_kernel(int ratio, double nyquist_gain) {
  const double sigma = mtf_sigma(ratio, nyquist_gain);
  const int half = 5 * ratio;
  std::vector<double> k(2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    k[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + half];
  }
  for (double& v : k) v /= sum;
  return k;
}

ImageTensor mtf_downsample(const ImageTensor& x, int ratio, double nyquist_gain) {
  require_ratio(ratio, "mtf_downsample");
  if (x.height() % ratio != 0 || x.width() % ratio != 0) {
    throw InvalidArgument("mtf_downsample: " + x.dims_string() + " not divisible by " + std::to_string(ratio));
  }
  const std::vector<double> k = mtf_kernel(ratio, nyquist_gain);
  const int half = static_cast<int>(k.size() / 2);
  const int H = x.height(), W = x.width(), h = H / ratio, w = W / ratio;
  ImageTensor out(x.bands(), h, w, 0.0f, x.range_hint());
  std::vector<double> rows(static_cast<std::size_t>(H) * w);
  for (int c = 0; c < x.bands(); ++c) {
    // Horizontal pass at the kept columns only.
    for (int y = 0; y < H; ++y) {
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int d = -half; d <= half; ++d) acc += k[d + half] * x.at(c, y, reflect(j * ratio + d, W));
        rows[static_cast<std::size_t>(y) * w + j] = acc;
      }
    }
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int d = -half; d <= half; ++d) {
          acc += k[d + half] * rows[static_cast<std::size_t>(reflect(i * ratio + d, H)) * w + j];
        }
        out.at(c, i, j) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

const std::array<double, 6>& poly23_half_taps() {
  static const std::array<double, 6> taps = [] {
    std::array<double, 6> t{0.305334091185, -0.072698593239, 0.021809577942,
                            -0.005192756653, 0.000807762146, -0.000060081482};
    double sum = 0.0;
    for (double v : t) sum += v;
    // Each tap sees two samples, so the odd phase sums to 2 * sum(t).
    for (double& v : t) v /= 2.0 * sum;
    return t;
  }();
  return taps;
}

std::array<double, 23> poly23_kernel() {
  std::array<double, 23> k{};
  const auto& h = poly23_half_taps();
  k[11] = 1.0;
  for (int i = 0; i < 6; ++i) {
    k[11 + 2 * i + 1] = h[i];
    k[11 - 2 * i - 1] = h[i];
  }
  return k;
}

namespace {

// One x2 stage along a line: out[2i] = in[i], out[2i+1] from the 23-tap filter.
void upsample_line(const double* in, int n, std::ptrdiff_t in_stride, double* out, std::ptrdiff_t out_stride) {
  const auto& h = poly23_half_taps();
  for (int i = 0; i < n; ++i) {
    out[2 * i * out_stride] = in[i * in_stride];
    double acc = 0.0;
    for (int k = 0; k < 6; ++k) {
      acc += h[k] * (in[reflect(i - k, n) * in_stride] + in[reflect(i + 1 + k, n) * in_stride]);
    }
    out[(2 * i + 1) * out_stride] = acc;
  }
}

}  // namespace

ImageTensor poly23_upsample(const ImageTensor& x, int ratio) {
  if (ratio < 1 || (ratio & (ratio - 1)) != 0) {
    throw InvalidArgument("poly23_upsample: ratio must be a power of two");
  }
  if (x.empty()) throw InvalidArgument("poly23_upsample: empty input");
  int H = x.height(), W = x.width();
  std::vector<double> cur(x.data().begin(), x.data().end());
  for (int r = ratio; r > 1; r /= 2) {
    std::vector<double> wide(static_cast<std::size_t>(x.bands()) * H * 2 * W);
    for (int c = 0; c < x.bands(); ++c) {
      for (int y = 0; y < H; ++y) {
        upsample_line(&cur[(static_cast<std::size_t>(c) * H + y) * W], W, 1,
                      &wide[(static_cast<std::size_t>(c) * H + y) * 2 * W], 1);
      }
    }
    std::vector<double> tall(static_cast<std::size_t>(x.bands()) * 2 * H * 2 * W);
    for (int c = 0; c < x.bands(); ++c) {
      for (int col = 0; col < 2 * W; ++col) {
        upsample_line(&wide[static_cast<std::size_t>(c) * H * 2 * W + col], H, 2 * W,
                      &tall[static_cast<std::size_t>(c) * 2 * H * 2 * W + col], 2 * W);
      }
    }
    cur = std::move(tall);
    H *= 2;
    W *= 2;
  }
  std::vector<float> data(cur.begin(), cur.end());
  return ImageTensor(x.bands(), H, W, std::move(data), x.range_hint());
}

FusionSample wald_simulate(const ImageTensor& hrms, const ImageTensor& pan, const WaldConfig& cfg) {
  const int r = cfg.ratio;
  require_ratio(r, "wald_simulate");
  if (pan.bands() != 1) throw InvalidArgument("wald_simulate: pan must have one band, got " + pan.dims_string());
  if (pan.height() != r * hrms.height() || pan.width() != r * hrms.width()) {
    throw InvalidArgument("wald_simulate: pan " + pan.dims_string() + " must be " + std::to_string(r) +
                          "x the hrms grid " + hrms.dims_string());
  }
  FusionSample s;
  s.pan = mtf_downsample(pan, r, cfg.pan_gain);
  s.ms = mtf_downsample(hrms, r, cfg.ms_gain);
  s.lrms_up = poly23_upsample(s.ms, r);
  s.gt = hrms;
  s.pan.set_range_hint(hrms.range_hint());
  validate_sample(s, r);
  return s;
}

FusionSample crop_sample(const FusionSample& s, int y, int x, int size, int ratio) {
  validate_sample(s, ratio);
  if (y % ratio || x % ratio || size % ratio || size <= 0) {
    throw InvalidArgument("crop_sample: offsets and size must be positive multiples of the ratio");
  }
  if (y < 0 || x < 0 || y + size > s.pan.height() || x + size > s.pan.width()) {
    throw InvalidArgument("crop_sample: window outside " + s.pan.dims_string());
  }
  auto crop = [](const ImageTensor& t, int y0, int x0, int n) {
    ImageTensor out(t.bands(), n, n, 0.0f, t.range_hint());
    for (int c = 0; c < t.bands(); ++c)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out.at(c, i, j) = t.at(c, y0 + i, x0 + j);
    return out;
  };
  FusionSample out;
  out.pan = crop(s.pan, y, x, size);
  out.lrms_up = crop(s.lrms_up, y, x, size);
  out.ms = crop(s.ms, y / ratio, x / ratio, size / ratio);
  if (s.gt) out.gt = crop(*s.gt, y, x, size);
  return out;
}

void SynthConfig::validate() const {
  if (count < 1) throw ConfigError("synth: count must be >= 1");
  if (bands < 2) throw ConfigError("synth: bands must be >= 2");
  if (levels < 1) throw ConfigError("synth: levels must be >= 1");
  const int div = std::max(wald.ratio, 1 << (levels - 1));
  if (patch < wald.ratio || patch % wald.ratio != 0 || patch % div != 0 || patch % 2 != 0) {
    throw ConfigError("synth: patch " + std::to_string(patch) + " must be divisible by " +
                      std::to_string(wald.ratio) + ", 2 and " + std::to_string(1 << (levels - 1)));
  }
  if (!(spectral_smoothness > 0.0)) throw ConfigError("synth: spectral_smoothness must be > 0");
  if (!(detail_amplitude >= 0.0) || !(pan_detail >= 0.0)) throw ConfigError("synth: detail amplitudes must be >= 0");
  if (objects < 0) throw ConfigError("synth: objects must be >= 0");
}

namespace {

using Plane = std::vector<double>;

// Low-frequency field: a handful of random plane waves, roughly zero mean, unit scale.
Plane smooth_field(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Plane f(static_cast<std::size_t>(n) * n, 0.0);
  const int waves = 6;
  for (int k = 0; k < waves; ++k) {
    const double fx = (u(rng) * 2.0 - 1.0) * 3.0, fy = (u(rng) * 2.0 - 1.0) * 3.0;
    const double ph = u(rng) * 2.0 * std::numbers::pi;
    const double amp = 0.5 + u(rng);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        f[static_cast<std::size_t>(y) * n + x] +=
            amp * std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) / n + ph) / waves;
  }
  return f;
}

// Fine texture: white noise smoothed by a 3x3 box, unit-ish variance.
Plane texture_field(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Plane w(static_cast<std::size_t>(n) * n);
  for (double& v : w) v = g(rng);
  Plane f(w.size());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) acc += w[static_cast<std::size_t>(reflect(y + dy, n)) * n + reflect(x + dx, n)];
      f[static_cast<std::size_t>(y) * n + x] = acc / 3.0;
    }
  return f;
}

std::uint64_t scene_seed(const SynthConfig& cfg, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(cfg.split), static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

SceneImages synth_scene(const SynthConfig& cfg, int index) {
  cfg.validate();
  std::mt19937_64 rng(scene_seed(cfg, index));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const int C = cfg.bands, r = cfg.wald.ratio, n = cfg.patch * r;
  const std::size_t N = static_cast<std::size_t>(n) * n;

  // Band-correlated mixing of a few latent smooth fields (AR(1) across bands).
  const int latents = 3;
  std::vector<Plane> fields;
  for (int k = 0; k < latents; ++k) fields.push_back(smooth_field(n, rng));
  const double rho = std::exp(-1.0 / cfg.spectral_smoothness);
  std::vector<std::vector<double>> mix(C, std::vector<double>(latents));
  std::vector<double> base(C);
  for (int k = 0; k < latents; ++k) mix[0][k] = 0.15 * g(rng);
  base[0] = 0.3 + 0.3 * u(rng);
  for (int b = 1; b < C; ++b) {
    for (int k = 0; k < latents; ++k) mix[b][k] = rho * mix[b - 1][k] + std::sqrt(1 - rho * rho) * 0.15 * g(rng);
    base[b] = std::clamp(rho * base[b - 1] + std::sqrt(1 - rho * rho) * (0.3 + 0.3 * u(rng)), 0.15, 0.8);
  }
  std::vector<Plane> scene(C, Plane(N));
  for (int b = 0; b < C; ++b)
    for (std::size_t i = 0; i < N; ++i) {
      double v = base[b];
      for (int k = 0; k < latents; ++k) v += mix[b][k] * fields[k][i];
      scene[b][i] = v;
    }

  // Hard-edged objects with their own spectral signatures.
  for (int o = 0; o < cfg.objects; ++o) {
    const double cy = u(rng) * n, cx = u(rng) * n;
    const double ry = (0.03 + 0.15 * u(rng)) * n, rx = (0.03 + 0.15 * u(rng)) * n;
    const bool ellipse = u(rng) < 0.5;
    const double alpha = 0.6 + 0.4 * u(rng);
    std::vector<double> sig(C);
    sig[0] = 0.1 + 0.8 * u(rng);
    for (int b = 1; b < C; ++b) sig[b] = std::clamp(rho * sig[b - 1] + (1 - rho) * (0.1 + 0.8 * u(rng)), 0.05, 0.95);
    const int y0 = std::max(0, static_cast<int>(cy - ry)), y1 = std::min(n, static_cast<int>(cy + ry) + 1);
    const int x0 = std::max(0, static_cast<int>(cx - rx)), x1 = std::min(n, static_cast<int>(cx + rx) + 1);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        if (ellipse) {
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          if (dy * dy + dx * dx > 1.0) continue;
        }
        const std::size_t i = static_cast<std::size_t>(y) * n + x;
        for (int b = 0; b < C; ++b) scene[b][i] = (1 - alpha) * scene[b][i] + alpha * sig[b];
      }
  }

  // Fine texture shared by every band with a per-band gain.
  const Plane tex = texture_field(n, rng);
  for (int b = 0; b < C; ++b) {
    const double gain = cfg.detail_amplitude * (0.7 + 0.6 * u(rng));
    for (std::size_t i = 0; i < N; ++i) scene[b][i] = std::clamp(scene[b][i] + gain * tex[i], 0.02, 0.98);
  }

  SceneImages out;
  // The MS sensor sees the scene through its own MTF.
  ImageTensor fine(C, n, n);
  for (int b = 0; b < C; ++b)
    for (std::size_t i = 0; i < N; ++i) fine.band(b)[i] = static_cast<float>(scene[b][i]);
  out.hrms = mtf_downsample(fine, r, cfg.wald.ms_gain);

  std::vector<double> weight(C);
  double wsum = 0.0;
  for (double& w : weight) wsum += (w = 0.5 + u(rng));
  const Plane extra = texture_field(n, rng);
  out.pan = ImageTensor(1, n, n);
  for (std::size_t i = 0; i < N; ++i) {
    double v = 0.0;
    for (int b = 0; b < C; ++b) v += weight[b] * scene[b][i];
    v = v / wsum + cfg.pan_detail * extra[i];
    out.pan.data()[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

DatasetManifest synth_dataset(const SynthConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  const std::filesystem::path dir = root / to_string(cfg.split);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("synth: cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.split = cfg.split;
  m.scale_ratio = cfg.wald.ratio;
  m.root = dir;
  for (int i = 0; i < cfg.count; ++i) {
    const SceneImages scene = synth_scene(cfg, i);
    const FusionSample s = wald_simulate(scene.hrms, scene.pan, cfg.wald);
    const std::string stem = std::to_string(i);
    ManifestEntry e{stem + "_pan.ten", stem + "_lrms.ten", stem + "_ms.ten", stem + "_gt.ten"};
    write_tensor(s.pan, dir / e.pan);
    write_tensor(s.lrms_up, dir / e.lrms);
    write_tensor(s.ms, dir / e.ms);
    write_tensor(*s.gt, dir / *e.gt);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, dir / "manifest.json");
  return load_manifest(dir / "manifest.json");
}

double entropy_bpp(const ImageTensor& x) {
  if (x.empty()) throw InvalidArgument("entropy_bpp: empty tensor");
  double total = 0.0;
  for (int c = 0; c < x.bands(); ++c) {
    const auto band = x.band(c);
    const auto [lo_it, hi_it] = std::minmax_element(band.begin(), band.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw InvalidArgument("entropy_bpp: non-finite value");
    if (hi == lo) continue;
    std::array<std::size_t, 256> hist{};
    for (float v : band) {
      const int bin = std::min(255, static_cast<int>((v - lo) / (hi - lo) * 256.0));
      ++hist[bin];
    }
    double h = 0.0;
    for (std::size_t count : hist) {
      if (count == 0) continue;
      const double p = static_cast<double>(count) / band.size();
      h -= p * std::log2(p);
    }
    total += h;
  }
  return total / x.bands();
}

}  // namespace pandiff
