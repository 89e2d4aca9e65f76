#include "pandiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "pandiff/error.hpp"

namespace pandiff {

void MetricConfig::validate() const {
  if (scale_ratio < 1) throw ConfigError("metrics: scale_ratio must be >= 1");
  if (uiqi_window < 2) throw ConfigError("metrics: uiqi_window must be >= 2");
  if (!(qnr_alpha > 0.0) || !(qnr_beta > 0.0)) throw ConfigError("metrics: qnr exponents must be > 0");
}

namespace {

double band_mse(const ImageTensor& x, const ImageTensor& y, int c) {
  const auto a = x.band(c), b = y.band(c);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / a.size();
}

double band_mean(std::span<const float> a) {
  double acc = 0.0;
  for (float v : a) acc += v;
  return acc / a.size();
}

}  // namespace

double sam(const ImageTensor& x, const ImageTensor& y, bool degrees) {
  require_same_dims(x, y, "sam");
  if (x.bands() < 2) throw InvalidArgument("sam: needs at least 2 bands");
  const int C = x.bands();
  const std::size_t P = x.plane_size();
  double total = 0.0;
  std::size_t used = 0;
  std::vector<double> u(C), v(C);
  for (std::size_t p = 0; p < P; ++p) {
    double nu = 0.0, nv = 0.0;
    for (int c = 0; c < C; ++c) {
      u[c] = x.band(c)[p];
      v[c] = y.band(c)[p];
      nu += u[c] * u[c];
      nv += v[c] * v[c];
    }
    if (nu == 0.0 || nv == 0.0) continue;
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    // Angle from the chord lengths between unit vectors; exact 0 for x == y.
    double dn = 0.0, sn = 0.0;
    for (int c = 0; c < C; ++c) {
      const double a = u[c] / nu, b = v[c] / nv;
      dn += (a - b) * (a - b);
      sn += (a + b) * (a + b);
    }
    total += 2.0 * std::atan2(std::sqrt(dn), std::sqrt(sn));
    ++used;
  }
  if (used == 0) throw UndefinedMetric("sam: every pixel has a zero spectral vector");
  const double mean = total / used;
  return degrees ? mean * 180.0 / std::numbers::pi : mean;
}

double ergas(const ImageTensor& x, const ImageTensor& ref, int scale_ratio) {
  require_same_dims(x, ref, "ergas");
  if (scale_ratio < 1) throw InvalidArgument("ergas: scale ratio must be >= 1");
  double acc = 0.0;
  for (int c = 0; c < x.bands(); ++c) {
    const double mu = band_mean(ref.band(c));
    if (mu == 0.0) throw UndefinedMetric("ergas: reference band " + std::to_string(c) + " has zero mean");
    acc += band_mse(x, ref, c) / (mu * mu);
  }
  return 100.0 / scale_ratio * std::sqrt(acc / x.bands());
}

double psnr(const ImageTensor& x, const ImageTensor& ref) {
  require_same_dims(x, ref, "psnr");
  double acc = 0.0;
  for (int c = 0; c < x.bands(); ++c) {
    const double mse = band_mse(x, ref, c);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    const auto b = ref.band(c);
    const double peak = *std::max_element(b.begin(), b.end());
    acc += 20.0 * std::log10(peak / std::sqrt(mse));
  }
  return acc / x.bands();
}

double ssim(const ImageTensor& x, const ImageTensor& ref) {
  require_same_dims(x, ref, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  if (x.height() < kWin || x.width() < kWin) throw ConfigError("ssim: image smaller than the 11x11 window");
  std::array<double, kWin> g{};
  double gs = 0.0;
  for (int i = 0; i < kWin; ++i) gs += (g[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (kSigma * kSigma)));
  for (double& v : g) v /= gs;
  const ValueRange r = ref.range_hint();
  const double span = r.hi - r.lo;
  if (!(span > 0.0)) throw InvalidArgument("ssim: empty reference range");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int H = x.height(), W = x.width(), h = H - kWin + 1, w = W - kWin + 1;
  // Separable Gaussian filter, valid region only.
  auto filter = [&](const std::vector<double>& in) {
    std::vector<double> tmp(static_cast<std::size_t>(H) * w), out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < H; ++y)
      for (int j = 0; j < w; ++j) {
        double a = 0.0;
        for (int k = 0; k < kWin; ++k) a += g[k] * in[static_cast<std::size_t>(y) * W + j + k];
        tmp[static_cast<std::size_t>(y) * w + j] = a;
      }
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double a = 0.0;
        for (int k = 0; k < kWin; ++k) a += g[k] * tmp[static_cast<std::size_t>(i + k) * w + j];
        out[static_cast<std::size_t>(i) * w + j] = a;
      }
    return out;
  };
  double total = 0.0;
  const std::size_t P = x.plane_size();
  for (int c = 0; c < x.bands(); ++c) {
    std::vector<double> a(P), b(P), aa(P), bb(P), ab(P);
    for (std::size_t i = 0; i < P; ++i) {
      a[i] = (x.band(c)[i] - r.lo) / span;
      b[i] = (ref.band(c)[i] - r.lo) / span;
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto ma = filter(a), mb = filter(b), saa = filter(aa), sbb = filter(bb), sab = filter(ab);
    double acc = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
      acc += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    total += acc / ma.size();
  }
  return total / x.bands();
}

namespace {

std::vector<double> laplacian(std::span<const float> p, int H, int W) {
  auto at = [&](int y, int x) {
    y = std::clamp(y, 0, H - 1);
    x = std::clamp(x, 0, W - 1);
    return static_cast<double>(p[static_cast<std::size_t>(y) * W + x]);
  };
  std::vector<double> out(p.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) s += at(y + dy, x + dx);
      out[static_cast<std::size_t>(y) * W + x] = 9.0 * at(y, x) - s;
    }
  return out;
}

}  // namespace

double scc(const ImageTensor& x, const ImageTensor& ref, int* skipped) {
  require_same_dims(x, ref, "scc");
  double total = 0.0;
  int used = 0, skip = 0;
  for (int c = 0; c < x.bands(); ++c) {
    const auto a = laplacian(x.band(c), x.height(), x.width());
    const auto b = laplacian(ref.band(c), x.height(), x.width());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= a.size();
    mb /= b.size();
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
      ++skip;
      continue;
    }
    total += sab / std::sqrt(saa * sbb);
    ++used;
  }
  if (skipped) *skipped = skip;
  if (used == 0) throw UndefinedMetric("scc: every band has a zero-variance high-pass");
  return total / used;
}

namespace {

template <typename GA, typename GB>
double uiqi_impl(std::size_t n, GA a, GB b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a(i);
    mb += b(i);
  }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a(i) - ma, db = b(i) - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= n;
  vb /= n;
  cov /= n;
  const double vs = va + vb, ms = ma * ma + mb * mb;
  // Degenerate windows keep whichever factor is defined.
  if (vs == 0.0 && ms == 0.0) return 1.0;
  if (vs == 0.0) return 2.0 * ma * mb / ms;
  if (ms == 0.0) return 2.0 * cov / vs;
  return 4.0 * cov * ma * mb / (vs * ms);
}

std::vector<int> tile_starts(int n, int window) {
  std::vector<int> s;
  const int step = std::max(1, window / 2);
  for (int p = 0; p + window <= n; p += step) s.push_back(p);
  if (s.empty() || s.back() + window < n) s.push_back(n - window);
  return s;
}

}  // namespace

double uiqi(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("uiqi: planes must be non-empty and equal-sized");
  auto ga = [&](std::size_t i) { return static_cast<double>(a[i]); };
  auto gb = [&](std::size_t i) { return static_cast<double>(b[i]); };
  return uiqi_impl(a.size(), ga, gb);
}

double uiqi_windowed(const ImageTensor& a, int band_a, const ImageTensor& b, int band_b, int window) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw InvalidArgument("uiqi: grids differ: " + a.dims_string() + " vs " + b.dims_string());
  }
  if (window < 2 || window > a.height() || window > a.width()) {
    throw ConfigError("uiqi: window " + std::to_string(window) + " does not fit " + a.dims_string());
  }
  const auto pa = a.band(band_a), pb = b.band(band_b);
  const int W = a.width();
  double total = 0.0;
  int count = 0;
  for (int y0 : tile_starts(a.height(), window))
    for (int x0 : tile_starts(W, window)) {
      auto idx = [&](std::size_t i) {
        return static_cast<std::size_t>(y0 + static_cast<int>(i) / window) * W + x0 + static_cast<int>(i) % window;
      };
      auto ga = [&](std::size_t i) { return static_cast<double>(pa[idx(i)]); };
      auto gb = [&](std::size_t i) { return static_cast<double>(pb[idx(i)]); };
      total += uiqi_impl(static_cast<std::size_t>(window) * window, ga, gb);
      ++count;
    }
  return total / count;
}

double q_avg(const ImageTensor& x, const ImageTensor& ref, int window) {
  require_same_dims(x, ref, "q_avg");
  double total = 0.0;
  for (int c = 0; c < x.bands(); ++c) total += uiqi_windowed(x, c, ref, c, window);
  return total / x.bands();
}

namespace {

int coarse_window(int window, int ratio) { return std::max(2, window / ratio); }

void check_grids(const ImageTensor& fused, const ImageTensor& ms, int ratio, const char* what) {
  if (ratio < 1) throw InvalidArgument(std::string(what) + ": ratio must be >= 1");
  if (fused.bands() != ms.bands() || fused.height() != ratio * ms.height() || fused.width() != ratio * ms.width()) {
    throw InvalidArgument(std::string(what) + ": fused " + fused.dims_string() + " is not " +
                          std::to_string(ratio) + "x ms " + ms.dims_string());
  }
}

}  // namespace

double d_lambda(const ImageTensor& fused, const ImageTensor& ms, int window, int ratio) {
  check_grids(fused, ms, ratio, "d_lambda");
  const int C = fused.bands();
  if (C < 2) throw InvalidArgument("d_lambda: needs at least 2 bands");
  const int cw = coarse_window(window, ratio);
  double total = 0.0;
  int pairs = 0;
  for (int i = 0; i < C; ++i)
    for (int j = i + 1; j < C; ++j) {
      total += std::abs(uiqi_windowed(fused, i, fused, j, window) - uiqi_windowed(ms, i, ms, j, cw));
      ++pairs;
    }
  return std::min(1.0, total / pairs);
}

double d_s(const ImageTensor& fused, const ImageTensor& ms, const ImageTensor& pan, int window, int ratio) {
  check_grids(fused, ms, ratio, "d_s");
  if (pan.bands() != 1 || pan.height() != fused.height() || pan.width() != fused.width()) {
    throw InvalidArgument("d_s: pan " + pan.dims_string() + " does not match fused " + fused.dims_string());
  }
  ImageTensor pan_lr(1, ms.height(), ms.width());
  for (int y = 0; y < ms.height(); ++y)
    for (int x = 0; x < ms.width(); ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < ratio; ++dy)
        for (int dx = 0; dx < ratio; ++dx) acc += pan.at(0, y * ratio + dy, x * ratio + dx);
      pan_lr.at(0, y, x) = static_cast<float>(acc / (ratio * ratio));
    }
  const int cw = coarse_window(window, ratio);
  double total = 0.0;
  for (int c = 0; c < fused.bands(); ++c) {
    total += std::abs(uiqi_windowed(fused, c, pan, 0, window) - uiqi_windowed(ms, c, pan_lr, 0, cw));
  }
  return std::min(1.0, total / fused.bands());
}

double qnr(double d_lambda, double d_s, double alpha, double beta) {
  const double a = std::clamp(1.0 - d_lambda, 0.0, 1.0), b = std::clamp(1.0 - d_s, 0.0, 1.0);
  return std::pow(a, alpha) * std::pow(b, beta);
}

MetricValues evaluate(const FusionSample& s, const ImageTensor& fused, const MetricConfig& cfg) {
  cfg.validate();
  require_same_dims(fused, s.lrms_up, "evaluate");
  MetricValues m;
  if (s.gt) {
    const ImageTensor& gt = *s.gt;
    m.sam = sam(fused, gt, cfg.degrees);
    m.ergas = ergas(fused, gt, cfg.scale_ratio);
    m.psnr = psnr(fused, gt);
    m.ssim = ssim(fused, gt);
    m.scc = scc(fused, gt);
    m.q_avg = q_avg(fused, gt, cfg.uiqi_window);
  }
  m.d_lambda = d_lambda(fused, s.ms, cfg.uiqi_window, cfg.scale_ratio);
  m.d_s = d_s(fused, s.ms, s.pan, cfg.uiqi_window, cfg.scale_ratio);
  m.qnr = qnr(*m.d_lambda, *m.d_s, cfg.qnr_alpha, cfg.qnr_beta);
  return m;
}

namespace {

using Field = std::optional<double> MetricValues::*;
struct Named {
  const char* name;
  Field field;
};
constexpr Named kFields[] = {
    {"sam", &MetricValues::sam},           {"ergas", &MetricValues::ergas}, {"psnr", &MetricValues::psnr},
    {"ssim", &MetricValues::ssim},         {"scc", &MetricValues::scc},     {"q_avg", &MetricValues::q_avg},
    {"d_lambda", &MetricValues::d_lambda}, {"d_s", &MetricValues::d_s},     {"qnr", &MetricValues::qnr},
};

nlohmann::json values_json(const MetricValues& v) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : kFields) {
    const auto& o = v.*(f.field);
    if (!o) continue;
    if (std::isinf(*o)) j[f.name] = *o > 0 ? "inf" : "-inf";
    else j[f.name] = *o;
  }
  return j;
}

}  // namespace

MetricReport summarize(std::string method, std::vector<ImageMetrics> images) {
  MetricReport r{std::move(method), {}, std::move(images)};
  if (r.images.empty()) return r;
  for (const auto& f : kFields) {
    double acc = 0.0;
    bool all = true;
    for (const auto& im : r.images) {
      const auto& o = im.values.*(f.field);
      if (!o) {
        all = false;
        break;
      }
      acc += *o;
    }
    if (all) r.mean.*(f.field) = acc / r.images.size();
  }
  return r;
}

nlohmann::json report_to_json(std::span<const MetricReport> rows, const MetricConfig& cfg) {
  nlohmann::json out;
  out["scale_ratio"] = cfg.scale_ratio;
  out["sam_units"] = cfg.degrees ? "degrees" : "radians";
  out["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row;
    row["method"] = r.method;
    row["mean"] = values_json(r.mean);
    row["images"] = nlohmann::json::array();
    for (const auto& im : r.images) {
      nlohmann::json e = values_json(im.values);
      e["name"] = im.name;
      row["images"].push_back(std::move(e));
    }
    out["rows"].push_back(std::move(row));
  }
  return out;
}

std::string report_table(std::span<const MetricReport> rows) {
  std::size_t mw = 6;
  for (const auto& r : rows) mw = std::max(mw, r.method.size());
  std::ostringstream os;
  char buf[64];
  os << std::string(mw, ' ').replace(0, 6, "method");
  for (const auto& f : kFields) {
    std::snprintf(buf, sizeof buf, " %9s", f.name);
    os << buf;
  }
  os << '\n';
  for (const auto& r : rows) {
    os << r.method << std::string(mw - r.method.size(), ' ');
    for (const auto& f : kFields) {
      const auto& o = r.mean.*(f.field);
      if (!o) std::snprintf(buf, sizeof buf, " %9s", "-");
      else if (std::isinf(*o)) std::snprintf(buf, sizeof buf, " %9s", *o > 0 ? "inf" : "-inf");
      else std::snprintf(buf, sizeof buf, " %9.4f", *o);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pandiff
