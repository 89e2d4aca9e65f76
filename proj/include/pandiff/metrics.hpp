#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pandiff/fusion_sample.hpp"
#include "pandiff/image_tensor.hpp"

namespace pandiff {

struct MetricConfig {
  int scale_ratio = 4;
  bool degrees = true;
  double qnr_alpha = 1.0;
  double qnr_beta = 1.0;
  int uiqi_window = 32;

  void validate() const;
};

// Mean spectral angle over pixels; pixels where either vector is zero are skipped.
double sam(const ImageTensor& x, const ImageTensor& y, bool degrees = true);
double ergas(const ImageTensor& x, const ImageTensor& ref, int scale_ratio = 4);
// Band-averaged; +infinity when x == ref.
double psnr(const ImageTensor& x, const ImageTensor& ref);
// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, bands scaled to
// [0, 1] by the reference range hint; mean over valid windows and bands.
double ssim(const ImageTensor& x, const ImageTensor& ref);
// Pearson correlation of 3x3 Laplacian high-passes, averaged over bands.
// Zero-variance bands are skipped and counted in `skipped`.
double scc(const ImageTensor& x, const ImageTensor& ref, int* skipped = nullptr);

// Universal image quality index of two planes.
double uiqi(std::span<const float> a, std::span<const float> b);
// Mean UIQI over window x window tiles stepped by window / 2 (the last tile
// is aligned to the border), for one band of each image.
double uiqi_windowed(const ImageTensor& a, int band_a, const ImageTensor& b, int band_b, int window);
double q_avg(const ImageTensor& x, const ImageTensor& ref, int window = 32);

// Inter-band UIQI discrepancy between fused (fine grid, `window`) and ms
// (coarse grid, window / ratio).
double d_lambda(const ImageTensor& fused, const ImageTensor& ms, int window, int ratio);
// Band-to-PAN UIQI discrepancy; the coarse PAN is the ratio x ratio block mean.
double d_s(const ImageTensor& fused, const ImageTensor& ms, const ImageTensor& pan, int window, int ratio);
double qnr(double d_lambda, double d_s, double alpha = 1.0, double beta = 1.0);

struct MetricValues {
  std::optional<double> sam, ergas, psnr, ssim, scc, q_avg;
  std::optional<double> d_lambda, d_s, qnr;
};

// Reference metrics when s.gt is set; non-reference metrics always.
MetricValues evaluate(const FusionSample& s, const ImageTensor& fused, const MetricConfig& cfg);

struct ImageMetrics {
  std::string name;
  MetricValues values;
};

struct MetricReport {
  std::string method;
  MetricValues mean;
  std::vector<ImageMetrics> images;
};

// Fills `mean` from the per-image values (a metric is averaged only when
// every image has it).
MetricReport summarize(std::string method, std::vector<ImageMetrics> images);

// {"scale_ratio", "rows": [{method, mean, images: [{name, ...}]}]}; an
// infinite PSNR is written as the string "inf".
nlohmann::json report_to_json(std::span<const MetricReport> rows, const MetricConfig& cfg);
std::string report_table(std::span<const MetricReport> rows);

}  // namespace pandiff
