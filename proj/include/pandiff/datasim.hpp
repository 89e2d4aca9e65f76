#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pandiff/fusion_sample.hpp"
#include "pandiff/image_tensor.hpp"
#include "pandiff/tensor_io.hpp"

namespace pandiff {

// Gaussian whose frequency response equals `nyquist_gain` at the Nyquist
// frequency of a grid `ratio` times coarser: sigma = ratio * sqrt(-2 ln g) / pi.
double mtf_sigma(int ratio, double nyquist_gain);
// Normalized 1-D taps of length 10 * ratio + 1.
std::vector<double> mtf_kernel(int ratio, double nyquist_gain);

// Separable MTF blur with symmetric boundary extension, then keeps every
// ratio-th sample starting at index 0.
ImageTensor mtf_downsample(const ImageTensor& x, int ratio, double nyquist_gain);

// Odd-phase half filter of the 23-tap interpolator: the odd output between
// x[i] and x[i+1] is sum_k h[k] * (x[i-k] + x[i+1+k]).
const std::array<double, 6>& poly23_half_taps();
// Full 23-tap kernel (center tap 1, zeros on even offsets).
std::array<double, 23> poly23_kernel();

// Cascade of x2 stages; ratio must be a power of two.
ImageTensor poly23_upsample(const ImageTensor& x, int ratio);

struct WaldConfig {
  int ratio = 4;
  double ms_gain = 0.3;
  double pan_gain = 0.15;
};

// hrms (C, H, W) and the original pan (1, rH, rW) are degraded by the ratio:
// pan and lrms_up land on (H, W), ms on (H/r, W/r), gt = hrms.
FusionSample wald_simulate(const ImageTensor& hrms, const ImageTensor& pan, const WaldConfig& cfg = {});

// Fine-grid crop of every member; y, x and size must be multiples of ratio.
FusionSample crop_sample(const FusionSample& s, int y, int x, int size, int ratio = 4);

struct SynthConfig {
  std::uint64_t seed = 7;
  int count = 8;
  int bands = 4;
  int patch = 64;
  Split split = Split::train;
  // Correlation length of band mixing weights across the spectrum, in bands.
  double spectral_smoothness = 1.5;
  // Amplitude of fine texture shared across bands.
  double detail_amplitude = 0.2;
  // Extra PAN-only detail.
  double pan_detail = 0.02;
  int objects = 30;
  WaldConfig wald{};
  int levels = 3;

  // Throws ConfigError.
  void validate() const;
};

// One simulated pair: HRMS (C, P, P) and the original PAN (1, 4P, 4P).
struct SceneImages {
  ImageTensor hrms;
  ImageTensor pan;
};
SceneImages synth_scene(const SynthConfig& cfg, int index);

// Writes <root>/<split>/<idx>_{pan,lrms,ms,gt}.ten and
// <root>/<split>/manifest.json, returning the manifest.
DatasetManifest synth_dataset(const SynthConfig& cfg, const std::filesystem::path& root);

// Mean over bands of the Shannon entropy (bits) of a 256-bin histogram over
// the band's min..max range. Constant bands contribute 0.
double entropy_bpp(const ImageTensor& x);

}  // namespace pandiff
