#pragma once

#include "pandiff/image_tensor.hpp"

namespace pandiff {

// Single-level orthonormal Haar (DB1) subbands. For each 2x2 block
// [[a, b], [c, d]] (b to the right of a, c below a):
//   LL = (a + b + c + d) / 2   lowpass along x and y
//   LH = (a + b - c - d) / 2   lowpass along x, highpass along y
//   HL = (a - b + c - d) / 2   highpass along x, lowpass along y
//   HH = (a - b - c + d) / 2   highpass along both
struct WaveletBands {
  ImageTensor ll, lh, hl, hh;
};

WaveletBands dwt_db1(const ImageTensor& x);
ImageTensor idwt_db1(const WaveletBands& b);

// Decoder conditioning stack [LL(lrms_up), LH(pan), HL(pan), HH(pan)] with
// C + 3 channels at half resolution.
ImageTensor wavelet_condition_stack(const ImageTensor& lrms_up, const ImageTensor& pan);

}  // namespace pandiff
