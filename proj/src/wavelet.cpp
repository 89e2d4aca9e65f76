#include "pandiff/wavelet.hpp"

#include <array>

#include "pandiff/error.hpp"

namespace pandiff {

WaveletBands dwt_db1(const ImageTensor& x) {
  if (x.height() % 2 != 0 || x.width() % 2 != 0) {
    throw InvalidArgument("dwt_db1: spatial dims must be even, got " + x.dims_string());
  }
  const int c = x.bands(), h = x.height() / 2, w = x.width() / 2;
  WaveletBands b{ImageTensor(c, h, w, 0.0f, x.range_hint()), ImageTensor(c, h, w, 0.0f, x.range_hint()),
                 ImageTensor(c, h, w, 0.0f, x.range_hint()), ImageTensor(c, h, w, 0.0f, x.range_hint())};
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double a = x.at(ch, 2 * i, 2 * j), bb = x.at(ch, 2 * i, 2 * j + 1);
        const double cc = x.at(ch, 2 * i + 1, 2 * j), d = x.at(ch, 2 * i + 1, 2 * j + 1);
        b.ll.at(ch, i, j) = static_cast<float>((a + bb + cc + d) * 0.5);
        b.lh.at(ch, i, j) = static_cast<float>((a + bb - cc - d) * 0.5);
        b.hl.at(ch, i, j) = static_cast<float>((a - bb + cc - d) * 0.5);
        b.hh.at(ch, i, j) = static_cast<float>((a - bb - cc + d) * 0.5);
      }
    }
  }
  return b;
}

ImageTensor idwt_db1(const WaveletBands& b) {
  if (!b.ll.same_dims(b.lh) || !b.ll.same_dims(b.hl) || !b.ll.same_dims(b.hh)) {
    throw InvalidArgument("idwt_db1: subband dims differ");
  }
  const int c = b.ll.bands(), h = b.ll.height(), w = b.ll.width();
  ImageTensor x(c, 2 * h, 2 * w, 0.0f, b.ll.range_hint());
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double ll = b.ll.at(ch, i, j), lh = b.lh.at(ch, i, j);
        const double hl = b.hl.at(ch, i, j), hh = b.hh.at(ch, i, j);
        x.at(ch, 2 * i, 2 * j) = static_cast<float>((ll + lh + hl + hh) * 0.5);
        x.at(ch, 2 * i, 2 * j + 1) = static_cast<float>((ll + lh - hl - hh) * 0.5);
        x.at(ch, 2 * i + 1, 2 * j) = static_cast<float>((ll - lh + hl - hh) * 0.5);
        x.at(ch, 2 * i + 1, 2 * j + 1) = static_cast<float>((ll - lh - hl + hh) * 0.5);
      }
    }
  }
  return x;
}

ImageTensor wavelet_condition_stack(const ImageTensor& lrms_up, const ImageTensor& pan) {
  if (pan.bands() != 1) throw InvalidArgument("wavelet_condition_stack: pan must have 1 band");
  if (pan.height() != lrms_up.height() || pan.width() != lrms_up.width()) {
    throw InvalidArgument("wavelet_condition_stack: pan " + pan.dims_string() + " vs lrms " +
                          lrms_up.dims_string());
  }
  auto m = dwt_db1(lrms_up);
  auto p = dwt_db1(pan);
  const std::array<ImageTensor, 4> parts{std::move(m.ll), std::move(p.lh), std::move(p.hl),
                                         std::move(p.hh)};
  return concat_bands(parts);
}

}  // namespace pandiff
