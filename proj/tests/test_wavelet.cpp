#include <doctest.h>

#include <cmath>

#include "pandiff/error.hpp"
#include "pandiff/wavelet.hpp"
#include "support.hpp"

using namespace pandiff;

TEST_CASE("haar subbands of a single 2x2 block") {
  // [[a, b], [c, d]] = [[1, 2], [3, 4]]
  const ImageTensor x(1, 2, 2, std::vector<float>{1, 2, 3, 4});
  const WaveletBands w = dwt_db1(x);
  CHECK(w.ll.at(0, 0, 0) == doctest::Approx(5.0));   // (1+2+3+4)/2
  CHECK(w.lh.at(0, 0, 0) == doctest::Approx(-2.0));  // (1+2-3-4)/2
  CHECK(w.hl.at(0, 0, 0) == doctest::Approx(-1.0));  // (1-2+3-4)/2
  CHECK(w.hh.at(0, 0, 0) == doctest::Approx(0.0));   // (1-2-3+4)/2
}

TEST_CASE("perfect reconstruction and energy preservation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ImageTensor x = testing::normal_tensor(3, 8, 12, seed);
    const WaveletBands w = dwt_db1(x);
    CHECK(w.ll.height() == 4);
    CHECK(w.ll.width() == 6);
    CHECK(testing::max_abs_diff(idwt_db1(w), x) < 1e-5);
    double ex = 0.0, ew = 0.0;
    for (float v : x.data()) ex += v * v;
    for (const ImageTensor* b : {&w.ll, &w.lh, &w.hl, &w.hh})
      for (float v : b->data()) ew += v * v;
    CHECK(ew == doctest::Approx(ex).epsilon(1e-5));
  }
}

TEST_CASE("constant image has no detail") {
  const WaveletBands w = dwt_db1(ImageTensor(2, 6, 6, 0.3f));
  for (const ImageTensor* b : {&w.lh, &w.hl, &w.hh})
    for (float v : b->data()) CHECK(v == 0.0f);
  for (float v : w.ll.data()) CHECK(v == doctest::Approx(0.6));
}

TEST_CASE("vertical edge lands in HL and horizontal edge in LH") {
  // Columns alternate 0, 1: every block is [[0,1],[0,1]] -> HL = -1.
  ImageTensor cols(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) cols.at(0, y, x) = static_cast<float>(x % 2);
  const WaveletBands a = dwt_db1(cols);
  CHECK(a.hl.at(0, 0, 0) == doctest::Approx(-1.0));
  CHECK(a.lh.at(0, 0, 0) == doctest::Approx(0.0));
  ImageTensor rows(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) rows.at(0, y, x) = static_cast<float>(y % 2);
  const WaveletBands b = dwt_db1(rows);
  CHECK(b.lh.at(0, 0, 0) == doctest::Approx(-1.0));
  CHECK(b.hl.at(0, 0, 0) == doctest::Approx(0.0));
}

TEST_CASE("odd sizes are rejected") {
  CHECK_THROWS_AS(dwt_db1(ImageTensor(1, 3, 4)), InvalidArgument);
  CHECK_THROWS_AS(dwt_db1(ImageTensor(1, 4, 5)), InvalidArgument);
}

TEST_CASE("condition stack layout") {
  const ImageTensor lr = testing::random_tensor(4, 8, 8, 1);
  const ImageTensor pan = testing::random_tensor(1, 8, 8, 2);
  const ImageTensor s = wavelet_condition_stack(lr, pan);
  CHECK(s.bands() == 7);
  CHECK(s.height() == 4);
  const WaveletBands wl = dwt_db1(lr), wp = dwt_db1(pan);
  CHECK(slice_bands(s, 0, 4) == wl.ll);
  CHECK(slice_bands(s, 4, 1) == wp.lh);
  CHECK(slice_bands(s, 5, 1) == wp.hl);
  CHECK(slice_bands(s, 6, 1) == wp.hh);
  CHECK_THROWS_AS(wavelet_condition_stack(lr, ImageTensor(1, 4, 4)), InvalidArgument);
}
