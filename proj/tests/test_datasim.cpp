#include <doctest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pandiff/datasim.hpp"
#include "pandiff/error.hpp"
#include "pandiff/metrics.hpp"
#include "pandiff/tensor_io.hpp"
#include "support.hpp"

using namespace pandiff;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

SynthConfig small_synth(int count = 2) {
  SynthConfig c;
  c.count = count;
  c.patch = 32;
  return c;
}

}  // namespace

TEST_CASE("mtf kernel is normalized and hits the nyquist gain") {
  for (double gain : {0.15, 0.3, 0.5}) {
    const auto k = mtf_kernel(4, gain);
    CHECK(k.size() == 41);
    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    // Frequency response at half the coarse sampling rate.
    std::complex<double> resp = 0.0;
    const int half = static_cast<int>(k.size() / 2);
    for (int i = -half; i <= half; ++i) resp += k[i + half] * std::polar(1.0, -2.0 * std::numbers::pi * i / 8.0);
    CHECK(std::abs(resp) == doctest::Approx(gain).epsilon(1e-3));
  }
  CHECK(mtf_sigma(4, 0.3) == doctest::Approx(4.0 * std::sqrt(-2.0 * std::log(0.3)) / std::numbers::pi));
  CHECK_THROWS_AS(mtf_kernel(4, 1.5), InvalidArgument);
  CHECK_THROWS_AS(mtf_kernel(4, 0.0), InvalidArgument);
}

TEST_CASE("mtf downsample shapes constants and impulses") {
  const ImageTensor c = mtf_downsample(ImageTensor(2, 256, 256, 0.37f), 4, 0.3);
  CHECK(c.height() == 64);
  CHECK(c.width() == 64);
  for (float v : c.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-6));

  // Impulse at a kept sample far from the border: the output grid samples
  // the separable kernel at multiples of 4.
  ImageTensor imp(1, 64, 64, 0.0f);
  imp.at(0, 32, 32) = 1.0f;
  const ImageTensor d = mtf_downsample(imp, 4, 0.3);
  const auto k = mtf_kernel(4, 0.3);
  const int half = static_cast<int>(k.size() / 2);
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx)
      CHECK(d.at(0, 8 + dy, 8 + dx) == doctest::Approx(k[half + 4 * dy] * k[half + 4 * dx]).epsilon(1e-5).scale(1e-6));
  CHECK_THROWS_AS(mtf_downsample(ImageTensor(1, 30, 32), 4, 0.3), InvalidArgument);
}

TEST_CASE("poly23 kernel taps") {
  const auto h = poly23_half_taps();
  double odd = 0.0;
  for (double v : h) odd += 2.0 * v;
  CHECK(odd == doctest::Approx(1.0).epsilon(1e-9));
  const auto k = poly23_kernel();
  CHECK(k[11] == 1.0);
  double sum = 0.0;
  for (int i = 0; i < 23; ++i) {
    CHECK(k[i] == k[22 - i]);
    if (i != 11 && (i - 11) % 2 == 0) CHECK(k[i] == 0.0);
    sum += k[i];
  }
  // Polyphase normalization: even phase 1, odd phase 1.
  CHECK(sum == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("poly23 upsample keeps samples and constants") {
  const ImageTensor c = poly23_upsample(ImageTensor(3, 64, 64, 0.8f), 4);
  CHECK(c.height() == 256);
  for (float v : c.data()) CHECK(v == doctest::Approx(0.8).epsilon(1e-6));
  const ImageTensor x = testing::random_tensor(2, 9, 7, 3);
  const ImageTensor u = poly23_upsample(x, 4);
  CHECK(u.height() == 36);
  CHECK(u.width() == 28);
  for (int b = 0; b < 2; ++b)
    for (int y = 0; y < 9; ++y)
      for (int xx = 0; xx < 7; ++xx) CHECK(u.at(b, 4 * y, 4 * xx) == x.at(b, y, xx));
  // A linear ramp is reproduced away from the borders.
  ImageTensor ramp(1, 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int xx = 0; xx < 32; ++xx) ramp.at(0, y, xx) = 0.01f * xx + 0.02f * y;
  const ImageTensor ru = poly23_upsample(ramp, 2);
  for (int y = 24; y < 40; ++y)
    for (int xx = 24; xx < 40; ++xx) CHECK(ru.at(0, y, xx) == doctest::Approx(0.005 * xx + 0.01 * y).epsilon(1e-4));
  CHECK_THROWS_AS(poly23_upsample(x, 3), InvalidArgument);
}

TEST_CASE("wald simulation shapes") {
  const ImageTensor hrms = testing::random_tensor(4, 64, 64, 1);
  const ImageTensor pan = testing::random_tensor(1, 256, 256, 2);
  const FusionSample s = wald_simulate(hrms, pan);
  CHECK(s.pan.height() == 64);
  CHECK(s.ms.height() == 16);
  CHECK(s.lrms_up.height() == 64);
  CHECK(s.lrms_up.bands() == 4);
  REQUIRE(s.gt.has_value());
  CHECK(*s.gt == hrms);
  validate_sample(s);
  // Simulating again on the output shrinks by another factor of 4.
  const FusionSample again = wald_simulate(s.ms, s.pan);
  CHECK(again.ms.height() == 4);
  CHECK(again.pan.height() == 16);
  CHECK_THROWS_AS(wald_simulate(hrms, testing::random_tensor(1, 64, 64, 2)), InvalidArgument);
}

TEST_CASE("constant scene simulates to identical gt and lrms_up") {
  const FusionSample s = wald_simulate(ImageTensor(3, 32, 32, 0.25f), ImageTensor(1, 128, 128, 0.5f));
  CHECK(testing::max_abs_diff(*s.gt, s.lrms_up) < 1e-6);
  for (float v : s.pan.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("crop sample") {
  const FusionSample s = wald_simulate(testing::random_tensor(2, 32, 32, 1), testing::random_tensor(1, 128, 128, 2));
  const FusionSample c = crop_sample(s, 8, 16, 16);
  CHECK(c.pan.height() == 16);
  CHECK(c.ms.height() == 4);
  CHECK(c.pan.at(0, 0, 0) == s.pan.at(0, 8, 16));
  CHECK(c.ms.at(1, 1, 1) == s.ms.at(1, 3, 5));
  CHECK(c.gt->at(1, 15, 15) == s.gt->at(1, 23, 31));
  CHECK_THROWS_AS(crop_sample(s, 2, 0, 16), InvalidArgument);
  CHECK_THROWS_AS(crop_sample(s, 24, 0, 16), InvalidArgument);
}

TEST_CASE("entropy in bits per pixel") {
  CHECK(entropy_bpp(ImageTensor(2, 4, 4, 0.3f)) == 0.0);
  ImageTensor two(1, 4, 4);
  for (int i = 0; i < 16; ++i) two.data()[i] = static_cast<float>(i % 2);
  CHECK(entropy_bpp(two) == doctest::Approx(1.0));
  ImageTensor all(1, 16, 16);
  for (int i = 0; i < 256; ++i) all.data()[i] = static_cast<float>(i);
  CHECK(entropy_bpp(all) == doctest::Approx(8.0));
  // band mean: 1 bit and 0 bits
  const ImageTensor parts[] = {two, ImageTensor(1, 4, 4, 1.0f)};
  CHECK(entropy_bpp(concat_bands(parts)) == doctest::Approx(0.5));
}

TEST_CASE("synth config validation") {
  SynthConfig c = small_synth();
  c.patch = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_synth();
  c.count = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_synth();
  c.bands = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("synthetic scenes are seeded") {
  const SynthConfig c = small_synth();
  const SceneImages a = synth_scene(c, 0);
  CHECK(a.hrms.bands() == 4);
  CHECK(a.hrms.height() == 32);
  CHECK(a.pan.height() == 128);
  CHECK(synth_scene(c, 0).hrms == a.hrms);
  CHECK_FALSE(synth_scene(c, 1).hrms == a.hrms);
  SynthConfig other = c;
  other.split = Split::test;
  CHECK_FALSE(synth_scene(other, 0).hrms == a.hrms);
  other = c;
  other.seed = 8;
  CHECK_FALSE(synth_scene(other, 0).hrms == a.hrms);
  for (float v : a.hrms.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("synthetic dataset is byte-identical per seed") {
  const SynthConfig c = small_synth(3);
  const fs::path a = scratch("pandiff_synth_a"), b = scratch("pandiff_synth_b");
  const DatasetManifest ma = synth_dataset(c, a);
  synth_dataset(c, b);
  CHECK(ma.entries.size() == 3);
  for (const auto& e : fs::directory_iterator(a / "train")) {
    const fs::path other = b / "train" / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(e.path()) == slurp(other));
  }
  const DatasetManifest back = load_manifest(a / "train" / "manifest.json");
  CHECK(back.entries.size() == 3);
  const FusionSample s = load_sample(back, 2);
  validate_sample(s);
  CHECK(s.lrms_up.height() == 32);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("synthetic data has a nontrivial baseline") {
  SynthConfig c;
  c.count = 8;
  c.split = Split::test;
  const fs::path root = scratch("pandiff_synth_baseline");
  const DatasetManifest m = synth_dataset(c, root);
  double ergas_sum = 0.0;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const FusionSample s = load_sample(m, i);
    CHECK(sam(s.lrms_up, *s.gt, true) > 0.0);
    ergas_sum += ergas(s.lrms_up, *s.gt, 4);
    // The residual is easier to code than the image itself.
    CHECK(entropy_bpp(*s.gt - s.lrms_up) < entropy_bpp(*s.gt));
  }
  CHECK(ergas_sum / m.entries.size() > 3.0);
  fs::remove_all(root);
}
