#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pandiff/error.hpp"
#include "pandiff/schedule.hpp"

using namespace pandiff;

namespace {

// Direct double evaluation of the squared-cosine formula.
double reference_alpha_bar(int t, int T, double s) {
  auto f = [&](int k) { return std::cos(((static_cast<double>(k) / T + s) / (1 + s)) * std::numbers::pi / 2); };
  const double r = f(t) / f(0);
  return r * r;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and monotonicity") {
  const NoiseSchedule s = cosine_schedule(500, 8e-3);
  CHECK(s.steps() == 500);
  CHECK(s.alpha_bar(0) == 1.0);
  for (int t = 1; t <= 500; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  CHECK(s.alpha_bar(500) == NoiseSchedule::kAlphaBarFloor);
  CHECK(s.alpha_bar_raw(500) < 1e-8);
}

TEST_CASE("alpha_bar matches the closed form") {
  const NoiseSchedule s = cosine_schedule(500, 8e-3);
  for (int t : {1, 100, 250, 499}) CHECK(s.alpha_bar(t) == doctest::Approx(reference_alpha_bar(t, 500, 8e-3)).epsilon(1e-12));
  CHECK(std::abs(s.alpha_bar(250) - reference_alpha_bar(250, 500, 8e-3)) < 1e-6);
}

TEST_CASE("beta, alpha and alpha_bar are consistent") {
  const NoiseSchedule s = cosine_schedule(500, 8e-3);
  double prod = 1.0;
  for (int t = 1; t <= 500; ++t) {
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) <= NoiseSchedule::kMaxBeta);
    CHECK(s.alpha(t) == doctest::Approx(1.0 - s.beta(t)));
    prod *= s.alpha(t);
    if (t < 500) CHECK(prod == doctest::Approx(s.alpha_bar(t)).epsilon(1e-9));
  }
}

TEST_CASE("posterior variance") {
  const NoiseSchedule s = cosine_schedule(500, 8e-3);
  CHECK(posterior_variance(s, 1) == 0.0);
  for (int t = 2; t <= 500; ++t) {
    CHECK(posterior_variance(s, t) > 0.0);
    CHECK(posterior_variance(s, t) <= s.beta(t));
  }
  CHECK_THROWS_AS(posterior_variance(s, 0), InvalidArgument);
  CHECK_THROWS_AS(posterior_variance(s, 501), InvalidArgument);
}

TEST_CASE("schedule argument checks") {
  CHECK_THROWS_AS(cosine_schedule(0), InvalidArgument);
  CHECK_THROWS_AS(cosine_schedule(10, 0.0), InvalidArgument);
  const NoiseSchedule s = cosine_schedule(1);
  CHECK(s.steps() == 1);
  CHECK_THROWS_AS(s.alpha_bar(2), InvalidArgument);
  CHECK_THROWS_AS(s.beta(0), InvalidArgument);
}
