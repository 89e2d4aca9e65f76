#include "pandiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pandiff/error.hpp"

namespace pandiff {

namespace {

void check_step(const NoiseSchedule& s, int t, int lo) {
  if (t < lo || t > s.steps()) {
    throw InvalidArgument("step " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                          std::to_string(s.steps()) + "]");
  }
}

}  // namespace

NoiseSchedule cosine_schedule(int steps, double offset) {
  if (steps < 1) throw InvalidArgument("cosine_schedule: T must be >= 1");
  if (!(offset > 0.0)) throw InvalidArgument("cosine_schedule: offset must be > 0");
  NoiseSchedule s;
  s.steps_ = steps;
  s.offset_ = offset;
  auto f = [&](int t) {
    const double u = (static_cast<double>(t) / steps + offset) / (1.0 + offset);
    return std::cos(u * std::numbers::pi / 2.0);
  };
  const double f0 = f(0);
  s.alpha_bar_raw_.resize(steps + 1);
  s.alpha_bar_.resize(steps + 1);
  for (int t = 0; t <= steps; ++t) {
    const double r = f(t) / f0;
    s.alpha_bar_raw_[t] = t == 0 ? 1.0 : std::max(r * r, 0.0);
    s.alpha_bar_[t] = t == 0 ? 1.0 : std::max(s.alpha_bar_raw_[t], NoiseSchedule::kAlphaBarFloor);
  }
  s.beta_.resize(steps);
  for (int t = 1; t <= steps; ++t) {
    const double b = 1.0 - s.alpha_bar_[t] / s.alpha_bar_[t - 1];
    s.beta_[t - 1] = std::min(b, NoiseSchedule::kMaxBeta);
  }
  return s;
}

double NoiseSchedule::alpha_bar_raw(int t) const {
  check_step(*this, t, 0);
  return alpha_bar_raw_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_step(*this, t, 0);
  return alpha_bar_[t];
}

double NoiseSchedule::beta(int t) const {
  check_step(*this, t, 1);
  return beta_[t - 1];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - beta(t); }

double posterior_variance(const NoiseSchedule& sch, int t) {
  check_step(sch, t, 1);
  return (1.0 - sch.alpha_bar(t - 1)) / (1.0 - sch.alpha_bar(t)) * sch.beta(t);
}

}  // namespace pandiff
