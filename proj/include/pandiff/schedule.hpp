#pragma once

#include <vector>

namespace pandiff {

// Per-step tables for a T-step diffusion. alpha_bar has T+1 entries
// (index 0 is the clean data); beta and alpha are indexed by step t in [1, T]
// through the accessors below.
class NoiseSchedule {
 public:
  static constexpr double kAlphaBarFloor = 1e-8;
  static constexpr double kMaxBeta = 0.999;

  int steps() const { return steps_; }
  double offset() const { return offset_; }

  // Raw squared-cosine value, before flooring; alpha_bar_raw(T) is ~0.
  double alpha_bar_raw(int t) const;
  // Floored at kAlphaBarFloor so square roots and divisions stay finite.
  double alpha_bar(int t) const;
  double beta(int t) const;
  double alpha(int t) const;

  const std::vector<double>& alpha_bar_table() const { return alpha_bar_; }

 private:
  friend NoiseSchedule cosine_schedule(int steps, double offset);
  int steps_ = 0;
  double offset_ = 0.0;
  std::vector<double> alpha_bar_;  // floored, size T+1
  std::vector<double> alpha_bar_raw_;
  std::vector<double> beta_;  // size T, beta_[t-1]
};

// alpha_bar(t) = (f(t)/f(0))^2, f(t) = cos(((t/T + s)/(1 + s)) * pi/2),
// beta(t) = min(1 - alpha_bar(t)/alpha_bar(t-1), 0.999), taken on the floored
// table so that alpha(t) == alpha_bar(t)/alpha_bar(t-1) holds at every step.
NoiseSchedule cosine_schedule(int steps = 500, double offset = 8e-3);

// ((1 - alpha_bar(t-1)) / (1 - alpha_bar(t))) * beta(t), for 1 <= t <= T.
double posterior_variance(const NoiseSchedule& sch, int t);

}  // namespace pandiff
