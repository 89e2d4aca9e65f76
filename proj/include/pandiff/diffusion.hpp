#pragma once

#include <string>

#include "pandiff/image_tensor.hpp"
#include "pandiff/schedule.hpp"

namespace pandiff {

enum class PredictionKind { epsilon, x0, v };
std::string to_string(PredictionKind k);
PredictionKind prediction_kind_from_string(const std::string& s);

struct Prediction {
  PredictionKind kind = PredictionKind::x0;
  ImageTensor value;
};

struct NoisyState {
  ImageTensor x_t;
  int t = 0;
  ImageTensor eps_used;
};

enum class LossKind { l1, l2 };
std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

// x_t = sqrt(ab) x0 + sqrt(1 - ab) eps
NoisyState q_sample(const ImageTensor& x0, int t, const ImageTensor& eps, const NoiseSchedule& sch);
ImageTensor q_sample(const ImageTensor& x0, double alpha_bar, const ImageTensor& eps);

// x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps
ImageTensor single_forward_step(const ImageTensor& x_prev, int t, const ImageTensor& eps,
                                const NoiseSchedule& sch);
ImageTensor single_forward_step(const ImageTensor& x_prev, double beta, const ImageTensor& eps);

// v = sqrt(ab) eps - sqrt(1 - ab) x0
Prediction make_v(const ImageTensor& x0, const ImageTensor& eps, int t, const NoiseSchedule& sch);
Prediction make_v(const ImageTensor& x0, const ImageTensor& eps, double alpha_bar);

// Conversions between parameterizations given the noisy input x_t at a
// known alpha_bar. Throw NumericDomainError where the inversion divides by a
// vanishing coefficient.
ImageTensor to_x0(const Prediction& pred, const NoisyState& state, const NoiseSchedule& sch);
ImageTensor to_x0(const Prediction& pred, const ImageTensor& x_t, double alpha_bar);
ImageTensor to_epsilon(const Prediction& pred, const NoisyState& state, const NoiseSchedule& sch);
ImageTensor to_epsilon(const Prediction& pred, const ImageTensor& x_t, double alpha_bar);
ImageTensor to_v(const Prediction& pred, const ImageTensor& x_t, double alpha_bar);

// Scalar forms of the same algebra; the tensor versions apply these per element.
namespace scalar {
double to_x0(PredictionKind kind, double value, double x_t, double alpha_bar);
double to_epsilon(PredictionKind kind, double value, double x_t, double alpha_bar);
double to_v(PredictionKind kind, double value, double x_t, double alpha_bar);
}  // namespace scalar

// Mean absolute error (l1) or mean squared error (l2) over all elements.
double simple_loss(const Prediction& pred, const ImageTensor& target, LossKind kind = LossKind::l1);

}  // namespace pandiff
