#include "pandiff/diffusion.hpp"

#include <cmath>

#include "pandiff/error.hpp"

namespace pandiff {

std::string to_string(PredictionKind k) {
  switch (k) {
    case PredictionKind::epsilon: return "epsilon";
    case PredictionKind::x0: return "x0";
    case PredictionKind::v: return "v";
  }
  return "x0";
}

PredictionKind prediction_kind_from_string(const std::string& s) {
  if (s == "epsilon" || s == "eps") return PredictionKind::epsilon;
  if (s == "x0") return PredictionKind::x0;
  if (s == "v") return PredictionKind::v;
  throw InvalidArgument("unknown prediction kind '" + s + "'");
}

std::string to_string(LossKind k) { return k == LossKind::l1 ? "l1" : "l2"; }

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "l1") return LossKind::l1;
  if (s == "l2") return LossKind::l2;
  throw InvalidArgument("unknown loss '" + s + "'");
}

namespace {

template <typename F>
ImageTensor zip(const ImageTensor& a, const ImageTensor& b, const char* what, F&& f) {
  require_same_dims(a, b, what);
  ImageTensor out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(f(o[i], bd[i]));
  return out;
}

void check_alpha_bar(double ab) {
  if (!(ab >= 0.0 && ab <= 1.0)) {
    throw InvalidArgument("alpha_bar must lie in [0, 1], got " + std::to_string(ab));
  }
}

}  // namespace

ImageTensor q_sample(const ImageTensor& x0, double alpha_bar, const ImageTensor& eps) {
  check_alpha_bar(alpha_bar);
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  return zip(x0, eps, "q_sample", [&](double x, double e) { return a * x + b * e; });
}

NoisyState q_sample(const ImageTensor& x0, int t, const ImageTensor& eps, const NoiseSchedule& sch) {
  if (t < 1 || t > sch.steps()) throw InvalidArgument("q_sample: step out of range");
  return {q_sample(x0, sch.alpha_bar(t), eps), t, eps};
}

ImageTensor single_forward_step(const ImageTensor& x_prev, double beta, const ImageTensor& eps) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("beta must lie in [0, 1]");
  const double a = std::sqrt(1.0 - beta);
  const double b = std::sqrt(beta);
  return zip(x_prev, eps, "single_forward_step", [&](double x, double e) { return a * x + b * e; });
}

ImageTensor single_forward_step(const ImageTensor& x_prev, int t, const ImageTensor& eps,
                                const NoiseSchedule& sch) {
  return single_forward_step(x_prev, sch.beta(t), eps);
}

Prediction make_v(const ImageTensor& x0, const ImageTensor& eps, double alpha_bar) {
  check_alpha_bar(alpha_bar);
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  return {PredictionKind::v,
          zip(x0, eps, "make_v", [&](double x, double e) { return a * e - b * x; })};
}

Prediction make_v(const ImageTensor& x0, const ImageTensor& eps, int t, const NoiseSchedule& sch) {
  return make_v(x0, eps, sch.alpha_bar(t));
}

namespace scalar {

double to_x0(PredictionKind kind, double value, double x_t, double alpha_bar) {
  switch (kind) {
    case PredictionKind::x0:
      return value;
    case PredictionKind::epsilon:
      if (alpha_bar < NoiseSchedule::kAlphaBarFloor) {
        throw NumericDomainError("to_x0: alpha_bar below floor, cannot invert epsilon");
      }
      return (x_t - std::sqrt(1.0 - alpha_bar) * value) / std::sqrt(alpha_bar);
    case PredictionKind::v:
      return std::sqrt(alpha_bar) * x_t - std::sqrt(1.0 - alpha_bar) * value;
  }
  return value;
}

double to_epsilon(PredictionKind kind, double value, double x_t, double alpha_bar) {
  switch (kind) {
    case PredictionKind::epsilon:
      return value;
    case PredictionKind::x0:
      if (1.0 - alpha_bar < NoiseSchedule::kAlphaBarFloor) {
        throw NumericDomainError("to_epsilon: 1 - alpha_bar below floor, cannot invert x0");
      }
      return (x_t - std::sqrt(alpha_bar) * value) / std::sqrt(1.0 - alpha_bar);
    case PredictionKind::v:
      return std::sqrt(1.0 - alpha_bar) * x_t + std::sqrt(alpha_bar) * value;
  }
  return value;
}

double to_v(PredictionKind kind, double value, double x_t, double alpha_bar) {
  if (kind == PredictionKind::v) return value;
  const double x0 = to_x0(kind, value, x_t, alpha_bar);
  const double eps = to_epsilon(kind, value, x_t, alpha_bar);
  return std::sqrt(alpha_bar) * eps - std::sqrt(1.0 - alpha_bar) * x0;
}

}  // namespace scalar

namespace {

template <typename F>
ImageTensor convert(const Prediction& pred, const ImageTensor& x_t, double alpha_bar, const char* what,
                    F&& f) {
  check_alpha_bar(alpha_bar);
  return zip(pred.value, x_t, what,
             [&](double value, double x) { return f(pred.kind, value, x, alpha_bar); });
}

}  // namespace

ImageTensor to_x0(const Prediction& pred, const ImageTensor& x_t, double alpha_bar) {
  if (pred.kind == PredictionKind::epsilon && alpha_bar < NoiseSchedule::kAlphaBarFloor) {
    throw NumericDomainError("to_x0: alpha_bar below floor");
  }
  return convert(pred, x_t, alpha_bar, "to_x0", scalar::to_x0);
}

ImageTensor to_epsilon(const Prediction& pred, const ImageTensor& x_t, double alpha_bar) {
  if (pred.kind == PredictionKind::x0 && 1.0 - alpha_bar < NoiseSchedule::kAlphaBarFloor) {
    throw NumericDomainError("to_epsilon: 1 - alpha_bar below floor");
  }
  return convert(pred, x_t, alpha_bar, "to_epsilon", scalar::to_epsilon);
}

ImageTensor to_v(const Prediction& pred, const ImageTensor& x_t, double alpha_bar) {
  return convert(pred, x_t, alpha_bar, "to_v", scalar::to_v);
}

ImageTensor to_x0(const Prediction& pred, const NoisyState& state, const NoiseSchedule& sch) {
  return to_x0(pred, state.x_t, sch.alpha_bar(state.t));
}

ImageTensor to_epsilon(const Prediction& pred, const NoisyState& state, const NoiseSchedule& sch) {
  return to_epsilon(pred, state.x_t, sch.alpha_bar(state.t));
}

double simple_loss(const Prediction& pred, const ImageTensor& target, LossKind kind) {
  require_same_dims(pred.value, target, "simple_loss");
  auto p = pred.value.data();
  auto q = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - q[i];
    acc += kind == LossKind::l1 ? std::abs(d) : d * d;
  }
  return acc / static_cast<double>(p.size());
}

}  // namespace pandiff
