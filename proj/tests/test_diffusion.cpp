#include <doctest.h>

#include <cmath>
#include <random>

#include "pandiff/diffusion.hpp"
#include "pandiff/error.hpp"
#include "support.hpp"

using namespace pandiff;

TEST_CASE("q_sample at alpha_bar 1 returns x0 and at 0 returns noise") {
  const ImageTensor x0 = testing::random_tensor(2, 4, 4, 1);
  const ImageTensor eps = testing::normal_tensor(2, 4, 4, 2);
  CHECK(q_sample(x0, 1.0, eps) == x0);
  CHECK(q_sample(x0, 0.0, eps) == eps);
}

TEST_CASE("q_sample scalar worked example") {
  // sqrt(0.64) * 1 + sqrt(0.36) * 2 = 0.8 + 1.2
  const ImageTensor x = q_sample(ImageTensor(1, 1, 1, 1.0f), 0.64, ImageTensor(1, 1, 1, 2.0f));
  CHECK(x.at(0, 0, 0) == doctest::Approx(2.0));
}

TEST_CASE("q_sample with the schedule matches the marginal statistics") {
  const NoiseSchedule s = cosine_schedule(500, 8e-3);
  const ImageTensor x0(1, 200, 200, 0.5f);
  const ImageTensor eps = testing::normal_tensor(1, 200, 200, 9);
  const NoisyState st = q_sample(x0, 250, eps, s);
  double m = 0.0, v = 0.0;
  for (float x : st.x_t.data()) m += x;
  m /= st.x_t.size();
  for (float x : st.x_t.data()) v += (x - m) * (x - m);
  v /= st.x_t.size();
  CHECK(m == doctest::Approx(std::sqrt(s.alpha_bar(250)) * 0.5).epsilon(0.02));
  CHECK(v == doctest::Approx(1.0 - s.alpha_bar(250)).epsilon(0.02));
  CHECK(st.t == 250);
}

TEST_CASE("single forward steps compose to the closed-form marginal in distribution") {
  // Composing steps 1..t with independent noise gives mean sqrt(ab_t) x0.
  const NoiseSchedule s = cosine_schedule(50, 8e-3);
  ImageTensor x(1, 100, 100, 1.0f);
  for (int t = 1; t <= 20; ++t) x = single_forward_step(x, t, testing::normal_tensor(1, 100, 100, 100 + t), s);
  double m = 0.0, v = 0.0;
  for (float e : x.data()) m += e;
  m /= x.size();
  for (float e : x.data()) v += (e - m) * (e - m);
  v /= x.size();
  CHECK(m == doctest::Approx(std::sqrt(s.alpha_bar(20))).epsilon(0.03));
  CHECK(v == doctest::Approx(1.0 - s.alpha_bar(20)).epsilon(0.05));
}

TEST_CASE("v target and conversions round trip") {
  const double ab = 0.3;
  const ImageTensor x0 = testing::random_tensor(2, 3, 3, 5, -1.0f, 1.0f);
  const ImageTensor eps = testing::normal_tensor(2, 3, 3, 6);
  const ImageTensor xt = q_sample(x0, ab, eps);
  const Prediction v = make_v(x0, eps, ab);
  CHECK(v.kind == PredictionKind::v);
  CHECK(testing::max_abs_diff(to_x0(v, xt, ab), x0) < 1e-5);
  CHECK(testing::max_abs_diff(to_epsilon(v, xt, ab), eps) < 1e-5);
  const Prediction e{PredictionKind::epsilon, eps};
  CHECK(testing::max_abs_diff(to_x0(e, xt, ab), x0) < 1e-5);
  CHECK(testing::max_abs_diff(to_v(e, xt, ab), v.value) < 1e-5);
  const Prediction x{PredictionKind::x0, x0};
  CHECK(testing::max_abs_diff(to_epsilon(x, xt, ab), eps) < 1e-5);
  CHECK(testing::max_abs_diff(to_v(x, xt, ab), v.value) < 1e-5);
}

TEST_CASE("scalar v worked example") {
  // ab = 0.36: v = 0.6 * eps - 0.8 * x0
  CHECK(scalar::to_v(PredictionKind::epsilon, 1.0, 0.6 * 0.5 + 0.8 * 1.0, 0.36) ==
        doctest::Approx(0.6 * 1.0 - 0.8 * 0.5));
}

TEST_CASE("conversions refuse vanishing coefficients") {
  CHECK_THROWS_AS(scalar::to_x0(PredictionKind::epsilon, 0.1, 0.2, 1e-12), NumericDomainError);
  CHECK_THROWS_AS(scalar::to_epsilon(PredictionKind::x0, 0.1, 0.2, 1.0), NumericDomainError);
  // v needs neither inversion.
  CHECK_NOTHROW(scalar::to_x0(PredictionKind::v, 0.1, 0.2, 1.0));
  CHECK(scalar::to_x0(PredictionKind::x0, 0.7, 0.2, 1e-12) == 0.7);
}

TEST_CASE("simple loss") {
  const Prediction p{PredictionKind::x0, ImageTensor(1, 1, 2, std::vector<float>{1.0f, -1.0f})};
  const ImageTensor t(1, 1, 2, std::vector<float>{0.0f, 1.0f});
  CHECK(simple_loss(p, t, LossKind::l1) == doctest::Approx(1.5));
  CHECK(simple_loss(p, t, LossKind::l2) == doctest::Approx(2.5));
  CHECK_THROWS_AS(simple_loss(p, ImageTensor(1, 1, 3), LossKind::l1), InvalidArgument);
}

TEST_CASE("kind names round trip") {
  for (auto k : {PredictionKind::epsilon, PredictionKind::x0, PredictionKind::v})
    CHECK(prediction_kind_from_string(to_string(k)) == k);
  for (auto k : {LossKind::l1, LossKind::l2}) CHECK(loss_kind_from_string(to_string(k)) == k);
  CHECK_THROWS(prediction_kind_from_string("score"));
}
