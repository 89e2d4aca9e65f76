#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "pandiff/datasim.hpp"
#include "pandiff/error.hpp"
#include "pandiff/tensor_io.hpp"
#include "pandiff/trainer.hpp"
#include "support.hpp"

using namespace pandiff;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_cfg() {
  TrainConfig c;
  c.model.base_channels = 8;
  c.model.channel_multipliers = {1, 2};
  c.iterations = 6;
  c.batch_size = 2;
  c.lr = 1e-3;
  c.seed = 3;
  return c;
}

const DatasetManifest& tiny_data() {
  static const DatasetManifest m = [] {
    SynthConfig s;
    s.count = 4;
    s.patch = 16;
    const fs::path root = fs::temp_directory_path() / "pandiff_trainer_data";
    fs::remove_all(root);
    return synth_dataset(s, root);
  }();
  return m;
}

nn::ParamStore<float> store(std::vector<float> v) {
  nn::ParamStore<float> s;
  const int n = static_cast<int>(v.size());
  s.set("w", nn::Shape{1, n, 1, 1}, std::move(v));
  return s;
}

void zero_output(nn::ParamStore<float>& p) {
  for (float& v : p.at("out.conv.w").value) v = 0.0f;
  for (float& v : p.at("out.conv.b").value) v = 0.0f;
}

}  // namespace

TEST_CASE("ema arithmetic") {
  auto ema = store({0.0f, 2.0f, -1.0f});
  const auto params = store({1.0f, 2.0f, 3.0f});
  ema_update(ema, params, 0.995);
  CHECK(ema.at("w").value[0] == doctest::Approx(0.005));
  CHECK(ema.at("w").value[1] == 2.0f);
  // |ema' - p| = decay * |ema - p|
  CHECK(std::abs(ema.at("w").value[2] - 3.0) == doctest::Approx(0.995 * 4.0));
  auto same = params;
  ema_update(same, params, 0.9);
  CHECK(same.at("w").value == params.at("w").value);
}

TEST_CASE("adamw first step") {
  auto p = store({1.0f, -2.0f, 0.5f});
  auto m = store({0, 0, 0}), v = store({0, 0, 0});
  const std::map<std::string, std::vector<float>> g{{"w", {0.1f, -0.3f, 0.0f}}};
  const AdamWSettings s{0.01, 0.9, 0.999, 1e-8, 0.1};
  adamw_update(p, m, v, g, s, 1);
  // Bias-corrected first step moves by lr * sign(g), decay by lr * wd * w.
  CHECK(p.at("w").value[0] == doctest::Approx(1.0 - 0.01 * 0.1 * 1.0 - 0.01).epsilon(1e-6));
  CHECK(p.at("w").value[1] == doctest::Approx(-2.0 + 0.01 * 0.1 * 2.0 + 0.01).epsilon(1e-6));
  CHECK(p.at("w").value[2] == doctest::Approx(0.5 - 0.01 * 0.1 * 0.5).epsilon(1e-6));
  CHECK(m.at("w").value[0] == doctest::Approx(0.01));
  CHECK(v.at("w").value[1] == doctest::Approx(0.001 * 0.09));
  CHECK_THROWS_AS(adamw_update(p, m, v, g, s, 0), InvalidArgument);
}

TEST_CASE("adamw second step matches the recurrence") {
  auto p = store({0.3f});
  auto m = store({0}), v = store({0});
  const AdamWSettings s{0.05, 0.9, 0.99, 1e-8, 0.0};
  adamw_update(p, m, v, {{"w", {0.2f}}}, s, 1);
  adamw_update(p, m, v, {{"w", {-0.4f}}}, s, 2);
  const double m2 = 0.9 * 0.02 + 0.1 * -0.4, v2 = 0.99 * 0.01 * 0.04 + 0.01 * 0.16;
  const double want = 0.3 - 0.05 - 0.05 * (m2 / (1 - 0.81)) / std::sqrt(v2 / (1 - 0.9801));
  CHECK(p.at("w").value[0] == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("batches walk seeded permutations") {
  std::multiset<int> epoch;
  for (int step = 0; step < 5; ++step)
    for (int i : batch_indices(10, 2, 1, step)) epoch.insert(i);
  CHECK(epoch.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(epoch.count(i) == 1);
  CHECK(batch_indices(10, 3, 1, 4) == batch_indices(10, 3, 1, 4));
  CHECK(batch_indices(7, 3, 1, 2).size() == 3);
  bool differs = false;
  for (int s = 0; s < 5; ++s) differs |= batch_indices(10, 2, 1, s) != batch_indices(10, 2, 2, s);
  CHECK(differs);
}

TEST_CASE("objective targets") {
  const NoiseSchedule sch = cosine_schedule();
  const ImageTensor x0 = testing::normal_tensor(2, 4, 4, 1), eps = testing::normal_tensor(2, 4, 4, 2);
  CHECK(objective_target(PredictionKind::x0, x0, eps, 10, sch) == x0);
  CHECK(objective_target(PredictionKind::epsilon, x0, eps, 10, sch) == eps);
  const ImageTensor v = objective_target(PredictionKind::v, x0, eps, 10, sch);
  const double ab = sch.alpha_bar(10);
  CHECK(v.data()[3] == doctest::Approx(std::sqrt(ab) * eps.data()[3] - std::sqrt(1 - ab) * x0.data()[3]).epsilon(1e-5));
}

TEST_CASE("config validation and json") {
  TrainConfig c = tiny_cfg();
  c.validate();
  c.ema_decay = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_cfg();
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_cfg();
  c.objective = PredictionKind::v;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_cfg();
  c.loss = LossKind::l2;
  c.residual = false;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  // objective carries over to the model when the model section omits it
  const TrainConfig eps = train_config_from_json(nlohmann::json{{"objective", "epsilon"}});
  CHECK(eps.model.prediction_kind == PredictionKind::epsilon);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"learning_rate", 1}}), ConfigError);
}

TEST_CASE("first-step loss of a silent network is the target magnitude") {
  const DatasetManifest& m = tiny_data();
  std::vector<FusionSample> samples;
  std::vector<ConditionBundle> conds;
  for (std::size_t i = 0; i < 2; ++i) samples.push_back(load_sample(m, i));
  for (const auto& s : samples) conds.push_back(make_condition_bundle(s.pan, s.lrms_up));
  const std::vector<TrainExample> batch{{&samples[0], &conds[0]}, {&samples[1], &conds[1]}};
  const NoiseSchedule sch = cosine_schedule();
  for (bool residual : {true, false})
    for (LossKind loss : {LossKind::l1, LossKind::l2}) {
      TrainConfig c = tiny_cfg();
      c.residual = residual;
      c.loss = loss;
      TrainState st = init_train_state(c);
      zero_output(st.params);
      double want = 0.0;
      std::size_t n = 0;
      for (const auto& s : samples) {
        const ImageTensor x0 = residual ? *s.gt - s.lrms_up : *s.gt;
        for (float v : x0.data()) want += loss == LossKind::l1 ? std::abs(v) : v * v;
        n += x0.size();
      }
      const StepResult r = train_step(batch, st, c, sch);
      CHECK(r.loss == doctest::Approx(want / n).epsilon(1e-5));
      CHECK(st.step == 1);
      CHECK(r.steps.size() == 2);
    }
}

TEST_CASE("train step is deterministic and flags non-finite input") {
  const DatasetManifest& m = tiny_data();
  FusionSample s = load_sample(m, 0);
  ConditionBundle cb = make_condition_bundle(s.pan, s.lrms_up);
  const std::vector<TrainExample> batch{{&s, &cb}};
  const NoiseSchedule sch = cosine_schedule();
  const TrainConfig c = tiny_cfg();
  TrainState a = init_train_state(c), b = init_train_state(c);
  const StepResult ra = train_step(batch, a, c, sch), rb = train_step(batch, b, c, sch);
  CHECK(ra.loss == rb.loss);
  CHECK(ra.steps == rb.steps);
  CHECK(a.params.at("stem.w").value == b.params.at("stem.w").value);
  CHECK(a.ema.at("stem.w").value != a.params.at("stem.w").value);
  s.gt->data()[5] = std::numeric_limits<float>::quiet_NaN();
  TrainState bad = init_train_state(c);
  CHECK_THROWS_AS(train_step(batch, bad, c, sch), NumericDomainError);
}

TEST_CASE("checkpoint round trip") {
  const TrainConfig c = tiny_cfg();
  const fs::path dir = fs::temp_directory_path() / "pandiff_trainer_ckpt";
  fs::remove_all(dir);
  std::ostringstream log;
  TrainOptions o;
  o.checkpoint_dir = dir;
  o.log = &log;
  const TrainResult r = train(tiny_data(), c, o);
  CHECK(r.losses.size() == 6);
  CHECK(fs::exists(dir / "manifest.json"));
  const Checkpoint ck = load_checkpoint(dir);
  CHECK(ck.state.step == 6);
  CHECK(to_json(ck.config) == to_json(c));
  for (const auto& [k, t] : r.state.params.all()) {
    CHECK(ck.state.params.at(k).value == t.value);
    CHECK(ck.state.ema.at(k).value == r.state.ema.at(k).value);
    CHECK(ck.state.adam_v.at(k).value == r.state.adam_v.at(k).value);
  }
  const Checkpoint inf = load_checkpoint_for_inference(dir);
  CHECK(inf.state.ema.at("stem.w").value == r.state.ema.at("stem.w").value);
  // one JSON object per step
  std::istringstream lines(log.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["step"] == ++count);
    CHECK(j.contains("loss"));
    CHECK(j.contains("grad_norm"));
    CHECK(j["lr"] == c.lr);
  }
  CHECK(count == 6);
  CHECK_THROWS(load_checkpoint(dir / "missing"));
  fs::remove_all(dir);
}

TEST_CASE("resume continues the uninterrupted run exactly") {
  const TrainConfig c = tiny_cfg();
  const fs::path dir = fs::temp_directory_path() / "pandiff_trainer_resume";
  fs::remove_all(dir);
  const TrainResult full = train(tiny_data(), c, {});
  TrainOptions first;
  first.checkpoint_dir = dir;
  first.stop_at = 3;
  const TrainResult head = train(tiny_data(), c, first);
  CHECK(head.state.step == 3);
  TrainOptions second;
  second.resume_from = dir;
  const TrainResult tail = train(tiny_data(), c, second);
  REQUIRE(tail.losses.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(head.losses[i] == full.losses[i]);
    CHECK(tail.losses[i] == full.losses[3 + i]);
  }
  CHECK(tail.state.params.at("out.conv.w").value == full.state.params.at("out.conv.w").value);
  CHECK(tail.state.ema.at("out.conv.w").value == full.state.ema.at("out.conv.w").value);
  TrainConfig other = c;
  other.lr = 5e-4;
  CHECK_THROWS_AS(train(tiny_data(), other, second), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("smoothed window") {
  const std::vector<double> s{1, 2, 3, 4, 5};
  CHECK(smoothed(s, 5, 2) == doctest::Approx(4.5));
  CHECK(smoothed(s, 2, 10) == doctest::Approx(1.5));
  CHECK(smoothed(s, 50, 5) == doctest::Approx(3.0));
  CHECK_THROWS_AS(smoothed(s, 0, 2), InvalidArgument);
}
