#include "pandiff/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "pandiff/error.hpp"

namespace pandiff {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema_decay must lie in (0, 1)");
  if (iterations <= 0) throw ConfigError("train: iterations must be > 0");
  if (batch_size <= 0) throw ConfigError("train: batch_size must be > 0");
  if (diffusion_steps < 1) throw ConfigError("train: diffusion_steps must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0) || !(weight_decay >= 0.0)) throw ConfigError("train: adam_eps > 0 and weight_decay >= 0 required");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  if (model.prediction_kind != objective) {
    throw ConfigError("train: model prediction_kind '" + to_string(model.prediction_kind) +
                      "' differs from objective '" + to_string(objective) + "'");
  }
  model.validate();
}

json to_json(const TrainConfig& c) {
  return json{{"objective", to_string(c.objective)},
              {"loss", to_string(c.loss)},
              {"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"weight_decay", c.weight_decay},
              {"ema_decay", c.ema_decay},
              {"diffusion_steps", c.diffusion_steps},
              {"schedule_offset", c.schedule_offset},
              {"iterations", c.iterations},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"residual", c.residual},
              {"checkpoint_every", c.checkpoint_every},
              {"model", to_json(c.model)}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  bool model_kind_given = false;
  for (const auto& [k, v] : j.items()) {
    if (k == "objective") c.objective = prediction_kind_from_string(v.get<std::string>());
    else if (k == "loss") c.loss = loss_kind_from_string(v.get<std::string>());
    else if (k == "lr") c.lr = v.get<double>();
    else if (k == "beta1") c.beta1 = v.get<double>();
    else if (k == "beta2") c.beta2 = v.get<double>();
    else if (k == "adam_eps") c.adam_eps = v.get<double>();
    else if (k == "weight_decay") c.weight_decay = v.get<double>();
    else if (k == "ema_decay") c.ema_decay = v.get<double>();
    else if (k == "diffusion_steps") c.diffusion_steps = v.get<int>();
    else if (k == "schedule_offset") c.schedule_offset = v.get<double>();
    else if (k == "iterations") c.iterations = v.get<int>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "residual") c.residual = v.get<bool>();
    else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
    else if (k == "model") {
      json merged = to_json(c.model);
      for (const auto& [mk, mv] : v.items()) merged[mk] = mv;
      model_kind_given = v.contains("prediction_kind");
      c.model = denoiser_config_from_json(merged);
    } else {
      throw ConfigError("unknown train config key '" + k + "'");
    }
  }
  if (!model_kind_given) c.model.prediction_kind = c.objective;
  return c;
}

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.params = init_denoiser_params(cfg.model, cfg.seed);
  s.ema = s.params;
  for (const auto& [k, p] : s.params.all()) {
    s.adam_m.set(k, p.shape, std::vector<float>(p.value.size(), 0.0f));
    s.adam_v.set(k, p.shape, std::vector<float>(p.value.size(), 0.0f));
  }
  return s;
}

namespace {

std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), tag};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kShuffleTag = 0x5348;
constexpr std::uint32_t kStepTag = 0x5354;

}  // namespace

std::vector<int> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed, int step) {
  if (dataset_size == 0) throw InvalidArgument("batch_indices: empty dataset");
  if (batch_size <= 0 || step < 0) throw InvalidArgument("batch_indices: bad batch size or step");
  std::vector<int> out;
  out.reserve(batch_size);
  std::int64_t pos = static_cast<std::int64_t>(step) * batch_size;
  std::int64_t epoch = -1;
  std::vector<int> perm(dataset_size);
  for (int i = 0; i < batch_size; ++i, ++pos) {
    const std::int64_t e = pos / static_cast<std::int64_t>(dataset_size);
    if (e != epoch) {
      epoch = e;
      std::iota(perm.begin(), perm.end(), 0);
      auto rng = keyed_rng(seed, static_cast<std::uint64_t>(epoch), kShuffleTag);
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    out.push_back(perm[pos % static_cast<std::int64_t>(dataset_size)]);
  }
  return out;
}

ImageTensor objective_target(PredictionKind objective, const ImageTensor& x0, const ImageTensor& eps, int t,
                             const NoiseSchedule& sch) {
  switch (objective) {
    case PredictionKind::epsilon: return eps;
    case PredictionKind::x0: return x0;
    case PredictionKind::v: return make_v(x0, eps, t, sch).value;
  }
  throw InvalidArgument("objective_target: unknown objective");
}

void ema_update(nn::ParamStore<float>& ema, const nn::ParamStore<float>& params, double decay) {
  if (!(decay > 0.0 && decay < 1.0)) throw InvalidArgument("ema_update: decay must lie in (0, 1)");
  for (const auto& [k, p] : params.all()) {
    auto& e = ema.at(k).value;
    if (e.size() != p.value.size()) throw ConfigError("ema_update: shape mismatch for " + k);
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = static_cast<float>(decay * e[i] + (1.0 - decay) * p.value[i]);
    }
  }
}

void adamw_update(nn::ParamStore<float>& params, nn::ParamStore<float>& m, nn::ParamStore<float>& v,
                  const std::map<std::string, std::vector<float>>& grads, const AdamWSettings& s, int step) {
  if (step < 1) throw InvalidArgument("adamw_update: step is 1-based");
  const double bc1 = 1.0 - std::pow(s.beta1, step), bc2 = 1.0 - std::pow(s.beta2, step);
  for (auto& [k, p] : params.all()) {
    const auto git = grads.find(k);
    if (git == grads.end()) throw ConfigError("adamw_update: no gradient for " + k);
    const auto& g = git->second;
    auto& mv = m.at(k).value;
    auto& vv = v.at(k).value;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g[i];
      const double mi = s.beta1 * mv[i] + (1.0 - s.beta1) * gi;
      const double vi = s.beta2 * vv[i] + (1.0 - s.beta2) * gi * gi;
      mv[i] = static_cast<float>(mi);
      vv[i] = static_cast<float>(vi);
      double w = p.value[i];
      w -= s.lr * s.weight_decay * w;
      w -= s.lr * (mi / bc1) / (std::sqrt(vi / bc2) + s.eps);
      p.value[i] = static_cast<float>(w);
    }
  }
}

StepResult train_step(std::span<const TrainExample> batch, TrainState& state, const TrainConfig& cfg,
                      const NoiseSchedule& sch) {
  if (batch.empty()) throw InvalidArgument("train_step: empty batch");
  auto rng = keyed_rng(cfg.seed, static_cast<std::uint64_t>(state.step), kStepTag);
  std::uniform_int_distribution<int> pick_t(1, sch.steps());
  std::normal_distribution<float> normal(0.0f, 1.0f);

  StepResult res;
  std::vector<ImageTensor> x_t, targets;
  std::vector<const ConditionBundle*> conds;
  for (const auto& ex : batch) {
    const FusionSample& s = *ex.sample;
    if (!s.gt) throw InvalidArgument("train_step: training samples need gt");
    const ImageTensor x0 = cfg.residual ? *s.gt - s.lrms_up : *s.gt;
    const int t = pick_t(rng);
    ImageTensor eps(x0.bands(), x0.height(), x0.width());
    for (float& e : eps.data()) e = normal(rng);
    x_t.push_back(q_sample(x0, t, eps, sch).x_t);
    targets.push_back(objective_target(cfg.objective, x0, eps, t, sch));
    conds.push_back(ex.cond);
    res.steps.push_back(t);
  }

  nn::Graph<float> g(true);
  nn::ParamBinder<float> p(g, state.params, true);
  const auto in = make_denoiser_inputs<float>(g, x_t, res.steps, conds);
  const auto out = denoiser_graph(p, cfg.model, in);
  const auto& pred = g.value(out);

  std::vector<float> seed(pred.size());
  const double n = static_cast<double>(pred.size());
  double loss = 0.0;
  std::size_t off = 0;
  for (const auto& tgt : targets) {
    for (float tv : tgt.data()) {
      const double d = static_cast<double>(pred[off]) - tv;
      if (cfg.loss == LossKind::l1) {
        loss += std::abs(d);
        seed[off] = static_cast<float>((d > 0) - (d < 0)) / static_cast<float>(n);
      } else {
        loss += d * d;
        seed[off] = static_cast<float>(2.0 * d / n);
      }
      ++off;
    }
  }
  res.loss = loss / n;
  g.backward(out, std::move(seed));
  const auto grads = p.gradients();
  double gn = 0.0;
  for (const auto& [k, gv] : grads)
    for (float x : gv) gn += static_cast<double>(x) * x;
  res.grad_norm = std::sqrt(gn);

  if (!std::isfinite(res.loss) || !std::isfinite(res.grad_norm)) {
    std::ostringstream os;
    os << "non-finite training state at step " << state.step << ": loss=" << res.loss
       << " grad_norm=" << res.grad_norm << " t=[";
    for (std::size_t i = 0; i < res.steps.size(); ++i) os << (i ? "," : "") << res.steps[i];
    os << "]";
    throw NumericDomainError(os.str());
  }

  adamw_update(state.params, state.adam_m, state.adam_v, grads,
               {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay}, state.step + 1);
  ema_update(state.ema, state.params, cfg.ema_decay);
  ++state.step;
  return res;
}

namespace {

constexpr const char* kCheckpointFormat = "pandiff-checkpoint";

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint dir " + dir.string() + ": " + ec.message());
  json m;
  m["format"] = kCheckpointFormat;
  m["version"] = 1;
  m["step"] = state.step;
  m["config"] = to_json(cfg);
  m["params"] = save_param_blobs(state.params, dir, "param_");
  m["ema"] = save_param_blobs(state.ema, dir, "ema_");
  m["adam_m"] = save_param_blobs(state.adam_m, dir, "adam_m_");
  m["adam_v"] = save_param_blobs(state.adam_v, dir, "adam_v_");
  // Per-step generators are keyed by (seed, step), so this is the whole RNG state.
  m["rng"] = {{"scheme", "keyed-per-step"}, {"seed", cfg.seed}, {"next_step", state.step}};
  // Manifest last: a directory without it is not a checkpoint.
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << m.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, dir / "manifest.json", ec);
  if (ec) throw IoError("cannot finalize checkpoint manifest: " + ec.message());
}

namespace {

Checkpoint load_impl(const std::filesystem::path& dir, bool full) {
  const json m = read_json(dir / "manifest.json");
  if (m.value("format", "") != kCheckpointFormat) throw ParseError(dir.string() + ": not a checkpoint manifest");
  Checkpoint c;
  c.config = train_config_from_json(m.at("config"));
  c.config.validate();
  c.state.step = m.at("step").get<int>();
  c.state.ema = load_param_blobs(m.at("ema"), dir);
  check_params(c.config.model, c.state.ema);
  if (full) {
    c.state.params = load_param_blobs(m.at("params"), dir);
    c.state.adam_m = load_param_blobs(m.at("adam_m"), dir);
    c.state.adam_v = load_param_blobs(m.at("adam_v"), dir);
    check_params(c.config.model, c.state.params);
    check_params(c.config.model, c.state.adam_m);
    check_params(c.config.model, c.state.adam_v);
  }
  return c;
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& dir) { return load_impl(dir, true); }
Checkpoint load_checkpoint_for_inference(const std::filesystem::path& dir) { return load_impl(dir, false); }

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (manifest.entries.empty()) throw InvalidArgument("train: manifest has no entries");
  const NoiseSchedule sch = cosine_schedule(cfg.diffusion_steps, cfg.schedule_offset);

  std::vector<FusionSample> samples;
  std::vector<ConditionBundle> conds;
  samples.reserve(manifest.entries.size());
  conds.reserve(manifest.entries.size());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    samples.push_back(load_sample(manifest, i));
    if (!samples.back().gt) throw InvalidArgument("train: entry " + std::to_string(i) + " has no gt");
    if (samples.back().lrms_up.bands() != cfg.model.in_bands) {
      throw ConfigError("train: data has " + std::to_string(samples.back().lrms_up.bands()) +
                        " bands, model expects " + std::to_string(cfg.model.in_bands));
    }
    conds.push_back(make_condition_bundle(samples.back().pan, samples.back().lrms_up));
  }

  TrainResult res;
  if (opts.resume_from) {
    Checkpoint ck = load_checkpoint(*opts.resume_from);
    json a = to_json(ck.config), b = to_json(cfg);
    a.erase("iterations");
    b.erase("iterations");
    a.erase("checkpoint_every");
    b.erase("checkpoint_every");
    if (a != b) throw ConfigError("train: resume config differs from the checkpoint config");
    res.state = std::move(ck.state);
  } else {
    res.state = init_train_state(cfg);
  }

  const int end = std::min(cfg.iterations, opts.stop_at.value_or(cfg.iterations));
  std::vector<TrainExample> batch;
  while (res.state.step < end) {
    batch.clear();
    for (int idx : batch_indices(samples.size(), cfg.batch_size, cfg.seed, res.state.step)) {
      batch.push_back({&samples[idx], &conds[idx]});
    }
    const StepResult r = train_step(batch, res.state, cfg, sch);
    res.losses.push_back(r.loss);
    const LogRecord rec{res.state.step, r.loss, r.grad_norm, cfg.lr};
    if (opts.log) {
      *opts.log << json{{"step", rec.step}, {"loss", rec.loss}, {"grad_norm", rec.grad_norm}, {"lr", rec.lr}}.dump()
                << '\n';
      opts.log->flush();
    }
    if (opts.on_step) opts.on_step(rec);
    if (!opts.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && res.state.step % cfg.checkpoint_every == 0) {
      save_checkpoint(opts.checkpoint_dir, res.state, cfg);
    }
  }
  if (!opts.checkpoint_dir.empty()) save_checkpoint(opts.checkpoint_dir, res.state, cfg);
  return res;
}

double smoothed(std::span<const double> series, std::size_t end, std::size_t window) {
  end = std::min(end, series.size());
  if (end == 0 || window == 0) throw InvalidArgument("smoothed: empty window");
  const std::size_t begin = end > window ? end - window : 0;
  double acc = 0.0;
  for (std::size_t i = begin; i < end; ++i) acc += series[i];
  return acc / (end - begin);
}

}  // namespace pandiff
