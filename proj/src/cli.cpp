#include "pandiff/cli.hpp"

#include <png.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>

#include "pandiff/error.hpp"
#include "pandiff/tensor_io.hpp"

namespace pandiff {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json synth_to_json(const SynthConfig& c) {
  return json{{"seed", c.seed},
              {"count", c.count},
              {"bands", c.bands},
              {"patch", c.patch},
              {"spectral_smoothness", c.spectral_smoothness},
              {"detail_amplitude", c.detail_amplitude},
              {"pan_detail", c.pan_detail},
              {"objects", c.objects},
              {"ratio", c.wald.ratio},
              {"ms_gain", c.wald.ms_gain},
              {"pan_gain", c.wald.pan_gain},
              {"levels", c.levels}};
}

void synth_from_json(const json& j, RunConfig& rc) {
  SynthConfig& c = rc.synth;
  for (const auto& [k, v] : j.items()) {
    if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "count") c.count = v.get<int>();
    else if (k == "val_count") rc.val_count = v.get<int>();
    else if (k == "test_count") rc.test_count = v.get<int>();
    else if (k == "bands") c.bands = v.get<int>();
    else if (k == "patch") c.patch = v.get<int>();
    else if (k == "spectral_smoothness") c.spectral_smoothness = v.get<double>();
    else if (k == "detail_amplitude") c.detail_amplitude = v.get<double>();
    else if (k == "pan_detail") c.pan_detail = v.get<double>();
    else if (k == "objects") c.objects = v.get<int>();
    else if (k == "ratio") c.wald.ratio = v.get<int>();
    else if (k == "ms_gain") c.wald.ms_gain = v.get<double>();
    else if (k == "pan_gain") c.wald.pan_gain = v.get<double>();
    else if (k == "levels") c.levels = v.get<int>();
    else throw UsageError("unknown synth config key '" + k + "'");
  }
}

json sample_to_json(const SampleSettings& s) {
  return json{{"steps", s.steps}, {"eta", s.eta}, {"seed", s.seed}, {"kind", to_string(s.kind)}};
}

void sample_from_json(const json& j, SampleSettings& s) {
  for (const auto& [k, v] : j.items()) {
    if (k == "steps") s.steps = v.get<int>();
    else if (k == "eta") s.eta = v.get<double>();
    else if (k == "seed") s.seed = v.get<std::uint64_t>();
    else if (k == "kind") s.kind = sampler_kind_from_string(v.get<std::string>());
    else throw UsageError("unknown sample config key '" + k + "'");
  }
}

json metrics_to_json(const MetricConfig& m) {
  return json{{"scale_ratio", m.scale_ratio},
              {"degrees", m.degrees},
              {"qnr_alpha", m.qnr_alpha},
              {"qnr_beta", m.qnr_beta},
              {"uiqi_window", m.uiqi_window}};
}

void metrics_from_json(const json& j, MetricConfig& m) {
  for (const auto& [k, v] : j.items()) {
    if (k == "scale_ratio") m.scale_ratio = v.get<int>();
    else if (k == "degrees") m.degrees = v.get<bool>();
    else if (k == "qnr_alpha") m.qnr_alpha = v.get<double>();
    else if (k == "qnr_beta") m.qnr_beta = v.get<double>();
    else if (k == "uiqi_window") m.uiqi_window = v.get<int>();
    else throw UsageError("unknown metrics config key '" + k + "'");
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  json s = synth_to_json(c.synth);
  s["val_count"] = c.val_count;
  s["test_count"] = c.test_count;
  return json{{"synth", s},
              {"train", to_json(c.train)},
              {"sample", sample_to_json(c.sample)},
              {"metrics", metrics_to_json(c.metrics)}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw UsageError("run config must be a JSON object");
  RunConfig rc;
  try {
    for (const auto& [k, v] : j.items()) {
      if (!v.is_object()) throw UsageError("config section '" + k + "' must be an object");
      if (k == "synth") synth_from_json(v, rc);
      else if (k == "train") rc.train = train_config_from_json(v);
      else if (k == "sample") sample_from_json(v, rc.sample);
      else if (k == "metrics") metrics_from_json(v, rc.metrics);
      else throw UsageError("unknown config section '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config value has the wrong type: ") + e.what());
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

namespace {

void write_png(const fs::path& path, int width, int height, int color_type, int channels,
               const std::vector<std::uint8_t>& px) {
  if (px.size() != static_cast<std::size_t>(width) * height * channels) {
    throw InvalidArgument("png: pixel buffer size mismatch");
  }
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: write failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> stretch(std::span<const float> band) {
  const auto [lo, hi] = std::minmax_element(band.begin(), band.end());
  const double span = *hi - *lo;
  std::vector<std::uint8_t> out(band.size());
  for (std::size_t i = 0; i < band.size(); ++i) {
    const double v = span > 0 ? (band[i] - *lo) / span : 0.0;
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  return out;
}

}  // namespace

void write_png_gray(const fs::path& path, int width, int height, const std::vector<std::uint8_t>& px) {
  write_png(path, width, height, PNG_COLOR_TYPE_GRAY, 1, px);
}

void write_png_rgb(const fs::path& path, int width, int height, const std::vector<std::uint8_t>& px) {
  write_png(path, width, height, PNG_COLOR_TYPE_RGB, 3, px);
}

void write_preview(const fs::path& path, const ImageTensor& t) {
  if (t.bands() < 3) {
    write_png_gray(path, t.width(), t.height(), stretch(t.band(0)));
    return;
  }
  // Bands 2, 1, 0 as R, G, B.
  const auto r = stretch(t.band(2)), g = stretch(t.band(1)), b = stretch(t.band(0));
  std::vector<std::uint8_t> px(t.plane_size() * 3);
  for (std::size_t i = 0; i < t.plane_size(); ++i) {
    px[3 * i] = r[i];
    px[3 * i + 1] = g[i];
    px[3 * i + 2] = b[i];
  }
  write_png_rgb(path, t.width(), t.height(), px);
}

void write_error_map(const fs::path& path, const ImageTensor& fused, const ImageTensor& gt) {
  require_same_dims(fused, gt, "write_error_map");
  std::vector<double> err(fused.plane_size(), 0.0);
  for (int c = 0; c < fused.bands(); ++c)
    for (std::size_t i = 0; i < err.size(); ++i) err[i] += std::abs(fused.band(c)[i] - gt.band(c)[i]) / fused.bands();
  const double peak = *std::max_element(err.begin(), err.end());
  std::vector<std::uint8_t> px(err.size());
  for (std::size_t i = 0; i < err.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(peak > 0 ? std::lround(err[i] / peak * 255.0) : 0);
  }
  write_png_gray(path, fused.width(), fused.height(), px);
}

namespace {

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

// A dataset directory (<root>/<split>/manifest.json or <dir>/manifest.json) or a manifest file.
fs::path resolve_manifest(const fs::path& p, Split split) {
  if (fs::is_regular_file(p)) return p;
  if (fs::is_regular_file(p / to_string(split) / "manifest.json")) return p / to_string(split) / "manifest.json";
  if (fs::is_regular_file(p / "manifest.json")) return p / "manifest.json";
  throw IoError("no " + to_string(split) + " manifest under " + p.string());
}

void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

struct Overrides {
  std::ostream& log;
  template <typename T>
  void note(const CLI::Option* opt, const std::string& key, const T& value) {
    if (opt->count() > 0) log << "override " << key << " = " << json(value).dump() << '\n';
  }
};

std::string stem(std::size_t i) { return std::to_string(i); }

int cmd_synth(RunConfig rc, const fs::path& out_dir, std::ostream& out) {
  if (rc.synth.count < 1) throw UsageError("synth: --count must be >= 1");
  if (rc.val_count < 0 || rc.test_count < 0) throw UsageError("synth: split counts must be >= 0");
  try {
    rc.synth.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  ensure_dir(out_dir);
  out << "resolved config: " << to_json(rc).dump() << '\n';
  write_json(out_dir / "synth_config.json", to_json(rc)["synth"]);
  const std::pair<Split, int> splits[] = {
      {Split::train, rc.synth.count}, {Split::val, rc.val_count}, {Split::test, rc.test_count}};
  for (const auto& [split, n] : splits) {
    if (n == 0) continue;
    SynthConfig c = rc.synth;
    c.split = split;
    c.count = n;
    synth_dataset(c, out_dir);
    out << (out_dir / to_string(split) / "manifest.json").string() << '\n';
  }
  return 0;
}

int cmd_train(const RunConfig& rc, const fs::path& data, const fs::path& out_dir,
              const std::optional<fs::path>& resume, std::ostream& out) {
  const TrainConfig& cfg = rc.train;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const DatasetManifest m = load_manifest(resolve_manifest(data, Split::train));
  ensure_dir(out_dir);
  out << "resolved config: " << to_json(cfg).dump() << '\n';
  write_json(out_dir / "run_config.json", to_json(cfg));
  std::ofstream log(out_dir / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write train log in " + out_dir.string());
  TrainOptions opts;
  opts.checkpoint_dir = out_dir;
  opts.resume_from = resume;
  opts.log = &log;
  const int every = std::max(1, cfg.iterations / 20);
  opts.on_step = [&](const LogRecord& r) {
    if (r.step % every == 0 || r.step == cfg.iterations) {
      out << "step " << r.step << " loss " << r.loss << " grad_norm " << r.grad_norm << '\n';
    }
  };
  const TrainResult res = train(m, cfg, opts);
  out << "checkpoint " << out_dir.string() << " step " << res.state.step << " objective "
      << to_string(cfg.objective) << '\n';
  return 0;
}

int cmd_sample(const RunConfig& rc, const fs::path& ckpt_dir, const fs::path& data, const fs::path& out_dir,
               bool previews, std::ostream& out) {
  const Checkpoint ck = load_checkpoint_for_inference(ckpt_dir);
  const NoiseSchedule sch = cosine_schedule(ck.config.diffusion_steps, ck.config.schedule_offset);
  SamplerPlan plan;
  try {
    plan = rc.sample.kind == SamplerKind::ddpm
               ? respaced_plan(sch.steps(), sch.steps(), 1.0, SamplerKind::ddpm)
               : respaced_plan(sch.steps(), rc.sample.steps, rc.sample.eta, SamplerKind::ddim);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const DatasetManifest m = load_manifest(resolve_manifest(data, Split::test));
  ensure_dir(out_dir);
  out << "resolved config: " << sample_to_json(rc.sample).dump() << " checkpoint step " << ck.state.step << '\n';
  json record{{"checkpoint", fs::absolute(ckpt_dir).string()},
               {"sample", sample_to_json(rc.sample)},
               {"residual", ck.config.residual},
               {"images", json::array()}};
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const FusionSample s = load_sample(m, i);
    if (s.lrms_up.bands() != ck.config.model.in_bands) {
      throw ConfigError("sample: data has " + std::to_string(s.lrms_up.bands()) + " bands, checkpoint expects " +
                        std::to_string(ck.config.model.in_bands));
    }
    const ConditionBundle cond = make_condition_bundle(s.pan, s.lrms_up);
    int calls = 0;
    const ImageTensor fused =
        sample(cond, plan, ck.state.ema, ck.config.model, sch, rc.sample.seed + i, ck.config.residual, &calls);
    const fs::path ten = out_dir / (stem(i) + "_fused.ten");
    write_tensor(fused, ten);
    json im{{"index", i}, {"fused", ten.filename().string()}, {"denoiser_calls", calls}};
    if (previews) {
      write_preview(out_dir / (stem(i) + "_fused.png"), fused);
      if (s.gt) {
        write_error_map(out_dir / (stem(i) + "_error.png"), fused, *s.gt);
        im["error_map"] = stem(i) + "_error.png";
      }
    }
    record["images"].push_back(im);
    out << "image " << i << ": " << calls << " denoiser calls -> " << ten.string() << '\n';
  }
  write_json(out_dir / "sample_log.json", record);
  return 0;
}

int cmd_eval(const RunConfig& rc, const fs::path& fused_dir, const fs::path& data, const fs::path& report_path,
             const std::string& label, std::ostream& out) {
  try {
    rc.metrics.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const DatasetManifest m = load_manifest(resolve_manifest(data, Split::test));
  std::vector<ImageMetrics> fused_rows, base_rows;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const FusionSample s = load_sample(m, i);
    const fs::path p = fused_dir / (stem(i) + "_fused.ten");
    if (!fs::exists(p)) throw IoError("missing fused image " + p.string());
    const ImageTensor fused = read_tensor(p);
    fused_rows.push_back({stem(i), evaluate(s, fused, rc.metrics)});
    base_rows.push_back({stem(i), evaluate(s, s.lrms_up, rc.metrics)});
  }
  const std::vector<MetricReport> rows{summarize(label, std::move(fused_rows)),
                                       summarize("baseline", std::move(base_rows))};
  json report = report_to_json(rows, rc.metrics);
  if (!report_path.parent_path().empty()) ensure_dir(report_path.parent_path());
  write_json(report_path, report);
  out << report_table(rows);
  out << "report " << report_path.string() << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-based pansharpening toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  fs::path config_path;
  app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic Wald-protocol dataset");
  fs::path synth_out;
  std::uint64_t synth_seed = 0;
  int count = 0, val_count = 0, test_count = 0, bands = 0, patch = 0;
  synth->add_option("--out", synth_out, "Dataset root");
  auto* o_sseed = synth->add_option("--seed", synth_seed);
  auto* o_count = synth->add_option("--count", count, "Training images");
  auto* o_vcount = synth->add_option("--val-count", val_count);
  auto* o_tcount = synth->add_option("--test-count", test_count);
  auto* o_bands = synth->add_option("--bands", bands);
  auto* o_patch = synth->add_option("--patch", patch);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the denoiser");
  fs::path train_data, train_out, resume_dir;
  std::string objective, loss;
  int iterations = 0, batch = 0, base = 0, ckpt_every = 0;
  double lr = 0.0;
  std::uint64_t train_seed = 0;
  bool no_residual = false, no_style = false, no_wave = false;
  train_cmd->add_option("--data", train_data, "Dataset root or manifest")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint directory");
  auto* o_obj = train_cmd->add_option("--objective", objective)->check(CLI::IsMember({"epsilon", "x0", "v"}));
  auto* o_loss = train_cmd->add_option("--loss", loss)->check(CLI::IsMember({"l1", "l2"}));
  auto* o_iter = train_cmd->add_option("--iterations", iterations);
  auto* o_batch = train_cmd->add_option("--batch-size", batch);
  auto* o_lr = train_cmd->add_option("--lr", lr);
  auto* o_tseed = train_cmd->add_option("--seed", train_seed);
  auto* o_base = train_cmd->add_option("--base-channels", base);
  auto* o_every = train_cmd->add_option("--checkpoint-every", ckpt_every);
  auto* f_nores = train_cmd->add_flag("--no-residual", no_residual, "Regress HRMS instead of HRMS - LrMS");
  auto* f_nostyle = train_cmd->add_flag("--no-style-mod", no_style, "Disable style modulation");
  auto* f_nowave = train_cmd->add_flag("--no-wavelet-mod", no_wave, "Disable wavelet modulation");
  auto* o_resume = train_cmd->add_option("--resume", resume_dir, "Continue from a checkpoint")->check(CLI::ExistingDirectory);
  for (auto* o : {o_obj, o_loss, o_batch, o_lr, o_tseed, o_base, f_nores, f_nostyle, f_nowave}) o_resume->excludes(o);

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Fuse images with a trained checkpoint");
  fs::path ckpt, sample_data, sample_out;
  int steps = 0;
  double eta = 0.0;
  std::uint64_t sample_seed = 0;
  std::string sampler_kind;
  bool no_preview = false;
  sample_cmd->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingDirectory);
  sample_cmd->add_option("--data", sample_data, "Dataset root or manifest")->required();
  sample_cmd->add_option("--out", sample_out, "Output directory");
  auto* o_steps = sample_cmd->add_option("--steps", steps);
  auto* o_eta = sample_cmd->add_option("--eta", eta);
  auto* o_sseed2 = sample_cmd->add_option("--seed", sample_seed);
  auto* o_kind = sample_cmd->add_option("--sampler", sampler_kind)->check(CLI::IsMember({"ddim", "ddpm"}));
  sample_cmd->add_flag("--no-preview", no_preview, "Skip PNG previews");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score fused images against the dataset");
  fs::path fused_dir, eval_data, report_path;
  std::string label = "fused";
  int window = 0;
  eval_cmd->add_option("--fused", fused_dir)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--data", eval_data, "Dataset root or manifest")->required();
  eval_cmd->add_option("--report", report_path, "Report JSON path (default <fused>/report.json)");
  eval_cmd->add_option("--label", label, "Row name for the fused images");
  auto* o_window = eval_cmd->add_option("--window", window, "UIQI window");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    Overrides ov{out};
    const fs::path root = output_root();
    if (*synth) {
      if (o_sseed->count()) rc.synth.seed = synth_seed;
      if (o_count->count()) rc.synth.count = count;
      if (o_vcount->count()) rc.val_count = val_count;
      if (o_tcount->count()) rc.test_count = test_count;
      if (o_bands->count()) rc.synth.bands = bands;
      if (o_patch->count()) rc.synth.patch = patch;
      ov.note(o_sseed, "synth.seed", synth_seed);
      ov.note(o_count, "synth.count", count);
      ov.note(o_vcount, "synth.val_count", val_count);
      ov.note(o_tcount, "synth.test_count", test_count);
      ov.note(o_bands, "synth.bands", bands);
      ov.note(o_patch, "synth.patch", patch);
      return cmd_synth(rc, synth_out.empty() ? root / "data" : synth_out, out);
    }
    if (*train_cmd) {
      TrainConfig& t = rc.train;
      // A resumed run keeps the checkpoint's config apart from the step budget.
      if (!resume_dir.empty()) t = load_checkpoint_for_inference(resume_dir).config;
      try {
        if (o_obj->count()) {
          t.objective = prediction_kind_from_string(objective);
          t.model.prediction_kind = t.objective;
        }
        if (o_loss->count()) t.loss = loss_kind_from_string(loss);
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      if (o_iter->count()) t.iterations = iterations;
      if (o_batch->count()) t.batch_size = batch;
      if (o_lr->count()) t.lr = lr;
      if (o_tseed->count()) t.seed = train_seed;
      if (o_base->count()) t.model.base_channels = base;
      if (o_every->count()) t.checkpoint_every = ckpt_every;
      if (no_residual) t.residual = false;
      if (no_style) t.model.style_modulation = false;
      if (no_wave) t.model.wavelet_modulation = false;
      ov.note(o_obj, "train.objective", objective);
      ov.note(o_loss, "train.loss", loss);
      ov.note(o_iter, "train.iterations", iterations);
      ov.note(o_batch, "train.batch_size", batch);
      ov.note(o_lr, "train.lr", lr);
      ov.note(o_tseed, "train.seed", train_seed);
      ov.note(o_base, "train.model.base_channels", base);
      ov.note(o_every, "train.checkpoint_every", ckpt_every);
      ov.note(f_nores, "train.residual", false);
      ov.note(f_nostyle, "train.model.style_modulation", false);
      ov.note(f_nowave, "train.model.wavelet_modulation", false);
      std::optional<fs::path> resume;
      if (!resume_dir.empty()) resume = resume_dir;
      const fs::path dest = train_out.empty() ? (resume ? resume_dir : root / "checkpoint") : train_out;
      return cmd_train(rc, train_data, dest, resume, out);
    }
    if (*sample_cmd) {
      if (o_steps->count()) rc.sample.steps = steps;
      if (o_eta->count()) rc.sample.eta = eta;
      if (o_sseed2->count()) rc.sample.seed = sample_seed;
      if (o_kind->count()) rc.sample.kind = sampler_kind_from_string(sampler_kind);
      ov.note(o_steps, "sample.steps", steps);
      ov.note(o_eta, "sample.eta", eta);
      ov.note(o_sseed2, "sample.seed", sample_seed);
      ov.note(o_kind, "sample.kind", sampler_kind);
      return cmd_sample(rc, ckpt, sample_data, sample_out.empty() ? root / "fused" : sample_out, !no_preview, out);
    }
    if (*eval_cmd) {
      if (o_window->count()) rc.metrics.uiqi_window = window;
      ov.note(o_window, "metrics.uiqi_window", window);
      return cmd_eval(rc, fused_dir, eval_data, report_path.empty() ? fused_dir / "report.json" : report_path,
                      label, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace pandiff
