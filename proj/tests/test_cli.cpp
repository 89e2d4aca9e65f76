#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "pandiff/cli.hpp"
#include "pandiff/tensor_io.hpp"

using namespace pandiff;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::initializer_list<std::string> args) {
  std::vector<std::string> store{"pandiff"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : store) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

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

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

// Small dataset and a 4-step checkpoint shared by the command tests.
struct Fixture {
  fs::path root = scratch("pandiff_cli_fixture");
  fs::path data = root / "data";
  fs::path ckpt = root / "ckpt";
  fs::path config = root / "run.json";
  Fixture() {
    fs::create_directories(root);
    write_file(config, R"({"train": {"model": {"base_channels": 8, "channel_multipliers": [1, 2]}}})");
    REQUIRE(run({"synth", "--out", data.string(), "--count", "4", "--test-count", "2", "--patch", "16"}).code == 0);
    const Run t = run({"--config", config.string(), "train", "--data", data.string(), "--out", ckpt.string(),
                       "--iterations", "4", "--batch-size", "2"});
    REQUIRE(t.code == 0);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  CHECK(run({"synth", "--no-such-flag"}).code == 2);
  CHECK(run({"synth", "--count", "0", "--out", scratch("pandiff_cli_zero").string()}).code == 2);
  CHECK(run({"synth", "--patch", "30", "--out", scratch("pandiff_cli_patch").string()}).code == 2);
  CHECK(run({"train"}).code == 2);
  CHECK(run({"--config", "/nonexistent.json", "synth"}).code == 2);
}

TEST_CASE("unknown config keys are usage errors") {
  const fs::path dir = scratch("pandiff_cli_cfg");
  fs::create_directories(dir);
  write_file(dir / "bad.json", R"({"train": {"learning_rate": 0.1}})");
  const Run r = run({"--config", (dir / "bad.json").string(), "synth", "--out", (dir / "d").string()});
  CHECK(r.code == 2);
  write_file(dir / "bad2.json", R"({"render": {}})");
  CHECK(run({"--config", (dir / "bad2.json").string(), "synth", "--out", (dir / "d").string()}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("run config json round trip") {
  RunConfig rc;
  rc.synth.seed = 11;
  rc.test_count = 3;
  rc.sample.steps = 7;
  rc.metrics.uiqi_window = 16;
  rc.train.lr = 3e-4;
  CHECK(to_json(run_config_from_json(to_json(rc))) == to_json(rc));
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"sample", {{"stepz", 3}}}}), UsageError);
}

TEST_CASE("synth is reproducible and creates its output") {
  const fs::path a = scratch("pandiff_cli_synth_a") / "nested", b = scratch("pandiff_cli_synth_b");
  const Run ra = run({"synth", "--seed", "7", "--count", "2", "--test-count", "1", "--patch", "16", "--out", a.string()});
  CHECK(ra.code == 0);
  CHECK(ra.out.find("override synth.seed = 7") != std::string::npos);
  CHECK(ra.out.find((a / "train" / "manifest.json").string()) != std::string::npos);
  CHECK(run({"synth", "--seed", "7", "--count", "2", "--test-count", "1", "--patch", "16", "--out", b.string()}).code == 0);
  for (const char* split : {"train", "test"})
    for (const auto& e : fs::directory_iterator(a / split)) CHECK(slurp(e.path()) == slurp(b / split / e.path().filename()));
  CHECK(fs::exists(a / "synth_config.json"));
  fs::remove_all(a.parent_path());
  fs::remove_all(b);
}

TEST_CASE("output root comes from the environment") {
  const fs::path root = scratch("pandiff_cli_env");
  ::setenv(kOutputRootEnv, root.string().c_str(), 1);
  const Run r = run({"synth", "--count", "1", "--test-count", "0", "--patch", "16"});
  ::unsetenv(kOutputRootEnv);
  CHECK(r.code == 0);
  CHECK(fs::exists(root / "data" / "train" / "manifest.json"));
  fs::remove_all(root);
}

TEST_CASE("train writes a checkpoint echoing the objective") {
  const Fixture& f = fixture();
  const auto manifest = nlohmann::json::parse(slurp(f.ckpt / "manifest.json"));
  CHECK(manifest["step"] == 4);
  CHECK(manifest["config"]["objective"] == "x0");
  CHECK(manifest["config"]["residual"] == true);
  CHECK(fs::exists(f.ckpt / "run_config.json"));
  std::ifstream log(f.ckpt / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 4);
}

TEST_CASE("train ablation flags and conflicts") {
  const Fixture& f = fixture();
  const fs::path out = scratch("pandiff_cli_ablate");
  const Run r = run({"--config", f.config.string(), "train", "--data", f.data.string(), "--out", out.string(),
                     "--iterations", "1", "--batch-size", "1", "--objective", "v", "--no-residual", "--no-style-mod",
                     "--no-wavelet-mod"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("override train.residual = false") != std::string::npos);
  const auto cfg = nlohmann::json::parse(slurp(out / "manifest.json"))["config"];
  CHECK(cfg["objective"] == "v");
  CHECK(cfg["model"]["prediction_kind"] == "v");
  CHECK(cfg["residual"] == false);
  CHECK(cfg["model"]["style_modulation"] == false);
  CHECK(cfg["model"]["wavelet_modulation"] == false);
  CHECK(run({"train", "--data", f.data.string(), "--resume", f.ckpt.string(), "--objective", "v"}).code == 2);
  CHECK(run({"train", "--data", f.data.string(), "--objective", "z"}).code == 2);
  CHECK(run({"train", "--data", f.data.string(), "--iterations", "0", "--out", out.string()}).code == 2);
  CHECK(run({"train", "--data", (out / "nowhere").string(), "--out", out.string()}).code == 1);
  fs::remove_all(out);
}

TEST_CASE("train resumes from a checkpoint") {
  const Fixture& f = fixture();
  const fs::path copy = scratch("pandiff_cli_resume");
  fs::copy(f.ckpt, copy, fs::copy_options::recursive);
  const Run r = run({"train", "--data", f.data.string(), "--resume", copy.string(), "--iterations", "6"});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(slurp(copy / "manifest.json"))["step"] == 6);
  std::ifstream log(copy / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 6);
  fs::remove_all(copy);
}

TEST_CASE("sample is deterministic and writes previews") {
  const Fixture& f = fixture();
  const fs::path a = scratch("pandiff_cli_sample_a"), b = scratch("pandiff_cli_sample_b");
  const Run ra = run({"sample", "--checkpoint", f.ckpt.string(), "--data", f.data.string(), "--out", a.string(),
                      "--steps", "5", "--seed", "3"});
  REQUIRE(ra.code == 0);
  CHECK(ra.out.find("image 0: 5 denoiser calls") != std::string::npos);
  CHECK(ra.out.find("image 1: 5 denoiser calls") != std::string::npos);
  REQUIRE(run({"sample", "--checkpoint", f.ckpt.string(), "--data", f.data.string(), "--out", b.string(), "--steps",
               "5", "--seed", "3", "--no-preview"}).code == 0);
  for (int i = 0; i < 2; ++i) {
    const std::string n = std::to_string(i) + "_fused.ten";
    CHECK(slurp(a / n) == slurp(b / n));
    CHECK(fs::exists(a / (std::to_string(i) + "_fused.png")));
    CHECK(fs::exists(a / (std::to_string(i) + "_error.png")));
    CHECK_FALSE(fs::exists(b / (std::to_string(i) + "_fused.png")));
  }
  const auto png = slurp(a / "0_error.png");
  CHECK(png.substr(1, 3) == "PNG");
  const auto log = nlohmann::json::parse(slurp(a / "sample_log.json"));
  CHECK(log["images"].size() == 2);
  CHECK(log["images"][0]["denoiser_calls"] == 5);
  CHECK(run({"sample", "--checkpoint", f.ckpt.string(), "--data", f.data.string(), "--out", a.string(), "--steps", "600"}).code == 2);
  CHECK(run({"sample", "--checkpoint", f.ckpt.string(), "--data", f.data.string(), "--out", a.string(), "--sampler", "euler"}).code == 2);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("full-length ddpm sampling") {
  const Fixture& f = fixture();
  const fs::path out = scratch("pandiff_cli_ddpm");
  const Run r = run({"sample", "--checkpoint", f.ckpt.string(), "--data", f.data.string(), "--out", out.string(),
                     "--sampler", "ddpm", "--no-preview"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("image 0: 500 denoiser calls") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("eval scores copies of the ground truth as perfect") {
  const Fixture& f = fixture();
  const fs::path fused = scratch("pandiff_cli_eval");
  fs::create_directories(fused);
  const DatasetManifest m = load_manifest(f.data / "test" / "manifest.json");
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    write_tensor(*load_sample(m, i).gt, fused / (std::to_string(i) + "_fused.ten"));
  const Run r = run({"eval", "--fused", fused.string(), "--data", f.data.string(), "--label", "gt-copy", "--window", "8"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("baseline") != std::string::npos);
  const auto rep = nlohmann::json::parse(slurp(fused / "report.json"));
  REQUIRE(rep["rows"].size() == 2);
  CHECK(rep["rows"][0]["method"] == "gt-copy");
  CHECK(rep["rows"][0]["mean"]["sam"] == 0.0);
  CHECK(rep["rows"][0]["mean"]["ergas"] == 0.0);
  CHECK(rep["rows"][0]["mean"]["psnr"] == "inf");
  CHECK(rep["rows"][1]["method"] == "baseline");
  CHECK(rep["rows"][1]["mean"]["ergas"].get<double>() > 0.0);
  fs::remove(fused / "1_fused.ten");
  CHECK(run({"eval", "--fused", fused.string(), "--data", f.data.string()}).code == 1);
  fs::remove_all(fused);
}
