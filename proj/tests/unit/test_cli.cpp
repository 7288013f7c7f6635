#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "chaosemu/cli.hpp"
#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

using namespace chaosemu;
using namespace chaosemu::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("chaosemu_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "chaosemu");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small Lorenz-96 experiment rooted at `root`.
fs::path write_tiny_config(const fs::path& root) {
  const std::string text =
      "[system]\n"
      "dimension = 12\n"
      "[data]\n"
      "dir = " + (root / "data").string() + "\n"
      "count = 10\n"
      "horizon = 60\n"
      "seed = 4\n"
      "[model]\n"
      "width = 6\n"
      "blocks = 2\n"
      "modes = 4\n"
      "[train]\n"
      "epochs = 2\n"
      "batch = 2\n"
      "K = 11\n"
      "val_windows = 3\n"
      "[encoder]\n"
      "dir = " + (root / "enc").string() + "\n"
      "epochs = 2\n"
      "batch = 4\n"
      "K = 11\n"
      "base_channels = 2\n"
      "embedding = 4\n"
      "[eval]\n"
      "horizon = 40\n"
      "[output]\n"
      "dir = " + (root / "run").string() + "\n";
  const auto path = root / "tiny.ini";
  io::write_text(path, text);
  return path;
}

void write_summary(const fs::path& dir, double lambda, double rmse, double feature) {
  fs::create_directories(dir);
  const nlohmann::json j{{"lambda", lambda}, {"val_rmse", rmse}, {"val_aux", feature}};
  io::write_text(dir / "summary.json", j.dump());
}

}  // namespace

TEST_CASE("config defaults and system presets") {
  const ExperimentConfig l96;
  CHECK(l96.system.kind == dynsys::SystemKind::Lorenz96);
  CHECK(l96.data.count == 200);
  CHECK(l96.train.epochs == 500);
  CHECK(l96.train.objective.alpha == doctest::Approx(0.01));
  CHECK(l96.train.objective.sinkhorn.gamma == doctest::Approx(0.02));
  CHECK(l96.train.objective.lambda == doctest::Approx(0.8));
  CHECK(l96.sweep_values.size() == 7);
  CHECK_NOTHROW(l96.validate());

  const auto ks = ExperimentConfig::for_system(dynsys::SystemKind::KuramotoSivashinsky);
  CHECK(ks.system.kind == dynsys::SystemKind::KuramotoSivashinsky);
  CHECK(ks.data.phi_lo == 1.0);
  CHECK(ks.data.phi_hi == 2.6);
  CHECK(ks.train.objective.alpha == 1.0);
  CHECK(ks.train.objective.sinkhorn.gamma == doctest::Approx(0.05));
  CHECK_NOTHROW(ks.validate());
}

TEST_CASE("shipped example configs load and validate") {
  for (const char* name : {"l96_desk.ini", "ks_desk.ini"}) {
    CAPTURE(name);
    const auto cfg = ExperimentConfig::from_ini(fs::path(CHAOSEMU_SOURCE_DIR) / "configs" / name);
    CHECK_NOTHROW(cfg.validate());
  }
  const auto ks = ExperimentConfig::from_ini(fs::path(CHAOSEMU_SOURCE_DIR) / "configs" / "ks_desk.ini");
  CHECK(ks.system.kind == dynsys::SystemKind::KuramotoSivashinsky);
  CHECK(ks.train.objective.kind == loss::Objective::FeatureRmse);
  CHECK(ks.system.dimension == 256);
}

TEST_CASE("ini parsing applies the system kind before other keys") {
  const auto c = ExperimentConfig::from_ini_string(
      "[loss]\nobjective = sinkhorn\nalpha = 0.5\n[system]\ndimension = 64\nkind = ks\n[data]\nnoise_r = 0.1\n");
  CHECK(c.system.kind == dynsys::SystemKind::KuramotoSivashinsky);
  CHECK(c.system.dimension == 64);
  CHECK(c.train.objective.kind == loss::Objective::SinkhornRmse);
  CHECK(c.train.objective.alpha == 0.5);
  CHECK(c.data.noise_r == 0.1);
  CHECK(c.data.phi_hi == 2.6);
}

TEST_CASE("ini round trip through to_ini") {
  auto c = ExperimentConfig::for_system(dynsys::SystemKind::KuramotoSivashinsky);
  c.set("sweep.values", "0.2, 0.4 1.2");
  c.set("loss.objective", "feature");
  c.set("train.lr", "0.0003");
  c.set("robustness.measurement_noise", "yes");
  const std::string text = c.to_ini();
  const auto back = ExperimentConfig::from_ini_string(text);
  CHECK(back.to_ini() == text);
  CHECK(back.sweep_values == std::vector<double>{0.2, 0.4, 1.2});
  CHECK(back.train.optimizer.learning_rate == 3e-4);
  CHECK(back.robustness.measurement_noise);
  for (const auto& key : ExperimentConfig::keys()) CHECK(back.get(key) == c.get(key));
}

TEST_CASE("config errors") {
  ExperimentConfig c;
  CHECK_THROWS_AS(c.set("train.nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("train.epochs", "-3"), ConfigError);
  CHECK_THROWS_AS(c.set("train.epochs", "3x"), ConfigError);
  CHECK_THROWS_AS(c.set("loss.objective", "mse"), ConfigError);
  CHECK_THROWS_AS(c.set("loss.standardize", "maybe"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_ini_string("[train\nepochs = 1\n"), ConfigError);

  auto bad_range = c;
  bad_range.data.phi_lo = 18.0;
  bad_range.data.phi_hi = 18.0;
  CHECK_THROWS_AS(bad_range.validate(), ConfigError);
  auto bad_h = c;
  bad_h.train.objective.h = 4;
  CHECK_THROWS_AS(bad_h.validate(), ConfigError);
  auto bad_grid = c;
  bad_grid.robustness.r_grid = {0.1, 0.3};
  CHECK_THROWS_AS(bad_grid.validate(), ConfigError);
  auto bad_model = c;
  bad_model.eval_model = "oracle";
  CHECK_THROWS_AS(bad_model.validate(), ConfigError);
}

TEST_CASE("lambda selection") {
  SUBCASE("a lone lambda = 0 run is chosen") {
    const std::vector<SweepPoint> runs{{0.0, 0.2, 0.5}};
    CHECK(select_lambda(runs, 1.1).lambda == 0.0);
  }
  SUBCASE("feature loss falls until 0.8 and then plateaus") {
    const std::vector<SweepPoint> runs{{0.0, 0.200, 0.50}, {0.2, 0.205, 0.40}, {0.4, 0.208, 0.33}, {0.6, 0.210, 0.29},
                                       {0.8, 0.212, 0.25}, {1.0, 0.214, 0.25}, {1.2, 0.216, 0.25}};
    const auto choice = select_lambda(runs, 1.1);
    CHECK(choice.lambda == doctest::Approx(0.8));
    CHECK(choice.warning.empty());
    CHECK(choice.rmse_bar == doctest::Approx(0.22));
  }
  SUBCASE("runs above the rMSE bar are excluded") {
    const std::vector<SweepPoint> runs{{0.0, 0.2, 0.5}, {0.4, 0.21, 0.4}, {0.8, 0.3, 0.1}};
    CHECK(select_lambda(runs, 1.1).lambda == doctest::Approx(0.4));
  }
  SUBCASE("every run above the bar falls back to zero with a warning") {
    const std::vector<SweepPoint> runs{{0.0, 0.2, 0.5}, {0.4, 0.25, 0.4}, {0.8, 0.3, 0.1}};
    const auto choice = select_lambda(runs, 1.1);
    CHECK(choice.lambda == 0.0);
    CHECK_FALSE(choice.warning.empty());
  }
  SUBCASE("a sweep without lambda = 0 is rejected") {
    const std::vector<SweepPoint> runs{{0.4, 0.2, 0.5}};
    CHECK_THROWS_AS(select_lambda(runs, 1.1), ConfigError);
  }
}

TEST_CASE("select-lambda reads run summaries") {
  const auto root = fresh_dir("select");
  write_summary(root / "lambda_0", 0.0, 0.2, 0.5);
  write_summary(root / "lambda_0.4", 0.4, 0.21, 0.3);
  write_summary(root / "lambda_0.8", 0.8, 0.5, 0.1);
  const auto r = invoke({"select-lambda", root.string()});
  CHECK(r.code == kExitOk);
  const auto sel = nlohmann::json::parse(io::read_text(root / "selection.json"));
  CHECK(sel["lambda"].get<double>() == doctest::Approx(0.4));
  CHECK(sel["runs"].size() == 3);

  const auto empty = fresh_dir("select_empty");
  CHECK(invoke({"select-lambda", empty.string()}).code == kExitIo);
}

TEST_CASE("generate is reproducible and validated before any IO") {
  const auto root = fresh_dir("generate");
  const auto ini = write_tiny_config(root);
  const auto a = invoke({"generate", "--config", ini.string()});
  REQUIRE(a.code == kExitOk);
  CHECK(a.out.find("10 environments") != std::string::npos);
  const auto b = invoke({"generate", "--config", ini.string(), "--data.dir", (root / "again").string()});
  REQUIRE(b.code == kExitOk);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(root / "data")) {
    CHECK(bytes(e.path()) == bytes(root / "again" / e.path().filename()));
    ++files;
  }
  CHECK(files == 21);

  const auto bad = invoke({"generate", "--config", ini.string(), "--data.phi_lo", "20", "--data.dir",
                           (root / "bad").string()});
  CHECK(bad.code == kExitConfig);
  CHECK_FALSE(fs::exists(root / "bad"));

  const auto again = invoke({"generate", "--config", ini.string()});
  CHECK(again.code == kExitIo);
  CHECK(invoke({"generate", "--config", ini.string(), "--force"}).code == kExitOk);
}

TEST_CASE("exit codes") {
  const auto root = fresh_dir("codes");
  const auto ini = write_tiny_config(root);
  CHECK(invoke({}).code == kExitConfig);
  CHECK(invoke({"generate", "--no-such-flag"}).code == kExitConfig);
  CHECK(invoke({"generate", "--train.epochs", "many"}).code == kExitConfig);
  CHECK(invoke({"train", "--config", (root / "missing.ini").string()}).code == kExitIo);
  CHECK(invoke({"train", "--config", ini.string()}).code == kExitIo);
  REQUIRE(invoke({"generate", "--config", ini.string()}).code == kExitOk);
  CHECK(invoke({"train", "--config", ini.string(), "--loss.objective", "feature"}).code == kExitConfig);
  const auto wild = invoke({"train", "--config", ini.string(), "--train.lr", "1e12", "--output.dir",
                            (root / "wild").string()});
  CHECK(wild.code == kExitDivergence);
  CHECK(wild.err.find("divergence") != std::string::npos);
  CHECK(invoke({"--help"}).code == kExitOk);
}

TEST_CASE("train, eval and sweep pipeline") {
  const auto root = fresh_dir("pipeline");
  const auto ini = write_tiny_config(root);
  const std::string cfg = ini.string();
  REQUIRE(invoke({"generate", "--config", cfg}).code == kExitOk);

  const auto t1 = invoke({"train", "--config", cfg});
  REQUIRE(t1.code == kExitOk);
  CHECK(fs::exists(root / "run" / "checkpoint"));
  CHECK(fs::exists(root / "run" / "config.ini"));
  const auto log = train::read_train_log(root / "run" / "train_log.csv");
  CHECK(log.size() == 2);
  const auto summary = nlohmann::json::parse(io::read_text(root / "run" / "summary.json"));
  CHECK(summary["objective"] == "rmse");

  CHECK(invoke({"train", "--config", cfg}).code == kExitIo);
  const auto t2 = invoke({"train", "--config", cfg, "--output.dir", (root / "run2").string()});
  REQUIRE(t2.code == kExitOk);
  CHECK(bytes(root / "run" / "train_log.csv") == bytes(root / "run2" / "train_log.csv"));
  CHECK(bytes(root / "run" / "checkpoint" / "params.f64") == bytes(root / "run2" / "checkpoint" / "params.f64"));

  const auto e = invoke({"eval", "--config", cfg});
  REQUIRE(e.code == kExitOk);
  CHECK(fs::exists(root / "run" / "eval" / "eval.csv"));
  CHECK(fs::exists(root / "run" / "eval" / "histograms.csv"));
  const auto truth = invoke({"eval", "--config", cfg, "--eval.model", "truth", "--eval.dir", (root / "truth").string()});
  REQUIRE(truth.code == kExitOk);
  const auto report = nlohmann::json::parse(io::read_text(root / "truth" / "report.json"));
  CHECK(report["mean_histogram_error"].get<double>() < 1e-6);
  CHECK(report["mean_spectrum_error"].get<double>() < 1e-6);
  const auto zero = invoke({"eval", "--config", cfg, "--eval.model", "zero", "--eval.dir", (root / "zero").string()});
  REQUIRE(zero.code == kExitOk);
  const auto zreport = nlohmann::json::parse(io::read_text(root / "zero" / "report.json"));
  CHECK(zreport["mean_rmse"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));

  REQUIRE(invoke({"train-encoder", "--config", cfg}).code == kExitOk);
  CHECK(fs::exists(root / "enc" / "checkpoint"));
  CHECK(fs::exists(root / "enc" / "encoder_log.csv"));

  const auto sw = invoke({"sweep", "--config", cfg, "--loss.objective", "feature", "--sweep.values", "0,0.4,0.8",
                          "--train.epochs", "1", "--output.dir", (root / "sweep").string()});
  REQUIRE(sw.code == kExitOk);
  for (const char* d : {"lambda_0", "lambda_0.4", "lambda_0.8"}) CHECK(fs::exists(root / "sweep" / d / "summary.json"));
  CHECK(fs::exists(root / "sweep" / "sweep.csv"));
  const auto sel = invoke({"select-lambda", "--config", cfg, "--output.dir", (root / "sweep").string()});
  CHECK(sel.code == kExitOk);
  CHECK(fs::exists(root / "sweep" / "selection.json"));
}

TEST_CASE("robustness writes per-seed and averaged tables") {
  const auto root = fresh_dir("robust");
  const auto r = invoke({"robustness", "--robustness.steps", "50", "--robustness.seeds", "2", "--robustness.r_grid",
                         "0,0.1", "--output.dir", root.string(), "--force"});
  REQUIRE(r.code == kExitOk);
  const std::string all = io::read_text(root / "robustness.csv");
  const std::string mean = io::read_text(root / "robustness_mean.csv");
  CHECK(std::count(all.begin(), all.end(), '\n') == 5);
  CHECK(std::count(mean.begin(), mean.end(), '\n') == 3);
}
