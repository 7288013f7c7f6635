#include "chaosemu/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"
#include "chaosemu/version.hpp"

namespace chaosemu::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_config(const ExperimentConfig& cfg, const fs::path& dir) { io::write_text(dir / "config.ini", cfg.to_ini()); }

data::Dataset load_training_data(const ExperimentConfig& cfg) {
  data::Dataset ds = data::load_dataset(cfg.data_dir);
  if (cfg.blur_std > 0.0) {
    for (auto& t : ds.trajectories) t.states = metrics::gaussian_blur(t.states, cfg.blur_std);
  }
  return ds;
}

std::optional<enc::Encoder> load_encoder(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.encoder_dir / "checkpoint";
  if (cfg.train.objective.kind == loss::Objective::FeatureRmse) {
    if (!fs::exists(dir)) {
      throw ConfigError("train: the feature objective needs an encoder checkpoint at " + dir.string());
    }
    return enc::Encoder::load(dir);
  }
  if (fs::exists(dir)) return enc::Encoder::load(dir);
  return std::nullopt;
}

}  // namespace

data::Dataset cmd_generate(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  cfg.validate();
  io::prepare_output_dir(cfg.data_dir, force);
  const data::Dataset ds = data::generate_dataset(cfg.system, cfg.data);
  data::save_dataset(ds, cfg.data_dir);
  out << "generated " << ds.size() << " environments of " << dynsys::to_string(ds.spec.kind) << " in "
      << cfg.data_dir.string() << "\n"
      << "  states [" << ds.horizon() + 1 << ", " << ds.spec.dimension << "] per environment, phi in ["
      << format_number(cfg.data.phi_lo) << ", " << format_number(cfg.data.phi_hi) << "]\n"
      << "  noise r = " << format_number(cfg.data.noise_r) << ", seed = " << cfg.data.seed << "\n"
      << "  split train/val/test = " << ds.indices(data::Split::Train).size() << "/"
      << ds.indices(data::Split::Val).size() << "/" << ds.indices(data::Split::Test).size() << "\n";
  return ds;
}

enc::EncoderTrainResult cmd_train_encoder(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  cfg.validate();
  const data::Dataset ds = load_training_data(cfg);
  io::prepare_output_dir(cfg.encoder_dir, force);
  write_config(cfg, cfg.encoder_dir);
  enc::EncoderTrainConfig ec = cfg.encoder;
  ec.architecture.dimension = ds.spec.dimension;
  const auto train_idx = ds.indices(data::Split::Train);
  const auto val_idx = ds.indices(data::Split::Val);
  auto res = enc::train_encoder(ds, train_idx, val_idx, ec, {}, [&](const enc::EncoderLogRow& r) {
    if (!std::isnan(r.val_top1)) {
      out << "encoder epoch " << r.epoch << " tau " << format_number(r.tau) << " loss " << r.loss << " top1 "
          << r.val_top1 << "\n";
    }
  });
  res.model.save(cfg.encoder_dir / "checkpoint");
  std::ostringstream log;
  log << "epoch,tau,loss,val_top1\n";
  for (const auto& r : res.log) {
    log << r.epoch << "," << format_number(r.tau) << "," << format_number(r.loss) << "," << format_number(r.val_top1)
        << "\n";
  }
  io::write_text(cfg.encoder_dir / "encoder_log.csv", log.str());
  out << "encoder saved to " << (cfg.encoder_dir / "checkpoint").string() << "\n";
  return res;
}

train::TrainResult cmd_train(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  cfg.validate();
  const data::Dataset ds = load_training_data(cfg);
  const std::optional<enc::Encoder> encoder = load_encoder(cfg);
  io::prepare_output_dir(cfg.output_dir, force);
  write_config(cfg, cfg.output_dir);

  const std::size_t report_every = std::max<std::size_t>(1, cfg.train.epochs / 10);
  auto res = train::train_emulator(ds, cfg.train, encoder ? &*encoder : nullptr, [&](const train::TrainLogRow& r) {
    if ((r.epoch + 1) % report_every == 0 || r.epoch + 1 == cfg.train.epochs) {
      out << "epoch " << r.epoch << " train " << r.train_loss << " val_rmse " << r.val_rmse << " val_aux " << r.val_aux
          << "\n";
    }
  });
  res.model.save(cfg.resolved_checkpoint());
  train::write_train_log(cfg.output_dir / "train_log.csv", res.log);

  const train::TrainLogRow& best = res.log.at(res.best_epoch);
  const json summary{{"objective", loss::to_string(cfg.train.objective.kind)},
                     {"alpha", cfg.train.objective.alpha},
                     {"lambda", cfg.train.objective.lambda},
                     {"seed", cfg.train.seed},
                     {"epochs", cfg.train.epochs},
                     {"best_epoch", res.best_epoch},
                     {"best_val_loss", finite_or_null(res.best_val_loss)},
                     {"val_rmse", finite_or_null(best.val_rmse)},
                     {"val_aux", finite_or_null(best.val_aux)},
                     {"tool_version", kToolVersion}};
  io::write_text(cfg.output_dir / "summary.json", summary.dump(2) + "\n");
  out << "best epoch " << res.best_epoch << " val_loss " << res.best_val_loss << ", checkpoint "
      << cfg.resolved_checkpoint().string() << "\n";
  return res;
}

metrics::EvalReport cmd_eval(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  cfg.validate();
  const data::Dataset ds = data::load_dataset(cfg.data_dir);
  metrics::Stepper stepper;
  std::optional<emu::Emulator> model;
  if (cfg.eval_model == "checkpoint") {
    model = emu::Emulator::load(cfg.resolved_checkpoint());
    stepper = metrics::emulator_stepper(*model);
  } else if (cfg.eval_model == "truth") {
    stepper = metrics::simulator_stepper(ds.spec);
  } else {
    stepper = metrics::zero_stepper();
  }
  const fs::path dir = cfg.resolved_eval_dir();
  io::prepare_output_dir(dir, force);
  write_config(cfg, dir);

  metrics::EvalReport rep = metrics::evaluate(stepper, ds, cfg.eval);
  rep.metadata["model"] = cfg.eval_model;
  if (model) rep.metadata["checkpoint"] = cfg.resolved_checkpoint().string();
  rep.metadata["data_dir"] = cfg.data_dir.string();
  rep.metadata["split"] = data::to_string(cfg.eval.split);
  rep.write_csv(dir / "eval.csv");
  rep.write_histograms(dir / "histograms.csv");

  json envs = json::array();
  for (const auto& e : rep.envs) {
    envs.push_back({{"env_id", e.env_id},
                    {"phi", e.phi},
                    {"histogram_error", finite_or_null(e.histogram_error)},
                    {"spectrum_error", finite_or_null(e.spectrum_error)},
                    {"rmse", finite_or_null(e.rmse)},
                    {"diverged", e.diverged}});
  }
  const json report{{"metadata", rep.metadata},
                    {"horizon", rep.horizon},
                    {"rmse_horizon", rep.rmse_horizon},
                    {"mean_histogram_error", finite_or_null(rep.mean_histogram_error())},
                    {"mean_spectrum_error", finite_or_null(rep.mean_spectrum_error())},
                    {"std_spectrum_error", finite_or_null(rep.std_spectrum_error())},
                    {"mean_rmse", finite_or_null(rep.mean_rmse())},
                    {"diverged", rep.diverged_count()},
                    {"envs", envs}};
  io::write_text(dir / "report.json", report.dump(2) + "\n");
  out << "evaluated " << rep.envs.size() << " environments over " << rep.horizon << " steps: histogram error "
      << rep.mean_histogram_error() << ", spectrum error " << rep.mean_spectrum_error() << ", rmse "
      << rep.mean_rmse() << ", diverged " << rep.diverged_count() << "\n";
  return rep;
}

void cmd_sweep(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  cfg.validate();
  io::prepare_output_dir(cfg.output_dir, force);
  write_config(cfg, cfg.output_dir);
  std::ostringstream table;
  table << cfg.sweep_parameter << ",best_epoch,best_val_loss,val_rmse,val_aux\n";
  for (double v : cfg.sweep_values) {
    ExperimentConfig run = cfg;
    const std::string value = format_number(v);
    if (cfg.sweep_parameter == "lambda") {
      run.set("loss.lambda", value);
    } else if (cfg.sweep_parameter == "alpha") {
      run.set("loss.alpha", value);
    } else {
      if (v < 0 || v != std::floor(v)) throw ConfigError("sweep.values: seeds must be non-negative integers");
      run.set("train.seed", value);
      run.set("model.seed", value);
    }
    run.output_dir = cfg.output_dir / (cfg.sweep_parameter + "_" + value);
    run.checkpoint.clear();
    out << "== " << cfg.sweep_parameter << " = " << value << "\n";
    const auto res = cmd_train(run, force, out);
    const auto& best = res.log.at(res.best_epoch);
    table << value << "," << res.best_epoch << "," << format_number(res.best_val_loss) << ","
          << format_number(best.val_rmse) << "," << format_number(best.val_aux) << "\n";
  }
  io::write_text(cfg.output_dir / "sweep.csv", table.str());
}

LambdaChoice select_lambda(std::span<const SweepPoint> runs, double tolerance) {
  const auto base = std::find_if(runs.begin(), runs.end(), [](const SweepPoint& p) { return p.lambda == 0.0; });
  if (base == runs.end()) throw ConfigError("select-lambda: the sweep has no lambda = 0 run");
  LambdaChoice choice{0.0, tolerance * base->val_rmse, {}};
  double best_feature = base->val_feature;
  bool any_positive = false;
  std::vector<SweepPoint> sorted(runs.begin(), runs.end());
  std::sort(sorted.begin(), sorted.end(), [](const SweepPoint& a, const SweepPoint& b) { return a.lambda < b.lambda; });
  for (const SweepPoint& p : sorted) {
    if (p.lambda <= 0.0 || !(p.val_rmse <= choice.rmse_bar)) continue;
    any_positive = true;
    if (std::isnan(best_feature) || p.val_feature < best_feature) {
      best_feature = p.val_feature;
      choice.lambda = p.lambda;
    }
  }
  if (!any_positive) choice.warning = "no run with lambda > 0 keeps the validation rMSE under the bar; using lambda = 0";
  return choice;
}

LambdaChoice cmd_select_lambda(const fs::path& sweep_dir, double tolerance, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(sweep_dir)) throw IoError("select-lambda: " + sweep_dir.string() + " is not a directory");
  std::vector<SweepPoint> runs;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(sweep_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "summary.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  auto number = [](const json& j) { return j.is_number() ? j.get<double>() : std::nan(""); };
  for (const auto& d : dirs) {
    json s;
    try {
      s = json::parse(io::read_text(d / "summary.json"));
    } catch (const json::exception& e) {
      throw IoError(d.string() + "/summary.json: " + e.what());
    }
    runs.push_back({number(s.value("lambda", json())), number(s.value("val_rmse", json())),
                    number(s.value("val_aux", json()))});
  }
  if (runs.empty()) throw IoError("select-lambda: no run summaries below " + sweep_dir.string());
  const LambdaChoice choice = select_lambda(runs, tolerance);
  if (!choice.warning.empty()) err << "warning: " << choice.warning << "\n";
  json sel{{"lambda", choice.lambda}, {"rmse_bar", finite_or_null(choice.rmse_bar)}, {"tolerance", tolerance}};
  if (!choice.warning.empty()) sel["warning"] = choice.warning;
  json all = json::array();
  for (const auto& r : runs) {
    all.push_back({{"lambda", r.lambda}, {"val_rmse", finite_or_null(r.val_rmse)},
                   {"val_feature", finite_or_null(r.val_feature)}});
  }
  sel["runs"] = all;
  io::write_text(sweep_dir / "selection.json", sel.dump(2) + "\n");
  out << "selected lambda = " << format_number(choice.lambda) << "\n";
  return choice;
}

std::vector<metrics::RobustnessRow> cmd_robustness(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  cfg.validate();
  io::prepare_output_dir(cfg.output_dir, force);
  write_config(cfg, cfg.output_dir);
  const auto rows = metrics::noise_robustness_sweep(cfg.system, {cfg.robustness_phi, 0}, cfg.robustness);
  const auto mean = metrics::average_over_seeds(rows);
  metrics::write_robustness_csv(cfg.output_dir / "robustness.csv", rows);
  metrics::write_robustness_csv(cfg.output_dir / "robustness_mean.csv", mean);
  for (const auto& r : mean) {
    out << "r " << format_number(r.r) << ": rmse " << r.rmse << " histogram error " << r.histogram_error
        << " spectrum error " << r.spectrum_error << "\n";
  }
  return rows;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train and evaluate emulators of chaotic dynamical systems."};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool force = false;
  app.add_option("--config", config_path, "INI experiment config");
  app.add_flag("--force", force, "Write into non-empty output directories");
  std::map<std::string, std::string> overrides;
  for (const auto& key : ExperimentConfig::keys()) {
    app.add_option("--" + key, overrides[key])->group("Config fields");
  }

  auto* generate = app.add_subcommand("generate", "Simulate a multi-environment dataset");
  auto* train_encoder = app.add_subcommand("train-encoder", "Train the contrastive feature encoder");
  auto* train = app.add_subcommand("train", "Train an emulator with the configured objective");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test environments");
  auto* sweep = app.add_subcommand("sweep", "Train one run per sweep value");
  auto* select = app.add_subcommand("select-lambda", "Pick lambda from a finished sweep");
  auto* robustness = app.add_subcommand("robustness", "Noise sensitivity of ground-truth statistics");
  std::string sweep_dir;
  select->add_option("dir", sweep_dir, "Sweep directory (defaults to output.dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig() : ExperimentConfig::from_ini(config_path);
    if (app.count("--system.kind")) cfg.set("system.kind", overrides["system.kind"]);
    for (const auto& key : ExperimentConfig::keys()) {
      if (key != "system.kind" && app.count("--" + key)) cfg.set(key, overrides[key]);
    }
    cfg.validate();

    if (*generate) {
      cmd_generate(cfg, force, out);
    } else if (*train_encoder) {
      cmd_train_encoder(cfg, force, out);
    } else if (*train) {
      cmd_train(cfg, force, out);
    } else if (*eval) {
      cmd_eval(cfg, force, out);
    } else if (*sweep) {
      cmd_sweep(cfg, force, out);
    } else if (*select) {
      cmd_select_lambda(sweep_dir.empty() ? cfg.output_dir : fs::path(sweep_dir), cfg.select_tolerance, out, err);
    } else if (*robustness) {
      cmd_robustness(cfg, force, out);
    }
    return kExitOk;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace chaosemu::cli
