#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chaosemu/datastore.hpp"
#include "chaosemu/encoder.hpp"
#include "chaosemu/metrics.hpp"
#include "chaosemu/train.hpp"

namespace chaosemu::cli {

/// Everything one experiment needs, read from an INI file with sections
/// [system] [data] [model] [loss] [train] [encoder] [eval] [sweep] [robustness] [output].
/// Every field is addressed as `section.key`, both in files and as command-line flags.
struct ExperimentConfig {
  dynsys::SystemSpec system = dynsys::SystemSpec::lorenz96();
  data::GenerateOptions data;
  std::filesystem::path data_dir = "runs/data";
  /// Periodic Gaussian blur (grid units) applied to observed states before training.
  double blur_std = 0.0;

  train::TrainConfig train;
  enc::EncoderTrainConfig encoder;
  std::filesystem::path encoder_dir = "runs/encoder";

  metrics::EvalOptions eval;
  /// Empty means `<output.dir>/eval`.
  std::filesystem::path eval_dir;
  /// Empty means `<output.dir>/checkpoint`.
  std::filesystem::path checkpoint;
  /// checkpoint | truth | zero
  std::string eval_model = "checkpoint";

  /// lambda | alpha | seed
  std::string sweep_parameter = "lambda";
  std::vector<double> sweep_values{0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2};
  /// Allowed validation rMSE relative to the lambda = 0 run.
  double select_tolerance = 1.1;

  metrics::RobustnessOptions robustness;
  double robustness_phi = 14.0;

  std::filesystem::path output_dir = "runs/train";

  ExperimentConfig();

  /// Defaults for the given system (spec preset, parameter range, loss weights, modes).
  static ExperimentConfig for_system(dynsys::SystemKind kind);
  static ExperimentConfig from_ini(const std::filesystem::path& path);
  static ExperimentConfig from_ini_string(const std::string& text);

  /// Sets one `section.key` from its text form; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// All recognised keys in file order.
  static const std::vector<std::string>& keys();

  /// Throws ConfigError naming the first offending field.
  void validate() const;
  std::string to_ini() const;

  std::filesystem::path resolved_eval_dir() const;
  std::filesystem::path resolved_checkpoint() const;
};

}  // namespace chaosemu::cli
