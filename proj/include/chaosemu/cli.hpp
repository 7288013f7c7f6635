#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "chaosemu/config.hpp"

namespace chaosemu::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitDivergence = 4,
};

/// Entry point of the `chaosemu` tool. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Subcommands. Each validates the config before touching the filesystem and
// refuses to write into a non-empty directory unless `force` is set.

data::Dataset cmd_generate(const ExperimentConfig& cfg, bool force, std::ostream& out);
enc::EncoderTrainResult cmd_train_encoder(const ExperimentConfig& cfg, bool force, std::ostream& out);
train::TrainResult cmd_train(const ExperimentConfig& cfg, bool force, std::ostream& out);
metrics::EvalReport cmd_eval(const ExperimentConfig& cfg, bool force, std::ostream& out);
/// One training run per `sweep.values` entry in `<output.dir>/<parameter>_<value>`.
void cmd_sweep(const ExperimentConfig& cfg, bool force, std::ostream& out);
std::vector<metrics::RobustnessRow> cmd_robustness(const ExperimentConfig& cfg, bool force, std::ostream& out);

struct SweepPoint {
  double lambda = 0.0;
  double val_rmse = 0.0;
  double val_feature = 0.0;
};

struct LambdaChoice {
  double lambda = 0.0;
  double rmse_bar = 0.0;
  /// Set when no run with lambda > 0 stays under the rMSE bar.
  std::string warning;
};

/// Minimal validation feature loss among runs whose validation rMSE is at most
/// `tolerance` times that of the lambda = 0 run; ties go to the smaller lambda.
LambdaChoice select_lambda(std::span<const SweepPoint> runs, double tolerance);

/// Reads `summary.json` from every run directory below `sweep_dir` and writes `selection.json`.
LambdaChoice cmd_select_lambda(const std::filesystem::path& sweep_dir, double tolerance, std::ostream& out,
                               std::ostream& err);

std::string format_number(double v);

}  // namespace chaosemu::cli
