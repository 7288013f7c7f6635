#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "chaosemu/datastore.hpp"
#include "chaosemu/diff/optim.hpp"
#include "chaosemu/emulator.hpp"
#include "chaosemu/encoder.hpp"
#include "chaosemu/losses.hpp"

namespace chaosemu::train {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch = 8;
  /// Optimizer steps per epoch; 0 means ceil(train trajectories / batch).
  std::size_t steps_per_epoch = 0;
  /// Window length in steps; windows hold K+1 frames.
  std::size_t K = 101;
  diff::AdamWConfig optimizer{.learning_rate = 1e-3, .weight_decay = 1e-5};
  std::uint64_t seed = 0;
  /// Fixed validation windows drawn once from the validation split (noisy states).
  std::size_t val_windows = 32;
  /// Validate every this many epochs and on the last epoch.
  std::size_t eval_every = 1;
  /// Standardise summary statistics with training-set moments before the transport cost.
  bool standardize_stats = true;
  emu::EmulatorConfig architecture;
  loss::ObjectiveConfig objective;
};

struct TrainLogRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_rmse = 0.0;
  double train_aux = 0.0;
  /// NaN on epochs without validation.
  double val_loss = 0.0;
  double val_rmse = 0.0;
  /// Validation feature loss when an encoder is available, Sinkhorn divergence for the
  /// Sinkhorn objective, otherwise NaN.
  double val_aux = 0.0;
  /// Fraction of Sinkhorn solves in the epoch that met the tolerance.
  double sinkhorn_converged = 1.0;
};

struct TrainResult {
  /// Parameters from the epoch with the lowest validation loss.
  emu::Emulator model;
  std::vector<TrainLogRow> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

/// Fits normalisation constants on the training split and minimises the selected
/// objective over randomly drawn training windows with AdamW. `encoder` is required
/// by the feature objective and, when given, also reports the validation feature loss.
/// Throws DivergenceError carrying the epoch when the loss becomes non-finite.
TrainResult train_emulator(const data::Dataset& ds, const TrainConfig& cfg, const enc::Encoder* encoder = nullptr,
                           const std::function<void(const TrainLogRow&)>& on_epoch = {});

/// Per-channel mean and std of the summary statistics of the given trajectories.
std::pair<std::vector<double>, std::vector<double>> stat_moments(const data::Dataset& ds,
                                                                 std::span<const std::size_t> pool,
                                                                 const loss::StatSpec& spec);

void write_train_log(const std::filesystem::path& path, std::span<const TrainLogRow> log);
std::vector<TrainLogRow> read_train_log(const std::filesystem::path& path);

}  // namespace chaosemu::train
