#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaosemu/datastore.hpp"
#include "chaosemu/emulator.hpp"
#include "chaosemu/losses.hpp"

namespace chaosemu::metrics {

using diff::Tensor;

/// ceil(sqrt(n)), at least 1.
std::size_t sqrt_bins(std::size_t n);

struct Histogram {
  /// Per channel, bins + 1 increasing edges.
  std::vector<std::vector<double>> edges;
  /// Per channel, normalised frequencies summing to 1.
  std::vector<std::vector<double>> freq;
  std::size_t bins = 0;

  std::size_t channels() const { return edges.size(); }
};

/// Histogram of `samples` ([n] or [n, c]) with sqrt(n) equal-width bins per channel
/// spanning the sample range.
Histogram build_histogram(const Tensor& samples);
/// Bins `samples` on the edges of `like`; values outside the range go to the end bins.
Histogram bin_like(const Histogram& like, const Tensor& samples);

/// Directed: edges and bin count come from `reference`. Per-channel L1 distance of
/// the normalised frequencies, averaged over channels. Lies in [0, 2].
double histogram_error(const Tensor& reference, const Tensor& candidate);

/// Time-averaged |FFT(u_t)_k|^2 over all d modes (unnormalised transform). rollout [T, d].
std::vector<double> energy_spectrum(const Tensor& rollout);
/// sum_k |E_k(reference) - E_k(candidate)|.
double energy_spectrum_error(const Tensor& reference, const Tensor& candidate);

/// Periodic Gaussian smoothing of every row of `states` ([T, d] or [d]) along the
/// last axis; `std` in grid units. std = 0 is the identity.
Tensor gaussian_blur(const Tensor& states, double std);

// ------------------------------------------------------------------ evaluation

/// Maps states [B, d] and per-row parameters to the states one stored step later.
using Stepper = std::function<Tensor(const Tensor& u, std::span<const double> phi)>;

Stepper emulator_stepper(const emu::Emulator& model);
/// The reference integrator, so evaluating it against clean data reproduces the data.
Stepper simulator_stepper(const dynsys::SystemSpec& spec);
Stepper zero_stepper();

/// Default long-horizon rollout length: 1500 steps for Lorenz-96, 1000 for Kuramoto-Sivashinsky.
std::size_t default_eval_horizon(dynsys::SystemKind kind);

/// Mean over trajectories in `split` of the h-step rMSE against clean states. From every
/// start s, the stepper rolls h steps from the clean state; frames s+1..s+h are compared.
double eval_rmse(const Stepper& stepper, const data::Dataset& ds, data::Split split, std::size_t h = 1);

struct EvalOptions {
  data::Split split = data::Split::Test;
  /// Rollout length for histogram and spectrum errors; 0 picks the system default.
  std::size_t horizon = 0;
  std::size_t rmse_horizon = 1;
};

struct EnvMetrics {
  std::int64_t env_id = 0;
  double phi = 0.0;
  double histogram_error = 0.0;
  double spectrum_error = 0.0;
  double rmse = 0.0;
  /// The long rollout produced a non-finite state. Histogram error is then 2 and
  /// spectrum error infinite.
  bool diverged = false;
};

struct EvalReport {
  std::vector<EnvMetrics> envs;
  std::size_t horizon = 0;
  std::size_t rmse_horizon = 1;
  nlohmann::json metadata = nlohmann::json::object();
  /// Binned statistics as CSV lines `env_id,channel,bin,lo,hi,reference,candidate`.
  std::vector<std::string> histogram_rows;

  double mean_histogram_error() const;
  double mean_spectrum_error() const;
  double std_spectrum_error() const;
  double mean_rmse() const;
  std::size_t diverged_count() const;

  /// Header `env_id,metric,value`; aggregate rows carry env_id -1.
  void write_csv(const std::filesystem::path& path) const;
  void write_histograms(const std::filesystem::path& path) const;
};

/// Clean-state rollouts of every trajectory in the split, compared with the clean
/// ground truth through the summary-statistic histogram, the energy spectrum and rMSE.
EvalReport evaluate(const Stepper& stepper, const data::Dataset& ds, const EvalOptions& opt = {});

// ----------------------------------------------------------- noise robustness

struct RobustnessOptions {
  /// Ascending, starting at 0.
  std::vector<double> r_grid{0.0, 0.01, 0.03, 0.1, 0.3, 1.0};
  std::size_t steps = 1500;
  std::size_t seeds = 1;
  /// Also add observation noise of the same scale to the perturbed run.
  bool measurement_noise = false;
  std::uint64_t seed = 0;
};

struct RobustnessRow {
  double r = 0.0;
  std::size_t seed_index = 0;
  double rmse = 0.0;
  double histogram_error = 0.0;
  double spectrum_error = 0.0;
};

/// For each seed, simulates the system from a spun-up state u0 and from u0 + eta with
/// eta ~ N(0, (r sigma)^2) (sigma: std of the reference run), and compares the runs.
std::vector<RobustnessRow> noise_robustness_sweep(const dynsys::SystemSpec& spec, const dynsys::EnvironmentParam& env,
                                                  const RobustnessOptions& opt);

/// Seed-averaged rows, one per r.
std::vector<RobustnessRow> average_over_seeds(std::span<const RobustnessRow> rows);

void write_robustness_csv(const std::filesystem::path& path, std::span<const RobustnessRow> rows);

}  // namespace chaosemu::metrics
