#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chaosemu/diff/ops.hpp"
#include "chaosemu/dynsys.hpp"
#include "chaosemu/emulator.hpp"
#include "chaosemu/encoder.hpp"

namespace chaosemu::loss {

using diff::Tensor;
using diff::Var;

/// Statistic channels: Lorenz-96 {du/dt, (u_{i+1} - u_{i-2}) u_{i-1}, u_i};
/// Kuramoto-Sivashinsky {du/dt, du/dx, d2u/dx2}.
struct StatSpec {
  dynsys::SystemKind kind = dynsys::SystemKind::Lorenz96;
  double dt = 0.1;
  double domain_length = 50.0;

  static StatSpec for_system(const dynsys::SystemSpec& spec);
  std::vector<std::string> channels() const;
};

/// window [F, d] or [B, F, d] -> samples [B*(F-1)*d, 3]. The time derivative is the
/// forward difference (u_{t+1} - u_t)/dt, so frames 0..F-2 contribute.
Var summary_stats(const Var& window, const StatSpec& spec);
Tensor summary_stats(const Tensor& window, const StatSpec& spec);

struct SinkhornConfig {
  /// Entropic regularisation of the transport problem.
  double gamma = 0.02;
  std::size_t max_iterations = 500;
  /// Stop when the L1 error of both marginals is below this.
  double tolerance = 1e-6;
  /// Geometric epsilon-scaling factor in (0, 1); 0 disables annealing.
  double scaling = 0.5;
};

struct SinkhornInfo {
  bool converged = true;
  std::size_t iterations = 0;
  double marginal_error = 0.0;
};

/// Debiased entropic transport cost OT(S, S') - (OT(S, S) + OT(S', S'))/2 with ground cost
/// C_ij = |s_i - s'_j|^2 / 2 and uniform weights 1/n, 1/m. Gradients use the converged plans
/// (envelope theorem). Throws NumericError when the cost has non-finite entries.
Var sinkhorn_divergence(const Var& S, const Var& S_hat, const SinkhornConfig& cfg, SinkhornInfo* info = nullptr);

/// Entropic transport cost OT(S, S') alone, without debiasing; value only.
double sinkhorn_cost(const Tensor& S, const Tensor& S_hat, const SinkhornConfig& cfg, SinkhornInfo* info = nullptr);

/// Mean over frames of |p - t|^2 / |t|^2; frames are rows of the last axis.
/// Throws NumericError on a zero-norm target frame.
Var rmse_loss(const Var& target, const Var& prediction);

/// Sum over encoder layers of the mean cosine distance between per-position feature
/// vectors. The encoder is frozen; only the windows receive gradients.
Var feature_loss(const Var& target, const Var& prediction, const enc::Encoder& encoder);

enum class Objective { Rmse, SinkhornRmse, FeatureRmse };
std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct ObjectiveConfig {
  Objective kind = Objective::Rmse;
  /// Autonomous sub-rollout length of the concatenated rollout.
  std::size_t h = 1;
  /// Sub-rollout length used for the rMSE term.
  std::size_t h_rmse = 1;
  double alpha = 0.01;
  double lambda = 0.8;
  SinkhornConfig sinkhorn;
  StatSpec stats;
  /// Per-channel standardisation of statistics before the transport cost; empty disables it.
  std::vector<double> stat_mean, stat_std;
  /// Per-window cap on statistic samples (seeded uniform subsample, same indices on both sides).
  std::size_t max_samples = 2048;
};

struct LossParts {
  Var total;
  double rmse = 0.0;
  /// Unweighted auxiliary term (Sinkhorn divergence or feature loss), 0 when unused.
  double aux = 0.0;
  bool sinkhorn_converged = true;
};

/// rMSE of the teacher-reset rollout over predicted frames (those not at a segment start).
Var rollout_rmse(const Var& windows, const Var& rollout, std::size_t h);

LossParts rmse_objective(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                         const ObjectiveConfig& cfg);

/// mean over windows of alpha * sinkhorn(S(data), S(rollout)) + rMSE. `seed` drives subsampling.
LossParts combined_loss_sinkhorn(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                                 const ObjectiveConfig& cfg, std::uint64_t seed);

/// mean over windows of lambda * feature_loss(data, rollout) + rMSE.
LossParts combined_loss_feature(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                                const enc::Encoder& encoder, const ObjectiveConfig& cfg);

/// Dispatches on cfg.kind. `encoder` is required for the feature objective.
LossParts training_loss(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                        const enc::Encoder* encoder, const ObjectiveConfig& cfg, std::uint64_t seed);

}  // namespace chaosemu::loss
