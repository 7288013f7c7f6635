#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaosemu/diff/ops.hpp"

namespace chaosemu::emu {

using diff::Tensor;
using diff::Var;

struct EmulatorConfig {
  std::size_t dimension = 40;
  std::size_t width = 64;
  std::size_t blocks = 4;
  /// Retained Fourier modes per spectral block.
  std::size_t modes = 16;
  /// Predict u + increment instead of the next state directly.
  bool residual = true;
  // Input normalisation, fitted on training data.
  double state_mean = 0.0;
  double state_std = 1.0;
  double phi_mean = 0.0;
  double phi_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static EmulatorConfig from_json(const nlohmann::json& j);

  bool operator==(const EmulatorConfig&) const = default;
};

/// Fourier neural operator stepper u_{t+dt} = g(u_t, phi). The state is
/// normalised, phi is appended as a second input channel, lifted to `width`
/// channels, passed through spectral blocks (truncated spectral mixing plus a
/// pointwise bypass, GELU between blocks) and projected back to one channel.
class Emulator {
 public:
  explicit Emulator(EmulatorConfig config);

  /// Batched step: u [B, d], one phi per row -> [B, d].
  Var forward(const Var& u, std::span<const double> phi) const;
  /// Single step: u [d] -> [d].
  Var step(const Var& u, double phi) const;

  const EmulatorConfig& config() const { return config_; }
  std::vector<Var>& parameters() { return params_; }
  const std::vector<Var>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Sets the projection weights and bias to zero.
  void zero_projection();
  /// Copy whose parameters are constants, for inference without graph bookkeeping.
  Emulator frozen() const;

  void save(const std::filesystem::path& dir) const;
  static Emulator load(const std::filesystem::path& dir);

 private:
  Emulator() = default;
  const Var& param(std::size_t i) const { return params_[i]; }

  EmulatorConfig config_;
  std::vector<Var> params_;
};

/// [h+1, d]: u0 followed by h autonomous steps. Throws DivergenceError on a non-finite state.
Var rollout(const Emulator& model, const Var& u0, double phi, std::size_t h);

/// Batched rollout: u0 [B, d] -> [B, h+1, d].
Var rollout_batch(const Emulator& model, const Var& u0, std::span<const double> phi, std::size_t h);

/// Teacher-reset concatenated rollout. `window` is [K+1, d] (one phi) or [B, K+1, d]
/// (one phi per window); each segment of h+1 frames restarts from the data frame at its start.
Var rollout_concat(const Emulator& model, const Var& window, std::span<const double> phi, std::size_t h);

}  // namespace chaosemu::emu
