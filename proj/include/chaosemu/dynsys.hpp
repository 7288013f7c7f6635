#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chaosemu/diff/tensor.hpp"

namespace chaosemu::dynsys {

using diff::Tensor;
using Complex = std::complex<double>;

enum class SystemKind { Lorenz96, KuramotoSivashinsky };

std::string to_string(SystemKind kind);
SystemKind system_kind_from_string(const std::string& s);

struct SystemSpec {
  SystemKind kind = SystemKind::Lorenz96;
  /// Lorenz-96 component count, or Kuramoto-Sivashinsky grid size.
  std::size_t dimension = 40;
  /// Periodic domain length; Kuramoto-Sivashinsky only.
  double domain_length = 50.0;
  /// Sampling interval of stored states.
  double dt = 0.1;
  std::size_t spinup_steps = 50;
  /// Integrator steps per stored step (integrator step = dt / substeps). RK4 at
  /// step 0.1 blows up for F >= 14, hence 4 for Lorenz-96.
  std::size_t substeps = 4;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  static SystemSpec lorenz96();
  static SystemSpec kuramoto_sivashinsky();

  bool operator==(const SystemSpec&) const = default;
};

struct EnvironmentParam {
  /// Forcing F (Lorenz-96) or the second-derivative coefficient (Kuramoto-Sivashinsky).
  double phi = 0.0;
  std::int64_t env_id = 0;

  bool operator==(const EnvironmentParam&) const = default;
};

struct Trajectory {
  EnvironmentParam env;
  /// Observed (noisy) states, shape [T+1, d].
  Tensor states;
  std::optional<Tensor> clean_states;
  double noise_scale = 0.0;
  std::uint64_t seed = 0;

  std::size_t length() const { return states.dim(0); }
  std::size_t dimension() const { return states.dim(1); }
  /// Row t of the observed states.
  std::span<const double> frame(std::size_t t) const { return states.data().subspan(t * dimension(), dimension()); }

  bool operator==(const Trajectory&) const = default;
};

// ------------------------------------------------------------------ Lorenz-96

/// du_i/dt = (u_{i+1} - u_{i-2}) u_{i-1} - u_i + F with cyclic indices.
void lorenz96_rhs(std::span<const double> u, double forcing, std::span<double> out);
std::vector<double> lorenz96_rhs(std::span<const double> u, double forcing);

/// Classical four-stage Runge-Kutta step. Throws DivergenceError carrying
/// `step_index` when the result is not finite.
std::vector<double> rk4_step(std::span<const double> u, double forcing, double dt, std::int64_t step_index = 0);

// -------------------------------------------------------- Kuramoto-Sivashinsky

/// ETDRK4 integrator for u_t + u u_x + phi u_xx + u_xxxx = 0 on a periodic
/// domain, acting on the half spectrum of a real field. Coefficients depend on
/// (d, L, phi, dt) and are computed once per instance.
class KsIntegrator {
 public:
  KsIntegrator(std::size_t dimension, double domain_length, double phi, double dt);

  void step(std::vector<Complex>& spectrum, std::int64_t step_index = 0) const;

  std::size_t dimension() const { return d_; }
  /// Angular wavenumber 2 pi m / L of mode m.
  double wavenumber(std::size_t m) const { return k_[m]; }

 private:
  void nonlinear(const std::vector<Complex>& v, std::vector<Complex>& out) const;

  std::size_t d_;
  std::vector<double> k_;
  std::vector<double> dealias_;
  std::vector<double> e_, e2_, q_, f1_, f2_, f3_;
};

/// One ETDRK4 step; builds the coefficients on every call.
std::vector<Complex> ks_step(std::span<const Complex> spectrum, double phi, double dt, double domain_length);

// -------------------------------------------------------------- data generation

std::vector<EnvironmentParam> sample_environments(std::size_t count, double lo, double hi, std::uint64_t seed);

/// Adds N(0, (r sigma)^2) noise where sigma is the standard deviation of all entries of `states`.
Tensor add_noise(const Tensor& states, double r, std::uint64_t seed);

/// Integrates `steps` stored steps from `u0`; result has shape [steps+1, d] with row 0 = u0.
Tensor simulate(const SystemSpec& spec, double phi, std::span<const double> u0, std::size_t steps,
                std::int64_t env_id = -1);

/// Reference integrator for one environment, advancing one stored step (dt) per call.
class ReferenceStepper {
 public:
  ReferenceStepper(const SystemSpec& spec, double phi);
  std::vector<double> step(std::span<const double> u, std::int64_t step_index = 0) const;

 private:
  SystemSpec spec_;
  double phi_;
  std::optional<KsIntegrator> ks_;
};

/// Advances one stored step (dt) with the reference integrator.
std::vector<double> advance(const SystemSpec& spec, double phi, std::span<const double> u, std::int64_t step_index = 0);

/// Seeded random initial condition: standard normal (Lorenz-96) or uniform [-pi, pi] (Kuramoto-Sivashinsky).
std::vector<double> random_initial_condition(const SystemSpec& spec, std::uint64_t seed);

/// Spin-up, then T+1 clean states and their noisy observation.
Trajectory generate_trajectory(const SystemSpec& spec, const EnvironmentParam& env, std::size_t horizon, double r,
                               std::uint64_t seed);

}  // namespace chaosemu::dynsys
