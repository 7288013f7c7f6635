#include "chaosemu/dynsys.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "chaosemu/diff/fft.hpp"
#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

namespace chaosemu::dynsys {

std::string to_string(SystemKind kind) {
  return kind == SystemKind::Lorenz96 ? "lorenz96" : "kuramoto_sivashinsky";
}

SystemKind system_kind_from_string(const std::string& s) {
  if (s == "lorenz96" || s == "l96") return SystemKind::Lorenz96;
  if (s == "kuramoto_sivashinsky" || s == "ks") return SystemKind::KuramotoSivashinsky;
  throw ConfigError("unknown system kind '" + s + "'");
}

void SystemSpec::validate() const {
  if (kind == SystemKind::Lorenz96 && dimension < 4) {
    throw ConfigError("Lorenz-96 needs dimension >= 4, got " + std::to_string(dimension));
  }
  if (kind == SystemKind::KuramotoSivashinsky) {
    if (dimension < 4 || (dimension & (dimension - 1)) != 0) {
      throw ConfigError("Kuramoto-Sivashinsky grid size must be a power of two >= 4, got " + std::to_string(dimension));
    }
    if (!(domain_length > 0.0)) throw ConfigError("domain_length must be positive");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
  if (substeps == 0) throw ConfigError("substeps must be >= 1");
}

SystemSpec SystemSpec::lorenz96() { return SystemSpec{}; }

SystemSpec SystemSpec::kuramoto_sivashinsky() {
  SystemSpec s;
  s.kind = SystemKind::KuramotoSivashinsky;
  s.dimension = 256;
  s.domain_length = 50.0;
  s.dt = 0.25;
  s.spinup_steps = 400;
  s.substeps = 1;
  return s;
}

// ------------------------------------------------------------------ Lorenz-96

void lorenz96_rhs(std::span<const double> u, double forcing, std::span<double> out) {
  const std::size_t d = u.size();
  if (d < 4) throw ConfigError("lorenz96_rhs: dimension must be >= 4, got " + std::to_string(d));
  if (out.size() != d) throw ShapeError("lorenz96_rhs: output length mismatch");
  for (std::size_t i = 0; i < d; ++i) {
    const double up1 = u[(i + 1) % d];
    const double um1 = u[(i + d - 1) % d];
    const double um2 = u[(i + d - 2) % d];
    out[i] = (up1 - um2) * um1 - u[i] + forcing;
  }
}

std::vector<double> lorenz96_rhs(std::span<const double> u, double forcing) {
  std::vector<double> out(u.size());
  lorenz96_rhs(u, forcing, out);
  return out;
}

std::vector<double> rk4_step(std::span<const double> u, double forcing, double dt, std::int64_t step_index) {
  if (!(dt > 0.0)) throw ConfigError("rk4_step: dt must be positive");
  const std::size_t d = u.size();
  std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d), next(d);
  lorenz96_rhs(u, forcing, k1);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = u[i] + 0.5 * dt * k1[i];
  lorenz96_rhs(tmp, forcing, k2);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = u[i] + 0.5 * dt * k2[i];
  lorenz96_rhs(tmp, forcing, k3);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = u[i] + dt * k3[i];
  lorenz96_rhs(tmp, forcing, k4);
  for (std::size_t i = 0; i < d; ++i) {
    next[i] = u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (!std::isfinite(next[i])) throw DivergenceError("rk4_step: non-finite state", step_index);
  }
  return next;
}

// -------------------------------------------------------- Kuramoto-Sivashinsky

KsIntegrator::KsIntegrator(std::size_t dimension, double domain_length, double phi, double dt) : d_(dimension) {
  if (dimension < 4 || dimension % 2 != 0) throw ConfigError("KsIntegrator: dimension must be even and >= 4");
  if (!(dt > 0.0)) throw ConfigError("KsIntegrator: dt must be positive");
  const std::size_t m = fft::half_size(d_);
  k_.resize(m);
  dealias_.resize(m);
  e_.resize(m);
  e2_.resize(m);
  q_.resize(m);
  f1_.resize(m);
  f2_.resize(m);
  f3_.resize(m);
  constexpr int kContour = 16;
  for (std::size_t j = 0; j < m; ++j) {
    k_[j] = 2.0 * std::numbers::pi * static_cast<double>(j) / domain_length;
    // 2/3 rule on the quadratic term.
    dealias_[j] = 3 * j <= d_ ? 1.0 : 0.0;
    const double lin = phi * k_[j] * k_[j] - k_[j] * k_[j] * k_[j] * k_[j];
    const double lh = dt * lin;
    e_[j] = std::exp(lh);
    e2_[j] = std::exp(lh / 2.0);
    // phi-functions by averaging over a circle around lh (avoids cancellation near 0).
    double q = 0, a = 0, b = 0, c = 0;
    for (int p = 1; p <= kContour; ++p) {
      const Complex r = std::exp(Complex(0.0, std::numbers::pi * (p - 0.5) / kContour));
      const Complex z = lh + r;
      const Complex ez = std::exp(z);
      q += ((std::exp(z / 2.0) - 1.0) / z).real();
      a += ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / (z * z * z)).real();
      b += ((2.0 + z + ez * (-2.0 + z)) / (z * z * z)).real();
      c += ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / (z * z * z)).real();
    }
    q_[j] = dt * q / kContour;
    f1_[j] = dt * a / kContour;
    f2_[j] = dt * b / kContour;
    f3_[j] = dt * c / kContour;
  }
}

void KsIntegrator::nonlinear(const std::vector<Complex>& v, std::vector<Complex>& out) const {
  // -u u_x = -1/2 d/dx (u^2), evaluated pseudo-spectrally.
  std::vector<double> u(d_);
  fft::irfft(v, u);
  for (double& x : u) x *= x;
  fft::rfft(u, out);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] *= Complex(0.0, -0.5 * k_[j]) * dealias_[j];
}

void KsIntegrator::step(std::vector<Complex>& v, std::int64_t step_index) const {
  const std::size_t m = k_.size();
  if (v.size() != m) throw ShapeError("KsIntegrator::step: spectrum length mismatch");
  std::vector<Complex> nv(m), na(m), nb(m), nc(m), a(m), b(m), c(m);
  nonlinear(v, nv);
  for (std::size_t j = 0; j < m; ++j) a[j] = e2_[j] * v[j] + q_[j] * nv[j];
  nonlinear(a, na);
  for (std::size_t j = 0; j < m; ++j) b[j] = e2_[j] * v[j] + q_[j] * na[j];
  nonlinear(b, nb);
  for (std::size_t j = 0; j < m; ++j) c[j] = e2_[j] * a[j] + q_[j] * (2.0 * nb[j] - nv[j]);
  nonlinear(c, nc);
  for (std::size_t j = 0; j < m; ++j) {
    v[j] = e_[j] * v[j] + nv[j] * f1_[j] + 2.0 * (na[j] + nb[j]) * f2_[j] + nc[j] * f3_[j];
    if (!std::isfinite(v[j].real()) || !std::isfinite(v[j].imag())) {
      throw DivergenceError("ks_step: non-finite spectrum", step_index);
    }
  }
}

std::vector<Complex> ks_step(std::span<const Complex> spectrum, double phi, double dt, double domain_length) {
  if (spectrum.size() < 3) throw ShapeError("ks_step: spectrum too short");
  const std::size_t d = 2 * (spectrum.size() - 1);
  KsIntegrator integ(d, domain_length, phi, dt);
  std::vector<Complex> v(spectrum.begin(), spectrum.end());
  integ.step(v);
  return v;
}

// -------------------------------------------------------------- data generation

std::vector<EnvironmentParam> sample_environments(std::size_t count, double lo, double hi, std::uint64_t seed) {
  if (!(lo < hi)) throw ConfigError("sample_environments: empty range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<EnvironmentParam> envs(count);
  for (std::size_t i = 0; i < count; ++i) envs[i] = {dist(rng), static_cast<std::int64_t>(i)};
  return envs;
}

Tensor add_noise(const Tensor& states, double r, std::uint64_t seed) {
  if (!(r >= 0.0)) throw ConfigError("add_noise: r must be >= 0");
  Tensor out = states;
  if (r == 0.0 || states.numel() == 0) return out;
  double mean = 0.0;
  for (double v : states.data()) mean += v;
  mean /= static_cast<double>(states.numel());
  double var = 0.0;
  for (double v : states.data()) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / static_cast<double>(states.numel()));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, r * sigma);
  for (double& v : out.data()) v += noise(rng);
  return out;
}

ReferenceStepper::ReferenceStepper(const SystemSpec& spec, double phi) : spec_(spec), phi_(phi) {
  spec.validate();
  if (spec.kind == SystemKind::KuramotoSivashinsky) {
    ks_.emplace(spec.dimension, spec.domain_length, phi, spec.dt / static_cast<double>(spec.substeps));
  }
}

std::vector<double> ReferenceStepper::step(std::span<const double> u, std::int64_t step_index) const {
  const double h = spec_.dt / static_cast<double>(spec_.substeps);
  if (spec_.kind == SystemKind::Lorenz96) {
    std::vector<double> x(u.begin(), u.end());
    for (std::size_t s = 0; s < spec_.substeps; ++s) x = rk4_step(x, phi_, h, step_index);
    return x;
  }
  std::vector<Complex> v(fft::half_size(spec_.dimension));
  fft::rfft(u, v);
  for (std::size_t s = 0; s < spec_.substeps; ++s) ks_->step(v, step_index);
  std::vector<double> x(spec_.dimension);
  fft::irfft(v, x);
  return x;
}

std::vector<double> advance(const SystemSpec& spec, double phi, std::span<const double> u, std::int64_t step_index) {
  return ReferenceStepper(spec, phi).step(u, step_index);
}

Tensor simulate(const SystemSpec& spec, double phi, std::span<const double> u0, std::size_t steps, std::int64_t env_id) {
  if (u0.size() != spec.dimension) throw ShapeError("simulate: initial condition length mismatch");
  ReferenceStepper stepper(spec, phi);
  const std::size_t d = spec.dimension;
  Tensor out({steps + 1, d});
  std::copy(u0.begin(), u0.end(), out.ptr());
  std::vector<double> u(u0.begin(), u0.end());
  for (std::size_t t = 1; t <= steps; ++t) {
    try {
      u = stepper.step(u, static_cast<std::int64_t>(t));
    } catch (const DivergenceError& e) {
      throw DivergenceError("integration diverged", e.step(), env_id);
    }
    std::copy(u.begin(), u.end(), out.ptr() + t * d);
  }
  return out;
}

std::vector<double> random_initial_condition(const SystemSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> u(spec.dimension);
  if (spec.kind == SystemKind::Lorenz96) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& x : u) x = dist(rng);
  } else {
    std::uniform_real_distribution<double> dist(-std::numbers::pi, std::numbers::pi);
    for (double& x : u) x = dist(rng);
  }
  return u;
}

Trajectory generate_trajectory(const SystemSpec& spec, const EnvironmentParam& env, std::size_t horizon, double r,
                               std::uint64_t seed) {
  spec.validate();
  if (horizon < 1) throw ConfigError("generate_trajectory: T must be >= 1");
  const auto u0 = random_initial_condition(spec, io::mix_seed(seed, 1));
  Tensor full = simulate(spec, env.phi, u0, spec.spinup_steps + horizon, env.env_id);
  const std::size_t d = spec.dimension;
  Tensor clean({horizon + 1, d},
               std::vector<double>(full.data().begin() + static_cast<std::ptrdiff_t>(spec.spinup_steps * d),
                                   full.data().end()));
  Trajectory traj;
  traj.env = env;
  traj.noise_scale = r;
  traj.seed = seed;
  traj.states = add_noise(clean, r, io::mix_seed(seed, 2));
  traj.clean_states = std::move(clean);
  return traj;
}

}  // namespace chaosemu::dynsys
