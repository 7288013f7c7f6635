#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "chaosemu/diff/fft.hpp"
#include "chaosemu/dynsys.hpp"
#include "chaosemu/error.hpp"

using namespace chaosemu;
using namespace chaosemu::dynsys;

namespace {

std::vector<double> rhs_oracle(const std::vector<double>& u, double F) {
  const int d = static_cast<int>(u.size());
  std::vector<double> out(u.size());
  for (int i = 0; i < d; ++i) {
    const int ip1 = (i + 1) % d, im1 = (i - 1 + d) % d, im2 = (i - 2 + 2 * d) % d;
    out[i] = (u[ip1] - u[im2]) * u[im1] - u[i] + F;
  }
  return out;
}

std::vector<double> integrate(std::vector<double> u, double F, double dt, int steps) {
  for (int s = 0; s < steps; ++s) u = rk4_step(u, F, dt);
  return u;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("lorenz96 rhs") {
  CHECK(lorenz96_rhs(std::vector<double>(7, 3.5), 3.5) == std::vector<double>(7, 0.0));
  CHECK(lorenz96_rhs(std::vector<double>(5, 1.0), 0.0) == std::vector<double>(5, -1.0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 3);
  std::vector<double> u(40);
  for (double& x : u) x = n(rng);
  auto got = lorenz96_rhs(u, 10.0);
  auto want = rhs_oracle(u, 10.0);
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-15));
  CHECK_THROWS_AS(lorenz96_rhs(std::vector<double>(3, 1.0), 1.0), ConfigError);
}

TEST_CASE("rk4 fixed point, order and boundedness") {
  std::vector<double> fp(40, 8.0);
  CHECK(max_abs_diff(rk4_step(fp, 8.0, 0.1), fp) < 1e-12);

  std::vector<double> u0(40, 8.0);
  u0[0] += 0.01;
  u0 = integrate(u0, 8.0, 0.01, 1000);  // onto the attractor
  const double T = 1.0, dt = 0.1;
  auto ref = integrate(u0, 8.0, dt / 8, 80);
  const double e1 = max_abs_diff(integrate(u0, 8.0, dt, 10), ref);
  const double e2 = max_abs_diff(integrate(u0, 8.0, dt / 2, 20), ref);
  (void)T;
  MESSAGE("rk4 error ratio " << e1 / e2);
  CHECK(e1 / e2 >= 12.0);
  CHECK(e1 / e2 <= 20.0);

  std::vector<double> p(40, 8.0);
  p[19] += 0.01;
  double mx = 0;
  for (int s = 0; s < 1000; ++s) {
    p = rk4_step(p, 8.0, 0.1);
    for (double x : p) mx = std::max(mx, std::abs(x));
  }
  CHECK(mx < 20.0);
  CHECK_THROWS_AS(rk4_step(std::vector<double>(4, std::nan("")), 8.0, 0.1, 17), DivergenceError);
  try {
    rk4_step(std::vector<double>(4, std::nan("")), 8.0, 0.1, 17);
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 17);
  }
}

TEST_CASE("lorenz96 stays finite across the forcing range") {
  auto spec = SystemSpec::lorenz96();
  for (double F : {10.0, 14.0, 18.0}) {
    auto tr = generate_trajectory(spec, {F, 0}, 2000, 0.0, 5);
    double mx = 0;
    for (double x : tr.states.data()) mx = std::max(mx, std::abs(x));
    CHECK(std::isfinite(mx));
    CHECK(mx < 50.0);
  }
}

TEST_CASE("ks constant field is an equilibrium") {
  const std::size_t d = 64;
  std::vector<double> u(d, 0.7);
  std::vector<Complex> v(fft::half_size(d));
  fft::rfft(u, v);
  auto w = ks_step(v, 1.3, 0.25, 50.0);
  for (std::size_t k = 0; k < v.size(); ++k) CHECK(std::abs(w[k] - v[k]) < 1e-12);
}

TEST_CASE("ks linear growth of a tiny single mode") {
  const std::size_t d = 256;
  const double L = 50.0, phi = 1.5, a = 1e-6, dt = 0.25;
  for (std::size_t m : {1u, 3u, 6u, 10u}) {
    std::vector<double> u(d);
    for (std::size_t j = 0; j < d; ++j) u[j] = a * std::sin(2 * std::numbers::pi * m * j / static_cast<double>(d));
    KsIntegrator integ(d, L, phi, dt);
    std::vector<Complex> v(fft::half_size(d));
    fft::rfft(u, v);
    const double amp0 = std::abs(v[m]);
    integ.step(v);
    integ.step(v);  // t = 0.5
    const double k = 2 * std::numbers::pi * static_cast<double>(m) / L;
    const double expected = std::exp((phi * k * k - k * k * k * k) * 0.5);
    CAPTURE(m);
    CHECK(std::abs(std::abs(v[m]) / amp0 - expected) < 0.01 * expected);
  }
}

TEST_CASE("ks spatial mean is conserved") {
  auto spec = SystemSpec::kuramoto_sivashinsky();
  auto u0 = random_initial_condition(spec, 3);
  for (double& x : u0) x += 0.3;
  auto traj = simulate(spec, 1.8, u0, 1000);
  const std::size_t d = spec.dimension;
  double m0 = 0, m1 = 0;
  for (std::size_t j = 0; j < d; ++j) {
    m0 += traj.data()[j];
    m1 += traj.data()[1000 * d + j];
  }
  CHECK(std::abs(m0 - m1) / static_cast<double>(d) < 1e-10);
  double mx = 0;
  for (double x : traj.data()) mx = std::max(mx, std::abs(x));
  CHECK(mx < 20.0);
}

TEST_CASE("ks stays finite across the parameter range") {
  auto spec = SystemSpec::kuramoto_sivashinsky();
  for (double phi : {1.0, 2.6}) {
    auto tr = generate_trajectory(spec, {phi, 0}, 1000, 0.0, 8);
    double mx = 0;
    for (double x : tr.states.data()) mx = std::max(mx, std::abs(x));
    MESSAGE("ks phi=" << phi << " max|u|=" << mx);
    CHECK(mx < 20.0);
    CHECK(mx > 0.5);
  }
}

TEST_CASE("sample_environments") {
  CHECK(sample_environments(0, 10, 18, 1).empty());
  auto a = sample_environments(100000, 10, 18, 42);
  CHECK(a == sample_environments(100000, 10, 18, 42));
  double mean = 0;
  for (auto& e : a) {
    CHECK(e.phi >= 10.0);
    CHECK(e.phi <= 18.0);
    mean += e.phi;
  }
  mean /= static_cast<double>(a.size());
  const double se = (8.0 / std::sqrt(12.0)) / std::sqrt(1e5);
  CHECK(std::abs(mean - 14.0) < 3 * se);
  CHECK_THROWS_AS(sample_environments(3, 18, 10, 1), ConfigError);
}

TEST_CASE("add_noise") {
  auto spec = SystemSpec::lorenz96();
  auto clean = simulate(spec, 12.0, random_initial_condition(spec, 1), 3000);
  CHECK(add_noise(clean, 0.0, 3) == clean);
  auto noisy = add_noise(clean, 0.3, 3);
  CHECK(noisy == add_noise(clean, 0.3, 3));
  double mean = 0, var = 0, dvar = 0;
  const double n = static_cast<double>(clean.numel());
  for (double x : clean.data()) mean += x / n;
  for (double x : clean.data()) var += (x - mean) * (x - mean) / n;
  for (std::size_t i = 0; i < clean.numel(); ++i) dvar += (noisy[i] - clean[i]) * (noisy[i] - clean[i]) / n;
  CHECK(std::abs(std::sqrt(dvar) - 0.3 * std::sqrt(var)) < 0.01 * 0.3 * std::sqrt(var));
}

TEST_CASE("generate_trajectory") {
  auto spec = SystemSpec::lorenz96();
  auto a = generate_trajectory(spec, {12.0, 0}, 2000, 0.0, 9);
  CHECK(a.states.shape() == diff::Shape{2001, 40});
  CHECK(a.clean_states.has_value());
  CHECK(a.states == *a.clean_states);
  auto b = generate_trajectory(spec, {12.5, 1}, 2000, 0.0, 9);
  CHECK(max_abs_diff(a.states.data(), b.states.data()) > 1.0);
  auto noisy = generate_trajectory(spec, {12.0, 0}, 2000, 0.3, 9);
  CHECK(*noisy.clean_states == *a.clean_states);
  CHECK_FALSE(noisy.states == a.states);
  CHECK_THROWS_AS(generate_trajectory(spec, {12.0, 0}, 0, 0.0, 9), ConfigError);
  SystemSpec bad = SystemSpec::kuramoto_sivashinsky();
  bad.dimension = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
