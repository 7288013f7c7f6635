#include "chaosemu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "chaosemu/diff/fft.hpp"
#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

namespace chaosemu::metrics {

namespace {

/// View [n] or [n, c] as (n, c).
std::pair<std::size_t, std::size_t> sample_dims(const Tensor& t, const char* what) {
  if (t.rank() == 1) return {t.dim(0), 1};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeError(std::string(what) + ": samples must be [n] or [n, c], got " + diff::shape_str(t.shape()));
}

std::size_t bin_index(const std::vector<double>& edges, double x) {
  const std::size_t bins = edges.size() - 1;
  const double lo = edges.front(), hi = edges.back();
  if (!(x > lo)) return 0;
  if (!(x < hi)) return bins - 1;
  const auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
  return std::min(b, bins - 1);
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

std::size_t sqrt_bins(std::size_t n) {
  auto b = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  while (b * b < n) ++b;
  while (b > 1 && (b - 1) * (b - 1) >= n) --b;
  return std::max<std::size_t>(b, 1);
}

Histogram build_histogram(const Tensor& samples) {
  const auto [n, c] = sample_dims(samples, "histogram");
  if (n == 0) throw ConfigError("histogram: no samples");
  Histogram h;
  h.bins = sqrt_bins(n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = samples[i * c + ch];
      if (!std::isfinite(x)) throw NumericError("histogram: non-finite reference sample");
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    std::vector<double> e(h.bins + 1);
    for (std::size_t b = 0; b <= h.bins; ++b) e[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(h.bins);
    e.back() = hi;
    h.edges.push_back(std::move(e));
  }
  return bin_like(h, samples);
}

Histogram bin_like(const Histogram& like, const Tensor& samples) {
  const auto [n, c] = sample_dims(samples, "histogram");
  if (n == 0) throw ConfigError("histogram: no samples");
  if (c != like.channels()) throw ShapeError("histogram: channel count differs from the reference");
  Histogram h;
  h.bins = like.bins;
  h.edges = like.edges;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> f(h.bins, 0.0);
    // NaN lands in bin 0, which keeps the error bounded for broken candidates.
    for (std::size_t i = 0; i < n; ++i) f[bin_index(h.edges[ch], samples[i * c + ch])] += 1.0;
    for (double& v : f) v /= static_cast<double>(n);
    h.freq.push_back(std::move(f));
  }
  return h;
}

double histogram_error(const Tensor& reference, const Tensor& candidate) {
  const Histogram ref = build_histogram(reference);
  const Histogram cand = bin_like(ref, candidate);
  double total = 0.0;
  for (std::size_t ch = 0; ch < ref.channels(); ++ch) {
    for (std::size_t b = 0; b < ref.bins; ++b) total += std::abs(ref.freq[ch][b] - cand.freq[ch][b]);
  }
  return total / static_cast<double>(ref.channels());
}

std::vector<double> energy_spectrum(const Tensor& rollout) {
  if (rollout.rank() != 2 || rollout.dim(0) == 0 || rollout.dim(1) == 0) {
    throw ShapeError("energy_spectrum: expected [T, d], got " + diff::shape_str(rollout.shape()));
  }
  const std::size_t T = rollout.dim(0), d = rollout.dim(1);
  std::vector<double> E(d, 0.0);
  std::vector<fft::Complex> spec(fft::half_size(d));
  for (std::size_t t = 0; t < T; ++t) {
    fft::rfft(rollout.data().subspan(t * d, d), spec);
    for (std::size_t k = 0; k < d; ++k) E[k] += std::norm(spec[k <= d / 2 ? k : d - k]);
  }
  for (double& e : E) e /= static_cast<double>(T);
  return E;
}

double energy_spectrum_error(const Tensor& reference, const Tensor& candidate) {
  if (reference.rank() != 2 || candidate.rank() != 2 || reference.dim(1) != candidate.dim(1)) {
    throw ShapeError("energy_spectrum_error: shapes " + diff::shape_str(reference.shape()) + " and " +
                     diff::shape_str(candidate.shape()));
  }
  const auto a = energy_spectrum(reference), b = energy_spectrum(candidate);
  double err = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) err += std::abs(a[k] - b[k]);
  return err;
}

Tensor gaussian_blur(const Tensor& states, double std) {
  if (!(std >= 0.0)) throw ConfigError("gaussian_blur: std must be >= 0");
  if (std == 0.0 || states.empty()) return states;
  const std::size_t d = states.shape().back();
  const std::size_t rows = states.numel() / d;
  // Wrapped kernel: every offset within 6 std folded onto the circle.
  std::vector<double> k(d, 0.0);
  const auto reach = static_cast<std::int64_t>(std::ceil(6.0 * std));
  for (std::int64_t j = -reach; j <= reach; ++j) {
    const auto m = static_cast<std::size_t>(((j % static_cast<std::int64_t>(d)) + static_cast<std::int64_t>(d)) %
                                            static_cast<std::int64_t>(d));
    k[m] += std::exp(-0.5 * static_cast<double>(j * j) / (std * std));
  }
  double mass = 0.0;
  for (double v : k) mass += v;
  for (double& v : k) v /= mass;

  Tensor out(states.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = states.ptr() + r * d;
    double* o = out.ptr() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t m = 0; m < d; ++m) acc += k[m] * in[(i + d - m) % d];
      o[i] = acc;
    }
  }
  return out;
}

// ------------------------------------------------------------------ evaluation

Stepper emulator_stepper(const emu::Emulator& model) {
  return [m = model.frozen()](const Tensor& u, std::span<const double> phi) {
    return m.forward(diff::Var::constant(u), phi).value();
  };
}

Stepper simulator_stepper(const dynsys::SystemSpec& spec) {
  return [spec](const Tensor& u, std::span<const double> phi) {
    const std::size_t d = spec.dimension;
    if (u.rank() != 2 || u.dim(1) != d || phi.size() != u.dim(0)) {
      throw ShapeError("simulator_stepper: states " + diff::shape_str(u.shape()));
    }
    Tensor out(u.shape());
    std::map<double, dynsys::ReferenceStepper> steppers;
    for (std::size_t i = 0; i < u.dim(0); ++i) {
      auto it = steppers.find(phi[i]);
      if (it == steppers.end()) it = steppers.emplace(phi[i], dynsys::ReferenceStepper(spec, phi[i])).first;
      std::vector<double> next;
      try {
        next = it->second.step(u.data().subspan(i * d, d));
      } catch (const DivergenceError&) {
        next.assign(d, std::numeric_limits<double>::quiet_NaN());
      }
      std::copy(next.begin(), next.end(), out.ptr() + i * d);
    }
    return out;
  };
}

Stepper zero_stepper() {
  return [](const Tensor& u, std::span<const double>) { return Tensor(u.shape()); };
}

std::size_t default_eval_horizon(dynsys::SystemKind kind) {
  return kind == dynsys::SystemKind::Lorenz96 ? 1500 : 1000;
}

namespace {

const Tensor& clean_of(const dynsys::Trajectory& tr) { return tr.clean_states ? *tr.clean_states : tr.states; }

double trajectory_rmse(const Stepper& stepper, const dynsys::Trajectory& tr, std::size_t h) {
  const Tensor& clean = clean_of(tr);
  const std::size_t T = clean.dim(0), d = clean.dim(1);
  if (h == 0 || h >= T) throw ConfigError("eval_rmse: horizon must lie in [1, T)");
  const std::size_t starts = T - h;
  Tensor u({starts, d}, diff::Buffer(clean.data().begin(), clean.data().begin() + static_cast<std::ptrdiff_t>(starts * d)));
  const std::vector<double> phi(starts, tr.env.phi);
  Tensor target({starts * h, d}), pred({starts * h, d});
  for (std::size_t j = 1; j <= h; ++j) {
    u = stepper(u, phi);
    for (std::size_t s = 0; s < starts; ++s) {
      const std::size_t row = s * h + (j - 1);
      std::copy_n(u.ptr() + s * d, d, pred.ptr() + row * d);
      std::copy_n(clean.ptr() + (s + j) * d, d, target.ptr() + row * d);
    }
  }
  for (double v : pred.data()) {
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
  }
  return loss::rmse_loss(diff::Var::constant(target), diff::Var::constant(pred)).value().item();
}

}  // namespace

double eval_rmse(const Stepper& stepper, const data::Dataset& ds, data::Split split, std::size_t h) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw ConfigError("eval_rmse: split " + data::to_string(split) + " is empty");
  double total = 0.0;
  for (std::size_t i : idx) total += trajectory_rmse(stepper, ds.trajectories[i], h);
  return total / static_cast<double>(idx.size());
}

double EvalReport::mean_histogram_error() const {
  double s = 0.0;
  for (const auto& e : envs) s += e.histogram_error;
  return envs.empty() ? 0.0 : s / static_cast<double>(envs.size());
}

double EvalReport::mean_spectrum_error() const {
  double s = 0.0;
  for (const auto& e : envs) s += e.spectrum_error;
  return envs.empty() ? 0.0 : s / static_cast<double>(envs.size());
}

double EvalReport::std_spectrum_error() const {
  if (envs.empty()) return 0.0;
  const double m = mean_spectrum_error();
  double s = 0.0;
  for (const auto& e : envs) s += (e.spectrum_error - m) * (e.spectrum_error - m);
  return std::sqrt(s / static_cast<double>(envs.size()));
}

double EvalReport::mean_rmse() const {
  double s = 0.0;
  for (const auto& e : envs) s += e.rmse;
  return envs.empty() ? 0.0 : s / static_cast<double>(envs.size());
}

std::size_t EvalReport::diverged_count() const {
  return static_cast<std::size_t>(std::count_if(envs.begin(), envs.end(), [](const auto& e) { return e.diverged; }));
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << "env_id,metric,value\n";
  for (const auto& e : envs) {
    out << e.env_id << ",phi," << fmt(e.phi) << "\n";
    out << e.env_id << ",histogram_error," << fmt(e.histogram_error) << "\n";
    out << e.env_id << ",spectrum_error," << fmt(e.spectrum_error) << "\n";
    out << e.env_id << ",rmse," << fmt(e.rmse) << "\n";
    out << e.env_id << ",diverged," << (e.diverged ? 1 : 0) << "\n";
  }
  out << "-1,histogram_error," << fmt(mean_histogram_error()) << "\n";
  out << "-1,spectrum_error," << fmt(mean_spectrum_error()) << "\n";
  out << "-1,spectrum_error_std," << fmt(std_spectrum_error()) << "\n";
  out << "-1,rmse," << fmt(mean_rmse()) << "\n";
  out << "-1,diverged," << diverged_count() << "\n";
  io::write_text(path, out.str());
}

void EvalReport::write_histograms(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << "env_id,channel,bin,lo,hi,reference,candidate\n";
  for (const auto& row : histogram_rows) out << row << "\n";
  io::write_text(path, out.str());
}

EvalReport evaluate(const Stepper& stepper, const data::Dataset& ds, const EvalOptions& opt) {
  const auto idx = ds.indices(opt.split);
  if (idx.empty()) throw ConfigError("evaluate: split " + data::to_string(opt.split) + " is empty");
  const std::size_t H = opt.horizon ? opt.horizon : default_eval_horizon(ds.spec.kind);
  if (H + 1 > ds.horizon() + 1) {
    throw ConfigError("evaluate: horizon " + std::to_string(H) + " exceeds trajectory length " +
                      std::to_string(ds.horizon()));
  }
  const std::size_t d = ds.spec.dimension, B = idx.size();
  const auto stats = loss::StatSpec::for_system(ds.spec);

  // All environments advance together; a diverged row is frozen at its last state.
  Tensor u({B, d});
  std::vector<double> phi(B);
  std::vector<Tensor> rollouts(B, Tensor({H + 1, d}));
  std::vector<bool> diverged(B, false);
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor& clean = clean_of(ds.trajectories[idx[b]]);
    std::copy_n(clean.ptr(), d, u.ptr() + b * d);
    std::copy_n(clean.ptr(), d, rollouts[b].ptr());
    phi[b] = ds.trajectories[idx[b]].env.phi;
  }
  for (std::size_t t = 1; t <= H; ++t) {
    Tensor next = stepper(u, phi);
    for (std::size_t b = 0; b < B; ++b) {
      const double* row = next.ptr() + b * d;
      if (!diverged[b] && !std::all_of(row, row + d, [](double v) { return std::isfinite(v); })) diverged[b] = true;
      if (diverged[b]) std::copy_n(u.ptr() + b * d, d, next.ptr() + b * d);
      std::copy_n(next.ptr() + b * d, d, rollouts[b].ptr() + t * d);
    }
    u = std::move(next);
  }

  EvalReport rep;
  rep.horizon = H;
  rep.rmse_horizon = opt.rmse_horizon;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& tr = ds.trajectories[idx[b]];
    const Tensor& clean = clean_of(tr);
    Tensor ref({H + 1, d}, diff::Buffer(clean.data().begin(), clean.data().begin() + static_cast<std::ptrdiff_t>((H + 1) * d)));
    EnvMetrics m;
    m.env_id = tr.env.env_id;
    m.phi = tr.env.phi;
    m.rmse = trajectory_rmse(stepper, tr, opt.rmse_horizon);
    m.diverged = diverged[b];
    const Tensor s_ref = loss::summary_stats(ref, stats);
    if (diverged[b]) {
      m.histogram_error = 2.0;
      m.spectrum_error = std::numeric_limits<double>::infinity();
    } else {
      const Tensor s_cand = loss::summary_stats(rollouts[b], stats);
      m.histogram_error = histogram_error(s_ref, s_cand);
      m.spectrum_error = energy_spectrum_error(ref, rollouts[b]);
      const Histogram hr = build_histogram(s_ref);
      const Histogram hc = bin_like(hr, s_cand);
      const auto names = stats.channels();
      for (std::size_t ch = 0; ch < hr.channels(); ++ch) {
        for (std::size_t k = 0; k < hr.bins; ++k) {
          rep.histogram_rows.push_back(std::to_string(m.env_id) + "," + names[ch] + "," + std::to_string(k) + "," +
                                       fmt(hr.edges[ch][k]) + "," + fmt(hr.edges[ch][k + 1]) + "," +
                                       fmt(hr.freq[ch][k]) + "," + fmt(hc.freq[ch][k]));
        }
      }
    }
    rep.envs.push_back(m);
  }
  return rep;
}

// ----------------------------------------------------------- noise robustness

std::vector<RobustnessRow> noise_robustness_sweep(const dynsys::SystemSpec& spec, const dynsys::EnvironmentParam& env,
                                                  const RobustnessOptions& opt) {
  if (opt.r_grid.empty() || opt.r_grid.front() != 0.0 || !std::is_sorted(opt.r_grid.begin(), opt.r_grid.end())) {
    throw ConfigError("robustness: r grid must be ascending and start at 0");
  }
  if (opt.steps < 2 || opt.seeds == 0) throw ConfigError("robustness: need steps >= 2 and seeds >= 1");
  const auto stats = loss::StatSpec::for_system(spec);
  const std::size_t d = spec.dimension;
  std::vector<RobustnessRow> rows;
  for (std::size_t s = 0; s < opt.seeds; ++s) {
    const std::uint64_t seed = io::mix_seed(opt.seed, s);
    const auto start = dynsys::generate_trajectory(spec, env, 1, 0.0, seed);
    const auto u0 = start.states.data().subspan(0, d);
    const Tensor ref = dynsys::simulate(spec, env.phi, u0, opt.steps, env.env_id);
    double mean = 0.0, var = 0.0;
    for (double v : ref.data()) mean += v;
    mean /= static_cast<double>(ref.numel());
    for (double v : ref.data()) var += (v - mean) * (v - mean);
    const double sigma = std::sqrt(var / static_cast<double>(ref.numel()));
    const Tensor s_ref = loss::summary_stats(ref, stats);
    Tensor ref_future({opt.steps, d}, diff::Buffer(ref.data().begin() + static_cast<std::ptrdiff_t>(d), ref.data().end()));

    for (std::size_t ri = 0; ri < opt.r_grid.size(); ++ri) {
      const double r = opt.r_grid[ri];
      std::mt19937_64 rng(io::mix_seed(seed, 100 + ri));
      std::normal_distribution<double> noise(0.0, 1.0);
      std::vector<double> v0(u0.begin(), u0.end());
      for (double& x : v0) x += r * sigma * noise(rng);
      Tensor run = dynsys::simulate(spec, env.phi, v0, opt.steps, env.env_id);
      if (opt.measurement_noise) {
        for (double& x : run.data()) x += r * sigma * noise(rng);
      }
      Tensor run_future({opt.steps, d}, diff::Buffer(run.data().begin() + static_cast<std::ptrdiff_t>(d), run.data().end()));
      RobustnessRow row;
      row.r = r;
      row.seed_index = s;
      row.rmse = loss::rmse_loss(diff::Var::constant(ref_future), diff::Var::constant(run_future)).value().item();
      row.histogram_error = histogram_error(s_ref, loss::summary_stats(run, stats));
      row.spectrum_error = energy_spectrum_error(ref, run);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<RobustnessRow> average_over_seeds(std::span<const RobustnessRow> rows) {
  std::vector<RobustnessRow> out;
  std::vector<std::size_t> counts;
  for (const auto& row : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const RobustnessRow& o) { return o.r == row.r; });
    if (it == out.end()) {
      out.push_back(RobustnessRow{row.r, 0, 0.0, 0.0, 0.0});
      counts.push_back(0);
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    it->rmse += row.rmse;
    it->histogram_error += row.histogram_error;
    it->spectrum_error += row.spectrum_error;
    ++counts[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto n = static_cast<double>(counts[k]);
    out[k].rmse /= n;
    out[k].histogram_error /= n;
    out[k].spectrum_error /= n;
    out[k].seed_index = counts[k];
  }
  return out;
}

void write_robustness_csv(const std::filesystem::path& path, std::span<const RobustnessRow> rows) {
  std::ostringstream out;
  out << "r,seed,rmse,histogram_error,spectrum_error\n";
  for (const auto& row : rows) {
    out << fmt(row.r) << "," << row.seed_index << "," << fmt(row.rmse) << "," << fmt(row.histogram_error) << ","
        << fmt(row.spectrum_error) << "\n";
  }
  io::write_text(path, out.str());
}

}  // namespace chaosemu::metrics
