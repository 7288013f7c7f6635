#include "chaosemu/losses.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "chaosemu/diff/fft.hpp"
#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

namespace chaosemu::loss {

using diff::Shape;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

StatSpec StatSpec::for_system(const dynsys::SystemSpec& spec) { return {spec.kind, spec.dt, spec.domain_length}; }

std::vector<std::string> StatSpec::channels() const {
  if (kind == dynsys::SystemKind::Lorenz96) return {"du_dt", "advection", "u"};
  return {"du_dt", "du_dx", "d2u_dx2"};
}

// ------------------------------------------------------------ summary statistics

Var summary_stats(const Var& window, const StatSpec& spec) {
  Var w = window;
  if (w.shape().size() == 2) w = reshape(w, {1, w.shape()[0], w.shape()[1]});
  const Shape& s = w.shape();
  if (s.size() != 3) throw ShapeError("summary_stats: window must be [F, d] or [B, F, d], got " + diff::shape_str(s));
  const std::size_t B = s[0], F = s[1], d = s[2];
  if (F < 2) throw ConfigError("summary_stats: needs at least two frames for the time derivative");
  Var now = diff::slice(w, 1, 0, F - 1);
  Var dudt = scale(diff::slice(w, 1, 1, F) - now, 1.0 / spec.dt);
  std::vector<Var> ch{dudt};
  if (spec.kind == dynsys::SystemKind::Lorenz96) {
    std::vector<std::size_t> p1(d), m1(d), m2(d);
    for (std::size_t i = 0; i < d; ++i) {
      p1[i] = (i + 1) % d;
      m1[i] = (i + d - 1) % d;
      m2[i] = (i + d - 2) % d;
    }
    ch.push_back((diff::gather(now, 2, p1) - diff::gather(now, 2, m2)) * diff::gather(now, 2, m1));
    ch.push_back(now);
  } else {
    const std::size_t m = fft::half_size(d);
    std::vector<std::complex<double>> dx(m), dxx(m);
    for (std::size_t j = 0; j < m; ++j) {
      const double k = 2.0 * std::numbers::pi * static_cast<double>(j) / spec.domain_length;
      // The Nyquist mode of a real field has no consistent odd derivative.
      dx[j] = (d % 2 == 0 && j == d / 2) ? 0.0 : std::complex<double>(0.0, k);
      dxx[j] = -k * k;
    }
    Var spec_now = diff::rfft(now);
    ch.push_back(diff::irfft(diff::complex_scale(spec_now, dx), d));
    ch.push_back(diff::irfft(diff::complex_scale(spec_now, dxx), d));
  }
  return reshape(diff::stack(ch, 3), {B * (F - 1) * d, 3});
}

Tensor summary_stats(const Tensor& window, const StatSpec& spec) {
  return summary_stats(Var::constant(window), spec).value();
}

// ---------------------------------------------------------------------- Sinkhorn

namespace {

Mat to_mat(const Tensor& t) {
  return Eigen::Map<const Mat>(t.ptr(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

Mat half_sq_dist(const Mat& X, const Mat& Y) {
  Mat C = (-X * Y.transpose());
  C.colwise() += 0.5 * X.rowwise().squaredNorm();
  C.rowwise() += 0.5 * Y.rowwise().squaredNorm().transpose();
  C = C.cwiseMax(0.0);
  if (!C.allFinite()) throw NumericError("sinkhorn: cost matrix has non-finite entries");
  return C;
}

/// out_i = log sum_j exp(h_j - C_ij / eps) for every row i.
Vec row_lse(const Mat& C, const Vec& h, double eps) {
  const double inv = 1.0 / eps;
  Vec out(C.rows());
  Eigen::ArrayXd row(C.cols());
  for (Eigen::Index i = 0; i < C.rows(); ++i) {
    row = h.array() - C.row(i).transpose().array() * inv;
    const double mx = row.maxCoeff();
    out[i] = mx + std::log((row - mx).exp().sum());
  }
  return out;
}

std::vector<double> eps_schedule(const Mat& C, const SinkhornConfig& cfg) {
  std::vector<double> out;
  if (cfg.scaling > 0.0 && cfg.scaling < 1.0) {
    double e = std::max(C.maxCoeff(), cfg.gamma);
    while (e > cfg.gamma) {
      out.push_back(e);
      e *= cfg.scaling;
    }
  }
  return out;
}

struct Plan {
  Mat T;
  double value = 0.0;
  SinkhornInfo info;
};

/// Log-domain Sinkhorn between uniform measures on the rows of X and Y.
Plan solve(const Mat& C, const SinkhornConfig& cfg) {
  const Eigen::Index n = C.rows(), m = C.cols();
  const double loga = -std::log(static_cast<double>(n)), logb = -std::log(static_cast<double>(m));
  const Mat Ct = C.transpose();
  Vec f = Vec::Zero(n), g = Vec::Zero(m);
  Plan p;
  std::size_t it = 0;
  for (double eps : eps_schedule(C, cfg)) {
    Vec fn = -eps * row_lse(C, (g.array() / eps + logb).matrix(), eps);
    Vec gn = -eps * row_lse(Ct, (f.array() / eps + loga).matrix(), eps);
    f = 0.5 * (f + fn);
    g = 0.5 * (g + gn);
    ++it;
  }
  const double eps = cfg.gamma;
  p.info.converged = false;
  while (it < cfg.max_iterations) {
    g = -eps * row_lse(Ct, (f.array() / eps + loga).matrix(), eps);
    Vec lse = row_lse(C, (g.array() / eps + logb).matrix(), eps);
    // Row marginal of the plan with the current (f, g); columns are exact after the g update.
    const Eigen::ArrayXd r = (loga + f.array() / eps + lse.array()).exp();
    p.info.marginal_error = (r - std::exp(loga)).abs().sum();
    f = -eps * lse;
    ++it;
    if (p.info.marginal_error < cfg.tolerance) {
      p.info.converged = true;
      break;
    }
  }
  p.info.iterations = it;
  p.T = ((-C).colwise() + f).rowwise() + g.transpose();
  p.T = ((p.T.array() / eps) + loga + logb).exp().matrix();
  p.value = std::exp(loga) * f.sum() + std::exp(logb) * g.sum();
  return p;
}

/// Symmetric problem OT(X, X): averaged fixed-point updates of a single potential.
Plan solve_self(const Mat& C, const SinkhornConfig& cfg) {
  const Eigen::Index n = C.rows();
  const double loga = -std::log(static_cast<double>(n));
  Vec f = Vec::Zero(n);
  Plan p;
  std::size_t it = 0;
  for (double eps : eps_schedule(C, cfg)) {
    f = 0.5 * (f - eps * row_lse(C, (f.array() / eps + loga).matrix(), eps));
    ++it;
  }
  const double eps = cfg.gamma;
  p.info.converged = false;
  while (it < cfg.max_iterations) {
    Vec lse = row_lse(C, (f.array() / eps + loga).matrix(), eps);
    const Eigen::ArrayXd r = (loga + f.array() / eps + lse.array()).exp();
    p.info.marginal_error = 2.0 * (r - std::exp(loga)).abs().sum();
    f = 0.5 * (f - eps * lse);
    ++it;
    if (p.info.marginal_error < cfg.tolerance) {
      p.info.converged = true;
      break;
    }
  }
  p.info.iterations = it;
  p.T = ((-C).colwise() + f).rowwise() + f.transpose();
  p.T = ((p.T.array() / eps) + 2.0 * loga).exp().matrix();
  p.value = 2.0 * std::exp(loga) * f.sum();
  return p;
}

void check_inputs(const Shape& a, const Shape& b) {
  if (a.size() != 2 || b.size() != 2 || a[1] != b[1] || a[0] == 0 || b[0] == 0 || a[1] == 0) {
    throw ShapeError("sinkhorn: sample sets " + diff::shape_str(a) + " and " + diff::shape_str(b) +
                     " must be non-empty [n, k] with equal k");
  }
}

void merge(SinkhornInfo* info, const Plan& p) {
  if (!info) return;
  info->converged = info->converged && p.info.converged;
  info->iterations = std::max(info->iterations, p.info.iterations);
  info->marginal_error = std::max(info->marginal_error, p.info.marginal_error);
}

}  // namespace

double sinkhorn_cost(const Tensor& S, const Tensor& S_hat, const SinkhornConfig& cfg, SinkhornInfo* info) {
  check_inputs(S.shape(), S_hat.shape());
  if (!(cfg.gamma > 0.0)) throw ConfigError("sinkhorn: gamma must be positive");
  auto p = solve(half_sq_dist(to_mat(S), to_mat(S_hat)), cfg);
  if (info) *info = p.info;
  return p.value;
}

Var sinkhorn_divergence(const Var& S, const Var& S_hat, const SinkhornConfig& cfg, SinkhornInfo* info) {
  check_inputs(S.shape(), S_hat.shape());
  if (!(cfg.gamma > 0.0)) throw ConfigError("sinkhorn: gamma must be positive");
  const Mat X = to_mat(S.value()), Y = to_mat(S_hat.value());
  Plan xy = solve(half_sq_dist(X, Y), cfg);
  Plan xx = solve_self(half_sq_dist(X, X), cfg);
  Plan yy = solve_self(half_sq_dist(Y, Y), cfg);
  if (info) *info = {};
  merge(info, xy);
  merge(info, xx);
  merge(info, yy);
  const double value = xy.value - 0.5 * (xx.value + yy.value);
  auto state = std::make_shared<std::array<Plan, 3>>(std::array<Plan, 3>{std::move(xy), std::move(xx), std::move(yy)});
  return Var::make(Tensor::scalar(value), {S, S_hat}, [S, S_hat, state](const Tensor& g, std::span<Tensor* const> gi) {
    const Mat X = to_mat(S.value()), Y = to_mat(S_hat.value());
    const auto& [xy, xx, yy] = *state;
    const double go = g.item();
    if (gi[0]) {
      Mat gx = xy.T.rowwise().sum().asDiagonal() * X - xy.T * Y;
      gx -= xx.T.rowwise().sum().asDiagonal() * X - xx.T * X;
      Eigen::Map<Mat>(gi[0]->ptr(), X.rows(), X.cols()) += go * gx;
    }
    if (gi[1]) {
      Mat gy = xy.T.colwise().sum().transpose().asDiagonal() * Y - xy.T.transpose() * X;
      gy -= yy.T.rowwise().sum().asDiagonal() * Y - yy.T * Y;
      Eigen::Map<Mat>(gi[1]->ptr(), Y.rows(), Y.cols()) += go * gy;
    }
  });
}

// -------------------------------------------------------------------- rMSE etc.

Var rmse_loss(const Var& target, const Var& prediction) {
  if (target.shape() != prediction.shape() || target.shape().empty()) {
    throw ShapeError("rmse_loss: target " + diff::shape_str(target.shape()) + " vs prediction " +
                     diff::shape_str(prediction.shape()));
  }
  const std::size_t d = target.shape().back(), frames = target.numel() / d;
  Var t = reshape(target, {frames, d});
  Var p = reshape(prediction, {frames, d});
  Var den = sum_axis(square(t), 1);
  for (double x : den.value().data()) {
    if (!(x > 0.0)) throw NumericError("rmse_loss: target frame with zero norm");
  }
  return mean(div(sum_axis(square(p - t), 1), den));
}

Var feature_loss(const Var& target, const Var& prediction, const enc::Encoder& encoder) {
  if (target.shape() != prediction.shape()) {
    throw ShapeError("feature_loss: target " + diff::shape_str(target.shape()) + " vs prediction " +
                     diff::shape_str(prediction.shape()));
  }
  const enc::Encoder frozen = encoder.frozen();
  const auto ft = frozen.features(target);
  const auto fp = frozen.features(prediction);
  Var total;
  for (std::size_t l = 0; l < ft.size(); ++l) {
    Var dist = add_scalar(neg(mean(diff::cosine_similarity(ft[l], fp[l], 1))), 1.0);
    total = total.defined() ? total + dist : dist;
  }
  return total;
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::Rmse: return "rmse";
    case Objective::SinkhornRmse: return "sinkhorn+rmse";
    case Objective::FeatureRmse: return "feature+rmse";
  }
  return "?";
}

Objective objective_from_string(const std::string& s) {
  if (s == "rmse") return Objective::Rmse;
  if (s == "sinkhorn+rmse" || s == "sinkhorn") return Objective::SinkhornRmse;
  if (s == "feature+rmse" || s == "feature") return Objective::FeatureRmse;
  throw ConfigError("unknown objective '" + s + "' (expected rmse, sinkhorn+rmse or feature+rmse)");
}

Var rollout_rmse(const Var& windows, const Var& rollout, std::size_t h) {
  if (h == 0) throw ConfigError("rMSE needs h >= 1 (no predicted frames otherwise)");
  const std::size_t axis = windows.shape().size() - 2;
  const std::size_t F = windows.shape()[axis];
  std::vector<std::size_t> predicted;
  for (std::size_t t = 0; t < F; ++t)
    if (t % (h + 1) != 0) predicted.push_back(t);
  return rmse_loss(diff::gather(windows, axis, predicted), diff::gather(rollout, axis, predicted));
}

namespace {

std::span<const double> as_span(const std::vector<double>& v) { return {v.data(), v.size()}; }

struct Rollouts {
  Var main;
  Var rmse;
};

Rollouts rollouts(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                  const ObjectiveConfig& cfg) {
  Rollouts r;
  r.main = emu::rollout_concat(model, windows, phi, cfg.h);
  r.rmse = cfg.h_rmse == cfg.h ? rollout_rmse(windows, r.main, cfg.h)
                               : rollout_rmse(windows, emu::rollout_concat(model, windows, phi, cfg.h_rmse), cfg.h_rmse);
  return r;
}

Var as_batch(const Var& windows) {
  return windows.shape().size() == 2 ? reshape(windows, {1, windows.shape()[0], windows.shape()[1]}) : windows;
}

}  // namespace

LossParts rmse_objective(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                         const ObjectiveConfig& cfg) {
  const Var w = as_batch(windows);
  LossParts out;
  out.total = rollout_rmse(w, emu::rollout_concat(model, w, phi, cfg.h_rmse), cfg.h_rmse);
  out.rmse = out.total.value().item();
  return out;
}

LossParts combined_loss_sinkhorn(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                                 const ObjectiveConfig& cfg, std::uint64_t seed) {
  if (cfg.alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (cfg.alpha == 0.0) return rmse_objective(windows, phi, model, cfg);
  const Var w = as_batch(windows);
  const std::size_t B = w.shape()[0];
  Rollouts r = rollouts(w, phi, model, cfg);
  Var s_data = summary_stats(w.detached(), cfg.stats);
  Var s_pred = summary_stats(r.main, cfg.stats);
  const std::size_t per = s_data.shape()[0] / B;
  const std::size_t n = cfg.max_samples ? std::min(per, cfg.max_samples) : per;
  const bool standardize = !cfg.stat_mean.empty();
  std::vector<double> inv_std;
  for (double s : cfg.stat_std) inv_std.push_back(1.0 / s);

  Var sk_sum;
  LossParts out;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx(per);
  for (std::size_t b = 0; b < B; ++b) {
    std::iota(idx.begin(), idx.end(), b * per);
    if (n < per) {
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, per - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
    }
    std::span<const std::size_t> sel(idx.data(), n);
    Var a = diff::gather(s_data, 0, sel), p = diff::gather(s_pred, 0, sel);
    if (standardize) {
      a = diff::affine_lastdim(a, as_span(cfg.stat_mean), as_span(inv_std));
      p = diff::affine_lastdim(p, as_span(cfg.stat_mean), as_span(inv_std));
    }
    SinkhornInfo info;
    Var sk = sinkhorn_divergence(a, p, cfg.sinkhorn, &info);
    out.sinkhorn_converged = out.sinkhorn_converged && info.converged;
    sk_sum = sk_sum.defined() ? sk_sum + sk : sk;
  }
  Var sk_mean = scale(sk_sum, 1.0 / static_cast<double>(B));
  out.total = scale(sk_mean, cfg.alpha) + r.rmse;
  out.rmse = r.rmse.value().item();
  out.aux = sk_mean.value().item();
  return out;
}

LossParts combined_loss_feature(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                                const enc::Encoder& encoder, const ObjectiveConfig& cfg) {
  if (cfg.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (cfg.lambda == 0.0) return rmse_objective(windows, phi, model, cfg);
  const Var w = as_batch(windows);
  Rollouts r = rollouts(w, phi, model, cfg);
  Var fl = feature_loss(w.detached(), r.main, encoder);
  LossParts out;
  out.total = scale(fl, cfg.lambda) + r.rmse;
  out.rmse = r.rmse.value().item();
  out.aux = fl.value().item();
  return out;
}

LossParts training_loss(const Var& windows, std::span<const double> phi, const emu::Emulator& model,
                        const enc::Encoder* encoder, const ObjectiveConfig& cfg, std::uint64_t seed) {
  switch (cfg.kind) {
    case Objective::Rmse: return rmse_objective(windows, phi, model, cfg);
    case Objective::SinkhornRmse: return combined_loss_sinkhorn(windows, phi, model, cfg, seed);
    case Objective::FeatureRmse:
      if (!encoder) throw ConfigError("the feature objective needs a trained encoder");
      return combined_loss_feature(windows, phi, model, *encoder, cfg);
  }
  throw ConfigError("unknown objective");
}

}  // namespace chaosemu::loss
