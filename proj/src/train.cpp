#include "chaosemu/train.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

namespace chaosemu::train {

using diff::Tensor;
using diff::Var;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Batch {
  Tensor windows;
  std::vector<double> phi;
};

Batch make_batch(const std::vector<data::Window>& ws) {
  Batch b{enc::stack_windows(ws), {}};
  for (const auto& w : ws) b.phi.push_back(w.phi);
  return b;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> stat_moments(const data::Dataset& ds,
                                                                 std::span<const std::size_t> pool,
                                                                 const loss::StatSpec& spec) {
  std::vector<double> sum(3, 0.0), sq(3, 0.0);
  double n = 0.0;
  for (std::size_t i : pool) {
    const Tensor s = loss::summary_stats(ds.trajectories[i].states, spec);
    const std::size_t rows = s.dim(0), c = s.dim(1);
    sum.resize(c);
    sq.resize(c);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < c; ++k) {
        sum[k] += s[r * c + k];
        sq[k] += s[r * c + k] * s[r * c + k];
      }
    }
    n += static_cast<double>(rows);
  }
  if (n == 0.0) throw ConfigError("stat_moments: empty pool");
  std::vector<double> mean(sum.size()), std(sum.size());
  for (std::size_t k = 0; k < sum.size(); ++k) {
    mean[k] = sum[k] / n;
    std[k] = std::sqrt(std::max(sq[k] / n - mean[k] * mean[k], 1e-12));
  }
  return {mean, std};
}

TrainResult train_emulator(const data::Dataset& ds, const TrainConfig& cfg, const enc::Encoder* encoder,
                           const std::function<void(const TrainLogRow&)>& on_epoch) {
  const auto train_idx = ds.indices(data::Split::Train);
  auto val_idx = ds.indices(data::Split::Val);
  if (train_idx.empty()) throw ConfigError("train: the training split is empty");
  if (val_idx.empty()) val_idx = train_idx;
  if (cfg.batch == 0 || cfg.K == 0 || cfg.val_windows == 0) throw ConfigError("train: batch, K and val_windows must be positive");
  if (cfg.K + 1 > ds.horizon() + 1) throw ConfigError("train: K exceeds the trajectory length");
  if (cfg.objective.kind == loss::Objective::FeatureRmse && !encoder) {
    throw ConfigError("train: the feature objective needs an encoder checkpoint");
  }

  emu::EmulatorConfig arch = cfg.architecture;
  arch.dimension = ds.spec.dimension;
  {
    double sum = 0, sq = 0, n = 0, psum = 0, psq = 0;
    for (std::size_t i : train_idx) {
      for (double x : ds.trajectories[i].states.data()) {
        sum += x;
        sq += x * x;
        n += 1;
      }
      psum += ds.trajectories[i].env.phi;
      psq += ds.trajectories[i].env.phi * ds.trajectories[i].env.phi;
    }
    const auto m = static_cast<double>(train_idx.size());
    arch.state_mean = sum / n;
    arch.state_std = std::sqrt(std::max(sq / n - arch.state_mean * arch.state_mean, 1e-12));
    arch.phi_mean = psum / m;
    arch.phi_std = std::sqrt(std::max(psq / m - arch.phi_mean * arch.phi_mean, 1e-12));
  }
  arch.validate();

  loss::ObjectiveConfig obj = cfg.objective;
  obj.stats = loss::StatSpec::for_system(ds.spec);
  if (obj.kind == loss::Objective::SinkhornRmse && cfg.standardize_stats && obj.stat_mean.empty()) {
    std::tie(obj.stat_mean, obj.stat_std) = stat_moments(ds, train_idx, obj.stats);
  }

  TrainResult res{emu::Emulator(arch), {}, 0, std::numeric_limits<double>::infinity()};
  std::vector<Tensor> best;
  for (const Var& p : res.model.parameters()) best.push_back(p.value());

  const Batch val = make_batch(data::sample_windows(ds, cfg.K, cfg.val_windows, io::mix_seed(cfg.seed, 7), val_idx));
  std::optional<enc::Encoder> frozen_encoder;
  if (encoder) frozen_encoder = encoder->frozen();

  diff::AdamW opt(cfg.optimizer);
  const std::size_t steps = cfg.steps_per_epoch ? cfg.steps_per_epoch : (train_idx.size() + cfg.batch - 1) / cfg.batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    TrainLogRow row{epoch, 0.0, 0.0, 0.0, kNaN, kNaN, kNaN, 0.0};
    std::size_t converged = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto seed = io::mix_seed(cfg.seed, (epoch << 20) + s);
      const Batch b = make_batch(data::sample_windows(ds, cfg.K, cfg.batch, seed, train_idx));
      auto parts = loss::training_loss(Var::constant(b.windows), b.phi, res.model,
                                       frozen_encoder ? &*frozen_encoder : nullptr, obj, io::mix_seed(seed, 1));
      const double value = parts.total.value().item();
      if (!std::isfinite(value)) {
        throw DivergenceError("training loss is not finite at epoch " + std::to_string(epoch),
                              static_cast<std::int64_t>(epoch));
      }
      diff::backward(parts.total);
      opt.step(res.model.parameters());
      diff::zero_grad(res.model.parameters());
      row.train_loss += value;
      row.train_rmse += parts.rmse;
      row.train_aux += parts.aux;
      converged += parts.sinkhorn_converged ? 1 : 0;
    }
    const auto n = static_cast<double>(steps);
    row.train_loss /= n;
    row.train_rmse /= n;
    row.train_aux /= n;
    row.sinkhorn_converged = static_cast<double>(converged) / n;

    if ((cfg.eval_every && (epoch + 1) % cfg.eval_every == 0) || epoch + 1 == cfg.epochs) {
      const emu::Emulator frozen = res.model.frozen();
      const Var w = Var::constant(val.windows);
      const auto& o = obj;
      const Var roll = emu::rollout_concat(frozen, w, val.phi, o.h_rmse);
      row.val_rmse = loss::rollout_rmse(w, roll, o.h_rmse).value().item();
      row.val_loss = row.val_rmse;
      if (o.kind == loss::Objective::SinkhornRmse) {
        row.val_aux = loss::combined_loss_sinkhorn(w, val.phi, frozen, [&] {
                        auto c = o;
                        c.alpha = 1.0;
                        return c;
                      }(), io::mix_seed(cfg.seed, 8)).aux;
        row.val_loss += o.alpha * row.val_aux;
      } else if (frozen_encoder) {
        const Var main = emu::rollout_concat(frozen, w, val.phi, o.h);
        row.val_aux = loss::feature_loss(w, main, *frozen_encoder).value().item();
        if (o.kind == loss::Objective::FeatureRmse) row.val_loss += o.lambda * row.val_aux;
      }
      if (std::isfinite(row.val_loss) && row.val_loss < res.best_val_loss) {
        res.best_val_loss = row.val_loss;
        res.best_epoch = epoch;
        for (std::size_t i = 0; i < best.size(); ++i) best[i] = res.model.parameters()[i].value();
      }
    }
    res.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  for (std::size_t i = 0; i < best.size(); ++i) res.model.parameters()[i].mutable_value() = best[i];
  return res;
}

void write_train_log(const std::filesystem::path& path, std::span<const TrainLogRow> log) {
  std::ostringstream out;
  out << "epoch,train_loss,train_rmse,train_aux,val_loss,val_rmse,val_aux,sinkhorn_converged\n";
  for (const auto& r : log) {
    out << r.epoch << "," << fmt(r.train_loss) << "," << fmt(r.train_rmse) << "," << fmt(r.train_aux) << ","
        << fmt(r.val_loss) << "," << fmt(r.val_rmse) << "," << fmt(r.val_aux) << "," << fmt(r.sinkhorn_converged)
        << "\n";
  }
  io::write_text(path, out.str());
}

std::vector<TrainLogRow> read_train_log(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("epoch,", 0) != 0) throw IoError(path.string() + ": not a training log");
  std::vector<TrainLogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f;
    std::vector<double> v;
    while (std::getline(ls, f, ',')) v.push_back(f == "nan" || f == "-nan" ? kNaN : std::stod(f));
    if (v.size() != 8) throw IoError(path.string() + ": malformed row '" + line + "'");
    rows.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7]});
  }
  return rows;
}

}  // namespace chaosemu::train
