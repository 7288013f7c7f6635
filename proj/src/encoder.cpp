#include "chaosemu/encoder.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "chaosemu/diff/checkpoint.hpp"
#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

namespace chaosemu::enc {

using diff::Shape;
using nlohmann::json;

namespace {

std::size_t conv_out(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

}  // namespace

void EncoderConfig::validate() const {
  if (blocks < 3) throw ConfigError("encoder needs at least 3 blocks, got " + std::to_string(blocks));
  if (frames < 2 || dimension < 2 || base_channels == 0 || embedding == 0) {
    throw ConfigError("encoder sizes must be positive (frames >= 2)");
  }
  if (!(input_std > 0.0)) throw ConfigError("encoder input_std must be positive");
}

json EncoderConfig::to_json() const {
  return {{"frames", frames},         {"dimension", dimension},   {"blocks", blocks},
          {"base_channels", base_channels}, {"embedding", embedding}, {"input_mean", input_mean},
          {"input_std", input_std},   {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.frames = j.at("frames").get<std::size_t>();
  c.dimension = j.at("dimension").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.base_channels = j.at("base_channels").get<std::size_t>();
  c.embedding = j.at("embedding").get<std::size_t>();
  c.input_mean = j.at("input_mean").get<double>();
  c.input_std = j.at("input_std").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// Layout: per block (conv weight, conv bias), then head weight [p, C_last] and bias [p].
Encoder::Encoder(EncoderConfig config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  auto uniform = [&](Shape s, double a, const std::string& name) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> u(-a, a);
    for (double& x : t.data()) x = u(rng);
    params_.push_back(Var::parameter(std::move(t), name));
  };
  std::size_t cin = 1, c = config_.base_channels;
  for (std::size_t b = 0; b < config_.blocks; ++b, cin = c, c *= 2) {
    const double a = 1.0 / std::sqrt(static_cast<double>(cin * 9));
    uniform({c, cin, 3, 3}, a, "conv" + std::to_string(b) + ".weight");
    uniform({c}, a, "conv" + std::to_string(b) + ".bias");
  }
  const double a = 1.0 / std::sqrt(static_cast<double>(cin));
  uniform({config_.embedding, cin}, a, "head.weight");
  uniform({config_.embedding}, a, "head.bias");
}

Encoder Encoder::frozen() const {
  Encoder e;
  e.config_ = config_;
  for (const Var& p : params_) e.params_.push_back(Var::constant(p.value()));
  return e;
}

std::vector<Var> Encoder::trunk(const Var& windows) const {
  Shape s = windows.shape();
  Var w = windows;
  if (s.size() == 2) {
    w = reshape(w, {1, s[0], s[1]});
    s = w.shape();
  }
  if (s.size() != 3 || s[2] != config_.dimension) {
    throw ShapeError("encoder: windows of shape " + diff::shape_str(s) + " do not match dimension " +
                     std::to_string(config_.dimension));
  }
  if (s[1] < config_.frames) {
    throw ConfigError("encoder: window has " + std::to_string(s[1]) + " frames, needs " +
                      std::to_string(config_.frames));
  }
  if (s[1] > config_.frames) w = diff::slice(w, 1, 0, config_.frames);
  const std::size_t B = s[0];
  Var h = reshape(scale(add_scalar(w, -config_.input_mean), 1.0 / config_.input_std),
                  {B, 1, config_.frames, config_.dimension});
  std::vector<Var> out;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    h = gelu(conv2d(h, params_[2 * b], params_[2 * b + 1], 2, 1));
    out.push_back(h);
  }
  const Shape& hs = h.shape();
  Var pooled = mean_axis(reshape(h, {B, hs[1], hs[2] * hs[3]}), 2);  // [B, C]
  const std::size_t o = 2 * config_.blocks;
  Var emb = matmul(pooled, params_[o], true);
  Tensor ones({B, 1}, 1.0);
  emb = emb + matmul(Var::constant(std::move(ones)), reshape(params_[o + 1], {1, config_.embedding}));
  out.push_back(emb);
  return out;
}

Var Encoder::embed(const Var& windows) const { return diff::normalize(trunk(windows).back(), 1); }

std::vector<Var> Encoder::features(const Var& windows) const {
  auto maps = trunk(windows);
  for (Var& m : maps) m = diff::normalize(m, 1);
  return maps;
}

void Encoder::save(const std::filesystem::path& dir) const {
  diff::save_checkpoint(dir, "encoder", config_.to_json(), params_);
}

Encoder Encoder::load(const std::filesystem::path& dir) {
  const auto ck = diff::load_checkpoint(dir);
  if (ck.kind != "encoder") throw ConfigError(dir.string() + " holds a '" + ck.kind + "' checkpoint, not an encoder");
  Encoder e(EncoderConfig::from_json(ck.architecture));
  diff::assign_parameters(ck, e.params_);
  return e;
}

Var infonce_loss(const Var& anchors, const Var& positives, double tau) {
  if (!(tau > 0.0)) throw ConfigError("infonce_loss: tau must be positive");
  if (anchors.shape().size() != 2 || anchors.shape() != positives.shape()) {
    throw ShapeError("infonce_loss: anchors " + diff::shape_str(anchors.shape()) + " vs positives " +
                     diff::shape_str(positives.shape()));
  }
  const std::size_t B = anchors.shape()[0];
  if (B < 2) throw ConfigError("infonce_loss: needs at least two pairs for in-batch negatives");
  Var logits = scale(matmul(anchors, positives, true), 1.0 / tau);  // [B, B]
  Tensor off({B, B}, 1.0), eye({B, B});
  for (std::size_t i = 0; i < B; ++i) {
    off[i * B + i] = 0.0;
    eye[i * B + i] = 1.0;
  }
  // Shift by the known bound 1/tau before exponentiating; rows are unit vectors.
  const double shift = 1.0 / tau;
  Var neg = mul(exp(add_scalar(logits, -shift)), Var::constant(std::move(off)));
  Var log_mean = add_scalar(log(scale(sum_axis(neg, 1), 1.0 / static_cast<double>(B - 1))), shift);
  Var pos = sum_axis(mul(logits, Var::constant(std::move(eye))), 1);
  return mean(log_mean - pos);
}

TemperatureSchedule TemperatureSchedule::for_epochs(std::size_t total) {
  TemperatureSchedule s;
  s.total_epochs = total;
  s.warmup_epochs = total / 2;
  return s;
}

void TemperatureSchedule::validate() const {
  if (!(tau_start > 0.0) || !(tau_start <= tau_end)) throw ConfigError("temperature schedule needs 0 < tau_start <= tau_end");
}

double TemperatureSchedule::at(std::size_t epoch) const {
  if (epoch < warmup_epochs) return tau_start;
  if (ramp_epochs == 0 || epoch >= warmup_epochs + ramp_epochs) return tau_end;
  const double f = static_cast<double>(epoch - warmup_epochs + 1) / static_cast<double>(ramp_epochs);
  return tau_start + f * (tau_end - tau_start);
}

double top1_accuracy(const Tensor& queries, const Tensor& candidates, std::span<const std::int64_t> labels) {
  if (queries.rank() != 2 || queries.shape() != candidates.shape()) {
    throw ShapeError("top1_accuracy: queries " + diff::shape_str(queries.shape()) + " vs candidates " +
                     diff::shape_str(candidates.shape()));
  }
  const std::size_t N = queries.dim(0), p = queries.dim(1);
  if (N == 0) return 0.0;
  if (!labels.empty() && labels.size() != N) throw ShapeError("top1_accuracy: one label per row required");
  auto label = [&](std::size_t i) { return labels.empty() ? static_cast<std::int64_t>(i) : labels[i]; };
  std::size_t hits = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < p; ++k) s += queries[n * p + k] * candidates[j * p + k];
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    hits += label(best) == label(n);
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

Tensor stack_windows(std::span<const data::Window> windows) {
  if (windows.empty()) return Tensor({0, 0, 0});
  const std::size_t F = windows.front().frames, d = windows.front().dimension;
  Tensor out({windows.size(), F, d});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].frames != F || windows[b].dimension != d) throw ShapeError("stack_windows: ragged windows");
    std::copy(windows[b].states.begin(), windows[b].states.end(), out.ptr() + b * F * d);
  }
  return out;
}

double top1_accuracy(const Encoder& model, const data::Dataset& ds, std::span<const std::size_t> pool, std::size_t K,
                     std::uint64_t seed, std::span<const std::int64_t> labels) {
  auto pairs = data::sample_disjoint_pairs(ds, K, seed, pool);
  std::vector<data::Window> q, c;
  std::vector<std::int64_t> lab;
  for (const auto& [a, b] : pairs) {
    q.push_back(a);
    c.push_back(b);
    lab.push_back(labels.empty() ? a.env_id : labels[a.trajectory]);
  }
  const Encoder f = model.frozen();
  const Tensor eq = f.embed(Var::constant(stack_windows(q))).value();
  const Tensor ec = f.embed(Var::constant(stack_windows(c))).value();
  return top1_accuracy(eq, ec, lab);
}

EncoderTrainResult train_encoder(const data::Dataset& ds, std::span<const std::size_t> train,
                                 std::span<const std::size_t> val, const EncoderTrainConfig& cfg,
                                 std::span<const std::int64_t> labels,
                                 const std::function<void(const EncoderLogRow&)>& on_epoch) {
  if (train.size() < 2) throw ConfigError("train_encoder: needs at least two training environments");
  if (cfg.batch < 2 || cfg.batch > train.size()) {
    throw ConfigError("train_encoder: batch must lie in [2, " + std::to_string(train.size()) + "]");
  }
  cfg.schedule.validate();
  EncoderConfig arch = cfg.architecture;
  arch.frames = cfg.K + 1;
  arch.dimension = ds.spec.dimension;
  double sum = 0, sq = 0, n = 0;
  for (std::size_t i : train) {
    for (double x : ds.trajectories[i].states.data()) {
      sum += x;
      sq += x * x;
      n += 1;
    }
  }
  arch.input_mean = sum / n;
  arch.input_std = std::sqrt(std::max(sq / n - arch.input_mean * arch.input_mean, 1e-12));
  EncoderTrainResult res{Encoder(arch), {}};
  diff::AdamW opt(cfg.optimizer);
  const std::span<const std::size_t> eval_pool = val.empty() ? train : val;
  const std::size_t steps = cfg.steps_per_epoch ? cfg.steps_per_epoch : (train.size() + cfg.batch - 1) / cfg.batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double tau = cfg.schedule.at(epoch);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto seed = io::mix_seed(cfg.seed, (epoch << 20) + s);
      auto pairs = data::sample_contrastive_batch(ds, cfg.K, cfg.batch, seed, train);
      std::vector<data::Window> a, p;
      for (const auto& [x, y] : pairs) {
        a.push_back(x);
        p.push_back(y);
      }
      Var loss = infonce_loss(res.model.embed(Var::constant(stack_windows(a))),
                              res.model.embed(Var::constant(stack_windows(p))), tau);
      if (!std::isfinite(loss.value().item())) {
        throw DivergenceError("encoder loss is not finite", static_cast<std::int64_t>(epoch));
      }
      diff::backward(loss);
      opt.step(res.model.parameters());
      diff::zero_grad(res.model.parameters());
      loss_sum += loss.value().item();
    }
    EncoderLogRow row{epoch, tau, loss_sum / static_cast<double>(steps), std::numeric_limits<double>::quiet_NaN()};
    if (cfg.eval_every && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)) {
      row.val_top1 = top1_accuracy(res.model, ds, eval_pool, cfg.K, io::mix_seed(cfg.seed, 0xE7A1 + epoch), labels);
    }
    res.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return res;
}

}  // namespace chaosemu::enc
