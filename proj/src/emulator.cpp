#include "chaosemu/emulator.hpp"

#include <cmath>
#include <random>

#include "chaosemu/diff/checkpoint.hpp"
#include "chaosemu/diff/fft.hpp"
#include "chaosemu/error.hpp"

namespace chaosemu::emu {

using diff::Shape;
using nlohmann::json;

void EmulatorConfig::validate() const {
  if (dimension < 2) throw ConfigError("emulator dimension must be >= 2");
  if (width == 0 || blocks == 0) throw ConfigError("emulator width and blocks must be positive");
  if (modes == 0 || modes > fft::half_size(dimension)) {
    throw ConfigError("emulator modes must lie in [1, d/2+1], got " + std::to_string(modes));
  }
  if (!(state_std > 0.0) || !(phi_std > 0.0)) throw ConfigError("normalisation scales must be positive");
}

json EmulatorConfig::to_json() const {
  return {{"dimension", dimension}, {"width", width},         {"blocks", blocks},       {"modes", modes},
          {"residual", residual},   {"state_mean", state_mean}, {"state_std", state_std}, {"phi_mean", phi_mean},
          {"phi_std", phi_std},     {"seed", seed}};
}

EmulatorConfig EmulatorConfig::from_json(const json& j) {
  EmulatorConfig c;
  c.dimension = j.at("dimension").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.modes = j.at("modes").get<std::size_t>();
  c.residual = j.at("residual").get<bool>();
  c.state_mean = j.at("state_mean").get<double>();
  c.state_std = j.at("state_std").get<double>();
  c.phi_mean = j.at("phi_mean").get<double>();
  c.phi_std = j.at("phi_std").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// Parameter layout: lift_w, lift_b, then per block (spectral, bypass_w, bypass_b), then proj_w, proj_b.
Emulator::Emulator(EmulatorConfig config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t W = config_.width;
  auto uniform = [&](Shape s, double lo, double hi, const std::string& name) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& x : t.data()) x = u(rng);
    params_.push_back(Var::parameter(std::move(t), name));
  };
  const double a_lift = 1.0 / std::sqrt(2.0), a_w = 1.0 / std::sqrt(static_cast<double>(W));
  uniform({W, 2}, -a_lift, a_lift, "lift.weight");
  uniform({W}, -a_lift, a_lift, "lift.bias");
  for (std::size_t s = 0; s < config_.blocks; ++s) {
    const std::string p = "block" + std::to_string(s) + ".";
    uniform({config_.modes, W, W, 2}, 0.0, 1.0 / static_cast<double>(W * W), p + "spectral");
    uniform({W, W}, -a_w, a_w, p + "bypass.weight");
    uniform({W}, -a_w, a_w, p + "bypass.bias");
  }
  uniform({1, W}, -a_w, a_w, "proj.weight");
  uniform({1}, -a_w, a_w, "proj.bias");
}

std::size_t Emulator::parameter_count() const {
  std::size_t n = 0;
  for (const Var& p : params_) n += p.numel();
  return n;
}

void Emulator::zero_projection() {
  params_[params_.size() - 2].mutable_value().fill(0.0);
  params_.back().mutable_value().fill(0.0);
}

Emulator Emulator::frozen() const {
  Emulator e;
  e.config_ = config_;
  for (const Var& p : params_) e.params_.push_back(Var::constant(p.value()));
  return e;
}

Var Emulator::forward(const Var& u, std::span<const double> phi) const {
  const std::size_t d = config_.dimension;
  if (u.shape().size() != 2 || u.shape()[1] != d) {
    throw ShapeError("emulator: state shape " + diff::shape_str(u.shape()) + " does not match dimension " +
                     std::to_string(d));
  }
  const std::size_t B = u.shape()[0];
  if (phi.size() != B) throw ShapeError("emulator: expected one phi per batch row");

  const double inv_std = 1.0 / config_.state_std;
  Var un = reshape(scale(add_scalar(u, -config_.state_mean), inv_std), {B, 1, d});
  Tensor ph({B, 1, d});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < d; ++j) ph[b * d + j] = (phi[b] - config_.phi_mean) / config_.phi_std;
  std::vector<Var> chans{un, Var::constant(std::move(ph))};
  Var h = channel_linear(diff::concat(chans, 1), param(0), param(1));
  for (std::size_t s = 0; s < config_.blocks; ++s) {
    const std::size_t o = 2 + 3 * s;
    Var spec = diff::irfft(spectral_mix(diff::rfft(h), param(o)), d);
    h = spec + channel_linear(h, param(o + 1), param(o + 2));
    if (s + 1 < config_.blocks) h = gelu(h);
  }
  const std::size_t o = 2 + 3 * config_.blocks;
  Var out = reshape(channel_linear(h, param(o), param(o + 1)), {B, d});
  out = scale(out, config_.state_std);
  return config_.residual ? u + out : add_scalar(out, config_.state_mean);
}

Var Emulator::step(const Var& u, double phi) const {
  if (u.shape().size() != 1) throw ShapeError("emulator: step expects a state vector, got " + diff::shape_str(u.shape()));
  const double p[1] = {phi};
  return reshape(forward(reshape(u, {1, u.shape()[0]}), p), {u.shape()[0]});
}

void Emulator::save(const std::filesystem::path& dir) const {
  diff::save_checkpoint(dir, "emulator", config_.to_json(), params_);
}

Emulator Emulator::load(const std::filesystem::path& dir) {
  const auto ck = diff::load_checkpoint(dir);
  if (ck.kind != "emulator") throw ConfigError(dir.string() + " holds a '" + ck.kind + "' checkpoint, not an emulator");
  Emulator e(EmulatorConfig::from_json(ck.architecture));
  diff::assign_parameters(ck, e.params_);
  return e;
}

namespace {

void require_finite(const Var& v, std::size_t step) {
  for (double x : v.value().data()) {
    if (!std::isfinite(x)) throw DivergenceError("rollout diverged", static_cast<std::int64_t>(step));
  }
}

}  // namespace

Var rollout_batch(const Emulator& model, const Var& u0, std::span<const double> phi, std::size_t h) {
  std::vector<Var> frames{u0};
  for (std::size_t j = 1; j <= h; ++j) {
    frames.push_back(model.forward(frames.back(), phi));
    require_finite(frames.back(), j);
  }
  return diff::stack(frames, 1);
}

Var rollout(const Emulator& model, const Var& u0, double phi, std::size_t h) {
  if (u0.shape().size() != 1) throw ShapeError("rollout: expects a state vector, got " + diff::shape_str(u0.shape()));
  const std::size_t d = u0.shape()[0];
  const double p[1] = {phi};
  return reshape(rollout_batch(model, reshape(u0, {1, d}), p, h), {h + 1, d});
}

Var rollout_concat(const Emulator& model, const Var& window, std::span<const double> phi, std::size_t h) {
  const Shape& s = window.shape();
  const bool single = s.size() == 2;
  if (!single && s.size() != 3) throw ShapeError("rollout_concat: window must be [K+1, d] or [B, K+1, d]");
  const std::size_t B = single ? 1 : s[0], F = s[s.size() - 2], d = s.back();
  if (phi.size() != B) throw ShapeError("rollout_concat: expected one phi per window");
  if (F % (h + 1) != 0) {
    throw ConfigError("rollout_concat: K+1 = " + std::to_string(F) + " is not divisible by h+1 = " +
                      std::to_string(h + 1));
  }
  const std::size_t G = F / (h + 1);
  // Segment starts of every window, flattened to [B*G, d].
  std::vector<std::size_t> starts;
  std::vector<double> seg_phi;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t g = 0; g < G; ++g) {
      starts.push_back(b * F + g * (h + 1));
      seg_phi.push_back(phi[b]);
    }
  }
  Var u0 = diff::gather(reshape(window, {B * F, d}), 0, starts);
  Var out = rollout_batch(model, u0, seg_phi, h);  // [B*G, h+1, d]
  return single ? reshape(out, {F, d}) : reshape(out, {B, F, d});
}

}  // namespace chaosemu::emu
