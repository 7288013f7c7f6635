#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaosemu/datastore.hpp"
#include "chaosemu/diff/ops.hpp"
#include "chaosemu/diff/optim.hpp"

namespace chaosemu::enc {

using diff::Tensor;
using diff::Var;

struct EncoderConfig {
  /// Frames per input window (K+1).
  std::size_t frames = 102;
  std::size_t dimension = 40;
  /// Number of strided convolution blocks (feature scales).
  std::size_t blocks = 3;
  std::size_t base_channels = 8;
  std::size_t embedding = 32;
  double input_mean = 0.0;
  double input_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);

  bool operator==(const EncoderConfig&) const = default;
};

/// Strided 3x3 convolutions over the [time, space] window (channels doubling,
/// GELU), global average pooling and a linear map to an L2-normalised embedding.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  /// windows [B, F, d] or [F, d] -> normalised embeddings [B, p].
  Var embed(const Var& windows) const;
  /// E per-block maps [B, C, H, W] followed by the embedding [B, p], each unit
  /// normalised along the channel axis at every position.
  std::vector<Var> features(const Var& windows) const;

  const EncoderConfig& config() const { return config_; }
  std::vector<Var>& parameters() { return params_; }
  const std::vector<Var>& parameters() const { return params_; }
  Encoder frozen() const;

  void save(const std::filesystem::path& dir) const;
  static Encoder load(const std::filesystem::path& dir);

 private:
  Encoder() = default;
  /// Returns the raw block outputs and the unnormalised embedding.
  std::vector<Var> trunk(const Var& windows) const;

  EncoderConfig config_;
  std::vector<Var> params_;
};

/// mean_n [ -<a_n,p_n>/tau + log mean_{m != n} exp(<a_n,p_m>/tau) ]. Needs B >= 2.
Var infonce_loss(const Var& anchors, const Var& positives, double tau);

struct TemperatureSchedule {
  double tau_start = 0.3;
  double tau_end = 0.7;
  std::size_t warmup_epochs = 250;
  std::size_t total_epochs = 500;
  /// Linear increase over this many epochs after warm-up; 0 switches at once.
  std::size_t ramp_epochs = 0;

  static TemperatureSchedule for_epochs(std::size_t total);
  void validate() const;
  double at(std::size_t epoch) const;
};

/// Fraction of queries whose highest-scoring candidate (inner product, ties to the
/// lower index) carries the query's label. Row n of `queries` and `candidates`
/// belongs to item n; `labels` defaults to the row index.
double top1_accuracy(const Tensor& queries, const Tensor& candidates, std::span<const std::int64_t> labels = {});

/// One query and one candidate window per trajectory in `pool`, from non-overlapping
/// time windows, embedded by `model`.
/// `labels`, if given, holds one label per dataset trajectory; otherwise env_id is the label.
double top1_accuracy(const Encoder& model, const data::Dataset& ds, std::span<const std::size_t> pool, std::size_t K,
                     std::uint64_t seed, std::span<const std::int64_t> labels = {});

struct EncoderTrainConfig {
  std::size_t epochs = 500;
  std::size_t batch = 32;
  /// Contrastive batches per epoch; 0 means ceil(train size / batch).
  std::size_t steps_per_epoch = 0;
  std::size_t K = 101;
  diff::AdamWConfig optimizer{.learning_rate = 1e-3, .weight_decay = 1e-5};
  TemperatureSchedule schedule;
  std::size_t eval_every = 10;
  std::uint64_t seed = 0;
  EncoderConfig architecture;
};

struct EncoderLogRow {
  std::size_t epoch = 0;
  double tau = 0.0;
  double loss = 0.0;
  /// NaN on epochs without evaluation.
  double val_top1 = 0.0;
};

struct EncoderTrainResult {
  Encoder model;
  std::vector<EncoderLogRow> log;
};

/// Minimises the InfoNCE objective over contrastive batches from `train` trajectories.
/// Top-1 is evaluated on `val` (or on `train` when `val` is empty). Input
/// normalisation is fitted on the training trajectories.
EncoderTrainResult train_encoder(const data::Dataset& ds, std::span<const std::size_t> train,
                                 std::span<const std::size_t> val, const EncoderTrainConfig& cfg,
                                 std::span<const std::int64_t> labels = {},
                                 const std::function<void(const EncoderLogRow&)>& on_epoch = {});

/// Stacks windows into [B, F, d].
Tensor stack_windows(std::span<const data::Window> windows);

}  // namespace chaosemu::enc
