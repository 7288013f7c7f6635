#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaosemu/dynsys.hpp"

namespace chaosemu::data {

using dynsys::SystemSpec;
using dynsys::Trajectory;

inline constexpr int kDatasetFormatVersion = 1;

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct GenerationMeta {
  std::uint64_t seed = 0;
  double phi_lo = 0.0;
  double phi_hi = 0.0;
  double noise_r = 0.0;
  std::string tool_version;

  bool operator==(const GenerationMeta&) const = default;
};

struct Dataset {
  SystemSpec spec;
  std::vector<Trajectory> trajectories;
  /// One tag per trajectory.
  std::vector<Split> splits;
  GenerationMeta meta;

  std::size_t size() const { return trajectories.size(); }
  /// Post-spin-up length T (states have T+1 rows); 0 for an empty dataset.
  std::size_t horizon() const { return trajectories.empty() ? 0 : trajectories.front().length() - 1; }
  std::vector<std::size_t> indices(Split s) const;
  /// Throws ShapeError unless all trajectories share [T+1, d] with d = spec.dimension and env_ids are unique.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

nlohmann::json spec_to_json(const SystemSpec& spec);
SystemSpec spec_from_json(const nlohmann::json& j);

/// Environment-level split with the given train/val fractions (rest is test), seeded.
std::vector<Split> assign_splits(std::size_t count, double train_fraction, double val_fraction, std::uint64_t seed);

struct GenerateOptions {
  std::size_t count = 200;
  double phi_lo = 10.0;
  double phi_hi = 18.0;
  std::size_t horizon = 2000;
  double noise_r = 0.3;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
};

Dataset generate_dataset(const SystemSpec& spec, const GenerateOptions& opt);

/// Directory layout: meta.json plus traj_<env_id>.f64 (observed) and traj_<env_id>.clean.f64.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Throws VersionMismatchError, ShapeMismatchError or TruncatedFileError.
Dataset load_dataset(const std::filesystem::path& dir);

/// Read-only view of K+1 consecutive frames of one trajectory.
struct Window {
  std::int64_t env_id = 0;
  std::size_t trajectory = 0;
  double phi = 0.0;
  std::size_t start = 0;
  std::size_t frames = 0;
  std::size_t dimension = 0;
  std::span<const double> states;
  /// Empty when the trajectory has no clean record.
  std::span<const double> clean;

  diff::Tensor to_tensor() const { return diff::Tensor({frames, dimension}, diff::Buffer(states.begin(), states.end())); }
};

Window make_window(const Dataset& ds, std::size_t trajectory, std::size_t start, std::size_t K);

/// `batch` windows of K+1 frames, uniform over (trajectory in `pool`, start). An empty pool means all trajectories.
std::vector<Window> sample_windows(const Dataset& ds, std::size_t K, std::size_t batch, std::uint64_t seed,
                                   std::span<const std::size_t> pool = {});

/// One (anchor, positive) pair from each of `batch` distinct trajectories, starts drawn independently.
std::vector<std::pair<Window, Window>> sample_contrastive_batch(const Dataset& ds, std::size_t K, std::size_t batch,
                                                                std::uint64_t seed,
                                                                std::span<const std::size_t> pool = {});

/// One (query, candidate) pair per trajectory in `pool`, in pool order, from
/// non-overlapping time windows. Needs T + 1 >= 2 (K + 1).
std::vector<std::pair<Window, Window>> sample_disjoint_pairs(const Dataset& ds, std::size_t K, std::uint64_t seed,
                                                             std::span<const std::size_t> pool = {});

/// Crop length ceil(fraction * T).
std::size_t default_crop_length(std::size_t T, double fraction = 0.05);

}  // namespace chaosemu::data
