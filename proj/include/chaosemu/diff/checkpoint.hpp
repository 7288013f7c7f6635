#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaosemu/diff/var.hpp"

namespace chaosemu::diff {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  /// Model kind tag, e.g. "emulator" or "encoder".
  std::string kind;
  nlohmann::json architecture;
  std::map<std::string, Tensor> parameters;
};

/// Writes `<dir>/model.json` (architecture plus a manifest of named parameter
/// shapes and offsets) and `<dir>/params.f64` (all parameters, little-endian,
/// in manifest order).
void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const nlohmann::json& architecture,
                     const std::vector<Var>& params);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Copies checkpoint values into `params` by name, checking shapes.
void assign_parameters(const Checkpoint& ckpt, std::vector<Var>& params);

}  // namespace chaosemu::diff
