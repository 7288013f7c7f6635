#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace chaosemu::io {

/// Raw little-endian IEEE-754 binary64, no header.
void write_f64_le(const std::filesystem::path& path, std::span<const double> values);
/// Reads exactly `count` values; throws TruncatedFileError if the file is shorter.
std::vector<double> read_f64_le(const std::filesystem::path& path, std::size_t count);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Creates `dir` for a new run. Refuses a non-empty existing directory unless `force`.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

/// SplitMix64 finaliser; derives independent stream seeds from (seed, salt).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace chaosemu::io
