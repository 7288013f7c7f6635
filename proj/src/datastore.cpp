#include "chaosemu/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"
#include "chaosemu/version.hpp"

namespace chaosemu::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (splits.size() != trajectories.size()) throw ShapeError("dataset: split tags do not match trajectory count");
  std::set<std::int64_t> ids;
  for (const auto& t : trajectories) {
    if (t.states.rank() != 2 || t.dimension() != spec.dimension || t.length() != trajectories.front().length()) {
      throw ShapeError("dataset: trajectory " + std::to_string(t.env.env_id) + " has shape " +
                       diff::shape_str(t.states.shape()));
    }
    if (t.clean_states && t.clean_states->shape() != t.states.shape()) {
      throw ShapeError("dataset: clean states of trajectory " + std::to_string(t.env.env_id) + " have wrong shape");
    }
    if (!ids.insert(t.env.env_id).second) throw ShapeError("dataset: duplicate env_id " + std::to_string(t.env.env_id));
  }
}

json spec_to_json(const SystemSpec& spec) {
  return {{"kind", dynsys::to_string(spec.kind)},
          {"dimension", spec.dimension},
          {"domain_length", spec.domain_length},
          {"dt", spec.dt},
          {"spinup_steps", spec.spinup_steps},
          {"substeps", spec.substeps}};
}

SystemSpec spec_from_json(const json& j) {
  SystemSpec s;
  s.kind = dynsys::system_kind_from_string(j.at("kind").get<std::string>());
  s.dimension = j.at("dimension").get<std::size_t>();
  s.domain_length = j.at("domain_length").get<double>();
  s.dt = j.at("dt").get<double>();
  s.spinup_steps = j.at("spinup_steps").get<std::size_t>();
  s.substeps = j.value("substeps", std::size_t{1});
  return s;
}

std::vector<Split> assign_splits(std::size_t count, double train_fraction, double val_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
  const auto n_val =
      std::min(count - n_train, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(count))));
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> out(count, Split::Test);
  for (std::size_t i = 0; i < count; ++i) {
    if (i < n_train) out[order[i]] = Split::Train;
    else if (i < n_train + n_val) out[order[i]] = Split::Val;
  }
  return out;
}

Dataset generate_dataset(const SystemSpec& spec, const GenerateOptions& opt) {
  spec.validate();
  if (!(opt.phi_lo < opt.phi_hi)) throw ConfigError("environment range needs lo < hi");
  if (opt.horizon < 1) throw ConfigError("horizon T must be >= 1");
  if (!(opt.noise_r >= 0.0)) throw ConfigError("noise r must be >= 0");
  Dataset ds;
  ds.spec = spec;
  ds.meta = {opt.seed, opt.phi_lo, opt.phi_hi, opt.noise_r, kToolVersion};
  const auto envs = dynsys::sample_environments(opt.count, opt.phi_lo, opt.phi_hi, io::mix_seed(opt.seed, 1));
  ds.splits = assign_splits(opt.count, opt.train_fraction, opt.val_fraction, io::mix_seed(opt.seed, 2));
  ds.trajectories.reserve(opt.count);
  for (std::size_t i = 0; i < opt.count; ++i) {
    ds.trajectories.push_back(
        dynsys::generate_trajectory(spec, envs[i], opt.horizon, opt.noise_r, io::mix_seed(opt.seed, 1000 + i)));
  }
  return ds;
}

namespace {

std::string traj_file(std::int64_t env_id, bool clean) {
  return "traj_" + std::to_string(env_id) + (clean ? ".clean.f64" : ".f64");
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json entries = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& t = ds.trajectories[i];
    io::write_f64_le(dir / traj_file(t.env.env_id, false), t.states.data());
    if (t.clean_states) io::write_f64_le(dir / traj_file(t.env.env_id, true), t.clean_states->data());
    entries.push_back({{"env_id", t.env.env_id},
                       {"phi", t.env.phi},
                       {"seed", t.seed},
                       {"noise_scale", t.noise_scale},
                       {"split", to_string(ds.splits[i])},
                       {"has_clean", t.clean_states.has_value()},
                       {"bytes", t.states.numel() * sizeof(double)}});
  }
  const std::size_t frames = ds.size() == 0 ? 0 : ds.trajectories.front().length();
  json meta = {{"format_version", kDatasetFormatVersion},
               {"spec", spec_to_json(ds.spec)},
               {"shape", {frames, ds.spec.dimension}},
               {"dtype", "float64"},
               {"endianness", "little"},
               {"layout", "row-major [time, space]"},
               {"seed", ds.meta.seed},
               {"phi_range", {ds.meta.phi_lo, ds.meta.phi_hi}},
               {"noise_r", ds.meta.noise_r},
               {"tool_version", ds.meta.tool_version},
               {"trajectories", entries}};
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  json meta;
  try {
    meta = json::parse(io::read_text(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  if (meta.value("format_version", -1) != kDatasetFormatVersion) {
    throw VersionMismatchError(dir.string() + ": unsupported dataset format_version " +
                               meta.value("format_version", json(-1)).dump());
  }
  Dataset ds;
  try {
    ds.spec = spec_from_json(meta.at("spec"));
    ds.meta.seed = meta.at("seed").get<std::uint64_t>();
    ds.meta.phi_lo = meta.at("phi_range").at(0).get<double>();
    ds.meta.phi_hi = meta.at("phi_range").at(1).get<double>();
    ds.meta.noise_r = meta.at("noise_r").get<double>();
    ds.meta.tool_version = meta.at("tool_version").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(dir.string() + "/meta.json: " + e.what());
  }
  const auto shape = meta.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2 || shape[1] != ds.spec.dimension) {
    throw ShapeMismatchError(dir.string() + ": meta.json shape does not match the system dimension");
  }
  const std::size_t n = shape[0] * shape[1];
  for (const auto& e : meta.at("trajectories")) {
    Trajectory t;
    t.env = {e.at("phi").get<double>(), e.at("env_id").get<std::int64_t>()};
    t.seed = e.at("seed").get<std::uint64_t>();
    t.noise_scale = e.at("noise_scale").get<double>();
    const auto recorded = e.at("bytes").get<std::size_t>();
    if (recorded != n * sizeof(double)) {
      throw ShapeMismatchError(dir.string() + ": shape " + diff::shape_str(shape) + " implies " +
                               std::to_string(n * sizeof(double)) + " bytes but trajectory " +
                               std::to_string(t.env.env_id) + " records " + std::to_string(recorded));
    }
    auto read = [&](bool clean) {
      const fs::path p = dir / traj_file(t.env.env_id, clean);
      std::error_code ec;
      const auto size = fs::file_size(p, ec);
      if (ec) throw IoError("cannot stat " + p.string());
      if (size > n * sizeof(double)) {
        throw ShapeMismatchError(p.string() + ": file holds more data than shape " + diff::shape_str(shape));
      }
      return diff::Tensor({shape[0], shape[1]}, io::read_f64_le(p, n));
    };
    t.states = read(false);
    if (e.at("has_clean").get<bool>()) t.clean_states = read(true);
    ds.trajectories.push_back(std::move(t));
    ds.splits.push_back(split_from_string(e.at("split").get<std::string>()));
  }
  ds.validate();
  return ds;
}

Window make_window(const Dataset& ds, std::size_t trajectory, std::size_t start, std::size_t K) {
  const auto& t = ds.trajectories.at(trajectory);
  if (start + K + 1 > t.length()) {
    throw ConfigError("window [" + std::to_string(start) + ", " + std::to_string(start + K) + "] exceeds T = " +
                      std::to_string(t.length() - 1));
  }
  const std::size_t d = t.dimension();
  Window w;
  w.env_id = t.env.env_id;
  w.trajectory = trajectory;
  w.phi = t.env.phi;
  w.start = start;
  w.frames = K + 1;
  w.dimension = d;
  w.states = t.states.data().subspan(start * d, (K + 1) * d);
  if (t.clean_states) w.clean = t.clean_states->data().subspan(start * d, (K + 1) * d);
  return w;
}

namespace {

std::vector<std::size_t> resolve_pool(const Dataset& ds, std::span<const std::size_t> pool) {
  if (!pool.empty()) return {pool.begin(), pool.end()};
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  return all;
}

}  // namespace

std::vector<Window> sample_windows(const Dataset& ds, std::size_t K, std::size_t batch, std::uint64_t seed,
                                   std::span<const std::size_t> pool) {
  const std::size_t T = ds.horizon();
  if (K > T) throw ConfigError("window length K = " + std::to_string(K) + " exceeds T = " + std::to_string(T));
  const auto idx = resolve_pool(ds, pool);
  if (idx.empty() && batch > 0) throw ConfigError("sample_windows: no trajectories to sample from");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, idx.empty() ? 0 : idx.size() - 1);
  std::uniform_int_distribution<std::size_t> start(0, T - K);
  std::vector<Window> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t tr = idx[pick(rng)];
    out.push_back(make_window(ds, tr, start(rng), K));
  }
  return out;
}

std::vector<std::pair<Window, Window>> sample_contrastive_batch(const Dataset& ds, std::size_t K, std::size_t batch,
                                                                std::uint64_t seed, std::span<const std::size_t> pool) {
  const std::size_t T = ds.horizon();
  if (K + 1 > T) {
    throw ConfigError("contrastive crop K = " + std::to_string(K) + " leaves fewer than two start indices (T = " +
                      std::to_string(T) + ")");
  }
  auto idx = resolve_pool(ds, pool);
  if (batch > idx.size()) {
    throw ConfigError("contrastive batch " + std::to_string(batch) + " exceeds the " + std::to_string(idx.size()) +
                      " available trajectories");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::uniform_int_distribution<std::size_t> start(0, T - K);
  std::vector<std::pair<Window, Window>> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t s1 = start(rng);
    const std::size_t s2 = start(rng);
    out.emplace_back(make_window(ds, idx[b], s1, K), make_window(ds, idx[b], s2, K));
  }
  return out;
}

std::vector<std::pair<Window, Window>> sample_disjoint_pairs(const Dataset& ds, std::size_t K, std::uint64_t seed,
                                                             std::span<const std::size_t> pool) {
  const std::size_t T = ds.horizon();
  if (2 * (K + 1) > T + 1) {
    throw ConfigError("disjoint windows of K = " + std::to_string(K) + " do not fit twice into T = " + std::to_string(T));
  }
  const auto idx = resolve_pool(ds, pool);
  std::mt19937_64 rng(seed);
  // Two sorted draws shifted apart so the later window starts after the earlier one ends.
  std::vector<std::pair<Window, Window>> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    const std::size_t slack = T + 1 - 2 * (K + 1);
    std::uniform_int_distribution<std::size_t> first(0, slack);
    std::size_t a = first(rng), b = first(rng);
    if (a > b) std::swap(a, b);
    const std::size_t s1 = a, s2 = b + K + 1;
    if (std::bernoulli_distribution(0.5)(rng)) {
      out.emplace_back(make_window(ds, i, s1, K), make_window(ds, i, s2, K));
    } else {
      out.emplace_back(make_window(ds, i, s2, K), make_window(ds, i, s1, K));
    }
  }
  return out;
}

std::size_t default_crop_length(std::size_t T, double fraction) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(T) - 1e-9));
}

}  // namespace chaosemu::data
