#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "chaosemu/datastore.hpp"
#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

using namespace chaosemu;
using namespace chaosemu::data;
namespace fs = std::filesystem;

namespace {

Dataset synthetic(std::size_t n, std::size_t T, std::size_t d, std::uint64_t seed) {
  Dataset ds;
  ds.spec = SystemSpec::lorenz96();
  ds.spec.dimension = d;
  ds.meta = {seed, 10, 18, 0.3, "test"};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory t;
    t.env = {10.0 + static_cast<double>(i), static_cast<std::int64_t>(i)};
    t.seed = i;
    t.noise_scale = 0.3;
    t.states = diff::Tensor({T + 1, d});
    diff::Tensor clean({T + 1, d});
    for (std::size_t j = 0; j < t.states.numel(); ++j) {
      clean[j] = g(rng);
      t.states[j] = clean[j] + 0.1 * g(rng);
    }
    if (i % 2 == 0) t.clean_states = clean;
    ds.trajectories.push_back(std::move(t));
  }
  ds.splits = assign_splits(n, 0.8, 0.1, seed);
  return ds;
}

fs::path tmpdir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("chaosemu_ds_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("save/load round trip is bit exact") {
  auto ds = synthetic(6, 30, 8, 1);
  auto dir = tmpdir("rt");
  save_dataset(ds, dir);
  auto back = load_dataset(dir);
  CHECK(back == ds);
  auto dir2 = tmpdir("rt2");
  save_dataset(back, dir2);
  for (const auto& entry : fs::directory_iterator(dir)) {
    CHECK(slurp(entry.path()) == slurp(dir2 / entry.path().filename()));
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("generated dataset round trip") {
  GenerateOptions opt;
  opt.count = 5;
  opt.horizon = 50;
  opt.seed = 3;
  auto ds = generate_dataset(SystemSpec::lorenz96(), opt);
  CHECK(ds.size() == 5);
  CHECK(ds.horizon() == 50);
  auto dir = tmpdir("gen");
  save_dataset(ds, dir);
  CHECK(load_dataset(dir) == ds);
  CHECK(generate_dataset(SystemSpec::lorenz96(), opt) == ds);
  fs::remove_all(dir);
  opt.phi_lo = 18;
  opt.phi_hi = 10;
  CHECK_THROWS_AS(generate_dataset(SystemSpec::lorenz96(), opt), ConfigError);
}

TEST_CASE("empty dataset is valid") {
  Dataset ds;
  auto dir = tmpdir("empty");
  save_dataset(ds, dir);
  auto back = load_dataset(dir);
  CHECK(back.size() == 0);
  CHECK(back == ds);
  fs::remove_all(dir);
}

TEST_CASE("load errors are distinct") {
  auto ds = synthetic(3, 20, 4, 2);
  auto dir = tmpdir("err");
  save_dataset(ds, dir);
  const auto meta_text = io::read_text(dir / "meta.json");
  auto meta = nlohmann::json::parse(meta_text);

  SUBCASE("wrong shape") {
    meta["shape"][0] = 25;
    io::write_text(dir / "meta.json", meta.dump());
    CHECK_THROWS_AS(load_dataset(dir), ShapeMismatchError);
  }
  SUBCASE("wrong version") {
    meta["format_version"] = 7;
    io::write_text(dir / "meta.json", meta.dump());
    CHECK_THROWS_AS(load_dataset(dir), VersionMismatchError);
  }
  SUBCASE("truncated file") {
    fs::resize_file(dir / "traj_1.f64", 100);
    CHECK_THROWS_AS(load_dataset(dir), TruncatedFileError);
  }
  fs::remove_all(dir);
}

TEST_CASE("splits are per environment") {
  auto s = assign_splits(200, 0.8, 0.1, 5);
  std::map<Split, int> c;
  for (auto x : s) c[x]++;
  CHECK(c[Split::Train] == 160);
  CHECK(c[Split::Val] == 20);
  CHECK(c[Split::Test] == 20);
  CHECK(s == assign_splits(200, 0.8, 0.1, 5));
}

TEST_CASE("sample_windows") {
  auto ds = synthetic(4, 20, 3, 3);
  SUBCASE("K = T starts at zero") {
    for (const auto& w : sample_windows(ds, 20, 50, 1)) CHECK(w.start == 0);
  }
  SUBCASE("views stay in bounds and match the data") {
    for (const auto& w : sample_windows(ds, 7, 200, 2)) {
      CHECK(w.start + 7 <= 20);
      CHECK(w.states.size() == 8 * 3);
      CHECK(w.states[0] == ds.trajectories[w.trajectory].states[w.start * 3]);
    }
  }
  SUBCASE("start indices are uniform") {
    const int n = 100000;
    auto ws = sample_windows(ds, 11, n, 4);  // T - K + 1 = 10
    std::vector<int> counts(10);
    for (const auto& w : ws) counts[w.start]++;
    const double p = 0.1, se = std::sqrt(n * p * (1 - p));
    for (int c : counts) CHECK(std::abs(c - n * p) < 3 * se);
  }
  SUBCASE("deterministic") {
    auto a = sample_windows(ds, 5, 10, 9), b = sample_windows(ds, 5, 10, 9);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].trajectory == b[i].trajectory);
      CHECK(a[i].start == b[i].start);
    }
  }
  CHECK_THROWS_AS(sample_windows(ds, 21, 1, 1), ConfigError);
}

TEST_CASE("sample_contrastive_batch") {
  auto ds = synthetic(6, 12, 3, 4);
  auto one = sample_contrastive_batch(ds, 3, 1, 1);
  CHECK(one.size() == 1);
  std::size_t overlap = 0, draws = 0;
  for (std::uint64_t s = 0; s < 4000; ++s) {
    auto batch = sample_contrastive_batch(ds, 3, 5, s);
    std::set<std::int64_t> ids;
    for (const auto& [a, p] : batch) {
      CHECK(a.env_id == p.env_id);
      ids.insert(a.env_id);
      overlap += (a.start > p.start ? a.start - p.start : p.start - a.start) <= 3;
      ++draws;
    }
    CHECK(ids.size() == batch.size());
  }
  // Enumerate pairs of starts in [0, T-K] = [0, 9].
  int hits = 0;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) hits += std::abs(i - j) <= 3;
  const double p = hits / 100.0;
  const double se = std::sqrt(p * (1 - p) / static_cast<double>(draws));
  CHECK(std::abs(static_cast<double>(overlap) / static_cast<double>(draws) - p) < 3 * se);
  CHECK_THROWS_AS(sample_contrastive_batch(ds, 3, 7, 1), ConfigError);
  CHECK_THROWS_AS(sample_contrastive_batch(ds, 12, 2, 1), ConfigError);
}

TEST_CASE("crop length") {
  CHECK(default_crop_length(2000) == 100);
  CHECK(default_crop_length(2001) == 101);
}

TEST_CASE("sample_disjoint_pairs") {
  auto ds = synthetic(6, 12, 3, 4);
  std::vector<std::size_t> pool{4, 1, 3};
  std::set<std::size_t> gaps;
  for (std::uint64_t s = 0; s < 500; ++s) {
    auto pairs = sample_disjoint_pairs(ds, 3, s, pool);
    REQUIRE(pairs.size() == 3);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& [q, c] = pairs[i];
      CHECK(q.trajectory == pool[i]);
      CHECK(c.trajectory == pool[i]);
      const std::size_t gap = q.start > c.start ? q.start - c.start : c.start - q.start;
      CHECK(gap >= 4);
      CHECK(std::max(q.start, c.start) + 3 <= 12);
      gaps.insert(gap);
    }
  }
  // T = 12, K = 3: starts 0..9, so gaps 4..9 all occur.
  CHECK(gaps.size() == 6);
  CHECK(sample_disjoint_pairs(ds, 5, 1).size() == 6);
  CHECK_THROWS_AS(sample_disjoint_pairs(ds, 6, 1), ConfigError);
}
