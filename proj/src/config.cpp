#include "chaosemu/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

namespace chaosemu::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError(key + ": cannot read '" + value + "' as " + expected);
}

static_assert(std::is_same_v<std::size_t, std::uint64_t>);

template <class T>
T parse(const std::string& key, const std::string& raw);

template <>
double parse<double>(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    bad_value(key, raw, "a number");
  }
  if (pos != v.size()) bad_value(key, raw, "a number");
  return out;
}

template <>
std::uint64_t parse<std::uint64_t>(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v.empty() || v[0] == '-') bad_value(key, raw, "a non-negative integer");
  std::size_t pos = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    bad_value(key, raw, "a non-negative integer");
  }
  if (pos != v.size()) bad_value(key, raw, "a non-negative integer");
  return out;
}

template <>
bool parse<bool>(const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, raw, "a boolean");
}

template <>
std::string parse<std::string>(const std::string&, const std::string& raw) {
  return trim(raw);
}

template <>
fs::path parse<fs::path>(const std::string&, const std::string& raw) {
  return fs::path(trim(raw));
}

template <>
std::vector<double> parse<std::vector<double>>(const std::string& key, const std::string& raw) {
  std::string v = raw;
  std::replace(v.begin(), v.end(), ',', ' ');
  std::istringstream in(v);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(parse<double>(key, tok));
  return out;
}

std::string format(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string format(std::uint64_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(const fs::path& v) { return v.string(); }
std::string format(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T, class Access>
Field field(std::string key, Access access) {
  return Field{key,
               [access, key](ExperimentConfig& c, const std::string& v) { access(c) = parse<T>(key, v); },
               [access](const ExperimentConfig& c) {
                 return format(static_cast<const T&>(access(const_cast<ExperimentConfig&>(c))));
               }};
}

#define CE_FIELD(T, key, member) field<T>(key, [](ExperimentConfig& c) -> T& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(Field{"system.kind",
                      [](ExperimentConfig& c, const std::string& v) {
                        const auto kind = dynsys::system_kind_from_string(trim(v));
                        if (kind != c.system.kind) c = ExperimentConfig::for_system(kind);
                      },
                      [](const ExperimentConfig& c) { return dynsys::to_string(c.system.kind); }});
    f.push_back(CE_FIELD(std::size_t, "system.dimension", system.dimension));
    f.push_back(CE_FIELD(double, "system.domain_length", system.domain_length));
    f.push_back(CE_FIELD(double, "system.dt", system.dt));
    f.push_back(CE_FIELD(std::size_t, "system.spinup_steps", system.spinup_steps));
    f.push_back(CE_FIELD(std::size_t, "system.substeps", system.substeps));

    f.push_back(CE_FIELD(fs::path, "data.dir", data_dir));
    f.push_back(CE_FIELD(std::size_t, "data.count", data.count));
    f.push_back(CE_FIELD(double, "data.phi_lo", data.phi_lo));
    f.push_back(CE_FIELD(double, "data.phi_hi", data.phi_hi));
    f.push_back(CE_FIELD(std::size_t, "data.horizon", data.horizon));
    f.push_back(CE_FIELD(double, "data.noise_r", data.noise_r));
    f.push_back(CE_FIELD(std::uint64_t, "data.seed", data.seed));
    f.push_back(CE_FIELD(double, "data.train_fraction", data.train_fraction));
    f.push_back(CE_FIELD(double, "data.val_fraction", data.val_fraction));
    f.push_back(CE_FIELD(double, "data.blur_std", blur_std));

    f.push_back(CE_FIELD(std::size_t, "model.width", train.architecture.width));
    f.push_back(CE_FIELD(std::size_t, "model.blocks", train.architecture.blocks));
    f.push_back(CE_FIELD(std::size_t, "model.modes", train.architecture.modes));
    f.push_back(CE_FIELD(bool, "model.residual", train.architecture.residual));
    f.push_back(CE_FIELD(std::uint64_t, "model.seed", train.architecture.seed));

    f.push_back(Field{"loss.objective",
                      [](ExperimentConfig& c, const std::string& v) {
                        c.train.objective.kind = loss::objective_from_string(trim(v));
                      },
                      [](const ExperimentConfig& c) { return loss::to_string(c.train.objective.kind); }});
    f.push_back(CE_FIELD(double, "loss.alpha", train.objective.alpha));
    f.push_back(CE_FIELD(double, "loss.lambda", train.objective.lambda));
    f.push_back(CE_FIELD(double, "loss.gamma", train.objective.sinkhorn.gamma));
    f.push_back(CE_FIELD(std::size_t, "loss.h", train.objective.h));
    f.push_back(CE_FIELD(std::size_t, "loss.h_rmse", train.objective.h_rmse));
    f.push_back(CE_FIELD(std::size_t, "loss.sinkhorn_iterations", train.objective.sinkhorn.max_iterations));
    f.push_back(CE_FIELD(double, "loss.sinkhorn_tolerance", train.objective.sinkhorn.tolerance));
    f.push_back(CE_FIELD(double, "loss.sinkhorn_scaling", train.objective.sinkhorn.scaling));
    f.push_back(CE_FIELD(std::size_t, "loss.max_samples", train.objective.max_samples));
    f.push_back(CE_FIELD(bool, "loss.standardize", train.standardize_stats));

    f.push_back(CE_FIELD(std::size_t, "train.epochs", train.epochs));
    f.push_back(CE_FIELD(std::size_t, "train.batch", train.batch));
    f.push_back(CE_FIELD(std::size_t, "train.steps_per_epoch", train.steps_per_epoch));
    f.push_back(CE_FIELD(std::size_t, "train.K", train.K));
    f.push_back(CE_FIELD(double, "train.lr", train.optimizer.learning_rate));
    f.push_back(CE_FIELD(double, "train.weight_decay", train.optimizer.weight_decay));
    f.push_back(CE_FIELD(std::uint64_t, "train.seed", train.seed));
    f.push_back(CE_FIELD(std::size_t, "train.val_windows", train.val_windows));
    f.push_back(CE_FIELD(std::size_t, "train.eval_every", train.eval_every));

    f.push_back(CE_FIELD(fs::path, "encoder.dir", encoder_dir));
    f.push_back(CE_FIELD(std::size_t, "encoder.epochs", encoder.epochs));
    f.push_back(CE_FIELD(std::size_t, "encoder.batch", encoder.batch));
    f.push_back(CE_FIELD(std::size_t, "encoder.steps_per_epoch", encoder.steps_per_epoch));
    f.push_back(CE_FIELD(std::size_t, "encoder.K", encoder.K));
    f.push_back(CE_FIELD(double, "encoder.lr", encoder.optimizer.learning_rate));
    f.push_back(CE_FIELD(double, "encoder.weight_decay", encoder.optimizer.weight_decay));
    f.push_back(CE_FIELD(double, "encoder.tau_start", encoder.schedule.tau_start));
    f.push_back(CE_FIELD(double, "encoder.tau_end", encoder.schedule.tau_end));
    f.push_back(CE_FIELD(std::size_t, "encoder.warmup_epochs", encoder.schedule.warmup_epochs));
    f.push_back(CE_FIELD(std::size_t, "encoder.ramp_epochs", encoder.schedule.ramp_epochs));
    f.push_back(CE_FIELD(std::size_t, "encoder.blocks", encoder.architecture.blocks));
    f.push_back(CE_FIELD(std::size_t, "encoder.base_channels", encoder.architecture.base_channels));
    f.push_back(CE_FIELD(std::size_t, "encoder.embedding", encoder.architecture.embedding));
    f.push_back(CE_FIELD(std::size_t, "encoder.eval_every", encoder.eval_every));
    f.push_back(CE_FIELD(std::uint64_t, "encoder.seed", encoder.seed));

    f.push_back(CE_FIELD(fs::path, "eval.dir", eval_dir));
    f.push_back(CE_FIELD(fs::path, "eval.checkpoint", checkpoint));
    f.push_back(CE_FIELD(std::string, "eval.model", eval_model));
    f.push_back(CE_FIELD(std::size_t, "eval.horizon", eval.horizon));
    f.push_back(CE_FIELD(std::size_t, "eval.rmse_horizon", eval.rmse_horizon));
    f.push_back(Field{"eval.split",
                      [](ExperimentConfig& c, const std::string& v) { c.eval.split = data::split_from_string(trim(v)); },
                      [](const ExperimentConfig& c) { return data::to_string(c.eval.split); }});

    f.push_back(CE_FIELD(std::string, "sweep.parameter", sweep_parameter));
    f.push_back(CE_FIELD(std::vector<double>, "sweep.values", sweep_values));
    f.push_back(CE_FIELD(double, "sweep.select_tolerance", select_tolerance));

    f.push_back(CE_FIELD(double, "robustness.phi", robustness_phi));
    f.push_back(CE_FIELD(std::vector<double>, "robustness.r_grid", robustness.r_grid));
    f.push_back(CE_FIELD(std::size_t, "robustness.steps", robustness.steps));
    f.push_back(CE_FIELD(std::size_t, "robustness.seeds", robustness.seeds));
    f.push_back(CE_FIELD(bool, "robustness.measurement_noise", robustness.measurement_noise));
    f.push_back(CE_FIELD(std::uint64_t, "robustness.seed", robustness.seed));

    f.push_back(CE_FIELD(fs::path, "output.dir", output_dir));
    return f;
  }();
  return table;
}

#undef CE_FIELD

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // Lorenz-96 defaults: alpha = 0.01, gamma = 0.02, lambda = 0.8.
  train.objective.alpha = 0.01;
  train.objective.sinkhorn.gamma = 0.02;
  train.objective.lambda = 0.8;
  train.architecture.modes = 16;
  encoder.schedule = enc::TemperatureSchedule::for_epochs(encoder.epochs);
}

ExperimentConfig ExperimentConfig::for_system(dynsys::SystemKind kind) {
  ExperimentConfig c;
  if (kind == dynsys::SystemKind::KuramotoSivashinsky) {
    c.system = dynsys::SystemSpec::kuramoto_sivashinsky();
    c.data.phi_lo = 1.0;
    c.data.phi_hi = 2.6;
    c.train.objective.alpha = 1.0;
    c.train.objective.sinkhorn.gamma = 0.05;
    c.train.architecture.modes = 32;
    c.robustness_phi = 1.8;
    c.robustness.steps = 1000;
  }
  c.train.architecture.dimension = c.system.dimension;
  c.encoder.architecture.dimension = c.system.dimension;
  return c;
}

ExperimentConfig ExperimentConfig::from_ini_string(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  // The system kind selects the defaults every other key refines.
  if (auto sys = tree.get_child_optional("system")) {
    if (auto kind = sys->get_optional<std::string>("kind")) c.set("system.kind", *kind);
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (full == "system.kind") continue;
      c.set(full, value.data());
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_ini(const fs::path& path) {
  try {
    return from_ini_string(io::read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const bool schedule_default =
      encoder.schedule.total_epochs == encoder.epochs && encoder.schedule.warmup_epochs == encoder.epochs / 2;
  find_field(key).set(*this, value);
  // Keep the warm-up boundary at half the encoder epochs unless it was set explicitly.
  if (key == "encoder.epochs") {
    if (schedule_default) encoder.schedule.warmup_epochs = encoder.epochs / 2;
    encoder.schedule.total_epochs = encoder.epochs;
  }
}

std::string ExperimentConfig::get(const std::string& key) const { return find_field(key).get(*this); }

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  system.validate();
  if (!(data.phi_lo < data.phi_hi)) fail("data.phi_lo", "the parameter range must satisfy phi_lo < phi_hi");
  if (data.count == 0) fail("data.count", "must be positive");
  if (data.horizon == 0) fail("data.horizon", "must be positive");
  if (!(data.noise_r >= 0.0)) fail("data.noise_r", "must be >= 0");
  if (data.train_fraction < 0 || data.val_fraction < 0 || data.train_fraction + data.val_fraction > 1.0 + 1e-12) {
    fail("data.train_fraction", "split fractions must be non-negative and sum to at most 1");
  }
  if (!(blur_std >= 0.0)) fail("data.blur_std", "must be >= 0");

  if (train.epochs == 0) fail("train.epochs", "must be positive");
  if (train.batch == 0) fail("train.batch", "must be positive");
  if (train.K == 0 || train.K > data.horizon) fail("train.K", "must lie in [1, data.horizon]");
  if (!(train.optimizer.learning_rate > 0)) fail("train.lr", "must be positive");
  if (train.val_windows == 0) fail("train.val_windows", "must be positive");
  const auto& o = train.objective;
  if (!(o.alpha >= 0)) fail("loss.alpha", "must be >= 0");
  if (!(o.lambda >= 0)) fail("loss.lambda", "must be >= 0");
  if (!(o.sinkhorn.gamma > 0)) fail("loss.gamma", "must be positive");
  if (o.h == 0 || (train.K + 1) % (o.h + 1) != 0) fail("loss.h", "h + 1 must divide train.K + 1");
  if (o.h_rmse == 0 || (train.K + 1) % (o.h_rmse + 1) != 0) fail("loss.h_rmse", "h_rmse + 1 must divide train.K + 1");
  if (o.sinkhorn.max_iterations == 0) fail("loss.sinkhorn_iterations", "must be positive");
  if (o.kind == loss::Objective::FeatureRmse && encoder.K != train.K) {
    fail("encoder.K", "must equal train.K for the feature objective");
  }
  if (train.architecture.width == 0 || train.architecture.blocks == 0) fail("model.width", "must be positive");
  if (train.architecture.modes == 0 || train.architecture.modes > system.dimension / 2 + 1) {
    fail("model.modes", "must lie in [1, d/2 + 1]");
  }

  if (encoder.epochs == 0) fail("encoder.epochs", "must be positive");
  if (encoder.batch < 2) fail("encoder.batch", "needs at least 2 for in-batch negatives");
  if (encoder.K == 0 || encoder.K > data.horizon) fail("encoder.K", "must lie in [1, data.horizon]");
  if (encoder.architecture.blocks < 3) fail("encoder.blocks", "must be at least 3");
  encoder.schedule.validate();

  if (eval_model != "checkpoint" && eval_model != "truth" && eval_model != "zero") {
    fail("eval.model", "expected checkpoint, truth or zero");
  }
  if (eval.rmse_horizon == 0) fail("eval.rmse_horizon", "must be positive");
  if (sweep_parameter != "lambda" && sweep_parameter != "alpha" && sweep_parameter != "seed") {
    fail("sweep.parameter", "expected lambda, alpha or seed");
  }
  if (sweep_values.empty()) fail("sweep.values", "must not be empty");
  if (!(select_tolerance >= 1.0)) fail("sweep.select_tolerance", "must be >= 1");
  const auto& r = robustness.r_grid;
  if (r.empty() || r.front() != 0.0 || !std::is_sorted(r.begin(), r.end())) {
    fail("robustness.r_grid", "must be ascending and start at 0");
  }
  if (robustness.steps < 2 || robustness.seeds == 0) fail("robustness.steps", "need steps >= 2 and seeds >= 1");
}

std::string ExperimentConfig::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << "[" << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(*this) << "\n";
  }
  return out.str();
}

fs::path ExperimentConfig::resolved_eval_dir() const { return eval_dir.empty() ? output_dir / "eval" : eval_dir; }

fs::path ExperimentConfig::resolved_checkpoint() const {
  return checkpoint.empty() ? output_dir / "checkpoint" : checkpoint;
}

}  // namespace chaosemu::cli
