#include "chaosemu/diff/checkpoint.hpp"

#include "chaosemu/error.hpp"
#include "chaosemu/io.hpp"

namespace chaosemu::diff {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const fs::path& dir, const std::string& kind, const json& architecture,
                     const std::vector<Var>& params) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json manifest = json::array();
  std::vector<double> flat;
  for (const Var& p : params) {
    manifest.push_back({{"name", p.name()}, {"shape", p.shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), p.value().data().begin(), p.value().data().end());
  }
  json meta = {{"format_version", kCheckpointFormatVersion},
               {"kind", kind},
               {"architecture", architecture},
               {"dtype", "float64"},
               {"endianness", "little"},
               {"param_file", "params.f64"},
               {"param_count", flat.size()},
               {"parameters", manifest}};
  io::write_f64_le(dir / "params.f64", flat);
  io::write_text(dir / "model.json", meta.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  json meta;
  try {
    meta = json::parse(io::read_text(dir / "model.json"));
  } catch (const json::exception& e) {
    throw IoError(dir.string() + "/model.json: " + e.what());
  }
  if (meta.value("format_version", -1) != kCheckpointFormatVersion) {
    throw VersionMismatchError(dir.string() + ": unsupported checkpoint format_version " +
                               meta.value("format_version", json(-1)).dump());
  }
  const std::size_t count = meta.at("param_count").get<std::size_t>();
  const auto flat = io::read_f64_le(dir / meta.at("param_file").get<std::string>(), count);

  Checkpoint ck;
  ck.kind = meta.at("kind").get<std::string>();
  ck.architecture = meta.at("architecture");
  for (const auto& entry : meta.at("parameters")) {
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = numel_of(shape);
    if (offset + n > flat.size()) throw ShapeMismatchError(dir.string() + ": parameter manifest exceeds param_count");
    ck.parameters.emplace(entry.at("name").get<std::string>(),
                          Tensor(shape, std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                                            flat.begin() + static_cast<std::ptrdiff_t>(offset + n))));
  }
  return ck;
}

void assign_parameters(const Checkpoint& ckpt, std::vector<Var>& params) {
  for (Var& p : params) {
    auto it = ckpt.parameters.find(p.name());
    if (it == ckpt.parameters.end()) throw ShapeMismatchError("checkpoint lacks parameter '" + p.name() + "'");
    if (it->second.shape() != p.shape()) {
      throw ShapeMismatchError("checkpoint parameter '" + p.name() + "' has shape " + shape_str(it->second.shape()) +
                               ", model expects " + shape_str(p.shape()));
    }
    p.mutable_value() = it->second;
  }
}

}  // namespace chaosemu::diff
