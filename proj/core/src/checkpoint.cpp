#include "mdet/checkpoint.hpp"

#include "json_codec.hpp"
#include "mdet/error.hpp"
#include "mdet/tensor_io.hpp"

namespace mdet {
namespace {

namespace fs = std::filesystem;
using codec::json;

constexpr const char* kFormat = "mdet-checkpoint";
constexpr int kVersion = 1;

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

// Parameter names contain only [A-Za-z0-9_.], so they are used as file stems.
std::string file_for(const std::string& dir, const std::string& name) { return dir + "/" + name + ".tnsr"; }

json write_store(const fs::path& root, const std::string& sub, const ParamStore<float>& store) {
  fs::create_directories(root / sub);
  json entries = json::array();
  for (const auto& e : store.entries()) {
    const std::string file = file_for(sub, e.name);
    save_tensor(e.value, root / file);
    entries.push_back({{"name", e.name}, {"file", file}, {"shape", shape_json(e.value.shape())},
                       {"learnable", e.learnable}});
  }
  return entries;
}

ParamStore<float> read_store(const fs::path& root, const json& entries, const std::string& where) {
  if (!entries.is_array()) throw FormatError(where + " must be an array");
  ParamStore<float> store;
  for (const json& e : entries) {
    const auto name = codec::get<std::string>(e, "name", where);
    const auto file = codec::get<std::string>(e, "file", where);
    const auto dims = codec::get<std::vector<std::size_t>>(e, "shape", where);
    if (dims.size() != 4) throw FormatError(where + ": '" + name + "' shape must have 4 dims");
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    if (!fs::exists(root / file)) throw FormatError(where + ": file '" + file + "' for '" + name + "' is missing");
    Tensor32 t = load_tensor_as<float>(root / file);
    if (t.shape() != shape) {
      throw FormatError(where + ": '" + file + "' has shape " + t.shape().str() + ", manifest declares " +
                        shape.str());
    }
    store.add(name, std::move(t), codec::get<bool>(e, "learnable", where));
  }
  return store;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const RunConfig& cfg, const TrainState& state) {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  const ModelConfig& m = cfg.experiment.model;
  json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["config_hash"] = config_hash(cfg);
  manifest["epoch"] = state.epoch;
  manifest["toggles"] = {{"dbcasa", m.toggles.dbcasa}, {"fsfm", m.toggles.fsfm}, {"sfg", m.toggles.sfg}};
  manifest["topology"] = {{"image_size", m.image_size}, {"in_channels", m.in_channels},
                          {"num_classes", m.num_classes}, {"stem_channels", m.stem_channels},
                          {"width", m.width},           {"stages", m.stages},
                          {"grid", m.grid()},           {"head_channels", m.head_channels()}};
  manifest["params"] = write_store(tmp, "params", state.params);
  manifest["momentum"] = write_store(tmp, "momentum", state.momentum);
  json history = json::array();
  json latest = nullptr;
  for (const EpochRecord& r : state.history) {
    history.push_back(codec::to_json(r));
    if (r.metrics) latest = codec::to_json(*r.metrics);
  }
  manifest["metrics"] = latest;
  manifest["history"] = history;
  write_file(tmp / "manifest.json", manifest.dump(2) + "\n");
  write_file(tmp / "config.json", canonical_json(cfg));

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const std::string where = (dir / "manifest.json").string();
  const json manifest = codec::parse(read_file(dir / "manifest.json"), where);
  if (codec::get<std::string>(manifest, "format", where) != kFormat) {
    throw FormatError(where + ": not a checkpoint manifest");
  }
  const int version = codec::get<int>(manifest, "version", where);
  if (version != kVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));

  Checkpoint ck;
  ck.config = parse_run_config(read_file(dir / "config.json"));
  ck.config_hash = codec::get<std::string>(manifest, "config_hash", where);
  if (ck.config_hash != config_hash(ck.config)) {
    throw FormatError(where + ": config hash does not match config.json");
  }
  ck.state.epoch = codec::get<std::size_t>(manifest, "epoch", where);
  ck.state.params = read_store(dir, codec::field(manifest, "params", where), where);
  ck.state.momentum = read_store(dir, codec::field(manifest, "momentum", where), where);
  const json& history = codec::field(manifest, "history", where);
  if (!history.is_array()) throw FormatError(where + ": history must be an array");
  for (const json& r : history) ck.state.history.push_back(codec::record_from_json(r, where));
  return ck;
}

TrainState load_resume_state(const fs::path& dir, const RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(dir);
  const std::string want = config_hash(cfg);
  if (ck.config_hash != want) {
    throw ConfigError("checkpoint was written by a different configuration (hash " + ck.config_hash +
                          ", current " + want + "); refusing to resume",
                      "config_hash");
  }
  return std::move(ck.state);
}

}  // namespace mdet
