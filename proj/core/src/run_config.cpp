#include "mdet/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mdet/error.hpp"

namespace mdet {
namespace {

using json = nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads optional keys from one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  void read(const char* key, std::size_t& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      throw ConfigError("expected a non-negative integer", join(path_, key));
    }
    out = v->get<std::size_t>();
  }
  void read(const char* key, std::uint64_t& out, int) {
    std::size_t tmp = out;
    read(key, tmp);
    out = tmp;
  }
  void read(const char* key, double& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_number()) throw ConfigError("expected a number", join(path_, key));
    out = v->get<double>();
  }
  void read(const char* key, bool& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_boolean()) throw ConfigError("expected true or false", join(path_, key));
    out = v->get<bool>();
  }
  void read(const char* key, std::string& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_string()) throw ConfigError("expected a string", join(path_, key));
    out = v->get<std::string>();
  }
  void read(const char* key, std::vector<double>& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array()) throw ConfigError("expected an array of numbers", join(path_, key));
    std::vector<double> tmp;
    for (const json& e : *v) {
      if (!e.is_number()) throw ConfigError("expected an array of numbers", join(path_, key));
      tmp.push_back(e.get<double>());
    }
    out = std::move(tmp);
  }
  template <typename Enum, typename Parse>
  void read_enum(const char* key, Enum& out, Parse parse) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_string()) throw ConfigError("expected a string", join(path_, key));
    try {
      out = parse(v->get<std::string>());
    } catch (const Error& e) {
      throw ConfigError(e.what(), join(path_, key));
    }
  }

  // Empty object when absent.
  Section child(const char* key) {
    static const json empty = json::object();
    const json* v = take(key);
    return Section(v ? *v : empty, join(path_, key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key", join(path_, key));
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

DbcasaConfig::Pairing parse_pairing(const std::string& s) {
  if (s == "spatial_query") return DbcasaConfig::Pairing::spatial_query;
  if (s == "spatial_key") return DbcasaConfig::Pairing::spatial_key;
  throw ConfigError("unknown pairing '" + s + "' (expected spatial_query or spatial_key)");
}

std::string to_string(DbcasaConfig::Pairing p) {
  return p == DbcasaConfig::Pairing::spatial_query ? "spatial_query" : "spatial_key";
}

DbcasaConfig::MapSource parse_map_source(const std::string& s) {
  if (s == "projection") return DbcasaConfig::MapSource::projection;
  if (s == "input") return DbcasaConfig::MapSource::input;
  throw ConfigError("unknown map source '" + s + "' (expected projection or input)");
}

std::string to_string(DbcasaConfig::MapSource m) {
  return m == DbcasaConfig::MapSource::projection ? "projection" : "input";
}

json to_json(const RunConfig& rc) {
  const ExperimentConfig& x = rc.experiment;
  const SynthSceneSpec& s = x.scene;
  const ModelConfig& m = x.model;
  const TrainConfig& t = x.train;
  json j;
  j["seed"] = x.seed;
  j["output_dir"] = rc.output_dir;
  j["checkpoint_every"] = rc.checkpoint_every;
  j["scene"] = {{"image_size", s.image_size},   {"num_classes", s.num_classes},
                {"min_objects", s.min_objects}, {"max_objects", s.max_objects},
                {"min_side", s.min_side},       {"max_side", s.max_side},
                {"size_bias", s.size_bias},     {"min_blur", s.min_blur},
                {"max_blur", s.max_blur},       {"clutter", s.clutter},
                {"class_weights", s.class_weights}, {"seed", s.seed},
                {"train_count", s.train_count}, {"val_count", s.val_count}};
  j["model"] = {{"stem_channels", m.stem_channels},
                {"width", m.width},
                {"stages", m.stages},
                {"objectness_prior", m.objectness_prior}};
  j["toggles"] = {{"dbcasa", m.toggles.dbcasa}, {"fsfm", m.toggles.fsfm}, {"sfg", m.toggles.sfg}};
  j["shift"] = {{"step", m.shift_step}};
  j["dbcasa"] = {{"dw_kernel", m.dw_kernel},
                 {"pairing", to_string(m.attn_pairing)},
                 {"map_source", to_string(m.attn_map_source)}};
  j["train"] = {{"lr", t.lr},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"warmup_epochs", t.warmup_epochs},
                {"final_lr_fraction", t.final_lr_fraction},
                {"eval_every", t.eval_every},
                {"gains", {{"box", t.gains.box}, {"obj", t.gains.obj}, {"cls", t.gains.cls}}}};
  j["slide"] = {{"mu_policy", std::string(to_string(t.slide.mu_policy))},
                {"fixed_mu", t.slide.fixed_mu},
                {"delta", t.slide.delta},
                {"variant", std::string(to_string(t.slide.variant))}};
  j["focaler"] = {{"d", t.focaler.d}, {"u", t.focaler.u}};
  j["eval"] = {{"iou_threshold", x.eval.iou_threshold},
               {"nms_iou", x.eval.nms_iou},
               {"score_threshold", x.eval.score_threshold},
               {"min_confidence", x.eval.min_confidence}};
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig rc;
  ExperimentConfig& x = rc.experiment;
  Section root(j, "");
  root.read("seed", x.seed, 0);
  root.read("output_dir", rc.output_dir);
  root.read("checkpoint_every", rc.checkpoint_every);

  Section scene = root.child("scene");
  SynthSceneSpec& s = x.scene;
  scene.read("image_size", s.image_size);
  scene.read("num_classes", s.num_classes);
  scene.read("min_objects", s.min_objects);
  scene.read("max_objects", s.max_objects);
  scene.read("min_side", s.min_side);
  scene.read("max_side", s.max_side);
  scene.read("size_bias", s.size_bias);
  scene.read("min_blur", s.min_blur);
  scene.read("max_blur", s.max_blur);
  scene.read("clutter", s.clutter);
  scene.read("class_weights", s.class_weights);
  scene.read("seed", s.seed, 0);
  scene.read("train_count", s.train_count);
  scene.read("val_count", s.val_count);
  scene.finish();

  ModelConfig& m = x.model;
  m.image_size = s.image_size;
  m.num_classes = s.num_classes;
  Section model = root.child("model");
  model.read("stem_channels", m.stem_channels);
  model.read("width", m.width);
  model.read("stages", m.stages);
  model.read("objectness_prior", m.objectness_prior);
  model.finish();

  Section toggles = root.child("toggles");
  toggles.read("dbcasa", m.toggles.dbcasa);
  toggles.read("fsfm", m.toggles.fsfm);
  toggles.read("sfg", m.toggles.sfg);
  toggles.finish();

  Section shift = root.child("shift");
  shift.read("step", m.shift_step);
  shift.finish();

  Section dbcasa = root.child("dbcasa");
  dbcasa.read("dw_kernel", m.dw_kernel);
  dbcasa.read_enum("pairing", m.attn_pairing, parse_pairing);
  dbcasa.read_enum("map_source", m.attn_map_source, parse_map_source);
  dbcasa.finish();

  TrainConfig& t = x.train;
  Section train = root.child("train");
  train.read("lr", t.lr);
  train.read("momentum", t.momentum);
  train.read("weight_decay", t.weight_decay);
  train.read("epochs", t.epochs);
  train.read("batch_size", t.batch_size);
  train.read("warmup_epochs", t.warmup_epochs);
  train.read("final_lr_fraction", t.final_lr_fraction);
  train.read("eval_every", t.eval_every);
  Section gains = train.child("gains");
  gains.read("box", t.gains.box);
  gains.read("obj", t.gains.obj);
  gains.read("cls", t.gains.cls);
  gains.finish();
  train.finish();

  Section slide = root.child("slide");
  slide.read_enum("mu_policy", t.slide.mu_policy, [](const std::string& n) { return parse_mu_policy(n); });
  slide.read("fixed_mu", t.slide.fixed_mu);
  slide.read("delta", t.slide.delta);
  slide.read_enum("variant", t.slide.variant, [](const std::string& n) { return parse_slide_variant(n); });
  slide.finish();

  Section focaler = root.child("focaler");
  focaler.read("d", t.focaler.d);
  focaler.read("u", t.focaler.u);
  focaler.finish();

  Section eval = root.child("eval");
  eval.read("iou_threshold", x.eval.iou_threshold);
  eval.read("nms_iou", x.eval.nms_iou);
  eval.read("score_threshold", x.eval.score_threshold);
  eval.read("min_confidence", x.eval.min_confidence);
  eval.finish();

  root.finish();
  return rc;
}

}  // namespace

void RunConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output directory must not be empty", "output_dir");
  experiment.validate();
}

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed config JSON: ") + e.what());
  }
  RunConfig rc = from_json(j);
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string canonical_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  j.erase("checkpoint_every");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace mdet
