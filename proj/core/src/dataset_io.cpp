#include "mdet/dataset_io.hpp"

#include <cstdio>

#include "json_codec.hpp"
#include "mdet/tensor_io.hpp"

namespace mdet {
namespace {

namespace fs = std::filesystem;
using codec::json;

constexpr const char* kFormat = "mdet-scenes";
constexpr int kVersion = 1;

std::string scene_file(const char* split, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "scenes/%s_%04zu.tnsr", split, i);
  return buf;
}

}  // namespace

void write_dataset(const fs::path& dir, const SynthSceneSpec& spec) {
  spec.validate();
  fs::create_directories(dir / "scenes");
  json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["image_size"] = spec.image_size;
  manifest["num_classes"] = spec.num_classes;
  manifest["seed"] = spec.seed;
  json scenes = json::array();
  auto emit = [&](const char* split, std::size_t first, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      const Scene s = generate_scene(spec, first + i);
      const std::string file = scene_file(split, i);
      save_tensor(s.image, dir / file);
      json objects = json::array();
      for (const GroundTruth& g : s.objects) {
        objects.push_back({{"class", g.cls}, {"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}}});
      }
      scenes.push_back({{"split", split}, {"index", first + i}, {"file", file}, {"objects", objects}});
    }
  };
  emit("train", 0, spec.train_count);
  emit("val", spec.train_count, spec.val_count);
  manifest["scenes"] = scenes;
  write_file(dir / "labels.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  const std::string where = (dir / "labels.json").string();
  const json manifest = codec::parse(read_file(dir / "labels.json"), where);
  if (codec::get<std::string>(manifest, "format", where) != kFormat) {
    throw FormatError(where + ": not a scene manifest");
  }
  const int version = codec::get<int>(manifest, "version", where);
  if (version != kVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  Dataset ds;
  ds.image_size = codec::get<std::size_t>(manifest, "image_size", where);
  ds.num_classes = codec::get<std::size_t>(manifest, "num_classes", where);
  const Shape expected{1, 3, ds.image_size, ds.image_size};
  const json& scenes = codec::field(manifest, "scenes", where);
  if (!scenes.is_array()) throw FormatError(where + ": scenes must be an array");
  for (const json& entry : scenes) {
    const auto split = codec::get<std::string>(entry, "split", where);
    const auto file = codec::get<std::string>(entry, "file", where);
    Scene s{load_tensor_as<float>(dir / file), {}};
    if (s.image.shape() != expected) {
      throw FormatError(where + ": '" + file + "' has shape " + s.image.shape().str() + ", expected " +
                        expected.str());
    }
    const json& objects = codec::field(entry, "objects", where);
    if (!objects.is_array()) throw FormatError(where + ": objects must be an array");
    for (const json& o : objects) {
      const auto cls = codec::get<std::size_t>(o, "class", where);
      const auto box = codec::get<std::vector<double>>(o, "box", where);
      if (box.size() != 4) throw FormatError(where + ": box must have 4 coordinates");
      if (cls >= ds.num_classes) throw FormatError(where + ": class " + std::to_string(cls) + " out of range");
      s.objects.push_back(GroundTruth{BoxXYXY{box[0], box[1], box[2], box[3]}, cls});
    }
    if (split == "train") {
      ds.train.push_back(std::move(s));
    } else if (split == "val") {
      ds.val.push_back(std::move(s));
    } else {
      throw FormatError(where + ": unknown split '" + split + "'");
    }
  }
  return ds;
}

}  // namespace mdet
