#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mdet/error.hpp"
#include "mdet/train.hpp"

namespace mdet::codec {

using json = nlohmann::json;

inline const json& field(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(where + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return field(j, key, where).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

inline json to_json(const MetricsReport& r) {
  return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},      {"mAP50", r.ap50},
          {"params", r.params},       {"epochs", r.epochs}, {"seed", r.seed}};
}

inline MetricsReport report_from_json(const json& j, const std::string& where) {
  MetricsReport r;
  r.precision = get<double>(j, "precision", where);
  r.recall = get<double>(j, "recall", where);
  r.f1 = get<double>(j, "f1", where);
  r.ap50 = get<double>(j, "mAP50", where);
  r.params = get<std::size_t>(j, "params", where);
  r.epochs = get<std::size_t>(j, "epochs", where);
  r.seed = get<std::uint64_t>(j, "seed", where);
  return r;
}

inline json to_json(const EpochRecord& e) {
  json j = {{"epoch", e.epoch}, {"lr", e.lr},   {"loss", e.loss}, {"box", e.box},
            {"obj", e.obj},     {"cls", e.cls}, {"mu", e.mu},     {"dropped", e.dropped}};
  j["metrics"] = e.metrics ? to_json(*e.metrics) : json(nullptr);
  return j;
}

inline EpochRecord record_from_json(const json& j, const std::string& where) {
  EpochRecord e;
  e.epoch = get<std::size_t>(j, "epoch", where);
  e.lr = get<double>(j, "lr", where);
  e.loss = get<double>(j, "loss", where);
  e.box = get<double>(j, "box", where);
  e.obj = get<double>(j, "obj", where);
  e.cls = get<double>(j, "cls", where);
  e.mu = get<double>(j, "mu", where);
  e.dropped = get<std::size_t>(j, "dropped", where);
  const json& m = field(j, "metrics", where);
  if (!m.is_null()) e.metrics = report_from_json(m, where);
  return e;
}

inline json parse(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(where + ": malformed JSON: " + e.what());
  }
}

}  // namespace mdet::codec
