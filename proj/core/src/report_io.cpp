#include "mdet/report_io.hpp"

#include <cstdio>

#include "json_codec.hpp"
#include "mdet/tensor_io.hpp"

namespace mdet {
namespace {

using codec::json;

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string metrics_csv_row(const MetricsReport& r) {
  return std::to_string(r.epochs) + "," + std::to_string(r.seed) + "," + fixed4(r.precision) + "," +
         fixed4(r.recall) + "," + fixed4(r.f1) + "," + fixed4(r.ap50) + "," + std::to_string(r.params);
}

std::string metrics_csv(std::span<const MetricsReport> reports) {
  std::string out(kMetricsCsvHeader);
  out += "\n";
  for (const MetricsReport& r : reports) out += metrics_csv_row(r) + "\n";
  return out;
}

std::string metrics_json(const MetricsDocument& doc) {
  json j;
  j["final"] = codec::to_json(doc.final_report);
  j["series"] = json::array();
  for (const EpochRecord& r : doc.series) j["series"].push_back(codec::to_json(r));
  return j.dump(2) + "\n";
}

MetricsDocument parse_metrics_json(std::string_view text) {
  const std::string where = "metrics document";
  const json j = codec::parse(std::string(text), where);
  MetricsDocument doc;
  doc.final_report = codec::report_from_json(codec::field(j, "final", where), where);
  const json& series = codec::field(j, "series", where);
  if (!series.is_array()) throw FormatError(where + ": series must be an array");
  for (const json& r : series) doc.series.push_back(codec::record_from_json(r, where));
  return doc;
}

void emit_metrics(const MetricsDocument& doc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<MetricsReport> rows;
  for (const EpochRecord& r : doc.series) {
    if (r.metrics) rows.push_back(*r.metrics);
  }
  if (rows.empty()) rows.push_back(doc.final_report);
  write_file(dir / "metrics.json", metrics_json(doc));
  write_file(dir / "metrics.csv", metrics_csv(rows));
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out(kAblationCsvHeader);
  out += "\n";
  for (const AblationRow& r : rows) {
    const MetricsReport& m = r.metrics;
    out += r.toggles.label() + "," + std::to_string(int{r.toggles.dbcasa}) + "," +
           std::to_string(int{r.toggles.fsfm}) + "," + std::to_string(int{r.toggles.sfg}) + "," +
           fixed4(m.precision) + "," + fixed4(m.recall) + "," + fixed4(m.f1) + "," + fixed4(m.ap50) + "," +
           std::to_string(m.params) + "," + fixed4(r.final_loss) + "\n";
  }
  return out;
}

std::string ablation_json(std::span<const AblationRow> rows) {
  json j = json::array();
  for (const AblationRow& r : rows) {
    j.push_back({{"config", r.toggles.label()},
                 {"toggles", {{"dbcasa", r.toggles.dbcasa}, {"fsfm", r.toggles.fsfm}, {"sfg", r.toggles.sfg}}},
                 {"metrics", codec::to_json(r.metrics)},
                 {"final_loss", r.final_loss}});
  }
  return j.dump(2) + "\n";
}

std::string ablation_table(std::span<const AblationRow> rows) {
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %6s %6s %6s %9s %9s %9s %9s %8s\n", "config", "dbcasa", "fsfm", "sfg",
                "precision", "recall", "f1", "mAP50", "params");
  std::string out = line;
  for (const AblationRow& r : rows) {
    const MetricsReport& m = r.metrics;
    std::snprintf(line, sizeof line, "%-16s %6s %6s %6s %9.4f %9.4f %9.4f %9.4f %8zu\n",
                  r.toggles.label().c_str(), r.toggles.dbcasa ? "on" : "off", r.toggles.fsfm ? "on" : "off",
                  r.toggles.sfg ? "on" : "off", m.precision, m.recall, m.f1, m.ap50, m.params);
    out += line;
  }
  return out;
}

}  // namespace mdet
