#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mdet/train.hpp"

namespace mdet {

// Fixed CSV header; values after `seed` are printed with 4 decimals, params as an integer.
inline constexpr std::string_view kMetricsCsvHeader = "epoch,seed,precision,recall,f1,mAP50,params";

std::string metrics_csv_row(const MetricsReport& r);
// Header plus one row per report.
std::string metrics_csv(std::span<const MetricsReport> reports);

struct MetricsDocument {
  MetricsReport final_report;
  std::vector<EpochRecord> series;
};

// {"final": {precision, recall, f1, mAP50, params, epochs, seed}, "series": [epoch records]}
// with full-precision numbers, so parse_metrics_json(metrics_json(d)) == d.
std::string metrics_json(const MetricsDocument& doc);
MetricsDocument parse_metrics_json(std::string_view text);

// Writes <dir>/metrics.json and <dir>/metrics.csv. The CSV holds every evaluated epoch of
// the series, or the final report alone when the series has no evaluations.
void emit_metrics(const MetricsDocument& doc, const std::filesystem::path& dir);

inline constexpr std::string_view kAblationCsvHeader =
    "config,dbcasa,fsfm,sfg,precision,recall,f1,mAP50,params,final_loss";

std::string ablation_csv(std::span<const AblationRow> rows);
std::string ablation_json(std::span<const AblationRow> rows);
// Fixed-width table for terminals.
std::string ablation_table(std::span<const AblationRow> rows);

}  // namespace mdet
