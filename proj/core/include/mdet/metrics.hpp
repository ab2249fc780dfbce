#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mdet/detect.hpp"

namespace mdet {

struct EvalConfig {
  // Minimum IoU for a detection to match a same-class truth.
  double iou_threshold = 0.5;
  double nms_iou = 0.5;
  // Detections at or above this confidence count toward precision, recall and F1.
  double score_threshold = 0.25;
  // Detections below this confidence are discarded before AP.
  double min_confidence = 0.001;

  void validate() const;
};

struct DetectionScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ap50 = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t truths = 0;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ap50 = 0.0;
  std::size_t params = 0;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;

  bool operator==(const MetricsReport&) const = default;
};

// 2PR / (P + R), or 0 when P + R = 0.
double f1_score(double precision, double recall);

// All-point interpolated AP of a ranked list (true = true positive) against `truths` positives.
double average_precision(const std::vector<bool>& ranked_hits, std::size_t truths);

// Greedy matching per image and class in descending confidence order: each detection takes
// the unmatched same-class truth with the highest IoU >= iou_threshold. AP is averaged over
// classes that have at least one truth.
DetectionScores score_detections(std::span<const std::vector<Detection>> detections,
                                 std::span<const std::vector<GroundTruth>> truths,
                                 std::size_t num_classes, const EvalConfig& cfg);

}  // namespace mdet
