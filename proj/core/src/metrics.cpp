#include "mdet/metrics.hpp"

#include <algorithm>
#include <string>

#include "mdet/error.hpp"

namespace mdet {
namespace {

struct Ranked {
  Detection det;
  bool hit = false;
};

bool ranked_before(const Ranked& a, const Ranked& b) {
  if (detection_before(a.det, b.det)) return true;
  if (detection_before(b.det, a.det)) return false;
  return a.hit && !b.hit;
}

// Returns per-detection hit flags for one image.
std::vector<Ranked> match_image(std::vector<Detection> dets, std::span<const GroundTruth> truths,
                                double iou_threshold) {
  std::sort(dets.begin(), dets.end(), detection_before);
  std::vector<bool> taken(truths.size(), false);
  std::vector<Ranked> out;
  out.reserve(dets.size());
  for (const Detection& d : dets) {
    std::ptrdiff_t best = -1;
    double best_iou = iou_threshold;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (taken[t] || truths[t].cls != d.cls) continue;
      const double v = iou(d.box, truths[t].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<std::ptrdiff_t>(t);
        best_iou = v;
      }
    }
    if (best >= 0) taken[static_cast<std::size_t>(best)] = true;
    out.push_back(Ranked{d, best >= 0});
  }
  return out;
}

}  // namespace

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ConfigError("IoU threshold must lie in (0, 1]", "eval.iou_threshold");
  }
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("NMS IoU must lie in (0, 1]", "eval.nms_iou");
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw ConfigError("score threshold must lie in [0, 1]", "eval.score_threshold");
  }
  if (!(min_confidence >= 0.0 && min_confidence <= score_threshold)) {
    throw ConfigError("minimum confidence must lie in [0, score threshold]", "eval.min_confidence");
  }
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

double average_precision(const std::vector<bool>& ranked_hits, std::size_t truths) {
  if (truths == 0) return 0.0;
  const std::size_t n = ranked_hits.size();
  std::vector<double> precision(n);
  std::vector<double> recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_hits[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(truths);
  }
  // Precision envelope from the right, then area under the step curve.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

DetectionScores score_detections(std::span<const std::vector<Detection>> detections,
                                 std::span<const std::vector<GroundTruth>> truths,
                                 std::size_t num_classes, const EvalConfig& cfg) {
  cfg.validate();
  if (detections.size() != truths.size()) {
    throw DimensionError("detections cover " + std::to_string(detections.size()) +
                         " images but truths cover " + std::to_string(truths.size()));
  }
  std::vector<std::vector<Ranked>> per_class(num_classes);
  std::vector<std::size_t> class_truths(num_classes, 0);
  DetectionScores out;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    for (const GroundTruth& g : truths[i]) {
      if (g.cls >= num_classes) throw DimensionError("truth class " + std::to_string(g.cls) + " out of range");
      ++class_truths[g.cls];
    }
    std::vector<Detection> kept;
    for (const Detection& d : detections[i]) {
      if (d.cls >= num_classes) throw DimensionError("detection class " + std::to_string(d.cls) + " out of range");
      if (d.confidence >= cfg.min_confidence) kept.push_back(d);
    }
    for (const Ranked& r : match_image(std::move(kept), truths[i], cfg.iou_threshold)) {
      if (r.det.confidence >= cfg.score_threshold) ++(r.hit ? out.true_positives : out.false_positives);
      per_class[r.det.cls].push_back(r);
    }
  }
  double ap_sum = 0.0;
  std::size_t ap_classes = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    out.truths += class_truths[c];
    if (class_truths[c] == 0) continue;
    std::sort(per_class[c].begin(), per_class[c].end(), ranked_before);
    std::vector<bool> hits;
    hits.reserve(per_class[c].size());
    for (const Ranked& r : per_class[c]) hits.push_back(r.hit);
    ap_sum += average_precision(hits, class_truths[c]);
    ++ap_classes;
  }
  out.ap50 = ap_classes > 0 ? ap_sum / static_cast<double>(ap_classes) : 0.0;
  const std::size_t predicted = out.true_positives + out.false_positives;
  out.precision = predicted > 0 ? static_cast<double>(out.true_positives) / static_cast<double>(predicted) : 0.0;
  out.recall = out.truths > 0 ? static_cast<double>(out.true_positives) / static_cast<double>(out.truths) : 0.0;
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

}  // namespace mdet
