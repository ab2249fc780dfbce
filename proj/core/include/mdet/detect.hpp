#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mdet/model.hpp"
#include "mdet/sfg_loss.hpp"
#include "mdet/synth.hpp"

namespace mdet {

struct CellTarget {
  std::size_t image = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  BoxXYXY box;
  std::size_t cls = 0;
};

struct Assignment {
  std::vector<CellTarget> positives;  // ordered by (image, row, col)
  std::size_t dropped = 0;            // truths that lost a cell collision
};

// Each truth goes to the cell containing its centre; when several truths share a
// cell the largest area keeps it (earliest index on equal areas).
Assignment assign_targets(std::size_t grid, double stride, std::span<const GroundTruth> truths,
                          std::size_t image = 0);

Assignment assign_batch(std::size_t grid, double stride,
                        std::span<const std::vector<GroundTruth>> truths);

// Box parameterisation of a cell: centre = (index + sigmoid(t)) * stride,
// side = stride * exp(clamp(t, -kMaxLogScale, kMaxLogScale)).
inline constexpr double kMaxLogScale = 8.0;

template <typename T>
std::array<T, 4> decode_cell(T tx, T ty, T tw, T th, std::size_t row, std::size_t col, T stride);

// Gathers decoded xyxy boxes of `cells` from head [N, 5+K, G, G] into [1, 1, P, 4].
template <typename T>
Var<T> gather_boxes(Var<T> head, std::span<const CellTarget> cells, double stride);

struct LossWeights {
  double box = 5.0;
  double obj = 1.0;
  double cls = 1.0;
};

template <typename T>
struct DetectionLoss {
  Var<T> total;
  double box = 0.0;
  double obj = 0.0;
  double cls = 0.0;
  LossBreakdown regression;
  std::size_t positives = 0;
  std::size_t dropped = 0;
};

// box * regression + obj * mean BCE(objectness over all cells)
//   + cls * BCE(class logits at positive cells) / positives.
template <typename T>
DetectionLoss<T> detection_loss(Var<T> head, std::span<const std::vector<GroundTruth>> truths,
                                const ModelConfig& cfg, const RegressionLoss& regression,
                                const LossWeights& weights);

struct Detection {
  BoxXYXY box;
  std::size_t cls = 0;
  double confidence = 0.0;
};

// Per-image detections: one per cell (best class, confidence = sigmoid(obj) * sigmoid(cls))
// above `min_confidence`, clipped to the image, then per-class greedy NMS.
std::vector<std::vector<Detection>> decode_detections(const Tensor32& head, const ModelConfig& cfg,
                                                      double min_confidence, double nms_iou);

// Greedy per-class NMS; keeps boxes in descending confidence order.
std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold);

// Strict weak order: confidence descending, then class and box coordinates.
bool detection_before(const Detection& a, const Detection& b);

}  // namespace mdet
