#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mdet/box.hpp"
#include "mdet/tape.hpp"

namespace mdet {

struct SlideConfig {
  enum class MuPolicy { batch_mean_iou, fixed };
  // as_printed: 1 below mu - delta, exp(-x) elsewhere.
  // slide_v2:   1 below mu - delta, exp(1 - mu) up to mu, exp(1 - x) from mu on.
  enum class Variant { as_printed, slide_v2 };

  MuPolicy mu_policy = MuPolicy::batch_mean_iou;
  double fixed_mu = 0.5;
  double delta = 0.1;
  Variant variant = Variant::as_printed;

  void validate() const;
};

// Fallback mu when the batch-mean policy sees no matched pairs.
inline constexpr double kEmptyBatchMu = 0.5;

struct FocalerConfig {
  double d = 0.0;
  double u = 0.95;

  void validate() const;
};

SlideConfig::Variant parse_slide_variant(std::string_view name);
SlideConfig::MuPolicy parse_mu_policy(std::string_view name);
std::string_view to_string(SlideConfig::Variant v);
std::string_view to_string(SlideConfig::MuPolicy p);

double slide_weight(double x, double mu, const SlideConfig& cfg);

// slide_weight(iou(pred, target), mu) * (1 - giou(pred, target))
double slide_giou(const BoxXYXY& pred, const BoxXYXY& target, double mu, const SlideConfig& cfg);

// 0 below d, (sg - d) / (u - d) on [d, u], 1 above u.
double focaler_truncate(double sg, const FocalerConfig& cfg);

struct BoxPair {
  BoxXYXY pred;
  BoxXYXY target;
};

struct MuEstimate {
  double mu = kEmptyBatchMu;
  bool fallback = false;  // batch-mean policy with no pairs
};

MuEstimate mu_estimate(std::span<const BoxPair> pairs, const SlideConfig& cfg);

struct PairBreakdown {
  double iou = 0.0;
  double giou = 0.0;
  double weight = 0.0;
  double sg = 0.0;
  double sg_focaler = 0.0;
};

struct LossBreakdown {
  double loss = 0.0;
  double mu = kEmptyBatchMu;
  bool mu_fallback = false;
  std::vector<PairBreakdown> pairs;
};

// Mean over pairs of focaler_truncate(slide_giou(...)). Empty input gives zero loss.
LossBreakdown sfg_loss(std::span<const BoxPair> pairs, const SlideConfig& slide,
                       const FocalerConfig& focaler);

// Regression objective selectable for ablations: the full SFG composite or plain 1 - GIoU.
struct RegressionLoss {
  enum class Kind { sfg, giou };
  Kind kind = Kind::sfg;
  SlideConfig slide;
  FocalerConfig focaler;
};

// Differentiable regression loss over predicted boxes [1, 1, P, 4] (x1, y1, x2, y2 rows)
// against `targets` (size P). mu and the slide weight are held constant within the batch.
// If `breakdown` is non-null it receives the per-pair record.
template <typename T>
Var<T> regression_loss(Var<T> pred_boxes, std::span<const BoxXYXY> targets,
                       const RegressionLoss& cfg, LossBreakdown* breakdown = nullptr);

}  // namespace mdet
