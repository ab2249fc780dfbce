#include "mdet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>

namespace mdet {
namespace {

std::size_t cell_index(double center, double stride, std::size_t grid) {
  const double v = std::floor(center / stride);
  if (v <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(v), grid - 1);
}

template <typename T>
T clamp_log_scale(T t) {
  const T lim = static_cast<T>(kMaxLogScale);
  return std::clamp(t, -lim, lim);
}

template <typename T>
class GatherBoxesOp final : public Op<T> {
 public:
  GatherBoxesOp(std::vector<CellTarget> cells, T stride) : cells_(std::move(cells)), stride_(stride) {}
  std::string_view name() const override { return "gather_boxes"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& head = *in[0];
    Tensor<T> out(Shape{1, 1, cells_.size(), 4});
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      const CellTarget& c = cells_[i];
      const auto b = decode_cell<T>(head.at(c.image, 1, c.row, c.col), head.at(c.image, 2, c.row, c.col),
                                    head.at(c.image, 3, c.row, c.col), head.at(c.image, 4, c.row, c.col),
                                    c.row, c.col, stride_);
      for (std::size_t k = 0; k < 4; ++k) out[4 * i + k] = b[k];
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    const Tensor<T>& head = *in[0];
    Tensor<T>& gh = *grads[0];
    const T half{0.5};
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      const CellTarget& c = cells_[i];
      const T g_x1 = gout[4 * i];
      const T g_y1 = gout[4 * i + 1];
      const T g_x2 = gout[4 * i + 2];
      const T g_y2 = gout[4 * i + 3];
      const T tx = head.at(c.image, 1, c.row, c.col);
      const T ty = head.at(c.image, 2, c.row, c.col);
      const T tw = head.at(c.image, 3, c.row, c.col);
      const T th = head.at(c.image, 4, c.row, c.col);
      const T sx = kernels::sigmoid(tx);
      const T sy = kernels::sigmoid(ty);
      // centre moves both edges; side moves them apart symmetrically
      gh.at(c.image, 1, c.row, c.col) += (g_x1 + g_x2) * sx * (T{1} - sx) * stride_;
      gh.at(c.image, 2, c.row, c.col) += (g_y1 + g_y2) * sy * (T{1} - sy) * stride_;
      const T lim = static_cast<T>(kMaxLogScale);
      if (tw > -lim && tw < lim) {
        gh.at(c.image, 3, c.row, c.col) += (g_x2 - g_x1) * half * stride_ * std::exp(tw);
      }
      if (th > -lim && th < lim) {
        gh.at(c.image, 4, c.row, c.col) += (g_y2 - g_y1) * half * stride_ * std::exp(th);
      }
    }
  }

 private:
  std::vector<CellTarget> cells_;
  T stride_;
};

}  // namespace

Assignment assign_targets(std::size_t grid, double stride, std::span<const GroundTruth> truths,
                          std::size_t image) {
  Assignment out;
  // owner[cell] = index into truths
  std::vector<std::ptrdiff_t> owner(grid * grid, -1);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const BoxXYXY& b = truths[i].box;
    const std::size_t cell = cell_index(b.cy(), stride, grid) * grid + cell_index(b.cx(), stride, grid);
    std::ptrdiff_t& cur = owner[cell];
    if (cur < 0) {
      cur = static_cast<std::ptrdiff_t>(i);
      continue;
    }
    ++out.dropped;
    if (b.area() > truths[static_cast<std::size_t>(cur)].box.area()) cur = static_cast<std::ptrdiff_t>(i);
  }
  for (std::size_t cell = 0; cell < owner.size(); ++cell) {
    if (owner[cell] < 0) continue;
    const GroundTruth& g = truths[static_cast<std::size_t>(owner[cell])];
    out.positives.push_back(CellTarget{image, cell / grid, cell % grid, g.box, g.cls});
  }
  return out;
}

Assignment assign_batch(std::size_t grid, double stride,
                        std::span<const std::vector<GroundTruth>> truths) {
  Assignment out;
  for (std::size_t n = 0; n < truths.size(); ++n) {
    Assignment a = assign_targets(grid, stride, truths[n], n);
    out.dropped += a.dropped;
    out.positives.insert(out.positives.end(), a.positives.begin(), a.positives.end());
  }
  return out;
}

template <typename T>
std::array<T, 4> decode_cell(T tx, T ty, T tw, T th, std::size_t row, std::size_t col, T stride) {
  const T cx = (static_cast<T>(col) + kernels::sigmoid(tx)) * stride;
  const T cy = (static_cast<T>(row) + kernels::sigmoid(ty)) * stride;
  const T hw = T{0.5} * stride * std::exp(clamp_log_scale(tw));
  const T hh = T{0.5} * stride * std::exp(clamp_log_scale(th));
  return {cx - hw, cy - hh, cx + hw, cy + hh};
}

template <typename T>
Var<T> gather_boxes(Var<T> head, std::span<const CellTarget> cells, double stride) {
  const Shape s = head.shape();
  if (s.c < 5) throw DimensionError("head needs at least 5 channels, got " + s.str());
  for (const CellTarget& c : cells) {
    if (c.image >= s.n || c.row >= s.h || c.col >= s.w) {
      throw DimensionError("cell outside head of shape " + s.str());
    }
  }
  std::vector<CellTarget> copy(cells.begin(), cells.end());
  return head.tape()->apply(std::make_unique<GatherBoxesOp<T>>(std::move(copy), static_cast<T>(stride)),
                            {head});
}

template <typename T>
DetectionLoss<T> detection_loss(Var<T> head, std::span<const std::vector<GroundTruth>> truths,
                                const ModelConfig& cfg, const RegressionLoss& regression,
                                const LossWeights& weights) {
  const Shape s = head.shape();
  if (s.c != cfg.head_channels() || s.h != cfg.grid() || s.w != cfg.grid() || s.n != truths.size()) {
    throw DimensionError("head shape " + s.str() + " does not match the model grid and batch");
  }
  const double stride = static_cast<double>(cfg.stride());
  const Assignment assign = assign_batch(cfg.grid(), stride, truths);
  DetectionLoss<T> out;
  out.positives = assign.positives.size();
  out.dropped = assign.dropped;

  const std::size_t k = cfg.num_classes;
  Tensor<T> obj_target(Shape{s.n, 1, s.h, s.w});
  Tensor<T> cls_target(Shape{s.n, k, s.h, s.w});
  Tensor<T> cls_weight(Shape{s.n, k, s.h, s.w});
  for (const CellTarget& c : assign.positives) {
    obj_target.at(c.image, 0, c.row, c.col) = T{1};
    for (std::size_t j = 0; j < k; ++j) {
      cls_weight.at(c.image, j, c.row, c.col) = T{1};
      cls_target.at(c.image, j, c.row, c.col) = j == c.cls ? T{1} : T{0};
    }
  }
  const Tensor<T> obj_weight(obj_target.shape(), T{1});
  Var<T> obj = bce_with_logits(slice_channels(head, 0, 1), obj_target, obj_weight,
                               static_cast<T>(obj_target.numel()));
  out.obj = static_cast<double>(obj.value().item());
  Var<T> total = scale(obj, static_cast<T>(weights.obj));

  if (!assign.positives.empty()) {
    const T positives = static_cast<T>(assign.positives.size());
    Var<T> cls = bce_with_logits(slice_channels(head, 5, k), cls_target, cls_weight, positives);
    out.cls = static_cast<double>(cls.value().item());
    std::vector<BoxXYXY> targets;
    targets.reserve(assign.positives.size());
    for (const CellTarget& c : assign.positives) targets.push_back(c.box);
    Var<T> boxes = gather_boxes(head, assign.positives, stride);
    Var<T> box = regression_loss(boxes, targets, regression, &out.regression);
    out.box = static_cast<double>(box.value().item());
    total = add(total, add(scale(box, static_cast<T>(weights.box)), scale(cls, static_cast<T>(weights.cls))));
  } else {
    out.regression.mu = kEmptyBatchMu;
    out.regression.mu_fallback = regression.slide.mu_policy == SlideConfig::MuPolicy::batch_mean_iou;
  }
  out.total = total;
  return out;
}

bool detection_before(const Detection& a, const Detection& b) {
  return std::tie(b.confidence, a.cls, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
         std::tie(a.confidence, b.cls, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
}

std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold) {
  std::sort(dets.begin(), dets.end(), detection_before);
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.cls == d.cls && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<std::vector<Detection>> decode_detections(const Tensor32& head, const ModelConfig& cfg,
                                                      double min_confidence, double nms_iou) {
  const Shape s = head.shape();
  if (s.c != cfg.head_channels() || s.h != cfg.grid() || s.w != cfg.grid()) {
    throw DimensionError("head shape " + s.str() + " does not match the model grid");
  }
  const double stride = static_cast<double>(cfg.stride());
  const double limit = static_cast<double>(cfg.image_size);
  std::vector<std::vector<Detection>> out(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::vector<Detection> dets;
    for (std::size_t r = 0; r < s.h; ++r) {
      for (std::size_t c = 0; c < s.w; ++c) {
        const double obj = kernels::sigmoid(static_cast<double>(head.at(n, 0, r, c)));
        std::size_t best = 0;
        double best_p = -1.0;
        for (std::size_t j = 0; j < cfg.num_classes; ++j) {
          const double pj = kernels::sigmoid(static_cast<double>(head.at(n, 5 + j, r, c)));
          if (pj > best_p) {
            best_p = pj;
            best = j;
          }
        }
        const double conf = obj * best_p;
        if (conf < min_confidence) continue;
        auto b = decode_cell<double>(head.at(n, 1, r, c), head.at(n, 2, r, c), head.at(n, 3, r, c),
                                     head.at(n, 4, r, c), r, c, stride);
        BoxXYXY box{std::clamp(b[0], 0.0, limit), std::clamp(b[1], 0.0, limit),
                    std::clamp(b[2], 0.0, limit), std::clamp(b[3], 0.0, limit)};
        if (!(box.x1 < box.x2) || !(box.y1 < box.y2)) continue;
        dets.push_back(Detection{box, best, conf});
      }
    }
    out[n] = non_max_suppression(std::move(dets), nms_iou);
  }
  return out;
}

#define MDET_INSTANTIATE_DETECT(T)                                                                 \
  template std::array<T, 4> decode_cell<T>(T, T, T, T, std::size_t, std::size_t, T);               \
  template Var<T> gather_boxes<T>(Var<T>, std::span<const CellTarget>, double);                    \
  template DetectionLoss<T> detection_loss<T>(Var<T>, std::span<const std::vector<GroundTruth>>, \
                                              const ModelConfig&, const RegressionLoss&,           \
                                              const LossWeights&);

MDET_INSTANTIATE_DETECT(float)
MDET_INSTANTIATE_DETECT(double)

#undef MDET_INSTANTIATE_DETECT

}  // namespace mdet
