#include "mdet/sfg_loss.hpp"

#include <cmath>
#include <memory>

namespace mdet {

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  return giou_terms<double>({a.x1, a.y1, a.x2, a.y2}, {b.x1, b.y1, b.x2, b.y2}).iou;
}

double giou(const BoxXYXY& a, const BoxXYXY& b) {
  return giou_terms<double>({a.x1, a.y1, a.x2, a.y2}, {b.x1, b.y1, b.x2, b.y2}).giou;
}

void SlideConfig::validate() const {
  if (mu_policy == MuPolicy::fixed && !(fixed_mu >= 0.0 && fixed_mu <= 1.0)) {
    throw ConfigError("fixed mu must lie in [0, 1]", "slide.fixed_mu");
  }
  if (!(delta >= 0.0)) throw ConfigError("slide delta must be non-negative", "slide.delta");
  if (variant != Variant::as_printed && variant != Variant::slide_v2) {
    throw ConfigError("unknown slide variant", "slide.variant");
  }
}

void FocalerConfig::validate() const {
  if (!(d < u)) {
    throw ConfigError("focaler thresholds need d < u, got d=" + std::to_string(d) +
                          " u=" + std::to_string(u),
                      "focaler");
  }
}

SlideConfig::Variant parse_slide_variant(std::string_view name) {
  if (name == "as-printed") return SlideConfig::Variant::as_printed;
  if (name == "slide-v2") return SlideConfig::Variant::slide_v2;
  throw ConfigError("unknown slide variant '" + std::string(name) + "'", "slide.variant");
}

SlideConfig::MuPolicy parse_mu_policy(std::string_view name) {
  if (name == "batch-mean-iou") return SlideConfig::MuPolicy::batch_mean_iou;
  if (name == "fixed") return SlideConfig::MuPolicy::fixed;
  throw ConfigError("unknown mu policy '" + std::string(name) + "'", "slide.mu_policy");
}

std::string_view to_string(SlideConfig::Variant v) {
  return v == SlideConfig::Variant::slide_v2 ? "slide-v2" : "as-printed";
}

std::string_view to_string(SlideConfig::MuPolicy p) {
  return p == SlideConfig::MuPolicy::fixed ? "fixed" : "batch-mean-iou";
}

double slide_weight(double x, double mu, const SlideConfig& cfg) {
  switch (cfg.variant) {
    case SlideConfig::Variant::as_printed:
      if (x <= mu - cfg.delta) return 1.0;
      return std::exp(-x);
    case SlideConfig::Variant::slide_v2:
      if (x <= mu - cfg.delta) return 1.0;
      if (x < mu) return std::exp(1.0 - mu);
      return std::exp(1.0 - x);
  }
  throw ConfigError("unknown slide variant", "slide.variant");
}

double slide_giou(const BoxXYXY& pred, const BoxXYXY& target, double mu, const SlideConfig& cfg) {
  const auto g = giou_terms<double>({pred.x1, pred.y1, pred.x2, pred.y2},
                                    {target.x1, target.y1, target.x2, target.y2});
  return slide_weight(g.iou, mu, cfg) * (1.0 - g.giou);
}

double focaler_truncate(double sg, const FocalerConfig& cfg) {
  if (sg < cfg.d) return 0.0;
  if (sg > cfg.u) return 1.0;
  return (sg - cfg.d) / (cfg.u - cfg.d);
}

namespace {

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

MuEstimate mu_from_ious(std::span<const double> ious, const SlideConfig& cfg) {
  MuEstimate est;
  if (cfg.mu_policy == SlideConfig::MuPolicy::fixed) {
    est.mu = cfg.fixed_mu;
    return est;
  }
  if (ious.empty()) {
    est.mu = kEmptyBatchMu;
    est.fallback = true;
    return est;
  }
  double acc = 0.0;
  for (double v : ious) acc += v;
  est.mu = clamp01(acc / static_cast<double>(ious.size()));
  return est;
}

template <typename T>
class RegressionLossOp final : public Op<T> {
 public:
  RegressionLossOp(std::vector<std::array<T, 4>> targets, RegressionLoss cfg)
      : targets_(std::move(targets)), cfg_(std::move(cfg)) {}
  std::string_view name() const override {
    return cfg_.kind == RegressionLoss::Kind::sfg ? "sfg_loss" : "giou_loss";
  }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& boxes = *in[0];
    const std::size_t count = targets_.size();
    terms_.resize(count);
    std::vector<double> ious(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::array<T, 4> p{boxes[4 * i], boxes[4 * i + 1], boxes[4 * i + 2], boxes[4 * i + 3]};
      terms_[i] = giou_terms<T>(p, targets_[i]);
      ious[i] = static_cast<double>(terms_[i].iou);
    }
    const MuEstimate mu = mu_from_ious(ious, cfg_.slide);
    breakdown_ = LossBreakdown{};
    breakdown_.mu = mu.mu;
    breakdown_.mu_fallback = mu.fallback;
    breakdown_.pairs.resize(count);
    slope_.assign(count, T{0});

    T acc{0};
    for (std::size_t i = 0; i < count; ++i) {
      const GiouTerms<T>& g = terms_[i];
      PairBreakdown& pb = breakdown_.pairs[i];
      pb.iou = static_cast<double>(g.iou);
      pb.giou = static_cast<double>(g.giou);
      if (cfg_.kind == RegressionLoss::Kind::giou) {
        pb.weight = 1.0;
        pb.sg = 1.0 - pb.giou;
        pb.sg_focaler = pb.sg;
        acc += T{1} - g.giou;
        slope_[i] = T{-1};
        continue;
      }
      const T w = static_cast<T>(slide_weight(pb.iou, mu.mu, cfg_.slide));
      const T sg = w * (T{1} - g.giou);
      const T d = static_cast<T>(cfg_.focaler.d);
      const T u = static_cast<T>(cfg_.focaler.u);
      T fsg;
      if (sg < d) {
        fsg = T{0};
      } else if (sg > u) {
        fsg = T{1};
      } else {
        fsg = (sg - d) / (u - d);
        slope_[i] = -w / (u - d);  // d(fsg)/d(giou)
      }
      pb.weight = static_cast<double>(w);
      pb.sg = static_cast<double>(sg);
      pb.sg_focaler = static_cast<double>(fsg);
      acc += fsg;
    }
    const T out = count ? acc / static_cast<T>(count) : T{0};
    breakdown_.loss = static_cast<double>(out);
    return Tensor<T>::scalar(out);
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    if (targets_.empty()) return;
    const T g = gout.item() / static_cast<T>(targets_.size());
    Tensor<T>& gb = *grads[0];
    for (std::size_t i = 0; i < targets_.size(); ++i) {
      for (std::size_t k = 0; k < 4; ++k) gb[4 * i + k] += g * slope_[i] * terms_[i].d_giou[k];
    }
  }

  const LossBreakdown& breakdown() const { return breakdown_; }

 private:
  std::vector<std::array<T, 4>> targets_;
  RegressionLoss cfg_;
  std::vector<GiouTerms<T>> terms_;
  std::vector<T> slope_;
  LossBreakdown breakdown_;
};

}  // namespace

MuEstimate mu_estimate(std::span<const BoxPair> pairs, const SlideConfig& cfg) {
  std::vector<double> ious;
  ious.reserve(pairs.size());
  for (const auto& p : pairs) ious.push_back(iou(p.pred, p.target));
  return mu_from_ious(ious, cfg);
}

LossBreakdown sfg_loss(std::span<const BoxPair> pairs, const SlideConfig& slide,
                       const FocalerConfig& focaler) {
  slide.validate();
  focaler.validate();
  LossBreakdown out;
  const MuEstimate mu = mu_estimate(pairs, slide);
  out.mu = mu.mu;
  out.mu_fallback = mu.fallback;
  double acc = 0.0;
  for (const auto& p : pairs) {
    PairBreakdown pb;
    pb.iou = iou(p.pred, p.target);
    pb.giou = giou(p.pred, p.target);
    pb.weight = slide_weight(pb.iou, mu.mu, slide);
    pb.sg = pb.weight * (1.0 - pb.giou);
    pb.sg_focaler = focaler_truncate(pb.sg, focaler);
    acc += pb.sg_focaler;
    out.pairs.push_back(pb);
  }
  out.loss = pairs.empty() ? 0.0 : acc / static_cast<double>(pairs.size());
  return out;
}

template <typename T>
Var<T> regression_loss(Var<T> pred_boxes, std::span<const BoxXYXY> targets,
                       const RegressionLoss& cfg, LossBreakdown* breakdown) {
  if (!pred_boxes.valid()) throw UsageError("regression_loss on an unbound variable");
  cfg.slide.validate();
  cfg.focaler.validate();
  const Shape s = pred_boxes.shape();
  if (s.n != 1 || s.c != 1 || s.w != 4 || s.h != targets.size()) {
    throw DimensionError("regression_loss expects predicted boxes [1,1," +
                         std::to_string(targets.size()) + ",4], got " + s.str());
  }
  std::vector<std::array<T, 4>> tg;
  tg.reserve(targets.size());
  for (const auto& b : targets) {
    tg.push_back({static_cast<T>(b.x1), static_cast<T>(b.y1), static_cast<T>(b.x2),
                  static_cast<T>(b.y2)});
  }
  auto op = std::make_unique<RegressionLossOp<T>>(std::move(tg), cfg);
  const RegressionLossOp<T>* raw = op.get();
  Var<T> out = pred_boxes.tape()->apply(std::move(op), {pred_boxes});
  if (breakdown) *breakdown = raw->breakdown();
  return out;
}

template Var<float> regression_loss<float>(Var<float>, std::span<const BoxXYXY>,
                                           const RegressionLoss&, LossBreakdown*);
template Var<double> regression_loss<double>(Var<double>, std::span<const BoxXYXY>,
                                             const RegressionLoss&, LossBreakdown*);

}  // namespace mdet
