#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mdet/sfg_loss.hpp"
#include "test_util.hpp"

using namespace mdet;

namespace {

const BoxXYXY kA{0, 0, 2, 2};
const BoxXYXY kB{1, 1, 3, 3};

BoxXYXY random_box(Rng& rng, double min_side = 1.0) {
  constexpr double field = 64.0;
  const double w = rng.uniform(min_side, 30.0);
  const double h = rng.uniform(min_side, 30.0);
  const double x = rng.uniform(0.0, field - w);
  const double y = rng.uniform(0.0, field - h);
  return BoxXYXY{x, y, x + w, y + h};
}

SlideConfig fixed_mu(double mu) {
  SlideConfig cfg;
  cfg.mu_policy = SlideConfig::MuPolicy::fixed;
  cfg.fixed_mu = mu;
  return cfg;
}

}  // namespace

TEST(BoxTest, DegenerateRejected) {
  EXPECT_THROW(BoxXYXY::make(0, 0, 0, 1), DimensionError);
  EXPECT_THROW(BoxXYXY::make(0, 2, 1, 1), DimensionError);
  EXPECT_NO_THROW(BoxXYXY::make(0, 0, 1, 1));
}

TEST(IouTest, HandGeometry) {
  EXPECT_EQ(iou(kA, kA), 1.0);
  EXPECT_EQ(iou(kA, BoxXYXY{5, 5, 6, 6}), 0.0);
  EXPECT_NEAR(iou(kA, kB), 1.0 / 7.0, 1e-15);
}

TEST(GiouTest, HandGeometry) {
  EXPECT_EQ(giou(kA, kA), 1.0);
  EXPECT_NEAR(giou(kA, kB), -5.0 / 63.0, 1e-12);
  EXPECT_LT(giou(BoxXYXY{0, 0, 1, 1}, BoxXYXY{1000, 1000, 1001, 1001}), -0.9);
}

TEST(GiouTest, BoundedByIouAndSymmetric) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const BoxXYXY a = random_box(rng);
    const BoxXYXY b = random_box(rng);
    const double io = iou(a, b);
    const double g = giou(a, b);
    EXPECT_GE(io, 0.0);
    EXPECT_LE(io, 1.0);
    EXPECT_GT(g, -1.0);
    EXPECT_LE(g, io + 1e-15);
    EXPECT_EQ(io, iou(b, a));
    EXPECT_NEAR(g, giou(b, a), 1e-15);
  }
  // Nested boxes: the hull equals the union.
  EXPECT_NEAR(giou(BoxXYXY{0, 0, 4, 4}, BoxXYXY{1, 1, 2, 2}), iou(BoxXYXY{0, 0, 4, 4}, BoxXYXY{1, 1, 2, 2}), 1e-15);
}

// Pixel-center rasterization on a 1024x1024 lattice over the 64x64 field.
TEST(IouTest, AgreesWithRasterization) {
  Rng rng(2);
  constexpr int grid = 1024;
  constexpr double cell = 64.0 / grid;
  double worst = 0.0;
  for (int pair = 0; pair < 1000; ++pair) {
    BoxXYXY a = random_box(rng, 4.0);
    BoxXYXY b = random_box(rng, 4.0);
    if (pair % 2 == 0) {  // half the pairs forced to overlap, still inside the field
      const double dx = std::clamp(rng.uniform(-0.5, 0.5) * a.width(), -a.x1, 64.0 - a.x2);
      const double dy = std::clamp(rng.uniform(-0.5, 0.5) * a.height(), -a.y1, 64.0 - a.y2);
      b = BoxXYXY{a.x1 + dx, a.y1 + dy, a.x2 + dx, a.y2 + dy};
    }
    auto span_of = [](double lo, double hi) {
      const int first = static_cast<int>(std::ceil(lo / cell - 0.5));
      const int last = static_cast<int>(std::floor(hi / cell - 0.5 - 1e-12));
      return std::pair<int, int>{std::max(first, 0), std::min(last, grid - 1)};
    };
    std::size_t ia = 0;
    std::size_t ib = 0;
    std::size_t both = 0;
    const auto ax = span_of(a.x1, a.x2);
    const auto ay = span_of(a.y1, a.y2);
    const auto bx = span_of(b.x1, b.x2);
    const auto by = span_of(b.y1, b.y2);
    for (int r = 0; r < grid; ++r) {
      const bool ra = r >= ay.first && r <= ay.second;
      const bool rb = r >= by.first && r <= by.second;
      if (!ra && !rb) continue;
      for (int c = 0; c < grid; ++c) {
        const bool in_a = ra && c >= ax.first && c <= ax.second;
        const bool in_b = rb && c >= bx.first && c <= bx.second;
        ia += in_a;
        ib += in_b;
        both += in_a && in_b;
      }
    }
    const double raster = static_cast<double>(both) / static_cast<double>(ia + ib - both);
    worst = std::max(worst, std::abs(raster - iou(a, b)));
  }
  EXPECT_LT(worst, 2e-2);
}

TEST(SlideWeightTest, PrintedTable) {
  const SlideConfig cfg = fixed_mu(0.5);
  EXPECT_NEAR(slide_weight(0.3, 0.5, cfg), 1.0, 1e-12);
  EXPECT_NEAR(slide_weight(0.45, 0.5, cfg), std::exp(-0.45), 1e-12);
  EXPECT_NEAR(slide_weight(0.45, 0.5, cfg), 0.6376, 1e-4);
  EXPECT_NEAR(slide_weight(0.6, 0.5, cfg), std::exp(-0.6), 1e-12);
  EXPECT_NEAR(slide_weight(0.6, 0.5, cfg), 0.5488, 1e-4);
}

TEST(SlideWeightTest, PrintedFormJumpsBelowMuAndIsContinuousAtMu) {
  const SlideConfig cfg;
  const double mu = 0.5;
  const double lo = mu - cfg.delta;
  EXPECT_EQ(slide_weight(lo, mu, cfg), 1.0);
  EXPECT_NEAR(slide_weight(std::nextafter(lo, 1.0), mu, cfg), std::exp(-lo), 1e-12);
  EXPECT_NEAR(slide_weight(std::nextafter(mu, 0.0), mu, cfg), slide_weight(mu, mu, cfg), 1e-12);
}

TEST(SlideWeightTest, SlideV2Form) {
  SlideConfig cfg;
  cfg.variant = SlideConfig::Variant::slide_v2;
  EXPECT_EQ(slide_weight(0.3, 0.5, cfg), 1.0);
  EXPECT_NEAR(slide_weight(0.45, 0.5, cfg), std::exp(0.5), 1e-12);
  EXPECT_NEAR(slide_weight(0.6, 0.5, cfg), std::exp(0.4), 1e-12);
}

TEST(SlideWeightTest, ParsersRejectUnknownNames) {
  EXPECT_EQ(parse_slide_variant("slide-v2"), SlideConfig::Variant::slide_v2);
  EXPECT_EQ(parse_mu_policy("fixed"), SlideConfig::MuPolicy::fixed);
  EXPECT_THROW(parse_slide_variant("typo"), ConfigError);
  EXPECT_THROW(parse_mu_policy("median"), ConfigError);
  EXPECT_EQ(to_string(parse_slide_variant("as-printed")), "as-printed");
  EXPECT_EQ(to_string(parse_mu_policy("batch-mean-iou")), "batch-mean-iou");
}

TEST(SlideGiouTest, Examples) {
  const SlideConfig cfg = fixed_mu(0.5);
  EXPECT_EQ(slide_giou(kA, kA, 0.5, cfg), 0.0);
  EXPECT_EQ(slide_giou(kA, kA, 0.1, cfg), 0.0);
  EXPECT_NEAR(slide_giou(kA, kB, 0.5, cfg), 68.0 / 63.0, 1e-12);
  EXPECT_NEAR(slide_giou(kA, kB, 0.5, cfg), 1.0 - giou(kA, kB), 0.0);
}

TEST(FocalerTest, ThreeBranchTable) {
  const FocalerConfig cfg;
  EXPECT_EQ(cfg.d, 0.0);
  EXPECT_EQ(cfg.u, 0.95);
  EXPECT_NEAR(focaler_truncate(0.0, cfg), 0.0, 1e-12);
  EXPECT_NEAR(focaler_truncate(0.475, cfg), 0.5, 1e-12);
  EXPECT_NEAR(focaler_truncate(1.2, cfg), 1.0, 1e-12);
}

TEST(FocalerTest, MonotoneAndContinuousWithBoundedSlope) {
  const FocalerConfig cfg{0.1, 0.8};
  double prev = focaler_truncate(-1.0, cfg);
  for (int i = 0; i <= 3000; ++i) {
    const double x = -1.0 + i * 1e-3;
    const double y = focaler_truncate(x, cfg);
    EXPECT_GE(y, prev);
    EXPECT_LE(y - prev, 1e-3 / (cfg.u - cfg.d) + 1e-12);
    EXPECT_GE(y, 0.0);
    EXPECT_LE(y, 1.0);
    prev = y;
  }
  EXPECT_EQ(focaler_truncate(cfg.d, cfg), 0.0);
  EXPECT_EQ(focaler_truncate(cfg.u, cfg), 1.0);
}

TEST(FocalerTest, InvertedThresholdsRejected) {
  EXPECT_THROW((FocalerConfig{0.5, 0.5}.validate()), ConfigError);
}

TEST(MuEstimateTest, Policies) {
  const std::vector<BoxPair> same{{kA, kA}, {kB, kB}};
  EXPECT_EQ(mu_estimate(same, SlideConfig{}).mu, 1.0);
  // IoU 0.2 and 0.6 from 1-D overlaps of unit-height boxes.
  const std::vector<BoxPair> mixed{{BoxXYXY{0, 0, 6, 1}, BoxXYXY{4, 0, 10, 1}},   // 2/10
                                   {BoxXYXY{0, 0, 8, 1}, BoxXYXY{2, 0, 10, 1}}};  // 6/10
  EXPECT_NEAR(mu_estimate(mixed, SlideConfig{}).mu, 0.4, 1e-15);
  EXPECT_EQ(mu_estimate(mixed, fixed_mu(0.5)).mu, 0.5);
  const auto empty = mu_estimate({}, SlideConfig{});
  EXPECT_EQ(empty.mu, 0.5);
  EXPECT_TRUE(empty.fallback);
}

TEST(SfgLossTest, Examples) {
  const std::vector<BoxPair> aligned{{kA, kA}, {kB, kB}};
  EXPECT_EQ(sfg_loss(aligned, SlideConfig{}, FocalerConfig{}).loss, 0.0);
  const std::vector<BoxPair> one{{kA, kB}};
  const auto r = sfg_loss(one, fixed_mu(0.5), FocalerConfig{});
  EXPECT_EQ(r.loss, 1.0);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_NEAR(r.pairs[0].sg, 68.0 / 63.0, 1e-12);
  EXPECT_EQ(r.pairs[0].weight, 1.0);
  const auto empty = sfg_loss({}, SlideConfig{}, FocalerConfig{});
  EXPECT_EQ(empty.loss, 0.0);
  EXPECT_TRUE(empty.pairs.empty());
  EXPECT_TRUE(empty.mu_fallback);
}

TEST(SfgLossTest, BreakdownInvariants) {
  Rng rng(3);
  for (int batch = 0; batch < 200; ++batch) {
    std::vector<BoxPair> pairs;
    const int n = 1 + batch % 7;
    for (int i = 0; i < n; ++i) pairs.push_back({random_box(rng), random_box(rng)});
    const auto r = sfg_loss(pairs, SlideConfig{}, FocalerConfig{});
    EXPECT_GE(r.loss, 0.0);
    EXPECT_LE(r.loss, 1.0);
    for (const auto& p : r.pairs) {
      EXPECT_GE(p.iou, 0.0);
      EXPECT_LE(p.iou, 1.0);
      EXPECT_GT(p.giou, -1.0);
      EXPECT_LE(p.giou, p.iou + 1e-15);
      EXPECT_GE(p.sg, 0.0);
      EXPECT_GE(p.sg_focaler, 0.0);
      EXPECT_LE(p.sg_focaler, 1.0);
    }
  }
}

TEST(SfgLossTest, TranslationAndScaleInvariant) {
  Rng rng(4);
  for (int batch = 0; batch < 100; ++batch) {
    std::vector<BoxPair> pairs;
    for (int i = 0; i < 4; ++i) {
      const BoxXYXY t = random_box(rng);
      const double dx = rng.uniform(-0.4, 0.4) * t.width();
      pairs.push_back({BoxXYXY{t.x1 + dx, t.y1, t.x2 + dx, t.y2 + 1.0}, t});
    }
    const double base = sfg_loss(pairs, SlideConfig{}, FocalerConfig{}).loss;
    const double tx = rng.uniform(-50, 50);
    const double ty = rng.uniform(-50, 50);
    const double s = rng.uniform(0.25, 4.0);
    std::vector<BoxPair> moved;
    std::vector<BoxPair> scaled;
    for (const auto& p : pairs) {
      auto mv = [&](BoxXYXY b) { return BoxXYXY{b.x1 + tx, b.y1 + ty, b.x2 + tx, b.y2 + ty}; };
      auto sc = [&](BoxXYXY b) { return BoxXYXY{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s}; };
      moved.push_back({mv(p.pred), mv(p.target)});
      scaled.push_back({sc(p.pred), sc(p.target)});
    }
    EXPECT_NEAR(sfg_loss(moved, SlideConfig{}, FocalerConfig{}).loss, base, 1e-12);
    EXPECT_NEAR(sfg_loss(scaled, SlideConfig{}, FocalerConfig{}).loss, base, 1e-12);
  }
}

TEST(RegressionLossTest, TapeValueMatchesPureComputation) {
  Rng rng(5);
  std::vector<BoxPair> pairs;
  std::vector<BoxXYXY> targets;
  Tensor64 preds(Shape{1, 1, 6, 4});
  for (std::size_t i = 0; i < 6; ++i) {
    const BoxXYXY t = random_box(rng);
    const BoxXYXY p{t.x1 + 1.5, t.y1 - 0.5, t.x2 + 2.0, t.y2 + 1.0};
    pairs.push_back({p, t});
    targets.push_back(t);
    preds[4 * i] = p.x1;
    preds[4 * i + 1] = p.y1;
    preds[4 * i + 2] = p.x2;
    preds[4 * i + 3] = p.y2;
  }
  Tape<double> tape;
  LossBreakdown bd;
  auto loss = regression_loss(tape.leaf(preds, true), targets, RegressionLoss{}, &bd);
  const auto ref = sfg_loss(pairs, SlideConfig{}, FocalerConfig{});
  EXPECT_NEAR(loss.value().item(), ref.loss, 1e-14);
  EXPECT_NEAR(bd.mu, ref.mu, 1e-15);
  ASSERT_EQ(bd.pairs.size(), ref.pairs.size());
  for (std::size_t i = 0; i < ref.pairs.size(); ++i) EXPECT_NEAR(bd.pairs[i].sg, ref.pairs[i].sg, 1e-14);
}

TEST(RegressionLossTest, PlainGiouKindIsMeanOneMinusGiou) {
  Tape<double> tape;
  Tensor64 preds(Shape{1, 1, 1, 4}, std::vector<double>{0, 0, 2, 2});
  const BoxXYXY t[] = {kB};
  RegressionLoss cfg;
  cfg.kind = RegressionLoss::Kind::giou;
  auto loss = regression_loss(tape.leaf(preds, true), t, cfg);
  EXPECT_NEAR(loss.value().item(), 68.0 / 63.0, 1e-12);
}

TEST(RegressionLossTest, ShapeMismatchRejected) {
  Tape<double> tape;
  auto preds = tape.leaf(Tensor64(Shape{1, 1, 2, 4}), true);
  const BoxXYXY t[] = {kA};
  EXPECT_THROW(regression_loss(preds, t, RegressionLoss{}), DimensionError);
}

TEST(RegressionLossTest, SaturatedPairsContributeNoGradient) {
  Tape<double> tape;
  auto preds = tape.leaf(Tensor64(Shape{1, 1, 1, 4}, std::vector<double>{0, 0, 2, 2}), true);
  const BoxXYXY t[] = {kB};
  RegressionLoss cfg;
  cfg.slide = fixed_mu(0.5);
  tape.backward(regression_loss(preds, t, cfg));
  for (double g : preds.grad()->data()) EXPECT_EQ(g, 0.0);
}
