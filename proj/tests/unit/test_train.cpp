#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "mdet/checkpoint.hpp"
#include "mdet/error.hpp"
#include "mdet/train.hpp"
#include "test_util.hpp"

namespace mdet {
namespace {

ExperimentConfig tiny(std::size_t epochs = 2) {
  ExperimentConfig x;
  x.scene.image_size = 32;
  x.scene.max_side = 10;
  x.scene.train_count = 8;
  x.scene.val_count = 4;
  x.model.image_size = 32;
  x.model.stem_channels = 4;
  x.model.width = 8;
  x.train.epochs = epochs;
  x.train.batch_size = 4;
  x.train.warmup_epochs = epochs > 1 ? 1 : 0;
  x.train.eval_every = 1;
  x.seed = 3;
  return x;
}

bool same_store(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.value.shape() != y.value.shape()) return false;
    if (std::memcmp(x.value.raw(), y.value.raw(), x.value.numel() * sizeof(float)) != 0) return false;
  }
  return true;
}

TEST(Trainer, RunsAreBitDeterministic) {
  Trainer a(tiny());
  Trainer b(tiny());
  a.run();
  b.run();
  EXPECT_EQ(a.state().history, b.state().history);
  EXPECT_TRUE(same_store(a.state().params, b.state().params));
  EXPECT_TRUE(same_store(a.state().momentum, b.state().momentum));
}

TEST(Trainer, SeedChangesTheRun) {
  ExperimentConfig other = tiny();
  other.seed = 4;
  Trainer a(tiny());
  Trainer b(other);
  a.step_epoch();
  b.step_epoch();
  EXPECT_NE(a.state().history.back().loss, b.state().history.back().loss);
}

TEST(Trainer, ScheduleWarmsUpThenDecaysLinearly) {
  Trainer t(tiny(2));
  ASSERT_EQ(t.steps_per_epoch(), 2u);
  // 4 steps in total, the first 2 of them warming up.
  const double lr = 0.01;
  EXPECT_DOUBLE_EQ(t.lr_at(0), lr * 1.0 * 0.5);
  EXPECT_DOUBLE_EQ(t.lr_at(1), lr * (1.0 - 0.99 * 0.25) * 1.0);
  EXPECT_DOUBLE_EQ(t.lr_at(2), lr * (1.0 - 0.99 * 0.5));
  EXPECT_DOUBLE_EQ(t.lr_at(3), lr * (1.0 - 0.99 * 0.75));
  EXPECT_NEAR(t.lr_at(4), lr * 0.01, 1e-15);
}

TEST(Trainer, ZeroLearningRateLeavesWeightsUnchanged) {
  ExperimentConfig cfg = tiny(1);
  cfg.train.lr = 0.0;
  Trainer t(cfg);
  const ParamStore<float> before = build_model(cfg.model, cfg.seed);
  t.step_epoch();
  for (const auto& e : before.entries()) {
    if (!e.learnable) continue;
    const Tensor32& after = t.state().params.get(e.name);
    EXPECT_EQ(std::memcmp(after.raw(), e.value.raw(), after.numel() * sizeof(float)), 0) << e.name;
  }
}

TEST(Trainer, ZeroGainsApplyOnlyDecoupledDecayToConvWeights) {
  ExperimentConfig cfg = tiny(2);
  cfg.train.gains = {0.0, 0.0, 0.0};
  cfg.train.weight_decay = 0.05;
  cfg.train.lr = 0.5;
  Trainer t(cfg);
  const ParamStore<float> before = build_model(cfg.model, cfg.seed);
  t.step_epoch();
  double shrink = 1.0;
  for (std::size_t s = 0; s < t.steps_per_epoch(); ++s) shrink *= 1.0 - t.lr_at(s) * cfg.train.weight_decay;
  for (const auto& e : before.entries()) {
    if (!e.learnable) continue;
    const bool is_weight = e.name.ends_with(".w");
    const Tensor32& after = t.state().params.get(e.name);
    for (std::size_t i = 0; i < after.numel(); ++i) {
      const double expect = is_weight ? e.value[i] * shrink : e.value[i];
      ASSERT_NEAR(after[i], expect, 1e-6 * (1.0 + std::abs(expect))) << e.name << "[" << i << "]";
    }
  }
}

TEST(Trainer, LossDecreasesOnATinySet) {
  ExperimentConfig cfg = tiny(30);
  cfg.train.eval_every = 0;
  Trainer t(cfg);
  t.run();
  const auto& h = t.state().history;
  ASSERT_EQ(h.size(), 30u);
  EXPECT_LT(h.back().loss, 0.85 * h.front().loss);
  for (const EpochRecord& r : h) EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(Trainer, EvaluationCadence) {
  ExperimentConfig cfg = tiny(5);
  cfg.train.eval_every = 2;
  Trainer t(cfg);
  t.run();
  const auto& h = t.state().history;
  std::vector<std::size_t> evaluated;
  for (const EpochRecord& r : h) {
    if (r.metrics) evaluated.push_back(r.epoch);
  }
  EXPECT_EQ(evaluated, (std::vector<std::size_t>{2, 4, 5}));
  const MetricsReport& m = *h.back().metrics;
  EXPECT_EQ(m.epochs, 5u);
  EXPECT_EQ(m.seed, 3u);
  EXPECT_EQ(m.params, t.state().params.learnable_count());
  EXPECT_EQ(m, t.evaluate());
}

TEST(Trainer, ResumeMatchesUninterruptedTraining) {
  test::TempDir dir("resume");
  RunConfig rc;
  rc.experiment = tiny(4);
  Trainer full(rc.experiment);
  full.run();

  Trainer first(rc.experiment);
  first.step_epoch();
  first.step_epoch();
  save_checkpoint(dir / "ck", rc, first.state());
  Trainer second(rc.experiment, load_resume_state(dir / "ck", rc));
  EXPECT_EQ(second.state().epoch, 2u);
  second.run();
  EXPECT_EQ(second.state().history, full.state().history);
  EXPECT_TRUE(same_store(second.state().params, full.state().params));
  EXPECT_TRUE(same_store(second.state().momentum, full.state().momentum));
}

TEST(Trainer, ResumeRejectsMismatchedState) {
  Trainer a(tiny(4));
  a.step_epoch();
  ExperimentConfig wider = tiny(4);
  wider.model.width = 12;
  EXPECT_THROW(Trainer(wider, a.state()), ConfigError);
  TrainState inconsistent = a.state();
  inconsistent.history.clear();
  EXPECT_THROW(Trainer(tiny(4), inconsistent), ConfigError);
}

TEST(Trainer, DivergenceIsANumericalErrorWithContext) {
  ExperimentConfig cfg = tiny(3);
  cfg.train.lr = 1e30;
  cfg.train.warmup_epochs = 0;
  Trainer t(cfg);
  try {
    t.run();
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch "), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("batch "), std::string::npos) << e.what();
  }
}

TEST(Trainer, InconsistentExperimentsAreRejected) {
  ExperimentConfig cfg = tiny();
  cfg.model.image_size = 64;
  EXPECT_THROW(Trainer{cfg}, ConfigError);
  cfg = tiny();
  cfg.train.warmup_epochs = 2;
  EXPECT_THROW(Trainer{cfg}, ConfigError);
}

TEST(Ablation, EightRowsWithBaselineFirst) {
  ExperimentConfig cfg = tiny(1);
  std::size_t seen = 0;
  const std::vector<AblationRow> rows = ablate(cfg, [&](const AblationRow&) { ++seen; });
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(seen, 8u);
  EXPECT_EQ(rows.front().toggles, (ModuleToggles{false, false, false}));
  EXPECT_EQ(rows.back().toggles, (ModuleToggles{true, true, true}));

  ExperimentConfig base = cfg;
  base.model.toggles = {false, false, false};
  Trainer standalone(base);
  standalone.run();
  EXPECT_EQ(rows.front().metrics, *standalone.state().history.back().metrics);
  EXPECT_EQ(rows.front().final_loss, standalone.state().history.back().loss);
}

TEST(Predict, DetectionsAreSortedAndInsideTheImage) {
  ExperimentConfig cfg = tiny(1);
  Trainer t(cfg);
  t.run();
  const auto dets = predict(t.state().params, cfg.model, t.validation_set(), cfg.eval);
  ASSERT_EQ(dets.size(), t.validation_set().size());
  for (const auto& image : dets) {
    for (std::size_t i = 0; i < image.size(); ++i) {
      const Detection& d = image[i];
      EXPECT_GE(d.confidence, cfg.eval.min_confidence);
      EXPECT_GE(d.box.x1, 0.0);
      EXPECT_LE(d.box.x2, 32.0);
      if (i > 0) {
        EXPECT_GE(image[i - 1].confidence, d.confidence);
      }
    }
  }
}

}  // namespace
}  // namespace mdet
