#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mdet/detect.hpp"
#include "mdet/metrics.hpp"
#include "mdet/synth.hpp"

namespace mdet {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.937;
  // Decoupled decay applied to convolution weights only.
  double weight_decay = 0.0005;
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  // Linear warmup from 0 over this many epochs, then linear decay to lr * final_lr_fraction.
  std::size_t warmup_epochs = 3;
  double final_lr_fraction = 0.01;
  LossWeights gains;
  SlideConfig slide;
  FocalerConfig focaler;
  // Validation metrics every this many epochs (and always after the last); 0 = last only.
  std::size_t eval_every = 10;

  void validate() const;
};

// Everything that determines a training run.
struct ExperimentConfig {
  SynthSceneSpec scene;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  // Drives weight initialisation and batch order; the scene set has its own seed.
  std::uint64_t seed = 0;

  void validate() const;
  // The regression loss selected by the sfg toggle.
  RegressionLoss regression() const;
};

// Default experiment on harder scenes: blur sigma 0.5 to 2.0 px and object sides 4 to 12 px.
// Weights, batch order and scenes are all seeded by `seed`.
ExperimentConfig blur_small_object_suite(std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate of the epoch's last step
  double loss = 0.0;      // mean over batches
  double box = 0.0;
  double obj = 0.0;
  double cls = 0.0;
  double mu = 0.0;  // mean slide threshold over batches
  std::size_t dropped = 0;
  std::optional<MetricsReport> metrics;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  ParamStore<float> params;
  // One buffer per learnable parameter, same names.
  ParamStore<float> momentum;
  std::vector<EpochRecord> history;
};

// Forward in inference mode, decode and score against `scenes`.
MetricsReport evaluate_model(const ParamStore<float>& params, const ModelConfig& model,
                             std::span<const Scene> scenes, const EvalConfig& eval);

// Inference-mode detections per scene, above eval.min_confidence, after NMS.
std::vector<std::vector<Detection>> predict(const ParamStore<float>& params, const ModelConfig& model,
                                            std::span<const Scene> scenes, const EvalConfig& eval);

class Trainer {
 public:
  explicit Trainer(ExperimentConfig cfg);
  // Continues from a checkpointed state; the state must come from the same configuration.
  Trainer(ExperimentConfig cfg, TrainState state);

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const TrainState& state() const noexcept { return state_; }
  bool finished() const noexcept { return state_.epoch >= cfg_.train.epochs; }

  // Runs one epoch. Throws NumericalError naming the epoch and batch on a non-finite value.
  const EpochRecord& step_epoch();
  void run(const std::function<void(const Trainer&)>& after_epoch = {});

  double lr_at(std::size_t step) const;
  std::size_t steps_per_epoch() const;
  MetricsReport evaluate() const;
  const std::vector<Scene>& training_set() const noexcept { return train_; }
  const std::vector<Scene>& validation_set() const noexcept { return val_; }

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  ExperimentConfig cfg_;
  std::vector<Scene> train_;
  std::vector<Scene> val_;
  TrainState state_;
};

struct AblationRow {
  ModuleToggles toggles;
  MetricsReport metrics;
  double final_loss = 0.0;
};

// Trains each of the 8 toggle combinations from `base` with the same seed and data.
std::vector<AblationRow> ablate(const ExperimentConfig& base,
                                const std::function<void(const AblationRow&)>& after_row = {});

// Stacks scene images into [N, 3, S, S].
Tensor32 stack_images(std::span<const Scene> scenes, std::span<const std::size_t> indices);

}  // namespace mdet
