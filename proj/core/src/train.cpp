#include "mdet/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "mdet/error.hpp"

namespace mdet {
namespace {

constexpr std::uint64_t kShuffleStream = 0x5eed;
constexpr std::size_t kEvalBatch = 10;

bool decays(const std::string& name) { return name.ends_with(".w"); }

void require_finite(const Tensor32& t, const std::string& what) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw NumericalError(what + " is non-finite");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be >= 0", "train.lr");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)", "train.momentum");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0", "train.weight_decay");
  if (epochs == 0) throw ConfigError("epochs must be positive", "train.epochs");
  if (batch_size == 0) throw ConfigError("batch size must be positive", "train.batch_size");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
    throw ConfigError("final lr fraction must lie in [0, 1]", "train.final_lr_fraction");
  }
  if (warmup_epochs >= epochs && warmup_epochs > 0) {
    throw ConfigError("warmup must be shorter than training", "train.warmup_epochs");
  }
  for (double g : {gains.box, gains.obj, gains.cls}) {
    if (!(g >= 0.0)) throw ConfigError("loss gains must be >= 0", "train.gains");
  }
  slide.validate();
  focaler.validate();
}

void ExperimentConfig::validate() const {
  scene.validate();
  model.validate();
  train.validate();
  eval.validate();
  if (scene.image_size != model.image_size) {
    throw ConfigError("scene and model image sizes differ", "model.image_size");
  }
  if (scene.num_classes != model.num_classes) {
    throw ConfigError("scene and model class counts differ", "model.num_classes");
  }
  if (model.in_channels != 3) throw ConfigError("scenes are RGB", "model.in_channels");
  if (scene.train_count == 0) throw ConfigError("need at least one training scene", "scene.train_count");
}

RegressionLoss ExperimentConfig::regression() const {
  RegressionLoss r;
  r.kind = model.toggles.sfg ? RegressionLoss::Kind::sfg : RegressionLoss::Kind::giou;
  r.slide = train.slide;
  r.focaler = train.focaler;
  return r;
}

Tensor32 stack_images(std::span<const Scene> scenes, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("cannot stack an empty batch");
  const Shape one = scenes[indices[0]].image.shape();
  Tensor32 out(Shape{indices.size(), one.c, one.h, one.w});
  const std::size_t plane = one.numel();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor32& img = scenes[indices[i]].image;
    if (img.shape() != one) throw DimensionError("scene images differ in shape");
    std::copy(img.data().begin(), img.data().end(), out.raw() + i * plane);
  }
  return out;
}

std::vector<std::vector<Detection>> predict(const ParamStore<float>& params, const ModelConfig& model,
                                            std::span<const Scene> scenes, const EvalConfig& eval) {
  std::vector<std::vector<Detection>> out;
  out.reserve(scenes.size());
  const ForwardContext<float> ctx{false, nullptr};
  for (std::size_t first = 0; first < scenes.size(); first += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, scenes.size() - first);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = first + i;
    Tape<float> tape;
    const Bindings<float> p = params.bind(tape);
    Var<float> head = detector_forward(tape.leaf(stack_images(scenes, idx)), p, model, ctx);
    for (auto& dets : decode_detections(head.value(), model, eval.min_confidence, eval.nms_iou)) {
      out.push_back(std::move(dets));
    }
  }
  return out;
}

MetricsReport evaluate_model(const ParamStore<float>& params, const ModelConfig& model,
                             std::span<const Scene> scenes, const EvalConfig& eval) {
  const auto dets = predict(params, model, scenes, eval);
  std::vector<std::vector<GroundTruth>> truths;
  truths.reserve(scenes.size());
  for (const Scene& s : scenes) truths.push_back(s.objects);
  const DetectionScores s = score_detections(dets, truths, model.num_classes, eval);
  MetricsReport r;
  r.precision = s.precision;
  r.recall = s.recall;
  r.f1 = s.f1;
  r.ap50 = s.ap50;
  r.params = params.learnable_count();
  return r;
}

Trainer::Trainer(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  train_ = training_scenes(cfg_.scene);
  val_ = validation_scenes(cfg_.scene);
  state_.params = build_model(cfg_.model, cfg_.seed);
  for (const auto& e : state_.params.entries()) {
    if (e.learnable) state_.momentum.add(e.name, Tensor32(e.value.shape()));
  }
}

Trainer::Trainer(ExperimentConfig cfg, TrainState state) : Trainer(std::move(cfg)) {
  const ParamStore<float>& fresh = state_.params;
  if (state.params.size() != fresh.size()) {
    throw ConfigError("checkpoint parameters do not match the configured model", "model");
  }
  for (const auto& e : fresh.entries()) {
    if (!state.params.contains(e.name) || state.params.get(e.name).shape() != e.value.shape()) {
      throw ConfigError("checkpoint lacks parameter '" + e.name + "' with the configured shape", "model");
    }
    if (e.learnable && (!state.momentum.contains(e.name) ||
                        state.momentum.get(e.name).shape() != e.value.shape())) {
      throw ConfigError("checkpoint lacks momentum for '" + e.name + "'", "model");
    }
  }
  if (state.epoch > cfg_.train.epochs || state.history.size() != state.epoch) {
    throw ConfigError("checkpoint epoch count is inconsistent", "train.epochs");
  }
  // Re-key in the configured order so iteration matches a fresh run.
  TrainState ordered;
  ordered.epoch = state.epoch;
  ordered.history = std::move(state.history);
  for (const auto& e : fresh.entries()) {
    ordered.params.add(e.name, state.params.get(e.name), e.learnable);
    if (e.learnable) ordered.momentum.add(e.name, state.momentum.get(e.name));
  }
  state_ = std::move(ordered);
}

std::size_t Trainer::steps_per_epoch() const {
  return (train_.size() + cfg_.train.batch_size - 1) / cfg_.train.batch_size;
}

ExperimentConfig blur_small_object_suite(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.scene.seed = seed;
  cfg.scene.max_side = 12;
  cfg.scene.min_blur = 0.5;
  cfg.scene.max_blur = 2.0;
  return cfg;
}

double Trainer::lr_at(std::size_t step) const {
  const TrainConfig& t = cfg_.train;
  const double per_epoch = static_cast<double>(steps_per_epoch());
  const double total = per_epoch * static_cast<double>(t.epochs);
  const double warmup = per_epoch * static_cast<double>(t.warmup_epochs);
  const double s = static_cast<double>(step);
  const double progress = s / total;
  double lr = t.lr * (1.0 - (1.0 - t.final_lr_fraction) * progress);
  if (s < warmup) lr *= (s + 1.0) / warmup;
  return lr;
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(train_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(cfg_.seed, kShuffleStream + epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

const EpochRecord& Trainer::step_epoch() {
  if (finished()) throw UsageError("training already finished");
  const TrainConfig& t = cfg_.train;
  const std::size_t epoch = state_.epoch;
  const std::vector<std::size_t> order = epoch_order(epoch);
  const RegressionLoss regression = cfg_.regression();
  const std::size_t steps = steps_per_epoch();

  EpochRecord rec;
  rec.epoch = epoch + 1;
  std::map<std::string, ChannelStats<float>> stats_sum;
  for (std::size_t b = 0; b < steps; ++b) {
    const std::string where = "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b + 1);
    const std::size_t first = b * t.batch_size;
    const std::size_t n = std::min(t.batch_size, order.size() - first);
    const std::span<const std::size_t> idx(order.data() + first, n);
    std::vector<std::vector<GroundTruth>> truths;
    truths.reserve(n);
    for (std::size_t i : idx) truths.push_back(train_[i].objects);

    Tape<float> tape;
    const Bindings<float> p = state_.params.bind(tape);
    std::map<std::string, ChannelStats<float>> batch_stats;
    const ForwardContext<float> ctx{true, &batch_stats};
    try {
      Var<float> head = detector_forward(tape.leaf(stack_images(train_, idx)), p, cfg_.model, ctx);
      DetectionLoss<float> loss = detection_loss(head, std::span<const std::vector<GroundTruth>>(truths),
                                                 cfg_.model, regression, t.gains);
      const double total = loss.total.value().item();
      if (!std::isfinite(total)) throw NumericalError("loss is non-finite");
      tape.backward(loss.total);
      rec.loss += total;
      rec.box += loss.box;
      rec.obj += loss.obj;
      rec.cls += loss.cls;
      rec.mu += loss.regression.mu;
      rec.dropped += loss.dropped;
    } catch (const NumericalError& e) {
      throw NumericalError(where + ": " + e.what());
    }

    const double lr = lr_at(epoch * steps + b);
    rec.lr = lr;
    for (auto& e : state_.params.entries()) {
      if (!e.learnable) continue;
      const Tensor32* g = p[e.name].grad();
      Tensor32& v = state_.momentum.get_mut(e.name);
      const auto mom = static_cast<float>(t.momentum);
      const auto step = static_cast<float>(lr);
      const auto decay = static_cast<float>(decays(e.name) ? lr * t.weight_decay : 0.0);
      for (std::size_t i = 0; i < e.value.numel(); ++i) {
        v[i] = mom * v[i] + (g ? (*g)[i] : 0.0f);
        e.value[i] -= step * v[i] + decay * e.value[i];
      }
      require_finite(e.value, where + ": parameter '" + e.name + "'");
    }
    for (const auto& [name, s] : batch_stats) {
      ChannelStats<float>& acc = stats_sum[name];
      if (acc.mean.empty()) {
        acc.mean.assign(s.mean.size(), 0.0f);
        acc.var.assign(s.var.size(), 0.0f);
      }
      for (std::size_t c = 0; c < s.mean.size(); ++c) {
        acc.mean[c] += s.mean[c];
        acc.var[c] += s.var[c];
      }
    }
  }
  // Running statistics become the average batch statistics of this epoch.
  const auto inv = 1.0f / static_cast<float>(steps);
  for (const auto& [name, s] : stats_sum) {
    Tensor32& mean = state_.params.get_mut(name + ".mean");
    Tensor32& var = state_.params.get_mut(name + ".var");
    for (std::size_t c = 0; c < s.mean.size(); ++c) {
      mean[c] = s.mean[c] * inv;
      var[c] = s.var[c] * inv;
    }
  }
  const double per = 1.0 / static_cast<double>(steps);
  rec.loss *= per;
  rec.box *= per;
  rec.obj *= per;
  rec.cls *= per;
  rec.mu *= per;

  state_.epoch = epoch + 1;
  const bool last = state_.epoch == t.epochs;
  if (last || (t.eval_every > 0 && state_.epoch % t.eval_every == 0)) rec.metrics = evaluate();
  state_.history.push_back(rec);
  return state_.history.back();
}

void Trainer::run(const std::function<void(const Trainer&)>& after_epoch) {
  while (!finished()) {
    step_epoch();
    if (after_epoch) after_epoch(*this);
  }
}

MetricsReport Trainer::evaluate() const {
  MetricsReport r = evaluate_model(state_.params, cfg_.model, val_, cfg_.eval);
  r.epochs = state_.epoch;
  r.seed = cfg_.seed;
  return r;
}

std::vector<AblationRow> ablate(const ExperimentConfig& base,
                                const std::function<void(const AblationRow&)>& after_row) {
  std::vector<AblationRow> rows;
  for (const ModuleToggles& toggles : all_toggle_combinations()) {
    ExperimentConfig cfg = base;
    cfg.model.toggles = toggles;
    Trainer trainer(cfg);
    trainer.run();
    const EpochRecord& last = trainer.state().history.back();
    AblationRow row{toggles, *last.metrics, last.loss};
    rows.push_back(row);
    if (after_row) after_row(row);
  }
  return rows;
}

}  // namespace mdet
