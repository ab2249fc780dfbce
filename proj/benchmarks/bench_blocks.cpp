#include <benchmark/benchmark.h>


#include "mdet/dbcasa.hpp"
#include "mdet/fsfm.hpp"
#include "mdet/ops.hpp"
#include "mdet/sfg_loss.hpp"
#include "mdet/train.hpp"

namespace mdet {
namespace {

Tensor32 random_input(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor32 t(s);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// state.range(0) = channels, state.range(1) = spatial side; batch of 8.
Shape bench_shape(const benchmark::State& state) {
  return Shape{8, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
               static_cast<std::size_t>(state.range(1))};
}

void BM_Conv3x3(benchmark::State& state) {
  const Shape s = bench_shape(state);
  const Tensor32 x = random_input(s, 1);
  const Tensor32 w = random_input(Shape{s.c, s.c, 3, 3}, 2);
  for (auto _ : state) {
    Tape<float> tape;
    Var<float> y = conv2d(tape.leaf(x, true), tape.leaf(w, true), std::nullopt, {1, 1, 1});
    tape.backward(y);
    benchmark::DoNotOptimize(y.value().raw());
  }
}
BENCHMARK(BM_Conv3x3)->Args({8, 32})->Args({16, 16})->Unit(benchmark::kMicrosecond);

void BM_FsfmFuse(benchmark::State& state) {
  const Tensor32 x = random_input(bench_shape(state), 3);
  for (auto _ : state) {
    Tape<float> tape;
    Var<float> y = fsfm_fuse(tape.leaf(x, true), ShiftConfig{1});
    tape.backward(y);
    benchmark::DoNotOptimize(y.value().raw());
  }
}
BENCHMARK(BM_FsfmFuse)->Args({8, 32})->Args({8, 16})->Unit(benchmark::kMicrosecond);

void BM_C3k2(benchmark::State& state) {
  const Shape s = bench_shape(state);
  const C3k2Config cfg{s.c, s.c / 2, state.range(2) != 0, ShiftConfig{1}};
  ParamStore<float> params;
  Rng rng(4);
  add_c3k2_params(params, "blk", cfg, rng);
  const Tensor32 x = random_input(s, 5);
  for (auto _ : state) {
    Tape<float> tape;
    const Bindings<float> p = params.bind(tape);
    Var<float> y = fsfm_c3k2_block(tape.leaf(x, true), p, "blk", cfg);
    tape.backward(y);
    benchmark::DoNotOptimize(y.value().raw());
  }
}
BENCHMARK(BM_C3k2)
    ->ArgNames({"C", "S", "fsfm"})
    ->Args({16, 16, 0})
    ->Args({16, 16, 1})
    ->Unit(benchmark::kMicrosecond);

void BM_Dbcasa(benchmark::State& state) {
  const Shape s = bench_shape(state);
  DbcasaConfig cfg;
  cfg.channels = s.c;
  ParamStore<float> params;
  Rng rng(6);
  add_dbcasa_params(params, "attn", cfg, rng);
  const Tensor32 x = random_input(s, 7);
  const ForwardContext<float> ctx{true, nullptr};
  for (auto _ : state) {
    Tape<float> tape;
    const Bindings<float> p = params.bind(tape);
    Var<float> y = dbcasa_forward(tape.leaf(x, true), p, "attn", cfg, ctx);
    tape.backward(y);
    benchmark::DoNotOptimize(y.value().raw());
  }
}
BENCHMARK(BM_Dbcasa)->Args({16, 8})->Args({16, 16})->Unit(benchmark::kMicrosecond);

void BM_SfgLoss(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(8);
  Tensor32 pred(Shape{1, 1, n, 4});
  std::vector<BoxXYXY> targets;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(0, 48), y = rng.uniform(0, 48), w = rng.uniform(4, 16), h = rng.uniform(4, 16);
    targets.push_back({x, y, x + w, y + h});
    const double dx = rng.uniform(-3, 3), dy = rng.uniform(-3, 3);
    pred[4 * i + 0] = static_cast<float>(x + dx);
    pred[4 * i + 1] = static_cast<float>(y + dy);
    pred[4 * i + 2] = static_cast<float>(x + dx + w * rng.uniform(0.7, 1.3));
    pred[4 * i + 3] = static_cast<float>(y + dy + h * rng.uniform(0.7, 1.3));
  }
  const RegressionLoss cfg{};
  for (auto _ : state) {
    Tape<float> tape;
    Var<float> loss = regression_loss(tape.leaf(pred, true), std::span<const BoxXYXY>(targets), cfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value().raw());
  }
}
BENCHMARK(BM_SfgLoss)->Arg(32)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_TrainEpoch(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.scene.train_count = 16;
  cfg.scene.val_count = 1;
  cfg.train.epochs = 1000;
  cfg.train.eval_every = 0;
  cfg.model.toggles = {state.range(0) != 0, state.range(0) != 0, state.range(0) != 0};
  Trainer trainer(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step_epoch().loss);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cfg.scene.train_count));
}
BENCHMARK(BM_TrainEpoch)->ArgNames({"all_on"})->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(5);

}  // namespace
}  // namespace mdet

BENCHMARK_MAIN();
