#include "mdet/profile.hpp"

#include <chrono>
#include <functional>
#include <numeric>

#include "mdet/error.hpp"
#include "mdet/ops.hpp"

namespace mdet {
namespace {

using Clock = std::chrono::steady_clock;
using Block = std::function<Var<float>(Var<float>, const Bindings<float>&)>;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

BlockTiming time_block(const std::string& name, const Tensor32& input, const ParamStore<float>& params,
                       const Block& block, std::size_t reps) {
  BlockTiming out{name, input.shape(), 0.0, 0.0};
  for (std::size_t r = 0; r < reps; ++r) {
    Tape<float> tape;
    const Bindings<float> p = params.bind(tape);
    Var<float> x = tape.leaf(input, true);
    auto t0 = Clock::now();
    Var<float> y = block(x, p);
    out.forward_ms += ms_since(t0);
    t0 = Clock::now();
    tape.backward(y);
    out.backward_ms += ms_since(t0);
  }
  out.forward_ms /= static_cast<double>(reps);
  out.backward_ms /= static_cast<double>(reps);
  return out;
}

Tensor32 run_block(const Tensor32& input, const ParamStore<float>& params, const Block& block) {
  Tape<float> tape;
  const Bindings<float> p = params.bind(tape);
  return block(tape.leaf(input), p).value();
}

std::string stage_name(std::size_t i, const char* part) { return "s" + std::to_string(i) + "." + part; }

}  // namespace

std::vector<BlockTiming> profile_blocks(const ExperimentConfig& cfg, std::size_t repetitions) {
  cfg.validate();
  if (repetitions == 0) throw ConfigError("repetitions must be positive", "repetitions");
  const ModelConfig& m = cfg.model;
  const ParamStore<float> params = build_model(m, cfg.seed);
  const ForwardContext<float> ctx{true, nullptr};

  SynthSceneSpec spec = cfg.scene;
  const std::size_t batch = std::min(cfg.train.batch_size, spec.train_count);
  const std::vector<Scene> scenes = generate_scenes(spec, 0, batch);
  std::vector<std::size_t> idx(batch);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Tensor32 images = stack_images(scenes, idx);
  std::vector<std::vector<GroundTruth>> truths;
  for (const Scene& s : scenes) truths.push_back(s.objects);
  const RegressionLoss regression = cfg.regression();

  std::vector<std::pair<std::string, Block>> blocks;
  blocks.emplace_back("stem", [&](Var<float> x, const Bindings<float>& p) {
    return conv_bn_relu(x, p, "stem", {1, 1, 1}, ctx);
  });
  const C3k2Config c3k2 = m.c3k2();
  for (std::size_t i = 0; i < m.stages; ++i) {
    const std::string down = stage_name(i, "down");
    const std::string block = stage_name(i, "c3k2");
    blocks.emplace_back(down, [&ctx, down](Var<float> x, const Bindings<float>& p) {
      return conv_bn_relu(x, p, down, {2, 1, 1}, ctx);
    });
    blocks.emplace_back(block, [&c3k2, block](Var<float> x, const Bindings<float>& p) {
      return fsfm_c3k2_block(x, p, block, c3k2);
    });
  }
  const DbcasaConfig attn = m.dbcasa();
  if (m.toggles.dbcasa) {
    blocks.emplace_back("attn", [&](Var<float> x, const Bindings<float>& p) {
      return add(x, dbcasa_forward(x, p, "attn", attn, ctx));
    });
  }
  blocks.emplace_back("head", [](Var<float> x, const Bindings<float>& p) {
    return conv_layer(x, p, "head", {}, true);
  });
  const auto loss = [&](Var<float> head) {
    return detection_loss(head, std::span<const std::vector<GroundTruth>>(truths), m, regression, cfg.train.gains)
        .total;
  };

  std::vector<BlockTiming> out;
  Tensor32 x = images;
  for (const auto& [name, block] : blocks) {
    out.push_back(time_block(name, x, params, block, repetitions));
    x = run_block(x, params, block);
  }
  out.push_back(time_block("loss", x, params, [&](Var<float> h, const Bindings<float>&) { return loss(h); },
                           repetitions));
  out.push_back(time_block("model", images, params,
                           [&](Var<float> in, const Bindings<float>& p) {
                             return loss(detector_forward(in, p, m, ctx));
                           },
                           repetitions));
  return out;
}

}  // namespace mdet
