#include "mdet/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "mdet/dbcasa.hpp"
#include "mdet/fsfm.hpp"
#include "mdet/grad_check.hpp"
#include "mdet/ops.hpp"
#include "mdet/sfg_loss.hpp"

namespace mdet {
namespace {

struct Case {
  ParamStore<double> params;
  ScalarFn f;
  std::string label;
};

using CaseFn = std::function<Case(Rng&, std::size_t)>;

struct OpSpec {
  std::string module;
  std::string op;
  CaseFn make;
};

Tensor64 random_values(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so relu kinks sit outside the difference stencil.
Tensor64 away_from_zero(Shape s, Rng& rng) {
  Tensor64 t(s);
  for (double& v : t.data()) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Case 0 uses the largest shape; the rest draw N in [1,2], H and W in [3,6].
Shape case_shape(Rng& rng, std::size_t k, std::size_t channels) {
  if (k == 0) return Shape{2, channels, 6, 6};
  return Shape{static_cast<std::size_t>(rng.uniform_int(1, 2)), channels,
               static_cast<std::size_t>(rng.uniform_int(3, 6)),
               static_cast<std::size_t>(rng.uniform_int(3, 6))};
}

std::size_t pick(Rng& rng, std::initializer_list<std::size_t> options) {
  const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(options.size()) - 1));
  return *(options.begin() + i);
}

// sum(r * y) for a fixed random r drawn now.
std::function<Var<double>(Var<double>)> projector(Rng& rng, Shape out_shape) {
  Tensor64 r = random_values(out_shape, rng);
  return [r](Var<double> y) { return sum(mul(y, y.tape()->constant(r))); };
}

Case unary_case(Rng& rng, Shape s, Tensor64 x, Shape out_shape,
                std::function<Var<double>(Var<double>)> op) {
  Case c;
  c.params.add("x", std::move(x));
  auto proj = projector(rng, out_shape);
  c.f = [op, proj](Tape<double>&, const Bindings<double>& p) { return proj(op(p["x"])); };
  c.label = "shape " + s.str();
  return c;
}

Case conv_case(Rng& rng, std::size_t k, std::size_t stride, bool depthwise) {
  const std::size_t cin = pick(rng, {2, 4, 8});
  Shape s = case_shape(rng, k, cin);
  if (k == 0) s.c = 8;
  const std::size_t groups = depthwise ? s.c : 1;
  const std::size_t cout = depthwise ? s.c : pick(rng, {1, 3, 8});
  const std::size_t ksize = 3;
  Conv2dOptions opt{stride, 1, groups};
  Case c;
  c.params.add("x", random_values(s, rng));
  c.params.add("w", random_values(Shape{cout, s.c / groups, ksize, ksize}, rng));
  c.params.add("b", random_values(Shape{1, cout, 1, 1}, rng));
  const Shape out{s.n, cout, (s.h + 2 - ksize) / stride + 1, (s.w + 2 - ksize) / stride + 1};
  auto proj = projector(rng, out);
  c.f = [proj, opt](Tape<double>&, const Bindings<double>& p) {
    return proj(conv2d(p["x"], p["w"], std::optional<Var<double>>(p["b"]), opt));
  };
  c.label = "shape " + s.str();
  return c;
}

Case batchnorm_case(Rng& rng, std::size_t k, bool training) {
  const Shape s = case_shape(rng, k, pick(rng, {2, 4, 8}));
  Case c;
  c.params.add("x", random_values(s, rng, -2.0, 2.0));
  c.params.add("gamma", random_values(Shape{1, s.c, 1, 1}, rng, 0.5, 1.5));
  c.params.add("beta", random_values(Shape{1, s.c, 1, 1}, rng));
  ChannelStats<double> running;
  for (std::size_t i = 0; i < s.c; ++i) {
    running.mean.push_back(rng.uniform(-0.5, 0.5));
    running.var.push_back(rng.uniform(0.5, 2.0));
  }
  auto proj = projector(rng, s);
  c.f = [proj, training, running](Tape<double>&, const Bindings<double>& p) {
    BatchNormArgs<double> args;
    args.training = training;
    if (!training) args.running = &running;
    return proj(batchnorm2d(p["x"], p["gamma"], p["beta"], args));
  };
  c.label = "shape " + s.str();
  return c;
}

Case binary_case(Rng& rng, std::size_t k, Shape small_kind, bool use_add) {
  const Shape s = case_shape(rng, k, pick(rng, {2, 4, 8}));
  Shape bs = s;
  if (small_kind.c == 1) bs.c = 1;
  if (small_kind.h == 1) bs.h = bs.w = 1;
  const bool small_first = rng.uniform() < 0.5;
  Case c;
  c.params.add("a", random_values(s, rng));
  c.params.add("b", random_values(bs, rng));
  auto proj = projector(rng, s);
  c.f = [proj, use_add, small_first](Tape<double>&, const Bindings<double>& p) {
    Var<double> a = p["a"];
    Var<double> b = p["b"];
    if (small_first) std::swap(a, b);
    return proj(use_add ? add(a, b) : mul(a, b));
  };
  c.label = "shape " + s.str() + " with " + bs.str();
  return c;
}

Case channel_regroup_case(Rng& rng, std::size_t k) {
  const Shape s = case_shape(rng, k, 8);
  Case c;
  c.params.add("x", random_values(s, rng));
  const std::size_t first = pick(rng, {1, 2, 3, 5});
  auto proj = projector(rng, s);
  c.f = [proj, first](Tape<double>&, const Bindings<double>& p) {
    const std::size_t counts[] = {first, 8 - first};
    auto parts = split_channels(p["x"], counts);
    std::swap(parts[0], parts[1]);
    return proj(concat_channels(std::span<const Var<double>>(parts)));
  };
  c.label = "shape " + s.str();
  return c;
}

Case bce_case(Rng& rng, std::size_t k) {
  const Shape s = case_shape(rng, k, pick(rng, {1, 4, 8}));
  Tensor64 targets(s);
  Tensor64 weights(s);
  for (double& v : targets.data()) v = rng.uniform() < 0.3 ? 1.0 : rng.uniform();
  for (double& v : weights.data()) v = rng.uniform(0.0, 2.0);
  const double norm = rng.uniform(1.0, 10.0);
  Case c;
  c.params.add("x", random_values(s, rng, -4.0, 4.0));
  c.f = [targets, weights, norm](Tape<double>&, const Bindings<double>& p) {
    return bce_with_logits(p["x"], targets, weights, norm);
  };
  c.label = "shape " + s.str();
  return c;
}

DbcasaConfig dbcasa_cfg(std::size_t channels) {
  DbcasaConfig cfg;
  cfg.channels = channels;
  return cfg;
}

Case dbcasa_case(Rng& rng, std::size_t k, const std::string& what, DbcasaConfig cfg) {
  const std::size_t channels = k == 0 ? 8 : pick(rng, {2, 4, 8});
  cfg.channels = channels;
  const Shape s = case_shape(rng, k, channels);
  Case c;
  add_dbcasa_params(c.params, "blk", cfg, rng);
  // Perturb the normalization affine away from its identity init.
  c.params.set("blk.bn.gamma", random_values(Shape{1, channels, 1, 1}, rng, 0.5, 1.5));
  c.params.set("blk.bn.beta", random_values(Shape{1, channels, 1, 1}, rng, -0.5, 0.5));
  c.params.add("x", random_values(s, rng));
  auto proj = projector(rng, s);
  c.f = [proj, what, cfg](Tape<double>&, const Bindings<double>& p) {
    const ForwardContext<double> ctx;
    if (what == "spatial_branch") return proj(spatial_branch(p["x"], p, "blk", cfg, ctx));
    if (what == "channel_branch") return proj(channel_branch(p["x"], p, "blk", cfg));
    return proj(dbcasa_forward(p["x"], p, "blk", cfg, ctx));
  };
  c.label = "shape " + s.str();
  return c;
}

Case fuse_case(Rng& rng, std::size_t k) {
  const Shape s = case_shape(rng, k, pick(rng, {4, 8}));
  ShiftConfig cfg;
  cfg.step = static_cast<std::size_t>(rng.uniform_int(1, 2));
  return unary_case(rng, s, random_values(s, rng), s,
                    [cfg](Var<double> x) { return fsfm_fuse(x, cfg); });
}

Case c3k2_case(Rng& rng, std::size_t k, bool use_fsfm) {
  const std::size_t channels = k == 0 ? 8 : pick(rng, {4, 8});
  const Shape s = case_shape(rng, k, channels);
  C3k2Config cfg;
  cfg.channels = channels;
  cfg.hidden = use_fsfm ? 4 : pick(rng, {2, 4});
  cfg.use_fsfm = use_fsfm;
  Case c;
  add_c3k2_params(c.params, "blk", cfg, rng);
  c.params.add("x", random_values(s, rng));
  auto proj = projector(rng, s);
  c.f = [proj, cfg](Tape<double>&, const Bindings<double>& p) {
    return proj(fsfm_c3k2_block(p["x"], p, "blk", cfg));
  };
  c.label = "shape " + s.str();
  return c;
}

std::vector<OpSpec> all_ops() {
  std::vector<OpSpec> ops;
  auto add_op = [&ops](std::string module, std::string op, CaseFn fn) {
    ops.push_back(OpSpec{std::move(module), std::move(op), std::move(fn)});
  };
  add_op("tensor", "conv2d", [](Rng& r, std::size_t k) { return conv_case(r, k, 1, false); });
  add_op("tensor", "conv2d_stride2", [](Rng& r, std::size_t k) { return conv_case(r, k, 2, false); });
  add_op("tensor", "conv2d_depthwise", [](Rng& r, std::size_t k) { return conv_case(r, k, 1, true); });
  add_op("tensor", "sigmoid", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, pick(r, {1, 4, 8}));
    return unary_case(r, s, random_values(s, r, -4.0, 4.0), s, [](Var<double> x) { return sigmoid(x); });
  });
  add_op("tensor", "relu", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, pick(r, {1, 4, 8}));
    return unary_case(r, s, away_from_zero(s, r), s, [](Var<double> x) { return relu(x); });
  });
  add_op("tensor", "batchnorm2d_train", [](Rng& r, std::size_t k) { return batchnorm_case(r, k, true); });
  add_op("tensor", "batchnorm2d_infer", [](Rng& r, std::size_t k) { return batchnorm_case(r, k, false); });
  add_op("tensor", "global_avg_pool", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, pick(r, {1, 4, 8}));
    return unary_case(r, s, random_values(s, r), Shape{s.n, s.c, 1, 1},
                      [](Var<double> x) { return global_avg_pool(x); });
  });
  add_op("tensor", "mul", [](Rng& r, std::size_t k) { return binary_case(r, k, Shape{1, 2, 2, 2}, false); });
  add_op("tensor", "mul_spatial_map", [](Rng& r, std::size_t k) { return binary_case(r, k, Shape{1, 1, 2, 2}, false); });
  add_op("tensor", "mul_channel_map", [](Rng& r, std::size_t k) { return binary_case(r, k, Shape{1, 2, 1, 1}, false); });
  add_op("tensor", "add", [](Rng& r, std::size_t k) { return binary_case(r, k, Shape{1, 2, 2, 2}, true); });
  add_op("tensor", "add_channel_map", [](Rng& r, std::size_t k) { return binary_case(r, k, Shape{1, 2, 1, 1}, true); });
  add_op("tensor", "scale", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, pick(r, {1, 4, 8}));
    const double f = r.uniform(-2.0, 2.0);
    return unary_case(r, s, random_values(s, r), s, [f](Var<double> x) { return scale(x, f); });
  });
  add_op("tensor", "split_concat", [](Rng& r, std::size_t k) { return channel_regroup_case(r, k); });
  add_op("tensor", "slice_channels", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, 8);
    const std::size_t start = static_cast<std::size_t>(r.uniform_int(0, 6));
    const std::size_t count = static_cast<std::size_t>(r.uniform_int(1, static_cast<std::int64_t>(8 - start)));
    return unary_case(r, s, random_values(s, r), Shape{s.n, count, s.h, s.w},
                      [start, count](Var<double> x) { return slice_channels(x, start, count); });
  });
  add_op("tensor", "shift2d", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, pick(r, {1, 4, 8}));
    const ShiftAxis axis = r.uniform() < 0.5 ? ShiftAxis::width : ShiftAxis::height;
    const int sign = r.uniform() < 0.5 ? -1 : 1;
    const std::size_t step = static_cast<std::size_t>(r.uniform_int(1, 2));
    return unary_case(r, s, random_values(s, r), s,
                      [axis, sign, step](Var<double> x) { return shift2d(x, axis, sign, step); });
  });
  add_op("tensor", "sum", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, pick(r, {1, 4, 8}));
    return unary_case(r, s, random_values(s, r), Shape{1, 1, 1, 1}, [](Var<double> x) { return sum(x); });
  });
  add_op("tensor", "mean", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, pick(r, {1, 4, 8}));
    return unary_case(r, s, random_values(s, r), Shape{1, 1, 1, 1}, [](Var<double> x) { return mean(x); });
  });
  add_op("tensor", "bce_with_logits", [](Rng& r, std::size_t k) { return bce_case(r, k); });

  add_op("dbcasa", "spatial_branch", [](Rng& r, std::size_t k) {
    return dbcasa_case(r, k, "spatial_branch", dbcasa_cfg(8));
  });
  add_op("dbcasa", "channel_branch", [](Rng& r, std::size_t k) {
    return dbcasa_case(r, k, "channel_branch", dbcasa_cfg(8));
  });
  add_op("dbcasa", "dbcasa_forward", [](Rng& r, std::size_t k) {
    return dbcasa_case(r, k, "dbcasa_forward", dbcasa_cfg(8));
  });
  add_op("dbcasa", "dbcasa_forward_swapped", [](Rng& r, std::size_t k) {
    DbcasaConfig cfg = dbcasa_cfg(8);
    cfg.pairing = DbcasaConfig::Pairing::spatial_key;
    return dbcasa_case(r, k, "dbcasa_forward", cfg);
  });
  add_op("dbcasa", "dbcasa_forward_input_maps", [](Rng& r, std::size_t k) {
    DbcasaConfig cfg = dbcasa_cfg(8);
    cfg.map_source = DbcasaConfig::MapSource::input;
    return dbcasa_case(r, k, "dbcasa_forward", cfg);
  });

  add_op("fsfm", "split4_concat", [](Rng& r, std::size_t k) {
    const Shape s = case_shape(r, k, pick(r, {4, 8}));
    return unary_case(r, s, random_values(s, r), s, [](Var<double> x) {
      auto g = split4(x);
      const Var<double> parts[] = {g[2], g[0], g[3], g[1]};
      return concat_channels(std::span<const Var<double>>(parts));
    });
  });
  add_op("fsfm", "fsfm_fuse", [](Rng& r, std::size_t k) { return fuse_case(r, k); });
  add_op("fsfm", "fsfm_c3k2_block", [](Rng& r, std::size_t k) { return c3k2_case(r, k, true); });
  add_op("fsfm", "c3k2_block_plain", [](Rng& r, std::size_t k) { return c3k2_case(r, k, false); });
  return ops;
}

// Regression losses hold mu and the slide weight constant within a batch, so the
// finite-difference oracle freezes the weights observed at the base point.
struct LossCase {
  std::vector<BoxXYXY> preds;
  std::vector<BoxXYXY> targets;
};

LossCase random_pairs(Rng& rng) {
  LossCase lc;
  const auto count = static_cast<std::size_t>(rng.uniform_int(1, 8));
  for (std::size_t i = 0; i < count; ++i) {
    const double w = rng.uniform(4.0, 16.0);
    const double h = rng.uniform(4.0, 16.0);
    const double x1 = rng.uniform(0.0, 64.0 - w);
    const double y1 = rng.uniform(0.0, 64.0 - h);
    lc.targets.push_back(BoxXYXY{x1, y1, x1 + w, y1 + h});
    const double pw = w * std::exp(rng.uniform(-0.5, 0.5));
    const double ph = h * std::exp(rng.uniform(-0.5, 0.5));
    const double px = x1 + rng.uniform(-0.5, 0.5) * w;
    const double py = y1 + rng.uniform(-0.5, 0.5) * h;
    lc.preds.push_back(BoxXYXY{px, py, px + pw, py + ph});
  }
  return lc;
}

bool near_breakpoint(const LossBreakdown& b, const RegressionLoss& cfg) {
  constexpr double margin = 1e-4;
  if (cfg.kind == RegressionLoss::Kind::giou) return false;
  for (const auto& p : b.pairs) {
    if (std::abs(p.iou - (b.mu - cfg.slide.delta)) < margin) return true;
    if (std::abs(p.iou - b.mu) < margin) return true;
    if (std::abs(p.sg - cfg.focaler.d) < margin) return true;
    if (std::abs(p.sg - cfg.focaler.u) < margin) return true;
  }
  return false;
}

double frozen_loss(const std::vector<BoxXYXY>& preds, const std::vector<BoxXYXY>& targets,
                   const std::vector<double>& weights, const RegressionLoss& cfg) {
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double base = 1.0 - giou(preds[i], targets[i]);
    acc += cfg.kind == RegressionLoss::Kind::giou ? base
                                                  : focaler_truncate(weights[i] * base, cfg.focaler);
  }
  return acc / static_cast<double>(preds.size());
}

double& coord(BoxXYXY& b, std::size_t k) {
  switch (k) {
    case 0: return b.x1;
    case 1: return b.y1;
    case 2: return b.x2;
    default: return b.y2;
  }
}

GradSuiteEntry run_loss_op(const std::string& op, const RegressionLoss& cfg, std::uint64_t seed,
                           std::size_t op_index, std::size_t seeds) {
  GradSuiteEntry entry{"loss", op, 0.0, 0, {}};
  constexpr double eps = 1e-5;
  for (std::size_t k = 0; k < seeds; ++k) {
    Rng rng(mix_seed(seed, op_index * 1000 + k));
    LossCase lc;
    LossBreakdown bd;
    for (;;) {
      lc = random_pairs(rng);
      std::vector<BoxPair> pairs;
      for (std::size_t i = 0; i < lc.preds.size(); ++i) pairs.push_back({lc.preds[i], lc.targets[i]});
      bd = sfg_loss(pairs, cfg.slide, cfg.focaler);
      if (!near_breakpoint(bd, cfg)) break;
    }
    Tensor64 t(Shape{1, 1, lc.preds.size(), 4});
    for (std::size_t i = 0; i < lc.preds.size(); ++i) {
      for (std::size_t c = 0; c < 4; ++c) t[4 * i + c] = coord(lc.preds[i], c);
    }
    Tape<double> tape;
    tape.set_check_finite(true);
    const Var<double> boxes = tape.leaf(t, true, "boxes");
    const Var<double> loss = regression_loss(boxes, lc.targets, cfg, &bd);
    tape.backward(loss);
    std::vector<double> weights;
    for (const auto& p : bd.pairs) weights.push_back(p.weight);
    const Tensor64* analytic = boxes.grad();
    for (std::size_t i = 0; i < lc.preds.size(); ++i) {
      for (std::size_t c = 0; c < 4; ++c) {
        std::vector<BoxXYXY> probe = lc.preds;
        const double saved = coord(probe[i], c);
        coord(probe[i], c) = saved + eps;
        const double up = frozen_loss(probe, lc.targets, weights, cfg);
        coord(probe[i], c) = saved - eps;
        const double down = frozen_loss(probe, lc.targets, weights, cfg);
        const double numeric = (up - down) / (2.0 * eps);
        const double rel = std::abs((*analytic)[4 * i + c] - numeric) / std::max(1.0, std::abs(numeric));
        if (entry.worst_case.empty() || rel > entry.max_rel_error) {
          entry.max_rel_error = rel;
          entry.worst_case = "case " + std::to_string(k) + " pair " + std::to_string(i) +
                             " coord " + std::to_string(c);
        }
      }
    }
    ++entry.cases;
  }
  return entry;
}

// Smallest |input| over every relu on the base-point tape of `c`.
double relu_margin(const Case& c) {
  Tape<double> tape;
  Bindings<double> b;
  for (const auto& e : c.params.entries()) b.insert(e.name, tape.constant(e.value));
  c.f(tape, b);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t id = 0; id < tape.size(); ++id) {
    if (tape.node_name(id) != "relu") continue;
    for (double v : tape.node_value(tape.node_inputs(id)[0]).data()) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

// Cases with a relu input this close to its kink are redrawn, like loss breakpoints.
constexpr double kKinkMargin = 1e-4;

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(std::string_view module, std::uint64_t seed,
                                           std::size_t seeds) {
  if (module != "all" && module != "tensor" && module != "dbcasa" && module != "fsfm" &&
      module != "loss") {
    throw UsageError("unknown gradcheck module '" + std::string(module) + "'");
  }
  std::vector<GradSuiteEntry> out;
  const auto ops = all_ops();
  for (std::size_t idx = 0; idx < ops.size(); ++idx) {
    const OpSpec& spec = ops[idx];
    if (module != "all" && module != spec.module) continue;
    GradSuiteEntry entry{spec.module, spec.op, 0.0, 0, {}};
    for (std::size_t k = 0; k < seeds; ++k) {
      Rng rng(mix_seed(seed, idx * 1000 + k));
      Case c = spec.make(rng, k);
      while (relu_margin(c) < kKinkMargin) c = spec.make(rng, k);
      const GradCheckResult r = grad_check(c.f, c.params);
      if (entry.worst_case.empty() || r.max_rel_error > entry.max_rel_error) {
        entry.max_rel_error = r.max_rel_error;
        entry.worst_case = "case " + std::to_string(k) + " " + c.label + " param " +
                           r.worst_param + "[" + std::to_string(r.worst_index) + "]";
      }
      ++entry.cases;
    }
    out.push_back(std::move(entry));
  }
  if (module == "all" || module == "loss") {
    const std::size_t base = ops.size();
    RegressionLoss printed;
    RegressionLoss v2;
    v2.slide.variant = SlideConfig::Variant::slide_v2;
    RegressionLoss fixed;
    fixed.slide.mu_policy = SlideConfig::MuPolicy::fixed;
    RegressionLoss plain;
    plain.kind = RegressionLoss::Kind::giou;
    out.push_back(run_loss_op("sfg_loss", printed, seed, base, seeds));
    out.push_back(run_loss_op("sfg_loss_slide_v2", v2, seed, base + 1, seeds));
    out.push_back(run_loss_op("sfg_loss_fixed_mu", fixed, seed, base + 2, seeds));
    out.push_back(run_loss_op("giou_loss", plain, seed, base + 3, seeds));
  }
  return out;
}

bool suite_passes(const std::vector<GradSuiteEntry>& entries, double tol) {
  return std::all_of(entries.begin(), entries.end(),
                     [tol](const GradSuiteEntry& e) { return e.max_rel_error < tol; });
}

}  // namespace mdet
