// Runs the eight acceptance criteria and prints one PASS/FAIL line per criterion.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "mdet/checkpoint.hpp"
#include "mdet/dbcasa.hpp"
#include "mdet/error.hpp"
#include "mdet/fsfm.hpp"
#include "mdet/grad_suite.hpp"
#include "mdet/report_io.hpp"
#include "mdet/run_config.hpp"
#include "mdet/sfg_loss.hpp"
#include "mdet/tensor_io.hpp"
#include "mdet/train.hpp"
#include "test_util.hpp"

namespace mdet {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using json = nlohmann::json;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string strf(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string strf(const char* format, ...) {
  char buf[1024];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

// Collects named checks; a criterion passes when all of its checks hold.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& line) { notes_.push_back(line); }
  bool ok() const { return failures_.empty(); }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

void progress(const std::string& line) { std::cout << "    " << line << std::endl; }

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), a.numel() * sizeof(T)) == 0;
}

bool same_store(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    if (a.entries()[i].name != b.entries()[i].name) return false;
    if (!bit_equal(a.entries()[i].value, b.entries()[i].value)) return false;
  }
  return true;
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "mdet");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream o;
  std::ostringstream e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (code != 0) progress("mdet exited " + std::to_string(code) + ": " + e.str());
  return code;
}

// Relative path -> bytes for every file under `root`, skipping run configurations
// (they record the output directory, which differs between reruns by construction).
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "config.json") continue;
    out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

// ---- 1: gradient fidelity --------------------------------------------------------------

void gradient_fidelity(Checks& c) {
  constexpr std::size_t kSeeds = 10;
  const auto t0 = Clock::now();
  const std::vector<GradSuiteEntry> entries = run_grad_suite("all", 0, kSeeds);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_op;
  std::set<std::string> ops;
  for (const GradSuiteEntry& e : entries) {
    ops.insert(e.op);
    c.expect(e.cases >= kSeeds, e.op + " ran " + std::to_string(e.cases) + " cases");
    c.expect(e.max_rel_error < 1e-6, strf("%s max relative error %.3e (%s)", e.op.c_str(), e.max_rel_error,
                                          e.worst_case.c_str()));
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_op = e.op;
    }
  }
  for (const char* required : {"conv2d", "sigmoid", "relu", "batchnorm2d_train", "global_avg_pool", "mul", "add",
                               "shift2d", "bce_with_logits", "spatial_branch", "channel_branch", "dbcasa_forward",
                               "fsfm_fuse", "fsfm_c3k2_block", "sfg_loss"}) {
    c.expect(ops.count(required) == 1, std::string("suite lacks ") + required);
  }
  c.expect(elapsed < 120.0, strf("suite took %.1f s", elapsed));
  c.note(strf("%zu ops x %zu seeds, worst %.3e (%s), %.1f s", entries.size(), kSeeds, worst, worst_op.c_str(),
              elapsed));
}

// ---- 2: parameter-free shift -----------------------------------------------------------

void parameter_free_shift(Checks& c) {
  Rng rng(21);
  for (const std::size_t step : {1u, 2u}) {
    Tape<float> tape;
    Var<float> x = tape.leaf(test::random_tensor<float>(Shape{2, 8, 6, 6}, rng), true);
    const std::size_t before = tape.size();
    fsfm_fuse(x, ShiftConfig{step});
    std::size_t leaves = 0;
    for (std::size_t id = before; id < tape.size(); ++id) leaves += tape.node_name(id) == "leaf";
    c.expect(leaves == 0, strf("fsfm_fuse step %zu created %zu leaves", step, leaves));
  }

  for (const bool fsfm : {false, true}) {
    ParamStore<float> store;
    Rng r(22);
    add_c3k2_params(store, "blk", C3k2Config{16, 8, fsfm, ShiftConfig{1}}, r);
    c.expect(store.learnable_count() == param_count_c3k2(C3k2Config{16, 8, fsfm, ShiftConfig{1}}),
             "C3k2 tally differs from its count");
    const std::size_t convs = (16 * 16 + 16) + (8 * 8 * 9 + 8) + (8 * 16 + 16);
    c.expect(store.learnable_count() == convs, strf("C3k2 (fsfm %d) has %zu parameters, its three convolutions %zu",
                                                    fsfm, store.learnable_count(), convs));
  }

  std::size_t pairs = 0;
  for (const bool dbcasa : {false, true}) {
    for (const bool sfg : {false, true}) {
      ModelConfig off;
      off.toggles = {dbcasa, false, sfg};
      ModelConfig on = off;
      on.toggles.fsfm = true;
      const ParamStore<float> a = build_model(off, 0);
      const ParamStore<float> b = build_model(on, 0);
      c.expect(a.learnable_count() == b.learnable_count(),
               strf("fsfm toggle changes the count: %zu vs %zu", a.learnable_count(), b.learnable_count()));
      bool same_names = a.entries().size() == b.entries().size();
      for (std::size_t i = 0; same_names && i < a.entries().size(); ++i) {
        same_names = a.entries()[i].name == b.entries()[i].name;
      }
      c.expect(same_names, "fsfm toggle changes the parameter names");
      ++pairs;
    }
  }
  c.note(strf("fuse tape adds 0 leaves; %zu model pairs differing only in fsfm have equal counts", pairs));
}

// ---- 3: DB-CASA reduction --------------------------------------------------------------

void dbcasa_reduction(Checks& c) {
  std::size_t checked = 0;
  Rng rng(31);
  for (const std::size_t channels : {1u, 8u, 16u}) {
    DbcasaConfig cfg;
    cfg.channels = channels;
    ParamStore<float> ps;
    Rng init(32);
    add_dbcasa_params(ps, "att", cfg, init);
    for (auto& e : ps.entries()) {
      if (e.learnable && e.name != "att.bn.gamma") e.value.fill(0.0f);
    }
    for (const char* name : {"att.wq.w", "att.wk.w", "att.wv.w", "att.out.w"}) {
      Tensor32& w = ps.get_mut(name);
      for (std::size_t i = 0; i < channels; ++i) w.at(i, i, 0, 0) = 1.0f;
    }
    for (int trial = 0; trial < 10; ++trial) {
      const Shape s{1 + static_cast<std::size_t>(trial % 2), channels, 3 + static_cast<std::size_t>(trial % 5),
                    4 + static_cast<std::size_t>(trial % 4)};
      const Tensor32 x = test::random_tensor<float>(s, rng, -4.0, 4.0);
      Tape<float> tape;
      const Bindings<float> p = ps.bind(tape);
      const Tensor32& y = dbcasa_forward(tape.constant(x), p, "att", cfg, ForwardContext<float>{}).value();
      std::size_t mismatched = 0;
      for (std::size_t i = 0; i < x.numel(); ++i) mismatched += y[i] != x[i] * x[i];
      c.expect(mismatched == 0, strf("C=%zu shape %s: %zu elements differ from x*x", channels, s.str().c_str(), mismatched));
      ++checked;
    }
  }
  c.note(strf("%zu random inputs, output == x*x bit for bit", checked));
}

// ---- 4: shift algebra ------------------------------------------------------------------

// Values on a 2^-20 lattice in [-1, 1]: sums of a few thousand of them are exact in double.
Tensor32 lattice_tensor(Shape s, Rng& rng) {
  Tensor32 t(s);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform_int(-(1 << 20), 1 << 20)) * 0x1p-20f;
  return t;
}

double l1(const Tensor32& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += std::abs(static_cast<double>(v));
  return acc;
}

void shift_algebra(Checks& c) {
  Rng rng(41);
  std::size_t lost_mass = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s{static_cast<std::size_t>(rng.uniform_int(1, 2)), 4 * static_cast<std::size_t>(rng.uniform_int(1, 4)),
                  static_cast<std::size_t>(rng.uniform_int(3, 8)), static_cast<std::size_t>(rng.uniform_int(3, 8))};
    const std::size_t step = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(std::min(s.h, s.w) - 1)));
    const ShiftConfig cfg{step};
    const Tensor32 a = lattice_tensor(s, rng);
    const Tensor32 b = lattice_tensor(s, rng);
    const auto alpha = static_cast<float>(rng.uniform_int(-8, 8)) * 0.25f;
    const auto beta = static_cast<float>(rng.uniform_int(-8, 8)) * 0.25f;
    Tensor32 mix(s);
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = alpha * a[i] + beta * b[i];

    Tape<float> tape;
    const Tensor32& fm = fsfm_fuse(tape.constant(mix), cfg).value();
    const Tensor32& fa = fsfm_fuse(tape.constant(a), cfg).value();
    const Tensor32& fb = fsfm_fuse(tape.constant(b), cfg).value();
    std::size_t nonlinear = 0;
    for (std::size_t i = 0; i < mix.numel(); ++i) nonlinear += fm[i] != alpha * fa[i] + beta * fb[i];
    c.expect(nonlinear == 0, strf("trial %d: linearity fails at %zu elements", trial, nonlinear));

    for (const ShiftAxis axis : {ShiftAxis::width, ShiftAxis::height}) {
      const Tensor32& round = shift2d(shift2d(tape.constant(a), axis, +1, step), axis, -1, step).value();
      const std::size_t extent = axis == ShiftAxis::width ? s.w : s.h;
      std::size_t wrong = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t ch = 0; ch < s.c; ++ch) {
          for (std::size_t r = 0; r < s.h; ++r) {
            for (std::size_t col = 0; col < s.w; ++col) {
              const std::size_t pos = axis == ShiftAxis::width ? col : r;
              if (pos >= step && pos + step < extent) wrong += round.at(n, ch, r, col) != a.at(n, ch, r, col);
            }
          }
        }
      }
      c.expect(wrong == 0, strf("trial %d: shift+ then shift- changes %zu interior elements", trial, wrong));
    }

    const double before = l1(a);
    const double after = l1(fa);
    c.expect(after <= before, strf("trial %d: L1 mass grows from %.17g to %.17g", trial, before, after));
    lost_mass += after < before;
  }
  c.note(strf("100 random tensors; border loss observed in %zu", lost_mass));
}

// ---- 5: loss tables --------------------------------------------------------------------

std::pair<int, int> raster_span(double lo, double hi, int grid, double cell) {
  const int first = static_cast<int>(std::ceil(lo / cell - 0.5));
  const int last = static_cast<int>(std::floor(hi / cell - 0.5 - 1e-12));
  return {std::max(first, 0), std::min(last, grid - 1)};
}

// Pixel-centre IoU of two boxes on a grid x grid lattice over the 64 px field.
double raster_iou(const BoxXYXY& a, const BoxXYXY& b) {
  constexpr int grid = 1024;
  constexpr double cell = 64.0 / grid;
  const auto ax = raster_span(a.x1, a.x2, grid, cell);
  const auto ay = raster_span(a.y1, a.y2, grid, cell);
  const auto bx = raster_span(b.x1, b.x2, grid, cell);
  const auto by = raster_span(b.y1, b.y2, grid, cell);
  auto len = [](std::pair<int, int> s) { return std::max(0, s.second - s.first + 1); };
  const double area_a = static_cast<double>(len(ax)) * len(ay);
  const double area_b = static_cast<double>(len(bx)) * len(by);
  std::size_t both = 0;
  for (int r = 0; r < grid; ++r) {
    if (r < ay.first || r > ay.second || r < by.first || r > by.second) continue;
    for (int col = 0; col < grid; ++col) {
      both += col >= ax.first && col <= ax.second && col >= bx.first && col <= bx.second;
    }
  }
  return static_cast<double>(both) / (area_a + area_b - static_cast<double>(both));
}

BoxXYXY random_box(Rng& rng) {
  const double w = rng.uniform(4.0, 30.0);
  const double h = rng.uniform(4.0, 30.0);
  const double x = rng.uniform(0.0, 64.0 - w);
  const double y = rng.uniform(0.0, 64.0 - h);
  return {x, y, x + w, y + h};
}

void loss_tables(Checks& c) {
  SlideConfig slide;
  slide.mu_policy = SlideConfig::MuPolicy::fixed;
  slide.fixed_mu = 0.5;
  const struct {
    double x, expect;
  } slide_rows[] = {{0.3, 1.0}, {0.45, std::exp(-0.45)}, {0.6, std::exp(-0.6)}};
  for (const auto& row : slide_rows) {
    const double got = slide_weight(row.x, 0.5, slide);
    c.expect(std::abs(got - row.expect) <= 1e-12, strf("slide_weight(%.2f, 0.5) = %.17g", row.x, got));
  }
  c.expect(std::abs(slide_weight(0.45, 0.5, slide) - 0.6376) < 5e-5, "slide_weight(0.45) is not 0.6376");
  c.expect(std::abs(slide_weight(0.6, 0.5, slide) - 0.5488) < 5e-5, "slide_weight(0.6) is not 0.5488");

  const FocalerConfig focaler{0.0, 0.95};
  const struct {
    double sg, expect;
  } focaler_rows[] = {{0.0, 0.0}, {0.475, 0.5}, {1.2, 1.0}};
  for (const auto& row : focaler_rows) {
    const double got = focaler_truncate(row.sg, focaler);
    c.expect(std::abs(got - row.expect) <= 1e-12, strf("focaler_truncate(%.3f) = %.17g", row.sg, got));
  }

  const double g = giou(BoxXYXY{0, 0, 2, 2}, BoxXYXY{1, 1, 3, 3});
  c.expect(std::abs(g + 5.0 / 63.0) <= 1e-12, strf("giou of the hand case = %.17g", g));

  Rng rng(51);
  double worst = 0.0;
  for (int pair = 0; pair < 1000; ++pair) {
    const BoxXYXY a = random_box(rng);
    BoxXYXY b = random_box(rng);
    if (pair % 2 == 0) {
      const double dx = std::clamp(rng.uniform(-0.5, 0.5) * a.width(), -a.x1, 64.0 - a.x2);
      const double dy = std::clamp(rng.uniform(-0.5, 0.5) * a.height(), -a.y1, 64.0 - a.y2);
      b = BoxXYXY{a.x1 + dx, a.y1 + dy, a.x2 + dx, a.y2 + dy};
    }
    worst = std::max(worst, std::abs(raster_iou(a, b) - iou(a, b)));
  }
  c.expect(worst < 2e-2, strf("IoU differs from the raster oracle by %.4f", worst));
  c.note(strf("slide 3/3, focaler 3/3, giou -5/63; IoU vs 1024^2 raster worst %.4f over 1000 pairs", worst));
}

// ---- 6: convergence --------------------------------------------------------------------

struct TimedRun {
  TrainState state;
  double seconds;
};

TimedRun train_timed(const ExperimentConfig& cfg, bool verbose) {
  const auto t0 = Clock::now();
  Trainer trainer(cfg);
  trainer.run([&](const Trainer& t) {
    const EpochRecord& r = t.state().history.back();
    if (verbose && r.metrics) {
      progress(strf("epoch %3zu  loss %.4f  mAP50 %.4f  P %.4f  R %.4f  (%.0f s)", r.epoch, r.loss, r.metrics->ap50,
                    r.metrics->precision, r.metrics->recall, seconds_since(t0)));
    }
  });
  return {trainer.state(), seconds_since(t0)};
}

void convergence(Checks& c) {
  const ExperimentConfig cfg;  // defaults: all toggles on, lr 0.01, momentum 0.937, 200 epochs, seed 0
  c.expect(cfg.train.lr == 0.01 && cfg.train.momentum == 0.937, "optimizer defaults changed");
  c.expect(cfg.model.toggles == (ModuleToggles{true, true, true}), "default model is not all-on");
  c.expect(cfg.train.epochs == 200 && cfg.scene.val_count == 50, "budget or held-out set changed");

  const TimedRun first = train_timed(cfg, true);
  const MetricsReport& m = *first.state.history.back().metrics;
  c.expect(m.ap50 >= 0.80, strf("final mAP50 %.4f < 0.80", m.ap50));
  c.expect(first.seconds < 900.0, strf("training took %.0f s", first.seconds));

  progress("rerunning with the same seed");
  const TimedRun second = train_timed(cfg, false);
  c.expect(second.state.history == first.state.history, "rerun history differs");
  c.expect(same_store(second.state.params, first.state.params), "rerun weights differ");
  c.expect(second.seconds < 900.0, strf("rerun took %.0f s", second.seconds));
  c.note(strf("mAP50 %.4f  P %.4f  R %.4f  F1 %.4f at epoch 200; %.0f s and %.0f s; rerun bit-identical", m.ap50,
              m.precision, m.recall, m.f1, first.seconds, second.seconds));
}

// ---- 7: ablation structure and direction -----------------------------------------------

std::size_t dbcasa_closed_form(std::size_t c, std::size_t k) {
  return c * k * k + 2 * c + (c + 1) + (c * c + c) + 3 * c * c + (c * c + c);
}

void ablation(Checks& c, const fs::path& work, std::size_t structure_epochs, std::size_t direction_seeds) {
  // Structure on a shortened budget: row layout, baseline identity and parameter deltas do
  // not depend on the number of epochs.
  RunConfig rc;
  rc.experiment.train.epochs = structure_epochs;
  rc.experiment.train.eval_every = 0;
  write_file(work / "ablate.json", canonical_json(rc));
  progress(strf("ablate with %zu epochs per row", structure_epochs));
  std::string table;
  c.expect(run_cli({"ablate", "--config", (work / "ablate.json").string(), "--out", (work / "ablate").string()}, &table) ==
               0,
           "mdet ablate failed");
  std::cout << table;
  const json rows = json::parse(read_file(work / "ablate/ablation.json"));
  c.expect(rows.size() == 8, strf("ablate emitted %zu rows", rows.size()));
  const std::string csv = read_file(work / "ablate/ablation.csv");
  c.expect(std::count(csv.begin(), csv.end(), '\n') == 9, "ablation.csv does not hold header + 8 rows");

  std::set<std::string> combos;
  std::size_t base_params = 0;
  json baseline_row;
  for (const json& row : rows) {
    const json& t = row["toggles"];
    combos.insert(strf("%d%d%d", t["dbcasa"].get<bool>(), t["fsfm"].get<bool>(), t["sfg"].get<bool>()));
    if (!t["dbcasa"].get<bool>() && !t["fsfm"].get<bool>() && !t["sfg"].get<bool>()) {
      baseline_row = row;
      base_params = row["metrics"]["params"].get<std::size_t>();
    }
  }
  c.expect(combos.size() == 8, "rows do not cover all 8 toggle combinations");
  const std::size_t width = rc.experiment.model.width;
  const std::size_t k = rc.experiment.model.dw_kernel;
  for (const json& row : rows) {
    const std::size_t params = row["metrics"]["params"].get<std::size_t>();
    const std::size_t expect = base_params + (row["toggles"]["dbcasa"].get<bool>() ? dbcasa_closed_form(width, k) : 0);
    c.expect(params == expect, strf("%s has %zu parameters, closed form %zu", row["config"].get<std::string>().c_str(),
                                    params, expect));
  }

  RunConfig base = rc;
  base.experiment.model.toggles = {false, false, false};
  write_file(work / "baseline.json", canonical_json(base));
  c.expect(run_cli({"train", "--config", (work / "baseline.json").string(), "--out", (work / "baseline").string(),
                    "--quiet"}) == 0,
           "standalone baseline run failed");
  const json standalone = json::parse(read_file(work / "baseline/metrics.json"));
  c.expect(!baseline_row.is_null() && standalone["final"] == baseline_row["metrics"],
           "all-off row differs from the standalone baseline");
  const double standalone_loss = standalone["series"].back()["loss"].get<double>();
  c.expect(!baseline_row.is_null() && standalone_loss == baseline_row["final_loss"].get<double>(),
           "all-off final loss differs from the standalone baseline");
  c.note(strf("8 rows, deltas 0 or %zu (DB-CASA closed form), baseline bit-identical", dbcasa_closed_form(width, k)));

  // Direction on the blur + small-object suite at the full budget.
  double sum_off = 0.0;
  double sum_on = 0.0;
  std::string per_seed;
  for (std::size_t seed = 0; seed < direction_seeds; ++seed) {
    double ap[2] = {0.0, 0.0};
    for (const bool on : {false, true}) {
      ExperimentConfig cfg = blur_small_object_suite(seed);
      cfg.train.eval_every = 0;
      cfg.model.toggles = {on, on, on};
      const TimedRun run = train_timed(cfg, false);
      ap[on] = run.state.history.back().metrics->ap50;
      progress(strf("suite seed %zu %-7s mAP50 %.4f (%.0f s)", seed, on ? "all-on" : "all-off", ap[on], run.seconds));
    }
    sum_off += ap[0];
    sum_on += ap[1];
    per_seed += strf(" %.3f/%.3f", ap[0], ap[1]);
  }
  const double n = static_cast<double>(direction_seeds);
  c.expect(direction_seeds >= 5, "direction needs at least 5 seeds");
  c.expect(sum_on / n >= sum_off / n, strf("mean mAP50 all-on %.4f < all-off %.4f", sum_on / n, sum_off / n));
  c.note(strf("blur+small-object suite, %zu seeds: mean mAP50 all-off %.4f, all-on %.4f (off/on per seed:%s)",
              direction_seeds, sum_off / n, sum_on / n, per_seed.c_str()));
}

// ---- 8: determinism and robustness -----------------------------------------------------

bool all_finite(const EpochRecord& r) {
  for (double v : {r.lr, r.loss, r.box, r.obj, r.cls, r.mu}) {
    if (!std::isfinite(v)) return false;
  }
  if (r.metrics) {
    for (double v : {r.metrics->precision, r.metrics->recall, r.metrics->f1, r.metrics->ap50}) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ExperimentConfig random_experiment(Rng& rng, std::uint64_t seed) {
  ExperimentConfig x;
  x.seed = seed;
  SynthSceneSpec& s = x.scene;
  s.seed = seed;
  s.image_size = rng.uniform() < 0.5 ? 32 : 64;
  s.num_classes = static_cast<std::size_t>(rng.uniform_int(1, 4));
  s.class_weights.clear();
  for (std::size_t i = 0; i < s.num_classes; ++i) s.class_weights.push_back(rng.uniform(0.1, 1.0));
  s.max_objects = static_cast<std::size_t>(rng.uniform_int(1, s.image_size == 32 ? 4 : 6));
  s.min_objects = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(s.max_objects)));
  s.min_side = static_cast<std::size_t>(rng.uniform_int(2, 6));
  s.max_side = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(s.min_side), s.image_size == 32 ? 10 : 16));
  s.size_bias = rng.uniform(0.5, 3.0);
  s.min_blur = rng.uniform(0.0, 1.0);
  s.max_blur = s.min_blur + rng.uniform(0.0, 2.0);
  s.clutter = rng.uniform();
  s.train_count = static_cast<std::size_t>(rng.uniform_int(8, 24));
  s.val_count = static_cast<std::size_t>(rng.uniform_int(2, 6));

  ModelConfig& m = x.model;
  m.image_size = s.image_size;
  m.num_classes = s.num_classes;
  m.stem_channels = rng.uniform() < 0.5 ? 4 : 8;
  m.width = rng.uniform() < 0.5 ? 8 : 16;
  m.stages = static_cast<std::size_t>(rng.uniform_int(2, 3));
  m.dw_kernel = rng.uniform() < 0.5 ? 3 : 5;
  m.attn_pairing = rng.uniform() < 0.5 ? DbcasaConfig::Pairing::spatial_query : DbcasaConfig::Pairing::spatial_key;
  m.attn_map_source = rng.uniform() < 0.5 ? DbcasaConfig::MapSource::projection : DbcasaConfig::MapSource::input;
  m.shift_step = static_cast<std::size_t>(rng.uniform_int(1, 2));
  m.objectness_prior = rng.uniform(0.01, 0.2);
  m.toggles = {rng.uniform() < 0.5, rng.uniform() < 0.5, rng.uniform() < 0.5};

  TrainConfig& t = x.train;
  t.epochs = 5;
  t.batch_size = static_cast<std::size_t>(rng.uniform_int(1, 8));
  t.lr = std::pow(10.0, rng.uniform(-4.0, std::log10(0.05)));
  t.momentum = rng.uniform(0.8, 0.95);
  t.weight_decay = rng.uniform(0.0, 1e-3);
  t.warmup_epochs = static_cast<std::size_t>(rng.uniform_int(0, 2));
  t.eval_every = static_cast<std::size_t>(rng.uniform_int(0, 5));
  t.slide.mu_policy = rng.uniform() < 0.5 ? SlideConfig::MuPolicy::batch_mean_iou : SlideConfig::MuPolicy::fixed;
  t.slide.fixed_mu = rng.uniform(0.1, 0.9);
  t.slide.variant = rng.uniform() < 0.5 ? SlideConfig::Variant::as_printed : SlideConfig::Variant::slide_v2;
  t.focaler.d = rng.uniform(0.0, 0.2);
  t.focaler.u = rng.uniform(0.6, 1.0);
  return x;
}

void determinism(Checks& c, const fs::path& work, std::size_t random_runs) {
  // Byte-identical reruns through the command-line surface.
  RunConfig rc;
  rc.experiment.seed = 7;
  rc.experiment.scene.seed = 7;
  rc.experiment.scene.train_count = 48;
  rc.experiment.scene.val_count = 16;
  rc.experiment.train.epochs = 8;
  rc.experiment.train.eval_every = 4;
  rc.checkpoint_every = 4;
  write_file(work / "rerun.json", canonical_json(rc));
  const std::string cfg = (work / "rerun.json").string();
  for (const char* run : {"a", "b"}) {
    const fs::path dir = work / "rerun" / run;
    c.expect(run_cli({"synth-gen", "--config", cfg, "--out", (dir / "data").string()}) == 0, "synth-gen failed");
    c.expect(run_cli({"train", "--config", cfg, "--out", (dir / "train").string(), "--quiet"}) == 0, "train failed");
    c.expect(run_cli({"eval", "--checkpoint", (dir / "train").string(), "--data", (dir / "data").string(), "--out",
                      (dir / "eval").string()}) == 0,
             "eval failed");
  }
  const auto a = tree_bytes(work / "rerun/a");
  const auto b = tree_bytes(work / "rerun/b");
  c.expect(a.size() > 20, strf("only %zu output files", a.size()));
  c.expect(a == b, "reruns differ byte-wise");
  progress(strf("rerun: %zu files byte-identical", a.size()));

  // Random short runs stay finite.
  Rng rng(81);
  std::size_t finite = 0;
  for (std::size_t i = 0; i < random_runs; ++i) {
    const ExperimentConfig x = random_experiment(rng, 1000 + i);
    try {
      Trainer t(x);
      t.run();
      bool ok = true;
      for (const EpochRecord& r : t.state().history) ok = ok && all_finite(r);
      for (const auto& e : t.state().params.entries()) ok = ok && e.value.all_finite();
      c.expect(ok, strf("random run %zu produced a non-finite value", i));
      finite += ok;
    } catch (const Error& e) {
      c.expect(false, strf("random run %zu raised: %s", i, e.what()));
    }
  }
  progress(strf("random 5-epoch runs: %zu/%zu finite", finite, random_runs));

  // Resume from disk matches uninterrupted training.
  RunConfig resume;
  resume.experiment.train.epochs = 6;
  resume.experiment.train.eval_every = 3;
  Trainer full(resume.experiment);
  full.run();
  Trainer head(resume.experiment);
  for (int e = 0; e < 3; ++e) head.step_epoch();
  save_checkpoint(work / "resume_ck", resume, head.state());
  Trainer tail(resume.experiment, load_resume_state(work / "resume_ck", resume));
  tail.run();
  c.expect(tail.state().history == full.state().history, "resumed history differs");
  c.expect(same_store(tail.state().params, full.state().params), "resumed weights differ");
  c.expect(same_store(tail.state().momentum, full.state().momentum), "resumed momentum differs");
  c.note(strf("%zu files byte-identical across reruns; %zu/%zu random runs finite; resume at epoch 3 of 6 exact",
              a.size(), finite, random_runs));
}

}  // namespace
}  // namespace mdet

int main(int argc, char** argv) {
  using namespace mdet;
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string report = "acceptance_report.txt";
  std::size_t structure_epochs = 10;
  std::size_t direction_seeds = 5;
  std::size_t random_runs = 50;
  app.add_option("--only", only, "Criteria to run (default all)")->check(CLI::Range(1, 8));
  app.add_option("--report", report, "Summary file")->capture_default_str();
  app.add_option("--ablate-epochs", structure_epochs, "Epochs per row for the ablation structure check")
      ->capture_default_str();
  app.add_option("--direction-seeds", direction_seeds, "Seeds for the ablation direction check")->capture_default_str();
  app.add_option("--random-runs", random_runs, "Random 5-epoch runs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  test::TempDir work("acceptance");
  const std::vector<std::pair<std::string, std::function<void(Checks&)>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"parameter-free shift", parameter_free_shift},
      {"DB-CASA reduction", dbcasa_reduction},
      {"shift algebra", shift_algebra},
      {"loss tables", loss_tables},
      {"desk-scale convergence", convergence},
      {"ablation", [&](Checks& c) { ablation(c, work.path(), structure_epochs, direction_seeds); }},
      {"determinism and robustness", [&](Checks& c) { determinism(c, work.path(), random_runs); }},
  };

  std::vector<std::string> lines;
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    std::cout << "criterion " << id << ": " << criteria[i].first << std::endl;
    Checks c;
    const auto t0 = Clock::now();
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    std::string line = strf("[%s] %d %s (%.1f s)", c.ok() ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                            seconds_since(t0));
    for (const std::string& n : c.notes()) line += "\n       " + n;
    for (const std::string& f : c.failures()) line += "\n       failed: " + f;
    std::cout << line << std::endl;
    lines.push_back(line);
    all = all && c.ok();
  }

  std::ofstream out(report);
  for (const std::string& l : lines) out << l << "\n";
  out << (all ? "ALL PASS" : "SOME FAILED") << "\n";
  std::cout << (all ? "ALL PASS" : "SOME FAILED") << std::endl;
  return all ? 0 : 1;
}
