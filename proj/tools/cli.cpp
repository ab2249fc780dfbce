#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdet/checkpoint.hpp"
#include "mdet/dataset_io.hpp"
#include "mdet/error.hpp"
#include "mdet/grad_suite.hpp"
#include "mdet/profile.hpp"
#include "mdet/report_io.hpp"
#include "mdet/run_config.hpp"
#include "mdet/tensor_io.hpp"

namespace mdet::cli {
namespace {

namespace fs = std::filesystem;

std::string strf(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string strf(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

std::string checkpoint_name(std::size_t epoch) { return strf("epoch_%04zu", epoch); }

// Latest `checkpoints/epoch_NNNN` under a run directory, if any.
std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  const fs::path root = run_dir / "checkpoints";
  if (!fs::is_directory(root)) return std::nullopt;
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && name.starts_with("epoch_") && fs::exists(e.path() / "manifest.json")) {
      found.push_back(e.path());
    }
  }
  if (found.empty()) return std::nullopt;
  return *std::max_element(found.begin(), found.end());
}

// --- gradcheck -------------------------------------------------------------------------

struct GradcheckArgs {
  std::string module = "all";
  std::uint64_t seed = 0;
  std::size_t seeds = 10;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const std::vector<GradSuiteEntry> entries = run_grad_suite(a.module, a.seed, a.seeds);
  out << strf("%-8s %-28s %12s %6s  %s\n", "module", "op", "max_rel_err", "cases", "worst case");
  double worst = 0.0;
  for (const GradSuiteEntry& e : entries) {
    worst = std::max(worst, e.max_rel_error);
    out << strf("%-8s %-28s %12.3e %6zu  %s\n", e.module.c_str(), e.op.c_str(), e.max_rel_error, e.cases,
                e.worst_case.c_str());
  }
  const bool pass = suite_passes(entries);
  out << strf("%zu ops, worst relative error %.3e, tolerance %.0e: %s\n", entries.size(), worst,
              kGradTolerance, pass ? "PASS" : "FAIL");
  return pass ? kOk : kGradcheckFailed;
}

// --- synth-gen -------------------------------------------------------------------------

int cmd_synth_gen(const std::string& config, const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = config_or_default(config);
  const SynthSceneSpec& spec = cfg.experiment.scene;
  write_dataset(out_dir, spec);
  out << strf("wrote %zu training and %zu validation scenes to %s\n", spec.train_count, spec.val_count,
              out_dir.c_str());
  return kOk;
}

// --- train -----------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out_dir;
  bool resume = false;
  bool quiet = false;
};

std::string epoch_line(const EpochRecord& r, std::size_t epochs) {
  std::string line = strf("epoch %4zu/%zu  lr %.5f  loss %.4f  box %.4f  obj %.4f  cls %.4f", r.epoch, epochs,
                          r.lr, r.loss, r.box, r.obj, r.cls);
  if (r.metrics) {
    line += strf("  P %.4f  R %.4f  F1 %.4f  mAP50 %.4f", r.metrics->precision, r.metrics->recall,
                 r.metrics->f1, r.metrics->ap50);
  }
  return line + "\n";
}

MetricsDocument document_of(const TrainState& state) {
  MetricsDocument doc;
  doc.series = state.history;
  for (const EpochRecord& r : state.history) {
    if (r.metrics) doc.final_report = *r.metrics;
  }
  return doc;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = config_or_default(a.config);
  if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
  cfg.validate();
  const fs::path dir = cfg.output_dir;

  std::optional<Trainer> trainer;
  if (a.resume) {
    const auto latest = latest_checkpoint(dir);
    if (!latest) throw IoError("no checkpoint to resume from under " + (dir / "checkpoints").string());
    trainer.emplace(cfg.experiment, load_resume_state(*latest, cfg));
    if (!a.quiet) out << "resuming from " << latest->string() << "\n";
  } else {
    fs::remove_all(dir / "checkpoints");
    trainer.emplace(cfg.experiment);
  }
  fs::create_directories(dir);
  write_file(dir / "config.json", canonical_json(cfg));

  const std::size_t epochs = cfg.experiment.train.epochs;
  const std::size_t every = cfg.checkpoint_every;
  trainer->run([&](const Trainer& t) {
    const TrainState& s = t.state();
    if (!a.quiet) out << epoch_line(s.history.back(), epochs) << std::flush;
    if (t.finished() || (every > 0 && s.epoch % every == 0)) {
      save_checkpoint(dir / "checkpoints" / checkpoint_name(s.epoch), cfg, s);
      emit_metrics(document_of(s), dir);
    }
  });
  const MetricsDocument doc = document_of(trainer->state());
  emit_metrics(doc, dir);
  out << metrics_csv_row(doc.final_report) << "\n";
  return kOk;
}

// --- eval ------------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "val";
  std::string out_dir;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  fs::path ck_dir = a.checkpoint;
  if (!fs::exists(ck_dir / "manifest.json")) {
    const auto latest = latest_checkpoint(ck_dir);
    if (!latest) throw IoError("no checkpoint found at " + ck_dir.string());
    ck_dir = *latest;
  }
  const Checkpoint ck = load_checkpoint(ck_dir);
  const Dataset data = read_dataset(a.data);
  const ExperimentConfig& exp = ck.config.experiment;
  if (data.image_size != exp.model.image_size) {
    throw ConfigError(strf("data image size %zu differs from the model's %zu", data.image_size,
                           exp.model.image_size),
                      "scene.image_size");
  }
  if (data.num_classes != exp.model.num_classes) {
    throw ConfigError(strf("data has %zu classes, the model %zu", data.num_classes, exp.model.num_classes),
                      "scene.num_classes");
  }
  const std::vector<Scene>& scenes = a.split == "train" ? data.train : data.val;
  if (scenes.empty()) throw ConfigError("split '" + a.split + "' has no scenes", "split");

  MetricsDocument doc;
  doc.final_report = evaluate_model(ck.state.params, exp.model, scenes, exp.eval);
  doc.final_report.epochs = ck.state.epoch;
  doc.final_report.seed = exp.seed;
  if (!a.out_dir.empty()) emit_metrics(doc, a.out_dir);
  out << metrics_json(doc);
  return kOk;
}

// --- ablate ----------------------------------------------------------------------------

int cmd_ablate(const std::string& config, const std::string& out_dir, std::ostream& out) {
  RunConfig cfg = config_or_default(config);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  cfg.validate();
  out << ablation_table({}) << std::flush;
  std::vector<AblationRow> rows = ablate(cfg.experiment, [&](const AblationRow& row) {
    const std::string table = ablation_table(std::span<const AblationRow>(&row, 1));
    out << table.substr(table.find('\n') + 1) << std::flush;
  });
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_file(dir / "config.json", canonical_json(cfg));
  write_file(dir / "ablation.csv", ablation_csv(rows));
  write_file(dir / "ablation.json", ablation_json(rows));
  return kOk;
}

// --- params ----------------------------------------------------------------------------

int cmd_params(const std::string& config, std::ostream& out) {
  const RunConfig cfg = config_or_default(config);
  cfg.validate();
  const ModelConfig& m = cfg.experiment.model;
  const ParamStore<float> params = build_model(m, cfg.experiment.seed);
  out << "toggles " << m.toggles.label() << "\n";
  out << strf("%-12s %10s\n", "module", "learnable");
  for (const auto& [module, count] : param_breakdown(params, m)) out << strf("%-12s %10zu\n", module.c_str(), count);
  out << strf("%-12s %10zu\n", "total", params.learnable_count());
  return kOk;
}

// --- bench -----------------------------------------------------------------------------

int cmd_bench(const std::string& config, std::size_t reps, std::ostream& out) {
  const RunConfig cfg = config_or_default(config);
  cfg.validate();
  const std::vector<BlockTiming> timings = profile_blocks(cfg.experiment, reps);
  out << strf("%-10s %-18s %12s %12s   (%zu repetitions, seed %llu)\n", "block", "input", "forward_ms",
              "backward_ms", reps, static_cast<unsigned long long>(cfg.experiment.seed));
  for (const BlockTiming& t : timings) {
    out << strf("%-10s %-18s %12.3f %12.3f\n", t.block.c_str(), t.input.str().c_str(), t.forward_ms,
                t.backward_ms);
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Toy marine-debris detector: gradient checks, synthetic data, training and evaluation", "mdet"};
  app.require_subcommand(1);

  GradcheckArgs grad;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every differentiable op");
  gradcheck->add_option("--module", grad.module, "Suite to run")
      ->check(CLI::IsMember({"all", "tensor", "dbcasa", "fsfm", "loss"}))
      ->capture_default_str();
  gradcheck->add_option("--seed", grad.seed, "Base seed")->capture_default_str();
  gradcheck->add_option("--seeds", grad.seeds, "Random cases per op")->check(CLI::PositiveNumber)->capture_default_str();

  std::string config;
  std::string out_dir;
  auto* synth = app.add_subcommand("synth-gen", "Write the synthetic scene set as tensor files and labels");
  synth->add_option("--config", config, "Run configuration (JSON)");
  synth->add_option("--out", out_dir, "Output directory")->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train, checkpointing every checkpoint_every epochs");
  train->add_option("--config", train_args.config, "Run configuration (JSON)");
  train->add_option("--out", train_args.out_dir, "Output directory (overrides output_dir)");
  train->add_flag("--resume", train_args.resume, "Continue from the latest checkpoint in the output directory");
  train->add_flag("--quiet", train_args.quiet, "Only print the final metrics row");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a scene directory");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint or run directory")->required();
  eval->add_option("--data", eval_args.data, "Scene directory written by synth-gen")->required();
  eval->add_option("--split", eval_args.split, "Scene split")->check(CLI::IsMember({"train", "val"}))->capture_default_str();
  eval->add_option("--out", eval_args.out_dir, "Also write metrics.json and metrics.csv here");

  auto* ablation = app.add_subcommand("ablate", "Train all 8 module toggle combinations");
  ablation->add_option("--config", config, "Run configuration (JSON)");
  ablation->add_option("--out", out_dir, "Output directory (overrides output_dir)");

  auto* params = app.add_subcommand("params", "Learnable parameter counts per module");
  params->add_option("--config", config, "Run configuration (JSON)");

  std::size_t reps = 10;
  auto* bench = app.add_subcommand("bench", "Forward/backward wall time per block");
  bench->add_option("--config", config, "Run configuration (JSON)");
  bench->add_option("--reps", reps, "Repetitions per block")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gradcheck) return cmd_gradcheck(grad, out);
    if (*synth) return cmd_synth_gen(config, out_dir, out);
    if (*train) return cmd_train(train_args, out);
    if (*eval) return cmd_eval(eval_args, out);
    if (*ablation) return cmd_ablate(config, out_dir, out);
    if (*params) return cmd_params(config, out);
    if (*bench) return cmd_bench(config, reps, out);
  } catch (const ConfigError& e) {
    err << "config error";
    if (!e.key().empty()) err << " [" << e.key() << "]";
    err << ": " << e.what() << "\n";
    return kInvalidInput;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const DimensionError& e) {
    err << "input error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace mdet::cli
