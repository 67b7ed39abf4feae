// c2c: command-line front end for data generation, split construction,
// training, evaluation and diagnostics.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "c2c/c2c.hpp"

namespace fs = std::filesystem;
using namespace c2c;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(flag) + ": no such file: " + path);
}

Partition parse_partition(const std::string& s) {
  if (s == "train") return Partition::kTrain;
  if (s == "val") return Partition::kVal;
  if (s == "test") return Partition::kTest;
  throw UsageError("--partition must be train, val or test");
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct GenArgs {
  std::string features, split, annotations;
  SyntheticSpec spec;
};

int run_gen(const GenArgs& a) {
  const SyntheticData sd = generate_synthetic(a.spec);
  if (const auto problems = check_split(sd.split); !problems.empty()) {
    throw ConstructionFailed("generate", problems.front());
  }
  write_features(a.features, sd.data);
  write_split(a.split, sd.split);
  if (!a.annotations.empty()) {
    std::vector<AnnotationRecord> records;
    auto add = [&](const std::vector<SampleRef>& refs, SourceSplit split) {
      for (const auto& r : refs) {
        const Composition& c = sd.split.space.composition(r.composition);
        records.push_back({r.sample_id, sd.split.space.verbs()[c.verb], sd.split.space.objects()[c.object], split});
      }
    };
    add(sd.split.train_samples, SourceSplit::kTrain);
    add(sd.split.val_samples, SourceSplit::kTest);
    add(sd.split.test_samples, SourceSplit::kTest);
    write_file_atomic(a.annotations, format_annotations(records));
  }
  std::cout << "wrote " << sd.data.size() << " videos (" << sd.split.train_compositions.size() << " seen of "
            << sd.split.space.num_compositions() << " compositions)\n";
  return 0;
}

struct SplitArgs {
  std::string annotations, out;
  std::uint64_t seed = 0;
  SthcomOptions options;
};

int run_build_split(const SplitArgs& a) {
  require_file(a.annotations, "--annotations");
  const SplitSpec s = build_sthcom_split(read_annotations(a.annotations), a.seed, a.options);
  write_split(a.out, s);
  std::cout << "verbs " << s.space.num_verbs() << ", objects " << s.space.num_objects() << ", train compositions "
            << s.train_compositions.size() << " (" << s.train_samples.size() << " samples), val "
            << s.val_compositions.size() << " (" << s.val_samples.size() << "), test " << s.test_compositions.size()
            << " (" << s.test_samples.size() << ")\n";
  return 0;
}

struct TrainArgs {
  std::string features, split, out, history, config, embeddings, mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool enhanced = false, vanilla = false, quiet = false;
};

int run_train(const TrainArgs& a) {
  require_file(a.features, "--features");
  require_file(a.split, "--split");
  TrainConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "--config");
    cfg = read_config(a.config);
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.enhanced) cfg.enhanced = true;
  if (a.vanilla) cfg.enhanced = false;
  if (!a.mode.empty()) cfg.train_mode = parse_inference_mode(a.mode);
  cfg.validate();

  std::map<std::string, std::vector<double>> vectors;
  if (!a.embeddings.empty()) {
    require_file(a.embeddings, "--embeddings");
    vectors = parse_embeddings(read_file(a.embeddings));
  }
  const VideoDataset data = read_features(a.features);
  const SplitSpec split = read_split(a.split);
  const fs::path history = a.history.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.history);

  auto on_epoch = [&](const EpochReport& e) {
    if (!a.quiet) {
      std::cerr << "epoch " << e.epoch << "/" << cfg.epochs << "  loss " << fmt(e.mean.total) << "  L_com "
                << fmt(e.mean.com) << "  cutmix " << e.cutmix_batches << "/" << e.batches << "\n";
    }
  };
  try {
    TrainResult r = train(data, split, cfg, on_epoch, a.embeddings.empty() ? nullptr : &vectors);
    write_checkpoint(a.out, r.model);
    write_file_atomic(history, history_to_csv(r.history));
  } catch (const TrainingDiverged& e) {
    fs::path last_good = a.out;
    last_good += ".last_good";
    write_checkpoint(last_good, e.last_good());
    write_file_atomic(history, history_to_csv(e.history()));
    std::cerr << "last good checkpoint: " << last_good.string() << "\n";
    throw;
  }
  std::cout << "checkpoint " << a.out << "\nloss history " << history.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string features, split, checkpoint, mode = "full", partition = "test", report, curve, scores;
};

int run_eval(const EvalArgs& a) {
  require_file(a.features, "--features");
  require_file(a.split, "--split");
  require_file(a.checkpoint, "--checkpoint");
  const InferenceMode mode = parse_inference_mode(a.mode);
  const Partition partition = parse_partition(a.partition);
  const VideoDataset data = read_features(a.features);
  const SplitSpec split = read_split(a.split);
  const C2CModel model = read_checkpoint(a.checkpoint);
  const ScoredPartition sp = score_partition(model, data, split, partition, mode);
  sp.matrix.validate();
  const SweepCurve curve = bias_sweep(sp.matrix);
  const EvalReport report = metrics(curve, sp.matrix, sp.components);
  nlohmann::json j = to_json(report);
  j["mode"] = std::string(to_string(mode));
  j["partition"] = a.partition;
  if (!a.scores.empty()) write_score_matrix(a.scores, sp.matrix);
  if (!a.curve.empty()) write_file_atomic(a.curve, curve_to_csv(curve));
  if (!a.report.empty()) write_file_atomic(a.report, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

struct CurveArgs {
  std::string scores, out;
};

int run_curve(const CurveArgs& a) {
  require_file(a.scores, "--scores");
  const ScoreMatrix m = read_score_matrix(a.scores);
  m.validate();
  const SweepCurve curve = bias_sweep(m);
  const EvalReport report = metrics(curve, m);
  export_curve(curve, report, a.out);
  std::cout << "best HM " << fmt(report.best_hm) << "  AUC " << fmt(report.auc) << "  (" << curve.size()
            << " curve points; metrics in " << metrics_sidecar_path(a.out).string() << ")\n";
  return 0;
}

struct GradArgs {
  std::string precision = "f64", branch = "both";
  std::uint64_t seed = 0;
  std::size_t coords = 16;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradArgs& a) {
  if (a.precision != "f64") throw UsageError("--precision: only f64 is supported for finite-difference checks");
  if (a.branch != "plain" && a.branch != "cutmix" && a.branch != "both") {
    throw UsageError("--branch must be plain, cutmix or both");
  }
  ObjectiveCheckOptions opt;
  opt.seed = a.seed;
  opt.gradcheck.max_coords = a.coords;
  opt.gradcheck.tolerance = a.tolerance;
  opt.gradcheck.seed = a.seed;
  bool ok = true;
  auto run = [&](ObjectiveBranch b, const char* name) {
    const GradcheckReport r = check_objective_gradients(b, opt);
    std::cout << name << " objective: max relative error " << r.max_rel_error << (r.passed ? "  PASS" : "  FAIL")
              << "\n";
    for (const auto& e : r.entries) {
      std::cout << "  " << e.name << "  coords " << e.checked << "  rel " << e.max_rel_error << "\n";
    }
    ok = ok && r.passed;
  };
  if (a.branch != "cutmix") run(ObjectiveBranch::kPlain, "plain");
  if (a.branch != "plain") run(ObjectiveBranch::kCutMix, "cutmix");
  return ok ? 0 : kExitNumerical;
}

struct AblateArgs {
  std::string features, split, checkpoint, partition = "test", out;
};

int run_ablate(const AblateArgs& a) {
  require_file(a.features, "--features");
  require_file(a.split, "--split");
  require_file(a.checkpoint, "--checkpoint");
  const Partition partition = parse_partition(a.partition);
  const VideoDataset data = read_features(a.features);
  const SplitSpec split = read_split(a.split);
  const C2CModel model = read_checkpoint(a.checkpoint);
  nlohmann::json all = nlohmann::json::object();
  std::printf("%-20s %8s %8s %8s %8s %8s %8s\n", "mode", "verb", "object", "seen", "unseen", "HM", "AUC");
  for (InferenceMode mode : kAllInferenceModes) {
    const EvalReport r = evaluate_model(model, data, split, partition, mode);
    std::printf("%-20s %8s %8s %8s %8s %8s %8s\n", std::string(to_string(mode)).c_str(), fmt(r.verb_acc).c_str(),
                fmt(r.object_acc).c_str(), fmt(r.best_seen).c_str(), fmt(r.best_unseen).c_str(),
                fmt(r.best_hm).c_str(), fmt(r.auc).c_str());
    all[std::string(to_string(mode))] = to_json(r);
  }
  if (!a.out.empty()) write_file_atomic(a.out, all.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Component-to-composition action recognition toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-synthetic", "Generate a synthetic compositional video set and its split");
  g->add_option("--out-features", gen.features, "Feature file to write")->required();
  g->add_option("--out-split", gen.split, "Split JSON to write")->required();
  g->add_option("--out-annotations", gen.annotations, "Also write JSON-lines annotations");
  g->add_option("--verbs", gen.spec.num_verbs, "Number of verbs")->capture_default_str();
  g->add_option("--objects", gen.spec.num_objects, "Number of objects")->capture_default_str();
  g->add_option("--frames", gen.spec.shape.frames, "Frames per video")->capture_default_str();
  g->add_option("--height", gen.spec.shape.height, "Frame height")->capture_default_str();
  g->add_option("--width", gen.spec.shape.width, "Frame width")->capture_default_str();
  g->add_option("--channels", gen.spec.shape.channels, "Channels per pixel")->capture_default_str();
  g->add_option("--train-per-composition", gen.spec.train_per_composition, "Train videos per seen composition")
      ->capture_default_str();
  g->add_option("--eval-per-composition", gen.spec.eval_per_composition,
                "Videos per composition in each of val and test")
      ->capture_default_str();
  g->add_option("--unseen", gen.spec.unseen, "Compositions held out of train")->capture_default_str();
  g->add_option("--sigma", gen.spec.noise, "Pixel noise level")->capture_default_str();
  g->add_option("--delta", gen.spec.variation, "Verb-conditioned object variation")->capture_default_str();
  g->add_option("--seed", gen.spec.seed, "Random seed")->capture_default_str();

  SplitArgs sa;
  auto* b = app.add_subcommand("build-split", "Build a benchmark split from annotations");
  b->add_option("--annotations", sa.annotations, "JSON-lines annotations")->required();
  b->add_option("--out", sa.out, "Split JSON to write")->required();
  b->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  b->add_option("--min-samples", sa.options.min_samples, "Minimum samples per composition")->capture_default_str();

  TrainArgs ta;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--features", ta.features, "Feature file")->required();
  t->add_option("--split", ta.split, "Split JSON")->required();
  t->add_option("--out", ta.out, "Checkpoint to write")->required();
  t->add_option("--history", ta.history, "Loss history CSV (default: <out>.loss.csv)");
  t->add_option("--config", ta.config, "Training config JSON");
  t->add_option("--seed", ta.seed, "Random seed (overrides the config)");
  t->add_option("--epochs", ta.epochs, "Epochs (overrides the config)");
  t->add_option("--mode", ta.mode, "Composition mode used in training (default full)");
  t->add_option("--embeddings", ta.embeddings, "Word vectors used to initialize prototypes");
  auto* enh = t->add_flag("--enhanced", ta.enhanced, "Use the enhanced strategy (default)");
  auto* van = t->add_flag("--vanilla", ta.vanilla, "Use the vanilla strategy");
  enh->excludes(van);
  t->add_flag("--quiet", ta.quiet, "No per-epoch progress");

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--features", ea.features, "Feature file")->required();
  e->add_option("--split", ea.split, "Split JSON")->required();
  e->add_option("--checkpoint", ea.checkpoint, "Checkpoint")->required();
  e->add_option("--mode", ea.mode, "Inference mode")->capture_default_str();
  e->add_option("--partition", ea.partition, "val or test")->capture_default_str();
  e->add_option("--report", ea.report, "EvalReport JSON to write");
  e->add_option("--curve", ea.curve, "Seen/unseen curve CSV to write");
  e->add_option("--scores", ea.scores, "Score matrix to write");

  CurveArgs ca;
  auto* c = app.add_subcommand("curve", "Sweep the calibration bias over a stored score matrix");
  c->add_option("--scores", ca.scores, "Score matrix")->required();
  c->add_option("--out", ca.out, "Curve CSV to write (metrics go to a .json next to it)")->required();

  GradArgs ga;
  auto* gr = app.add_subcommand("gradcheck", "Finite-difference check of the training objective");
  gr->add_option("--precision", ga.precision, "Arithmetic precision")->capture_default_str();
  gr->add_option("--branch", ga.branch, "plain, cutmix or both")->capture_default_str();
  gr->add_option("--seed", ga.seed, "Random seed")->capture_default_str();
  gr->add_option("--coords", ga.coords, "Coordinates sampled per parameter (0 = all)")->capture_default_str();
  gr->add_option("--tolerance", ga.tolerance, "Maximum relative error")->capture_default_str();

  AblateArgs aa;
  auto* ab = app.add_subcommand("ablate", "Compare the five inference modes on one checkpoint");
  ab->add_option("--features", aa.features, "Feature file")->required();
  ab->add_option("--split", aa.split, "Split JSON")->required();
  ab->add_option("--checkpoint", aa.checkpoint, "Checkpoint")->required();
  ab->add_option("--partition", aa.partition, "val or test")->capture_default_str();
  ab->add_option("--out", aa.out, "JSON with one report per mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (g->parsed()) return run_gen(gen);
    if (b->parsed()) return run_build_split(sa);
    if (t->parsed()) return run_train(ta);
    if (e->parsed()) return run_eval(ea);
    if (c->parsed()) return run_curve(ca);
    if (gr->parsed()) return run_gradcheck(ga);
    if (ab->parsed()) return run_ablate(aa);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const InvalidConfig& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kExitNumerical;
  } catch (const Error& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
