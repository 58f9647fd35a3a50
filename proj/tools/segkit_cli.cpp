#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "segkit/io.hpp"
#include "segkit/verify.hpp"

using namespace segkit;

namespace {

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --seed beats SEGKIT_SEED, which beats the config file.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SEGKIT_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(std::string("SEGKIT_SEED is not an unsigned integer: ") + env);
  }
  return config_seed;
}

fs::path run_dir(const fs::path& runs, const std::string& topology) { return runs / topology; }
fs::path fold_weights(const fs::path& dir, int f) { return dir / ("fold" + std::to_string(f) + ".weights"); }
fs::path fold_thresholds(const fs::path& dir, int f) {
  return dir / ("fold" + std::to_string(f) + ".thresholds.json");
}

struct LoadedRun {
  RunConfig config;
  FoldPlan plan;
  std::vector<Network<float>> folds;
};

LoadedRun load_run(const fs::path& dir) {
  if (!fs::exists(dir / "run.json")) throw std::runtime_error("no trained run in " + dir.string());
  LoadedRun run{run_config_from_json(read_text(dir / "run.json")), fold_plan_from_json(read_text(dir / "folds.json")), {}};
  for (std::size_t f = 0; f < run.plan.folds.size(); ++f) {
    const auto w = fold_weights(dir, static_cast<int>(f));
    if (!fs::exists(w)) throw std::runtime_error("missing fold weights " + w.string());
    run.folds.push_back(load_network(w));
  }
  return run;
}

void write_metrics(const std::vector<ImageCounts>& rows, const fs::path& out) {
  std::ostringstream csv;
  write_metrics_csv(csv, rows);
  write_text(csv.str(), out);
  std::istringstream back(csv.str());
  const auto problems = check_metrics_totals(back);
  for (const auto& p : problems) std::cerr << "metrics check: " << p << "\n";
  const auto s = summarize(rows);
  std::printf("IoU without Bg. %.4f   IoU with Bg. %.4f   (%d folds, %s)\n", s.mean_without_background,
              s.mean_with_background, s.folds, out.string().c_str());
  if (!problems.empty()) throw CheckFailed("metrics totals do not match per-image counts");
}

std::vector<int> patient_ids(const Dataset& ds) {
  std::vector<int> ids;
  for (const auto& s : ds.samples) ids.push_back(s.patient_id);
  return ids;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  int images = 24;
  int size = 32;
  int classes = 12;
  int patients = 0;
  double noise = 0.1;
  std::optional<std::uint64_t> seed;
};

void cmd_synth(const SynthArgs& a) {
  const int patients = a.patients > 0 ? a.patients : std::max(5, a.images / 2);
  const auto ds = generate_synthetic_dataset(a.images, a.size, a.size, a.classes, resolve_seed(a.seed, 0),
                                             {patients, a.noise});
  write_dataset(ds, a.out);
  std::printf("wrote %d images (%d patients, %d classes) to %s\n", a.images, patients, a.classes,
              (a.out / "manifest.json").string().c_str());
}

struct TrainArgs {
  fs::path config, manifest, runs;
  std::string topology;
  std::optional<int> m, epochs, batch_size;
  std::optional<std::uint64_t> seed;
};

void cmd_train(const TrainArgs& a) {
  const Dataset ds = load_dataset(load_manifest(a.manifest));
  RunConfig cfg;
  cfg.topology = named_topology("UMD", 8, ds.num_classes);
  cfg.train = table_config("UMD");
  if (!a.config.empty()) cfg = run_config_from_json(read_text(a.config));
  if (!a.topology.empty()) {
    const TrainConfig kept = cfg.train;
    cfg.topology = named_topology(a.topology, a.m.value_or(cfg.topology.m), ds.num_classes);
    cfg.train = table_config(a.topology);
    cfg.train.epochs = kept.epochs;
    cfg.train.batch_size = kept.batch_size;
    cfg.train.augmentation = kept.augmentation;
    cfg.train.seed = kept.seed;
  } else if (a.m) {
    cfg.topology.m = *a.m;
    cfg.topology.validate();
  }
  if (cfg.topology.num_classes != ds.num_classes)
    throw std::invalid_argument("topology has " + std::to_string(cfg.topology.num_classes) +
                                " classes but the manifest has " + std::to_string(ds.num_classes));
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  cfg.train.seed = resolve_seed(a.seed, cfg.train.seed);

  const FoldPlan plan = make_folds(patient_ids(ds), cfg.train.seed);
  const fs::path dir = run_dir(a.runs, cfg.topology.id);
  fs::create_directories(dir);
  write_text(run_config_to_json(cfg), dir / "run.json");
  write_text(fold_plan_to_json(plan, cfg.train.seed), dir / "folds.json");
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    TrainConfig fold_cfg = cfg.train;
    fold_cfg.seed = derive_seed(cfg.train.seed, 100, f);
    const auto train = select_patients(ds, plan.folds[f].train_patients);
    const auto val = select_patients(ds, plan.folds[f].validation_patients);
    auto result = train_model(cfg.topology, train, val, fold_cfg);
    save_network(result.network, fold_weights(dir, static_cast<int>(f)));
    write_history_csv(result.history, dir / ("fold" + std::to_string(f) + "_history.csv"));
    const double best = result.best_epoch >= 0 ? result.history[result.best_epoch].validation_accuracy : 0.0;
    std::printf("%s fold %zu: %zu train / %zu val images, best epoch %d, val accuracy %.4f\n",
                cfg.topology.id.c_str(), f, train.size(), val.size(), result.best_epoch, best);
  }
  std::printf("run written to %s\n", dir.string().c_str());
}

struct RunArgs {
  fs::path runs, manifest, out;
  std::string topology;
  std::string label = "map";
};

void cmd_tune(const RunArgs& a) {
  const Dataset ds = load_dataset(load_manifest(a.manifest));
  const fs::path dir = run_dir(a.runs, a.topology);
  auto run = load_run(dir);
  for (std::size_t f = 0; f < run.folds.size(); ++f) {
    const auto val = select_patients(ds, run.plan.folds[f].validation_patients);
    if (val.empty()) throw std::runtime_error("fold " + std::to_string(f) + " has no validation images");
    const auto t = tune_on(run.folds[f], val);
    write_text(thresholds_to_json(t), fold_thresholds(dir, static_cast<int>(f)));
    std::printf("fold %zu thresholds:", f);
    for (double v : t.values) std::printf(" %.2f", v);
    std::printf("\n");
  }
}

ClassThresholds thresholds_for(const fs::path& dir, int f, Network<float>& net, const Dataset& ds,
                               const FoldPlan& plan) {
  const auto path = fold_thresholds(dir, f);
  if (fs::exists(path)) return thresholds_from_json(read_text(path));
  const auto t = tune_on(net, select_patients(ds, plan.folds[f].validation_patients));
  write_text(thresholds_to_json(t), path);
  return t;
}

void cmd_evaluate(const RunArgs& a) {
  const Dataset ds = load_dataset(load_manifest(a.manifest));
  const fs::path dir = run_dir(a.runs, a.topology);
  auto run = load_run(dir);
  const Labelling labelling = parse_labelling(a.label);
  std::vector<FoldModel> folds;
  for (std::size_t f = 0; f < run.folds.size(); ++f) {
    ClassThresholds t = labelling == Labelling::th
                            ? thresholds_for(dir, static_cast<int>(f), run.folds[f], ds, run.plan)
                            : ClassThresholds::uniform(ds.num_classes, 0.5);
    folds.push_back({&run.folds[f], t});
  }
  const auto test = select_patients(ds, run.plan.test_patients);
  if (test.empty()) throw std::runtime_error("the fold plan's test patients have no images in this manifest");
  write_metrics(evaluate_run(folds, test, labelling), a.out.empty() ? dir / ("metrics_" + a.label + ".csv") : a.out);
}

struct PredictArgs {
  fs::path runs, image, out, scores, thresholds;
  std::string topology;
  std::string label = "map";
  int fold = 0;
};

void cmd_predict(const PredictArgs& a) {
  const fs::path dir = run_dir(a.runs, a.topology);
  const auto cfg = run_config_from_json(read_text(dir / "run.json"));
  auto net = load_network(fold_weights(dir, a.fold));
  const auto image = tsr_read(a.image);
  const auto scores = predict_scores(net, image, cfg.patch, cfg.stride);
  const Labelling labelling = parse_labelling(a.label);
  std::optional<ClassThresholds> t;
  if (labelling == Labelling::th) {
    const auto path = a.thresholds.empty() ? fold_thresholds(dir, a.fold) : a.thresholds;
    if (!fs::exists(path)) throw std::runtime_error("no thresholds at " + path.string() + "; run tune-thresholds first");
    t = thresholds_from_json(read_text(path));
  }
  const auto labels = apply_labelling(scores, labelling, t ? &*t : nullptr);
  pgm_write(labels, a.out, net.spec().num_classes);
  if (!a.scores.empty()) tsr_write(scores, a.scores);
  std::printf("%s fold %d (%s) -> %s\n", a.topology.c_str(), a.fold, a.label.c_str(), a.out.string().c_str());
}

struct EnsembleArgs {
  fs::path runs, manifest, out;
  std::string spec, mode, label = "map";
  std::vector<std::string> external;
  int stack_epochs = 50;
  std::optional<std::uint64_t> seed;
};

// Score maps dropped in as <dir>/<image id>.tsr, matched to images by content.
MemberFn file_member(const fs::path& dir, const Dataset& ds) {
  return [dir, &ds](const Tensor<float>& image) {
    for (const auto& s : ds.samples)
      if (s.image == image) return tsr_read(dir / (s.id + ".tsr"));
    throw std::runtime_error("external scores: image is not part of the manifest");
  };
}

void cmd_ensemble(const EnsembleArgs& a) {
  const Dataset ds = load_dataset(load_manifest(a.manifest));
  EnsembleSpec spec = fs::exists(a.spec) ? ensemble_from_json(read_text(a.spec)) : named_ensemble(a.spec);
  if (!a.mode.empty()) spec = parse_ensemble_mode(spec, a.mode);
  spec.validate();
  const Labelling labelling = parse_labelling(a.label);

  std::map<std::string, fs::path> external;
  for (const auto& e : a.external) {
    const auto eq = e.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--external expects NAME=DIR, got " + e);
    external[e.substr(0, eq)] = e.substr(eq + 1);
  }
  std::map<std::string, LoadedRun> runs;
  std::optional<FoldPlan> plan;
  std::uint64_t seed = 0;
  for (const auto& id : spec.member_ids) {
    if (external.count(id) || runs.count(id)) continue;
    const auto dir = run_dir(a.runs, id);
    if (!fs::exists(dir / "run.json")) {
      if (id == "FCN")
        throw std::runtime_error("ensemble " + spec.id + " includes the FCN slot; pass --external FCN=DIR with "
                                 "one <image id>.tsr score map per image");
      throw std::runtime_error("member " + id + " has no trained run in " + dir.string());
    }
    auto run = load_run(dir);
    if (plan && run.plan != *plan) throw std::runtime_error("member " + id + " was trained on a different fold plan");
    plan = run.plan;
    seed = run.config.train.seed;
    runs.emplace(id, std::move(run));
  }
  if (!plan) throw std::runtime_error("an ensemble needs at least one trained member to define the folds");
  seed = resolve_seed(a.seed, seed);

  const fs::path ens_dir = a.runs / "ensembles" / (spec.id + "-" + mode_name(spec));
  fs::create_directories(ens_dir);
  write_text(ensemble_to_json(spec), ens_dir / "ensemble.json");
  std::vector<std::vector<MemberFn>> fold_members;
  std::vector<std::optional<StackingModel<float>>> stacks(plan->folds.size());
  std::vector<FoldScorer> scorers;
  for (std::size_t f = 0; f < plan->folds.size(); ++f) {
    MemberSet set;
    for (auto& [id, run] : runs) set.networks[id] = &run.folds[f];
    for (const auto& [id, dir] : external) set.external_scores[id] = file_member(dir, ds);
    fold_members.push_back(resolve_members(spec, set));
  }
  for (std::size_t f = 0; f < plan->folds.size(); ++f) {
    const auto train = select_patients(ds, plan->folds[f].train_patients);
    const auto val = select_patients(ds, plan->folds[f].validation_patients);
    if (spec.mode == EnsembleMode::stacking) {
      StackingTrainConfig cfg;
      cfg.epochs = a.stack_epochs;
      cfg.seed = derive_seed(seed, 200, f);
      auto res = train_stacking(spec, fold_members[f], train, val, cfg);
      save_stacking(res.model, ens_dir / ("fold" + std::to_string(f) + ".weights"));
      write_history_csv(res.history, ens_dir / ("fold" + std::to_string(f) + "_history.csv"));
      stacks[f].emplace(std::move(res.model));
      std::printf("fold %zu stacking: best epoch %d\n", f, res.best_epoch);
    }
    const StackingModel<float>* stack = stacks[f] ? &*stacks[f] : nullptr;
    ScoreFn scorer = [&spec, &fold_members, f, stack](const Tensor<float>& img) {
      return ensemble_scores(spec, fold_members[f], stack, img);
    };
    ClassThresholds t = labelling == Labelling::th ? tune_on(scorer, val) : ClassThresholds::uniform(ds.num_classes, 0.5);
    if (labelling == Labelling::th)
      write_text(thresholds_to_json(t), ens_dir / ("fold" + std::to_string(f) + ".thresholds.json"));
    scorers.push_back({scorer, t});
  }
  const auto test = select_patients(ds, plan->test_patients);
  write_metrics(evaluate_scorers(scorers, test, labelling),
                a.out.empty() ? ens_dir / ("metrics_" + a.label + ".csv") : a.out);
}

void cmd_gradcheck(std::optional<std::uint64_t> seed_flag) {
  const auto r = run_gradient_suite(resolve_seed(seed_flag, 0));
  std::printf("%-14s %8s %8s %12s %8s\n", "block", "checked", "within", "max_rel_err", "refined");
  for (const auto& b : r.blocks)
    std::printf("%-14s %8zu %8zu %12.3e %8zu %s\n", b.block.c_str(), b.report.checked, b.report.within_tolerance,
                b.report.max_rel_error, b.report.refined, b.report.passed ? "ok" : "FAILED");
  std::printf("%zu coordinates, %.4f within tolerance, max relative error %.3e, %.1f s\n", r.checked,
              r.fraction_within(), r.max_rel_error, r.seconds);
  if (!r.passed) throw CheckFailed("gradient check failed");
}

void cmd_shapes(bool all, std::vector<std::string> ids, int size, int m, int classes) {
  if (all || ids.empty()) ids = named_topology_ids();
  const auto r = run_shape_suite(ids, size, m, classes);
  for (const auto& t : r.topologies) {
    if (!t.error.empty())
      std::printf("%-5s FAILED %s\n", t.id.c_str(), t.error.c_str());
    else
      std::printf("%-5s %-16s params %10zu  max |sum-1| %.2e %s\n", t.id.c_str(), t.output.str().c_str(),
                  t.parameters, t.max_sum_error, t.passed ? "ok" : "FAILED");
  }
  std::printf("%zu topologies in %.1f s\n", r.topologies.size(), r.seconds);
  if (!r.passed) throw CheckFailed("shape check failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segkit: U-Net variants and ensembles for lumbar spine MRI segmentation"};
  app.require_subcommand(1);
  std::function<void()> action;

  SynthArgs synth;
  auto* c = app.add_subcommand("synth-data", "Write a seeded synthetic dataset (TSR1 images, PGM masks, manifest)");
  c->add_option("--out", synth.out, "Output directory")->required();
  c->add_option("--images", synth.images, "Number of images")->check(CLI::PositiveNumber);
  c->add_option("--size", synth.size, "Image side in pixels (multiple of 16)")->check(CLI::PositiveNumber);
  c->add_option("--classes", synth.classes, "Number of classes including background")->check(CLI::Range(2, 256));
  c->add_option("--patients", synth.patients, "Number of patients (default: max(5, images/2))");
  c->add_option("--noise", synth.noise, "Gaussian noise standard deviation");
  c->add_option("--seed", synth.seed, "Random seed (overrides SEGKIT_SEED)");
  c->callback([&] { action = [&] { cmd_synth(synth); }; });

  TrainArgs train;
  c = app.add_subcommand("train", "Cross-validated training of one topology (three folds)");
  c->add_option("--manifest", train.manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  c->add_option("--runs", train.runs, "Runs directory; output goes to <runs>/<topology>")->required();
  c->add_option("--config", train.config, "Run config JSON")->check(CLI::ExistingFile);
  c->add_option("--topology", train.topology, "Named topology, with its optimizer and learning rate");
  c->add_option("--m", train.m, "Base channel width");
  c->add_option("--epochs", train.epochs, "Epochs per fold");
  c->add_option("--batch-size", train.batch_size, "Mini-batch size");
  c->add_option("--seed", train.seed, "Random seed (overrides SEGKIT_SEED and the config)");
  c->callback([&] { action = [&] { cmd_train(train); }; });

  RunArgs tune;
  c = app.add_subcommand("tune-thresholds", "Tune per-class TH thresholds on each fold's validation images");
  c->add_option("--runs", tune.runs, "Runs directory")->required();
  c->add_option("--topology", tune.topology, "Trained topology id")->required();
  c->add_option("--manifest", tune.manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  c->callback([&] { action = [&] { cmd_tune(tune); }; });

  PredictArgs predict;
  c = app.add_subcommand("predict", "Label one TSR1 image with a trained fold model");
  c->add_option("--runs", predict.runs, "Runs directory")->required();
  c->add_option("--topology", predict.topology, "Trained topology id")->required();
  c->add_option("--image", predict.image, "Input TSR1 image (H x W x 2)")->required()->check(CLI::ExistingFile);
  c->add_option("--out", predict.out, "Output PGM label map")->required();
  c->add_option("--label", predict.label, "Labelling criterion")->check(CLI::IsMember({"map", "th"}));
  c->add_option("--fold", predict.fold, "Fold model to use")->check(CLI::Range(0, 2));
  c->add_option("--thresholds", predict.thresholds, "Thresholds JSON (default: the fold's tuned file)");
  c->add_option("--scores", predict.scores, "Also write the score map as TSR1");
  c->callback([&] { action = [&] { cmd_predict(predict); }; });

  RunArgs eval;
  c = app.add_subcommand("evaluate", "Per-class and mean IoU of a trained run on its test patients");
  c->add_option("--runs", eval.runs, "Runs directory")->required();
  c->add_option("--topology", eval.topology, "Trained topology id")->required();
  c->add_option("--manifest", eval.manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  c->add_option("--label", eval.label, "Labelling criterion (th tunes thresholds if none are saved)")
      ->check(CLI::IsMember({"map", "th"}));
  c->add_option("--out", eval.out, "Metrics CSV (default: <runs>/<topology>/metrics_<label>.csv)");
  c->callback([&] { action = [&] { cmd_evaluate(eval); }; });

  EnsembleArgs ens;
  c = app.add_subcommand("ensemble", "Combine trained members and evaluate on the test patients");
  c->add_option("--runs", ens.runs, "Runs directory holding one run per member")->required();
  c->add_option("--spec", ens.spec, "Named ensemble (E4..E13) or ensemble JSON file")->required();
  c->add_option("--mode", ens.mode, "arith, geo, stacking-NAD or stacking-TCD");
  c->add_option("--manifest", ens.manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  c->add_option("--label", ens.label, "Labelling criterion")->check(CLI::IsMember({"map", "th"}));
  c->add_option("--external", ens.external, "NAME=DIR: member scores from <DIR>/<image id>.tsr");
  c->add_option("--stack-epochs", ens.stack_epochs, "Stacking epochs")->check(CLI::NonNegativeNumber);
  c->add_option("--seed", ens.seed, "Random seed for the stacking layer");
  c->add_option("--out", ens.out, "Metrics CSV");
  c->callback([&] { action = [&] { cmd_ensemble(ens); }; });

  std::optional<std::uint64_t> grad_seed;
  c = app.add_subcommand("gradcheck", "Finite-difference gradient suite over every block type");
  c->add_option("--seed", grad_seed, "Random seed");
  c->callback([&] { action = [&] { cmd_gradcheck(grad_seed); }; });

  bool shapes_all = false;
  std::vector<std::string> shape_ids;
  int shape_size = 64, shape_m = 64, shape_classes = 12;
  c = app.add_subcommand("shapes", "Shape and normalisation suite over named topologies");
  c->add_flag("--all", shapes_all, "Check all twelve named topologies");
  c->add_option("--topology", shape_ids, "Topology ids to check");
  c->add_option("--size", shape_size, "Input side (multiple of 16)");
  c->add_option("--m", shape_m, "Base channel width");
  c->add_option("--classes", shape_classes, "Number of classes");
  c->callback([&] { action = [&] { cmd_shapes(shapes_all, shape_ids, shape_size, shape_m, shape_classes); }; });

  CLI11_PARSE(app, argc, argv);
  try {
    action();
  } catch (const CheckFailed& e) {
    std::fprintf(stderr, "check failed: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
