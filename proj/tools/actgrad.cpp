// actgrad: command-line harness for the trainable-activation experiments.
//
//   actgrad train --size small --activation fourier --epochs 5 --subset 2000
//   actgrad compare --baseline runs/cnn/metrics.csv --variant Fourier-CNN=runs/fourier/metrics.csv
//   actgrad pso --subset 2000 --val-subset 1000
//   actgrad gradcheck --component end2end
//   actgrad fetch-data --data-dir data/cifar
//
// Exit codes: 0 success, 1 failed check or runtime error, 2 bad flags or missing data.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "actgrad/experiment.hpp"
#include "actgrad/gradcheck.hpp"
#include "actgrad/training.hpp"

namespace fs = std::filesystem;
using namespace actgrad;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::string data_dir;
  std::string out_dir = "runs";
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string size = "small";
  std::string activation = "relu";
  int epochs = 80;
  std::size_t batch_size = 64;
  double lr_scale = 1.0;
  std::size_t subset = 0;
  std::size_t val_subset = 0;
  bool pretrain_ae = false;
  std::size_t pretrain_epochs = 5;
  bool with_baseline = false;
  bool per_channel = false;
  std::string manifest;
};

struct PsoOptions {
  std::string size = "middle";
  std::string activation = "relu";
  SwarmConfig swarm;
  std::size_t subset = 0;
  std::size_t val_subset = 0;
  double reference_bp_accuracy = -1.0;
};

void print_epoch(const std::string& tag, const MetricsRecord& r) {
  std::fprintf(stderr, "[%s] epoch %3d  train acc %.4f loss %.4f  val acc %.4f loss %.4f  (%.1fs)\n",
               tag.c_str(), r.epoch, r.train_accuracy, r.train_loss, r.val_accuracy, r.val_loss,
               r.wall_seconds);
}

void print_summary(const std::vector<std::pair<std::string, MetricsRecord>>& rows) {
  std::printf("method,train_accuracy,train_loss,val_accuracy,val_loss\n");
  for (const auto& [name, best] : rows) std::printf("%s\n", summary_row(name, best).c_str());
}

TrainOutcome train_one(const RunManifest& m, const RunData& data, const fs::path& dir,
                       std::optional<bool> pretrained_column, const std::string& tag) {
  std::fprintf(stderr, "[%s] %s, %zu train / %zu validation images -> %s\n", tag.c_str(),
               method_name(m.model).c_str(), data.train->size(), data.validation->size(), dir.c_str());
  auto outcome = run_training(m, data, [&](const MetricsRecord& r) { print_epoch(tag, r); });
  write_run(dir, m, outcome, pretrained_column);
  return outcome;
}

int cmd_train(const GlobalOptions& g, const TrainOptions& t, const std::set<std::string>& given) {
  RunManifest m;
  if (!t.manifest.empty()) {
    std::ifstream in(t.manifest);
    if (!in) throw UsageError("manifest not found: " + t.manifest);
    m = RunManifest::from_json(nlohmann::json::parse(in));
    if (!g.data_dir.empty() && given.count("--data-dir")) m.data_dir = g.data_dir;
    if (m.data_dir.empty()) m.data_dir = g.data_dir;
  } else {
    if (t.with_baseline && !t.pretrain_ae) throw UsageError("--with-baseline needs --pretrain-ae");
    m = RunManifest::make(parse_model_size(t.size), parse_activation_type(t.activation), g.seed);
    m.model.per_channel_activation = t.per_channel;
    m.epochs = t.epochs;
    m.batch_size = t.batch_size;
    m.lr_scale = t.lr_scale;
    m.train_subset = t.subset;
    m.val_subset = t.val_subset;
    m.data_dir = g.data_dir;
    m.pretrain_epochs = t.pretrain_ae ? t.pretrain_epochs : 0;
    if (t.pretrain_ae && t.pretrain_epochs == 0) throw UsageError("--pretrain-epochs must be at least 1");
  }
  m.git_describe = git_describe();
  m.started_at = utc_timestamp();
  m.validate();

  const RunData data = load_run_data(m);
  const fs::path out(g.out_dir);
  std::vector<std::pair<std::string, MetricsRecord>> rows;
  const bool pretrained = m.pretrain_epochs > 0;

  if (pretrained && t.with_baseline) {
    const auto pre = train_one(m, data, out / "pretrained", true, "pretrained");
    RunManifest base = m;
    base.pretrain_epochs = 0;
    const auto plain = train_one(base, data, out / "baseline", false, "baseline");
    rows.emplace_back(method_name(m.model) + " (pretrained)", best_of(pre.records));
    rows.emplace_back(method_name(m.model), best_of(plain.records));
  } else {
    const auto outcome = train_one(m, data, out, pretrained ? std::optional<bool>(true) : std::nullopt, "train");
    rows.emplace_back(method_name(m.model) + (pretrained ? " (pretrained)" : ""), best_of(outcome.records));
  }
  print_summary(rows);
  return 0;
}

int cmd_compare(const GlobalOptions& g, const std::string& baseline, const std::vector<std::string>& variants,
                const std::string& label, const std::string& out_file) {
  if (variants.empty()) throw UsageError("compare needs at least one --variant name=path");
  const auto base = read_metrics_csv(baseline);
  std::vector<Improvement> rows;
  for (const auto& spec : variants) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--variant expects name=path, got '" + spec + "'");
    rows.push_back(improvement(spec.substr(0, eq), base, read_metrics_csv(spec.substr(eq + 1))));
  }
  const std::string table = improvement_table(label, rows);
  const fs::path path = out_file.empty() ? fs::path(g.out_dir) / "improvement.csv" : fs::path(out_file);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << table;
  std::fputs(table.c_str(), stdout);
  return 0;
}

int cmd_pso(const GlobalOptions& g, PsoOptions p) {
  RunManifest m = RunManifest::make(parse_model_size(p.size), parse_activation_type(p.activation), g.seed);
  m.data_dir = g.data_dir;
  m.train_subset = p.subset;
  m.val_subset = p.val_subset;
  p.swarm.seed = derive_seeds(g.seed).pso;
  p.swarm.validate();
  const RunData data = load_run_data(m);

  std::fprintf(stderr, "[pso] %s, %zu particles x %zu generations, fitness on %zu images, %zu parameters\n",
               method_name(m.model).c_str(), p.swarm.n_particles, p.swarm.generations,
               std::min(p.swarm.eval_subset_size, data.train->size()), build_model(m.model).parameter_count());
  const auto start = std::chrono::steady_clock::now();
  SwarmHooks hooks;
  double last_val = 0.0;
  Network judge = build_model(m.model);
  hooks.validate = [&](std::span<const double> best) {
    judge.unflatten(best);
    return last_val = evaluate(judge, *data.validation).accuracy;
  };
  hooks.observe = [&](std::size_t gen, std::span<const Particle>, std::span<const double>) {
    std::fprintf(stderr, "[pso] generation %3zu  val acc %.4f  (%.1fs)\n", gen, last_val,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  };
  const auto result = pso_train(p.swarm, m.model, *data.train, *data.validation, hooks);

  const fs::path out(g.out_dir);
  write_pso_history(out / "pso_history.csv", result.swarm.history);
  nlohmann::json manifest = m.to_json();
  manifest["swarm"] = {{"n_particles", p.swarm.n_particles}, {"generations", p.swarm.generations},
                       {"inertia", p.swarm.inertia},         {"c1", p.swarm.c1},
                       {"c2", p.swarm.c2},                   {"velocity_clamp", p.swarm.velocity_clamp},
                       {"eval_subset_size", p.swarm.eval_subset_size}, {"seed", p.swarm.seed}};
  manifest["git_describe"] = git_describe();
  manifest["started_at"] = utc_timestamp();
  std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
  save_checkpoint(out / "best.actg", manifest, result.best_network);

  const auto& last = result.swarm.history.back();
  std::printf("generations,best_fitness,pso_val_accuracy");
  if (p.reference_bp_accuracy >= 0.0) std::printf(",bp_val_accuracy,pso_to_bp_ratio");
  std::printf("\n%zu,%.6f,%.4f", result.swarm.history.size(), last.best_fitness, last.val_accuracy);
  if (p.reference_bp_accuracy >= 0.0) {
    std::printf(",%.4f,%.3f", p.reference_bp_accuracy,
                p.reference_bp_accuracy > 0.0 ? last.val_accuracy / p.reference_bp_accuracy : 0.0);
  }
  std::printf("\n");
  return 0;
}

int cmd_gradcheck(const GlobalOptions& g, const std::string& component, std::size_t draws) {
  std::vector<CheckComponent> which;
  if (component == "all") {
    auto all = all_check_components();
    which.assign(all.begin(), all.end());
  } else {
    which.push_back(parse_check_component(component));
  }
  bool ok = true;
  for (auto c : which) {
    const auto report = check_report(c, g.seed, draws);
    std::fputs(report.summary().c_str(), stdout);
    ok = ok && report.passed;
  }
  return ok ? 0 : kExitFailure;
}

int cmd_fetch(const GlobalOptions& g, const std::string& url, const std::string& md5) {
  if (g.data_dir.empty()) throw UsageError("fetch-data needs --data-dir (or ACTGRAD_DATA_DIR)");
  fetch_cifar(g.data_dir, url, md5);
  std::printf("CIFAR-10 batches ready in %s\n", g.data_dir.c_str());
  return 0;
}

int cmd_synth(const GlobalOptions& g) {
  if (g.data_dir.empty()) throw UsageError("synth-data needs --data-dir (or ACTGRAD_DATA_DIR)");
  write_synthetic_cifar_dir(g.data_dir, g.seed);
  std::printf("synthetic CIFAR-format batches written to %s\n", g.data_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trainable activation functions for CNNs: training, comparison, PSO and gradient checks"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  if (const char* env = std::getenv("ACTGRAD_DATA_DIR")) g.data_dir = env;
  app.add_option("--data-dir", g.data_dir, "CIFAR-10 binary batch directory (default: $ACTGRAD_DATA_DIR)");
  app.add_option("--out-dir", g.out_dir, "Where metrics, manifests and checkpoints go")->capture_default_str();
  app.add_option("--seed", g.seed, "Global seed, split into per-component seeds")->capture_default_str();

  const std::vector<std::string> sizes{"small", "middle", "large"};
  const std::vector<std::string> acts{"relu", "fourier", "lc", "sigmoid", "tanh", "linear"};

  TrainOptions t;
  auto* train = app.add_subcommand("train", "Train one model with RMSProp and write metrics.csv, manifest.json, best.actg");
  train->add_option("--size", t.size)->check(CLI::IsMember(sizes))->capture_default_str();
  train->add_option("--activation", t.activation)->check(CLI::IsMember(acts))->capture_default_str();
  train->add_option("--epochs", t.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--batch-size", t.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr-scale", t.lr_scale, "Multiplies the staged learning rate")->check(CLI::PositiveNumber);
  train->add_option("--subset", t.subset, "Stratified training subset size (0 = all)");
  train->add_option("--val-subset", t.val_subset, "Stratified validation subset size (0 = all)");
  train->add_flag("--pretrain-ae", t.pretrain_ae, "Greedy autoencoder pretraining of the conv layers first");
  train->add_option("--pretrain-epochs", t.pretrain_epochs, "Autoencoder epochs per conv layer")->capture_default_str();
  train->add_flag("--with-baseline", t.with_baseline, "With --pretrain-ae: also train the randomly initialized twin");
  train->add_flag("--per-channel", t.per_channel, "One activation parameter set per channel");
  train->add_option("--manifest", t.manifest, "Re-run exactly from a manifest.json")->check(CLI::ExistingFile);

  std::string baseline, label = "run", compare_out;
  std::vector<std::string> variants;
  auto* compare = app.add_subcommand("compare", "Accuracy improvement of variant runs over a baseline run");
  compare->add_option("--baseline", baseline, "Baseline metrics.csv")->required();
  compare->add_option("--variant", variants, "name=path/to/metrics.csv (repeatable)");
  compare->add_option("--label", label, "Row label, e.g. Small")->capture_default_str();
  compare->add_option("--out", compare_out, "Output CSV (default: <out-dir>/improvement.csv)");

  PsoOptions p;
  auto* pso = app.add_subcommand("pso", "Train a CNN with particle swarm optimization");
  pso->add_option("--size", p.size)->check(CLI::IsMember(sizes))->capture_default_str();
  pso->add_option("--activation", p.activation)->check(CLI::IsMember(acts))->capture_default_str();
  pso->add_option("--particles", p.swarm.n_particles)->capture_default_str();
  pso->add_option("--generations", p.swarm.generations)->capture_default_str();
  pso->add_option("--inertia", p.swarm.inertia)->capture_default_str();
  pso->add_option("--c1", p.swarm.c1)->capture_default_str();
  pso->add_option("--c2", p.swarm.c2)->capture_default_str();
  pso->add_option("--velocity-clamp", p.swarm.velocity_clamp)->capture_default_str();
  pso->add_option("--eval-subset", p.swarm.eval_subset_size, "Fitness subset size")->capture_default_str();
  pso->add_option("--subset", p.subset, "Stratified training subset size (0 = all)");
  pso->add_option("--val-subset", p.val_subset, "Stratified validation subset size (0 = all)");
  pso->add_option("--reference-bp-accuracy", p.reference_bp_accuracy, "Backprop validation accuracy to report alongside");

  std::string component;
  std::size_t draws = 100;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  gradcheck->add_option("--component", component, "fourier|lc|conv|dense|loss|end2end|all")->required();
  gradcheck->add_option("--draws", draws)->capture_default_str();

  std::string url = kCifarUrl, md5 = kCifarMd5;
  auto* fetch = app.add_subcommand("fetch-data", "Download and verify the CIFAR-10 binary archive");
  fetch->add_option("--url", url)->capture_default_str();
  fetch->add_option("--md5", md5)->capture_default_str();

  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset in the CIFAR-10 binary layout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  std::set<std::string> given;
  if (app.count("--data-dir")) given.insert("--data-dir");

  try {
    if (*train) return cmd_train(g, t, given);
    if (*compare) return cmd_compare(g, baseline, variants, label, compare_out);
    if (*pso) return cmd_pso(g, p);
    if (*gradcheck) return cmd_gradcheck(g, component, draws);
    if (*fetch) return cmd_fetch(g, url, md5);
    if (*synth) return cmd_synth(g);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "actgrad: %s\n", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "actgrad: %s\n", e.what());
    return kExitUsage;
  } catch (const ValueError& e) {
    std::fprintf(stderr, "actgrad: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "actgrad: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
