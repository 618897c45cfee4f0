// Acceptance checks. One criterion per invocation:
//   acceptance --criterion N
// prints "criterion N: PASS|FAIL|SKIP: detail" and exits 0, 1 or 77.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "actgrad/experiment.hpp"
#include "actgrad/gradcheck.hpp"
#include "actgrad/training.hpp"
#include "support.hpp"

using namespace actgrad;
using namespace testsupport;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return v && *v ? v : nullptr;
}

// Real data when ACTGRAD_DATA_DIR is set, otherwise the synthetic stand-in.
struct DataSource {
  fs::path dir;
  bool official;
  std::string label() const { return official ? "CIFAR-10" : "synthetic CIFAR-format data"; }
};

DataSource data_source() {
  if (const char* d = env("ACTGRAD_DATA_DIR")) return {d, true};
  return {synthetic_data_dir(), false};
}

RunManifest desk_manifest(ModelSize size, ActivationType act, std::uint64_t seed, const DataSource& src) {
  RunManifest m = RunManifest::make(size, act, seed);
  m.data_dir = src.dir.string();
  m.train_subset = 2000;
  m.val_subset = 1000;
  m.batch_size = 64;
  return m;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = true;
  for (auto c : all_check_components()) {
    const auto r = check_report(c, 1, 100);
    ok = ok && r.passed;
    detail += fmt("%s %.2e; ", std::string(to_string(c)).c_str(), r.max_error);
    if (!r.passed) std::fprintf(stderr, "%s\n", r.summary().c_str());
  }
  const double elapsed = seconds_since(t0);
  ok = ok && elapsed < 120.0;
  return {ok ? Status::pass : Status::fail,
          "max relative error per component (limit 1e-4): " + detail + fmt("runtime %.1fs (limit 120s)", elapsed)};
}

Outcome one_hot_equivalence() {
  const DataSource src = data_source();
  const Dataset test = load_cifar_test(resolve_data_dir(src.dir));
  std::vector<std::size_t> idx(100);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Tensor images = test.images(idx);

  const auto candidates = LCParams::default_candidates();
  const ActivationType plain_types[] = {ActivationType::relu, ActivationType::sigmoid, ActivationType::tanh,
                                        ActivationType::linear};
  double worst = 0.0;
  std::string detail;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    Network lc = build_model(ModelConfig::standard(ModelSize::small, ActivationType::lc, 5));
    Network plain = build_model(ModelConfig::standard(ModelSize::small, plain_types[k], 99));
    for (auto& layer : lc.layers()) {
      if (auto* a = std::get_if<ActivationLayer>(&layer)) {
        for (auto& p : a->lc) {
          std::fill(p.weights().begin(), p.weights().end(), 0.0);
          p.weights()[k] = 1.0;
        }
      }
    }
    // Copy every conv and dense tensor so that only the activation differs.
    const auto source = std::as_const(lc).parameters();
    for (auto& dst : plain.parameters()) {
      const auto it = std::find_if(source.begin(), source.end(), [&](const auto& s) { return s.name == dst.name; });
      if (it == source.end()) throw std::runtime_error("no LC parameter named " + dst.name);
      std::copy(it->values.begin(), it->values.end(), dst.values.begin());
    }
    const Tensor a = forward_logits(lc, images), b = forward_logits(plain, images);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    worst = std::max(worst, diff);
    detail += fmt("%s %.1e; ", std::string(to_string(candidates[k])).c_str(), diff);
  }
  return {worst <= 1e-12 ? Status::pass : Status::fail,
          "max |logit difference| on 100 images of " + src.label() + " (limit 1e-12): " + detail};
}

Outcome fourier_fixture() {
  std::ifstream in(std::string(ACTGRAD_FIXTURE_DIR) + "/fourier_fit.json");
  if (!in) return {Status::fail, "fixture data/fixtures/fourier_fit.json missing"};
  const auto fixture = nlohmann::json::parse(in);
  const auto rank = fixture.at("rank").get<std::size_t>();
  bool ok = rank == kFourierRank;
  std::string detail = fmt("rank %zu; ", rank);
  for (auto [name, kind] : {std::pair{"sigmoid", Activation::sigmoid}, std::pair{"tanh", Activation::tanh}}) {
    const auto& fit = fixture.at("fits").at(name);
    FourierParams p(rank);
    p.constant() = fit.at("A").get<double>();
    p.omega() = fit.at("omega").get<double>();
    const auto a = fit.at("a").get<std::vector<double>>(), b = fit.at("b").get<std::vector<double>>();
    std::copy(a.begin(), a.end(), p.cos_coeffs().begin());
    std::copy(b.begin(), b.end(), p.sin_coeffs().begin());
    Tensor x({401});
    for (std::size_t i = 0; i < 401; ++i) x[i] = -4.0 + 8.0 * static_cast<double>(i) / 400.0;
    const Tensor y = fourier_forward(p, x);
    double worst = 0.0;
    for (std::size_t i = 0; i < 401; ++i) worst = std::max(worst, std::abs(y[i] - fixed_forward(kind, x[i])));
    ok = ok && worst < 0.05;
    detail += fmt("%s max abs error %.2e; ", name, worst);
  }
  return {ok ? Status::pass : Status::fail, detail + "limit 0.05 on 401 points of [-4,4]"};
}

Outcome training_smoke() {
  const DataSource src = data_source();
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (auto act : {ActivationType::relu, ActivationType::fourier, ActivationType::lc}) {
    RunManifest m = desk_manifest(ModelSize::small, act, 0, src);
    m.epochs = 5;
    const auto outcome = run_training(m, load_run_data(m));
    const double val = outcome.records.back().val_accuracy;
    ok = ok && val > 0.30;
    detail += fmt("%s %.4f; ", std::string(to_string(act)).c_str(), val);
  }
  const double elapsed = seconds_since(t0);
  ok = ok && elapsed < 600.0;
  return {ok ? Status::pass : Status::fail,
          "final val accuracy on " + src.label() + " (limit > 0.30): " + detail +
              fmt("runtime %.0fs (limit 600s)", elapsed)};
}

Outcome pso_invariants() {
  // Toy quadratic with its maximum at (1,-2).
  SwarmConfig toy;
  toy.seed = 11;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<std::vector<double>> start(toy.n_particles);
  for (auto& p : start) p = {u(rng), u(rng)};
  const auto quad = run_swarm(toy, start, [](std::span<const double> x) {
    return 1.0 / (1.0 + (x[0] - 1.0) * (x[0] - 1.0) + (x[1] + 2.0) * (x[1] + 2.0));
  });
  bool ok = quad.best_fitness > 0.99;
  std::string detail = fmt("toy quadratic best fitness %.5f (limit > 0.99); ", quad.best_fitness);

  const DataSource src = data_source();
  ScratchDir out("acceptance_pso");
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run_cli("--data-dir '" + src.dir.string() + "' --out-dir '" + out.path.string() +
                             "' --seed 0 pso --size middle --particles 10 --generations 50 --subset 2000"
                             " --val-subset 1000",
                         out.path / "log.txt");
  const double elapsed = seconds_since(t0);
  if (rc != 0) {
    return {Status::fail, detail + fmt("middle CNN run exited with %d: ", rc) + read_file(out.path / "log.txt")};
  }
  const std::string csv = read_file(out.path / "pso_history.csv");
  const auto history = read_pso_history(out.path / "pso_history.csv");
  bool well_formed = csv.starts_with(std::string(kPsoHistoryHeader) + "\n") && history.size() == 50;
  bool monotone = true;
  for (std::size_t g = 0; g < history.size(); ++g) {
    well_formed = well_formed && history[g].generation == g + 1 && history[g].best_fitness > 0.0 &&
                  history[g].best_fitness <= 1.0 && history[g].val_accuracy >= 0.0 && history[g].val_accuracy <= 1.0;
    if (g > 0) monotone = monotone && history[g].best_fitness >= history[g - 1].best_fitness;
  }
  ok = ok && well_formed && monotone && elapsed < 900.0;
  detail += fmt("middle CNN 10x50 on %s: %zu rows, %s, fitness %.4f -> %.4f, val accuracy %.4f, runtime %.0fs "
                "(limit 900s)",
                src.label().c_str(), history.size(), monotone ? "non-decreasing" : "NOT monotone",
                history.empty() ? 0.0 : history.front().best_fitness,
                history.empty() ? 0.0 : history.back().best_fitness,
                history.empty() ? 0.0 : history.back().val_accuracy, elapsed);
  return {ok ? Status::pass : Status::fail, detail};
}

Outcome autoencoder_pretraining() {
  const DataSource src = data_source();
  double pre_sum = 0.0, plain_sum = 0.0;
  std::size_t worst_violations = 0;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    RunManifest m = desk_manifest(ModelSize::middle, ActivationType::fourier, seed, src);
    m.epochs = 1;
    const RunData data = load_run_data(m);
    RunManifest pre = m;
    pre.pretrain_epochs = 5;
    const auto with = run_training(pre, data);
    const auto without = run_training(m, data);
    pre_sum += with.records[0].val_accuracy;
    plain_sum += without.records[0].val_accuracy;
    for (const auto& h : with.pretrain.layer_histories) {
      std::size_t v = 0;
      for (std::size_t i = 1; i < h.size(); ++i) v += h[i] > h[i - 1];
      worst_violations = std::max(worst_violations, v);
    }
    detail += fmt("seed %llu: %.4f vs %.4f; ", static_cast<unsigned long long>(seed), with.records[0].val_accuracy,
                  without.records[0].val_accuracy);
  }
  const bool ok = pre_sum >= plain_sum && worst_violations <= 1;
  return {ok ? Status::pass : Status::fail,
          "epoch-1 val accuracy pretrained vs random init on " + src.label() + ": " + detail +
              fmt("means %.4f vs %.4f; most MSE increases in one layer %zu (limit 1)", pre_sum / 3, plain_sum / 3,
                  worst_violations)};
}

Outcome data_layer() {
  // Byte-identical round trip of every synthetic batch file.
  const fs::path synth = synthetic_data_dir();
  ScratchDir tmp("acceptance_data");
  bool round_trip = true;
  for (const char* name : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                           "data_batch_5.bin", "test_batch.bin"}) {
    write_cifar_binary(load_cifar_binary(synth / name), tmp.path / name);
    std::ifstream a(synth / name, std::ios::binary), b(tmp.path / name, std::ios::binary);
    round_trip = round_trip && std::equal(std::istreambuf_iterator<char>(a), {}, std::istreambuf_iterator<char>(b), {});
  }
  std::string detail = std::string("synthetic round trip ") + (round_trip ? "byte-identical" : "DIFFERS");
  if (!round_trip) return {Status::fail, detail};

  const char* official = env("ACTGRAD_DATA_DIR");
  if (!official) return {Status::skip, detail + "; official class counts not checked (ACTGRAD_DATA_DIR unset)"};
  const fs::path dir = resolve_data_dir(official);
  const auto train = load_cifar_train(dir).class_counts();
  const auto test = load_cifar_test(dir).class_counts();
  bool ok = true;
  for (std::size_t k = 0; k < kNumClasses; ++k) ok = ok && train[k] == 5000 && test[k] == 1000;
  detail += fmt("; official train counts %zu..%zu, test counts %zu..%zu (want 5000 / 1000)",
                *std::min_element(train.begin(), train.end()), *std::max_element(train.begin(), train.end()),
                *std::min_element(test.begin(), test.end()), *std::max_element(test.begin(), test.end()));
  return {ok ? Status::pass : Status::fail, detail};
}

Outcome long_run() {
  if (!env("ACTGRAD_LONG_RUN")) return {Status::skip, "opt-in long run (set ACTGRAD_LONG_RUN=1 and ACTGRAD_DATA_DIR)"};
  const char* dir = env("ACTGRAD_DATA_DIR");
  if (!dir) return {Status::skip, "ACTGRAD_DATA_DIR unset; the long run needs the official data"};
  double best[2] = {0.0, 0.0};
  const ActivationType acts[2] = {ActivationType::relu, ActivationType::fourier};
  for (int i = 0; i < 2; ++i) {
    RunManifest m = RunManifest::make(ModelSize::small, acts[i], 0);
    m.data_dir = dir;
    const auto outcome = run_training(m, load_run_data(m), [&](const MetricsRecord& r) {
      std::fprintf(stderr, "[%s] epoch %d val %.4f\n", std::string(to_string(acts[i])).c_str(), r.epoch,
                   r.val_accuracy);
    });
    best[i] = best_of(outcome.records).val_accuracy;
  }
  const bool ok = std::abs(best[0] - 0.59) <= 0.03 && best[1] - best[0] >= 0.02;
  return {ok ? Status::pass : Status::fail,
          fmt("baseline val %.4f (want 0.59 +- 0.03), Fourier val %.4f, gap %.2f points (want >= 2)", best[0], best[1],
              100.0 * (best[1] - best[0]))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int criterion = 0;
  app.add_option("--criterion", criterion, "Criterion number, 1-8")->required()->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::function<Outcome()> checks[] = {gradient_oracles, one_hot_equivalence, fourier_fixture,
                                             training_smoke,   pso_invariants,      autoencoder_pretraining,
                                             data_layer,       long_run};
  Outcome out;
  try {
    out = checks[criterion - 1]();
  } catch (const std::exception& e) {
    out = {Status::fail, std::string("error: ") + e.what()};
  }
  const char* word = out.status == Status::pass ? "PASS" : out.status == Status::fail ? "FAIL" : "SKIP";
  std::printf("criterion %d: %s: %s\n", criterion, word, out.detail.c_str());
  return out.status == Status::pass ? 0 : out.status == Status::fail ? 1 : 77;
}
