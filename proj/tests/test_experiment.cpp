#include <cmath>
#include <fstream>

#include "doctest.h"

#include "actgrad/experiment.hpp"
#include "actgrad/training.hpp"
#include "support.hpp"

using namespace actgrad;
using namespace testsupport;

namespace {

std::vector<MetricsRecord> run_of(double train_acc, double val_acc) {
  return {{1, train_acc / 2, 2.0, val_acc / 2, 2.1, 1.0}, {2, train_acc, 1.5, val_acc, 1.9, 2.0}};
}

}  // namespace

TEST_CASE("metrics csv") {
  ScratchDir tmp("metrics");
  const std::vector<MetricsRecord> rows{{1, 0.5, 1.25, 0.4, 1.5, 10.125}, {2, 0.625, 1.0, 0.5, 1.375, 20.5}};
  write_metrics_csv(tmp.path / "m.csv", rows);
  const std::string text = read_file(tmp.path / "m.csv");
  CHECK(text ==
        "epoch,train_accuracy,train_loss,val_accuracy,val_loss,wall_seconds\n"
        "1,0.500000,1.250000,0.400000,1.500000,10.125\n"
        "2,0.625000,1.000000,0.500000,1.375000,20.500\n");
  CHECK(read_metrics_csv(tmp.path / "m.csv") == rows);

  write_metrics_csv(tmp.path / "p.csv", rows, true);
  const std::string flagged = read_file(tmp.path / "p.csv");
  CHECK(flagged.starts_with(std::string(kMetricsHeader) + ",pretrained\n"));
  CHECK(flagged.find(",20.500,true\n") != std::string::npos);
  CHECK(read_metrics_csv(tmp.path / "p.csv") == rows);

  CHECK_THROWS_AS(read_metrics_csv(tmp.path / "missing.csv"), DataError);
  std::ofstream(tmp.path / "bad.csv") << "epoch,acc\n1,0.5\n";
  CHECK_THROWS_AS(read_metrics_csv(tmp.path / "bad.csv"), DataError);
  std::ofstream(tmp.path / "short.csv") << kMetricsHeader << "\n1,0.5,1.0\n";
  CHECK_THROWS_AS(read_metrics_csv(tmp.path / "short.csv"), DataError);

  const std::vector<MetricsRecord> bad_acc{{1, 1.5, 1.0, 0.5, 1.0, 1.0}};
  CHECK_THROWS_AS(validate_metrics(bad_acc), ValueError);
  const std::vector<MetricsRecord> bad_epochs{{2, 0.5, 1.0, 0.5, 1.0, 1.0}, {2, 0.5, 1.0, 0.5, 1.0, 1.0}};
  CHECK_THROWS_AS(validate_metrics(bad_epochs), ValueError);
}

TEST_CASE("summary row uses the best of each column") {
  const std::vector<MetricsRecord> rows{{1, 0.6, 1.2, 0.55, 1.9, 1}, {2, 0.7, 1.4, 0.5, 1.8, 2}};
  const MetricsRecord best = best_of(rows);
  CHECK(best.train_accuracy == 0.7);
  CHECK(best.train_loss == 1.2);
  CHECK(best.val_accuracy == 0.55);
  CHECK(best.val_loss == 1.8);
  CHECK(method_name(ModelConfig::standard(ModelSize::small, ActivationType::fourier, 0)) == "Small Fourier-CNN");
  CHECK(method_name(ModelConfig::standard(ModelSize::middle, ActivationType::relu, 0)) == "Middle CNN");
  CHECK(method_name(ModelConfig::standard(ModelSize::large, ActivationType::lc, 0)) == "Large LC-CNN");
  CHECK(summary_row("Small CNN", best) == "Small CNN,0.7000,1.200,0.5500,1.800");
}

TEST_CASE("improvement table") {
  const auto small = improvement("Fourier", run_of(0.6789, 0.5914), run_of(0.7077, 0.6423));
  CHECK(std::abs(small.val_points - 5.09) < 1e-9);
  const auto middle = improvement("Fourier", run_of(0.8355, 0.6368), run_of(0.7866, 0.6738));
  CHECK(std::abs(middle.train_points - -4.89) < 1e-9);
  const auto same = improvement("LC", run_of(0.5, 0.4), run_of(0.5, 0.4));
  CHECK(same.val_points == 0.0);

  const std::vector<Improvement> rows{small, same};
  CHECK(improvement_table("Small", rows) ==
        "size,Fourier validation (%),LC validation (%),Fourier training (%),LC training (%)\n"
        "Small,5.09,0.00,2.88,0.00\n");
}

TEST_CASE("seed plan") {
  const SeedPlan s = derive_seeds(7);
  CHECK(s.model == splitmix64(7 + kModelSeedOffset));
  CHECK(s.shuffle == splitmix64(7 + kShuffleSeedOffset));
  CHECK(s.subset == splitmix64(7 + kSubsetSeedOffset));
  CHECK(s.pso == splitmix64(7 + kPsoSeedOffset));
  CHECK(s.pretrain == splitmix64(7 + kPretrainSeedOffset));
  CHECK(s.model != s.shuffle);
}

TEST_CASE("manifest round trip") {
  RunManifest m = RunManifest::make(ModelSize::middle, ActivationType::lc, 42);
  m.model.per_channel_activation = true;
  m.train_subset = 2000;
  m.pretrain_epochs = 3;
  m.data_dir = "/data/cifar";
  m.git_describe = "abc123";
  m.started_at = "2026-01-01T00:00:00Z";
  const RunManifest back = RunManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(back.model == m.model);
  CHECK(back.model.seed == derive_seeds(42).model);

  auto j = m.to_json();
  j["optimizer"]["batch_size"] = 0;
  CHECK_THROWS_AS(RunManifest::from_json(j).validate(), ValueError);
}

TEST_CASE("checkpoint round trip") {
  ScratchDir tmp("ckpt");
  for (auto act : {ActivationType::relu, ActivationType::fourier, ActivationType::lc}) {
    auto cfg = ModelConfig::standard(ModelSize::small, act, 3);
    cfg.per_channel_activation = act == ActivationType::lc;
    Network net = build_model(cfg);
    auto flat = net.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += 1e-3 * std::sin(static_cast<double>(i));
    net.unflatten(flat);
    const nlohmann::json manifest{{"model", model_to_json(cfg)}, {"note", "x"}};
    save_checkpoint(tmp.path / "c.actg", manifest, net);
    const Checkpoint back = load_checkpoint(tmp.path / "c.actg");
    CHECK(back.manifest == manifest);
    CHECK(back.network == net);
    const Dataset data = make_synthetic_cifar(2, 1);
    const Evaluation a = evaluate(net, data), b = evaluate(back.network, data);
    CHECK(a.loss == b.loss);
    CHECK(a.accuracy == b.accuracy);
  }
  std::ofstream(tmp.path / "junk.actg") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "junk.actg"), DataError);
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "none.actg"), DataError);
}

TEST_CASE("pso history csv") {
  ScratchDir tmp("pso");
  const std::vector<GenerationRecord> h{{1, 0.5, 0.1}, {2, 0.625, 0.25}};
  write_pso_history(tmp.path / "h.csv", h);
  CHECK(read_file(tmp.path / "h.csv").starts_with(std::string(kPsoHistoryHeader) + "\n"));
  const auto back = read_pso_history(tmp.path / "h.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].generation == 2);
  CHECK(back[1].best_fitness == 0.625);
  CHECK(back[1].val_accuracy == 0.25);
}

TEST_CASE("cli") {
  const fs::path data = synthetic_data_dir();
  ScratchDir tmp("cli");
  const std::string base = "--data-dir '" + data.string() + "' ";

  SUBCASE("train writes one row per epoch") {
    const fs::path out = tmp.path / "fourier";
    REQUIRE(run_cli(base + "--out-dir '" + out.string() +
                        "' --seed 7 train --size small --activation fourier --epochs 5 --subset 2000 --val-subset 500",
                    tmp.path / "log") == 0);
    const auto rows = read_metrics_csv(out / "metrics.csv");
    CHECK(rows.size() == 5);
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(load_checkpoint(out / "best.actg").network.config().activation == ActivationType::fourier);
  }

  SUBCASE("identical flags give identical metrics, and so does the manifest") {
    const std::string flags = "--seed 3 train --size small --activation lc --epochs 2 --subset 300 --val-subset 200";
    REQUIRE(run_cli(base + "--out-dir '" + (tmp.path / "a").string() + "' " + flags) == 0);
    REQUIRE(run_cli(base + "--out-dir '" + (tmp.path / "b").string() + "' " + flags) == 0);
    REQUIRE(run_cli("--out-dir '" + (tmp.path / "c").string() + "' train --manifest '" +
                    (tmp.path / "a" / "manifest.json").string() + "'") == 0);
    const std::string a = without_last_column(read_file(tmp.path / "a" / "metrics.csv"));
    CHECK(a.size() > 100);
    CHECK(a == without_last_column(read_file(tmp.path / "b" / "metrics.csv")));
    CHECK(a == without_last_column(read_file(tmp.path / "c" / "metrics.csv")));
  }

  SUBCASE("pretraining with a baseline twin") {
    REQUIRE(run_cli(base + "--out-dir '" + tmp.path.string() +
                    "' --seed 1 train --size small --activation fourier --epochs 1 --subset 200 --val-subset 100"
                    " --pretrain-ae --pretrain-epochs 1 --with-baseline") == 0);
    const std::string pre = read_file(tmp.path / "pretrained" / "metrics.csv");
    const std::string plain = read_file(tmp.path / "baseline" / "metrics.csv");
    CHECK(pre.starts_with(std::string(kMetricsHeader) + ",pretrained\n"));
    CHECK(plain.starts_with(std::string(kMetricsHeader) + ",pretrained\n"));
    CHECK(pre.ends_with(",true\n"));
    CHECK(plain.ends_with(",false\n"));
    const auto mp = nlohmann::json::parse(read_file(tmp.path / "pretrained" / "manifest.json"));
    const auto mb = nlohmann::json::parse(read_file(tmp.path / "baseline" / "manifest.json"));
    CHECK(mp.at("seed") == mb.at("seed"));
    CHECK(mp.at("model") == mb.at("model"));
  }

  SUBCASE("usage errors") {
    CHECK(run_cli("--data-dir '" + (tmp.path / "nothing").string() + "' train --epochs 1") == 2);
    CHECK(run_cli(base + "train --epochs 1 --with-baseline") == 2);
    CHECK(run_cli(base + "train --size enormous") == 2);
    CHECK(run_cli("frobnicate") == 2);
  }

  SUBCASE("compare") {
    write_metrics_csv(tmp.path / "base.csv", run_of(0.6789, 0.5914));
    write_metrics_csv(tmp.path / "four.csv", run_of(0.7077, 0.6423));
    REQUIRE(run_cli("compare --baseline '" + (tmp.path / "base.csv").string() + "' --variant Fourier='" +
                    (tmp.path / "four.csv").string() + "' --label Small --out '" +
                    (tmp.path / "imp.csv").string() + "'") == 0);
    CHECK(read_file(tmp.path / "imp.csv") == "size,Fourier validation (%),Fourier training (%)\nSmall,5.09,2.88\n");
  }
}
