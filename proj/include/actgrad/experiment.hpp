#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "actgrad/autoencoder.hpp"
#include "actgrad/cifar.hpp"
#include "actgrad/network.hpp"
#include "actgrad/pso.hpp"

namespace actgrad {

// ---- metrics -------------------------------------------------------------

inline constexpr std::string_view kMetricsHeader =
    "epoch,train_accuracy,train_loss,val_accuracy,val_loss,wall_seconds";

struct MetricsRecord {
  int epoch = 0;
  double train_accuracy = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  double wall_seconds = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

/// Accuracies in [0,1], losses >= 0, epochs strictly increasing.
void validate_metrics(std::span<const MetricsRecord> records);

std::string format_metrics_row(const MetricsRecord& record, std::optional<bool> pretrained = {});

/// Writes the header (plus a trailing "pretrained" column when given) and one row per record.
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records,
                       std::optional<bool> pretrained = {});

/// Throws DataError for a missing file, a foreign header or a malformed row.
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

/// Best value of each column over a run: highest accuracies, lowest losses.
MetricsRecord best_of(std::span<const MetricsRecord> records);

/// "Small CNN", "Middle Fourier-CNN", "Large LC-CNN", ...
std::string method_name(const ModelConfig& config);

/// method,train_accuracy,train_loss,val_accuracy,val_loss
std::string summary_row(const std::string& method, const MetricsRecord& best);

// ---- seeds ---------------------------------------------------------------

// Every component seed is splitmix64(seed + offset).
inline constexpr std::uint64_t kModelSeedOffset = 1;
inline constexpr std::uint64_t kShuffleSeedOffset = 2;
inline constexpr std::uint64_t kSubsetSeedOffset = 3;
inline constexpr std::uint64_t kPsoSeedOffset = 4;
inline constexpr std::uint64_t kPretrainSeedOffset = 5;

struct SeedPlan {
  std::uint64_t model = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t subset = 0;
  std::uint64_t pso = 0;
  std::uint64_t pretrain = 0;
};

SeedPlan derive_seeds(std::uint64_t seed);

// ---- manifest ------------------------------------------------------------

struct RunManifest {
  ModelConfig model;
  double rho = 0.95;
  double epsilon = 1e-8;
  double lr_scale = 1.0;
  int epochs = 80;
  std::size_t batch_size = 64;
  std::string data_dir;
  /// 0 selects the whole split.
  std::size_t train_subset = 0;
  std::size_t val_subset = 0;
  std::uint64_t seed = 0;
  /// Autoencoder epochs per conv layer; 0 trains from random initialization.
  std::size_t pretrain_epochs = 0;
  double pretrain_lr = 0.001;
  std::string git_describe;
  std::string started_at;

  /// Fills model.seed from the seed plan.
  static RunManifest make(ModelSize size, ActivationType activation, std::uint64_t seed);

  void validate() const;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

nlohmann::json model_to_json(const ModelConfig& config);
ModelConfig model_from_json(const nlohmann::json& j);

/// `git describe --always --dirty`, or "unknown" outside a checkout.
std::string git_describe();
/// Current UTC time as ISO 8601.
std::string utc_timestamp();

// ---- checkpoints ---------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'A', 'C', 'T', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "ACTG", u32 version, u64 manifest length, manifest JSON, then per parameter
/// tensor: u32 name length, name, u32 rank, u64 dims, f64 values. All integers
/// and floats little-endian. The manifest must carry a "model" object.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     const Network& net);

struct Checkpoint {
  nlohmann::json manifest;
  Network network;
};

/// Rebuilds the network from the manifest's model config and fills every
/// parameter by name. Throws DataError on any structural mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- runs ----------------------------------------------------------------

/// Accepts either the directory holding the batch files or its parent with
/// the archive's cifar-10-batches-bin folder.
std::filesystem::path resolve_data_dir(const std::filesystem::path& dir);

struct RunData {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> validation;
};

/// Loads the train batches and the test batch (used as validation) and
/// applies the manifest's stratified subsets. Throws DataError when the
/// files are absent.
RunData load_run_data(const RunManifest& manifest);

struct TrainOutcome {
  std::vector<MetricsRecord> records;
  PretrainReport pretrain;
  /// Weights at the epoch with the highest validation accuracy.
  std::optional<Network> best_network;
  double best_val_accuracy = -1.0;
};

using EpochObserver = std::function<void(const MetricsRecord&)>;

/// Optional autoencoder pretraining, then the RMSProp schedule; full train
/// and validation evaluation after every epoch.
TrainOutcome run_training(const RunManifest& manifest, const RunData& data,
                          const EpochObserver& observe = {});

/// metrics.csv, manifest.json and best.actg in dir.
void write_run(const std::filesystem::path& dir, const RunManifest& manifest, const TrainOutcome& outcome,
               std::optional<bool> pretrained_column = {});

// ---- compare -------------------------------------------------------------

struct Improvement {
  std::string variant;
  /// Absolute percentage points, variant best minus baseline best.
  double val_points = 0.0;
  double train_points = 0.0;
};

Improvement improvement(const std::string& variant, std::span<const MetricsRecord> baseline,
                        std::span<const MetricsRecord> runs);

/// Header and one row: label, every variant's validation improvement, then
/// every variant's training improvement, two decimals.
std::string improvement_table(const std::string& label, std::span<const Improvement> rows);

// ---- pso -----------------------------------------------------------------

inline constexpr std::string_view kPsoHistoryHeader = "generation,best_fitness,val_accuracy";

void write_pso_history(const std::filesystem::path& path, std::span<const GenerationRecord> history);
std::vector<GenerationRecord> read_pso_history(const std::filesystem::path& path);

}  // namespace actgrad
