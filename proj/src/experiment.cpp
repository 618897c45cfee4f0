#include "actgrad/experiment.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "actgrad/optim.hpp"
#include "actgrad/training.hpp"

namespace actgrad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const fs::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": not a number: '" + s + "'");
  }
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::ofstream open_for_write(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

// Little-endian primitives for the checkpoint container.

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  auto bits = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) return false;
  std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t> bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<decltype(bits)>(bytes[i]) << (8 * i);
  value = std::bit_cast<T>(bits);
  return true;
}

std::string capitalized(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

// ---- metrics -------------------------------------------------------------

void validate_metrics(std::span<const MetricsRecord> records) {
  int last = 0;
  for (const auto& r : records) {
    if (r.epoch <= last) throw ValueError("metrics: epochs must be strictly increasing");
    last = r.epoch;
    for (double a : {r.train_accuracy, r.val_accuracy}) {
      if (!(a >= 0.0 && a <= 1.0)) throw ValueError("metrics: accuracy outside [0,1]");
    }
    for (double l : {r.train_loss, r.val_loss}) {
      if (!(l >= 0.0)) throw ValueError("metrics: negative or NaN loss");
    }
  }
}

std::string format_metrics_row(const MetricsRecord& r, std::optional<bool> pretrained) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.3f", r.epoch, r.train_accuracy, r.train_loss,
                r.val_accuracy, r.val_loss, r.wall_seconds);
  std::string row = buf;
  if (pretrained) row += *pretrained ? ",true" : ",false";
  return row;
}

void write_metrics_csv(const fs::path& path, std::span<const MetricsRecord> records,
                       std::optional<bool> pretrained) {
  auto out = open_for_write(path);
  out << kMetricsHeader << (pretrained ? ",pretrained" : "") << '\n';
  for (const auto& r : records) out << format_metrics_row(r, pretrained) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<MetricsRecord> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metrics file not found: " + path.string());
  std::string line;
  if (!std::getline(in, line) || strip_cr(line).rfind(kMetricsHeader, 0) != 0) {
    throw DataError(path.string() + ": header does not start with '" + std::string(kMetricsHeader) + "'");
  }
  std::vector<MetricsRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() < 6) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
    MetricsRecord r;
    r.epoch = static_cast<int>(parse_double(f[0], path, line_no));
    r.train_accuracy = parse_double(f[1], path, line_no);
    r.train_loss = parse_double(f[2], path, line_no);
    r.val_accuracy = parse_double(f[3], path, line_no);
    r.val_loss = parse_double(f[4], path, line_no);
    r.wall_seconds = parse_double(f[5], path, line_no);
    records.push_back(r);
  }
  return records;
}

MetricsRecord best_of(std::span<const MetricsRecord> records) {
  if (records.empty()) throw ValueError("best_of: no metrics records");
  MetricsRecord best = records.front();
  for (const auto& r : records) {
    best.train_accuracy = std::max(best.train_accuracy, r.train_accuracy);
    best.val_accuracy = std::max(best.val_accuracy, r.val_accuracy);
    best.train_loss = std::min(best.train_loss, r.train_loss);
    best.val_loss = std::min(best.val_loss, r.val_loss);
  }
  best.epoch = records.back().epoch;
  best.wall_seconds = records.back().wall_seconds;
  return best;
}

std::string method_name(const ModelConfig& config) {
  std::string name = capitalized(to_string(config.size)) + " ";
  switch (config.activation) {
    case ActivationType::fourier: return name + "Fourier-CNN";
    case ActivationType::lc: return name + "LC-CNN";
    case ActivationType::relu: return name + "CNN";
    default: return name + capitalized(to_string(config.activation)) + "-CNN";
  }
}

std::string summary_row(const std::string& method, const MetricsRecord& best) {
  char buf[160];
  std::snprintf(buf, sizeof buf, ",%.4f,%.3f,%.4f,%.3f", best.train_accuracy, best.train_loss,
                best.val_accuracy, best.val_loss);
  return method + buf;
}

// ---- seeds ---------------------------------------------------------------

SeedPlan derive_seeds(std::uint64_t seed) {
  return {splitmix64(seed + kModelSeedOffset), splitmix64(seed + kShuffleSeedOffset),
          splitmix64(seed + kSubsetSeedOffset), splitmix64(seed + kPsoSeedOffset),
          splitmix64(seed + kPretrainSeedOffset)};
}

// ---- manifest ------------------------------------------------------------

json model_to_json(const ModelConfig& c) {
  return json{{"size", to_string(c.size)},
              {"activation", to_string(c.activation)},
              {"conv_filters", c.conv_filters},
              {"dense_width", c.dense_width},
              {"input_channels", c.input_channels},
              {"input_size", c.input_size},
              {"num_classes", c.num_classes},
              {"fourier_rank", c.fourier_rank},
              {"per_channel_activation", c.per_channel_activation},
              {"seed", c.seed}};
}

ModelConfig model_from_json(const json& j) {
  try {
    ModelConfig c;
    c.size = parse_model_size(j.at("size").get<std::string>());
    c.activation = parse_activation_type(j.at("activation").get<std::string>());
    c.conv_filters = j.at("conv_filters").get<std::array<std::size_t, 3>>();
    c.dense_width = j.at("dense_width").get<std::size_t>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.input_size = j.at("input_size").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.fourier_rank = j.at("fourier_rank").get<std::size_t>();
    c.per_channel_activation = j.at("per_channel_activation").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
}

RunManifest RunManifest::make(ModelSize size, ActivationType activation, std::uint64_t seed) {
  RunManifest m;
  m.seed = seed;
  m.model = ModelConfig::standard(size, activation, derive_seeds(seed).model);
  return m;
}

void RunManifest::validate() const {
  model.validate();
  if (epochs < 1) throw ValueError("epochs must be at least 1");
  if (batch_size < 1) throw ValueError("batch size must be at least 1");
  if (!(lr_scale > 0.0)) throw ValueError("learning-rate scale must be positive");
  if (!(rho > 0.0 && rho < 1.0)) throw ValueError("rho must lie in (0,1)");
  if (!(epsilon > 0.0)) throw ValueError("epsilon must be positive");
  if (pretrain_epochs > 0 && !(pretrain_lr > 0.0)) throw ValueError("pretraining rate must be positive");
}

json RunManifest::to_json() const {
  return json{{"model", model_to_json(model)},
              {"optimizer",
               {{"name", "rmsprop"}, {"rho", rho}, {"epsilon", epsilon}, {"lr_scale", lr_scale},
                {"epochs", epochs}, {"batch_size", batch_size}}},
              {"data", {{"dir", data_dir}, {"train_subset", train_subset}, {"val_subset", val_subset}}},
              {"pretrain", {{"epochs_per_layer", pretrain_epochs}, {"lr", pretrain_lr}}},
              {"seed", seed},
              {"git_describe", git_describe},
              {"started_at", started_at}};
}

RunManifest RunManifest::from_json(const json& j) {
  try {
    RunManifest m;
    m.model = model_from_json(j.at("model"));
    const auto& o = j.at("optimizer");
    m.rho = o.at("rho").get<double>();
    m.epsilon = o.at("epsilon").get<double>();
    m.lr_scale = o.at("lr_scale").get<double>();
    m.epochs = o.at("epochs").get<int>();
    m.batch_size = o.at("batch_size").get<std::size_t>();
    const auto& d = j.at("data");
    m.data_dir = d.at("dir").get<std::string>();
    m.train_subset = d.at("train_subset").get<std::size_t>();
    m.val_subset = d.at("val_subset").get<std::size_t>();
    const auto& p = j.at("pretrain");
    m.pretrain_epochs = p.at("epochs_per_layer").get<std::size_t>();
    m.pretrain_lr = p.at("lr").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.git_describe = j.value("git_describe", "");
    m.started_at = j.value("started_at", "");
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run manifest: ") + e.what());
  }
}

std::string git_describe() {
  std::string out;
  if (FILE* pipe = popen("git describe --always --dirty 2>/dev/null", "r")) {
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    pclose(pipe);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- checkpoints ---------------------------------------------------------

void save_checkpoint(const fs::path& path, const json& manifest, const Network& net) {
  if (!manifest.contains("model")) throw ValueError("checkpoint manifest needs a model config");
  auto out = open_for_write(path, std::ios::binary);
  const std::string text = manifest.dump();
  out.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : net.parameters()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) put_le<std::uint64_t>(out, d);
    for (double v : p.values) put_le<double>(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path.string());
  const auto fail = [&](const std::string& why) { return DataError(path.string() + ": " + why); };

  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) throw fail("not an ACTG checkpoint");
  std::uint32_t version = 0;
  if (!get_le(in, version)) throw fail("truncated header");
  if (version != kCheckpointVersion) throw fail("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t text_size = 0;
  if (!get_le(in, text_size) || text_size > (1u << 26)) throw fail("bad manifest length");
  std::string text(text_size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text_size))) throw fail("truncated manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw fail(std::string("manifest is not JSON: ") + e.what());
  }
  Network net = build_model(model_from_json(manifest.at("model")));
  auto params = net.parameters();
  std::vector<bool> filled(params.size(), false);

  while (in.peek() != std::char_traits<char>::eof()) {
    std::uint32_t name_len = 0;
    if (!get_le(in, name_len) || name_len > 4096) throw fail("bad tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw fail("truncated tensor name");
    std::uint32_t rank = 0;
    if (!get_le(in, rank) || rank > 8) throw fail("bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      if (!get_le(in, d)) throw fail("truncated dims for " + name);
    }
    const auto it = std::find_if(params.begin(), params.end(), [&](const auto& p) { return p.name == name; });
    if (it == params.end()) throw fail("unknown tensor " + name);
    if (it->shape != shape) {
      throw fail("tensor " + name + " has shape " + to_string(shape) + ", model expects " + to_string(it->shape));
    }
    for (auto& v : it->values) {
      if (!get_le(in, v)) throw fail("truncated values for " + name);
    }
    filled[static_cast<std::size_t>(it - params.begin())] = true;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!filled[i]) throw fail("missing tensor " + params[i].name);
  }
  return {std::move(manifest), std::move(net)};
}

// ---- runs ----------------------------------------------------------------

fs::path resolve_data_dir(const fs::path& dir) {
  if (cifar_files_present(dir)) return dir;
  const fs::path nested = dir / "cifar-10-batches-bin";
  if (cifar_files_present(nested)) return nested;
  return dir;
}

RunData load_run_data(const RunManifest& m) {
  if (m.data_dir.empty()) throw DataError("no data directory given (use --data-dir or ACTGRAD_DATA_DIR)");
  const fs::path dir = resolve_data_dir(m.data_dir);
  if (!cifar_files_present(dir)) {
    throw DataError("CIFAR-10 binary batches not found in " + m.data_dir +
                    " (expected data_batch_1..5.bin and test_batch.bin)");
  }
  const SeedPlan seeds = derive_seeds(m.seed);
  Dataset train = load_cifar_train(dir);
  Dataset test = load_cifar_test(dir);
  if (m.train_subset > 0) train = subset(train, m.train_subset, seeds.subset);
  if (m.val_subset > 0) test = subset(test, m.val_subset, seeds.subset);
  return {std::make_shared<const Dataset>(std::move(train)), std::make_shared<const Dataset>(std::move(test))};
}

TrainOutcome run_training(const RunManifest& m, const RunData& data, const EpochObserver& observe) {
  m.validate();
  const SeedPlan seeds = derive_seeds(m.seed);
  TrainOutcome outcome;
  const auto start = std::chrono::steady_clock::now();

  Network net = build_model(m.model);
  if (m.pretrain_epochs > 0) {
    const AePretrainConfig cfg{m.pretrain_epochs, m.pretrain_lr, m.batch_size, seeds.pretrain};
    net = pretrain_network(net, *data.train, cfg, &outcome.pretrain);
  }

  RmspropState state;
  state.rho = m.rho;
  state.epsilon = m.epsilon;
  BatchIterator batches(data.train, m.batch_size, seeds.shuffle);

  for (int epoch = 1; epoch <= m.epochs; ++epoch) {
    train_epoch(net, state, batches, epoch, lr_schedule(epoch) * m.lr_scale);
    const Evaluation tr = evaluate(net, *data.train);
    const Evaluation va = evaluate(net, *data.validation);
    MetricsRecord r{epoch,     tr.accuracy, tr.loss, va.accuracy, va.loss,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    outcome.records.push_back(r);
    if (va.accuracy > outcome.best_val_accuracy) {
      outcome.best_val_accuracy = va.accuracy;
      outcome.best_network = net;
    }
    if (observe) observe(r);
  }
  return outcome;
}

void write_run(const fs::path& dir, const RunManifest& m, const TrainOutcome& outcome,
               std::optional<bool> pretrained_column) {
  fs::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", outcome.records, pretrained_column);
  json manifest = m.to_json();
  if (!outcome.pretrain.layer_histories.empty()) manifest["pretrain"]["mse_history"] = outcome.pretrain.layer_histories;
  auto out = open_for_write(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (outcome.best_network) save_checkpoint(dir / "best.actg", manifest, *outcome.best_network);
}

// ---- compare -------------------------------------------------------------

Improvement improvement(const std::string& variant, std::span<const MetricsRecord> baseline,
                        std::span<const MetricsRecord> runs) {
  const MetricsRecord b = best_of(baseline);
  const MetricsRecord v = best_of(runs);
  return {variant, (v.val_accuracy - b.val_accuracy) * 100.0, (v.train_accuracy - b.train_accuracy) * 100.0};
}

std::string improvement_table(const std::string& label, std::span<const Improvement> rows) {
  std::string header = "size";
  for (const auto& r : rows) header += "," + r.variant + " validation (%)";
  for (const auto& r : rows) header += "," + r.variant + " training (%)";
  std::string line = label;
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.2f", r.val_points);
    line += buf;
  }
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.2f", r.train_points);
    line += buf;
  }
  return header + "\n" + line + "\n";
}

// ---- pso -----------------------------------------------------------------

void write_pso_history(const fs::path& path, std::span<const GenerationRecord> history) {
  auto out = open_for_write(path);
  out << kPsoHistoryHeader << '\n';
  char buf[96];
  for (const auto& g : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%.6f\n", g.generation, g.best_fitness, g.val_accuracy);
    out << buf;
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<GenerationRecord> read_pso_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("history file not found: " + path.string());
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != kPsoHistoryHeader) {
    throw DataError(path.string() + ": unexpected header");
  }
  std::vector<GenerationRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    rows.push_back({static_cast<std::size_t>(parse_double(f[0], path, line_no)), parse_double(f[1], path, line_no),
                    parse_double(f[2], path, line_no)});
  }
  return rows;
}

}  // namespace actgrad
