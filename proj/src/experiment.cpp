#include "sdsc/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "sdsc/checkpoint.hpp"
#include "sdsc/error.hpp"
#include "sdsc/preserve.hpp"

namespace sdsc {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and rejects any it was not asked about.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T value{};
    get(key, value);
    out = value;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + where_ + "." + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string shortest(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::filesystem::path require_path(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("data.") + what + " is required for this data source");
  if (!std::filesystem::exists(p)) throw ConfigError(std::string("data.") + what + " does not exist: " + p);
  return p;
}

std::unique_ptr<Model> fresh_model(const RunConfig& config) {
  Rng rng(config.seed);
  auto model = build_model(config.model_spec(), rng, config.compression.initial_bits);
  model->seed = config.seed;
  return model;
}

double quantized_bytes(const Model& model) { return model_bytes(model.byte_inventory(true)); }

}  // namespace

const char* mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::kBaseline: return "baseline";
    case RunMode::kUnsafe: return "unsafe";
    case RunMode::kSafe: return "safe";
  }
  return "?";
}

RunMode parse_mode(const std::string& name) {
  if (name == "baseline") return RunMode::kBaseline;
  if (name == "unsafe") return RunMode::kUnsafe;
  if (name == "safe") return RunMode::kSafe;
  throw ConfigError("unknown mode '" + name + "' (expected baseline, unsafe or safe)");
}

ModelSpec RunConfig::model_spec() const {
  if (task == "vision") return cnn;
  return decoder;
}

CompressionConfig RunConfig::effective_compression() const {
  CompressionConfig c = compression;
  c.seed = seed;
  switch (mode) {
    case RunMode::kBaseline:
      c.quantize = false;
      c.alpha = 0.0;
      c.gamma = 0.0;
      c.lambda = 0.0;
      c.prune = false;
      c.guard = false;
      break;
    case RunMode::kUnsafe:
      c.lambda = 0.0;
      c.guard = false;
      break;
    case RunMode::kSafe:
      break;
  }
  return c;
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  ObjectReader top(j, "config");
  std::string mode = mode_name(c.mode);
  top.get("task", c.task);
  top.get("mode", mode);
  c.mode = parse_mode(mode);
  top.get("seed", c.seed);
  top.get("out_dir", c.out_dir);
  top.get("checkpoint", c.checkpoint);
  if (c.task != "vision" && c.task != "text") throw ConfigError("task must be 'vision' or 'text', got '" + c.task + "'");
  if (c.task == "text") c.data.n_train = 600, c.data.n_test = 150;

  if (const json* d = top.child("data")) {
    ObjectReader r(*d, "data");
    r.get("source", c.data.source);
    r.get("n_train", c.data.n_train);
    r.get("n_test", c.data.n_test);
    r.get("label_noise", c.data.label_noise);
    r.get("seed", c.data.seed);
    r.get("train_images", c.data.train_images);
    r.get("train_labels", c.data.train_labels);
    r.get("test_images", c.data.test_images);
    r.get("test_labels", c.data.test_labels);
    r.get("names_path", c.data.names_path);
    r.get("test_fraction", c.data.test_fraction);
    r.finish();
  }
  if (c.data.source != "synthetic" && c.data.source != "idx" && c.data.source != "names") {
    throw ConfigError("data.source must be synthetic, idx or names");
  }
  if (c.data.label_noise < 0.0 || c.data.label_noise > 1.0) throw ConfigError("data.label_noise must be in [0, 1]");
  if (!(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction must be in (0, 1)");
  }

  if (const json* m = top.child("model")) {
    ObjectReader r(*m, "model");
    if (const json* cj = r.child("cnn")) {
      ObjectReader cr(*cj, "model.cnn");
      cr.get("channels", c.cnn.channels);
      cr.get("kernel", c.cnn.kernel);
      cr.get("in_channels", c.cnn.in_channels);
      cr.get("input_size", c.cnn.input_size);
      cr.get("classes", c.cnn.classes);
      cr.finish();
    }
    if (const json* dj = r.child("decoder")) {
      ObjectReader dr(*dj, "model.decoder");
      bool ff_given = dj->contains("ff_width");
      dr.get("d_model", c.decoder.d_model);
      dr.get("n_heads", c.decoder.n_heads);
      dr.get("n_blocks", c.decoder.n_blocks);
      dr.get("context", c.decoder.context);
      dr.get("ff_width", c.decoder.ff_width);
      dr.finish();
      if (!ff_given) c.decoder.ff_width = 4 * c.decoder.d_model;
    }
    r.finish();
  }
  if (c.task == "vision") {
    c.cnn.validate();
  } else {
    c.decoder.vocab = kNamesVocab;
    c.decoder.validate();
  }

  if (const json* cj = top.child("compression")) {
    CompressionConfig& k = c.compression;
    ObjectReader r(*cj, "compression");
    r.get("alpha", k.alpha);
    r.get_optional("gamma", k.gamma);
    r.get("lambda", k.lambda);
    r.get("learning_rate", k.learning_rate);
    r.get("quant_learning_rate", k.quant_learning_rate);
    r.get("batch_size", k.batch_size);
    r.get("epochs", k.epochs);
    r.get("warmup_epochs", k.warmup_epochs);
    r.get("eval_cadence", k.eval_cadence);
    r.get_optional("restore_threshold", k.restore_threshold);
    r.get("freeze_duration", k.freeze_duration);
    r.get("b0", k.initial_bits);
    r.get("preservation_batch", k.preservation_batch);
    r.get("rho", k.rho);
    r.get_optional("fault_step", k.fault_step);
    if (const json* q = r.child("quotas")) {
      ObjectReader qr(*q, "compression.quotas");
      qr.get("saliency", k.quotas.saliency);
      qr.get("uncertainty", k.quotas.uncertainty);
      qr.get("diversity", k.quotas.diversity);
      qr.finish();
    }
    r.finish();
  }
  c.compression.seed = c.seed;
  c.compression.validate();

  if (const json* s = top.child("sweep")) {
    ObjectReader r(*s, "sweep");
    r.get("batch_size", c.sweep.batch_size);
    r.get("learning_rate", c.sweep.learning_rate);
    r.get("b0", c.sweep.b0);
    r.get("n_layers", c.sweep.n_layers);
    r.finish();
  }
  top.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& c) {
  const CompressionConfig& k = c.compression;
  json j;
  j["task"] = c.task;
  j["mode"] = mode_name(c.mode);
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["checkpoint"] = c.checkpoint;
  j["data"] = {{"source", c.data.source},
               {"n_train", c.data.n_train},
               {"n_test", c.data.n_test},
               {"label_noise", c.data.label_noise},
               {"seed", c.data.seed},
               {"train_images", c.data.train_images},
               {"train_labels", c.data.train_labels},
               {"test_images", c.data.test_images},
               {"test_labels", c.data.test_labels},
               {"names_path", c.data.names_path},
               {"test_fraction", c.data.test_fraction}};
  j["model"] = {{"cnn",
                 {{"channels", c.cnn.channels},
                  {"kernel", c.cnn.kernel},
                  {"in_channels", c.cnn.in_channels},
                  {"input_size", c.cnn.input_size},
                  {"classes", c.cnn.classes}}},
                {"decoder",
                 {{"d_model", c.decoder.d_model},
                  {"n_heads", c.decoder.n_heads},
                  {"n_blocks", c.decoder.n_blocks},
                  {"context", c.decoder.context},
                  {"ff_width", c.decoder.ff_width}}}};
  j["compression"] = {{"alpha", k.alpha},
                      {"gamma", optional_json(k.gamma)},
                      {"lambda", k.lambda},
                      {"learning_rate", k.learning_rate},
                      {"quant_learning_rate", k.quant_learning_rate},
                      {"batch_size", k.batch_size},
                      {"epochs", k.epochs},
                      {"warmup_epochs", k.warmup_epochs},
                      {"eval_cadence", k.eval_cadence},
                      {"restore_threshold", optional_json(k.restore_threshold)},
                      {"freeze_duration", k.freeze_duration},
                      {"b0", k.initial_bits},
                      {"preservation_batch", k.preservation_batch},
                      {"rho", k.rho},
                      {"fault_step", optional_json(k.fault_step)},
                      {"quotas",
                       {{"saliency", k.quotas.saliency},
                        {"uncertainty", k.quotas.uncertainty},
                        {"diversity", k.quotas.diversity}}}};
  j["sweep"] = {{"batch_size", c.sweep.batch_size},
                {"learning_rate", c.sweep.learning_rate},
                {"b0", c.sweep.b0},
                {"n_layers", c.sweep.n_layers}};
  return j;
}

Splits load_splits(const RunConfig& config) {
  const DataConfig& d = config.data;
  Splits s;
  if (config.task == "vision") {
    if (d.source == "synthetic") {
      s.train = synthetic_vision(d.n_train, d.seed, d.label_noise);
      s.test = synthetic_vision(d.n_test, d.seed + 0x9e3779b9ULL, 0.0);
    } else if (d.source == "idx") {
      s.train = load_idx_images(require_path(d.train_images, "train_images"), require_path(d.train_labels, "train_labels"));
      s.test = load_idx_images(require_path(d.test_images, "test_images"), require_path(d.test_labels, "test_labels"));
    } else {
      throw ConfigError("the vision task reads synthetic or idx data");
    }
    if (s.train.sample_shape != Shape{config.cnn.in_channels, config.cnn.input_size, config.cnn.input_size}) {
      throw ConfigError("image shape " + shape_str(s.train.sample_shape) + " does not match the CNN input");
    }
  } else {
    std::vector<std::string> names;
    std::size_t n_train = 0;
    if (d.source == "synthetic") {
      names = synthetic_names(d.n_train + d.n_test, d.seed);
      n_train = d.n_train;
    } else if (d.source == "names") {
      names = read_names(require_path(d.names_path, "names_path"));
      if (names.size() < 2) throw ConfigError("names corpus needs at least two names");
      Rng rng(d.seed);
      rng.shuffle(names);
      const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(d.test_fraction * names.size())));
      n_train = names.size() - n_test;
    } else {
      throw ConfigError("the text task reads synthetic or names data");
    }
    std::span<const std::string> all(names);
    s.train = names_dataset(all.first(n_train), config.decoder.context);
    s.test = names_dataset(all.subspan(n_train), config.decoder.context);
  }
  s.train.split = "train";
  s.test.split = "test";
  return s;
}

RunSummary cmd_train(const RunConfig& config, std::ostream& log, const TrainHooks& hooks) {
  const std::filesystem::path out = config.out_dir;
  std::filesystem::create_directories(out);
  write_text(out / "effective_config.json", run_config_to_json(config).dump(2) + "\n");

  Splits splits = load_splits(config);
  auto model = fresh_model(config);
  const CompressionConfig cc = config.effective_compression();

  std::ofstream csv(out / "metrics.csv", std::ios::binary);
  if (!csv) throw Error("cannot write " + (out / "metrics.csv").string());
  write_metrics_header(csv);
  TrainHooks wired = hooks;
  wired.on_metrics = [&](const MetricsRecord& r) {
    write_metrics_row(csv, r);
    csv.flush();
    if (hooks.on_metrics) hooks.on_metrics(r);
  };

  TrainResult result = train_compress(*model, splits.train, splits.test, cc, std::nullopt, wired);
  save_checkpoint(*model, out / "model.ckpt");
  if (result.pset) save_preservation_set(*result.pset, out / "pset.txt");

  RunSummary s;
  s.mode = config.mode;
  s.test_metric = result.test_metric;
  s.q_bits = current_q(*model);
  s.model_bytes = model_bytes(model->byte_inventory());
  s.quantized_bytes = quantized_bytes(*model);
  s.pruned = result.metrics.empty() ? 0 : result.metrics.back().pruned_count;
  s.restored = result.metrics.empty() ? 0 : result.metrics.back().restored_count;

  json summary = {{"mode", mode_name(s.mode)},         {"test_metric", s.test_metric},
                  {"q_bits", s.q_bits},                {"model_bytes", s.model_bytes},
                  {"quantized_bytes", s.quantized_bytes}, {"pruned", s.pruned},
                  {"restored", s.restored},            {"gamma", result.gamma}};
  write_text(out / "summary.json", summary.dump(2) + "\n");

  const char* metric = model->task() == TaskKind::kClassification ? "test accuracy (%)" : "test loss (nats)";
  log << mode_name(s.mode) << ": " << metric << " " << fixed(s.test_metric, 3) << ", Q " << fixed(s.q_bits, 1)
      << " bits, model " << fixed(s.model_bytes, 0) << " bytes (quantized layers " << fixed(s.quantized_bytes, 0)
      << "), pruned " << s.pruned << ", restored " << s.restored << "\n";
  return s;
}

PreservationSet cmd_preserve(const RunConfig& config, std::ostream& log) {
  const std::filesystem::path out = config.out_dir;
  std::filesystem::create_directories(out);
  write_text(out / "effective_config.json", run_config_to_json(config).dump(2) + "\n");
  Splits splits = load_splits(config);

  std::unique_ptr<Model> model;
  if (!config.checkpoint.empty()) {
    model = load_checkpoint(config.checkpoint);
  } else {
    model = fresh_model(config);
    CompressionConfig warm = config.effective_compression();
    warm.epochs = std::max<std::size_t>(1, warm.warmup_epochs);
    warm.warmup_epochs = warm.epochs;
    warm.prune = false;
    warm.guard = false;
    warm.eval_cadence = std::size_t{1} << 40;
    train_compress(*model, splits.train, splits.test, warm);
  }
  model->trained = true;
  const CompressionConfig& cc = config.compression;
  PreservationSet pset = build_preservation_set(*model, splits.train, cc.rho, cc.quotas, config.seed);
  save_preservation_set(pset, out / "pset.txt");
  log << "preservation set: " << pset.size() << " of " << splits.train.size() << " samples (saliency "
      << pset.count(Provenance::kSaliency) << ", uncertainty " << pset.count(Provenance::kUncertainty)
      << ", diversity " << pset.count(Provenance::kDiversity) << ") -> " << (out / "pset.txt").string() << "\n";
  return pset;
}

std::vector<RunSummary> cmd_compare(const RunConfig& config, std::ostream& log) {
  const std::filesystem::path out = config.out_dir;
  std::vector<RunSummary> rows;
  for (RunMode mode : {RunMode::kBaseline, RunMode::kUnsafe, RunMode::kSafe}) {
    RunConfig c = config;
    c.mode = mode;
    c.out_dir = (out / mode_name(mode)).string();
    rows.push_back(cmd_train(c, log));
  }
  const double base_bytes = rows[0].model_bytes;
  const double base_q = rows[0].quantized_bytes;
  std::ostringstream csv;
  csv << "mode,test_metric,model_bytes,bytes_ratio,quantized_bytes,quantized_ratio\n";
  log << "\nmode        test_metric   model_bytes   ratio   quantized_bytes   ratio\n";
  for (const RunSummary& r : rows) {
    const double ratio = r.model_bytes / base_bytes;
    const double qratio = r.quantized_bytes / base_q;
    csv << mode_name(r.mode) << ',' << shortest(r.test_metric) << ',' << shortest(r.model_bytes) << ','
        << shortest(ratio) << ',' << shortest(r.quantized_bytes) << ',' << shortest(qratio) << '\n';
    log << std::left << std::setw(12) << mode_name(r.mode) << std::right << std::setw(11) << fixed(r.test_metric, 3)
        << std::setw(14) << fixed(r.model_bytes, 0) << std::setw(8) << fixed(ratio, 3) << std::setw(18)
        << fixed(r.quantized_bytes, 0) << std::setw(8) << fixed(qratio, 3) << "\n";
  }
  std::filesystem::create_directories(out);
  write_text(out / "comparison.csv", csv.str());
  return rows;
}

void cmd_sweep(const RunConfig& config, std::ostream& log, std::size_t threads) {
  struct Cell {
    std::size_t batch_size;
    double learning_rate;
    float b0;
    std::size_t n_layers;
  };
  const CompressionConfig& k = config.compression;
  const std::size_t base_layers = config.task == "vision" ? config.cnn.channels.size() : config.decoder.n_blocks;
  auto axis = [](const auto& values, auto fallback) {
    using T = decltype(fallback);
    return values.empty() ? std::vector<T>{fallback} : std::vector<T>(values.begin(), values.end());
  };
  std::vector<Cell> cells;
  for (std::size_t bs : axis(config.sweep.batch_size, k.batch_size)) {
    for (double lr : axis(config.sweep.learning_rate, k.learning_rate)) {
      for (float b0 : axis(config.sweep.b0, k.initial_bits)) {
        for (std::size_t nl : axis(config.sweep.n_layers, base_layers)) cells.push_back({bs, lr, b0, nl});
      }
    }
  }

  std::vector<RunConfig> configs;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    RunConfig c = config;
    c.seed = config.seed + i;
    c.compression.seed = c.seed;
    c.compression.batch_size = cells[i].batch_size;
    c.compression.learning_rate = cells[i].learning_rate;
    c.compression.initial_bits = cells[i].b0;
    if (config.task == "vision") {
      std::vector<std::size_t> ch;
      for (std::size_t l = 0; l < cells[i].n_layers; ++l) {
        ch.push_back(l < config.cnn.channels.size() ? config.cnn.channels[l] : ch.back() * 2);
      }
      c.cnn.channels = ch;
      c.cnn.validate();
    } else {
      c.decoder.n_blocks = cells[i].n_layers;
      c.decoder.validate();
    }
    c.compression.validate();
    c.out_dir = (std::filesystem::path(config.out_dir) / ("cell_" + std::to_string(i))).string();
    configs.push_back(std::move(c));
  }

  std::vector<RunSummary> results(cells.size());
  std::vector<std::string> logs(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        std::ostringstream cell_log;
        results[i] = cmd_train(configs[i], cell_log);
        logs[i] = cell_log.str();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(std::max<std::size_t>(threads, 1), cells.size()); ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::ostringstream csv;
  csv << "cell,batch_size,learning_rate,b0,n_layers,seed,test_metric,q_bits,model_bytes,quantized_bytes\n";
  double sums[8] = {};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    const RunSummary& r = results[i];
    log << "cell " << i << ": " << logs[i];
    csv << i << ',' << c.batch_size << ',' << shortest(c.learning_rate) << ',' << shortest(c.b0) << ',' << c.n_layers
        << ',' << configs[i].seed << ',' << shortest(r.test_metric) << ',' << shortest(r.q_bits) << ','
        << shortest(r.model_bytes) << ',' << shortest(r.quantized_bytes) << '\n';
    const double row[8] = {static_cast<double>(c.batch_size), c.learning_rate, c.b0, static_cast<double>(c.n_layers),
                           r.test_metric, r.q_bits, r.model_bytes, r.quantized_bytes};
    for (int j = 0; j < 8; ++j) sums[j] += row[j];
  }
  const double n = static_cast<double>(cells.size());
  csv << "mean," << shortest(sums[0] / n) << ',' << shortest(sums[1] / n) << ',' << shortest(sums[2] / n) << ','
      << shortest(sums[3] / n) << ",," << shortest(sums[4] / n) << ',' << shortest(sums[5] / n) << ','
      << shortest(sums[6] / n) << ',' << shortest(sums[7] / n) << '\n';
  std::filesystem::create_directories(config.out_dir);
  write_text(std::filesystem::path(config.out_dir) / "sweep.csv", csv.str());
  log << "sweep: " << cells.size() << " cells, mean test metric " << fixed(sums[4] / n, 3) << ", mean bytes "
      << fixed(sums[6] / n, 0) << "\n";
}

std::vector<float> quantized_weight_values(const Model& model) {
  std::vector<float> out;
  for (const QuantizedParam* qp : model.quantized()) {
    if (model.quantization_enabled) {
      auto q = qp->quantized_values();
      out.insert(out.end(), q.begin(), q.end());
    } else {
      out.insert(out.end(), qp->weights().data().begin(), qp->weights().data().end());
    }
  }
  return out;
}

std::vector<HistogramBin> weight_histogram(const std::vector<float>& values) {
  constexpr std::size_t kBins = 101;
  std::vector<HistogramBin> bins(kBins);
  if (values.empty()) return bins;
  double limit = 0.0;
  for (float v : values) limit = std::max(limit, std::abs(static_cast<double>(v)));
  const double width = limit > 0.0 ? 2.0 * limit / kBins : 0.0;
  for (std::size_t i = 0; i < kBins; ++i) bins[i].center = -limit + (static_cast<double>(i) + 0.5) * width;
  for (float v : values) {
    std::size_t i = kBins / 2;
    if (limit > 0.0) i = std::min(kBins - 1, static_cast<std::size_t>(std::floor((v + limit) / width)));
    ++bins[i].count;
  }

  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (float v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (float v : values) var += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  std::vector<float> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double p) {
    const double pos = p * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  const double h = 0.9 * spread * std::pow(n, -0.2);
  if (h <= 0.0) {
    // Degenerate sample: fall back to the normalized histogram.
    for (HistogramBin& b : bins) b.density = width > 0.0 ? static_cast<double>(b.count) / (n * width) : 0.0;
    return bins;
  }
  const double norm = 1.0 / (n * h * std::sqrt(2.0 * M_PI));
  for (HistogramBin& b : bins) {
    double total = 0.0;
    for (float v : sorted) {
      const double z = (b.center - v) / h;
      total += std::exp(-0.5 * z * z);
    }
    b.density = total * norm;
  }
  return bins;
}

void cmd_hist(const std::filesystem::path& checkpoint, const std::filesystem::path& out_csv, std::ostream& log) {
  auto model = load_checkpoint(checkpoint);
  auto values = quantized_weight_values(*model);
  auto bins = weight_histogram(values);
  std::ostringstream csv;
  csv << "bin_center,count,density\n";
  for (const HistogramBin& b : bins) csv << shortest(b.center) << ',' << b.count << ',' << shortest(b.density) << '\n';
  if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
  write_text(out_csv, csv.str());
  log << "histogram of " << values.size() << " quantized weights -> " << out_csv.string() << "\n";
}

void cmd_size_report(const std::filesystem::path& checkpoint, const std::filesystem::path& out_csv, std::ostream& log) {
  auto model = load_checkpoint(checkpoint);
  const SizeModel sm = model->size_model();
  const ByteInventory inv = model->byte_inventory(true);
  std::ostringstream csv;
  csv << "layer,name,groups,live,mean_bits,size_bits,bytes\n";
  std::size_t cursor = 0;
  auto layers = static_cast<const Model&>(*model).quantized();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const QuantizedParam& qp = *layers[l];
    double bits_sum = 0.0;
    double bytes = 0.0;
    for (std::size_t g = 0; g < qp.groups(); ++g) {
      if (!qp.live(g)) continue;
      bits_sum += qp.bits().data()[g];
      if (model->quantization_enabled) {
        ByteInventory one;
        one.quantized_groups.push_back(inv.quantized_groups.at(cursor++));
        bytes += model_bytes(one);
      }
    }
    if (!model->quantization_enabled) bytes = 4.0 * static_cast<double>(qp.live_count() * qp.group_size());
    const double mean_bits = qp.live_count() ? bits_sum / static_cast<double>(qp.live_count()) : 0.0;
    const double z = layer_size(sm.layers[l], qp.bits().data());
    csv << l << ',' << qp.name() << ',' << qp.groups() << ',' << qp.live_count() << ',' << shortest(mean_bits) << ','
        << shortest(z) << ',' << shortest(bytes) << '\n';
    log << qp.name() << ": " << qp.live_count() << "/" << qp.groups() << " groups live, mean b " << fixed(mean_bits, 2)
        << ", z " << fixed(z, 0) << " bits, " << fixed(bytes, 0) << " bytes\n";
  }
  const double total = model_bytes(model->byte_inventory());
  log << "Q " << fixed(current_q(*model), 1) << " bits, model " << fixed(total, 0) << " bytes\n";
  if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
  write_text(out_csv, csv.str());
}

}  // namespace sdsc
