#pragma once

// Run configuration and the experiment commands behind the CLI.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdsc/compressor.hpp"
#include "sdsc/data.hpp"
#include "sdsc/models.hpp"

namespace sdsc {

enum class RunMode { kBaseline, kUnsafe, kSafe };

const char* mode_name(RunMode mode);
RunMode parse_mode(const std::string& name);

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx | names
  std::size_t n_train = 2000;        // synthetic vision images / synthetic names
  std::size_t n_test = 500;
  double label_noise = 0.05;  // synthetic vision, training split only
  std::uint64_t seed = 0;
  std::string train_images, train_labels, test_images, test_labels;
  std::string names_path;
  double test_fraction = 0.1;  // names corpus
};

struct SweepAxes {
  std::vector<std::size_t> batch_size;
  std::vector<double> learning_rate;
  std::vector<float> b0;
  std::vector<std::size_t> n_layers;

  bool empty() const { return batch_size.empty() && learning_rate.empty() && b0.empty() && n_layers.empty(); }
};

struct RunConfig {
  std::string task = "vision";  // vision | text
  RunMode mode = RunMode::kSafe;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::string checkpoint;  // optional warm start for `preserve`
  DataConfig data;
  CnnSpec cnn;
  DecoderSpec decoder;
  CompressionConfig compression;
  SweepAxes sweep;

  ModelSpec model_spec() const;
  // Compression settings with the mode applied.
  CompressionConfig effective_compression() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);

struct Splits {
  Dataset train;
  Dataset test;
};
Splits load_splits(const RunConfig& config);

struct RunSummary {
  RunMode mode = RunMode::kSafe;
  double test_metric = 0.0;
  double q_bits = 0.0;
  double model_bytes = 0.0;
  double quantized_bytes = 0.0;  // quantized layers only
  std::size_t pruned = 0;
  std::size_t restored = 0;
};

// Each writes into config.out_dir. `log` receives the human-readable report.
RunSummary cmd_train(const RunConfig& config, std::ostream& log, const TrainHooks& hooks = {});
PreservationSet cmd_preserve(const RunConfig& config, std::ostream& log);
std::vector<RunSummary> cmd_compare(const RunConfig& config, std::ostream& log);
void cmd_sweep(const RunConfig& config, std::ostream& log, std::size_t threads);

struct HistogramBin {
  double center = 0.0;
  std::size_t count = 0;
  double density = 0.0;
};
// 101 bins over [-max|v|, max|v|] with a Gaussian KDE (Silverman bandwidth).
std::vector<HistogramBin> weight_histogram(const std::vector<float>& values);
// Post-quantization values of every quantized weight.
std::vector<float> quantized_weight_values(const Model& model);
void cmd_hist(const std::filesystem::path& checkpoint, const std::filesystem::path& out_csv, std::ostream& log);
void cmd_size_report(const std::filesystem::path& checkpoint, const std::filesystem::path& out_csv, std::ostream& log);

}  // namespace sdsc
