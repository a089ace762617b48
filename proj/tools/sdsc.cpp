#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sdsc/error.hpp"
#include "sdsc/experiment.hpp"

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

std::size_t sweep_threads() {
  const char* env = std::getenv("SDSC_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const long v = std::stol(env);
    if (v < 1) throw sdsc::ConfigError("SDSC_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw sdsc::ConfigError(std::string("SDSC_THREADS is not an integer: ") + env);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safety-driven self-compression of small neural networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::string mode;
  std::string out_dir;
  std::string checkpoint;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration (JSON)");
    cmd->add_option("--mode", mode, "baseline, unsafe or safe");
    cmd->add_option("--seed", seed, "base seed");
    cmd->add_option("--out-dir", out_dir, "output directory");
  };
  auto* preserve = app.add_subcommand("preserve", "build and write the preservation set");
  auto* train = app.add_subcommand("train", "train and compress one model");
  auto* compare = app.add_subcommand("compare", "baseline / unsafe / safe comparison table");
  auto* sweep = app.add_subcommand("sweep", "Cartesian sweep over the configured axes");
  auto* hist = app.add_subcommand("hist", "histogram of quantized weights from a checkpoint");
  auto* size = app.add_subcommand("size-report", "per-layer size report from a checkpoint");
  for (CLI::App* cmd : {preserve, train, compare, sweep, hist, size}) add_common(cmd);
  for (CLI::App* cmd : {hist, size}) cmd->add_option("--checkpoint", checkpoint, "checkpoint file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; malformed command lines count as config errors.
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    sdsc::RunConfig config;
    if (!config_path.empty()) config = sdsc::load_run_config(config_path);
    if (!mode.empty()) config.mode = sdsc::parse_mode(mode);
    if (!out_dir.empty()) config.out_dir = out_dir;
    for (CLI::App* cmd : app.get_subcommands()) {
      if (cmd->count("--seed") > 0) {
        config.seed = seed;
        config.compression.seed = seed;
      }
    }
    const std::filesystem::path out = config.out_dir;
    auto checkpoint_path = [&] { return checkpoint.empty() ? out / "model.ckpt" : std::filesystem::path(checkpoint); };

    if (preserve->parsed()) {
      sdsc::cmd_preserve(config, std::cout);
    } else if (train->parsed()) {
      sdsc::cmd_train(config, std::cout);
    } else if (compare->parsed()) {
      sdsc::cmd_compare(config, std::cout);
    } else if (sweep->parsed()) {
      sdsc::cmd_sweep(config, std::cout, sweep_threads());
    } else if (hist->parsed()) {
      sdsc::cmd_hist(checkpoint_path(), out / "histogram.csv", std::cout);
    } else if (size->parsed()) {
      sdsc::cmd_size_report(checkpoint_path(), out / "size_report.csv", std::cout);
    }
  } catch (const sdsc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sdsc::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return 0;
}
