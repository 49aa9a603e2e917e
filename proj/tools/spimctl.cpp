#include <CLI11.hpp>
#include <iostream>

#include "spim/commands.hpp"
#include "spim/errors.hpp"

using namespace spim;

int main(int argc, char **argv) {
  CLI::App app{"SPIM-MIMO hybrid beamforming and federated training simulator"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  std::string preset = "paper";
  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string out;
  app.add_option("--preset", preset, "Base preset")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  app.add_option("--config", config_path, "JSON config overlaid on the preset");
  auto *seed_opt = app.add_option("--seed", seed, "Root seed");
  auto *workers_opt = app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  auto *out_opt = app.add_option("--out", out, "Output directory");

  auto *design = app.add_subcommand("design", "Design the beamformer bank of one realization");
  auto *sweep_cmd = app.add_subcommand("sweep", "Monte Carlo spectral-efficiency sweep");
  std::string kind = "snr";
  sweep_cmd->add_option("--kind", kind, "Sweep variable")
      ->check(CLI::IsMember({"snr", "gamma1"}))
      ->capture_default_str();
  auto *dataset = app.add_subcommand("dataset", "Generate every user's local dataset");
  auto *train = app.add_subcommand("train", "Train the beam predictor");
  std::string mode = "fl";
  std::string data_dir;
  train->add_option("--mode", mode, "fl or cl")->check(CLI::IsMember({"fl", "cl"}))->capture_default_str();
  train->add_option("--data", data_dir, "Dataset directory (default: --out)");
  auto *overhead = app.add_subcommand("overhead", "Transmission overhead of FL and CL");
  auto *eval = app.add_subcommand("eval", "Spectral efficiency of a trained model on validation data");
  std::string model_path;
  eval->add_option("--data", data_dir, "Dataset directory (default: --out)");
  eval->add_option("--model", model_path, "Checkpoint (default: <out>/model_fl.bin)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  return run_guarded([&] {
    RunConfig cfg = make_preset(preset);
    if (!config_path.empty()) {
      cfg = apply_config_file(cfg, config_path);
    }
    if (*seed_opt) {
      cfg.seed = seed;
    }
    if (*workers_opt) {
      cfg.workers = workers;
    }
    if (*out_opt) {
      cfg.out = out;
    }
    cfg.finalize();

    std::vector<std::string> files;
    if (design->parsed()) {
      files = cmd_design(cfg);
    } else if (sweep_cmd->parsed()) {
      files = cmd_sweep(cfg, kind == "snr" ? SweepKind::snr : SweepKind::gamma1);
    } else if (dataset->parsed()) {
      files = cmd_dataset(cfg);
    } else if (train->parsed()) {
      files = cmd_train(cfg, mode == "fl" ? TrainMode::fl : TrainMode::cl, data_dir);
    } else if (overhead->parsed()) {
      files = cmd_overhead(cfg);
    } else if (eval->parsed()) {
      files = cmd_eval(cfg, data_dir, model_path);
    }
    for (const auto &f : files) {
      std::cout << cfg.out << "/" << f << "\n";
    }
  });
}
