#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spim/config.hpp"
#include "spim/federated.hpp"
#include "spim/metrics.hpp"

namespace spim {

inline constexpr const char *kVersion = "1.0.0";

/// Exit codes of spimctl.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Each command writes its files into config.out and returns their names
/// (relative to config.out). A manifest_<command>.json is written as well.
std::vector<std::string> cmd_design(const RunConfig &config);
std::vector<std::string> cmd_sweep(const RunConfig &config, SweepKind kind);
std::vector<std::string> cmd_dataset(const RunConfig &config);
enum class TrainMode { fl, cl };
/// Reads user_<u>.bin from data_dir (config.out when empty).
std::vector<std::string> cmd_train(const RunConfig &config, TrainMode mode,
                                   const std::string &data_dir);
std::vector<std::string> cmd_overhead(const RunConfig &config);
/// Evaluates a checkpoint (model_fl.bin in config.out when empty) on the
/// validation split at the scenario SNR.
std::vector<std::string> cmd_eval(const RunConfig &config, const std::string &data_dir,
                                  const std::string &model_path);

/// Overhead table for the configured constants.
std::string overhead_csv(const RunConfig &config);

/// Runs `body`, mapping exceptions to exit codes and printing the message to
/// stderr.
int run_guarded(const std::function<void()> &body);

} // namespace spim
