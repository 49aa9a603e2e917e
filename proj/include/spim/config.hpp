#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spim/bank.hpp"
#include "spim/channel.hpp"
#include "spim/dataset.hpp"
#include "spim/neural.hpp"

namespace spim {

/// Everything a spimctl command needs. JSON on disk; unknown keys are
/// rejected.
struct RunConfig {
  std::string preset = "paper";
  ScenarioConfig scenario;
  double snr_db = 20.0; // design / evaluation SNR
  DesignOptions design;
  GenerateControls data;
  double validation_fraction = 0.2;
  NetworkArch arch;
  TrainConfig train;
  int rounds = 50;
  std::vector<double> snr_grid;
  std::vector<double> gamma1_grid;
  int trials = 1000;
  bool index_bits = true;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out = "out";

  /// Applies seed/workers/SNR to the nested structs and checks every field.
  void finalize();
  /// Architecture with input and output sizes filled in from the scenario.
  NetworkArch network() const;
  /// |levels| U N G.
  std::uint64_t total_samples() const;
};

RunConfig paper_preset();
RunConfig desk_preset();
/// "paper" or "desk"; anything else is a ConfigError.
RunConfig make_preset(const std::string &name);

/// Overlays a JSON document (text) on `base`.
RunConfig apply_config_text(RunConfig base, const std::string &text);
RunConfig apply_config_file(RunConfig base, const std::string &path);

std::string config_json(const RunConfig &config);
/// FNV-1a over config_json, as 16 hex digits.
std::string config_hash(const RunConfig &config);

} // namespace spim
