#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spim/dataset.hpp"
#include "spim/neural.hpp"

namespace spim {

inline constexpr std::uint64_t kBlockSymbols = 1000;

enum class Scheme { fl_dropout, fl_full, cl };
std::string to_string(Scheme s);

struct OverheadLedger {
  Scheme scheme = Scheme::fl_dropout;
  std::uint64_t uplink = 0;
  std::uint64_t downlink = 0;
  std::uint64_t total() const { return uplink + downlink; }
  std::uint64_t blocks() const { return (total() + kBlockSymbols - 1) / kBlockSymbols; }
};

/// 2 P T U.
std::uint64_t overhead_fl(std::uint64_t p, std::uint64_t rounds, std::uint64_t users);
/// (3 N_T N_R + 2 N_T U + N_R) D.
std::uint64_t overhead_cl(std::uint64_t n_tx, std::uint64_t n_rx, std::uint64_t users,
                          std::uint64_t samples);
/// Parameters exchanged per user and direction in one round under `mask`:
/// the conv term of param_count plus the active FC weights.
std::uint64_t active_parameters(const NetworkArch &arch, const DropoutMask &mask);

/// One user's training and validation samples.
struct UserData {
  std::span<const Sample> samples;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

struct LocalUpdate {
  std::vector<float> grad;
  BatchStats stats;
};

/// Mean gradient over samples[batch]; masked FC coordinates are zero.
LocalUpdate local_gradient(const Model<float> &model, const DropoutMask &mask,
                           std::span<const Sample> samples, std::span<const std::size_t> batch,
                           int workers = 1);

struct ServerState {
  Model<float> model;
  std::vector<float> velocity;
};

/// Averages all U updates and applies the server-side momentum step. Every
/// slot must be filled.
void aggregate(ServerState &state, std::span<const std::optional<LocalUpdate>> updates,
               const TrainConfig &config);

/// M_B indices drawn without replacement from `pool` for (seed, user, round);
/// the whole pool in order when it has at most M_B entries.
std::vector<std::size_t> draw_batch(std::span<const std::size_t> pool, int batch_size,
                                    std::uint64_t seed, int user, int round);

struct RoundLog {
  int round = 0;
  double val_mse = 0.0;
  std::uint64_t uplink = 0;   // cumulative
  std::uint64_t downlink = 0; // cumulative
  std::uint64_t blocks = 0;   // cumulative
};

struct TrainResult {
  ServerState state;
  OverheadLedger ledger;
  std::vector<RoundLog> log;
  std::vector<std::vector<float>> trajectory; // theta after each round, when requested
};

struct FlOptions {
  int rounds = 50;
  std::uint64_t seed = 1;
  int workers = 1;
  bool record_trajectory = false;
};

TrainResult train_fl(std::span<const UserData> users, const NetworkArch &arch,
                     const TrainConfig &config, const FlOptions &options);

/// Centralized baseline on the pooled data. Step t draws its batch and its
/// dropout mask exactly as user 0 of train_fl would in round t. The ledger
/// counts the dataset upload of `uploaded_samples` only.
TrainResult train_cl(const UserData &pooled, std::uint64_t uploaded_samples, int users,
                     const NetworkArch &arch, const TrainConfig &config, const FlOptions &options);

std::string training_log_csv(const std::vector<RoundLog> &log);

} // namespace spim
