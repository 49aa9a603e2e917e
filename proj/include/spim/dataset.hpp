#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spim/bank.hpp"
#include "spim/channel.hpp"
#include "spim/linalg.hpp"
#include "spim/rng.hpp"

namespace spim {

/// Planes are stored plane-major, then row (receive antenna), then column.
struct InputShape {
  int n_rx = 0;
  int n_tx = 0;
  int planes = 3;
  std::size_t size() const { return std::size_t(n_rx) * n_tx * planes; }
};

/// Optional fourth input plane: constant index/(count-1).
struct PatternPlane {
  std::size_t index = 0;
  std::size_t count = 1;
};

std::vector<float> build_input(const CMatrix &h, const std::optional<PatternPlane> &pattern = {});

/// [vec Re F; vec Im F; arg w] with F = F_RF F_BB, column-major vec.
RVector build_label(const CMatrix &f_rf, const CMatrix &f_bb, const CVector &w_rf);
inline std::size_t label_size(int n_tx, int users, int n_rx) {
  return 2 * std::size_t(n_tx) * users + n_rx;
}

struct DecodedLabel {
  CMatrix precoder; // N_T x U
  CVector combiner; // unit modulus 1/sqrt(N_R)
};
DecodedLabel decode_label(std::span<const double> label, int n_tx, int users, int n_rx);
DecodedLabel decode_label(std::span<const float> label, int n_tx, int users, int n_rx);

/// H + E with E circular Gaussian of per-entry variance
/// ||H||_F^2 / (N_R N_T 10^(snr/10)). snr = +inf returns H unchanged.
ChannelMatrix corrupt(const ChannelMatrix &h, double snr_db, Rng &rng);

struct Sample {
  std::vector<float> x;
  std::vector<float> y;
  int user = 0;
  std::uint32_t pattern = 0; // 0-based pattern index
  float snr_db = 0.0f;
};

struct DatasetHeader {
  std::uint32_t n_rx = 0;
  std::uint32_t n_tx = 0;
  std::uint32_t planes = 0;
  std::uint32_t users = 0;
  std::uint32_t paths = 0;
  std::uint32_t count = 0;
  std::size_t input_size() const { return std::size_t(n_rx) * n_tx * planes; }
  std::size_t output_size() const { return 2 * std::size_t(n_tx) * users + n_rx; }
};

struct LocalDataset {
  DatasetHeader header;
  int user = 0;
  std::vector<Sample> samples;
};

struct GenerateControls {
  int realizations = 200;     // N
  int copies = 200;           // G
  std::vector<double> levels; // SNR_TRAIN in dB
  int planes = 4;             // 3, or 4 with the pattern plane
  std::optional<std::size_t> fixed_pattern; // required when planes == 3
  int workers = 1;
  void validate(const ScenarioConfig &scenario) const;
};

/// Multi-user channel draw number `realization` (shared by every user's
/// dataset) with its designed bank. Draws whose bank has a singular pattern
/// are redrawn.
struct Realization {
  PathSet paths{0, 0};
  std::vector<ChannelMatrix> channels;
  BeamformerBank bank;
  int attempt = 0;
};
Realization make_realization(const ScenarioConfig &scenario, const DesignOptions &options,
                             std::uint64_t seed, int realization);

/// Pattern of sample `sample` within realization r (common to all users).
std::size_t sample_pattern(std::uint64_t seed, int realization, std::size_t sample,
                           std::size_t n_patterns);

/// Realization index of sample k: k / (|levels| G).
inline int realization_of(std::size_t k, const GenerateControls &c) {
  return static_cast<int>(k / (c.levels.size() * std::size_t(c.copies)));
}

/// Local dataset of one user: for each realization, G copies per SNR level of
/// the user's own channel with independent corruption, labelled from the
/// clean bank; D_u = |levels| N G. Sample k of every user refers to the same
/// realization and pattern.
LocalDataset generate_local(int user, const ScenarioConfig &scenario, const DesignOptions &options,
                            const GenerateControls &controls, std::uint64_t seed);
/// All users at once; each realization's bank is designed only once.
std::vector<LocalDataset> generate_all(const ScenarioConfig &scenario, const DesignOptions &options,
                                       const GenerateControls &controls, std::uint64_t seed);

void save_dataset(const LocalDataset &data, const std::string &path);
LocalDataset load_dataset(const std::string &path, int user = 0);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
/// Deterministic permutation split; a pure function of (seed, count).
Split split_indices(std::size_t count, double validation_fraction, std::uint64_t seed);

} // namespace spim
