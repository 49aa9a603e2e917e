#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spim/bank.hpp"
#include "spim/channel.hpp"

namespace spim {

enum class Method { spim_mo, spim_fl, wang, mmwave };

std::string to_string(Method m);
Method method_from_string(const std::string &s);

struct RateReport {
  Method method = Method::spim_mo;
  std::vector<std::vector<double>> sinr; // [valid pattern][user], linear
  std::vector<double> pattern_sum_se;    // bits/s/Hz
  double index_bits = 0.0;
  double total_se = 0.0;
};

/// Linear-receiver SINR of user u for composite precoder F = F_RF F_BB:
/// |w^H H_u F e_u|^2 / (sum_{v != u} |w^H H_u F e_v|^2 + noise_var ||w||^2).
double sinr(int u, const CMatrix &h_u, const CMatrix &precoder, const CVector &w, double noise_var);

/// sum_u log2(1 + SINR_u) for one pattern.
double pattern_sum_rate(std::span<const ChannelMatrix> channels, const CMatrix &precoder,
                        std::span<const CVector> combiners, double noise_var,
                        std::vector<double> *sinr_out = nullptr);

/// U log2 M (when enabled) plus the sum rate averaged over valid patterns.
RateReport spim_rate(const BeamformerBank &bank, std::span<const ChannelMatrix> channels,
                     double noise_var, bool include_index_bits = true);

/// Strongest-path baseline: each user keeps only its max-gain path (lowest
/// index on ties), the same design pipeline runs with M = 1, and the rate is
/// evaluated on the full channels without index bits.
RateReport mmwave_rate(const ScenarioConfig &scenario, const PathSet &paths,
                       std::span<const ChannelMatrix> channels, const DesignOptions &options,
                       double noise_var);

/// Codebook baseline with genie path angles: analog beams are the steering
/// vectors of the selected paths, and one ZF baseband computed at the
/// strongest-path pattern is reused for every pattern (only a global power
/// scalar is reapplied per pattern).
RateReport wang_rate(const ScenarioConfig &scenario, std::span<const ChannelMatrix> channels,
                     const PathSet &paths, double noise_var, BasebandNorm norm = BasebandNorm::rows,
                     bool include_index_bits = true);

/// Beamformers predicted for one pattern: the composite precoder (N_T x U)
/// and one combiner per user.
struct PredictedBeams {
  CMatrix precoder;
  std::vector<CVector> combiners;
};

using BeamPredictor =
    std::function<PredictedBeams(std::span<const ChannelMatrix>, const SpatialPattern &)>;

/// Rate of learned beamformers, averaged over all patterns like spim_rate.
RateReport predicted_rate(const BeamPredictor &predictor, std::span<const ChannelMatrix> channels,
                          int paths, double noise_var, bool include_index_bits = true);

enum class SweepKind { snr, gamma1 };

std::string to_string(SweepKind k);

struct SweepSpec {
  SweepKind kind = SweepKind::snr;
  std::vector<double> grid;
  int trials = 1;
  std::vector<Method> methods = {Method::spim_mo, Method::wang, Method::mmwave};
  bool index_bits = true;
};

struct SweepRow {
  double x = 0.0;
  Method method = Method::spim_mo;
  double mean_se = 0.0;
  double std_se = 0.0;
  int trials = 0;
  std::uint64_t seed = 0;
};

/// Rates of every requested method for one Monte Carlo trial at grid point x.
/// Channel angles depend on (seed, trial) only, so all grid points share the
/// same geometry per trial.
std::vector<double> trial_rates(const SweepSpec &spec, double x, int trial,
                                const ScenarioConfig &scenario, const DesignOptions &options,
                                const BeamPredictor *predictor);

/// Trials run in parallel (options.workers threads); means are pairwise sums
/// in trial order, so the table does not depend on the worker count.
std::vector<SweepRow> sweep(const SweepSpec &spec, const ScenarioConfig &scenario,
                            const DesignOptions &options, const BeamPredictor *predictor = nullptr);

/// Single-threaded reference for sweep.
std::vector<SweepRow> sweep_serial(const SweepSpec &spec, const ScenarioConfig &scenario,
                                   const DesignOptions &options,
                                   const BeamPredictor *predictor = nullptr);

/// Scenario at one sweep point (noise level or gain pair substituted).
ScenarioConfig scenario_at(const SweepSpec &spec, const ScenarioConfig &scenario, double x);

/// Pairwise (cascade) summation.
double pairwise_sum(std::span<const double> v);

std::string sweep_csv(const std::vector<SweepRow> &rows);

} // namespace spim
