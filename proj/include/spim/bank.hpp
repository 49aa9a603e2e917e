#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spim/channel.hpp"
#include "spim/linalg.hpp"
#include "spim/manifold.hpp"

namespace spim {

/// Upper bound on M^U accepted by enumerate_patterns.
inline constexpr std::size_t kMaxPatterns = std::size_t(1) << 20;

/// One joint path choice across users. `index` and `paths` are 0-based;
/// user 0 is the most significant mixed-radix digit.
struct SpatialPattern {
  std::size_t index = 0;
  std::vector<int> paths;
};

std::size_t pattern_count(int paths, int users);
std::vector<SpatialPattern> enumerate_patterns(int paths, int users);
SpatialPattern pattern_from_index(std::size_t index, int paths, int users);

/// One-hot selection vector b with b[path] = 1.
RVector selection_vector(int paths, int path);

/// How the analog matrices are seeded before alternating minimization.
enum class AnalogInit {
  random, // i.i.d. uniform phases
  path,   // steering vectors of the channel's dominant directions
};

/// How the rows/columns of the zero-forcing baseband are normalized before
/// the global power scalar.
enum class BasebandNorm {
  rows,
  columns,
};

struct DesignOptions {
  AltMinConfig altmin;
  AnalogInit init = AnalogInit::path;
  BasebandNorm norm = BasebandNorm::rows;
  int workers = 1;
};

/// Per-user solutions covering all M paths.
struct UserDesign {
  CVector f_opt;
  PrecoderSolution precoder; // analog: N_T x M
  CVector w_mmse;
  CMatrix lambda_y;
  CombinerSolution combiner; // analog: N_R x M
};

struct PatternBeams {
  CMatrix f_rf;              // N_T x U
  std::vector<CVector> w_rf; // U entries of length N_R
};

struct ZfResult {
  CMatrix f_bb;           // normalized U x U
  double zf_residual = 0; // ||H_eff H_eff^{-1} - I||_F before normalization
  double condition = 0;
};

struct PatternEntry {
  SpatialPattern pattern;
  PatternBeams beams;
  CMatrix f_bb;
  double zf_residual = 0.0;
  double condition = 0.0;
  double power = 0.0; // ||F_RF F_BB||_F^2
  bool valid = false;
  std::string diagnostic;

  CMatrix precoder() const { return beams.f_rf * f_bb; }
};

struct BeamformerBank {
  int n_tx = 0;
  int n_rx = 0;
  int users = 0;
  int paths = 0;
  std::vector<UserDesign> designs;
  std::vector<PatternEntry> patterns;

  std::size_t valid_count() const;
};

/// Column i_u of each user's analog precoder/combiner, by direct copy.
PatternBeams select_pattern(std::span<const CMatrix> analog_precoders,
                            std::span<const CMatrix> analog_combiners,
                            const SpatialPattern &pattern);

/// The same selection through multiplication with one-hot vectors.
PatternBeams select_pattern_by_vector(std::span<const CMatrix> analog_precoders,
                                      std::span<const CMatrix> analog_combiners,
                                      const SpatialPattern &pattern);

/// Row u = w_u^H H_u F_RF.
CMatrix effective_channel(std::span<const ChannelMatrix> channels, std::span<const CVector> combiners,
                          const CMatrix &f_rf);

/// F_BB = H_eff^{-1}, normalized (rows or columns to unit norm), then scaled
/// globally so ||F_RF F_BB||_F^2 = U. Throws SingularMatrix carrying
/// `pattern_index` when H_eff is ill-conditioned.
ZfResult baseband_zf(const CMatrix &h_eff, const CMatrix &f_rf, std::size_t pattern_index,
                     BasebandNorm norm = BasebandNorm::rows);

/// Per-user design: f_opt, precoder alt-min, w_MMSE, Lambda_y, combiner alt-min.
UserDesign design_user(const CMatrix &h, int paths, double noise_var, const DesignOptions &options,
                       int user);

/// Full bank: per-user designs (parallel over users), then selection, effective
/// channel, and ZF for every pattern (parallel over patterns). Singular
/// patterns are kept but marked invalid with a diagnostic.
BeamformerBank build_bank(const ScenarioConfig &scenario, std::span<const ChannelMatrix> channels,
                          const DesignOptions &options);

/// Serial reference of build_bank; identical results.
BeamformerBank build_bank_serial(const ScenarioConfig &scenario,
                                 std::span<const ChannelMatrix> channels,
                                 const DesignOptions &options);

} // namespace spim
