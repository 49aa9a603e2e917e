#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "spim/linalg.hpp"
#include "spim/rng.hpp"

namespace spim {

/// Array sizes, user geometry, and noise level of one multi-user scenario.
struct ScenarioConfig {
  int n_tx = 128;
  int n_rx = 9;
  int users = 8;
  int paths = 2;
  double noise_var = 0.01;
  double theta_min = 30.0; // degrees
  double theta_max = 150.0;
  /// Fixed per-path gains shared by every user. Empty means draw them.
  std::vector<double> gains = {0.5, 0.5};
  std::uint64_t seed = 1;

  void validate() const;
  double snr_db() const;
};

struct Interval {
  double lo;
  double hi;
};

struct Sectors {
  std::vector<Interval> aoa;
  std::vector<Interval> aod;
};

struct Path {
  double aoa_deg;
  double aod_deg;
  double gain;
};

/// Per-user, per-path angles and gains. Row-major over (user, path).
class PathSet {
public:
  PathSet(int users, int paths) : users_(users), paths_(paths), data_(std::size_t(users) * paths) {}

  int users() const { return users_; }
  int paths() const { return paths_; }
  Path &at(int u, int m) { return data_[std::size_t(u) * paths_ + m]; }
  const Path &at(int u, int m) const { return data_[std::size_t(u) * paths_ + m]; }

  /// Index of the strongest path of user u (lowest index on ties).
  int strongest(int u) const;

private:
  int users_;
  int paths_;
  std::vector<Path> data_;
};

struct ChannelMatrix {
  int user = 0;
  CMatrix h; // n_rx x n_tx
};

/// ULA response, element n = exp(-j pi n sin(angle)) / sqrt(n_elements).
CVector steering_vector(int n_elements, double angle_deg);

/// Same response parameterized directly by the spatial frequency sin(angle).
CVector steering_vector_sin(int n_elements, double sin_angle);

Sectors partition_sectors(const ScenarioConfig &config);

/// Uniform angles inside each user's sector. With `gains` set, every user gets
/// exactly those gains; otherwise gains are exponential with mean 1/paths.
PathSet draw_paths(const ScenarioConfig &config, const std::optional<std::vector<double>> &gains,
                   Rng &rng);

/// H_u = A_R diag(sqrt(gamma)) A_T^H, built as a sum of rank-one outer products.
ChannelMatrix synthesize_channel(const PathSet &paths, int user, const ScenarioConfig &config);

/// The same channel assembled from explicit steering matrices; kept as an
/// independent construction for cross-checking.
CMatrix synthesize_channel_matrix_form(const PathSet &paths, int user, const ScenarioConfig &config);

std::vector<ChannelMatrix> synthesize_all(const PathSet &paths, const ScenarioConfig &config);

/// Copy of `paths` where every user keeps only its strongest path.
PathSet strongest_path_only(const PathSet &paths);

/// Dominant propagation directions recovered from a channel matrix by greedy
/// angular matching pursuit (grid search, golden-section refinement, joint
/// least-squares gain refit after each atom), followed by cyclic re-estimation
/// of each path against the residual of the others.
struct PathEstimate {
  double aoa_sin;
  double aod_sin;
  cplx gain;
};

std::vector<PathEstimate> estimate_paths(const CMatrix &h, int paths);

} // namespace spim
