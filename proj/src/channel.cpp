#include "spim/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "spim/errors.hpp"

namespace spim {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

} // namespace

void ScenarioConfig::validate() const {
  if (users < 1) {
    throw ConfigError("scenario: users must be >= 1");
  }
  if (paths < 1) {
    throw ConfigError("scenario: paths must be >= 1");
  }
  if (n_tx < 1 || n_rx < 1) {
    throw ConfigError("scenario: antenna counts must be >= 1");
  }
  if (users * paths > n_tx) {
    throw ConfigError("scenario: users * paths must not exceed n_tx");
  }
  if (!(theta_min < theta_max)) {
    throw ConfigError("scenario: theta_min must be below theta_max");
  }
  if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
    throw ConfigError("scenario: noise_var must be positive and finite");
  }
  if (!gains.empty()) {
    if (static_cast<int>(gains.size()) != paths) {
      throw ConfigError("scenario: gains must have one entry per path");
    }
    for (const double g : gains) {
      if (!(g >= 0.0) || !std::isfinite(g)) {
        throw ConfigError("scenario: gains must be finite and non-negative");
      }
    }
  }
}

double ScenarioConfig::snr_db() const { return -10.0 * std::log10(noise_var); }

int PathSet::strongest(int u) const {
  int best = 0;
  for (int m = 1; m < paths_; ++m) {
    if (at(u, m).gain > at(u, best).gain) {
      best = m;
    }
  }
  return best;
}

CVector steering_vector_sin(int n_elements, double sin_angle) {
  CVector a(n_elements);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_elements));
  for (int n = 0; n < n_elements; ++n) {
    a(n) = scale * std::polar(1.0, -std::numbers::pi * n * sin_angle);
  }
  return a;
}

CVector steering_vector(int n_elements, double angle_deg) {
  return steering_vector_sin(n_elements, std::sin(angle_deg * kDeg));
}

Sectors partition_sectors(const ScenarioConfig &config) {
  Sectors s;
  const double width = (config.theta_max - config.theta_min) / config.users;
  for (int u = 0; u < config.users; ++u) {
    const double lo = config.theta_min + width * u;
    const double hi = (u + 1 == config.users) ? config.theta_max : lo + width;
    s.aoa.push_back({lo, hi});
    s.aod.push_back({lo, hi});
  }
  return s;
}

PathSet draw_paths(const ScenarioConfig &config, const std::optional<std::vector<double>> &gains,
                   Rng &rng) {
  if (gains) {
    if (static_cast<int>(gains->size()) != config.paths) {
      throw ConfigError("draw_paths: gains length must equal paths");
    }
    for (const double g : *gains) {
      if (!(g >= 0.0)) {
        throw ConfigError("draw_paths: gains must be non-negative");
      }
    }
  }
  const Sectors sectors = partition_sectors(config);
  PathSet out(config.users, config.paths);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  for (int u = 0; u < config.users; ++u) {
    const Interval ra = sectors.aoa[u];
    const Interval rd = sectors.aod[u];
    for (int m = 0; m < config.paths; ++m) {
      Path &p = out.at(u, m);
      p.aoa_deg = ra.lo + (ra.hi - ra.lo) * unit(rng);
      p.aod_deg = rd.lo + (rd.hi - rd.lo) * unit(rng);
      p.gain = gains ? (*gains)[m] : expo(rng) / config.paths;
    }
  }
  return out;
}

ChannelMatrix synthesize_channel(const PathSet &paths, int user, const ScenarioConfig &config) {
  ChannelMatrix ch;
  ch.user = user;
  ch.h = CMatrix::Zero(config.n_rx, config.n_tx);
  for (int m = 0; m < paths.paths(); ++m) {
    const Path &p = paths.at(user, m);
    const CVector ar = steering_vector(config.n_rx, p.aoa_deg);
    const CVector at = steering_vector(config.n_tx, p.aod_deg);
    ch.h.noalias() += std::sqrt(p.gain) * ar * at.adjoint();
  }
  return ch;
}

CMatrix synthesize_channel_matrix_form(const PathSet &paths, int user, const ScenarioConfig &config) {
  const int m_paths = paths.paths();
  CMatrix ar(config.n_rx, m_paths);
  CMatrix at(config.n_tx, m_paths);
  CMatrix sigma = CMatrix::Zero(m_paths, m_paths);
  for (int m = 0; m < m_paths; ++m) {
    const Path &p = paths.at(user, m);
    ar.col(m) = steering_vector(config.n_rx, p.aoa_deg);
    at.col(m) = steering_vector(config.n_tx, p.aod_deg);
    sigma(m, m) = std::sqrt(p.gain);
  }
  return ar * sigma * at.adjoint();
}

std::vector<ChannelMatrix> synthesize_all(const PathSet &paths, const ScenarioConfig &config) {
  std::vector<ChannelMatrix> out;
  out.reserve(paths.users());
  for (int u = 0; u < paths.users(); ++u) {
    out.push_back(synthesize_channel(paths, u, config));
  }
  return out;
}

PathSet strongest_path_only(const PathSet &paths) {
  PathSet out(paths.users(), 1);
  for (int u = 0; u < paths.users(); ++u) {
    out.at(u, 0) = paths.at(u, paths.strongest(u));
  }
  return out;
}

namespace {

// Golden-section maximization of a unimodal-near-the-peak function on [lo, hi].
template <typename F> double golden_max(F &&f, double lo, double hi, int iters = 60) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return fc >= fd ? c : d;
}

template <typename F> double grid_then_refine(F &&f, int n_elements) {
  const int grid = 16 * n_elements + 1;
  const double step = 2.0 / (grid - 1);
  int best = 0;
  double best_val = -1.0;
  for (int k = 0; k < grid; ++k) {
    const double v = f(-1.0 + step * k);
    if (v > best_val) {
      best_val = v;
      best = k;
    }
  }
  const double centre = -1.0 + step * best;
  const double lo = std::max(-1.0, centre - step);
  const double hi = std::min(1.0, centre + step);
  const double refined = golden_max(f, lo, hi);
  return f(refined) >= best_val ? refined : centre;
}

} // namespace

std::vector<PathEstimate> estimate_paths(const CMatrix &h, int paths) {
  if (paths < 1) {
    throw InvalidInput("estimate_paths: paths must be >= 1");
  }
  const int n_rx = static_cast<int>(h.rows());
  const int n_tx = static_cast<int>(h.cols());
  std::vector<PathEstimate> found;
  std::vector<CVector> ar_atoms, at_atoms;

  auto fit_atom = [&](const CMatrix &residual, std::size_t slot) {
    const double s_tx = grid_then_refine(
        [&](double s) { return (residual * steering_vector_sin(n_tx, s)).squaredNorm(); }, n_tx);
    const CVector g = residual * steering_vector_sin(n_tx, s_tx);
    const double s_rx = grid_then_refine(
        [&](double s) { return std::norm(steering_vector_sin(n_rx, s).dot(g)); }, n_rx);
    if (slot == found.size()) {
      found.push_back({});
      ar_atoms.emplace_back();
      at_atoms.emplace_back();
    }
    found[slot] = {s_rx, s_tx, cplx(0.0)};
    ar_atoms[slot] = steering_vector_sin(n_rx, s_rx);
    at_atoms[slot] = steering_vector_sin(n_tx, s_tx);
  };

  // Joint least-squares refit of all gains; returns h minus the model.
  auto refit_gains = [&]() {
    const auto k = static_cast<Eigen::Index>(found.size());
    CMatrix gram(k, k);
    CVector rhs(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      rhs(i) = ar_atoms[i].dot(h * at_atoms[i]);
      for (Eigen::Index j = 0; j < k; ++j) {
        gram(i, j) = ar_atoms[i].dot(ar_atoms[j]) * at_atoms[j].dot(at_atoms[i]);
      }
    }
    const CVector gains = gram.completeOrthogonalDecomposition().solve(rhs);
    CMatrix residual = h;
    for (Eigen::Index i = 0; i < k; ++i) {
      found[i].gain = gains(i);
      residual.noalias() -= gains(i) * ar_atoms[i] * at_atoms[i].adjoint();
    }
    return residual;
  };

  CMatrix residual = h;
  for (int m = 0; m < paths; ++m) {
    fit_atom(residual, found.size());
    residual = refit_gains();
  }

  // Cyclic re-estimation: each path is re-fitted against h minus the others.
  if (paths > 1) {
    double last = residual.squaredNorm();
    for (int sweep = 0; sweep < 20; ++sweep) {
      for (int m = 0; m < paths; ++m) {
        const std::vector<PathEstimate> saved_found = found;
        const auto saved_ar = ar_atoms;
        const auto saved_at = at_atoms;
        const CMatrix own = residual + found[m].gain * ar_atoms[m] * at_atoms[m].adjoint();
        fit_atom(own, m);
        CMatrix next = refit_gains();
        if (next.squaredNorm() <= residual.squaredNorm()) {
          residual = std::move(next);
        } else {
          found = saved_found;
          ar_atoms = saved_ar;
          at_atoms = saved_at;
        }
      }
      const double now = residual.squaredNorm();
      if (last - now <= 1e-12 * std::max(last, h.squaredNorm() * 1e-300)) {
        break;
      }
      last = now;
    }
  }
  return found;
}

} // namespace spim
