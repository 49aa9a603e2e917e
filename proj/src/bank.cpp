#include "spim/bank.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "spim/errors.hpp"

namespace spim {

std::size_t pattern_count(int paths, int users) {
  if (paths < 1 || users < 1) {
    throw ConfigError("patterns: paths and users must be >= 1");
  }
  std::size_t n = 1;
  for (int u = 0; u < users; ++u) {
    n *= static_cast<std::size_t>(paths);
    if (n > kMaxPatterns) {
      throw ConfigError("patterns: paths^users exceeds 2^20");
    }
  }
  return n;
}

SpatialPattern pattern_from_index(std::size_t index, int paths, int users) {
  SpatialPattern p;
  p.index = index;
  p.paths.assign(users, 0);
  for (int u = users - 1; u >= 0; --u) {
    p.paths[u] = static_cast<int>(index % paths);
    index /= paths;
  }
  return p;
}

std::vector<SpatialPattern> enumerate_patterns(int paths, int users) {
  const std::size_t n = pattern_count(paths, users);
  std::vector<SpatialPattern> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(pattern_from_index(i, paths, users));
  }
  return out;
}

RVector selection_vector(int paths, int path) {
  RVector b = RVector::Zero(paths);
  b(path) = 1.0;
  return b;
}

std::size_t BeamformerBank::valid_count() const {
  std::size_t n = 0;
  for (const auto &p : patterns) {
    n += p.valid ? 1 : 0;
  }
  return n;
}

PatternBeams select_pattern(std::span<const CMatrix> analog_precoders,
                            std::span<const CMatrix> analog_combiners,
                            const SpatialPattern &pattern) {
  const int users = static_cast<int>(pattern.paths.size());
  PatternBeams beams;
  beams.f_rf.resize(analog_precoders[0].rows(), users);
  for (int u = 0; u < users; ++u) {
    beams.f_rf.col(u) = analog_precoders[u].col(pattern.paths[u]);
    beams.w_rf.push_back(analog_combiners[u].col(pattern.paths[u]));
  }
  return beams;
}

PatternBeams select_pattern_by_vector(std::span<const CMatrix> analog_precoders,
                                      std::span<const CMatrix> analog_combiners,
                                      const SpatialPattern &pattern) {
  const int users = static_cast<int>(pattern.paths.size());
  PatternBeams beams;
  beams.f_rf.resize(analog_precoders[0].rows(), users);
  for (int u = 0; u < users; ++u) {
    const int m = static_cast<int>(analog_precoders[u].cols());
    const CVector b = selection_vector(m, pattern.paths[u]).cast<cplx>();
    beams.f_rf.col(u) = analog_precoders[u] * b;
    beams.w_rf.push_back(analog_combiners[u] * b);
  }
  return beams;
}

CMatrix effective_channel(std::span<const ChannelMatrix> channels, std::span<const CVector> combiners,
                          const CMatrix &f_rf) {
  const auto users = static_cast<Eigen::Index>(channels.size());
  CMatrix h_eff(users, f_rf.cols());
  for (Eigen::Index u = 0; u < users; ++u) {
    h_eff.row(u) = combiners[u].adjoint() * channels[u].h * f_rf;
  }
  return h_eff;
}

ZfResult baseband_zf(const CMatrix &h_eff, const CMatrix &f_rf, std::size_t pattern_index,
                     BasebandNorm norm) {
  ZfResult out;
  out.condition = condition_number(h_eff);
  if (!(out.condition < kMaxCondition)) {
    throw SingularMatrix("baseband_zf: effective channel of pattern " +
                             std::to_string(pattern_index + 1) + " is singular",
                         pattern_index);
  }
  CMatrix f_bb = inverse(h_eff);
  const auto users = h_eff.rows();
  out.zf_residual = (h_eff * f_bb - CMatrix::Identity(users, users)).norm();
  if (norm == BasebandNorm::rows) {
    for (Eigen::Index u = 0; u < users; ++u) {
      f_bb.row(u) /= f_bb.row(u).norm();
    }
  } else {
    for (Eigen::Index u = 0; u < users; ++u) {
      f_bb.col(u) /= f_bb.col(u).norm();
    }
  }
  const double power = (f_rf * f_bb).squaredNorm();
  f_bb *= std::sqrt(double(users) / power);
  out.f_bb = std::move(f_bb);
  return out;
}

UserDesign design_user(const CMatrix &h, int paths, double noise_var, const DesignOptions &options,
                       int user) {
  UserDesign d;
  AltMinConfig cfg = options.altmin;
  cfg.seed = derive_seed(options.altmin.seed, {std::uint64_t(user)});

  std::optional<CMatrix> tx_init, rx_init;
  if (options.init == AnalogInit::path) {
    auto est = estimate_paths(h, paths);
    std::stable_sort(est.begin(), est.end(), [](const PathEstimate &a, const PathEstimate &b) {
      return a.aod_sin < b.aod_sin;
    });
    tx_init = CMatrix(h.cols(), paths);
    rx_init = CMatrix(h.rows(), paths);
    for (int m = 0; m < paths; ++m) {
      tx_init->col(m) = steering_vector_sin(static_cast<int>(h.cols()), est[m].aod_sin);
      rx_init->col(m) = steering_vector_sin(static_cast<int>(h.rows()), est[m].aoa_sin);
    }
  }

  d.f_opt = optimal_precoder(h);
  d.precoder = alt_min_precoder(d.f_opt, paths, cfg, tx_init);
  d.w_mmse = mmse_combiner(h, d.f_opt, noise_var);
  d.lambda_y = covariance_lambda_y(h, d.precoder.analog, d.precoder.baseband, noise_var);
  d.combiner = alt_min_combiner(d.w_mmse, d.lambda_y, paths, cfg, rx_init);
  return d;
}

namespace {

PatternEntry design_pattern(const BeamformerBank &bank, std::span<const ChannelMatrix> channels,
                            std::span<const CMatrix> precoders, std::span<const CMatrix> combiners,
                            std::size_t index, BasebandNorm norm) {
  PatternEntry e;
  e.pattern = pattern_from_index(index, bank.paths, bank.users);
  e.beams = select_pattern(precoders, combiners, e.pattern);
  const CMatrix h_eff = effective_channel(channels, e.beams.w_rf, e.beams.f_rf);
  try {
    ZfResult zf = baseband_zf(h_eff, e.beams.f_rf, index, norm);
    e.f_bb = std::move(zf.f_bb);
    e.zf_residual = zf.zf_residual;
    e.condition = zf.condition;
    e.power = (e.beams.f_rf * e.f_bb).squaredNorm();
    e.valid = true;
  } catch (const SingularMatrix &err) {
    e.valid = false;
    e.condition = condition_number(h_eff);
    e.diagnostic = err.what();
  }
  return e;
}

BeamformerBank build_bank_impl(const ScenarioConfig &scenario, std::span<const ChannelMatrix> channels,
                               const DesignOptions &options, int workers) {
  if (static_cast<int>(channels.size()) != scenario.users) {
    throw InvalidInput("build_bank: expected one channel per user");
  }
  BeamformerBank bank;
  bank.n_tx = scenario.n_tx;
  bank.n_rx = scenario.n_rx;
  bank.users = scenario.users;
  bank.paths = scenario.paths;
  const std::size_t n_patterns = pattern_count(scenario.paths, scenario.users);

  bank.designs.resize(scenario.users);
  std::exception_ptr failure;
#pragma omp parallel for num_threads(workers) schedule(static)
  for (int u = 0; u < scenario.users; ++u) {
    try {
      bank.designs[u] =
          design_user(channels[u].h, scenario.paths, scenario.noise_var, options, u);
    } catch (...) {
#pragma omp critical(spim_bank_failure)
      if (!failure) {
        failure = std::current_exception();
      }
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }

  std::vector<CMatrix> precoders, combiners;
  for (const auto &d : bank.designs) {
    precoders.push_back(d.precoder.analog);
    combiners.push_back(d.combiner.analog);
  }
  bank.patterns.resize(n_patterns);
  const auto n = static_cast<long long>(n_patterns);
#pragma omp parallel for num_threads(workers) schedule(static)
  for (long long i = 0; i < n; ++i) {
    bank.patterns[i] =
        design_pattern(bank, channels, precoders, combiners, std::size_t(i), options.norm);
  }
  return bank;
}

} // namespace

BeamformerBank build_bank(const ScenarioConfig &scenario, std::span<const ChannelMatrix> channels,
                          const DesignOptions &options) {
  return build_bank_impl(scenario, channels, options, std::max(1, options.workers));
}

BeamformerBank build_bank_serial(const ScenarioConfig &scenario,
                                 std::span<const ChannelMatrix> channels,
                                 const DesignOptions &options) {
  return build_bank_impl(scenario, channels, options, 1);
}

} // namespace spim
