#include "spim/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "spim/errors.hpp"

namespace spim {

std::string to_string(Method m) {
  switch (m) {
  case Method::spim_mo:
    return "spim-mo";
  case Method::spim_fl:
    return "spim-fl";
  case Method::wang:
    return "wang";
  case Method::mmwave:
    return "mmwave";
  }
  return "unknown";
}

Method method_from_string(const std::string &s) {
  if (s == "spim-mo") return Method::spim_mo;
  if (s == "spim-fl") return Method::spim_fl;
  if (s == "wang") return Method::wang;
  if (s == "mmwave") return Method::mmwave;
  throw ConfigError("unknown method '" + s + "'");
}

std::string to_string(SweepKind k) { return k == SweepKind::snr ? "snr" : "gamma1"; }

double sinr(int u, const CMatrix &h_u, const CMatrix &precoder, const CVector &w, double noise_var) {
  const Eigen::RowVectorXcd row = w.adjoint() * h_u * precoder;
  const double signal = std::norm(row(u));
  double interference = 0.0;
  for (Eigen::Index v = 0; v < row.size(); ++v) {
    if (v != u) {
      interference += std::norm(row(v));
    }
  }
  const double denom = interference + noise_var * w.squaredNorm();
  if (denom == 0.0) {
    return signal > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return signal / denom;
}

double pattern_sum_rate(std::span<const ChannelMatrix> channels, const CMatrix &precoder,
                        std::span<const CVector> combiners, double noise_var,
                        std::vector<double> *sinr_out) {
  double rate = 0.0;
  for (std::size_t u = 0; u < channels.size(); ++u) {
    const double s = sinr(static_cast<int>(u), channels[u].h, precoder, combiners[u], noise_var);
    if (sinr_out) {
      sinr_out->push_back(s);
    }
    rate += std::log2(1.0 + s);
  }
  return rate;
}

namespace {

double index_bits_for(int users, int paths) { return users * std::log2(double(paths)); }

void finish(RateReport &r) {
  if (r.pattern_sum_se.empty()) {
    throw EvaluationError("rate: no valid spatial patterns");
  }
  r.total_se = r.index_bits + pairwise_sum(r.pattern_sum_se) / double(r.pattern_sum_se.size());
}

} // namespace

RateReport spim_rate(const BeamformerBank &bank, std::span<const ChannelMatrix> channels,
                     double noise_var, bool include_index_bits) {
  RateReport r;
  r.method = Method::spim_mo;
  r.index_bits = include_index_bits ? index_bits_for(bank.users, bank.paths) : 0.0;
  for (const auto &p : bank.patterns) {
    if (!p.valid) {
      continue;
    }
    std::vector<double> s;
    r.pattern_sum_se.push_back(
        pattern_sum_rate(channels, p.precoder(), p.beams.w_rf, noise_var, &s));
    r.sinr.push_back(std::move(s));
  }
  finish(r);
  return r;
}

RateReport mmwave_rate(const ScenarioConfig &scenario, const PathSet &paths,
                       std::span<const ChannelMatrix> channels, const DesignOptions &options,
                       double noise_var) {
  ScenarioConfig single = scenario;
  single.paths = 1;
  single.gains.clear();
  single.noise_var = noise_var;
  const PathSet strongest = strongest_path_only(paths);
  const auto restricted = synthesize_all(strongest, single);
  const BeamformerBank bank = build_bank(single, restricted, options);
  RateReport r = spim_rate(bank, channels, noise_var, false);
  r.method = Method::mmwave;
  return r;
}

RateReport wang_rate(const ScenarioConfig &scenario, std::span<const ChannelMatrix> channels,
                     const PathSet &paths, double noise_var, BasebandNorm norm,
                     bool include_index_bits) {
  const int users = scenario.users;
  auto beams_for = [&](const SpatialPattern &pat) {
    PatternBeams b;
    b.f_rf.resize(scenario.n_tx, users);
    for (int u = 0; u < users; ++u) {
      const Path &p = paths.at(u, pat.paths[u]);
      b.f_rf.col(u) = steering_vector(scenario.n_tx, p.aod_deg);
      b.w_rf.push_back(steering_vector(scenario.n_rx, p.aoa_deg));
    }
    return b;
  };

  SpatialPattern strongest;
  strongest.paths.resize(users);
  for (int u = 0; u < users; ++u) {
    strongest.paths[u] = paths.strongest(u);
  }
  const PatternBeams ref = beams_for(strongest);
  CMatrix fixed_bb;
  try {
    fixed_bb = baseband_zf(effective_channel(channels, ref.w_rf, ref.f_rf), ref.f_rf, 0, norm).f_bb;
  } catch (const SingularMatrix &e) {
    throw EvaluationError(std::string("wang_rate: fixed baseband is singular: ") + e.what());
  }

  RateReport r;
  r.method = Method::wang;
  r.index_bits = include_index_bits ? index_bits_for(users, scenario.paths) : 0.0;
  for (const auto &pat : enumerate_patterns(scenario.paths, users)) {
    const PatternBeams b = beams_for(pat);
    CMatrix precoder = b.f_rf * fixed_bb;
    precoder *= std::sqrt(double(users)) / precoder.norm();
    std::vector<double> s;
    r.pattern_sum_se.push_back(pattern_sum_rate(channels, precoder, b.w_rf, noise_var, &s));
    r.sinr.push_back(std::move(s));
  }
  finish(r);
  return r;
}

RateReport predicted_rate(const BeamPredictor &predictor, std::span<const ChannelMatrix> channels,
                          int paths, double noise_var, bool include_index_bits) {
  const int users = static_cast<int>(channels.size());
  RateReport r;
  r.method = Method::spim_fl;
  r.index_bits = include_index_bits ? index_bits_for(users, paths) : 0.0;
  for (const auto &pat : enumerate_patterns(paths, users)) {
    const PredictedBeams b = predictor(channels, pat);
    std::vector<double> s;
    r.pattern_sum_se.push_back(pattern_sum_rate(channels, b.precoder, b.combiners, noise_var, &s));
    r.sinr.push_back(std::move(s));
  }
  finish(r);
  return r;
}

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (const double x : v) {
      s += x;
    }
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

ScenarioConfig scenario_at(const SweepSpec &spec, const ScenarioConfig &scenario, double x) {
  ScenarioConfig s = scenario;
  if (spec.kind == SweepKind::snr) {
    s.noise_var = std::pow(10.0, -x / 10.0);
  } else {
    if (scenario.paths != 2) {
      throw ConfigError("gamma1 sweep requires exactly two paths per user");
    }
    if (!(x >= 0.0 && x <= 1.0)) {
      throw ConfigError("gamma1 grid values must lie in [0, 1]");
    }
    s.gains = {x, 1.0 - x};
  }
  return s;
}

std::vector<double> trial_rates(const SweepSpec &spec, double x, int trial,
                                const ScenarioConfig &scenario, const DesignOptions &options,
                                const BeamPredictor *predictor) {
  const ScenarioConfig s = scenario_at(spec, scenario, x);
  Rng rng = make_rng(scenario.seed, {stream::kChannel, std::uint64_t(trial)});
  std::optional<std::vector<double>> gains;
  if (!s.gains.empty()) {
    gains = s.gains;
  }
  const PathSet paths = draw_paths(s, gains, rng);
  const auto channels = synthesize_all(paths, s);

  DesignOptions opt = options;
  opt.workers = 1;
  opt.altmin.seed = derive_seed(options.altmin.seed, {std::uint64_t(trial)});

  std::vector<double> out;
  for (const Method m : spec.methods) {
    double rate = std::numeric_limits<double>::quiet_NaN();
    try {
      switch (m) {
      case Method::spim_mo:
        rate = spim_rate(build_bank(s, channels, opt), channels, s.noise_var, spec.index_bits).total_se;
        break;
      case Method::mmwave:
        rate = mmwave_rate(s, paths, channels, opt, s.noise_var).total_se;
        break;
      case Method::wang:
        rate = wang_rate(s, channels, paths, s.noise_var, opt.norm, spec.index_bits).total_se;
        break;
      case Method::spim_fl:
        if (!predictor) {
          throw ConfigError("spim-fl requires a trained model");
        }
        rate = predicted_rate(*predictor, channels, s.paths, s.noise_var, spec.index_bits).total_se;
        break;
      }
    } catch (const EvaluationError &) {
      // Measure-zero singular geometry; the trial is dropped for this method.
    }
    out.push_back(rate);
  }
  return out;
}

namespace {

std::vector<SweepRow> reduce(const SweepSpec &spec, const ScenarioConfig &scenario,
                             const std::vector<std::vector<double>> &results) {
  std::vector<SweepRow> rows;
  const std::size_t n_methods = spec.methods.size();
  for (std::size_t gi = 0; gi < spec.grid.size(); ++gi) {
    for (std::size_t mi = 0; mi < n_methods; ++mi) {
      std::vector<double> vals;
      for (int t = 0; t < spec.trials; ++t) {
        const double v = results[gi * spec.trials + t][mi];
        if (std::isfinite(v)) {
          vals.push_back(v);
        }
      }
      SweepRow row;
      row.x = spec.grid[gi];
      row.method = spec.methods[mi];
      row.trials = static_cast<int>(vals.size());
      row.seed = scenario.seed;
      if (!vals.empty()) {
        row.mean_se = pairwise_sum(vals) / double(vals.size());
        std::vector<double> sq;
        for (const double v : vals) {
          sq.push_back((v - row.mean_se) * (v - row.mean_se));
        }
        row.std_se = vals.size() > 1 ? std::sqrt(pairwise_sum(sq) / double(vals.size() - 1)) : 0.0;
      } else {
        row.mean_se = std::numeric_limits<double>::quiet_NaN();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void check_spec(const SweepSpec &spec) {
  if (spec.grid.empty()) {
    throw ConfigError("sweep: grid must not be empty");
  }
  if (spec.trials < 1) {
    throw ConfigError("sweep: trials must be >= 1");
  }
}

} // namespace

std::vector<SweepRow> sweep(const SweepSpec &spec, const ScenarioConfig &scenario,
                            const DesignOptions &options, const BeamPredictor *predictor) {
  check_spec(spec);
  const long long tasks = static_cast<long long>(spec.grid.size()) * spec.trials;
  std::vector<std::vector<double>> results(tasks);
  std::exception_ptr failure;
#pragma omp parallel for num_threads(std::max(1, options.workers)) schedule(dynamic)
  for (long long k = 0; k < tasks; ++k) {
    try {
      const auto gi = static_cast<std::size_t>(k / spec.trials);
      const int t = static_cast<int>(k % spec.trials);
      results[k] = trial_rates(spec, spec.grid[gi], t, scenario, options, predictor);
    } catch (...) {
#pragma omp critical(spim_sweep_failure)
      if (!failure) {
        failure = std::current_exception();
      }
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  return reduce(spec, scenario, results);
}

std::vector<SweepRow> sweep_serial(const SweepSpec &spec, const ScenarioConfig &scenario,
                                   const DesignOptions &options, const BeamPredictor *predictor) {
  check_spec(spec);
  std::vector<std::vector<double>> results;
  for (std::size_t gi = 0; gi < spec.grid.size(); ++gi) {
    for (int t = 0; t < spec.trials; ++t) {
      results.push_back(trial_rates(spec, spec.grid[gi], t, scenario, options, predictor));
    }
  }
  return reduce(spec, scenario, results);
}

std::string sweep_csv(const std::vector<SweepRow> &rows) {
  std::ostringstream os;
  os << "x,method,mean_se,std_se,trials,seed\n";
  char buf[256];
  for (const auto &r : rows) {
    std::snprintf(buf, sizeof buf, "%.10g,%s,%.10g,%.10g,%d,%llu\n", r.x, to_string(r.method).c_str(),
                  r.mean_se, r.std_se, r.trials, static_cast<unsigned long long>(r.seed));
    os << buf;
  }
  return os.str();
}

} // namespace spim
