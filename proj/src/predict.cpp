#include "spim/predict.hpp"

#include <cmath>
#include <exception>
#include <map>
#include <memory>

#include "spim/errors.hpp"

namespace spim {

PredictedBeams assemble_prediction(const Model<float> &model,
                                   const std::vector<std::vector<float>> &inputs) {
  const NetworkArch &a = model.arch;
  const int users = static_cast<int>(inputs.size());
  if (a.output_dim != static_cast<int>(label_size(a.n_tx, users, a.n_rx))) {
    throw ConfigError("predictor: model output size does not match the user count");
  }
  PredictedBeams beams;
  beams.precoder = CMatrix::Zero(a.n_tx, users);
  for (int u = 0; u < users; ++u) {
    const std::vector<float> y = forward<float>(model, inputs[u], nullptr, Mode::infer);
    const DecodedLabel d = decode_label(std::span<const float>(y), a.n_tx, users, a.n_rx);
    beams.precoder.col(u) = d.precoder.col(u);
    beams.combiners.push_back(d.combiner);
  }
  const double norm = beams.precoder.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw EvaluationError("predictor: degenerate predicted precoder");
  }
  beams.precoder *= std::sqrt(double(users)) / norm;
  return beams;
}

BeamPredictor make_predictor(const Model<float> &model, int users, int paths) {
  const std::size_t n_patterns = pattern_count(paths, users);
  auto shared = std::make_shared<const Model<float>>(model);
  return [shared, users, n_patterns](std::span<const ChannelMatrix> channels,
                                     const SpatialPattern &pattern) {
    if (static_cast<int>(channels.size()) != users) {
      throw InvalidInput("predictor: expected one channel per user");
    }
    const std::optional<PatternPlane> plane =
        shared->arch.channels == 4
            ? std::optional<PatternPlane>(PatternPlane{pattern.index, n_patterns})
            : std::nullopt;
    std::vector<std::vector<float>> inputs;
    for (const ChannelMatrix &h : channels) {
      inputs.push_back(build_input(h.h, plane));
    }
    return assemble_prediction(*shared, inputs);
  };
}

ValidationRates validation_rates(const Model<float> &model, std::span<const LocalDataset> datasets,
                                 std::span<const std::size_t> validation,
                                 const ScenarioConfig &scenario, const DesignOptions &options,
                                 const GenerateControls &controls, std::uint64_t seed,
                                 double noise_var, bool index_bits, int workers) {
  if (static_cast<int>(datasets.size()) != scenario.users) {
    throw ConfigError("validation: expected one dataset per user");
  }
  if (validation.empty()) {
    throw ConfigError("validation: empty validation set");
  }
  for (const LocalDataset &d : datasets) {
    if (d.samples.size() != datasets.front().samples.size()) {
      throw ConfigError("validation: user datasets differ in size");
    }
  }
  const double bits = index_bits ? scenario.users * std::log2(double(scenario.paths)) : 0.0;

  // Group validation samples by realization so each bank is designed once.
  std::map<int, std::vector<std::size_t>> by_real;
  for (const std::size_t k : validation) {
    by_real[realization_of(k, controls)].push_back(k);
  }
  std::vector<std::pair<int, std::vector<std::size_t>>> groups(by_real.begin(), by_real.end());
  std::vector<std::vector<std::pair<double, double>>> rates(groups.size());

  std::exception_ptr failure;
#pragma omp parallel for num_threads(std::max(1, workers)) schedule(dynamic)
  for (std::ptrdiff_t gi = 0; gi < std::ptrdiff_t(groups.size()); ++gi) {
    try {
      const Realization real = make_realization(scenario, options, seed, groups[gi].first);
      for (const std::size_t k : groups[gi].second) {
        const std::uint32_t p = datasets.front().samples[k].pattern;
        std::vector<std::vector<float>> inputs;
        for (const LocalDataset &d : datasets) {
          if (d.samples[k].pattern != p) {
            throw ConfigError("validation: users disagree on the pattern of sample " +
                              std::to_string(k));
          }
          inputs.push_back(d.samples[k].x);
        }
        const PatternEntry &e = real.bank.patterns[p];
        const double mo = pattern_sum_rate(real.channels, e.precoder(), e.beams.w_rf, noise_var);
        const PredictedBeams b = assemble_prediction(model, inputs);
        const double fl = pattern_sum_rate(real.channels, b.precoder, b.combiners, noise_var);
        rates[gi].push_back({mo + bits, fl + bits});
      }
    } catch (...) {
#pragma omp critical(spim_validation_failure)
      if (!failure) {
        failure = std::current_exception();
      }
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  std::vector<double> mo, fl;
  for (const auto &g : rates) {
    for (const auto &[a, b] : g) {
      mo.push_back(a);
      fl.push_back(b);
    }
  }
  ValidationRates out;
  out.samples = mo.size();
  out.spim_mo = pairwise_sum(mo) / double(mo.size());
  out.spim_fl = pairwise_sum(fl) / double(fl.size());
  return out;
}

} // namespace spim
