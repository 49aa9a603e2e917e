#pragma once

#include <span>
#include <vector>

#include "spim/dataset.hpp"
#include "spim/metrics.hpp"
#include "spim/neural.hpp"

namespace spim {

/// Beams from one model input per user. User u's prediction supplies column
/// u of the composite precoder (scaled afterwards to ||F||_F^2 = U) and its
/// own combiner phases.
PredictedBeams assemble_prediction(const Model<float> &model,
                                   const std::vector<std::vector<float>> &inputs);

/// Beam predictor backed by a trained model; each user feeds its clean
/// channel plus the pattern plane when the model has one.
BeamPredictor make_predictor(const Model<float> &model, int users, int paths);

struct ValidationRates {
  double spim_mo = 0.0;
  double spim_fl = 0.0;
  std::size_t samples = 0;
};

/// Mean SE over validation samples. Sample k of every user shares one
/// realization and pattern: the model-based reference uses that realization's
/// bank, the learned one feeds each user's sample-k input to the model. Both
/// are evaluated on the clean channels at `noise_var`.
ValidationRates validation_rates(const Model<float> &model, std::span<const LocalDataset> datasets,
                                 std::span<const std::size_t> validation,
                                 const ScenarioConfig &scenario, const DesignOptions &options,
                                 const GenerateControls &controls, std::uint64_t seed,
                                 double noise_var, bool index_bits = true, int workers = 1);

} // namespace spim
