#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "spim/linalg.hpp"
#include "spim/rng.hpp"

namespace spim {

struct AltMinConfig {
  int max_outer_iters = 50;
  int max_cg_iters = 40;
  double grad_tol = 1e-6;
  double obj_rel_tol = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Constant-modulus least-squares fit: analog (fixed-modulus) times baseband
/// approximates a target vector. `objective_history` holds the objective after
/// every full outer iteration; it is non-increasing.
struct AltMinSolution {
  CMatrix analog;
  CVector baseband;
  /// Norm of target - analog * baseband before power normalization (weighted
  /// by Lambda^{1/2} for the combiner).
  double residual = 0.0;
  std::vector<double> objective_history;
  int outer_iters = 0;
};

using PrecoderSolution = AltMinSolution;
using CombinerSolution = AltMinSolution;

/// Dominant right singular vector of h with the phase of its largest-magnitude
/// entry fixed to zero.
CVector optimal_precoder(const CMatrix &h);

/// w = H f / (f^H H^H H f + noise_var).
CVector mmse_combiner(const CMatrix &h, const CVector &f_opt, double noise_var);

/// Projection of a Euclidean gradient onto the tangent space of the product
/// of circles at x (elementwise).
CMatrix riemannian_grad(const CMatrix &x, const CMatrix &euclid_grad);

/// Elementwise renormalization of x + step to the given modulus. A zero entry
/// triggers step halving (up to 30 times) before DegenerateRetraction.
CMatrix retract(const CMatrix &x, const CMatrix &step, double modulus);

CMatrix random_unit_modulus(int rows, int cols, double modulus, Rng &rng);

/// Solves min ||f_opt - F b||^2 over unit-modulus F (entries 1/sqrt(N_T)) by
/// alternating least squares on b with Riemannian CG on F, then rescales b
/// so that ||F b||^2 = columns.
PrecoderSolution alt_min_precoder(const CVector &f_opt, int columns, const AltMinConfig &config,
                                  const std::optional<CMatrix> &init = std::nullopt);

/// Lambda_y = H F b b^H F^H H^H + noise_var I.
CMatrix covariance_lambda_y(const CMatrix &h, const CMatrix &f_rf, const CVector &f_bb,
                            double noise_var);

/// Lambda-weighted counterpart of alt_min_precoder for the receive side
/// (entries 1/sqrt(N_R)); b = (W^H L W)^{-1} W^H L w_mmse.
CombinerSolution alt_min_combiner(const CVector &w_mmse, const CMatrix &lambda_y, int columns,
                                  const AltMinConfig &config,
                                  const std::optional<CMatrix> &init = std::nullopt);

} // namespace spim
