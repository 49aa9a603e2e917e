#include "spim/manifold.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "spim/errors.hpp"

namespace spim {

void AltMinConfig::validate() const {
  if (max_outer_iters < 1 || max_cg_iters < 1) {
    throw ConfigError("altmin: iteration limits must be >= 1");
  }
  if (!(grad_tol > 0.0) || !(obj_rel_tol > 0.0)) {
    throw ConfigError("altmin: tolerances must be positive");
  }
}

CVector optimal_precoder(const CMatrix &h) {
  if (h.size() == 0 || !all_finite(h)) {
    throw InvalidInput("optimal_precoder: empty or non-finite channel");
  }
  const Svd svd = svd_thin(h);
  if (!(svd.s(0) > 0.0)) {
    throw InvalidInput("optimal_precoder: zero channel");
  }
  CVector f = svd.V.col(0);
  Eigen::Index imax = 0;
  f.cwiseAbs().maxCoeff(&imax);
  const cplx phase = f(imax) / std::abs(f(imax));
  f *= std::conj(phase);
  f(imax) = cplx(std::abs(f(imax)), 0.0);
  return f / f.norm();
}

CVector mmse_combiner(const CMatrix &h, const CVector &f_opt, double noise_var) {
  const CVector hf = h * f_opt;
  return hf / (hf.squaredNorm() + noise_var);
}

CMatrix riemannian_grad(const CMatrix &x, const CMatrix &euclid_grad) {
  CMatrix g = euclid_grad;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mag = std::abs(x(i, j));
      if (mag == 0.0) {
        continue;
      }
      const cplx xhat = x(i, j) / mag;
      g(i, j) -= (euclid_grad(i, j) * std::conj(xhat)).real() * xhat;
    }
  }
  return g;
}

CMatrix retract(const CMatrix &x, const CMatrix &step, double modulus) {
  double scale = 1.0;
  for (int attempt = 0; attempt <= 30; ++attempt) {
    CMatrix y(x.rows(), x.cols());
    bool degenerate = false;
    for (Eigen::Index j = 0; j < x.cols() && !degenerate; ++j) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const cplx z = x(i, j) + scale * step(i, j);
        const double mag = std::abs(z);
        if (!(mag > 0.0)) {
          degenerate = true;
          break;
        }
        y(i, j) = (modulus / mag) * z;
      }
    }
    if (!degenerate) {
      return y;
    }
    scale *= 0.5;
  }
  throw DegenerateRetraction("retract: x + step vanished after 30 halvings");
}

CMatrix random_unit_modulus(int rows, int cols, double modulus, Rng &rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  CMatrix x(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      x(i, j) = std::polar(modulus, phase(rng));
    }
  }
  return x;
}

CMatrix covariance_lambda_y(const CMatrix &h, const CMatrix &f_rf, const CVector &f_bb,
                            double noise_var) {
  const CVector s = h * (f_rf * f_bb);
  CMatrix lambda = s * s.adjoint();
  lambda.diagonal().array() += noise_var;
  // Exact Hermitian symmetry.
  return 0.5 * (lambda + lambda.adjoint());
}

namespace {

double inner(const CMatrix &a, const CMatrix &b) {
  return (a.conjugate().cwiseProduct(b)).sum().real();
}

// Weighted constant-modulus fit min (t - X b)^H L (t - X b); L == nullptr
// means the identity weight.
class ModulusFit {
public:
  ModulusFit(const CVector &target, const CMatrix *weight, double modulus)
      : target_(target), weight_(weight), modulus_(modulus) {}

  CVector apply_weight(const CVector &v) const { return weight_ ? CVector(*weight_ * v) : v; }

  double objective(const CMatrix &x, const CVector &b) const {
    const CVector r = target_ - x * b;
    return std::max(0.0, r.dot(apply_weight(r)).real());
  }

  CMatrix euclid_grad(const CMatrix &x, const CVector &b) const {
    const CVector r = target_ - x * b;
    return -2.0 * apply_weight(r) * b.adjoint();
  }

  CVector solve_baseband(const CMatrix &x) const {
    CMatrix lx(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      lx.col(j) = apply_weight(x.col(j));
    }
    const CMatrix gram = x.adjoint() * lx;
    const CVector rhs = lx.adjoint() * target_;
    try {
      return solve_hermitian(0.5 * (gram + gram.adjoint()), rhs);
    } catch (const SingularMatrix &) {
      // Rank-deficient analog matrix (duplicate columns or more columns than
      // rows): minimum-norm least squares.
      return gram.completeOrthogonalDecomposition().solve(rhs);
    }
  }

  // Riemannian conjugate gradient on X for fixed b. Returns the final
  // Riemannian gradient norm.
  double conjugate_gradient(CMatrix &x, const CVector &b, const AltMinConfig &cfg) const {
    constexpr double kArmijo = 1e-4;
    const int restart = 10 * static_cast<int>(x.size());
    double f = objective(x, b);
    CMatrix g = riemannian_grad(x, euclid_grad(x, b));
    CMatrix d = -g;
    double gg = inner(g, g);
    for (int k = 0; k < cfg.max_cg_iters; ++k) {
      if (std::sqrt(gg) < cfg.grad_tol) {
        break;
      }
      double slope = inner(g, d);
      if (!(slope < 0.0)) {
        d = -g;
        slope = -gg;
      }
      double step = 1.0;
      bool accepted = false;
      CMatrix x_new;
      double f_new = f;
      for (int ls = 0; ls < 60; ++ls) {
        x_new = retract(x, step * d, modulus_);
        f_new = objective(x_new, b);
        if (f_new <= f + kArmijo * step * slope) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        break;
      }
      // Expand while Armijo holds and the objective keeps falling.
      if (step == 1.0) {
        for (int grow = 0; grow < 30; ++grow) {
          const double trial = 2.0 * step;
          CMatrix x_try = retract(x, trial * d, modulus_);
          const double f_try = objective(x_try, b);
          if (!(f_try <= f + kArmijo * trial * slope) || !(f_try < f_new)) {
            break;
          }
          step = trial;
          x_new = std::move(x_try);
          f_new = f_try;
        }
      }
      const CMatrix g_new = riemannian_grad(x_new, euclid_grad(x_new, b));
      const CMatrix g_old_t = riemannian_grad(x_new, g);
      const CMatrix d_old_t = riemannian_grad(x_new, d);
      const double gg_new = inner(g_new, g_new);
      double beta = std::max(0.0, inner(g_new, g_new - g_old_t) / gg);
      if ((k + 1) % restart == 0) {
        beta = 0.0;
      }
      d = -g_new + beta * d_old_t;
      x = std::move(x_new);
      f = f_new;
      g = g_new;
      gg = gg_new;
    }
    return std::sqrt(gg);
  }

  double modulus() const { return modulus_; }

private:
  const CVector &target_;
  const CMatrix *weight_;
  double modulus_;
};

AltMinSolution run_alt_min(const CVector &target, const CMatrix *weight, int columns,
                           double modulus, const AltMinConfig &config,
                           const std::optional<CMatrix> &init) {
  config.validate();
  if (columns < 1) {
    throw InvalidInput("alt-min: columns must be >= 1");
  }
  if (!all_finite(target)) {
    throw InvalidInput("alt-min: non-finite target");
  }
  const int rows = static_cast<int>(target.size());
  ModulusFit fit(target, weight, modulus);

  AltMinSolution sol;
  if (init) {
    if (init->rows() != rows || init->cols() != columns) {
      throw InvalidInput("alt-min: initial analog matrix has wrong shape");
    }
    sol.analog = retract(*init, CMatrix::Zero(rows, columns), modulus);
  } else {
    Rng rng = make_rng(config.seed, {stream::kAltMin, std::uint64_t(rows), std::uint64_t(columns)});
    sol.analog = random_unit_modulus(rows, columns, modulus, rng);
  }

  const double scale = std::max(fit.objective(CMatrix::Zero(rows, columns), CVector::Zero(columns)),
                                std::numeric_limits<double>::min());
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 0; it < config.max_outer_iters; ++it) {
    sol.baseband = fit.solve_baseband(sol.analog);
    // Stationarity is judged after the b update; the CG exit gradient only
    // certifies X for the previous b.
    if (it > 0 && riemannian_grad(sol.analog, fit.euclid_grad(sol.analog, sol.baseband)).norm() <
                      config.grad_tol) {
      break;
    }
    fit.conjugate_gradient(sol.analog, sol.baseband, config);
    const double obj = fit.objective(sol.analog, sol.baseband);
    sol.objective_history.push_back(obj);
    sol.outer_iters = it + 1;
    if (obj <= 1e-30 * scale) {
      break;
    }
    if (std::isfinite(previous) && previous - obj <= config.obj_rel_tol * previous) {
      break;
    }
    previous = obj;
  }
  // Re-fit b to the final analog matrix; roundoff in the normal equations
  // may lose by ulps, in which case the CG-stage baseband is kept.
  const CVector refit = fit.solve_baseband(sol.analog);
  const double refit_obj = fit.objective(sol.analog, refit);
  if (refit_obj <= sol.objective_history.back()) {
    sol.baseband = refit;
    sol.objective_history.back() = refit_obj;
  }
  // Canonical column phase: first entry real positive, absorbed by b.
  for (int j = 0; j < columns; ++j) {
    const cplx lead = sol.analog(0, j);
    const cplx rot = lead / std::abs(lead);
    sol.analog.col(j) *= std::conj(rot);
    sol.analog(0, j) = cplx(modulus, 0.0);
    sol.baseband(j) *= rot;
  }
  sol.residual = std::sqrt(sol.objective_history.back());
  return sol;
}

} // namespace

PrecoderSolution alt_min_precoder(const CVector &f_opt, int columns, const AltMinConfig &config,
                                  const std::optional<CMatrix> &init) {
  const int n_tx = static_cast<int>(f_opt.size());
  PrecoderSolution sol =
      run_alt_min(f_opt, nullptr, columns, 1.0 / std::sqrt(double(n_tx)), config, init);
  const double power = (sol.analog * sol.baseband).norm();
  if (!(power > 0.0)) {
    throw InvalidInput("alt_min_precoder: zero beamformer, cannot normalize");
  }
  sol.baseband *= std::sqrt(double(columns)) / power;
  return sol;
}

CombinerSolution alt_min_combiner(const CVector &w_mmse, const CMatrix &lambda_y, int columns,
                                  const AltMinConfig &config, const std::optional<CMatrix> &init) {
  const int n_rx = static_cast<int>(w_mmse.size());
  if (lambda_y.rows() != n_rx || lambda_y.cols() != n_rx) {
    throw InvalidInput("alt_min_combiner: covariance shape mismatch");
  }
  if (!(condition_number(lambda_y) < kMaxCondition)) {
    throw SingularMatrix("alt_min_combiner: covariance is singular");
  }
  Eigen::LLT<CMatrix> llt(lambda_y);
  if (llt.info() != Eigen::Success) {
    throw SingularMatrix("alt_min_combiner: covariance is not positive definite");
  }
  return run_alt_min(w_mmse, &lambda_y, columns, 1.0 / std::sqrt(double(n_rx)), config, init);
}

} // namespace spim
