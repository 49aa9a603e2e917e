#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "spim/channel.hpp"
#include "spim/errors.hpp"
#include "spim/manifold.hpp"

using namespace spim;
using testing_util::random_cmatrix;
using testing_util::random_cvector;

namespace {

constexpr int kGrid = 721;

double grid_phase(int k) { return 2.0 * std::numbers::pi * k / (kGrid - 1); }

// Exhaustive search over both entry phases of a 2-element constant-modulus
// vector x; the optimal scalar b is closed form for every x.
double grid_residual(const CVector &t, const CMatrix &weight, double modulus) {
  double best = std::numeric_limits<double>::infinity();
  const double tlt = t.dot(weight * t).real();
  CVector x(2);
  for (int a = 0; a < kGrid; ++a) {
    x(0) = std::polar(modulus, grid_phase(a));
    for (int c = 0; c < kGrid; ++c) {
      x(1) = std::polar(modulus, grid_phase(c));
      const CVector lx = weight * x;
      const double xlx = x.dot(lx).real();
      const double cross = std::norm(lx.dot(t));
      best = std::min(best, tlt - cross / xlx);
    }
  }
  return std::sqrt(std::max(0.0, best));
}

AltMinConfig tight() {
  AltMinConfig c;
  c.max_outer_iters = 200;
  c.max_cg_iters = 100;
  c.grad_tol = 1e-10;
  c.obj_rel_tol = 1e-12;
  return c;
}

void expect_monotone(const std::vector<double> &h) {
  for (std::size_t i = 1; i < h.size(); ++i) {
    EXPECT_LE(h[i], h[i - 1] + 1e-12) << "outer iteration " << i;
  }
}

void expect_modulus(const CMatrix &x, double modulus) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(std::abs(x(i)), modulus, 1e-12);
  }
}

} // namespace

TEST(OptimalPrecoder, RankOneAlignment) {
  CMatrix h = CMatrix::Zero(3, 3);
  h(0, 0) = 1.0;
  const CVector f = optimal_precoder(h);
  EXPECT_NEAR(std::abs(f(0)), 1.0, 1e-12);
  EXPECT_NEAR(f.tail(2).norm(), 0.0, 1e-12);
}

TEST(OptimalPrecoder, SinglePathCollinearWithSteering) {
  ScenarioConfig s;
  s.n_tx = 16;
  s.n_rx = 4;
  s.users = 1;
  s.paths = 1;
  s.gains = {1.0};
  PathSet p(1, 1);
  p.at(0, 0) = {60.0, 75.0, 1.0};
  const CVector f = optimal_precoder(synthesize_channel(p, 0, s).h);
  EXPECT_NEAR(std::abs(steering_vector(16, 75.0).dot(f)), 1.0, 1e-9);
}

TEST(OptimalPrecoder, MaximizesGain) {
  std::mt19937_64 rng(4);
  const CMatrix h = random_cmatrix(3, 6, rng);
  const CVector f = optimal_precoder(h);
  const double best = (h * f).norm();
  for (int t = 0; t < 1000; ++t) {
    CVector v = random_cvector(6, rng);
    v.normalize();
    EXPECT_GE(best, (h * v).norm() - 1e-12);
  }
}

TEST(MmseCombiner, ScalarFormula) {
  std::mt19937_64 rng(2);
  const CMatrix h = random_cmatrix(1, 5, rng);
  const CVector f = h.adjoint().col(0) / h.norm();
  const double sigma = 0.3;
  const CVector w = mmse_combiner(h, f, sigma);
  ASSERT_EQ(w.size(), 1);
  EXPECT_NEAR(std::abs(w(0) - cplx(h.norm() / (h.squaredNorm() + sigma), 0.0)), 0.0, 1e-12);
}

TEST(MmseCombiner, VanishesForLargeNoise) {
  std::mt19937_64 rng(2);
  const CMatrix h = random_cmatrix(2, 4, rng);
  const CVector f = optimal_precoder(h);
  EXPECT_LT(mmse_combiner(h, f, 1e12).norm(), 1e-10);
}

TEST(MmseCombiner, MatchedFilterAtTopSingularVector) {
  std::mt19937_64 rng(6);
  const CMatrix h = random_cmatrix(2, 4, rng);
  const CVector f = optimal_precoder(h);
  const double s1 = Eigen::JacobiSVD<CMatrix>(h).singularValues()(0);
  const double sigma = 0.05;
  const CVector w = mmse_combiner(h, f, sigma);
  EXPECT_LE((w - h * f / (s1 * s1 + sigma)).norm(), 1e-12);
  EXPECT_NEAR(w.norm(), s1 / (s1 * s1 + sigma), 1e-12);
}

TEST(RiemannianGrad, RadialIsZero) {
  Rng r(1);
  const CMatrix x = random_unit_modulus(5, 2, 0.5, r);
  CMatrix g = x;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    g(i) *= 1.0 + double(i);
  }
  EXPECT_LE(riemannian_grad(x, g).norm(), 1e-14);
}

TEST(RiemannianGrad, TangentialUnchanged) {
  Rng r(3);
  const CMatrix x = random_unit_modulus(4, 1, 1.0, r);
  const CMatrix g = cplx(0, 1) * x;
  EXPECT_LE((riemannian_grad(x, g) - g).norm(), 1e-14);
}

TEST(RiemannianGrad, RandomIsTangent) {
  std::mt19937_64 rng(9);
  Rng r(9);
  for (int t = 0; t < 50; ++t) {
    const CMatrix x = random_unit_modulus(8, 3, 1.0 / std::sqrt(8.0), r);
    const CMatrix g = riemannian_grad(x, random_cmatrix(8, 3, rng));
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      EXPECT_LE(std::abs((std::conj(g(i)) * x(i) / std::abs(x(i))).real()), 1e-12);
    }
  }
}

TEST(Retract, ZeroStepAndRadialStep) {
  Rng r(5);
  const CMatrix x = random_unit_modulus(6, 2, 0.25, r);
  EXPECT_LE((retract(x, CMatrix::Zero(6, 2), 0.25) - x).norm(), 1e-15);
  EXPECT_LE((retract(x, x, 0.25) - x).norm(), 1e-15);
}

TEST(Retract, RandomStepKeepsModulus) {
  std::mt19937_64 rng(5);
  Rng r(5);
  for (int t = 0; t < 50; ++t) {
    const CMatrix x = random_unit_modulus(7, 2, 0.3, r);
    const CMatrix y = retract(x, random_cmatrix(7, 2, rng), 0.3);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      EXPECT_LE(std::abs(std::abs(y(i)) - 0.3), 1e-15);
    }
  }
}

TEST(Retract, ZeroEntryThrowsAfterHalving) {
  CMatrix x(1, 1);
  x(0, 0) = 1.0;
  CMatrix step(1, 1);
  step(0, 0) = -1.0;
  EXPECT_NO_THROW(retract(x, step, 1.0));
  CMatrix zero = CMatrix::Zero(1, 1);
  EXPECT_THROW(retract(zero, zero, 1.0), DegenerateRetraction);
}

TEST(AltMinPrecoder, ExactFactorizationIsFixedPoint) {
  std::mt19937_64 rng(12);
  Rng r(12);
  const int n = 16;
  const CMatrix f0 = random_unit_modulus(n, 2, 1.0 / std::sqrt(double(n)), r);
  const CVector b = random_cvector(2, rng);
  const PrecoderSolution sol = alt_min_precoder(f0 * b, 2, AltMinConfig{}, f0);
  EXPECT_LT(sol.residual, 1e-10);
}

TEST(AltMinPrecoder, MatchesPhaseGridForTwoAntennas) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 10; ++t) {
    const CVector f = random_cvector(2, rng);
    AltMinConfig cfg = tight();
    cfg.seed = std::uint64_t(t + 1);
    const PrecoderSolution sol = alt_min_precoder(f, 1, cfg);
    const double oracle = grid_residual(f, CMatrix::Identity(2, 2), 1.0 / std::sqrt(2.0));
    EXPECT_LE(std::abs(sol.residual - oracle), 1e-3);
    EXPECT_LE(sol.residual, oracle + 1e-9);
    // Optimal phases follow f itself up to a common rotation.
    const double rel_sol = std::arg(sol.analog(1, 0) / sol.analog(0, 0));
    const double rel_f = std::arg(f(1) / f(0));
    EXPECT_NEAR(std::abs(std::polar(1.0, rel_sol) - std::polar(1.0, rel_f)), 0.0, 1e-6);
    expect_monotone(sol.objective_history);
    expect_modulus(sol.analog, 1.0 / std::sqrt(2.0));
  }
}

TEST(AltMinPrecoder, NoWorseThanSteeringCodebook) {
  ScenarioConfig s;
  s.n_tx = 16;
  s.n_rx = 4;
  s.users = 1;
  s.paths = 2;
  s.gains = {0.6, 0.4};
  Rng r(17);
  for (int t = 0; t < 10; ++t) {
    const PathSet p = draw_paths(s, s.gains, r);
    const CVector f = optimal_precoder(synthesize_channel(p, 0, s).h);
    CMatrix book(16, 2);
    book.col(0) = steering_vector(16, p.at(0, 0).aod_deg);
    book.col(1) = steering_vector(16, p.at(0, 1).aod_deg);
    const CVector b = book.colPivHouseholderQr().solve(f);
    const double codebook = (f - book * b).norm();
    const PrecoderSolution sol = alt_min_precoder(f, 2, AltMinConfig{}, book);
    EXPECT_LE(sol.residual, codebook + 1e-12);
    EXPECT_NEAR((sol.analog * sol.baseband).squaredNorm(), 2.0, 1e-8);
    expect_monotone(sol.objective_history);
    expect_modulus(sol.analog, 0.25);
  }
}

TEST(Covariance, Examples) {
  std::mt19937_64 rng(30);
  Rng r(30);
  const CMatrix f = random_unit_modulus(8, 2, 1.0 / std::sqrt(8.0), r);
  const CVector b = random_cvector(2, rng);
  const CMatrix zero = CMatrix::Zero(3, 8);
  EXPECT_LE((covariance_lambda_y(zero, f, b, 0.7) - 0.7 * CMatrix::Identity(3, 3)).norm(), 1e-15);

  const CMatrix h = random_cmatrix(3, 8, rng);
  const CMatrix noiseless = covariance_lambda_y(h, f, b, 0.0);
  const auto ev = Eigen::SelfAdjointEigenSolver<CMatrix>(noiseless).eigenvalues();
  EXPECT_LE(std::abs(ev(0)), 1e-10 * ev(2));
  EXPECT_LE(std::abs(ev(1)), 1e-10 * ev(2));

  const CMatrix noisy = covariance_lambda_y(h, f, b, 0.2);
  const auto ev2 = Eigen::SelfAdjointEigenSolver<CMatrix>(noisy).eigenvalues();
  EXPECT_GE(ev2(0), 0.2 - 1e-12);
}

TEST(AltMinCombiner, IdentityWeightMatchesUnweightedFit) {
  std::mt19937_64 rng(41);
  const CVector w = random_cvector(4, rng);
  const AltMinConfig cfg = tight();
  const CombinerSolution a = alt_min_combiner(w, CMatrix::Identity(4, 4), 1, cfg);
  const PrecoderSolution b = alt_min_precoder(w, 1, cfg);
  EXPECT_LE((a.analog - b.analog).norm(), 1e-12);
  EXPECT_NEAR(a.residual, b.residual, 1e-12);
  EXPECT_NEAR(a.residual, (w - a.analog * a.baseband).norm(), 1e-12);
}

TEST(AltMinCombiner, ExactFactorizationIsFixedPoint) {
  std::mt19937_64 rng(43);
  Rng r(43);
  const CMatrix w0 = random_unit_modulus(4, 1, 0.5, r);
  const CVector b = random_cvector(1, rng);
  const CMatrix g = random_cmatrix(4, 4, rng);
  const CMatrix lambda = g * g.adjoint() + 0.1 * CMatrix::Identity(4, 4);
  const CombinerSolution sol = alt_min_combiner(w0 * b, lambda, 1, AltMinConfig{}, w0);
  EXPECT_LT(sol.residual, 1e-10);
}

TEST(AltMinCombiner, MatchesWeightedPhaseGrid) {
  std::mt19937_64 rng(47);
  for (int t = 0; t < 10; ++t) {
    const CVector w = random_cvector(2, rng);
    const CMatrix g = random_cmatrix(2, 2, rng);
    const CMatrix lambda = g * g.adjoint() + 0.05 * CMatrix::Identity(2, 2);
    AltMinConfig cfg = tight();
    cfg.seed = std::uint64_t(100 + t);
    const CombinerSolution sol = alt_min_combiner(w, lambda, 1, cfg);
    const double oracle = grid_residual(w, lambda, 1.0 / std::sqrt(2.0));
    EXPECT_LE(std::abs(sol.residual - oracle), 1e-3);
    expect_monotone(sol.objective_history);
    expect_modulus(sol.analog, 1.0 / std::sqrt(2.0));
  }
}

TEST(AltMinConfig, Validation) {
  AltMinConfig c;
  c.max_outer_iters = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
