#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "spim/bank.hpp"
#include "spim/errors.hpp"

using namespace spim;
using testing_util::random_cmatrix;
using testing_util::random_cvector;

namespace {

ScenarioConfig desk(int users, int paths) {
  ScenarioConfig s;
  s.n_tx = 32;
  s.n_rx = 4;
  s.users = users;
  s.paths = paths;
  s.gains.assign(std::size_t(paths), 1.0 / paths);
  s.noise_var = 0.01;
  return s;
}

std::vector<ChannelMatrix> draw(const ScenarioConfig &s, std::uint64_t seed) {
  Rng rng(seed);
  return synthesize_all(draw_paths(s, s.gains, rng), s);
}

} // namespace

TEST(Patterns, TwoByTwoOrder) {
  const auto p = enumerate_patterns(2, 2);
  ASSERT_EQ(p.size(), 4u);
  const std::vector<std::vector<int>> want = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(p[i].index, i);
    EXPECT_EQ(p[i].paths, want[i]);
  }
}

TEST(Patterns, Counts) {
  EXPECT_EQ(enumerate_patterns(1, 5).size(), 1u);
  EXPECT_EQ(enumerate_patterns(1, 5)[0].paths, std::vector<int>(5, 0));
  EXPECT_EQ(enumerate_patterns(2, 8).size(), 256u);
  EXPECT_EQ(pattern_count(3, 4), 81u);
  for (int m = 1; m <= 3; ++m) {
    for (int u = 1; u <= 4; ++u) {
      const auto all = enumerate_patterns(m, u);
      ASSERT_EQ(all.size(), pattern_count(m, u));
      for (const auto &p : all) {
        EXPECT_EQ(pattern_from_index(p.index, m, u).paths, p.paths);
      }
    }
  }
}

TEST(Patterns, SelectionVector) {
  const RVector b = selection_vector(3, 1);
  EXPECT_EQ(b(0), 0.0);
  EXPECT_EQ(b(1), 1.0);
  EXPECT_EQ(b(2), 0.0);
}

TEST(Select, PatternPicksColumns) {
  std::mt19937_64 rng(1);
  const std::vector<CMatrix> f = {random_cmatrix(8, 2, rng), random_cmatrix(8, 2, rng)};
  const std::vector<CMatrix> w = {random_cmatrix(4, 2, rng), random_cmatrix(4, 2, rng)};
  const SpatialPattern p = pattern_from_index(2, 2, 2); // (second path, first path)
  const PatternBeams b = select_pattern(f, w, p);
  EXPECT_EQ(b.f_rf.col(0), f[0].col(1));
  EXPECT_EQ(b.f_rf.col(1), f[1].col(0));
  EXPECT_EQ(b.w_rf[0], w[0].col(1));
  EXPECT_EQ(b.w_rf[1], w[1].col(0));
}

TEST(Select, SinglePathConcatenates) {
  std::mt19937_64 rng(2);
  const std::vector<CMatrix> f = {random_cmatrix(8, 1, rng), random_cmatrix(8, 1, rng),
                                  random_cmatrix(8, 1, rng)};
  const std::vector<CMatrix> w = {random_cmatrix(2, 1, rng), random_cmatrix(2, 1, rng),
                                  random_cmatrix(2, 1, rng)};
  const PatternBeams b = select_pattern(f, w, enumerate_patterns(1, 3)[0]);
  for (int u = 0; u < 3; ++u) {
    EXPECT_EQ(b.f_rf.col(u), f[std::size_t(u)].col(0));
  }
}

TEST(Select, VectorMultiplyIsBitExact) {
  std::mt19937_64 rng(3);
  const std::vector<CMatrix> f = {random_cmatrix(16, 3, rng), random_cmatrix(16, 3, rng)};
  const std::vector<CMatrix> w = {random_cmatrix(4, 3, rng), random_cmatrix(4, 3, rng)};
  for (const auto &p : enumerate_patterns(3, 2)) {
    const PatternBeams a = select_pattern(f, w, p);
    const PatternBeams b = select_pattern_by_vector(f, w, p);
    EXPECT_EQ(a.f_rf, b.f_rf);
    for (int u = 0; u < 2; ++u) {
      EXPECT_EQ(a.w_rf[std::size_t(u)], b.w_rf[std::size_t(u)]);
    }
  }
}

TEST(EffectiveChannel, ScalarExample) {
  ChannelMatrix h{0, CMatrix::Constant(1, 1, 2.0)};
  const std::vector<ChannelMatrix> hs = {h};
  const std::vector<CVector> w = {CVector::Ones(1)};
  const CMatrix e = effective_channel(hs, w, CMatrix::Ones(1, 1));
  ASSERT_EQ(e.rows(), 1);
  EXPECT_EQ(e(0, 0), cplx(2.0, 0.0));
}

TEST(EffectiveChannel, ZeroChannels) {
  std::mt19937_64 rng(4);
  const std::vector<ChannelMatrix> hs = {{0, CMatrix::Zero(4, 8)}, {1, CMatrix::Zero(4, 8)}};
  const std::vector<CVector> w = {random_cvector(4, rng), random_cvector(4, rng)};
  EXPECT_EQ(effective_channel(hs, w, random_cmatrix(8, 2, rng)).norm(), 0.0);
}

TEST(EffectiveChannel, MatchesExplicitLoops) {
  std::mt19937_64 rng(5);
  const std::vector<ChannelMatrix> hs = {{0, random_cmatrix(4, 8, rng)}, {1, random_cmatrix(4, 8, rng)}};
  const std::vector<CVector> w = {random_cvector(4, rng), random_cvector(4, rng)};
  const CMatrix f = random_cmatrix(8, 2, rng);
  const CMatrix e = effective_channel(hs, w, f);
  for (int u = 0; u < 2; ++u) {
    for (int k = 0; k < 2; ++k) {
      cplx acc = 0.0;
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 8; ++c) {
          acc += std::conj(w[std::size_t(u)](r)) * hs[std::size_t(u)].h(r, c) * f(c, k);
        }
      }
      EXPECT_NEAR(std::abs(e(u, k) - acc), 0.0, 1e-12);
    }
  }
}

TEST(BasebandZf, IdentityAndDiagonal) {
  Rng r(6);
  const CMatrix f_rf = random_unit_modulus(8, 2, 1.0 / std::sqrt(8.0), r);
  const ZfResult a = baseband_zf(CMatrix::Identity(2, 2), f_rf, 0);
  const cplx c = a.f_bb(0, 0);
  EXPECT_LE((a.f_bb - c * CMatrix::Identity(2, 2)).norm(), 1e-14);
  EXPECT_NEAR((f_rf * a.f_bb).squaredNorm(), 2.0, 1e-12);

  CMatrix d = CMatrix::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 4.0;
  const ZfResult b = baseband_zf(d, f_rf, 0);
  EXPECT_LE(b.zf_residual, 1e-15);
  const cplx c2 = b.f_bb(0, 0);
  EXPECT_LE((b.f_bb - c2 * CMatrix::Identity(2, 2)).norm(), 1e-14);
}

TEST(BasebandZf, RowsProportionalToClosedFormInverse) {
  CMatrix h(2, 2);
  h << 1.0, 0.5, 0.2, 1.0;
  CMatrix inv(2, 2);
  inv << 1.0, -0.5, -0.2, 1.0;
  inv /= 0.9;
  Rng r(7);
  const CMatrix f_rf = random_unit_modulus(8, 2, 1.0 / std::sqrt(8.0), r);
  const ZfResult z = baseband_zf(h, f_rf, 3);
  for (int i = 0; i < 2; ++i) {
    const cplx ratio = z.f_bb(i, 0) / inv(i, 0);
    EXPECT_LE((z.f_bb.row(i) - ratio * inv.row(i)).norm(), 1e-10);
  }
  EXPECT_NEAR((f_rf * z.f_bb).squaredNorm(), 2.0, 1e-12);
  EXPECT_LE(z.zf_residual, 1e-12);
}

TEST(BasebandZf, ColumnNormalization) {
  CMatrix h(2, 2);
  h << 1.0, 0.5, 0.2, 1.0;
  CMatrix inv(2, 2);
  inv << 1.0, -0.5, -0.2, 1.0;
  Rng r(7);
  const CMatrix f_rf = random_unit_modulus(8, 2, 1.0 / std::sqrt(8.0), r);
  const ZfResult z = baseband_zf(h, f_rf, 0, BasebandNorm::columns);
  for (int j = 0; j < 2; ++j) {
    const cplx ratio = z.f_bb(0, j) / inv(0, j);
    EXPECT_LE((z.f_bb.col(j) - ratio * inv.col(j)).norm(), 1e-10);
  }
}

TEST(BasebandZf, SingularCarriesPattern) {
  CMatrix h(2, 2);
  h << 1.0, 2.0, 2.0, 4.0;
  Rng r(8);
  const CMatrix f_rf = random_unit_modulus(8, 2, 1.0 / std::sqrt(8.0), r);
  try {
    baseband_zf(h, f_rf, 5);
    FAIL() << "expected SingularMatrix";
  } catch (const SingularMatrix &e) {
    ASSERT_TRUE(e.pattern().has_value());
    EXPECT_EQ(*e.pattern(), 5u);
  }
}

TEST(Bank, DeskInvariants) {
  const ScenarioConfig s = desk(2, 2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto hs = draw(s, seed);
    DesignOptions opt;
    const BeamformerBank bank = build_bank(s, hs, opt);
    ASSERT_EQ(bank.patterns.size(), 4u);
    for (const PatternEntry &e : bank.patterns) {
      ASSERT_TRUE(e.valid) << e.diagnostic;
      EXPECT_NEAR(e.power, 2.0, 1e-8);
      EXPECT_NEAR(e.precoder().squaredNorm(), 2.0, 1e-8);
      EXPECT_LE(e.zf_residual, 1e-8);
      for (Eigen::Index i = 0; i < e.beams.f_rf.size(); ++i) {
        EXPECT_NEAR(std::abs(e.beams.f_rf(i)), 1.0 / std::sqrt(32.0), 1e-12);
      }
      for (const CVector &w : e.beams.w_rf) {
        for (Eigen::Index i = 0; i < w.size(); ++i) {
          EXPECT_NEAR(std::abs(w(i)), 0.5, 1e-12);
        }
      }
    }
  }
}

TEST(Bank, ColumnNormalizationKeepsDiagonal) {
  const ScenarioConfig s = desk(2, 2);
  const auto hs = draw(s, 4);
  DesignOptions opt;
  opt.norm = BasebandNorm::columns;
  for (const PatternEntry &e : build_bank(s, hs, opt).patterns) {
    const CMatrix eff = effective_channel(hs, e.beams.w_rf, e.beams.f_rf) * e.f_bb;
    EXPECT_LE(std::abs(eff(0, 1)) + std::abs(eff(1, 0)), 1e-10 * eff.norm());
  }
}

TEST(Bank, SinglePathHasOnePattern) {
  const ScenarioConfig s = desk(2, 1);
  const BeamformerBank bank = build_bank(s, draw(s, 3), DesignOptions{});
  ASSERT_EQ(bank.patterns.size(), 1u);
  EXPECT_TRUE(bank.patterns[0].valid);
}

TEST(Bank, DeterministicAndSerialEqual) {
  const ScenarioConfig s = desk(2, 2);
  const auto hs = draw(s, 11);
  DesignOptions opt;
  opt.workers = 4;
  const BeamformerBank a = build_bank(s, hs, opt);
  const BeamformerBank b = build_bank(s, hs, opt);
  const BeamformerBank c = build_bank_serial(s, hs, opt);
  for (std::size_t i = 0; i < a.patterns.size(); ++i) {
    EXPECT_EQ(a.patterns[i].f_bb, b.patterns[i].f_bb);
    EXPECT_EQ(a.patterns[i].beams.f_rf, b.patterns[i].beams.f_rf);
    EXPECT_EQ(a.patterns[i].f_bb, c.patterns[i].f_bb);
    EXPECT_EQ(a.patterns[i].beams.f_rf, c.patterns[i].beams.f_rf);
  }
}

TEST(Bank, RandomInitAlsoSatisfiesInvariants) {
  const ScenarioConfig s = desk(2, 2);
  DesignOptions opt;
  opt.init = AnalogInit::random;
  const BeamformerBank bank = build_bank(s, draw(s, 2), opt);
  for (const PatternEntry &e : bank.patterns) {
    ASSERT_TRUE(e.valid);
    EXPECT_NEAR(e.power, 2.0, 1e-8);
    EXPECT_LE(e.zf_residual, 1e-8);
  }
}
