#include "spim/linalg.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "spim/errors.hpp"

namespace spim {

bool all_finite(const CMatrix &a) {
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const cplx z = a(i, j);
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
        return false;
      }
    }
  }
  return true;
}

Svd svd_thin(const CMatrix &a) {
  if (a.size() == 0) {
    throw InvalidInput("svd_thin: empty matrix");
  }
  if (!all_finite(a)) {
    throw InvalidInput("svd_thin: non-finite entry");
  }
  Eigen::JacobiSVD<CMatrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return Svd{svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

double condition_number(const CMatrix &a) {
  const RVector s = Eigen::JacobiSVD<CMatrix>(a).singularValues();
  if (s.size() == 0) {
    return std::numeric_limits<double>::infinity();
  }
  const double smin = s(s.size() - 1);
  if (smin <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return s(0) / smin;
}

namespace {

void check_square(const CMatrix &a, const char *who) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw InvalidInput(std::string(who) + ": matrix must be square and non-empty");
  }
  if (!all_finite(a)) {
    throw InvalidInput(std::string(who) + ": non-finite entry");
  }
}

void check_condition(const CMatrix &a, const char *who) {
  const double cond = condition_number(a);
  if (!(cond < kMaxCondition)) {
    throw SingularMatrix(std::string(who) + ": condition number " +
                         std::to_string(cond) + " exceeds limit");
  }
}

bool is_hermitian(const CMatrix &a) {
  const double scale = a.norm();
  return (a - a.adjoint()).norm() <= 1e-12 * std::max(scale, 1.0);
}

} // namespace

CVector solve_hermitian(const CMatrix &a, const CVector &b) {
  check_square(a, "solve_hermitian");
  if (b.size() != a.rows()) {
    throw InvalidInput("solve_hermitian: right-hand side length mismatch");
  }
  check_condition(a, "solve_hermitian");
  if (is_hermitian(a)) {
    Eigen::LLT<CMatrix> llt(a);
    if (llt.info() == Eigen::Success) {
      return llt.solve(b);
    }
  }
  return a.partialPivLu().solve(b);
}

CMatrix inverse(const CMatrix &a) {
  check_square(a, "inverse");
  check_condition(a, "inverse");
  return a.partialPivLu().inverse();
}

double frob_norm(const CMatrix &a) { return a.norm(); }

} // namespace spim
