#pragma once

#include <complex>

#include <Eigen/Dense>

namespace spim {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

/// Largest condition number accepted by the solvers in this module.
inline constexpr double kMaxCondition = 1e12;

struct Svd {
  CMatrix U;
  RVector s; // descending
  CMatrix V;
};

/// Thin SVD, A = U diag(s) V^H. Throws InvalidInput on non-finite entries.
Svd svd_thin(const CMatrix &a);

/// Solves A x = b for square A. Hermitian positive-definite systems go
/// through Cholesky, everything else through partial-pivot LU. Throws
/// SingularMatrix when cond(A) exceeds kMaxCondition.
CVector solve_hermitian(const CMatrix &a, const CVector &b);

/// Inverse of a square matrix with the same conditioning guard.
CMatrix inverse(const CMatrix &a);

double frob_norm(const CMatrix &a);

/// 2-norm condition number s_max / s_min (infinity for rank-deficient A).
double condition_number(const CMatrix &a);

bool all_finite(const CMatrix &a);

} // namespace spim
