#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace lqgame {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Replace M by its symmetric part. File round-trips and products like
/// (I-KH)*S break exact symmetry, so every covariance goes through here
/// before eigenvalue checks or further propagation.
inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Reciprocal condition number of a symmetric matrix, min|eig|/max|eig|.
inline double rcond_sym(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  const auto ev = es.eigenvalues().cwiseAbs();
  const double hi = ev.maxCoeff();
  if (hi == 0.0) return 0.0;
  return ev.minCoeff() / hi;
}

/// Condition number of a general square matrix via singular values.
inline double cond_svd(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  const double lo = sv(sv.size() - 1);
  if (lo == 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / lo;
}

/// Solve S * X = B for symmetric S by LDLT on the symmetrized matrix.
/// Never forms an explicit inverse. Throws when S is numerically singular
/// (reciprocal condition number below rcond_min).
inline Matrix solve_sym(const Matrix& s, const Matrix& b, double rcond_min,
                        const std::string& what) {
  const Matrix ss = symmetrize(s);
  if (rcond_sym(ss) < rcond_min) {
    throw NumericalError(what + ": matrix numerically singular (rcond below " +
                         std::to_string(rcond_min) + ")");
  }
  return ss.ldlt().solve(b);
}

/// X = B * S^{-1} for symmetric S, computed as a solve against S.
inline Matrix solve_sym_right(const Matrix& b, const Matrix& s, double rcond_min,
                              const std::string& what) {
  return solve_sym(s, b.transpose(), rcond_min, what).transpose();
}

/// Symmetric PSD square root via eigendecomposition; tiny negative
/// eigenvalues from roundoff are clamped to zero.
inline Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline int matrix_rank(const Matrix& m) {
  if (m.size() == 0) return 0;
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  return static_cast<int>(qr.rank());
}

}  // namespace lqgame
