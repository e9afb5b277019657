#pragma once

#include "glnbias/types.hpp"

namespace glnbias {

struct NnlsResult {
  Vector x;
  int iterations = 0;
  bool converged = false;
};

/// Lawson-Hanson active set on the normal equations: minimizes
/// |A x - b|^2 over x >= 0 given only gram = A^T A and atb = A^T b.
/// `tol` bounds the positive part of the dual gradient at termination.
NnlsResult nnls_gram(const Eigen::MatrixXd& gram, const Vector& atb, double tol = 1e-12, int max_iter = 0);

/// Among minimizers of the same problem, the one of least Euclidean norm when
/// it is still nonnegative: solves the normal equations with a complete
/// orthogonal decomposition on the columns whose gradient vanishes at `x`.
/// Returns `x` unchanged otherwise. Breaks ties between duplicate columns
/// symmetrically.
Vector min_norm_refine(const Eigen::MatrixXd& gram, const Vector& atb, const Vector& x, double tol = 1e-10);

/// Convenience wrapper over an explicit design matrix.
NnlsResult nnls(const Eigen::MatrixXd& a, const Vector& b, double tol = 1e-12, int max_iter = 0);

}  // namespace glnbias
