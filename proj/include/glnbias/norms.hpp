#pragma once

#include "glnbias/models.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace glnbias {

/// The quadratic form |beta|^2 = C^(H-2) zeta^T M zeta with
/// M_{hcd,h'c'd'} = delta_dd' (1 + C delta_hh' delta_cc' - delta_hh').
/// M acts identically on every input coordinate d, so everything below is a
/// (H*C) x (H*C) block operator applied to the rows of zeta.
///
/// Per coordinate, M has three invariant subspaces: the all-ones direction
/// (eigenvalue H*C), vectors with zero sum inside every unit (eigenvalue C) and
/// the gauge directions, constant inside each unit and summing to zero across
/// units (eigenvalue 0).
class QuadFormM {
 public:
  QuadFormM(int H, int C);

  int units() const { return H_; }
  int contexts() const { return C_; }
  /// C^(H-2).
  double scale() const { return scale_; }

  /// (H*C) x (H*C) structure matrix S with scale() * S (x) I_D = the form.
  Matrix structure() const;
  /// Moore-Penrose pseudo-inverse of scale() * S.
  Matrix pseudo_inverse() const;
  /// Positive-semidefinite square root of scale() * S.
  Matrix sqrt() const;

  /// scale() * M zeta for zeta laid out (H*C) x D.
  Matrix apply(const Matrix& zeta) const;
  /// Projection of zeta onto the gauge null space.
  Matrix gauge_part(const Matrix& zeta) const;

 private:
  int H_;
  int C_;
  double scale_;
};

/// |beta|_2^2 summed over all C^H contexts, computed from the block structure
/// without enumerating contexts.
double l2_norm_beta(const GlnZeta& zeta);

/// Sum of row norms of a frozen-gate zeta (H x D).
double frelu_norm(const Matrix& zeta);

struct EquivarianceReport {
  double max_violation = 0.0;
  Eigen::Index checked = 0;
  bool passed = true;
};

/// Largest |(b_a - b_b) - (b_c - b_d)| over pairs of pairs that differ only in
/// the local contexts the two members of each pair share. Tables with
/// C^H <= 64 are checked exhaustively; larger ones on the elementary squares,
/// which generate every other relation.
EquivarianceReport check_equivariance(const BetaTable& table, double tol);

/// The free set: the all-ones context, then for h = 0..H-1 and c = 2..C the
/// context that is 1 everywhere except c at unit h. Size (C-1)H + 1.
std::vector<GlobalContext> free_contexts(int H, int C);

/// Fills all C^H predictors from those on the free set (rows of `free` in
/// free_contexts order) by beta_gamma = beta_{gamma_ch} + beta_{gamma~} - beta_1.
BetaTable complete_predictors(int H, int C, const Matrix& free);

struct ClosedForm2x2 {
  double value = 0.0;
  double alpha = 0.5;
};

/// sqrt((|b11-b12| + |b11-b21|)^2 + |b12+b21|^2) and the interpolation weight
/// alpha = |b11-b21| / (|b11-b12| + |b11-b21|), with alpha = 1/2 when both
/// differences vanish.
ClosedForm2x2 gln_norm_closed_2x2(const BetaTable& table);

/// Squared norm in the form |beta|^2 + 1/2 sum_ij |b_ij - b_i'j| |b_ij - b_ij'|.
double gln_norm_sq_pairwise_2x2(const BetaTable& table);

struct NormReport {
  double value = 0.0;
  double alpha = 0.5;  // only meaningful for the 2x2 closed form
  double residual = 0.0;
  int iterations = 0;
  GlnZeta zeta;
};

/// min sum_h |zeta_h|_2 subject to beta_gamma = sum_h zeta_{h gamma_h}.
/// Throws std::invalid_argument when the table violates equivariance beyond
/// `tol` scaled by the table's magnitude.
NormReport gln_norm_variational(const BetaTable& table, double tol = 1e-8, int max_iter = 50000);

/// JSON object {value, alpha, residual, iterations}.
void write_norm_report(std::ostream& out, const NormReport& report);

/// CSV `gamma_tuple,beta_0..beta_{D-1}` with gamma written as 1-2-1.
void write_beta_table_csv(std::ostream& out, const BetaTable& table);
BetaTable read_beta_table_csv(std::istream& in);

}  // namespace glnbias
