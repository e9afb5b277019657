#pragma once

#include "glnbias/data.hpp"
#include "glnbias/types.hpp"

#include <filesystem>
#include <iosfwd>
#include <string_view>
#include <vector>

namespace glnbias {

enum class Objective { GroupLasso, QuadM, PlainL2 };
enum class LiftFamily { Gln, Frelu, Shallow, Plain };

Objective parse_objective(std::string_view name);
std::string_view to_string(Objective objective);
LiftFamily parse_lift_family(std::string_view name);
std::string_view to_string(LiftFamily family);

/// Fixed-margin program over zeta (B blocks of D coordinates):
///   minimize  sum_groups |zeta_g|  or  1/2 zeta^T Q zeta
///   subject to  <Phi_n, zeta> >= rhs_n  (or = rhs_n when `equality`)
/// The feature of row n is the outer product Phi_n = gates.row(n) (x) rows.row(n):
/// for a margin constraint rows.row(n) = y_n x_n and gates.row(n) marks the
/// blocks the sample's context selects, so <Phi_n, zeta> = y_n <beta_gamma, x_n>.
struct LiftedProblem {
  Objective objective = Objective::GroupLasso;
  LiftFamily family = LiftFamily::Plain;
  bool equality = false;
  Matrix gates;  // N x B
  Matrix rows;   // N x D
  Vector rhs;    // N
  std::vector<std::vector<Eigen::Index>> groups;  // partition of 0..B-1
  int H = 0;  // shapes for the QUAD_M form
  int C = 0;
  /// Original sample of each row and samples dropped because no gate was open.
  std::vector<Eigen::Index> sample_index;
  std::vector<Eigen::Index> excluded;
  /// Shallow family: the global context owning each block.
  std::vector<GlobalContext> block_contexts;

  Eigen::Index size() const { return rows.rows(); }
  Eigen::Index blocks() const { return gates.cols(); }
  Eigen::Index dim() const { return rows.cols(); }

  /// <Phi_n, zeta> for every row; zeta is B x D.
  Vector apply(const Matrix& zeta) const;
  /// sum_n lambda_n Phi_n as a B x D matrix.
  Matrix apply_transpose(const Vector& lambda) const;
  /// <Phi_n, Phi_m> with the block inner product weighted by `block_metric`
  /// (B x B): (rows rows^T) o (gates W gates^T).
  Eigen::MatrixXd kernel(const Matrix& block_metric) const;
  Eigen::MatrixXd kernel() const;
  /// |Phi_n|.
  Vector row_norms() const;
  /// Quadratic structure Q = structure() (x) I_D for QUAD_M and PLAIN_L2.
  Matrix quad_structure() const;
  /// Pseudo-inverse of quad_structure().
  Matrix quad_pseudo_inverse() const;

  void validate() const;
};

/// Builds the margin program for a dataset with per-sample contexts.
///  gln:     B = H*C, block h*C + (c-1), one group per unit.
///  frelu:   B = H, one group per block; rows with every gate closed are
///           excluded (their constraint 0 >= 1 cannot hold) and listed.
///  shallow: one block per reachable global context, one group per block.
///  plain:   B = 1 (a standard hard-margin SVM); contexts are ignored.
/// `contexts_per_unit` is C for the gln family and ignored otherwise.
LiftedProblem lift(const Dataset& data, const ContextMatrix& contexts, LiftFamily family, Objective objective,
                   int contexts_per_unit = 2);

/// Row indices i < j with Phi_i = -Phi_j or a zero row with positive rhs,
/// either of which makes the margin program infeasible. Empty when none found.
std::vector<Eigen::Index> structural_conflict(const LiftedProblem& p);

/// Plain-text dump: header, objective, shapes, groups, nonzero gate triplets
/// `gate n b value`, then `row n rhs r_0 .. r_{D-1}`.
void write_problem(std::ostream& out, const LiftedProblem& p);
LiftedProblem read_problem(std::istream& in);

}  // namespace glnbias
