#pragma once

#include "glnbias/lifted.hpp"

#include <iosfwd>
#include <optional>
#include <string_view>

namespace glnbias {

enum class SolveStatus { Optimal, MaxIter, Infeasible };

std::string_view to_string(SolveStatus status);

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 50000;
  /// Residual checks (and penalty updates) happen every this many iterations.
  int check_every = 10;
  /// Optional starting point (B x D).
  std::optional<Matrix> warm_start;
};

struct SolverResult {
  Matrix zeta;    // B x D
  Vector lambda;  // one per row, >= 0 for margin rows
  double objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;  // max constraint violation
  double stationarity = 0.0;
  double complementarity = 0.0;  // max_n lambda_n |<Phi_n, zeta> - rhs_n|
  int iterations = 0;
  SolveStatus status = SolveStatus::MaxIter;
};

/// Residuals of a candidate pair (zeta, lambda) for the group-lasso program:
/// stationarity is the largest distance between (Phi^T lambda)_g and the
/// subdifferential of |zeta_g| over groups.
void group_lasso_residuals(const LiftedProblem& p, SolverResult& r);

/// min sum_g |zeta_g|_2 s.t. Phi zeta >= rhs (or = rhs). ADMM on the split
/// zeta = u, Phi~ zeta = z with rows of Phi~ scaled to unit norm; u takes the
/// block soft-threshold and z the projection onto the constraint set. The
/// zeta-update uses a Cholesky factor of the N x N matrix I + Phi~ Phi~^T,
/// which does not depend on the penalty, so residual balancing is free.
SolverResult solve_group_lasso_margin(const LiftedProblem& p, const SolverOptions& options = {});

/// min 1/2 zeta^T Q zeta s.t. Phi zeta >= rhs for Q = C^(H-2) M (QUAD_M) or the
/// identity (PLAIN_L2). Accelerated projected gradient on the dual
///   max rhs^T lambda - 1/2 lambda^T K lambda,  lambda >= 0,  K = Phi Q^+ Phi^T,
/// with periodic exact solves on the identified support; zeta = Q^+ Phi^T lambda
/// has no component along the gauge null space.
SolverResult solve_quad_margin(const LiftedProblem& p, const SolverOptions& options = {});

/// The shallow GLN: one PLAIN_L2 program per block (global context), solved
/// independently and stitched together. Status is the worst over contexts.
SolverResult solve_shallow(const LiftedProblem& p, const SolverOptions& options = {});

/// Dispatches on the objective (and the shallow family).
SolverResult solve(const LiftedProblem& p, const SolverOptions& options = {});

void write_result_json(std::ostream& out, const SolverResult& r);

}  // namespace glnbias
