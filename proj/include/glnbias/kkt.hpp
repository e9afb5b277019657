#pragma once

#include "glnbias/lifted.hpp"
#include "glnbias/models.hpp"

#include <iosfwd>
#include <map>
#include <vector>

namespace glnbias {

struct KKTOptions {
  /// Sample n supports its context gamma when |m_n - m_gamma| <= margin_tol * m_gamma.
  double margin_tol = 1e-4;
  /// Multipliers below this are reported as zero.
  double dual_tol = 1e-12;
};

struct KKTReport {
  /// Context key -> supporting sample indices (indices into the dataset).
  std::map<std::vector<std::int32_t>, std::vector<Eigen::Index>> supports;
  std::vector<Eigen::Index> support;  // union, ascending
  Vector lambda;                      // per dataset sample, zero off the support
  double scale = 1.0;                 // margin-normalization factor applied
  double residual = 0.0;              // |target - stationarity expression| / |target|
  double complementarity = 0.0;       // max_n lambda_n |m_n - 1|
};

/// Per-context minimum margins and the factor alpha = max_gamma m_gamma^(-1/nu)
/// that brings every context's minimum margin to >= 1 with equality in one.
/// Throws std::domain_error ("not separated") when some margin is <= 0.
double margin_scale(const Vector& margins, const std::vector<std::vector<std::int32_t>>& keys, int nu);

/// Scales any model so its minimum margin in every context is >= 1.
AnyModel margin_normalize(const AnyModel& model, const Dataset& data, const ContextMatrix& contexts);

/// Certifies a candidate zeta (B x D) for a lifted program after margin
/// normalization. Group lasso: zeta_g = |zeta_g| (Phi^T lambda)_g
/// (the kkt-zeta form). QUAD_M / PLAIN_L2: Q zeta = Phi^T lambda. The
/// multipliers come from nonnegative least squares on the support.
KKTReport kkt_certify(const LiftedProblem& p, const Matrix& zeta, const KKTOptions& options = {});

/// Two-layer GLN weights: w = sum_n lambda_n grad_w (y_n f(x_n; gamma_n))
/// (the kkt-w form), after margin normalization with nu = 2.
KKTReport kkt_certify(const TwoLayerGLN& model, const Dataset& data, const ContextMatrix& contexts,
                      const KKTOptions& options = {});

/// Any trained model: GLN weights use the two-layer form; ReLU nets are
/// frozen at their own gates and certified as FReLU group lasso; FReLU and
/// shallow models use their lifted programs.
KKTReport kkt_certify(const AnyModel& model, const Dataset& data, const ContextMatrix& contexts,
                      const KKTOptions& options = {});

void write_kkt_json(std::ostream& out, const KKTReport& report);

}  // namespace glnbias
