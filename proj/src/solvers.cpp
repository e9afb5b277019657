#include "glnbias/solvers.hpp"

#include "glnbias/nnls.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace glnbias {

namespace {

double rhs_scale(const LiftedProblem& p) {
  return std::max(1.0, p.rhs.size() ? p.rhs.cwiseAbs().maxCoeff() : 0.0);
}

double violation(const LiftedProblem& p, const Vector& margins) {
  double worst = 0.0;
  for (Eigen::Index n = 0; n < margins.size(); ++n) {
    const double gap = p.rhs[n] - margins[n];
    worst = std::max(worst, p.equality ? std::abs(gap) : gap);
  }
  return worst / rhs_scale(p);
}

double complementarity(const LiftedProblem& p, const Vector& margins, const Vector& lambda) {
  if (p.equality) return 0.0;
  double worst = 0.0;
  for (Eigen::Index n = 0; n < margins.size(); ++n) {
    worst = std::max(worst, std::abs(lambda[n]) * std::abs(margins[n] - p.rhs[n]));
  }
  return worst;
}

double group_norm(const Matrix& zeta, const std::vector<Eigen::Index>& group) {
  double s = 0.0;
  for (auto b : group) s += zeta.row(b).squaredNorm();
  return std::sqrt(s);
}

SolverResult infeasible_result(const LiftedProblem& p) {
  SolverResult r;
  r.zeta = Matrix::Zero(p.blocks(), p.dim());
  r.lambda = Vector::Zero(p.size());
  r.objective = std::numeric_limits<double>::quiet_NaN();
  r.dual_objective = std::numeric_limits<double>::infinity();
  r.primal_residual = std::numeric_limits<double>::infinity();
  r.status = SolveStatus::Infeasible;
  return r;
}

}  // namespace

std::string_view to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::MaxIter: return "max_iter";
    case SolveStatus::Infeasible: return "infeasible";
  }
  return "?";
}

void group_lasso_residuals(const LiftedProblem& p, SolverResult& r) {
  const Vector margins = p.apply(r.zeta);
  const Matrix grad = p.apply_transpose(r.lambda);
  r.objective = 0.0;
  r.stationarity = 0.0;
  for (const auto& g : p.groups) {
    const double zn = group_norm(r.zeta, g);
    r.objective += zn;
    if (zn > 0.0) {
      double s = 0.0;
      for (auto b : g) s += (r.zeta.row(b) / zn - grad.row(b)).squaredNorm();
      r.stationarity = std::max(r.stationarity, std::sqrt(s));
    } else {
      r.stationarity = std::max(r.stationarity, group_norm(grad, g) - 1.0);
    }
  }
  r.primal_residual = violation(p, margins);
  r.complementarity = complementarity(p, margins, r.lambda);
  r.dual_objective = p.rhs.dot(r.lambda);
}

SolverResult solve_group_lasso_margin(const LiftedProblem& p, const SolverOptions& opt) {
  p.validate();
  if (!structural_conflict(p).empty()) return infeasible_result(p);
  const Eigen::Index N = p.size();
  const Eigen::Index B = p.blocks();
  const Eigen::Index D = p.dim();
  constexpr double kRelax = 1.6;

  Vector sigma = p.row_norms();
  for (Eigen::Index n = 0; n < N; ++n) {
    if (sigma[n] == 0.0) sigma[n] = 1.0;
  }
  const Vector inv_sigma = sigma.cwiseInverse();
  const Vector lower = p.rhs.cwiseProduct(inv_sigma);
  Eigen::MatrixXd ktil = inv_sigma.asDiagonal() * p.kernel() * inv_sigma.asDiagonal();
  Eigen::MatrixXd system = ktil;
  system.diagonal().array() += 1.0;
  const Eigen::LLT<Eigen::MatrixXd> chol(system);

  auto phi = [&](const Matrix& zeta) -> Vector { return p.apply(zeta).cwiseProduct(inv_sigma); };
  auto phi_t = [&](const Vector& t) -> Matrix { return p.apply_transpose(t.cwiseProduct(inv_sigma)); };
  auto project = [&](Vector v) {
    if (p.equality) return lower;
    return Vector(v.cwiseMax(lower));
  };

  Matrix u = opt.warm_start ? *opt.warm_start : Matrix::Zero(B, D);
  if (u.rows() != B || u.cols() != D) throw std::invalid_argument("warm start has the wrong shape");
  Matrix pd = Matrix::Zero(B, D);
  Vector z = project(phi(u));
  Vector q = Vector::Zero(N);
  double rho = 1.0;

  SolverResult best;
  best.status = SolveStatus::MaxIter;
  Vector q_prev = q;
  int farkas_hits = 0;

  for (int it = 1; it <= opt.max_iter; ++it) {
    const Matrix v = u - pd;
    const Vector phi_v = phi(v);
    const Vector zq = z - q;
    const Vector w = chol.solve(phi_v + ktil * zq);
    const Vector corr = zq - w;
    const Matrix zeta = v + phi_t(corr);
    const Vector phi_zeta = phi_v + ktil * corr;

    const Matrix zeta_r = kRelax * zeta + (1.0 - kRelax) * u;
    const Vector phi_r = kRelax * phi_zeta + (1.0 - kRelax) * z;

    const bool check = it % opt.check_every == 0 || it == opt.max_iter;
    Matrix u_old;
    Vector z_old;
    if (check) {
      u_old = u;
      z_old = z;
    }

    u = zeta_r + pd;
    const double thresh = 1.0 / rho;
    for (const auto& g : p.groups) {
      const double n = group_norm(u, g);
      const double shrink = n > thresh ? 1.0 - thresh / n : 0.0;
      for (auto b : g) u.row(b) *= shrink;
    }
    z = project(phi_r + q);
    pd += zeta_r - u;
    q += phi_r - z;

    if (!check) continue;

    SolverResult cur;
    cur.zeta = u;
    cur.lambda = (-rho * q).cwiseProduct(inv_sigma);
    if (!p.equality) cur.lambda = cur.lambda.cwiseMax(0.0);
    group_lasso_residuals(p, cur);
    cur.iterations = it;
    const double worst = std::max({cur.primal_residual, cur.stationarity, cur.complementarity});
    if (it == opt.check_every || worst <= std::max({best.primal_residual, best.stationarity, best.complementarity})) {
      best = cur;
      best.status = SolveStatus::MaxIter;
    }
    best.iterations = it;
    if (worst <= opt.tol) {
      best = cur;
      best.status = SolveStatus::Optimal;
      return best;
    }

    // Farkas direction: successive dual increments mu >= 0 with Phi~^T mu = 0
    // and lower^T mu > 0 certify that no zeta meets the margins.
    if (!p.equality) {
      const Vector mu = (q_prev - q).cwiseMax(0.0);
      const double mn = mu.norm();
      if (mn > 0.0 && phi_t(mu).norm() <= 1e-7 * mn && lower.dot(mu) > 1e-6 * mn * lower.norm()) {
        if (++farkas_hits >= 5 && rho * q.norm() > 1e3) {
          auto r = infeasible_result(p);
          r.iterations = it;
          return r;
        }
      } else {
        farkas_hits = 0;
      }
    }

    // residual balancing
    const double r_primal = std::sqrt((zeta - u).squaredNorm() + (phi_zeta - z).squaredNorm());
    const double r_dual = rho * (u - u_old + phi_t(z - z_old)).norm();
    double factor = 1.0;
    if (r_primal > 10.0 * r_dual) factor = 2.0;
    if (r_dual > 10.0 * r_primal) factor = 0.5;
    if (factor != 1.0) {
      rho *= factor;
      pd /= factor;
      q /= factor;
      farkas_hits = 0;
    }
    q_prev = q;
  }
  return best;
}

SolverResult solve_quad_margin(const LiftedProblem& p, const SolverOptions& opt) {
  p.validate();
  if (p.equality) throw std::invalid_argument("quadratic solver handles margin constraints only");
  if (p.objective == Objective::GroupLasso) throw std::invalid_argument("quadratic solver needs QUAD_M or PLAIN_L2");
  if (!structural_conflict(p).empty()) return infeasible_result(p);
  const Eigen::Index N = p.size();
  const Matrix qpinv = p.quad_pseudo_inverse();
  const Matrix qmat = p.quad_structure();
  const Eigen::MatrixXd k = p.kernel(qpinv);
  const Vector& b = p.rhs;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmax > 0.0)) return infeasible_result(p);
  const double step = 1.0 / lmax;

  auto finish = [&](const Vector& lambda, int it, bool optimal_allowed) {
    SolverResult r;
    r.lambda = lambda;
    r.iterations = it;
    r.zeta = qpinv * p.apply_transpose(lambda);
    const Vector margins = k * lambda;
    const double quad = lambda.dot(margins);
    r.objective = 0.5 * quad;
    r.dual_objective = b.dot(lambda) - 0.5 * quad;
    r.primal_residual = violation(p, margins);
    r.complementarity = complementarity(p, margins, lambda);
    const Matrix grad = p.apply_transpose(lambda);
    const double gnorm = std::max(1.0, grad.norm());
    r.stationarity = (qmat * r.zeta - grad).norm() / gnorm;
    const bool ok = r.primal_residual <= opt.tol && r.complementarity <= opt.tol && r.stationarity <= opt.tol;
    r.status = ok && optimal_allowed ? SolveStatus::Optimal : SolveStatus::MaxIter;
    return r;
  };

  // Exact solve of the dual restricted to the rows that look active.
  auto polish = [&](const Vector& lambda, const Vector& margins) -> std::optional<Vector> {
    std::vector<Eigen::Index> active;
    for (Eigen::Index n = 0; n < N; ++n) {
      if (lambda[n] > 0.0 || margins[n] <= b[n] * (1.0 + 1e-3)) active.push_back(n);
    }
    if (active.empty()) return std::nullopt;
    const auto m = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd ks(m, m);
    Vector bs(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      bs[i] = b[active[static_cast<std::size_t>(i)]];
      for (Eigen::Index j = 0; j < m; ++j) ks(i, j) = k(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(j)]);
    }
    const auto sub = nnls_gram(ks, bs, 1e-14);
    const Vector x = min_norm_refine(ks, bs, sub.x);
    Vector full = Vector::Zero(N);
    for (Eigen::Index i = 0; i < m; ++i) full[active[static_cast<std::size_t>(i)]] = x[i];
    return full;
  };

  Vector lambda = Vector::Zero(N);
  Vector y = lambda;
  double t = 1.0;
  const int polish_every = std::max(20, opt.check_every);
  for (int it = 1; it <= opt.max_iter; ++it) {
    const Vector grad = k * y - b;
    const Vector next = (y - step * grad).cwiseMax(0.0);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (grad.dot(next - lambda) > 0.0) {
      // restart momentum when it points uphill
      y = next;
      t = 1.0;
    } else {
      y = next + ((t - 1.0) / t_next) * (next - lambda);
      t = t_next;
    }
    lambda = next;

    if (!lambda.allFinite() || lambda.norm() > 1e12) {
      auto r = infeasible_result(p);
      r.iterations = it;
      return r;
    }
    if (it % polish_every == 0 || it == opt.max_iter) {
      const Vector margins = k * lambda;
      if (const auto cand = polish(lambda, margins)) {
        auto r = finish(*cand, it, true);
        if (r.status == SolveStatus::Optimal) return r;
      }
      auto r = finish(lambda, it, true);
      if (r.status == SolveStatus::Optimal) return r;
      if (it == opt.max_iter) {
        // the dual objective grows without bound on infeasible programs
        if (r.dual_objective > 1e8 && r.primal_residual > 1e-3) {
          auto inf = infeasible_result(p);
          inf.iterations = it;
          return inf;
        }
        return r;
      }
    }
  }
  return finish(lambda, opt.max_iter, false);
}

SolverResult solve_shallow(const LiftedProblem& p, const SolverOptions& opt) {
  p.validate();
  SolverResult out;
  out.zeta = Matrix::Zero(p.blocks(), p.dim());
  out.lambda = Vector::Zero(p.size());
  out.status = SolveStatus::Optimal;
  for (Eigen::Index b = 0; b < p.blocks(); ++b) {
    std::vector<Eigen::Index> members;
    for (Eigen::Index n = 0; n < p.size(); ++n) {
      if (p.gates(n, b) != 0.0) members.push_back(n);
    }
    if (members.empty()) continue;
    LiftedProblem sub;
    sub.objective = Objective::PlainL2;
    sub.family = LiftFamily::Plain;
    sub.groups = {{0}};
    const auto m = static_cast<Eigen::Index>(members.size());
    sub.gates = Matrix::Ones(m, 1);
    sub.rows.resize(m, p.dim());
    sub.rhs.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto n = members[static_cast<std::size_t>(i)];
      sub.rows.row(i) = p.gates(n, b) * p.rows.row(n);
      sub.rhs[i] = p.rhs[n];
    }
    const auto r = solve_quad_margin(sub, opt);
    if (r.status == SolveStatus::Infeasible) {
      auto inf = infeasible_result(p);
      inf.iterations = out.iterations + r.iterations;
      return inf;
    }
    if (r.status == SolveStatus::MaxIter) out.status = SolveStatus::MaxIter;
    out.zeta.row(b) = r.zeta.row(0);
    for (Eigen::Index i = 0; i < m; ++i) out.lambda[members[static_cast<std::size_t>(i)]] = r.lambda[i];
    out.objective += r.objective;
    out.dual_objective += r.dual_objective;
    out.primal_residual = std::max(out.primal_residual, r.primal_residual);
    out.stationarity = std::max(out.stationarity, r.stationarity);
    out.complementarity = std::max(out.complementarity, r.complementarity);
    out.iterations += r.iterations;
  }
  return out;
}

SolverResult solve(const LiftedProblem& p, const SolverOptions& options) {
  if (p.objective == Objective::GroupLasso) return solve_group_lasso_margin(p, options);
  if (p.family == LiftFamily::Shallow) return solve_shallow(p, options);
  return solve_quad_margin(p, options);
}

void write_result_json(std::ostream& out, const SolverResult& r) {
  nlohmann::ordered_json j;
  j["status"] = to_string(r.status);
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  j["objective"] = num(r.objective);
  j["dual_objective"] = num(r.dual_objective);
  j["primal_residual"] = num(r.primal_residual);
  j["stationarity"] = num(r.stationarity);
  j["complementarity"] = num(r.complementarity);
  j["iterations"] = r.iterations;
  j["lambda"] = std::vector<double>(r.lambda.data(), r.lambda.data() + r.lambda.size());
  nlohmann::json zeta = nlohmann::json::array();
  for (Eigen::Index b = 0; b < r.zeta.rows(); ++b) {
    zeta.push_back(std::vector<double>(r.zeta.row(b).data(), r.zeta.row(b).data() + r.zeta.cols()));
  }
  j["zeta"] = zeta;
  out << j.dump(1) << '\n';
}

}  // namespace glnbias
