#include "glnbias/nnls.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace glnbias {

namespace {

// Least squares restricted to the passive set P, via the Gram submatrix.
Vector solve_passive(const Eigen::MatrixXd& gram, const Vector& atb, const std::vector<Eigen::Index>& passive) {
  const auto k = static_cast<Eigen::Index>(passive.size());
  Eigen::MatrixXd sub(k, k);
  Vector rhs(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    rhs[i] = atb[passive[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = gram(passive[static_cast<std::size_t>(i)], passive[static_cast<std::size_t>(j)]);
  }
  // pivoted QR tolerates the rank-deficient subsets that duplicate columns produce
  return sub.colPivHouseholderQr().solve(rhs);
}

}  // namespace

NnlsResult nnls_gram(const Eigen::MatrixXd& gram, const Vector& atb, double tol, int max_iter) {
  const Eigen::Index n = atb.size();
  if (gram.rows() != n || gram.cols() != n) throw std::invalid_argument("nnls: gram must be square and match atb");
  if (max_iter <= 0) max_iter = static_cast<int>(3 * n + 30);

  NnlsResult out;
  out.x = Vector::Zero(n);
  std::vector<bool> in_passive(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> passive;
  const double scale = std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());

  for (out.iterations = 0; out.iterations < max_iter; ++out.iterations) {
    const Vector w = atb - gram * out.x;  // negative gradient
    Eigen::Index best = -1;
    double best_w = tol * scale;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!in_passive[static_cast<std::size_t>(j)] && w[j] > best_w) {
        best_w = w[j];
        best = j;
      }
    }
    if (best < 0) {
      out.converged = true;
      return out;
    }
    in_passive[static_cast<std::size_t>(best)] = true;
    passive.push_back(best);

    for (int inner = 0; inner <= static_cast<int>(n); ++inner) {
      const Vector z = solve_passive(gram, atb, passive);
      if (z.minCoeff() > 0.0) {
        for (std::size_t i = 0; i < passive.size(); ++i) out.x[passive[i]] = z[static_cast<Eigen::Index>(i)];
        break;
      }
      // step toward z until the first passive coordinate hits zero
      double alpha = 1.0;
      std::size_t blocking = 0;
      for (std::size_t i = 0; i < passive.size(); ++i) {
        const double zi = z[static_cast<Eigen::Index>(i)];
        if (zi <= 0.0) {
          const double xi = out.x[passive[i]];
          const double a = xi / (xi - zi);
          if (a < alpha || (a == alpha && alpha == 1.0)) {
            alpha = a;
            blocking = i;
          }
        }
      }
      for (std::size_t i = 0; i < passive.size(); ++i) {
        auto& xi = out.x[passive[i]];
        xi += alpha * (z[static_cast<Eigen::Index>(i)] - xi);
      }
      out.x[passive[blocking]] = 0.0;
      std::vector<Eigen::Index> keep;
      for (auto j : passive) {
        if (out.x[j] > 0.0) {
          keep.push_back(j);
        } else {
          out.x[j] = 0.0;
          in_passive[static_cast<std::size_t>(j)] = false;
        }
      }
      if (inner == 0 && alpha == 0.0 && keep.size() + 1 == passive.size() && !in_passive[static_cast<std::size_t>(best)]) {
        // the entering column cannot improve the fit: numerically optimal
        out.converged = true;
        return out;
      }
      passive = std::move(keep);
      if (passive.empty()) break;
    }
  }
  return out;
}

Vector min_norm_refine(const Eigen::MatrixXd& gram, const Vector& atb, const Vector& x, double tol) {
  const Vector w = atb - gram * x;
  const double scale = std::max({1.0, atb.cwiseAbs().maxCoeff(), gram.diagonal().cwiseAbs().maxCoeff()});
  std::vector<Eigen::Index> face;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x[j] > 0.0 || std::abs(w[j]) <= tol * scale) face.push_back(j);
  }
  if (face.empty()) return x;
  const auto k = static_cast<Eigen::Index>(face.size());
  Eigen::MatrixXd sub(k, k);
  Vector rhs(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    rhs[i] = atb[face[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = gram(face[static_cast<std::size_t>(i)], face[static_cast<std::size_t>(j)]);
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sub);
  cod.setThreshold(1e-12);
  const Vector z = cod.solve(rhs);
  if (z.minCoeff() < -tol * std::max(1.0, z.cwiseAbs().maxCoeff())) return x;
  Vector out = Vector::Zero(x.size());
  for (Eigen::Index i = 0; i < k; ++i) out[face[static_cast<std::size_t>(i)]] = std::max(0.0, z[i]);
  // accept only if the quadratic objective did not get worse
  const auto objective = [&](const Vector& v) { return 0.5 * v.dot(gram * v) - atb.dot(v); };
  if (objective(out) > objective(x) + tol * scale * std::max(1.0, std::abs(objective(x)))) return x;
  return out;
}

NnlsResult nnls(const Eigen::MatrixXd& a, const Vector& b, double tol, int max_iter) {
  if (a.rows() != b.size()) throw std::invalid_argument("nnls: row count of A must match b");
  return nnls_gram(a.transpose() * a, a.transpose() * b, tol, max_iter);
}

}  // namespace glnbias
