#include "glnbias/norms.hpp"

#include "glnbias/format.hpp"
#include "glnbias/lifted.hpp"
#include "glnbias/solvers.hpp"

#include <json.hpp>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace glnbias {

QuadFormM::QuadFormM(int H, int C) : H_(H), C_(C), scale_(std::pow(static_cast<double>(C), H - 2)) {
  if (H < 1 || C < 1) throw std::invalid_argument("quadratic form needs H, C >= 1");
}

Matrix QuadFormM::structure() const {
  const Eigen::Index B = Eigen::Index{H_} * C_;
  Matrix s = Matrix::Ones(B, B);
  for (int h = 0; h < H_; ++h) s.block(Eigen::Index{h} * C_, Eigen::Index{h} * C_, C_, C_).array() -= 1.0;
  s.diagonal().array() += C_;
  return s;
}

namespace {

// Orthogonal projections onto the three invariant subspaces of S.
struct Projectors {
  Matrix ones;       // all-ones direction
  Matrix zero_sum;   // zero sum within every unit
};

Projectors projectors(int H, int C) {
  const Eigen::Index B = Eigen::Index{H} * C;
  Projectors p;
  p.ones = Matrix::Constant(B, B, 1.0 / static_cast<double>(B));
  p.zero_sum = Matrix::Identity(B, B);
  for (int h = 0; h < H; ++h) p.zero_sum.block(Eigen::Index{h} * C, Eigen::Index{h} * C, C, C).array() -= 1.0 / C;
  return p;
}

}  // namespace

Matrix QuadFormM::pseudo_inverse() const {
  const auto p = projectors(H_, C_);
  return (p.ones / static_cast<double>(H_ * C_) + p.zero_sum / static_cast<double>(C_)) / scale_;
}

Matrix QuadFormM::sqrt() const {
  const auto p = projectors(H_, C_);
  return (std::sqrt(static_cast<double>(H_ * C_)) * p.ones + std::sqrt(static_cast<double>(C_)) * p.zero_sum) *
         std::sqrt(scale_);
}

Matrix QuadFormM::apply(const Matrix& zeta) const {
  const Eigen::Index B = Eigen::Index{H_} * C_;
  if (zeta.rows() != B) throw std::invalid_argument("zeta must have H*C rows");
  const Eigen::RowVectorXd total = zeta.colwise().sum();
  Matrix out = C_ * zeta;
  for (int h = 0; h < H_; ++h) {
    const Eigen::RowVectorXd unit = zeta.middleRows(Eigen::Index{h} * C_, C_).colwise().sum();
    out.middleRows(Eigen::Index{h} * C_, C_).rowwise() += total - unit;
  }
  return out * scale_;
}

Matrix QuadFormM::gauge_part(const Matrix& zeta) const {
  const auto p = projectors(H_, C_);
  const Eigen::Index B = Eigen::Index{H_} * C_;
  return (Matrix::Identity(B, B) - p.ones - p.zero_sum) * zeta;
}

double l2_norm_beta(const GlnZeta& z) {
  const int H = z.H;
  const int C = z.C;
  if (z.zeta.rows() != Eigen::Index{H} * C) throw std::invalid_argument("zeta must have H*C rows");
  if (!z.zeta.allFinite()) throw std::invalid_argument("zeta must be finite");
  const Eigen::RowVectorXd total = z.zeta.colwise().sum();
  double units = 0.0;
  for (int h = 0; h < H; ++h) units += z.zeta.middleRows(Eigen::Index{h} * C, C).colwise().sum().squaredNorm();
  return std::pow(static_cast<double>(C), H - 2) * (total.squaredNorm() + C * z.zeta.squaredNorm() - units);
}

double frelu_norm(const Matrix& zeta) {
  if (!zeta.allFinite()) throw std::invalid_argument("zeta must be finite");
  return zeta.rowwise().norm().sum();
}

EquivarianceReport check_equivariance(const BetaTable& t, double tol) {
  EquivarianceReport rep;
  const Eigen::Index n = t.size();
  const double scale = std::max(1.0, t.values.cwiseAbs().maxCoeff());
  auto record = [&](Eigen::Index a, Eigen::Index b, Eigen::Index c, Eigen::Index d) {
    const double v = ((t.values.row(a) - t.values.row(b)) - (t.values.row(c) - t.values.row(d))).norm();
    rep.max_violation = std::max(rep.max_violation, v);
    ++rep.checked;
  };

  if (n <= 64) {
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto ga = t.context(a);
      for (Eigen::Index b = a + 1; b < n; ++b) {
        const auto gb = t.context(b);
        for (Eigen::Index c = 0; c < n; ++c) {
          // (c, d) must agree with (a, b) wherever a and b differ and share
          // their contexts elsewhere
          auto gc = t.context(c);
          bool ok = true;
          for (int h = 0; h < t.H && ok; ++h) {
            const auto uh = static_cast<std::size_t>(h);
            if (ga[uh] != gb[uh] && gc[uh] != ga[uh]) ok = false;
          }
          if (!ok) continue;
          auto gd = gc;
          for (int h = 0; h < t.H; ++h) {
            const auto uh = static_cast<std::size_t>(h);
            if (ga[uh] != gb[uh]) gd[uh] = gb[uh];
          }
          record(a, b, c, t.index(gd));
        }
      }
    }
  } else {
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto g = t.context(a);
      for (int h = 0; h < t.H; ++h) {
        for (int k = h + 1; k < t.H; ++k) {
          for (int c = 1; c <= t.C; ++c) {
            for (int d = 1; d <= t.C; ++d) {
              if (c == g[static_cast<std::size_t>(h)] || d == g[static_cast<std::size_t>(k)]) continue;
              auto gb = g;
              gb[static_cast<std::size_t>(h)] = c;
              auto gc = g;
              gc[static_cast<std::size_t>(k)] = d;
              auto gd = gb;
              gd[static_cast<std::size_t>(k)] = d;
              record(a, t.index(gb), t.index(gc), t.index(gd));
            }
          }
        }
      }
    }
  }
  rep.passed = rep.max_violation <= tol * scale;
  return rep;
}

std::vector<GlobalContext> free_contexts(int H, int C) {
  std::vector<GlobalContext> out;
  out.emplace_back(static_cast<std::size_t>(H), 1);
  for (int h = 0; h < H; ++h) {
    for (int c = 2; c <= C; ++c) {
      GlobalContext g(static_cast<std::size_t>(H), 1);
      g[static_cast<std::size_t>(h)] = c;
      out.push_back(std::move(g));
    }
  }
  return out;
}

BetaTable complete_predictors(int H, int C, const Matrix& free) {
  const auto anchors = free_contexts(H, C);
  if (free.rows() != static_cast<Eigen::Index>(anchors.size())) {
    throw std::invalid_argument("free set must have (C-1)H+1 = " + std::to_string(anchors.size()) + " predictors, got " +
                                std::to_string(free.rows()));
  }
  const auto count = context_count(H, C);
  if (count < 0) throw std::invalid_argument("C^H exceeds the beta table cap");
  BetaTable t{H, C, Matrix::Zero(count, free.cols())};
  std::vector<bool> done(static_cast<std::size_t>(count), false);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto idx = t.index(anchors[i]);
    t.values.row(idx) = free.row(static_cast<Eigen::Index>(i));
    done[static_cast<std::size_t>(idx)] = true;
  }
  const Eigen::Index one = 0;  // the all-ones context sits at index 0
  for (Eigen::Index i = 0; i < count; ++i) {
    if (done[static_cast<std::size_t>(i)]) continue;
    // peel off the highest unit whose context is not 1; the rest has a
    // smaller index and is already filled
    const auto g = t.context(i);
    int top = t.H - 1;
    while (g[static_cast<std::size_t>(top)] == 1) --top;
    GlobalContext single(static_cast<std::size_t>(H), 1);
    single[static_cast<std::size_t>(top)] = g[static_cast<std::size_t>(top)];
    auto rest = g;
    rest[static_cast<std::size_t>(top)] = 1;
    t.values.row(i) = t.values.row(t.index(single)) + t.values.row(t.index(rest)) - t.values.row(one);
    done[static_cast<std::size_t>(i)] = true;
  }
  return t;
}

namespace {

void require_2x2(const BetaTable& t) {
  if (t.H != 2 || t.C != 2 || t.size() != 4) throw std::invalid_argument("closed form needs H = C = 2");
}

// beta_ij with i the context of unit 0 and j that of unit 1.
Vector b2(const BetaTable& t, int i, int j) { return t.beta({i, j}).transpose(); }

}  // namespace

ClosedForm2x2 gln_norm_closed_2x2(const BetaTable& t) {
  require_2x2(t);
  const Vector b11 = b2(t, 1, 1), b12 = b2(t, 1, 2), b21 = b2(t, 2, 1);
  const double d1 = (b11 - b12).norm();
  const double d2 = (b11 - b21).norm();
  ClosedForm2x2 out;
  out.value = std::sqrt((d1 + d2) * (d1 + d2) + (b12 + b21).squaredNorm());
  out.alpha = d1 + d2 > 0.0 ? d2 / (d1 + d2) : 0.5;
  return out;
}

double gln_norm_sq_pairwise_2x2(const BetaTable& t) {
  require_2x2(t);
  double cross = 0.0;
  for (int i = 1; i <= 2; ++i) {
    for (int j = 1; j <= 2; ++j) {
      const Vector b = b2(t, i, j);
      cross += (b - b2(t, 3 - i, j)).norm() * (b - b2(t, i, 3 - j)).norm();
    }
  }
  return t.values.squaredNorm() + 0.5 * cross;
}

NormReport gln_norm_variational(const BetaTable& t, double tol, int max_iter) {
  const auto eq = check_equivariance(t, std::max(tol, 1e-10));
  if (!eq.passed) {
    throw std::invalid_argument("beta table violates equivariance (max violation " + fmt_double(eq.max_violation) + ")");
  }
  const int H = t.H;
  const int C = t.C;
  const Eigen::Index D = t.dim();
  const Eigen::Index B = Eigen::Index{H} * C;

  NormReport rep;
  rep.zeta = GlnZeta{H, C, Matrix::Zero(B, D)};
  if (t.values.isZero(0.0)) return rep;

  // equality rows (gamma, d): sum_h zeta_{h gamma_h d} = beta_gamma[d]
  LiftedProblem p;
  p.objective = Objective::GroupLasso;
  p.family = LiftFamily::Gln;
  p.equality = true;
  p.H = H;
  p.C = C;
  const Eigen::Index N = t.size() * D;
  p.gates = Matrix::Zero(N, B);
  p.rows = Matrix::Zero(N, D);
  p.rhs.resize(N);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const auto g = t.context(i);
    for (Eigen::Index d = 0; d < D; ++d) {
      const Eigen::Index r = i * D + d;
      for (int h = 0; h < H; ++h) p.gates(r, Eigen::Index{h} * C + g[static_cast<std::size_t>(h)] - 1) = 1.0;
      p.rows(r, d) = 1.0;
      p.rhs[r] = t.values(i, d);
    }
  }
  for (int h = 0; h < H; ++h) {
    std::vector<Eigen::Index> grp;
    for (int c = 0; c < C; ++c) grp.push_back(Eigen::Index{h} * C + c);
    p.groups.push_back(std::move(grp));
  }

  // gauge-symmetric feasible start: zeta_hc = beta(c at h) - (H-1)/H beta(1)
  Matrix start(B, D);
  const Eigen::RowVectorXd base = t.values.row(0);
  for (int h = 0; h < H; ++h) {
    for (int c = 1; c <= C; ++c) {
      GlobalContext g(static_cast<std::size_t>(H), 1);
      g[static_cast<std::size_t>(h)] = c;
      start.row(Eigen::Index{h} * C + c - 1) = t.values.row(t.index(g)) - (H - 1.0) / H * base;
    }
  }

  SolverOptions opt;
  opt.tol = tol;
  opt.max_iter = max_iter;
  opt.warm_start = start;
  const auto r = solve_group_lasso_margin(p, opt);
  rep.value = r.objective;
  rep.residual = std::max({r.primal_residual, r.stationarity});
  rep.iterations = r.iterations;
  rep.zeta.zeta = r.zeta;
  if (H == 2 && C == 2) rep.alpha = gln_norm_closed_2x2(t).alpha;
  return rep;
}

void write_norm_report(std::ostream& out, const NormReport& report) {
  nlohmann::ordered_json j;
  j["value"] = report.value;
  j["alpha"] = report.alpha;
  j["residual"] = report.residual;
  j["iterations"] = report.iterations;
  out << j.dump(1) << '\n';
}

void write_beta_table_csv(std::ostream& out, const BetaTable& t) {
  out << "gamma_tuple";
  for (Eigen::Index d = 0; d < t.dim(); ++d) out << ",beta_" << d;
  out << '\n';
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const auto g = t.context(i);
    for (std::size_t h = 0; h < g.size(); ++h) out << (h ? "-" : "") << g[h];
    for (Eigen::Index d = 0; d < t.dim(); ++d) out << ',' << fmt_double(t.values(i, d));
    out << '\n';
  }
}

BetaTable read_beta_table_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty beta table");
  const auto header = split_csv(line);
  if (header.empty() || header[0] != "gamma_tuple") throw FormatError("beta table header must start with gamma_tuple");
  const auto D = static_cast<Eigen::Index>(header.size() - 1);
  std::vector<std::pair<GlobalContext, std::vector<double>>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (static_cast<Eigen::Index>(cells.size()) != D + 1) throw FormatError("ragged beta table row");
    GlobalContext g;
    for (const auto& part : split_csv(cells[0], '-')) g.push_back(static_cast<std::int32_t>(parse_int(part)));
    std::vector<double> v;
    for (std::size_t j = 1; j < cells.size(); ++j) v.push_back(parse_double(cells[j]));
    rows.emplace_back(std::move(g), std::move(v));
  }
  if (rows.empty()) throw FormatError("beta table has no rows");
  const int H = static_cast<int>(rows.front().first.size());
  int C = 1;
  for (const auto& [g, v] : rows) {
    for (auto c : g) C = std::max(C, static_cast<int>(c));
  }
  const auto count = context_count(H, C);
  if (count != static_cast<Eigen::Index>(rows.size())) throw FormatError("beta table must list all C^H contexts");
  BetaTable t{H, C, Matrix::Zero(count, D)};
  for (const auto& [g, v] : rows) {
    t.values.row(t.index(g)) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), D);
  }
  return t;
}

}  // namespace glnbias
