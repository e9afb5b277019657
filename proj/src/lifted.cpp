#include "glnbias/lifted.hpp"

#include "glnbias/format.hpp"
#include "glnbias/norms.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

namespace glnbias {

Objective parse_objective(std::string_view name) {
  if (name == "group_lasso") return Objective::GroupLasso;
  if (name == "quad_m") return Objective::QuadM;
  if (name == "plain_l2") return Objective::PlainL2;
  throw std::invalid_argument("unknown objective '" + std::string(name) + "'");
}

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::GroupLasso: return "group_lasso";
    case Objective::QuadM: return "quad_m";
    case Objective::PlainL2: return "plain_l2";
  }
  return "?";
}

LiftFamily parse_lift_family(std::string_view name) {
  if (name == "gln") return LiftFamily::Gln;
  if (name == "frelu") return LiftFamily::Frelu;
  if (name == "shallow") return LiftFamily::Shallow;
  if (name == "plain") return LiftFamily::Plain;
  throw std::invalid_argument("unknown lift family '" + std::string(name) + "'");
}

std::string_view to_string(LiftFamily family) {
  switch (family) {
    case LiftFamily::Gln: return "gln";
    case LiftFamily::Frelu: return "frelu";
    case LiftFamily::Shallow: return "shallow";
    case LiftFamily::Plain: return "plain";
  }
  return "?";
}

Vector LiftedProblem::apply(const Matrix& zeta) const {
  const Matrix proj = rows * zeta.transpose();  // N x B
  return (proj.array() * gates.array()).rowwise().sum();
}

Matrix LiftedProblem::apply_transpose(const Vector& lambda) const {
  const Matrix weighted = gates.array().colwise() * lambda.array();  // N x B
  return weighted.transpose() * rows;
}

Eigen::MatrixXd LiftedProblem::kernel(const Matrix& block_metric) const {
  const Eigen::MatrixXd inner = rows * rows.transpose();
  const Eigen::MatrixXd routed = gates * block_metric * gates.transpose();
  return inner.cwiseProduct(routed);
}

Eigen::MatrixXd LiftedProblem::kernel() const {
  const Eigen::MatrixXd inner = rows * rows.transpose();
  const Eigen::MatrixXd routed = gates * gates.transpose();
  return inner.cwiseProduct(routed);
}

Vector LiftedProblem::row_norms() const {
  return (rows.rowwise().norm().array() * gates.rowwise().norm().array()).matrix();
}

Matrix LiftedProblem::quad_structure() const {
  if (objective == Objective::QuadM) return QuadFormM(H, C).structure() * QuadFormM(H, C).scale();
  return Matrix::Identity(blocks(), blocks());
}

Matrix LiftedProblem::quad_pseudo_inverse() const {
  if (objective == Objective::QuadM) return QuadFormM(H, C).pseudo_inverse();
  return Matrix::Identity(blocks(), blocks());
}

void LiftedProblem::validate() const {
  if (gates.rows() != rows.rows() || rhs.size() != rows.rows()) throw std::invalid_argument("lifted problem: row counts differ");
  std::vector<int> seen(static_cast<std::size_t>(blocks()), 0);
  for (const auto& g : groups) {
    for (auto b : g) {
      if (b < 0 || b >= blocks()) throw std::invalid_argument("lifted problem: group index out of range");
      ++seen[static_cast<std::size_t>(b)];
    }
  }
  for (int s : seen) {
    if (s != 1) throw std::invalid_argument("lifted problem: groups must partition the blocks");
  }
  if (objective == Objective::QuadM && (H < 1 || C < 1 || Eigen::Index{H} * C != blocks())) {
    throw std::invalid_argument("lifted problem: QUAD_M needs B = H*C");
  }
}

LiftedProblem lift(const Dataset& data, const ContextMatrix& contexts, LiftFamily family, Objective objective,
                   int contexts_per_unit) {
  LiftedProblem p;
  p.family = family;
  p.objective = objective;
  const Eigen::Index N = data.size();
  if (family != LiftFamily::Plain && contexts.rows() != N) throw std::invalid_argument("lift: missing contexts");

  std::vector<Eigen::Index> keep;
  switch (family) {
    case LiftFamily::Gln: {
      const int H = static_cast<int>(contexts.cols());
      const int C = contexts_per_unit;
      p.H = H;
      p.C = C;
      p.gates = Matrix::Zero(N, Eigen::Index{H} * C);
      for (Eigen::Index n = 0; n < N; ++n) {
        for (int h = 0; h < H; ++h) {
          const auto c = contexts(n, h);
          if (c < 1 || c > C) throw std::invalid_argument("lift: context out of range");
          p.gates(n, Eigen::Index{h} * C + c - 1) = 1.0;
        }
        keep.push_back(n);
      }
      for (int h = 0; h < H; ++h) {
        std::vector<Eigen::Index> g;
        for (int c = 0; c < C; ++c) g.push_back(Eigen::Index{h} * C + c);
        p.groups.push_back(std::move(g));
      }
      break;
    }
    case LiftFamily::Frelu: {
      const auto H = contexts.cols();
      p.H = static_cast<int>(H);
      p.C = 1;
      for (Eigen::Index n = 0; n < N; ++n) {
        if ((contexts.row(n).array() != 0).any()) {
          keep.push_back(n);
        } else {
          p.excluded.push_back(n);
        }
      }
      p.gates.resize(static_cast<Eigen::Index>(keep.size()), H);
      for (std::size_t r = 0; r < keep.size(); ++r) {
        p.gates.row(static_cast<Eigen::Index>(r)) = (contexts.row(keep[r]).array() != 0).cast<double>();
      }
      for (Eigen::Index h = 0; h < H; ++h) p.groups.push_back({h});
      break;
    }
    case LiftFamily::Shallow: {
      std::map<GlobalContext, Eigen::Index> index;
      for (Eigen::Index n = 0; n < N; ++n) index.emplace(context_row(contexts, n), 0);
      for (auto& [g, b] : index) {
        b = static_cast<Eigen::Index>(p.block_contexts.size());
        p.block_contexts.push_back(g);
        p.groups.push_back({b});
      }
      p.gates = Matrix::Zero(N, static_cast<Eigen::Index>(index.size()));
      for (Eigen::Index n = 0; n < N; ++n) {
        p.gates(n, index.at(context_row(contexts, n))) = 1.0;
        keep.push_back(n);
      }
      break;
    }
    case LiftFamily::Plain:
      p.gates = Matrix::Ones(N, 1);
      p.groups.push_back({0});
      for (Eigen::Index n = 0; n < N; ++n) keep.push_back(n);
      break;
  }
  if (objective == Objective::QuadM && family != LiftFamily::Gln) {
    throw std::invalid_argument("lift: the QUAD_M objective needs the gln family");
  }

  p.rows.resize(static_cast<Eigen::Index>(keep.size()), data.dim());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    p.rows.row(static_cast<Eigen::Index>(r)) = data.labels[keep[r]] * data.inputs.row(keep[r]);
  }
  p.rhs = Vector::Ones(static_cast<Eigen::Index>(keep.size()));
  p.sample_index = std::move(keep);
  return p;
}

std::vector<Eigen::Index> structural_conflict(const LiftedProblem& p) {
  std::map<std::vector<double>, Eigen::Index> seen;
  const auto row_key = [&](Eigen::Index n, double sign) {
    std::vector<double> key(p.gates.row(n).data(), p.gates.row(n).data() + p.blocks());
    for (Eigen::Index j = 0; j < p.dim(); ++j) key.push_back(sign * p.rows(n, j) + 0.0);
    return key;
  };
  for (Eigen::Index n = 0; n < p.size(); ++n) {
    if (!p.equality && p.rhs[n] > 0 && (p.gates.row(n).isZero(0.0) || p.rows.row(n).isZero(0.0))) return {n};
    if (p.equality) continue;
    const auto it = seen.find(row_key(n, -1.0));
    if (it != seen.end() && p.rhs[n] + p.rhs[it->second] > 0) return {it->second, n};
    seen.emplace(row_key(n, 1.0), n);
  }
  return {};
}

void write_problem(std::ostream& out, const LiftedProblem& p) {
  out << "# lifted problem schema=1\n";
  out << "objective " << to_string(p.objective) << '\n';
  out << "family " << to_string(p.family) << '\n';
  out << "shape rows=" << p.size() << " blocks=" << p.blocks() << " dim=" << p.dim() << " H=" << p.H << " C=" << p.C
      << " equality=" << (p.equality ? 1 : 0) << '\n';
  for (const auto& g : p.groups) {
    out << "group";
    for (auto b : g) out << ' ' << b;
    out << '\n';
  }
  for (auto n : p.excluded) out << "excluded " << n << '\n';
  for (Eigen::Index n = 0; n < p.size(); ++n) {
    for (Eigen::Index b = 0; b < p.blocks(); ++b) {
      if (p.gates(n, b) != 0.0) out << "gate " << n << ' ' << b << ' ' << fmt_double(p.gates(n, b)) << '\n';
    }
  }
  for (Eigen::Index n = 0; n < p.size(); ++n) {
    const auto sample = n < static_cast<Eigen::Index>(p.sample_index.size()) ? p.sample_index[static_cast<std::size_t>(n)] : n;
    out << "row " << n << ' ' << sample << ' ' << fmt_double(p.rhs[n]);
    for (Eigen::Index j = 0; j < p.dim(); ++j) out << ' ' << fmt_double(p.rows(n, j));
    out << '\n';
  }
}

LiftedProblem read_problem(std::istream& in) {
  LiftedProblem p;
  std::string line;
  Eigen::Index n_rows = -1, n_blocks = -1, dim = -1;
  bool have_shape = false;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::istringstream ss{std::string(t)};
    std::string tag;
    ss >> tag;
    if (tag == "objective") {
      std::string v;
      ss >> v;
      p.objective = parse_objective(v);
    } else if (tag == "family") {
      std::string v;
      ss >> v;
      p.family = parse_lift_family(v);
    } else if (tag == "shape") {
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw FormatError("bad shape entry '" + kv + "'");
        const auto key = kv.substr(0, eq);
        const auto value = parse_int(kv.substr(eq + 1));
        if (key == "rows") n_rows = value;
        else if (key == "blocks") n_blocks = value;
        else if (key == "dim") dim = value;
        else if (key == "H") p.H = static_cast<int>(value);
        else if (key == "C") p.C = static_cast<int>(value);
        else if (key == "equality") p.equality = value != 0;
        else throw FormatError("unknown shape key '" + key + "'");
      }
      if (n_rows < 0 || n_blocks < 0 || dim < 0) throw FormatError("shape line needs rows, blocks and dim");
      p.gates = Matrix::Zero(n_rows, n_blocks);
      p.rows = Matrix::Zero(n_rows, dim);
      p.rhs = Vector::Zero(n_rows);
      p.sample_index.assign(static_cast<std::size_t>(n_rows), 0);
      have_shape = true;
    } else if (!have_shape) {
      throw FormatError("problem dump: '" + tag + "' before the shape line");
    } else if (tag == "group") {
      std::vector<Eigen::Index> g;
      Eigen::Index b;
      while (ss >> b) g.push_back(b);
      p.groups.push_back(std::move(g));
    } else if (tag == "excluded") {
      Eigen::Index n;
      ss >> n;
      p.excluded.push_back(n);
    } else if (tag == "gate") {
      Eigen::Index n, b;
      std::string v;
      if (!(ss >> n >> b >> v) || n < 0 || n >= n_rows || b < 0 || b >= n_blocks) throw FormatError("bad gate triplet");
      p.gates(n, b) = parse_double(v);
    } else if (tag == "row") {
      Eigen::Index n, sample;
      std::string v;
      if (!(ss >> n >> sample >> v) || n < 0 || n >= n_rows) throw FormatError("bad row line");
      p.sample_index[static_cast<std::size_t>(n)] = sample;
      p.rhs[n] = parse_double(v);
      for (Eigen::Index j = 0; j < dim; ++j) {
        if (!(ss >> v)) throw FormatError("short row line");
        p.rows(n, j) = parse_double(v);
      }
    } else {
      throw FormatError("unknown problem dump line '" + tag + "'");
    }
  }
  if (!have_shape) throw FormatError("problem dump has no shape line");
  p.validate();
  return p;
}

}  // namespace glnbias
