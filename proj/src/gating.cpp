#include "glnbias/gating.hpp"

#include "glnbias/format.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace glnbias {

namespace {

int log2_exact(int c) {
  if (c < 1 || (c & (c - 1)) != 0) {
    throw std::invalid_argument("contexts per unit must be a power of two, got " + std::to_string(c));
  }
  int k = 0;
  while ((1 << k) < c) ++k;
  return k;
}

}  // namespace

ContextFunction::ContextFunction(int units, int contexts, std::vector<std::vector<HalfspaceGate>> gates)
    : units_(units), contexts_(contexts), gates_per_unit_(log2_exact(contexts)), gates_(std::move(gates)) {
  if (units < 1) throw std::invalid_argument("context function needs at least one unit");
  if (static_cast<int>(gates_.size()) != units) throw std::invalid_argument("one gate list per unit required");
  for (const auto& unit : gates_) {
    if (static_cast<int>(unit.size()) != gates_per_unit_) {
      throw std::invalid_argument("each unit needs log2(C) gates");
    }
    for (const auto& g : unit) {
      if (dim_ == 0) dim_ = g.normal.size();
      if (g.normal.size() != dim_) throw std::invalid_argument("gate normals differ in dimension");
      if (!g.normal.allFinite() || g.normal.isZero(0.0) || !std::isfinite(g.cutoff)) {
        throw std::invalid_argument("gate normal must be finite and nonzero");
      }
    }
  }
}

std::int32_t ContextFunction::local_context(int unit, const Eigen::Ref<const Vector>& x) const {
  std::int32_t idx = 1;
  const auto& unit_gates = gates_[static_cast<std::size_t>(unit)];
  for (std::size_t k = 0; k < unit_gates.size(); ++k) {
    if (unit_gates[k].fires(x)) idx += std::int32_t{1} << k;
  }
  return idx;
}

double median_cutoff(std::vector<double> projections) {
  const std::size_t n = projections.size();
  if (n == 0) throw std::invalid_argument("median cutoff needs data");
  if (n == 1) return projections[0];
  std::sort(projections.begin(), projections.end());
  const std::size_t k = (n + 1) / 2;  // ceil(N/2), 1-based
  return 0.5 * (projections[k - 1] + projections[k]);
}

ContextFunction sample_contexts(Eigen::Index dim, int units, int contexts, const Dataset* data,
                                bool median, std::uint64_t seed) {
  const int per_unit = log2_exact(contexts);
  if (median && (data == nullptr || data->size() == 0)) {
    throw std::invalid_argument("median cutoff requested without data");
  }
  if (data != nullptr && data->dim() != dim) throw std::invalid_argument("data dimension mismatch");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal_dist(0.0, kGateNormalStddev);
  std::normal_distribution<double> cutoff_dist(0.0, kGateCutoffStddev);

  std::vector<std::vector<HalfspaceGate>> gates(static_cast<std::size_t>(units));
  for (auto& unit : gates) {
    for (int k = 0; k < per_unit; ++k) {
      HalfspaceGate g;
      g.normal.resize(dim);
      for (Eigen::Index j = 0; j < dim; ++j) g.normal[j] = normal_dist(rng);
      g.cutoff = cutoff_dist(rng);
      if (median) {
        const Vector proj = data->inputs * g.normal;
        g.cutoff = median_cutoff({proj.data(), proj.data() + proj.size()});
      }
      unit.push_back(std::move(g));
    }
  }
  return ContextFunction(units, contexts, std::move(gates));
}

GlobalContext assign_context(const ContextFunction& cf, const Eigen::Ref<const Vector>& x) {
  if (x.size() != cf.dim()) throw std::invalid_argument("input dimension mismatch");
  GlobalContext out(static_cast<std::size_t>(cf.units()));
  for (int h = 0; h < cf.units(); ++h) out[static_cast<std::size_t>(h)] = cf.local_context(h, x);
  return out;
}

ContextMatrix assign_contexts(const ContextFunction& cf, const Matrix& inputs) {
  if (inputs.cols() != cf.dim()) throw std::invalid_argument("input dimension mismatch");
  ContextMatrix out = ContextMatrix::Ones(inputs.rows(), cf.units());
  for (int h = 0; h < cf.units(); ++h) {
    const auto& unit = cf.gates(h);
    for (std::size_t k = 0; k < unit.size(); ++k) {
      const Vector proj = inputs * unit[k].normal;
      for (Eigen::Index n = 0; n < inputs.rows(); ++n) {
        if (proj[n] - unit[k].cutoff >= 0.0) out(n, h) += std::int32_t{1} << k;
      }
    }
  }
  return out;
}

ContextMatrix binary_gates(const ContextFunction& cf, const Matrix& inputs) {
  if (cf.contexts() != 2) throw std::invalid_argument("binary gates need exactly two contexts per unit");
  ContextMatrix out = assign_contexts(cf, inputs);
  out.array() -= 1;
  return out;
}

GlobalContext relu_gates(const Matrix& first_layer, const Eigen::Ref<const Vector>& x) {
  if (x.size() != first_layer.cols()) throw std::invalid_argument("input dimension mismatch");
  const Vector pre = first_layer * x;
  GlobalContext out(static_cast<std::size_t>(pre.size()));
  for (Eigen::Index h = 0; h < pre.size(); ++h) out[static_cast<std::size_t>(h)] = pre[h] > 0.0 ? 1 : 0;
  return out;
}

ContextMatrix relu_gates(const Matrix& first_layer, const Matrix& inputs) {
  if (inputs.cols() != first_layer.cols()) throw std::invalid_argument("input dimension mismatch");
  const Matrix pre = inputs * first_layer.transpose();
  return (pre.array() > 0.0).cast<std::int32_t>();
}

void write_context_function(std::ostream& out, const ContextFunction& cf) {
  out << "# contexts units=" << cf.units() << " contexts=" << cf.contexts() << " dim=" << cf.dim() << '\n';
  for (int h = 0; h < cf.units(); ++h) {
    for (const auto& g : cf.gates(h)) {
      out << h << ", " << fmt_double(g.cutoff);
      for (Eigen::Index j = 0; j < g.normal.size(); ++j) out << ", " << fmt_double(g.normal[j]);
      out << '\n';
    }
  }
}

void write_context_function(const std::filesystem::path& path, const ContextFunction& cf) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_context_function(out, cf);
}

ContextFunction read_context_function(std::istream& in) {
  std::map<int, std::vector<HalfspaceGate>> by_unit;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto cells = split_csv(t);
    if (cells.size() < 3) throw FormatError("context line needs unit, cutoff and a normal");
    HalfspaceGate g;
    const auto unit = static_cast<int>(parse_int(cells[0]));
    g.cutoff = parse_double(cells[1]);
    g.normal.resize(static_cast<Eigen::Index>(cells.size() - 2));
    for (std::size_t j = 2; j < cells.size(); ++j) g.normal[static_cast<Eigen::Index>(j - 2)] = parse_double(cells[j]);
    by_unit[unit].push_back(std::move(g));
  }
  if (by_unit.empty()) throw FormatError("context file has no gates");
  const int units = static_cast<int>(by_unit.size());
  if (by_unit.begin()->first != 0 || by_unit.rbegin()->first != units - 1) {
    throw FormatError("unit indices must be 0..H-1");
  }
  std::vector<std::vector<HalfspaceGate>> gates;
  for (auto& [unit, list] : by_unit) gates.push_back(std::move(list));
  const int per_unit = static_cast<int>(gates.front().size());
  return ContextFunction(units, 1 << per_unit, std::move(gates));
}

ContextFunction read_context_function(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_context_function(in);
}

}  // namespace glnbias
