#pragma once

#include "glnbias/data.hpp"
#include "glnbias/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace glnbias {

/// Fires 1 iff <normal, x> - cutoff >= 0.
struct HalfspaceGate {
  Vector normal;
  double cutoff = 0.0;

  bool fires(const Eigen::Ref<const Vector>& x) const { return normal.dot(x) - cutoff >= 0.0; }
};

/// Per hidden unit, an ordered list of gates. With k gates per unit the
/// local context is 1 + sum_k 2^k * gate_k, so C = 2^k contexts.
class ContextFunction {
 public:
  ContextFunction() = default;
  ContextFunction(int units, int contexts, std::vector<std::vector<HalfspaceGate>> gates);

  int units() const { return units_; }
  int contexts() const { return contexts_; }
  int gates_per_unit() const { return gates_per_unit_; }
  Eigen::Index dim() const { return dim_; }
  const std::vector<HalfspaceGate>& gates(int unit) const { return gates_[static_cast<std::size_t>(unit)]; }

  /// Local context (1..C) of one unit.
  std::int32_t local_context(int unit, const Eigen::Ref<const Vector>& x) const;

 private:
  int units_ = 0;
  int contexts_ = 1;
  int gates_per_unit_ = 0;
  Eigen::Index dim_ = 0;
  std::vector<std::vector<HalfspaceGate>> gates_;
};

inline constexpr double kGateNormalStddev = 36.0;
inline constexpr double kGateCutoffStddev = 9.0;

/// Random halfspace contexts: normals ~ N(0, 36^2) per coordinate, cutoffs
/// ~ N(0, 9^2). With `median`, every gate's cutoff is replaced by the
/// midpoint of the ceil(N/2)-th and (ceil(N/2)+1)-th order statistics of the
/// projections of `data`, splitting the training set in half.
ContextFunction sample_contexts(Eigen::Index dim, int units, int contexts, const Dataset* data,
                                bool median, std::uint64_t seed);

/// Midpoint between the ceil(N/2)-th and (ceil(N/2)+1)-th smallest values.
double median_cutoff(std::vector<double> projections);

GlobalContext assign_context(const ContextFunction& cf, const Eigen::Ref<const Vector>& x);
ContextMatrix assign_contexts(const ContextFunction& cf, const Matrix& inputs);

/// Binary contexts 0/1 from a C = 2 context function (gate value = context - 1).
ContextMatrix binary_gates(const ContextFunction& cf, const Matrix& inputs);

/// Gate h is 1 iff <first_layer_h, x> > 0 (strict).
GlobalContext relu_gates(const Matrix& first_layer, const Eigen::Ref<const Vector>& x);
ContextMatrix relu_gates(const Matrix& first_layer, const Matrix& inputs);

/// Plain text: one line per gate `unit_index, cutoff, normal...` with 17
/// significant digits, preceded by a `# contexts units=H contexts=C dim=D` line.
void write_context_function(std::ostream& out, const ContextFunction& cf);
void write_context_function(const std::filesystem::path& path, const ContextFunction& cf);
ContextFunction read_context_function(std::istream& in);
ContextFunction read_context_function(const std::filesystem::path& path);

}  // namespace glnbias
