#pragma once

#include "glnbias/data.hpp"
#include "glnbias/types.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>

namespace glnbias {

enum class LossKind { Exponential, Logistic };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

/// l(u) for margin u. Logistic is evaluated as log1p(exp(-|u|)) + max(-u, 0).
double loss_value(LossKind kind, double u);
/// dl/du.
double loss_derivative(LossKind kind, double u);

// Every model keeps its weights in one flat vector so the trainer and the
// gradient checks can treat all families alike.

/// Two-layer gated linear network. Layout: w1 as (H*C) x D rows ordered
/// (h, c), then w2 (H entries).
struct TwoLayerGLN {
  int H = 0;
  int C = 0;
  Eigen::Index D = 0;
  Vector params;

  TwoLayerGLN() = default;
  TwoLayerGLN(int units, int contexts, Eigen::Index dim);

  Eigen::Map<Matrix> w1() { return {params.data(), Eigen::Index{H} * C, D}; }
  Eigen::Map<const Matrix> w1() const { return {params.data(), Eigen::Index{H} * C, D}; }
  Eigen::VectorBlock<Vector> w2() { return params.tail(H); }
  Eigen::VectorBlock<const Vector> w2() const { return params.tail(H); }
  /// Row of w1 for unit h (0-based) and local context c (1-based).
  Eigen::Index row(int h, std::int32_t c) const { return Eigen::Index{h} * C + (c - 1); }
};

/// One independent linear predictor per global context seen so far.
struct ShallowGLN {
  Eigen::Index D = 0;
  std::map<GlobalContext, Eigen::Index> index;  // context -> row of params
  Vector params;                                // rows x D

  ShallowGLN() = default;
  ShallowGLN(Eigen::Index dim, const ContextMatrix& contexts);

  Eigen::Index rows() const { return static_cast<Eigen::Index>(index.size()); }
  Eigen::Map<Matrix> table() { return {params.data(), rows(), D}; }
  Eigen::Map<const Matrix> table() const { return {params.data(), rows(), D}; }
  /// Row of a context, or -1 when the context was never seen (predictor 0).
  Eigen::Index find(const GlobalContext& g) const;
};

/// z = sum_h a_h max(<w_h, x>, 0). Layout: first layer H x D, then readout.
struct ReluNet {
  int H = 0;
  Eigen::Index D = 0;
  Vector params;

  ReluNet() = default;
  ReluNet(int units, Eigen::Index dim);

  Eigen::Map<Matrix> first() { return {params.data(), H, D}; }
  Eigen::Map<const Matrix> first() const { return {params.data(), H, D}; }
  Eigen::VectorBlock<Vector> readout() { return params.tail(H); }
  Eigen::VectorBlock<const Vector> readout() const { return params.tail(H); }
};

/// Frozen-gate ReLU network stored as zeta (H x D): beta_gamma is the sum of
/// the rows whose gate is open.
struct FReluNet {
  int H = 0;
  Eigen::Index D = 0;
  Vector params;

  FReluNet() = default;
  FReluNet(int units, Eigen::Index dim);

  Eigen::Map<Matrix> zeta() { return {params.data(), H, D}; }
  Eigen::Map<const Matrix> zeta() const { return {params.data(), H, D}; }
};

/// Snapshot of a ReLU network with its gates frozen: zeta_h = a_h w_h.
FReluNet freeze(const ReluNet& net);

/// beta_gamma = sum_h w2_h w1[h, gamma_h].
Vector gln_beta(const TwoLayerGLN& model, const GlobalContext& gamma);

double forward(const TwoLayerGLN& model, const Eigen::Ref<const Vector>& x, const GlobalContext& gamma);
double forward(const ShallowGLN& model, const Eigen::Ref<const Vector>& x, const GlobalContext& gamma);
double forward(const FReluNet& model, const Eigen::Ref<const Vector>& x, const GlobalContext& gates);
double forward(const ReluNet& model, const Eigen::Ref<const Vector>& x);

/// Scores for every row; `contexts` is ignored by ReluNet.
Vector scores(const TwoLayerGLN& model, const Matrix& inputs, const ContextMatrix& contexts);
Vector scores(const ShallowGLN& model, const Matrix& inputs, const ContextMatrix& contexts);
Vector scores(const FReluNet& model, const Matrix& inputs, const ContextMatrix& contexts);
Vector scores(const ReluNet& model, const Matrix& inputs, const ContextMatrix& contexts = {});

struct LossGrad {
  double loss = 0.0;
  Vector grad;  // same layout as the model's params
};

/// Summed loss sum_n l(y_n f(x_n; gamma_n)) and its exact gradient.
LossGrad loss_and_grad(const TwoLayerGLN& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind);
LossGrad loss_and_grad(const ShallowGLN& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind);
LossGrad loss_and_grad(const FReluNet& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind);
LossGrad loss_and_grad(const ReluNet& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind);

/// zeta for a two-layer GLN, (H*C) x D in the same row order as w1.
struct GlnZeta {
  int H = 0;
  int C = 0;
  Matrix zeta;

  Eigen::Index dim() const { return zeta.cols(); }
  /// Frobenius norm of unit h's block.
  double block_norm(int h) const { return zeta.middleRows(Eigen::Index{h} * C, C).norm(); }
};

GlnZeta w_to_zeta(const TwoLayerGLN& model);
/// Balanced factorization: w2_h = sqrt(|zeta_h|), w1_h = zeta_h / sqrt(|zeta_h|).
TwoLayerGLN zeta_to_w(const GlnZeta& zeta);

/// beta_gamma over all C^H global contexts, rows in mixed-radix order with
/// unit 0 least significant.
struct BetaTable {
  int H = 0;
  int C = 0;
  Matrix values;  // C^H x D

  Eigen::Index dim() const { return values.cols(); }
  Eigen::Index size() const { return values.rows(); }
  Eigen::Index index(const GlobalContext& gamma) const;
  GlobalContext context(Eigen::Index index) const;
  auto beta(const GlobalContext& gamma) const { return values.row(index(gamma)); }
};

inline constexpr Eigen::Index kBetaTableCap = 4096;

/// Number of global contexts C^H, or -1 when it exceeds `cap`.
Eigen::Index context_count(int H, int C, Eigen::Index cap = kBetaTableCap);
BetaTable beta_table(const TwoLayerGLN& model);
BetaTable beta_table(const GlnZeta& zeta);

using AnyModel = std::variant<TwoLayerGLN, ShallowGLN, ReluNet, FReluNet>;

struct Checkpoint {
  AnyModel model;
  LossKind loss = LossKind::Logistic;
  std::string contexts;  // path of the context function file, may be empty
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
std::string_view family_name(const AnyModel& model);

/// Degree of homogeneity of the score in the parameters: 2 for the two-layer
/// families, 1 for the shallow and frozen-gate parameterizations.
int homogeneity_degree(const AnyModel& model);
const Vector& parameters(const AnyModel& model);
Vector& parameters(AnyModel& model);
Vector scores(const AnyModel& model, const Matrix& inputs, const ContextMatrix& contexts);
LossGrad loss_and_grad(const AnyModel& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind);

}  // namespace glnbias
