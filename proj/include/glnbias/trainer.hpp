#pragma once

#include "glnbias/models.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace glnbias {

enum class Family { Gln, Shallow, Relu, Frelu };

Family parse_family(std::string_view name);
std::string_view to_string(Family family);

struct Shapes {
  int H = 0;
  int C = 2;
  Eigen::Index D = 0;
};

/// GLN: the (H*C) x D flattening of w1 is orthogonal (orthonormal rows when
/// H*C <= D, orthonormal columns otherwise) and w2 is a random unit vector.
/// ReLU: Kaiming normal, first layer N(0, 2/D) and readout N(0, 2/H).
/// FReLU: zeta ~ N(0, 2/D). The shallow family has no random init; build it
/// from the contexts with ShallowGLN's constructor.
AnyModel init_model(Family family, const Shapes& shapes, std::uint64_t seed);

struct Stage {
  int steps = 0;
  double lr = 0.0;
};

struct TrainConfig {
  std::vector<Stage> schedule{{1600, 0.04}, {1600, 0.01}};
  double momentum = 0.0;
  LossKind loss = LossKind::Logistic;
  int snapshot_every = 100;
  /// Divide loss and gradient by N (the usual framework default).
  bool mean_reduction = true;

  void validate() const;
  int total_steps() const;
};

struct Snapshot {
  int step = 0;
  Vector params;
  double loss = 0.0;        // training objective (mean when mean_reduction)
  double min_margin = 0.0;  // min_n y_n f(x_n), unnormalized
  double weight_norm = 0.0;
};

struct Trajectory {
  AnyModel model;  // final weights; snapshots share its shapes
  std::vector<Snapshot> snapshots;

  /// Model with the weights of snapshot i.
  AnyModel at(std::size_t i) const;
};

/// Thrown when the loss turns non-finite or exceeds the divergence guard.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDivergenceLoss = 1e12;

/// Full-batch gradient descent with heavy-ball momentum:
/// v <- momentum * v - lr * grad, w <- w + v. Snapshots at step 0, every
/// `snapshot_every` steps and at the final step.
Trajectory train(AnyModel model, const Dataset& data, const ContextMatrix& contexts, const TrainConfig& config);

struct DirectionRow {
  int step = 0;
  double loss = 0.0;
  double min_margin = 0.0;  // min_n y_n f(x_n; w / |w|)
  double weight_norm = 0.0;
  double cos_to_final = 0.0;
  double balance_gap = 0.0;  // NaN for families without a two-layer factorization
};

/// Balancedness gap max_h | |w2_h| - |w1_h| | for two-layer GLNs and ReLU nets.
double balance_gap(const AnyModel& model);

std::vector<DirectionRow> direction_metrics(const Trajectory& traj, const Dataset& data, const ContextMatrix& contexts);

/// CSV header `step,loss,min_margin,weight_norm,cos_to_final,balance_gap`.
void write_trajectory_csv(std::ostream& out, const std::vector<DirectionRow>& rows);
void write_trajectory_csv(const std::filesystem::path& path, const std::vector<DirectionRow>& rows);

}  // namespace glnbias
