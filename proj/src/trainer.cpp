#include "glnbias/trainer.hpp"

#include "glnbias/format.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <string>

namespace glnbias {

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

// Thin Q of a tall matrix with the sign of diag(R) folded in, which makes the
// result Haar distributed.
Matrix thin_q(const Eigen::MatrixXd& tall) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(tall);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall.rows(), tall.cols());
  const Eigen::MatrixXd r = qr.matrixQR().topRows(tall.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < tall.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

Matrix orthogonal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const Matrix a = gaussian(rows, cols, 1.0, rng);
  if (rows <= cols) return thin_q(a.transpose()).transpose();
  return thin_q(a);
}

}  // namespace

Family parse_family(std::string_view name) {
  if (name == "gln") return Family::Gln;
  if (name == "shallow") return Family::Shallow;
  if (name == "relu") return Family::Relu;
  if (name == "frelu") return Family::Frelu;
  throw std::invalid_argument("unknown model family '" + std::string(name) + "'");
}

std::string_view to_string(Family family) {
  switch (family) {
    case Family::Gln: return "gln";
    case Family::Shallow: return "shallow";
    case Family::Relu: return "relu";
    case Family::Frelu: return "frelu";
  }
  return "?";
}

AnyModel init_model(Family family, const Shapes& s, std::uint64_t seed) {
  if (s.H < 1 || s.D < 1) throw std::invalid_argument("init_model: H and D must be positive");
  std::mt19937_64 rng(seed);
  switch (family) {
    case Family::Gln: {
      TwoLayerGLN m(s.H, s.C, s.D);
      m.w1() = orthogonal(Eigen::Index{s.H} * s.C, s.D, rng);
      const Matrix w2 = gaussian(s.H, 1, 1.0, rng);
      m.w2() = w2.col(0) / w2.norm();
      return m;
    }
    case Family::Relu: {
      ReluNet m(s.H, s.D);
      m.first() = gaussian(s.H, s.D, std::sqrt(2.0 / static_cast<double>(s.D)), rng);
      m.readout() = gaussian(s.H, 1, std::sqrt(2.0 / s.H), rng).col(0);
      return m;
    }
    case Family::Frelu: {
      FReluNet m(s.H, s.D);
      m.zeta() = gaussian(s.H, s.D, std::sqrt(2.0 / static_cast<double>(s.D)), rng);
      return m;
    }
    case Family::Shallow: break;
  }
  throw std::invalid_argument("the shallow family is built from its contexts, not initialized");
}

void TrainConfig::validate() const {
  if (schedule.empty()) throw std::invalid_argument("empty training schedule");
  for (const auto& st : schedule) {
    if (st.steps <= 0) throw std::invalid_argument("schedule steps must be positive");
    if (!(st.lr > 0)) throw std::invalid_argument("learning rates must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (snapshot_every <= 0) throw std::invalid_argument("snapshot cadence must be positive");
}

int TrainConfig::total_steps() const {
  int n = 0;
  for (const auto& st : schedule) n += st.steps;
  return n;
}

AnyModel Trajectory::at(std::size_t i) const {
  AnyModel m = model;
  parameters(m) = snapshots.at(i).params;
  return m;
}

Trajectory train(AnyModel model, const Dataset& data, const ContextMatrix& contexts, const TrainConfig& config) {
  config.validate();
  const double scale = config.mean_reduction ? 1.0 / static_cast<double>(data.size()) : 1.0;

  Trajectory traj;
  auto record = [&](int step, const AnyModel& m) {
    const Vector s = scores(m, data.inputs, contexts);
    Snapshot snap;
    snap.step = step;
    snap.params = parameters(m);
    double loss = 0.0;
    double margin = std::numeric_limits<double>::infinity();
    for (Eigen::Index n = 0; n < s.size(); ++n) {
      const double u = data.labels[n] * s[n];
      loss += loss_value(config.loss, u);
      margin = std::min(margin, u);
    }
    snap.loss = loss * scale;
    snap.min_margin = margin;
    snap.weight_norm = snap.params.norm();
    traj.snapshots.push_back(std::move(snap));
  };

  record(0, model);
  Vector velocity = Vector::Zero(parameters(model).size());
  const int total = config.total_steps();
  int step = 0;
  for (const auto& stage : config.schedule) {
    for (int i = 0; i < stage.steps; ++i) {
      const LossGrad lg = loss_and_grad(model, data, contexts, config.loss);
      const double loss = lg.loss * scale;
      if (!std::isfinite(loss) || loss > kDivergenceLoss || !lg.grad.allFinite()) {
        throw DivergenceError("training diverged at step " + std::to_string(step) + " (loss " + fmt_double(loss) + ")");
      }
      velocity = config.momentum * velocity - (stage.lr * scale) * lg.grad;
      parameters(model) += velocity;
      ++step;
      if (step % config.snapshot_every == 0 || step == total) record(step, model);
    }
  }
  traj.model = std::move(model);
  return traj;
}

double balance_gap(const AnyModel& model) {
  double gap = 0.0;
  if (const auto* g = std::get_if<TwoLayerGLN>(&model)) {
    const auto w1 = g->w1();
    for (int h = 0; h < g->H; ++h) {
      const double n1 = w1.middleRows(Eigen::Index{h} * g->C, g->C).norm();
      gap = std::max(gap, std::abs(std::abs(g->w2()[h]) - n1));
    }
    return gap;
  }
  if (const auto* r = std::get_if<ReluNet>(&model)) {
    for (int h = 0; h < r->H; ++h) {
      gap = std::max(gap, std::abs(std::abs(r->readout()[h]) - r->first().row(h).norm()));
    }
    return gap;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<DirectionRow> direction_metrics(const Trajectory& traj, const Dataset& data, const ContextMatrix& contexts) {
  if (traj.snapshots.size() < 2) throw std::invalid_argument("direction metrics need at least two snapshots");
  const Vector& last = traj.snapshots.back().params;
  if (last.norm() == 0.0) throw std::invalid_argument("zero-norm final snapshot");
  const Vector last_dir = last / last.norm();
  const int nu = homogeneity_degree(traj.model);

  std::vector<DirectionRow> rows;
  for (std::size_t i = 0; i < traj.snapshots.size(); ++i) {
    const auto& snap = traj.snapshots[i];
    if (snap.weight_norm == 0.0) throw std::invalid_argument("zero-norm snapshot at step " + std::to_string(snap.step));
    const AnyModel m = traj.at(i);
    const Vector s = scores(m, data.inputs, contexts);
    const double margin = (data.labels.array() * s.array()).minCoeff();
    DirectionRow row;
    row.step = snap.step;
    row.loss = snap.loss;
    row.min_margin = margin / std::pow(snap.weight_norm, nu);
    row.weight_norm = snap.weight_norm;
    row.cos_to_final = snap.params.dot(last_dir) / snap.weight_norm;
    row.balance_gap = balance_gap(m);
    rows.push_back(row);
  }
  return rows;
}

void write_trajectory_csv(std::ostream& out, const std::vector<DirectionRow>& rows) {
  out << "step,loss,min_margin,weight_norm,cos_to_final,balance_gap\n";
  for (const auto& r : rows) {
    out << r.step << ',' << fmt_double(r.loss) << ',' << fmt_double(r.min_margin) << ',' << fmt_double(r.weight_norm)
        << ',' << fmt_double(r.cos_to_final) << ',' << fmt_double(r.balance_gap) << '\n';
  }
}

void write_trajectory_csv(const std::filesystem::path& path, const std::vector<DirectionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_trajectory_csv(out, rows);
}

}  // namespace glnbias
