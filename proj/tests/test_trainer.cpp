#include <doctest.h>

#include "glnbias/gating.hpp"
#include "glnbias/trainer.hpp"

#include <cmath>
#include <sstream>

using namespace glnbias;

namespace {

struct Toy {
  Dataset data;
  ContextMatrix ctx;
};

Toy toy(std::size_t n = 20, std::uint64_t seed = 0) {
  auto s = gen_synthetic(n, 2, 0.5, seed);
  const auto cf = sample_contexts(2, 4, 2, &s.data, true, seed + 1);
  return {s.data, assign_contexts(cf, s.data.inputs)};
}

}  // namespace

TEST_CASE("orthogonal gln init") {
  for (auto [H, C, D] : {std::tuple{3, 2, 10}, std::tuple{4, 4, 5}}) {
    const auto m = std::get<TwoLayerGLN>(init_model(Family::Gln, {H, C, D}, 1));
    const Matrix w = m.w1();
    const Matrix gram = H * C <= D ? Matrix(w * w.transpose()) : Matrix(w.transpose() * w);
    CHECK((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(m.w2().norm() == doctest::Approx(1.0));
  }
  const auto a = init_model(Family::Gln, {3, 2, 6}, 9), b = init_model(Family::Gln, {3, 2, 6}, 9);
  CHECK(parameters(a) == parameters(b));
  CHECK_THROWS(init_model(Family::Shallow, {3, 2, 6}, 9));
}

TEST_CASE("kaiming relu init variance") {
  double var = 0.0;
  const int seeds = 4;
  for (int s = 0; s < seeds; ++s) {
    const auto m = std::get<ReluNet>(init_model(Family::Relu, {100, 2, 784}, static_cast<std::uint64_t>(s)));
    const Matrix w = m.first();
    var += w.array().square().mean() / seeds;
  }
  CHECK(var == doctest::Approx(2.0 / 784).epsilon(0.1));
}

TEST_CASE("default schedule runs 3200 steps and snapshots every 100") {
  const auto t = toy();
  TrainConfig cfg;
  CHECK(cfg.total_steps() == 3200);
  cfg.loss = LossKind::Exponential;
  const auto traj = train(init_model(Family::Gln, {4, 2, 2}, 3), t.data, t.ctx, cfg);
  CHECK(traj.snapshots.front().step == 0);
  CHECK(traj.snapshots.back().step == 3200);
  CHECK(traj.snapshots.size() == 33);
  for (std::size_t i = 1; i < traj.snapshots.size(); ++i) CHECK(traj.snapshots[i].step > traj.snapshots[i - 1].step);
  CHECK(traj.snapshots.back().loss < traj.snapshots[1].loss);

  const auto rows = direction_metrics(traj, t.data, t.ctx);
  CHECK(rows.back().cos_to_final == doctest::Approx(1.0));
  CHECK(rows.back().min_margin > 0.0);

  // Late phase: once the loss is below 1/N the norm keeps growing.
  bool late = false;
  for (std::size_t i = 1; i < traj.snapshots.size(); ++i) {
    if (late) CHECK(traj.snapshots[i].weight_norm >= traj.snapshots[i - 1].weight_norm);
    late = late || traj.snapshots[i].loss < 1.0 / static_cast<double>(t.data.size());
  }
  // Balancedness gap does not increase over the second half.
  for (std::size_t i = rows.size() / 2 + 1; i < rows.size(); ++i) CHECK(rows[i].balance_gap <= rows[i - 1].balance_gap + 1e-12);
}

TEST_CASE("momentum zero is plain gradient descent") {
  const auto t = toy(10, 4);
  TrainConfig cfg;
  cfg.schedule = {{5, 0.05}};
  cfg.snapshot_every = 1;
  auto model = init_model(Family::Gln, {4, 2, 2}, 5);
  const auto traj = train(model, t.data, t.ctx, cfg);
  Vector w = parameters(model);
  for (int step = 0; step < 5; ++step) {
    AnyModel cur = model;
    parameters(cur) = w;
    w -= 0.05 / 10.0 * loss_and_grad(cur, t.data, t.ctx, cfg.loss).grad;
  }
  CHECK((w - traj.snapshots.back().params).cwiseAbs().maxCoeff() < 1e-14);

  cfg.momentum = 0.9;
  const auto m1 = train(model, t.data, t.ctx, cfg), m2 = train(model, t.data, t.ctx, cfg);
  CHECK(m1.snapshots.back().params == m2.snapshots.back().params);
  CHECK(m1.snapshots.back().params != traj.snapshots.back().params);
}

TEST_CASE("divergence guard and config validation") {
  const auto t = toy(10, 2);
  TrainConfig cfg;
  cfg.schedule = {{200, 1e6}};
  CHECK_THROWS_AS(train(init_model(Family::Relu, {4, 2, 2}, 1), t.data, ContextMatrix{}, cfg), DivergenceError);
  cfg.schedule = {{10, -1.0}};
  CHECK_THROWS(cfg.validate());
  cfg.schedule = {{10, 0.1}};
  cfg.momentum = 1.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("balanced factorization has zero gap") {
  GlnZeta z{3, 2, Matrix::Random(6, 4)};
  CHECK(balance_gap(AnyModel{zeta_to_w(z)}) < 1e-12);
  CHECK(std::isnan(balance_gap(AnyModel{FReluNet(2, 2)})));
}

TEST_CASE("trajectory csv header") {
  std::ostringstream out;
  write_trajectory_csv(out, {DirectionRow{0, 1.0, 0.5, 2.0, 0.9, 0.1}});
  CHECK(out.str().rfind("step,loss,min_margin,weight_norm,cos_to_final,balance_gap\n", 0) == 0);
}
