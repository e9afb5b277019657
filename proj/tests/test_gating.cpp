#include <doctest.h>

#include "glnbias/gating.hpp"
#include "glnbias/models.hpp"

#include <random>
#include <sstream>

using namespace glnbias;

namespace {

ContextFunction single_gate(Vector normal, double cutoff) {
  return ContextFunction(1, 2, {{HalfspaceGate{std::move(normal), cutoff}}});
}

}  // namespace

TEST_CASE("halfspace gate fires on the closed side") {
  const auto cf = single_gate(Eigen::Vector2d(1, 0), 0.5);
  CHECK(assign_context(cf, Eigen::Vector2d(1, 0)) == GlobalContext{2});
  CHECK(assign_context(cf, Eigen::Vector2d(0, 0)) == GlobalContext{1});
  CHECK(assign_context(cf, Eigen::Vector2d(0.5, 3)) == GlobalContext{2});
  CHECK_THROWS_AS(assign_context(cf, Eigen::Vector3d(1, 0, 0)), std::invalid_argument);
}

TEST_CASE("two gates encode four contexts in binary") {
  ContextFunction cf(1, 4, {{HalfspaceGate{Eigen::Vector2d(1, 0), 0.0}, HalfspaceGate{Eigen::Vector2d(0, 1), 0.0}}});
  CHECK(assign_context(cf, Eigen::Vector2d(-1, -1))[0] == 1);
  CHECK(assign_context(cf, Eigen::Vector2d(1, -1))[0] == 2);
  CHECK(assign_context(cf, Eigen::Vector2d(-1, 1))[0] == 3);
  CHECK(assign_context(cf, Eigen::Vector2d(1, 1))[0] == 4);
}

TEST_CASE("sampled contexts: shapes, ranges, determinism") {
  const auto s = gen_synthetic(30, 4, 0.1, 2);
  for (int C : {2, 4}) {
    const auto cf = sample_contexts(4, 3, C, nullptr, false, 7);
    CHECK(cf.gates_per_unit() == (C == 2 ? 1 : 2));
    const auto ctx = assign_contexts(cf, s.data.inputs);
    CHECK(ctx.minCoeff() >= 1);
    CHECK(ctx.maxCoeff() <= C);
    const auto again = sample_contexts(4, 3, C, nullptr, false, 7);
    CHECK(assign_contexts(again, s.data.inputs) == ctx);
  }
  CHECK_THROWS_AS(sample_contexts(4, 3, 3, nullptr, false, 7), std::invalid_argument);
  CHECK_THROWS_AS(sample_contexts(4, 3, 2, nullptr, true, 7), std::invalid_argument);
}

TEST_CASE("median cutoff splits the training set in half") {
  CHECK(median_cutoff({4, 1, 3, 2}) == doctest::Approx(2.5));
  const auto s = gen_synthetic(40, 5, 0.1, 3);
  for (int C : {2, 4}) {
    const auto cf = sample_contexts(5, 6, C, &s.data, true, 8);
    for (int h = 0; h < 6; ++h) {
      for (const auto& g : cf.gates(h)) {
        int fired = 0;
        for (Eigen::Index n = 0; n < 40; ++n) fired += g.fires(s.data.inputs.row(n).transpose());
        CHECK(fired == 20);
      }
    }
  }
}

TEST_CASE("contexts are piecewise constant") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto cf = sample_contexts(3, 4, 4, nullptr, false, 2);
  for (int rep = 0; rep < 50; ++rep) {
    Vector x(3);
    for (auto& v : x) v = normal(rng);
    double slack = 1e300;
    for (int h = 0; h < 4; ++h) {
      for (const auto& g : cf.gates(h)) slack = std::min(slack, std::abs(g.normal.dot(x) - g.cutoff) / g.normal.norm());
    }
    Vector dx(3);
    for (auto& v : dx) v = normal(rng);
    dx *= 0.5 * slack / dx.norm();
    CHECK(assign_context(cf, x) == assign_context(cf, x + dx));
  }
}

TEST_CASE("relu gates are strict") {
  Matrix w(1, 2);
  w << 1, 0;
  auto gate = [&](double a, double b) {
    const Vector x = Eigen::Vector2d(a, b);
    return relu_gates(w, Eigen::Ref<const Vector>(x))[0];
  };
  CHECK(gate(2, 0) == 1);
  CHECK(gate(-2, 0) == 0);
  CHECK(gate(0, 5) == 0);
}

TEST_CASE("frozen gates reproduce the relu output") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 1.0);
  ReluNet net(5, 3);
  for (auto& v : net.params) v = normal(rng);
  Matrix x(100, 3);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = normal(rng);
  const Vector a = scores(net, x);
  const Vector b = scores(freeze(net), x, relu_gates(net.first(), x));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("context function text round trip") {
  const auto s = gen_synthetic(20, 3, 0.1, 1);
  const auto cf = sample_contexts(3, 2, 4, &s.data, true, 5);
  std::stringstream io;
  write_context_function(io, cf);
  CHECK(io.str().rfind("# contexts units=2 contexts=4 dim=3", 0) == 0);
  const auto back = read_context_function(io);
  CHECK(assign_contexts(back, s.data.inputs) == assign_contexts(cf, s.data.inputs));
  for (int h = 0; h < 2; ++h) {
    for (int k = 0; k < 2; ++k) {
      CHECK(back.gates(h)[static_cast<std::size_t>(k)].cutoff == cf.gates(h)[static_cast<std::size_t>(k)].cutoff);
      CHECK(back.gates(h)[static_cast<std::size_t>(k)].normal == cf.gates(h)[static_cast<std::size_t>(k)].normal);
    }
  }
}

TEST_CASE("binary gates are context minus one") {
  const auto s = gen_synthetic(15, 3, 0.1, 6);
  const auto cf = sample_contexts(3, 4, 2, &s.data, true, 1);
  const ContextMatrix diff = assign_contexts(cf, s.data.inputs).array() - 1;
  CHECK(binary_gates(cf, s.data.inputs) == diff);
}
