#include <doctest.h>

#include "glnbias/analysis.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace glnbias;

TEST_CASE("error rate") {
  Vector labels(4);
  labels << 1, -1, 1, -1;
  CHECK(error_rate(labels * 2.0, labels) == 0.0);
  Vector s(4);
  s << 1, 1, -1, -1;
  CHECK(error_rate(s, labels) == 0.5);
  CHECK(error_rate(-s, labels) == 0.5);
  Vector t(4);
  t << 3, 1, 2, -1;  // one mistake
  CHECK(error_rate(-t, labels) == doctest::Approx(1.0 - error_rate(t, labels)));
  CHECK(error_rate(Vector::Zero(4), labels) == 1.0);
  CHECK_THROWS(error_rate(Vector(), Vector()));
}

TEST_CASE("inconsistency is a pseudometric") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution zero(0.1);
  auto draw = [&] {
    Vector v(50);
    for (auto& x : v) x = zero(rng) ? 0.0 : normal(rng);
    return v;
  };
  for (int rep = 0; rep < 100; ++rep) {
    const auto a = draw(), b = draw(), c = draw();
    CHECK(inconsistency(a, a) == 0.0);
    CHECK(inconsistency(a, b) == inconsistency(b, a));
    CHECK(inconsistency(a, c) <= inconsistency(a, b) + inconsistency(b, c) + 1e-15);
  }
  Vector a(3);
  a << 1, -2, 3;
  CHECK(inconsistency(a, -a) == 1.0);
  Vector z(3);
  z << 0, -2, 3;
  CHECK(inconsistency(a, z) == doctest::Approx(1.0 / 3));
  CHECK_THROWS(inconsistency(a, Vector(2)));
}

TEST_CASE("baseline inconsistency") {
  CHECK(baseline_inconsistency(0.1) == doctest::Approx(0.18));
  CHECK(baseline_inconsistency(0.0) == 0.0);
  CHECK(baseline_inconsistency(0.5) == 0.5);
  for (double p = 0.0; p <= 1.0; p += 0.01) {
    CHECK(baseline_inconsistency(p) <= 0.5);
    const double mid = baseline_inconsistency(std::min(1.0, p + 0.005));
    CHECK(mid >= 0.5 * (baseline_inconsistency(p) + baseline_inconsistency(std::min(1.0, p + 0.01))) - 1e-15);
  }
  CHECK_THROWS(baseline_inconsistency(1.5));
}

TEST_CASE("comparison csv round trip") {
  ComparisonRow r;
  r.figure = "fig2";
  r.family = "gln";
  r.H = 10;
  r.C = 2;
  r.n_train = 500;
  r.seed = 1;
  r.variant_a = "gd-gln";
  r.variant_b = "svm-gln";
  r.error_a = 0.125;
  r.error_b = 0.1;
  r.inconsistency = 0.05;
  r.baseline = baseline_inconsistency(0.125);
  r.kkt_residual = std::numeric_limits<double>::quiet_NaN();
  std::stringstream io;
  write_comparison_csv(io, {r, r});
  CHECK(io.str().rfind("# schema=1\nfigure,family,H,C,n_train,seed,", 0) == 0);
  const auto back = read_comparison_csv(io);
  REQUIRE(back.size() == 2);
  CHECK(back[0].variant_b == "svm-gln");
  CHECK(back[0].baseline == r.baseline);
  CHECK(std::isnan(back[0].kkt_residual));
  std::istringstream bad("figure,family\n");
  CHECK_THROWS(read_comparison_csv(bad));
}
