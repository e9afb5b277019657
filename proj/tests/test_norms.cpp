#include <doctest.h>

#include "glnbias/norms.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace glnbias;

namespace {

BetaTable table_2x2(Eigen::Index D, std::initializer_list<std::initializer_list<double>> rows) {
  // rows in the order beta_11, beta_12, beta_21, beta_22 (first index = unit 0)
  BetaTable t{2, 2, Matrix(4, D)};
  int k = 0;
  for (const auto& r : rows) {
    const int c0 = k / 2 + 1, c1 = k % 2 + 1;
    Vector v(D);
    int d = 0;
    for (double x : r) v[d++] = x;
    t.values.row(t.index({c0, c1})) = v.transpose();
    ++k;
  }
  return t;
}

BetaTable random_table(std::mt19937_64& rng, int H, int C, Eigen::Index D) {
  std::normal_distribution<double> normal(0.0, 1.0);
  GlnZeta z{H, C, Matrix(H * C, D)};
  for (Eigen::Index k = 0; k < z.zeta.size(); ++k) z.zeta.data()[k] = normal(rng);
  return beta_table(z);
}

// Enumeration oracle for |beta|_2^2.
double brute_l2(const GlnZeta& z) {
  double s = 0.0;
  const long n = static_cast<long>(std::pow(z.C, z.H));
  for (long idx = 0; idx < n; ++idx) {
    long rest = idx;
    Vector b = Vector::Zero(z.dim());
    for (int h = 0; h < z.H; ++h) {
      b += z.zeta.row(h * z.C + rest % z.C).transpose();
      rest /= z.C;
    }
    s += b.squaredNorm();
  }
  return s;
}

}  // namespace

TEST_CASE("variational norm examples") {
  const auto constant = table_2x2(2, {{0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}});
  CHECK(gln_norm_variational(constant).value == doctest::Approx(std::sqrt(2.0)).epsilon(1e-7));
  const auto zero = table_2x2(2, {{0, 0}, {0, 0}, {0, 0}, {0, 0}});
  CHECK(gln_norm_variational(zero).value == doctest::Approx(0.0));
  const auto step = table_2x2(2, {{2, 0}, {2, 0}, {0, 0}, {0, 0}});
  CHECK(gln_norm_variational(step).value == doctest::Approx(2.0).epsilon(1e-7));
  const auto bad = table_2x2(2, {{1, 0}, {0, 0}, {0, 1}, {0, 1}});
  CHECK_THROWS(gln_norm_variational(bad));
}

TEST_CASE("closed form 2x2 examples") {
  const auto constant = table_2x2(2, {{0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}});
  CHECK(gln_norm_closed_2x2(constant).value == doctest::Approx(2.0));
  const auto step = table_2x2(2, {{2, 0}, {2, 0}, {0, 0}, {0, 0}});
  const auto cf = gln_norm_closed_2x2(step);
  CHECK(cf.value == doctest::Approx(2.0 * std::sqrt(2.0)));
  CHECK(cf.alpha == doctest::Approx(1.0));
  const auto zero = gln_norm_closed_2x2(table_2x2(1, {{0}, {0}, {0}, {0}}));
  CHECK(zero.value == 0.0);
  CHECK(zero.alpha == 0.5);
  CHECK_THROWS(gln_norm_closed_2x2(BetaTable{3, 2, Matrix::Zero(8, 1)}));
}

TEST_CASE("2x2 forms agree on random equivariant tables") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 30; ++rep) {
    const auto t = random_table(rng, 2, 2, 1 + rep % 5);
    const auto cf = gln_norm_closed_2x2(t);
    CHECK(gln_norm_sq_pairwise_2x2(t) == doctest::Approx(cf.value * cf.value).epsilon(1e-10));
    CHECK(cf.value == doctest::Approx(std::sqrt(2.0) * gln_norm_variational(t, 1e-10).value).epsilon(1e-7));
  }
}

TEST_CASE("variational norm is a norm and gauge invariant") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 10; ++rep) {
    const int H = 2 + rep % 2;
    const auto a = random_table(rng, H, 2, 3), b = random_table(rng, H, 2, 3);
    const double na = gln_norm_variational(a, 1e-10).value, nb = gln_norm_variational(b, 1e-10).value;
    BetaTable sum = a, scaled = a;
    sum.values += b.values;
    scaled.values *= -2.5;
    CHECK(gln_norm_variational(sum, 1e-10).value <= na + nb + 1e-8);
    CHECK(gln_norm_variational(scaled, 1e-10).value == doctest::Approx(2.5 * na).epsilon(1e-7));
  }
  // Gauge shifts leave beta and hence the minimum unchanged.
  GlnZeta z{2, 2, Matrix(4, 2)};
  for (Eigen::Index k = 0; k < z.zeta.size(); ++k) z.zeta.data()[k] = normal(rng);
  GlnZeta shifted = z;
  const Eigen::RowVector2d v(0.7, -1.3);
  shifted.zeta.topRows(2).rowwise() += v;
  shifted.zeta.bottomRows(2).rowwise() -= v;
  CHECK((beta_table(z).values - beta_table(shifted).values).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(gln_norm_variational(beta_table(shifted)).value ==
        doctest::Approx(gln_norm_variational(beta_table(z)).value).epsilon(1e-7));
}

TEST_CASE("l2 norm of beta from the block structure") {
  GlnZeta z{2, 2, Matrix::Zero(4, 1)};
  z.zeta(0, 0) = 1;
  CHECK(l2_norm_beta(z) == doctest::Approx(2));
  z.zeta(2, 0) = 1;
  CHECK(l2_norm_beta(z) == doctest::Approx(6));
  z.zeta.setZero();
  CHECK(l2_norm_beta(z) == 0.0);

  std::mt19937_64 rng(14);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int C : {2, 3, 4}) {
    for (int H = 1; std::pow(C, H) <= 256; ++H) {
      GlnZeta r{H, C, Matrix(H * C, 2)};
      for (Eigen::Index k = 0; k < r.zeta.size(); ++k) r.zeta.data()[k] = normal(rng);
      CHECK(l2_norm_beta(r) == doctest::Approx(brute_l2(r)).epsilon(1e-12));
    }
  }
}

TEST_CASE("quadratic form M") {
  for (auto [H, C] : {std::pair{2, 2}, std::pair{3, 2}, std::pair{2, 4}}) {
    const QuadFormM m(H, C);
    const Matrix s = m.structure();
    CHECK((s - s.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
    // Null space dimension H - 1: the gauge directions.
    int zeros = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) zeros += std::abs(es.eigenvalues()[i]) < 1e-10;
    CHECK(zeros == H - 1);
    const Matrix p = m.pseudo_inverse();
    const Matrix q = m.scale() * s;
    CHECK((q * p * q - q).cwiseAbs().maxCoeff() < 1e-10);
    const Matrix r = m.sqrt();
    CHECK((r * r - q).cwiseAbs().maxCoeff() < 1e-10);
  }
  // zeta^T (scale M) zeta equals |beta|^2.
  std::mt19937_64 rng(15);
  std::normal_distribution<double> normal(0.0, 1.0);
  GlnZeta z{3, 2, Matrix(6, 3)};
  for (Eigen::Index k = 0; k < z.zeta.size(); ++k) z.zeta.data()[k] = normal(rng);
  const QuadFormM m(3, 2);
  CHECK((z.zeta.array() * m.apply(z.zeta).array()).sum() == doctest::Approx(brute_l2(z)));
  CHECK(m.apply(m.gauge_part(z.zeta)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("frelu norm") {
  Matrix z(2, 2);
  z << 3, 4, 0, 0;
  CHECK(frelu_norm(z) == doctest::Approx(5));
  Matrix one = Matrix::Zero(3, 2);
  one(1, 0) = 3;
  CHECK(frelu_norm(one) == doctest::Approx(3));
  std::mt19937_64 rng(16);
  const Matrix r = Matrix::Random(4, 3);
  const Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(Eigen::Matrix3d::Random()).householderQ();
  CHECK(frelu_norm(r * q) == doctest::Approx(frelu_norm(r)));
}

TEST_CASE("equivariance checks") {
  std::mt19937_64 rng(17);
  for (int H = 1; H <= 4; ++H) CHECK(check_equivariance(random_table(rng, H, 2, 2), 1e-10).passed);
  const auto bad = table_2x2(2, {{1, 0}, {0, 0}, {0, 1}, {0, 1}});
  const auto rep = check_equivariance(bad, 1e-10);
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_violation > 0.5);
  const auto constant = table_2x2(1, {{3}, {3}, {3}, {3}});
  CHECK(check_equivariance(constant, 0.0).max_violation == 0.0);
}

TEST_CASE("completion from the free set") {
  const auto f = free_contexts(2, 2);
  CHECK(f.size() == 3);
  Matrix free(3, 2);
  free << 1, 0, 2, 1, 0, 5;  // beta_11, beta_21 (unit 0 changed), beta_12 (unit 1 changed) in free_contexts order
  const auto t = complete_predictors(2, 2, free);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(t.beta(f[i]) == free.row(static_cast<Eigen::Index>(i)));
  CHECK((t.beta({2, 2}) - (t.beta({2, 1}) + t.beta({1, 2}) - t.beta({1, 1}))).norm() < 1e-15);
  CHECK(complete_predictors(2, 2, Matrix::Zero(3, 2)).values.norm() == 0.0);
  CHECK_THROWS(complete_predictors(2, 2, Matrix::Zero(4, 2)));
  std::mt19937_64 rng(18);
  for (int C : {2, 4}) {
    const Matrix r = Matrix::Random((C - 1) * 3 + 1, 2);
    CHECK(check_equivariance(complete_predictors(3, C, r), 1e-12).passed);
  }
}

TEST_CASE("beta table csv and norm report") {
  std::mt19937_64 rng(19);
  const auto t = random_table(rng, 2, 2, 3);
  std::stringstream io;
  write_beta_table_csv(io, t);
  CHECK(io.str().rfind("gamma_tuple,", 0) == 0);
  const auto back = read_beta_table_csv(io);
  CHECK(back.H == 2);
  CHECK(back.values == t.values);
  std::ostringstream js;
  write_norm_report(js, gln_norm_variational(t));
  for (const char* key : {"\"value\"", "\"alpha\"", "\"residual\"", "\"iterations\""}) CHECK(js.str().find(key) != std::string::npos);
}
