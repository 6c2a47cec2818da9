#include "tcl/objectives.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace tcl;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

SoftTarget fixed(const Matrix& t1, const Matrix& t2) { return {t1, t2, 0.5 * (t1 + t2)}; }

}  // namespace

TEST_CASE("correct_targets endpoints and midpoint") {
  const Vector y = vec({1, 0});
  const Vector g1 = vec({0.2, 0.8}), g2 = vec({0.6, 0.4});
  const SoftTarget clean = correct_targets(y, 1.0, g1, g2);
  CHECK(Vector(clean.t1) == y);
  CHECK(Vector(clean.t2) == y);
  const SoftTarget boot = correct_targets(y, 0.0, g1, g2);
  CHECK(Vector(boot.t1) == g1);
  CHECK(Vector(boot.t2) == g2);
  const SoftTarget half = correct_targets(y, 0.5, g1, g2);
  CHECK(half.t1(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(half.t1(1, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(half.avg == 0.5 * (half.t1 + half.t2));
  CHECK_THROWS_AS(correct_targets(y, 1.5, g1, g2), std::invalid_argument);
  CHECK_THROWS_AS(correct_targets(y, 0.5, vec({0.5, 0.6}), g2), std::invalid_argument);
}

TEST_CASE("batched targets match the single-sample form") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int k = 4, b = 6;
  Matrix g1(k, b), g2(k, b);
  std::vector<int> labels;
  std::vector<double> weights;
  for (int j = 0; j < b; ++j) {
    for (int c = 0; c < k; ++c) {
      g1(c, j) = unit(rng);
      g2(c, j) = unit(rng);
    }
    g1.col(j) /= g1.col(j).sum();
    g2.col(j) /= g2.col(j).sum();
    labels.push_back(j % k);
    weights.push_back(unit(rng));
  }
  const SoftTarget batch = correct_targets(labels, weights, g1, g2);
  for (int j = 0; j < b; ++j) {
    const SoftTarget one = correct_targets(one_hot(labels[static_cast<std::size_t>(j)], k),
                                           weights[static_cast<std::size_t>(j)], g1.col(j), g2.col(j));
    CHECK((batch.t1.col(j) - one.t1.col(0)).norm() < 1e-15);
    CHECK((batch.t2.col(j) - one.t2.col(0)).norm() < 1e-15);
    CHECK(std::abs(batch.avg.col(j).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("cross_loss values") {
  const Matrix hot = one_hot(0, 3);
  const LossTerm zero = cross_loss(hot, hot, fixed(hot, hot));
  CHECK(zero.value == 0.0);
  const Matrix half = vec({0.5, 0.5});
  const Matrix y = vec({1, 0});
  CHECK(cross_loss(half, half, fixed(y, y)).value == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  CHECK(std::abs(cross_loss(half, half, fixed(y, y)).value - 1.3863) < 1e-4);
}

TEST_CASE("cross_loss pairs each view with the other view's target") {
  const Matrix p1 = vec({0.9, 0.1}), p2 = vec({0.3, 0.7});
  const Matrix t1 = vec({0.0, 1.0}), t2 = vec({1.0, 0.0});
  // CE(p1, t2) + CE(p2, t1) = -log 0.9 - log 0.7
  CHECK(cross_loss(p1, p2, fixed(t1, t2)).value == doctest::Approx(-std::log(0.9) - std::log(0.7)).epsilon(1e-15));
}

TEST_CASE("cross_loss is averaged over the batch") {
  const Matrix p = vec({0.25, 0.75});
  const Matrix t = vec({1.0, 0.0});
  const double single = cross_loss(p, p, fixed(t, t)).value;
  const Matrix p3 = p.replicate(1, 3), t3 = t.replicate(1, 3);
  CHECK(cross_loss(p3, p3, fixed(t3, t3)).value == doctest::Approx(single).epsilon(1e-15));
}

TEST_CASE("reg_loss values") {
  CHECK(std::abs(reg_loss(Matrix::Constant(4, 6, 0.25)).value) < 1e-15);
  Matrix split(2, 4);
  split << 1, 1, 0, 0, 0, 0, 1, 1;
  CHECK(reg_loss(split).value == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(std::abs(reg_loss(one_hot(1, 3).replicate(1, 5)).value) < 1e-15);
}

TEST_CASE("ctr_loss with identical embeddings is ln 3 per anchor") {
  const Matrix z = vec({0.6, 0.8}).replicate(1, 2);
  const LossTerm t = ctr_loss(z, z, 0.5);
  CHECK(t.value == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("ctr_loss with aligned positives and orthogonal negatives") {
  const Matrix z = Matrix::Identity(2, 2);
  const double e = std::exp(1.0);
  const LossTerm t = ctr_loss(z, z, 1.0);
  CHECK(t.value == doctest::Approx(-std::log(e / (e + 2.0))).epsilon(1e-14));
  CHECK(std::abs(t.value - 0.5514) < 1e-4);
}

TEST_CASE("ctr_loss is rotation invariant") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Matrix z1(5, 4), z2(5, 4), a(5, 5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      z1(i, j) = normal(rng);
      z2(i, j) = normal(rng);
    }
    for (Eigen::Index j = 0; j < 5; ++j) a(i, j) = normal(rng);
  }
  z1.colwise().normalize();
  z2.colwise().normalize();
  const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
  CHECK(ctr_loss(q * z1, q * z2, 0.3).value == doctest::Approx(ctr_loss(z1, z2, 0.3).value).epsilon(1e-12));
  CHECK_THROWS_AS(ctr_loss(z1, z2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ctr_loss(z1, z2.leftCols(3), 0.3), ShapeError);
}

TEST_CASE("align_loss values") {
  GmmState sharp;
  sharp.means = Matrix::Identity(2, 2);
  sharp.variances = Vector::Constant(2, 1e-3);
  const Matrix v = vec({1, 0});
  const Matrix y = vec({1, 0});
  CHECK(align_loss(y, v, sharp, y).value == 0.0);

  GmmState flat;
  flat.means = vec({0, 1}).replicate(1, 2);
  flat.variances = Vector::Ones(2);
  const Matrix half = vec({0.5, 0.5});
  CHECK(align_loss(half, v, flat, y).value == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("total_loss sums the parts") {
  const LossBreakdown zero = total_loss(0, 0, 0, 0);
  CHECK(zero.total == 0.0);
  const LossBreakdown parts = total_loss(1.0, -0.5, 2.0, 0.5);
  CHECK(parts.total == 3.0);
  CHECK(parts.reg == -0.5);
  CHECK_THROWS_AS(total_loss(1.0, std::nan(""), 0.0, 0.0), NonFiniteError);
  CHECK_THROWS_AS(total_loss(HUGE_VAL, 0.0, 0.0, 0.0), NonFiniteError);
}

TEST_CASE("loss rows") {
  std::ostringstream out;
  write_loss_header(out);
  write_loss_row(out, 3, 7, total_loss(0.5, -0.25, 1.0, 0.125));
  CHECK(out.str() == "epoch,step,cross,reg,ctr,align,total\n3,7,0.5,-0.25,1,0.125,1.375\n");
}

TEST_CASE("cross entropy guards zero probabilities") {
  const Vector p = vec({1.0, 0.0});
  const Vector t = vec({0.0, 1.0});
  CHECK(cross_entropy(p, t) == doctest::Approx(-std::log(kLogEpsilon)));
  CHECK(std::isfinite(cross_loss(Matrix(p), Matrix(p), fixed(t, t)).d_first(1, 0)));
}
