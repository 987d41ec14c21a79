#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "crm/embedding.hpp"
#include "crm/errors.hpp"
#include "crm/rng.hpp"

using namespace crm;

namespace {

double kernel(double a, double b, double bw) { return std::exp(-0.5 * bw * (a - b) * (a - b)); }

// independent type-7 quantile for the oracle check
double quantile_oracle(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[std::min(lo + 1, v.size() - 1)] * frac;
}

}  // namespace

TEST_CASE("grid anchors span the range") {
  Eigen::VectorXd actions(5);
  actions << 0.0, 0.25, 0.5, 0.75, 1.0;
  const Eigen::VectorXd a = select_anchors(actions, 3, AnchorStrategy::grid);
  REQUIRE(a.size() == 3);
  CHECK(a[0] == doctest::Approx(0.0));
  CHECK(a[1] == doctest::Approx(0.5));
  CHECK(a[2] == doctest::Approx(1.0));
}

TEST_CASE("quantile anchors follow the midpoint-quantile rule") {
  Rng rng(12);
  std::vector<double> raw(501);
  for (auto& x : raw) x = std::exp(rng.normal());
  Eigen::VectorXd actions = Eigen::Map<Eigen::VectorXd>(raw.data(), 501);
  const Eigen::VectorXd a = select_anchors(actions, 2, AnchorStrategy::quantile);
  REQUIRE(a.size() == 2);
  CHECK(a[0] == doctest::Approx(quantile_oracle(raw, 0.25)).epsilon(1e-12));
  CHECK(a[1] == doctest::Approx(quantile_oracle(raw, 0.75)).epsilon(1e-12));

  const Eigen::VectorXd a5 = select_anchors(actions, 5, AnchorStrategy::quantile);
  for (Eigen::Index i = 0; i < 5; ++i)
    CHECK(a5[i] == doctest::Approx(quantile_oracle(raw, (2.0 * i + 1.0) / 10.0)).epsilon(1e-12));
}

TEST_CASE("kmeans with one anchor returns the mean") {
  Eigen::VectorXd actions(4);
  actions << 1.0, 2.0, 3.0, 6.0;
  const Eigen::VectorXd a = select_anchors(actions, 1, AnchorStrategy::kmeans, 3);
  REQUIRE(a.size() == 1);
  CHECK(a[0] == doctest::Approx(3.0));
}

TEST_CASE("anchor selection is permutation-invariant for grid and quantile") {
  Rng rng(9);
  std::vector<double> raw(200);
  for (auto& x : raw) x = rng.normal();
  Eigen::VectorXd actions = Eigen::Map<Eigen::VectorXd>(raw.data(), 200);
  std::vector<double> shuffled = raw;
  shuffle(shuffled, rng);
  Eigen::VectorXd actions2 = Eigen::Map<Eigen::VectorXd>(shuffled.data(), 200);
  for (auto strategy : {AnchorStrategy::grid, AnchorStrategy::quantile}) {
    const Eigen::VectorXd a = select_anchors(actions, 4, strategy);
    const Eigen::VectorXd b = select_anchors(actions2, 4, strategy);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
  }
}

TEST_CASE("requesting more anchors than distinct actions fails") {
  Eigen::VectorXd actions(4);
  actions << 1.0, 1.0, 2.0, 2.0;
  CHECK_THROWS_AS(select_anchors(actions, 3, AnchorStrategy::grid), ValidationError);
}

TEST_CASE("one-anchor embedding is the constant 1") {
  Eigen::VectorXd anchors(1);
  anchors << 0.7;
  const NystromEmbedding ne = fit_nystrom(anchors, 2.0);
  CHECK(ne.whitener(0, 0) == doctest::Approx(1.0));
  CHECK(ne.embed(0.7)[0] == doctest::Approx(1.0));
}

TEST_CASE("duplicate anchors are rejected") {
  Eigen::VectorXd anchors(3);
  anchors << 0.1, 0.5, 0.5;
  CHECK_THROWS_AS(fit_nystrom(anchors, 1.0), ValidationError);
}

TEST_CASE("whitener inverts the anchor Gram") {
  Rng rng(5);
  Eigen::VectorXd anchors(8);
  for (Eigen::Index i = 0; i < 8; ++i) anchors[i] = static_cast<double>(i) + 0.3 * rng.uniform01();
  const double bw = 1.7;
  const NystromEmbedding ne = fit_nystrom(anchors, bw);
  Eigen::MatrixXd gram(8, 8);
  for (Eigen::Index i = 0; i < 8; ++i)
    for (Eigen::Index j = 0; j < 8; ++j) gram(i, j) = kernel(anchors[i], anchors[j], bw);
  const Eigen::MatrixXd should_be_identity = ne.whitener * gram * ne.whitener;
  CHECK((should_be_identity - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("embedding reproduces the Gram on anchors") {
  Eigen::VectorXd anchors(6);
  anchors << 0.0, 1.0, 2.2, 3.1, 4.4, 5.0;
  const double bw = 2.5;
  const NystromEmbedding ne = fit_nystrom(anchors, bw);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) {
      const double dot = ne.embed(anchors[i]).dot(ne.embed(anchors[j]));
      CHECK(dot == doctest::Approx(kernel(anchors[i], anchors[j], bw)).epsilon(1e-8));
    }
}

TEST_CASE("off-anchor error decreases monotonically with anchor count") {
  const double bw = 4.0;
  double prev = 2.0;
  for (Eigen::Index m : {2, 5, 10, 20}) {
    Eigen::VectorXd anchors(m);
    for (Eigen::Index i = 0; i < m; ++i)
      anchors[i] = 5.0 * static_cast<double>(i) / static_cast<double>(m - 1);
    const NystromEmbedding ne = fit_nystrom(anchors, bw);
    double worst = 0.0;
    const int g = 101;
    for (int ii = 0; ii < g; ++ii)
      for (int jj = 0; jj < g; ++jj) {
        const double a = 5.0 * ii / (g - 1.0), b = 5.0 * jj / (g - 1.0);
        worst = std::max(worst, std::abs(ne.embed(a).dot(ne.embed(b)) - kernel(a, b, bw)));
      }
    CHECK(worst < prev);
    prev = worst;
  }
}

TEST_CASE("joint embedding factorizes") {
  auto check_joint = [](ContextMapKind kind) {
    JointEmbedding je;
    je.context_map = ContextMap{kind, 2};
    Eigen::VectorXd anchors(4);
    anchors << 0.5, 1.5, 2.5, 3.5;
    je.action = fit_nystrom(anchors, 1.3);
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
      Eigen::VectorXd x(2), x2(2);
      x << rng.normal(), rng.normal();
      x2 << rng.normal(), rng.normal();
      const double a = rng.uniform(0.0, 4.0), a2 = rng.uniform(0.0, 4.0);
      const double lhs = je.embed(x, a).dot(je.embed(x2, a2));
      const double rhs =
          je.context_map(x).dot(je.context_map(x2)) * je.action.embed(a).dot(je.action.embed(a2));
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
  };
  check_joint(ContextMapKind::linear);
  check_joint(ContextMapKind::quadratic);
}

TEST_CASE("scalar context map reduces the joint embedding to the action one") {
  JointEmbedding je;
  je.context_map = ContextMap{ContextMapKind::linear, 1};
  Eigen::VectorXd anchors(3);
  anchors << 0.0, 1.0, 2.0;
  je.action = fit_nystrom(anchors, 1.0);
  Eigen::VectorXd x(1);
  x << 1.0;
  const Eigen::VectorXd joint = je.embed(x, 1.3);
  const Eigen::VectorXd action_only = je.action.embed(1.3);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(joint[i] == doctest::Approx(action_only[i]));
}

TEST_CASE("quadratic context map has dimension d^2 + d") {
  const ContextMap cm{ContextMapKind::quadratic, 2};
  CHECK(cm.d_out() == 6);
  Eigen::VectorXd x(2);
  x << 2.0, 3.0;
  const Eigen::VectorXd f = cm(x);
  REQUIRE(f.size() == 6);
  CHECK(f[0] == doctest::Approx(4.0));   // x0*x0
  CHECK(f[1] == doctest::Approx(6.0));   // x0*x1
  CHECK(f[3] == doctest::Approx(9.0));   // x1*x1
  CHECK(f[4] == doctest::Approx(2.0));   // x0
  CHECK(f[5] == doctest::Approx(3.0));   // x1
}

TEST_CASE("multi-dimensional kmeans anchors cover the clusters") {
  Rng rng(31);
  Eigen::MatrixXd actions(300, 2);
  for (Eigen::Index i = 0; i < 300; ++i) {
    const double cx = i % 2 == 0 ? -2.0 : 2.0;
    actions(i, 0) = cx + 0.2 * rng.normal();
    actions(i, 1) = cx + 0.2 * rng.normal();
  }
  const Eigen::MatrixXd centers = select_anchors_kmeans(actions, 2, 7);
  REQUIRE(centers.rows() == 2);
  const double lo = std::min(centers(0, 0), centers(1, 0));
  const double hi = std::max(centers(0, 0), centers(1, 0));
  CHECK(lo == doctest::Approx(-2.0).epsilon(0.15));
  CHECK(hi == doctest::Approx(2.0).epsilon(0.15));
}
