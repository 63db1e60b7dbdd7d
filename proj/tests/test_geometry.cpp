#include "drmpc/geometry.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace drmpc {
namespace {

using testing::vec;

Polytope unit_square() { return Polytope::box(vec({0.0, 0.0}), vec({1.0, 1.0})); }

Polytope triangle() {
  Matrix A(3, 2);
  A << -1, 0, 0, -1, 1, 1;
  return Polytope(A, vec({0.0, 0.0, 1.0}));
}

TEST(Polytope, NormalizesRows) {
  Matrix A(4, 2);
  A << 2, 0, -3, 0, 0, 5, 0, -1;
  const Polytope P(A, vec({2.0, 0.0, 5.0, 0.0}));
  for (Index m = 0; m < P.num_facets(); ++m) EXPECT_NEAR(P.A().row(m).norm(), 1.0, 1e-15);
  EXPECT_TRUE(P.contains(vec({0.5, 0.5})));
  EXPECT_FALSE(P.contains(vec({1.5, 0.5})));
  EXPECT_EQ(P.vertices().size(), 4u);
}

TEST(Polytope, RejectsEmptyAndUnbounded) {
  Matrix A(2, 1);
  A << 1, -1;
  EXPECT_THROW(Polytope(A, vec({0.0, -1.0})), InputError);  // x <= 0, x >= 1
  Matrix B(1, 2);
  B << 1, 0;
  EXPECT_THROW(Polytope(B, vec({1.0})), InputError);
  EXPECT_THROW(Polytope::box(vec({1.0}), vec({0.0})), InputError);
}

TEST(Polytope, SupportFunction) {
  const Polytope P = triangle();
  EXPECT_NEAR(P.support(vec({1.0, 1.0})), 1.0, 1e-12);
  EXPECT_NEAR(P.support(vec({-1.0, 0.0})), 0.0, 1e-12);
  EXPECT_NEAR(P.support(vec({2.0, -1.0})), 2.0, 1e-12);
  EXPECT_TRUE(P.support_point(vec({2.0, -1.0})).isApprox(vec({1.0, 0.0})));
}

TEST(Polytope, DiameterOfSquare) { EXPECT_NEAR(unit_square().diameter(), std::sqrt(2.0), 1e-12); }

TEST(Polytope, ProjectionMatchesBruteForce) {
  const Polytope P = triangle();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(-1.5, 2.5);
  for (int rep = 0; rep < 30; ++rep) {
    const Vector p = vec({ud(rng), ud(rng)});
    const Vector q = P.project(p);
    EXPECT_TRUE(P.contains(q, 1e-8));
    // Brute force over a fine grid of the triangle.
    double best = std::numeric_limits<double>::infinity();
    const int n = 400;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; i + j <= n; ++j) best = std::min(best, (p - vec({double(i) / n, double(j) / n})).norm());
    EXPECT_LE(P.distance(p), best + 1e-9);
    EXPECT_NEAR(P.distance(p), best, 3e-3);
  }
}

TEST(Polytope, ProjectionIsIdempotentInside) {
  const Polytope P = unit_square();
  const Vector p = vec({0.3, 0.7});
  EXPECT_TRUE(P.project(p).isApprox(p));
  EXPECT_EQ(P.distance(p), 0.0);
}

TEST(Distance, FacetMaxIsBelowEuclideanAndExactOnFaces) {
  Matrix C = Matrix::Zero(2, 4);
  C(0, 0) = 1.0;
  C(1, 1) = 1.0;
  const ObstacleModel obs(unit_square(), C, 0.3);
  const Vector w = vec({0.1, -0.2});
  // Straight out of a face the two metrics agree.
  const Vector x1 = vec({1.1 + 0.5, 0.4, 0.0, 0.0});
  EXPECT_NEAR(distance_exact(x1, w, obs), 0.5, 1e-9);
  EXPECT_NEAR(distance_facet_max(x1, w, obs), 0.5, 1e-12);
  // Off a corner the facet-max distance underestimates.
  const Vector x2 = vec({1.1 + 0.3, 0.8 + 0.4, 0.0, 0.0});
  EXPECT_NEAR(distance_exact(x2, w, obs), 0.5, 1e-9);
  EXPECT_NEAR(distance_facet_max(x2, w, obs), 0.4, 1e-12);
  EXPECT_NEAR(constraint_g(x2, w, obs), 0.3 - 0.5, 1e-9);
  EXPECT_NEAR(constraint_g(x2, w, obs, DistanceMetric::facet_max), 0.3 - 0.4, 1e-12);
  // Inside the displaced body both are zero.
  EXPECT_EQ(distance_exact(vec({0.6, 0.3, 0, 0}), w, obs), 0.0);
  EXPECT_EQ(distance_facet_max(vec({0.6, 0.3, 0, 0}), w, obs), 0.0);
}

ObstacleModel centered_square(double clearance) {
  Matrix C = Matrix::Zero(2, 4);
  C(0, 0) = 1.0;
  C(1, 1) = 1.0;
  return ObstacleModel(Polytope::box(vec({-0.5, -0.5}), vec({0.5, 0.5})), C, clearance);
}

TEST(Distance, DocumentedExamples) {
  const ObstacleModel obs = centered_square(0.1);
  const Vector zero = vec({0.0, 0.0});
  EXPECT_EQ(distance_facet_max(vec({0, 0, 0, 0}), zero, obs), 0.0);
  EXPECT_NEAR(distance_facet_max(vec({1, 0, 0, 0}), zero, obs), 0.5, 1e-12);
  EXPECT_NEAR(distance_facet_max(vec({1, 0, 0, 0}), vec({0.2, 0.0}), obs), 0.3, 1e-12);
  EXPECT_NEAR(distance_exact(vec({1, 0, 0, 0}), vec({0.2, 0.0}), obs), 0.3, 1e-9);
  EXPECT_NEAR(distance_exact(vec({1, 1, 0, 0}), zero, obs), std::sqrt(2.0) * 0.5, 1e-9);
  EXPECT_NEAR(constraint_g(vec({0, 1.0, 0, 0}), zero, obs), -0.4, 1e-9);
  EXPECT_NEAR(constraint_g(vec({0.1, 0, 0, 0}), zero, obs), 0.1, 1e-12);
}

TEST(Distance, ReferenceStateIsSafe) {
  const auto setup = testing::reference_setup();
  EXPECT_LT(constraint_g(vec({2.0, 2.5, 0.0, 0.0}), vec({0.0, 0.0}), setup.obstacle), 0.0);
  EXPECT_LT(constraint_g(vec({2.0, 2.5, 0.0, 0.0}), vec({0.0, 0.0}), setup.obstacle, DistanceMetric::facet_max), 0.0);
}

TEST(Distance, FacetMaxNeverExceedsExactAndTranslates) {
  const auto setup = testing::reference_setup();
  const ObstacleModel& obs = setup.obstacle;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> px(-1.0, 6.0), py(-1.0, 4.0), pw(-0.45, 0.45);
  int inside = 0;
  for (int rep = 0; rep < 1200; ++rep) {
    const Vector x = vec({px(rng), py(rng), 0.3, -0.2});
    const Vector w = vec({pw(rng), pw(rng)});
    const double fm = distance_facet_max(x, w, obs);
    const double ex = distance_exact(x, w, obs);
    EXPECT_LE(fm, ex + 1e-9);
    const bool member = obs.body.contains(obs.C * x - w);
    EXPECT_EQ(fm == 0.0, member);
    if (member) {
      ++inside;
      EXPECT_LE(ex, 1e-9);
    } else {
      EXPECT_GT(ex, 0.0);
    }
    // Moving the obstacle by w equals moving the agent by -w.
    Vector shifted = x;
    shifted.head(2) -= w;
    EXPECT_NEAR(ex, distance_exact(shifted, vec({0.0, 0.0}), obs), 1e-9);
    EXPECT_NEAR(fm, distance_facet_max(shifted, vec({0.0, 0.0}), obs), 1e-12);
  }
  EXPECT_GT(inside, 0);
}

TEST(Distance, RejectsWrongDimensions) {
  Matrix C = Matrix::Zero(2, 4);
  C(0, 0) = 1.0;
  C(1, 1) = 1.0;
  const ObstacleModel obs(unit_square(), C, 0.3);
  EXPECT_THROW(distance_exact(vec({0.0, 0.0}), vec({0.0, 0.0}), obs), ConfigError);
  EXPECT_THROW(ObstacleModel(unit_square(), Matrix::Zero(3, 4), 0.1), InputError);
  EXPECT_THROW(ObstacleModel(unit_square(), C, -0.1), InputError);
}

}  // namespace
}  // namespace drmpc
