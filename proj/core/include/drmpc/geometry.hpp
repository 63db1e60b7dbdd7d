#pragma once

#include "drmpc/common.hpp"

#include <vector>

namespace drmpc {

/// Bounded, nonempty polytope {p : A p <= b} with unit-norm rows.
class Polytope {
 public:
  /// Normalizes every row of A to unit length (rescaling b) and verifies the
  /// set is nonempty and bounded. Throws InputError otherwise.
  Polytope(Matrix A, Vector b);

  /// Axis-aligned box lo <= p <= hi.
  static Polytope box(const Vector& lo, const Vector& hi);

  const Matrix& A() const { return A_; }
  const Vector& b() const { return b_; }
  Index dim() const { return A_.cols(); }
  Index num_facets() const { return A_.rows(); }
  const std::vector<Vector>& vertices() const { return vertices_; }

  bool contains(const Vector& p, double tol = 1e-9) const;

  /// max { d'p : p in P }.
  double support(const Vector& direction) const;

  /// A maximizer of d'p over P (a vertex).
  const Vector& support_point(const Vector& direction) const;

  /// Euclidean projection of p onto P.
  Vector project(const Vector& p) const;

  /// Euclidean distance from p to P (0 inside).
  double distance(const Vector& p) const { return (p - project(p)).norm(); }

  /// Largest pairwise vertex distance.
  double diameter() const;

 private:
  Vector project_active_set(const Vector& p) const;
  Vector project_conic(const Vector& p) const;

  Matrix A_;
  Vector b_;
  std::vector<Vector> vertices_;
};

/// Polytopic obstacle body O, displaced to O_w = {p + w : p in O}, observed
/// through the position selector C (positions = C x).
struct ObstacleModel {
  ObstacleModel(Polytope body, Matrix position_selector, double clearance);

  Polytope body;
  Matrix C;
  double clearance;  // effective clearance (d_min plus agent radius)

  Index state_dim() const { return C.cols(); }
  Index position_dim() const { return C.rows(); }
};

enum class DistanceMetric { euclidean, facet_max };

/// max_m [A_m (Cx - w) - b_m]_+
double distance_facet_max(const Vector& x, const Vector& w, const ObstacleModel& obs);

/// Euclidean distance from Cx to O_w.
double distance_exact(const Vector& x, const Vector& w, const ObstacleModel& obs);

/// Collision constraint g(x, w) = clearance - dist(Cx, O_w); g <= 0 is safe.
double constraint_g(const Vector& x, const Vector& w, const ObstacleModel& obs,
                    DistanceMetric metric = DistanceMetric::euclidean);

}  // namespace drmpc
