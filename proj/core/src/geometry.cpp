#include "drmpc/geometry.hpp"

#include "drmpc/conic.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace drmpc {

namespace {

constexpr double kFeasTol = 1e-10;
constexpr double kMaxActiveSets = 20000.0;

// Calls visit(indices) for every k-subset of {0..n-1} in lexicographic order.
template <typename Visit>
void for_each_subset(Index n, Index k, Visit&& visit) {
  if (k > n) return;
  std::vector<Index> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), Index{0});
  while (true) {
    visit(idx);
    Index i = k - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) return;
    ++idx[static_cast<std::size_t>(i)];
    for (Index j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
}

double binomial(Index n, Index k) {
  double r = 1.0;
  for (Index i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

Matrix rows_of(const Matrix& A, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), A.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = A.row(idx[r]);
  return out;
}

Vector entries_of(const Vector& v, const std::vector<Index>& idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) out(static_cast<Index>(r)) = v(idx[r]);
  return out;
}

}  // namespace

Polytope::Polytope(Matrix A, Vector b) : A_(std::move(A)), b_(std::move(b)) {
  require(A_.rows() > 0 && A_.cols() > 0, "polytope: empty constraint matrix");
  require(A_.rows() == b_.size(), "polytope: A and b row counts differ");
  require(A_.allFinite() && b_.allFinite(), "polytope: non-finite data");
  for (Index m = 0; m < A_.rows(); ++m) {
    const double norm = A_.row(m).norm();
    require(norm > 1e-12, "polytope: zero facet normal in row " + std::to_string(m));
    A_.row(m) /= norm;
    b_(m) /= norm;
  }

  // Support LPs along +-e_i: nonempty iff feasible, bounded iff all finite.
  const Index n = A_.cols();
  conic::ConicProgram lp;
  lp.A.resize(0, n);
  lp.b.resize(0);
  lp.G = A_.sparseView();
  lp.h = b_;
  lp.cones = {{conic::ConeKind::nonnegative, A_.rows()}};
  for (Index i = 0; i < n; ++i) {
    for (const double sign : {1.0, -1.0}) {
      lp.c = Vector::Zero(n);
      lp.c(i) = -sign;
      const auto sol = conic::solve(lp);
      if (sol.status == conic::SolveStatus::infeasible) throw InputError("polytope: empty set");
      if (sol.status == conic::SolveStatus::unbounded) throw InputError("polytope: unbounded set");
      if (!sol.optimal()) throw NumericalError("polytope: support LP failed (" + conic::to_string(sol.status) + ")");
    }
  }

  // Vertex enumeration over n-subsets of facets.
  require(binomial(A_.rows(), n) <= 1e6, "polytope: too many facets for vertex enumeration");
  const double scale = 1.0 + b_.cwiseAbs().maxCoeff();
  for_each_subset(A_.rows(), n, [&](const std::vector<Index>& idx) {
    const Matrix As = rows_of(A_, idx);
    Eigen::FullPivLU<Matrix> lu(As);
    if (lu.rank() < n) return;
    const Vector v = lu.solve(entries_of(b_, idx));
    if (((A_ * v - b_).array() > 1e-9 * scale).any()) return;
    for (const auto& u : vertices_)
      if ((u - v).norm() <= 1e-9 * scale) return;
    vertices_.push_back(v);
  });
  require(!vertices_.empty(), "polytope: no vertices found");
}

Polytope Polytope::box(const Vector& lo, const Vector& hi) {
  require(lo.size() == hi.size() && lo.size() > 0, "polytope: box bounds differ in size");
  require((lo.array() <= hi.array()).all(), "polytope: box lower bound exceeds upper bound");
  const Index n = lo.size();
  Matrix A(2 * n, n);
  A << Matrix::Identity(n, n), -Matrix::Identity(n, n);
  Vector b(2 * n);
  b << hi, -lo;
  return Polytope(std::move(A), std::move(b));
}

bool Polytope::contains(const Vector& p, double tol) const {
  require(p.size() == dim(), "polytope: point has wrong dimension");
  return ((A_ * p - b_).array() <= tol).all();
}

double Polytope::support(const Vector& direction) const { return direction.dot(support_point(direction)); }

const Vector& Polytope::support_point(const Vector& direction) const {
  require(direction.size() == dim(), "polytope: direction has wrong dimension");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    const double v = direction.dot(vertices_[i]);
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  return vertices_[best];
}

double Polytope::diameter() const {
  double d = 0.0;
  for (std::size_t i = 0; i < vertices_.size(); ++i)
    for (std::size_t j = i + 1; j < vertices_.size(); ++j) d = std::max(d, (vertices_[i] - vertices_[j]).norm());
  return d;
}

Vector Polytope::project(const Vector& p) const {
  require(p.size() == dim(), "polytope: point has wrong dimension");
  if (contains(p, 0.0)) return p;
  double combos = 0.0;
  for (Index k = 1; k <= std::min(dim(), num_facets()); ++k) combos += binomial(num_facets(), k);
  return combos <= kMaxActiveSets ? project_active_set(p) : project_conic(p);
}

// The projection lies on the relative interior of some face; projecting onto
// the affine hull of every candidate face and keeping the closest feasible
// point therefore recovers it exactly.
Vector Polytope::project_active_set(const Vector& p) const {
  const double scale = 1.0 + b_.cwiseAbs().maxCoeff() + p.cwiseAbs().maxCoeff();
  Vector best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (Index k = 1; k <= std::min(dim(), num_facets()); ++k) {
    for_each_subset(num_facets(), k, [&](const std::vector<Index>& idx) {
      const Matrix As = rows_of(A_, idx);
      const Matrix gram = As * As.transpose();
      Eigen::FullPivLU<Matrix> lu(gram);
      if (lu.rank() < k) return;
      const Vector mult = lu.solve(As * p - entries_of(b_, idx));
      if ((mult.array() < -kFeasTol).any()) return;
      const Vector y = p - As.transpose() * mult;
      if (((A_ * y - b_).array() > kFeasTol * scale).any()) return;
      const double d = (y - p).norm();
      if (d < best_dist) {
        best_dist = d;
        best = y;
      }
    });
  }
  if (best.size() == 0) return project_conic(p);
  return best;
}

Vector Polytope::project_conic(const Vector& p) const {
  const Index n = dim();
  conic::ProgramBuilder builder;
  const Index y = builder.add_variables(n);
  const Index t = builder.add_variable();
  for (Index m = 0; m < num_facets(); ++m) {
    conic::LinearExpr row(b_(m));
    for (Index i = 0; i < n; ++i) row.add(y + i, -A_(m, i));
    builder.add_nonnegative(row);
  }
  std::vector<conic::LinearExpr> cone{conic::LinearExpr::variable(t)};
  for (Index i = 0; i < n; ++i) cone.push_back(conic::LinearExpr::variable(y + i) + conic::LinearExpr(-p(i)));
  builder.add_second_order_cone(cone);
  builder.set_objective(conic::LinearExpr::variable(t));
  const auto sol = conic::solve(builder.build());
  if (!sol.optimal())
    throw NumericalError("polytope: projection failed (" + conic::to_string(sol.status) +
                         ", primal residual " + std::to_string(sol.residuals.primal) + ", dual residual " +
                         std::to_string(sol.residuals.dual) + ")");
  return sol.x.segment(y, n);
}

ObstacleModel::ObstacleModel(Polytope body_in, Matrix position_selector, double clearance_in)
    : body(std::move(body_in)), C(std::move(position_selector)), clearance(clearance_in) {
  require(C.rows() == body.dim(), "obstacle: position selector rows must match obstacle dimension");
  require(C.allFinite(), "obstacle: non-finite position selector");
  require(std::isfinite(clearance) && clearance >= 0.0, "obstacle: clearance must be finite and >= 0");
}

namespace {

Vector relative_position(const Vector& x, const Vector& w, const ObstacleModel& obs) {
  if (x.size() != obs.state_dim() || w.size() != obs.position_dim())
    throw ConfigError("geometry: state or displacement dimension mismatch");
  return obs.C * x - w;
}

}  // namespace

double distance_facet_max(const Vector& x, const Vector& w, const ObstacleModel& obs) {
  const Vector p = relative_position(x, w, obs);
  return std::max(0.0, (obs.body.A() * p - obs.body.b()).maxCoeff());
}

double distance_exact(const Vector& x, const Vector& w, const ObstacleModel& obs) {
  return obs.body.distance(relative_position(x, w, obs));
}

double constraint_g(const Vector& x, const Vector& w, const ObstacleModel& obs, DistanceMetric metric) {
  const double d = metric == DistanceMetric::euclidean ? distance_exact(x, w, obs) : distance_facet_max(x, w, obs);
  return obs.clearance - d;
}

}  // namespace drmpc
