#pragma once

#include "drmpc/common.hpp"
#include "drmpc/conic.hpp"
#include "drmpc/geometry.hpp"

#include <span>
#include <vector>

namespace drmpc {

/// Weighted atoms. Weights are strictly positive and sum to one.
class DiscreteDistribution {
 public:
  DiscreteDistribution() = default;
  DiscreteDistribution(std::vector<Vector> atoms, std::vector<double> weights);

  /// Uniform weights 1/N.
  static DiscreteDistribution empirical(std::vector<Vector> samples);

  const std::vector<Vector>& atoms() const { return atoms_; }
  const std::vector<double>& weights() const { return weights_; }
  Index size() const { return static_cast<Index>(atoms_.size()); }
  Index dim() const { return atoms_.empty() ? 0 : atoms_.front().size(); }

  /// Throws InputError if some atom lies outside support.
  void check_support(const Polytope& support, double tol = 1e-9) const;

 private:
  std::vector<Vector> atoms_;
  std::vector<double> weights_;
};

struct AmbiguitySet {
  DiscreteDistribution center;
  double radius = 0.0;

  void validate() const;
};

struct RiskParams {
  double beta = 0.05;

  void validate() const;
};

/// CVaR_beta of a discrete random variable: the mean of its worst beta-tail.
double cvar_discrete(std::span<const double> values, std::span<const double> weights, double beta);

/// 1-Wasserstein distance with Euclidean ground cost (transport LP).
double wasserstein_discrete(const DiscreteDistribution& mu, const DiscreteDistribution& nu);

/// How the obstacle multiplier is shared across atoms in the worst-case CVaR
/// program. per_atom is the exact dual bound; shared (one multiplier for all
/// atoms) is a tighter restriction whose value is never smaller, and is the
/// form used for the safety sets and their convexification.
enum class DualCoupling { per_atom, shared };

/// Optimal value and multipliers of the worst-case CVaR bound, in CVaR units.
struct WorstCaseCvar {
  double value = 0.0;
  double lambda = 0.0;
  double eta = 0.0;
  std::vector<double> s;
  std::vector<Vector> nu;     // one entry (shared) or one per atom
  std::vector<Vector> gamma;  // one per atom
  conic::ConicSolution solution;
};

/// Upper bound on sup over the Wasserstein ball of CVaR_beta[g(x, w)].
WorstCaseCvar worst_case_cvar_ub(const AmbiguitySet& amb, double beta, const Vector& x, const ObstacleModel& obs,
                                 const Polytope& support, DualCoupling coupling = DualCoupling::per_atom);

/// Lower bound on the same supremum: the best distribution obtained by moving
/// center mass onto a grid over the support within the transport budget.
double worst_case_cvar_lb_oracle(const AmbiguitySet& amb, double beta, const Vector& x, const ObstacleModel& obs,
                                 const Polytope& support, double grid_resolution);

/// Empirical CVaR of g over the center atoms (a lower bound of the above).
double center_cvar(const AmbiguitySet& amb, double beta, const Vector& x, const ObstacleModel& obs);

/// Largest facet margin A_m C x - b_m - max_{w in W} A_m w - clearance. When
/// nonnegative, g(x, w) <= 0 for every w in the support.
double robust_margin(const Vector& x, const ObstacleModel& obs, const Polytope& support);

/// x in X_Wass: worst_case_cvar_ub(x) <= tol. Cheap exact certificates are
/// tried before the conic program.
bool member_x_wass(const Vector& x, const AmbiguitySet& amb, double beta, const ObstacleModel& obs,
                   const Polytope& support, double tol = 1e-6, DualCoupling coupling = DualCoupling::shared);

/// Per-facet offsets b_m = sup over the ball of CVaR_beta[A_m w]. Solver
/// effort is added to *work when given.
Vector inner_offsets(const AmbiguitySet& amb, double beta, const ObstacleModel& obs, const Polytope& support,
                     double* work = nullptr);

/// Facet margins A_m C x - b_m - offsets_m - clearance of the inner set.
Vector inner_margins(const Vector& x, const ObstacleModel& obs, const Vector& offsets);

/// x in X_inn: some facet margin is >= -tol.
bool member_x_inn(const Vector& x, const ObstacleModel& obs, const Vector& offsets, double tol = 1e-6);

/// Half-space normal' x >= offset in state space.
struct Halfspace {
  Vector normal;
  double offset = 0.0;

  double slack(const Vector& x) const { return normal.dot(x) - offset; }
};

/// Freezes the multipliers (shared nu, gamma_l, lambda) of a shared-coupling
/// solution. Any x satisfying the returned half-space has a shared bound
/// <= 0; at the linearization state the slack equals minus the bound value.
Halfspace frozen_halfspace(const WorstCaseCvar& ub, const AmbiguitySet& amb, double beta, const ObstacleModel& obs,
                           const Polytope& support);

}  // namespace drmpc
