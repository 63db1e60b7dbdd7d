#pragma once

#include "drmpc/conic.hpp"
#include "drmpc/geometry.hpp"
#include "drmpc/risk.hpp"
#include "drmpc/safeset.hpp"

#include <optional>
#include <string>
#include <vector>

namespace drmpc {

/// Linear dynamics x+ = A x + B u.
struct Dynamics {
  Matrix A;
  Matrix B;

  Index state_dim() const { return A.rows(); }
  Index input_dim() const { return B.cols(); }
  Vector step(const Vector& x, const Vector& u) const { return A * x + B * u; }
  void validate() const;
};

struct MpcConfig {
  Index horizon = 11;
  StageCost cost;  // cost.target is x_F
  Vector state_lo, state_hi;
  Vector input_lo, input_hi;
  Vector start;
  double terminal_tol = 1e-2;
  int step_cap = 200;
  int convexification_rounds = 3;
  /// Steps whose two best facet margins at the reference differ by at most
  /// this much get a runner-up facet trial.
  double facet_switch_gap = 0.25;
  /// Terminal candidates closer than this (max norm) to one already tried
  /// are skipped outside exhaustive enumeration.
  double candidate_merge_tol = 1e-6;
  conic::SolverSettings solver{};

  const Vector& target() const { return cost.target; }
  void validate(const Dynamics& dynamics) const;
};

enum class Variant { wass, cl_wass, inn_wass };

std::string to_string(Variant variant);
/// Accepts "wass", "cl-wass" and "inn". Throws InputError otherwise.
Variant parse_variant(const std::string& name);

/// A safety set X_safe together with the data it is built from.
class SafetySetSpec {
 public:
  static SafetySetSpec wass(ObstacleModel obstacle, Polytope support, double beta, AmbiguitySet ambiguity);
  static SafetySetSpec cl_wass(ObstacleModel obstacle, Polytope support, double beta, AmbiguitySet ambiguity);
  static SafetySetSpec inn_wass(ObstacleModel obstacle, Polytope support, double beta, Vector offsets);

  Variant variant() const { return variant_; }
  const ObstacleModel& obstacle() const { return obstacle_; }
  const Polytope& support() const { return support_; }
  double beta() const { return beta_; }
  /// Wasserstein variants only.
  const AmbiguitySet& ambiguity() const;
  /// Inner variant only.
  const Vector& offsets() const;

  /// Membership of x in the risk part of X_safe.
  bool contains(const Vector& x, double tol = 1e-6) const;

 private:
  SafetySetSpec(Variant variant, ObstacleModel obstacle, Polytope support, double beta);

  Variant variant_;
  ObstacleModel obstacle_;
  Polytope support_;
  double beta_;
  std::optional<AmbiguitySet> ambiguity_;
  std::optional<Vector> offsets_;
};

/// Affine restriction of the safety set along a horizon: constraints[k - 1]
/// applies to x_k, k = 1..K-1. A half-space with an empty normal is inactive.
struct CompiledConstraints {
  std::vector<Halfspace> constraints;
  std::vector<Index> facets;    // inner variant: selected facet per step
  std::vector<Index> runners;   // inner variant: runner-up facet or -1
  double work = 0.0;
};

/// Linearizes the safety set around reference[0..K] (reference[0] is the
/// current state and is not constrained).
CompiledConstraints compile_safety_constraints(const SafetySetSpec& spec, const std::vector<Vector>& reference,
                                               const MpcConfig& cfg);

/// Inner variant with an explicit facet per step.
CompiledConstraints facet_constraints(const ObstacleModel& obstacle, const Vector& offsets,
                                      const std::vector<Index>& facets);

struct MpcSolution {
  std::vector<Vector> states;  // x_{t|t} .. x_{t+K|t}
  std::vector<Vector> inputs;  // u_{t|t} .. u_{t+K-1|t}
  double objective = 0.0;      // stage costs plus terminal cost-to-go
  Vector terminal_state;
  Index terminal_iteration = -1;
  Index terminal_time = -1;
  double solve_time = 0.0;  // wall seconds
  double work = 0.0;        // deterministic effort proxy
  int subproblems = 0;
  bool fallback = false;
};

/// Condensed finite-horizon QP over the input sequence with fixed terminal
/// state, input and state boxes and affine safety constraints.
class CondensedProblem {
 public:
  CondensedProblem(const Dynamics& dynamics, const MpcConfig& cfg, Index horizon);

  Index horizon() const { return K_; }

  /// Program data for a given initial state and constraint set; only the
  /// terminal equality right-hand side is left to fill in.
  conic::ConicProgram prepare(const Vector& x0, const std::vector<Halfspace>& constraints) const;

  /// Stage cost of the best input sequence reaching `terminal` when only the
  /// dynamics are imposed. A lower bound on solve().
  double relaxed_cost(const Vector& x0, const Vector& terminal) const;

  struct Plan {
    std::vector<Vector> states;
    std::vector<Vector> inputs;
    double stage_cost = 0.0;
  };

  /// Returns nullopt when the subproblem is infeasible or the solver cannot
  /// certify a solution that satisfies every constraint.
  std::optional<Plan> solve(conic::ConicProgram& prepared, const Vector& x0, const Vector& terminal,
                            const std::vector<Halfspace>& constraints, double& work) const;

  /// Applies inputs from x0 and evaluates the stage cost.
  Plan simulate(const Vector& x0, const std::vector<Vector>& inputs) const;

 private:
  Dynamics dyn_;
  MpcConfig cfg_;
  Index K_, nx_, nu_;
  std::vector<Matrix> phi_;    // A^k, k = 0..K
  std::vector<Matrix> gamma_;  // x_k = phi_k x0 + gamma_k u, k = 0..K
  Matrix F_;                   // residual map, cost = ||F u + g(x0)||^2 + const
  Matrix chol_, chol_lower_;   // F'F = chol_lower_ * chol_
  Matrix sqrtQ_, sqrtR_;
  Eigen::FullPivLU<Matrix> relaxed_kkt_;
};

inline constexpr double kNoIncumbent = 1e300;

/// Effort counters accumulated across candidate searches.
struct SearchStats {
  double work = 0.0;
  int subproblems = 0;
};

/// Solves the finite-horizon problem at x: terminal candidates are the
/// distinct safe-set states, visited in order of a relaxed lower bound and
/// pruned against the incumbent. Returns nullopt when every candidate is
/// infeasible. Subproblem effort is also added to *stats when given.
std::optional<MpcSolution> solve_finite_horizon(const Vector& x, const SampledSafeSet& ss, const CostMap& qmap,
                                                const CompiledConstraints& compiled, const CondensedProblem& problem,
                                                const MpcConfig& cfg, double incumbent = kNoIncumbent,
                                                bool exhaustive = false, SearchStats* stats = nullptr);

/// Full step: compilation, convexification rounds (Wasserstein variants) or
/// facet local search (inner variant), and candidate enumeration. Adds the
/// effort spent to `stats` whether or not a solution is found; the returned
/// solution carries the totals of the whole step.
std::optional<MpcSolution> solve_step(const Vector& x, const SampledSafeSet& ss, const CostMap& qmap,
                                      const SafetySetSpec& spec, const CondensedProblem& problem, const MpcConfig& cfg,
                                      const std::vector<Vector>& reference, SearchStats& stats);

struct RolloutResult {
  std::vector<Vector> states;
  std::vector<Vector> inputs;
  std::vector<double> step_times;  // wall seconds per step
  std::vector<double> step_work;   // effort proxy per step
  int fallback_steps = 0;
};

/// Algorithm loop: solve, apply the first input, advance, until within
/// terminal_tol of the target. Every executed state is audited against
/// spec.contains. Throws InfeasibleError when neither the solution nor the
/// fallback is safe and NonConvergenceError past the step cap.
RolloutResult safe_mpc_rollout(const Vector& start, const SampledSafeSet& ss, const SafetySetSpec& spec,
                               const MpcConfig& cfg, const Dynamics& dynamics);

}  // namespace drmpc
