#include "drmpc/mpc.hpp"

#include "drmpc/log.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace drmpc {

namespace {

constexpr double kFeasTol = 1e-6;
// Slack below which a safety half-space counts as binding.
constexpr double kActiveTol = 1e-4;

Matrix psd_sqrt(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  const Vector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

bool is_psd(const Matrix& M, double tol = 1e-12) {
  if (!M.isApprox(M.transpose(), 1e-12)) return false;
  return Eigen::SelfAdjointEigenSolver<Matrix>(M).eigenvalues().minCoeff() >= -tol;
}

Halfspace facet_halfspace(const ObstacleModel& obs, Index m, double extra_offset) {
  Halfspace hs;
  hs.normal = obs.C.transpose() * obs.body.A().row(m).transpose();
  hs.offset = obs.body.b()(m) + extra_offset + obs.clearance;
  return hs;
}

// Robust facet margins A_m C x - b_m - max_W A_m w - clearance.
Vector robust_margins(const Vector& x, const ObstacleModel& obs, const Polytope& support) {
  const Matrix& A = obs.body.A();
  Vector out = A * (obs.C * x) - obs.body.b();
  for (Index m = 0; m < A.rows(); ++m)
    out(m) -= support.support(A.row(m).transpose()) + obs.clearance;
  return out;
}

Index argmax(const Vector& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

const SafePoint* find_point(const SampledSafeSet& ss, Index iteration, Index time) {
  for (const auto& p : ss.points())
    if (p.iteration == iteration && p.time == time) return &p;
  return nullptr;
}

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool better(const std::optional<MpcSolution>& candidate, const std::optional<MpcSolution>& incumbent) {
  return candidate && (!incumbent || candidate->objective < incumbent->objective);
}

}  // namespace

void Dynamics::validate() const {
  require(A.rows() > 0 && A.rows() == A.cols(), "dynamics: A must be square and nonempty");
  require(B.rows() == A.rows() && B.cols() > 0, "dynamics: B must have as many rows as A");
  require(A.allFinite() && B.allFinite(), "dynamics: non-finite entries");
}

void MpcConfig::validate(const Dynamics& dynamics) const {
  dynamics.validate();
  cost.validate();
  const Index nx = dynamics.state_dim();
  const Index nu = dynamics.input_dim();
  require(horizon >= 1, "mpc: horizon must be >= 1");
  require(cost.Q.rows() == nx && cost.R.rows() == nu, "mpc: cost matrices do not match the dynamics");
  require(is_psd(cost.Q), "mpc: Q must be symmetric positive semidefinite");
  require(is_psd(cost.R) && Eigen::SelfAdjointEigenSolver<Matrix>(cost.R).eigenvalues().minCoeff() > 0.0,
          "mpc: R must be symmetric positive definite");
  require(state_lo.size() == nx && state_hi.size() == nx, "mpc: state box dimension mismatch");
  require(input_lo.size() == nu && input_hi.size() == nu, "mpc: input box dimension mismatch");
  require(start.size() == nx, "mpc: start dimension mismatch");
  require((state_lo.array() <= state_hi.array()).all(), "mpc: empty state box");
  require((input_lo.array() <= 0.0).all() && (input_hi.array() >= 0.0).all(), "mpc: the input box must contain 0");
  const Vector& xf = cost.target;
  require((xf.array() >= state_lo.array()).all() && (xf.array() <= state_hi.array()).all(),
          "mpc: the target must lie in the state box");
  require(terminal_tol > 0.0, "mpc: terminal tolerance must be positive");
  require(step_cap >= 1, "mpc: step cap must be >= 1");
  require(convexification_rounds >= 1, "mpc: at least one convexification round is required");
  require(candidate_merge_tol >= 0.0, "mpc: candidate merge tolerance must be >= 0");
}

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::wass: return "wass";
    case Variant::cl_wass: return "cl-wass";
    case Variant::inn_wass: return "inn";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "wass") return Variant::wass;
  if (name == "cl-wass") return Variant::cl_wass;
  if (name == "inn") return Variant::inn_wass;
  throw InputError("unknown variant '" + name + "' (expected wass, cl-wass or inn)");
}

// ---------------------------------------------------------------------------
// Safety set specification

SafetySetSpec::SafetySetSpec(Variant variant, ObstacleModel obstacle, Polytope support, double beta)
    : variant_(variant), obstacle_(std::move(obstacle)), support_(std::move(support)), beta_(beta) {
  require(beta_ > 0.0 && beta_ <= 1.0, "safety set: beta must lie in (0, 1]");
  require(support_.dim() == obstacle_.position_dim(), "safety set: support dimension mismatch");
}

SafetySetSpec SafetySetSpec::wass(ObstacleModel obstacle, Polytope support, double beta, AmbiguitySet ambiguity) {
  ambiguity.validate();
  ambiguity.center.check_support(support);
  SafetySetSpec out(Variant::wass, std::move(obstacle), std::move(support), beta);
  out.ambiguity_ = std::move(ambiguity);
  return out;
}

SafetySetSpec SafetySetSpec::cl_wass(ObstacleModel obstacle, Polytope support, double beta, AmbiguitySet ambiguity) {
  SafetySetSpec out = wass(std::move(obstacle), std::move(support), beta, std::move(ambiguity));
  out.variant_ = Variant::cl_wass;
  return out;
}

SafetySetSpec SafetySetSpec::inn_wass(ObstacleModel obstacle, Polytope support, double beta, Vector offsets) {
  require(offsets.size() == obstacle.body.num_facets(), "safety set: one offset per obstacle facet is required");
  require(offsets.allFinite(), "safety set: non-finite offsets");
  SafetySetSpec out(Variant::inn_wass, std::move(obstacle), std::move(support), beta);
  out.offsets_ = std::move(offsets);
  return out;
}

const AmbiguitySet& SafetySetSpec::ambiguity() const {
  if (!ambiguity_) throw InputError("safety set: the inner variant has no ambiguity set");
  return *ambiguity_;
}

const Vector& SafetySetSpec::offsets() const {
  if (!offsets_) throw InputError("safety set: only the inner variant has facet offsets");
  return *offsets_;
}

bool SafetySetSpec::contains(const Vector& x, double tol) const {
  if (variant_ == Variant::inn_wass) return member_x_inn(x, obstacle_, *offsets_, tol);
  return member_x_wass(x, *ambiguity_, beta_, obstacle_, support_, tol, DualCoupling::shared);
}

// ---------------------------------------------------------------------------
// Constraint compilation

CompiledConstraints facet_constraints(const ObstacleModel& obstacle, const Vector& offsets,
                                      const std::vector<Index>& facets) {
  CompiledConstraints out;
  out.facets = facets;
  out.runners.assign(facets.size(), -1);
  for (const Index m : facets) {
    require(m >= 0 && m < obstacle.body.num_facets(), "facet constraints: facet index out of range");
    out.constraints.push_back(facet_halfspace(obstacle, m, offsets(m)));
  }
  return out;
}

CompiledConstraints compile_safety_constraints(const SafetySetSpec& spec, const std::vector<Vector>& reference,
                                               const MpcConfig& cfg) {
  require(!reference.empty(), "compile: empty reference trajectory");
  const ObstacleModel& obs = spec.obstacle();
  const Index steps = static_cast<Index>(reference.size()) - 2;  // x_1..x_{K-1}
  CompiledConstraints out;
  if (spec.variant() == Variant::inn_wass) {
    const Vector& off = spec.offsets();
    for (Index k = 1; k <= steps; ++k) {
      const Vector margins = inner_margins(reference[static_cast<std::size_t>(k)], obs, off);
      const Index best = argmax(margins);
      Index runner = -1;
      for (Index m = 0; m < margins.size(); ++m)
        if (m != best && (runner < 0 || margins(m) > margins(runner))) runner = m;
      if (runner >= 0 && margins(best) - margins(runner) > cfg.facet_switch_gap) runner = -1;
      out.facets.push_back(best);
      out.runners.push_back(runner);
      out.constraints.push_back(facet_halfspace(obs, best, off(best)));
    }
    return out;
  }
  const AmbiguitySet& amb = spec.ambiguity();
  const Polytope& W = spec.support();
  for (Index k = 1; k <= steps; ++k) {
    const Vector& xr = reference[static_cast<std::size_t>(k)];
    const Vector rm = robust_margins(xr, obs, W);
    const Index m = argmax(rm);
    const Halfspace robust = facet_halfspace(obs, m, W.support(obs.body.A().row(m).transpose()));
    try {
      const WorstCaseCvar ub = worst_case_cvar_ub(amb, spec.beta(), xr, obs, W, DualCoupling::shared);
      out.work += ub.solution.work;
      out.constraints.push_back(frozen_halfspace(ub, amb, spec.beta(), obs, W));
    } catch (const NumericalError&) {
      // The robust facet is also an inner restriction, only a coarser one.
      out.constraints.push_back(robust);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Condensed problem

CondensedProblem::CondensedProblem(const Dynamics& dynamics, const MpcConfig& cfg, Index horizon)
    : dyn_(dynamics), cfg_(cfg), K_(horizon), nx_(dynamics.state_dim()), nu_(dynamics.input_dim()) {
  require(K_ >= 1, "condensed problem: horizon must be >= 1");
  const Index n = K_ * nu_;
  phi_.push_back(Matrix::Identity(nx_, nx_));
  gamma_.push_back(Matrix::Zero(nx_, n));
  for (Index k = 0; k < K_; ++k) {
    phi_.push_back(dyn_.A * phi_.back());
    Matrix g = dyn_.A * gamma_.back();
    g.middleCols(k * nu_, nu_) += dyn_.B;
    gamma_.push_back(std::move(g));
  }
  sqrtQ_ = psd_sqrt(cfg_.cost.Q);
  sqrtR_ = psd_sqrt(cfg_.cost.R);
  F_ = Matrix::Zero((K_ - 1) * nx_ + K_ * nu_, n);
  for (Index k = 1; k < K_; ++k) F_.middleRows((k - 1) * nx_, nx_) = sqrtQ_ * gamma_[static_cast<std::size_t>(k)];
  for (Index k = 0; k < K_; ++k) F_.block((K_ - 1) * nx_ + k * nu_, k * nu_, nu_, nu_) = sqrtR_;

  // F'F = L L' is positive definite because R is; ||F u + g||^2 equals
  // ||L' u + L^{-1} F' g||^2 up to a constant, a much smaller cone.
  const Matrix FtF = F_.transpose() * F_;
  Eigen::LLT<Matrix> llt(FtF);
  if (llt.info() != Eigen::Success) throw NumericalError("condensed problem: cost Hessian is not positive definite");
  chol_ = llt.matrixU();
  chol_lower_ = llt.matrixL();

  Matrix kkt = Matrix::Zero(n + nx_, n + nx_);
  kkt.topLeftCorner(n, n) = FtF;
  kkt.topRightCorner(n, nx_) = gamma_.back().transpose();
  kkt.bottomLeftCorner(nx_, n) = gamma_.back();
  relaxed_kkt_.compute(kkt);
}

namespace {

Vector residual_offset(const Matrix& sqrtQ, const std::vector<Matrix>& phi, const Vector& x0, const Vector& target,
                       Index K, Index nx, Index nu) {
  Vector g = Vector::Zero((K - 1) * nx + K * nu);
  for (Index k = 1; k < K; ++k) g.segment((k - 1) * nx, nx) = sqrtQ * (phi[static_cast<std::size_t>(k)] * x0 - target);
  return g;
}

}  // namespace

double CondensedProblem::relaxed_cost(const Vector& x0, const Vector& terminal) const {
  const Index n = K_ * nu_;
  const Vector g = residual_offset(sqrtQ_, phi_, x0, cfg_.cost.target, K_, nx_, nu_);
  Vector rhs(n + nx_);
  rhs.head(n) = -F_.transpose() * g;
  rhs.tail(nx_) = terminal - phi_.back() * x0;
  const Vector sol = relaxed_kkt_.solve(rhs);
  const Vector u = sol.head(n);
  // Unreachable terminal states leave the KKT system inconsistent.
  if ((gamma_.back() * u - rhs.tail(nx_)).norm() > 1e-8 * (1.0 + rhs.tail(nx_).norm()))
    return std::numeric_limits<double>::infinity();
  const Vector e0 = x0 - cfg_.cost.target;
  return (F_ * u + g).squaredNorm() + e0.dot(cfg_.cost.Q * e0);
}

conic::ConicProgram CondensedProblem::prepare(const Vector& x0, const std::vector<Halfspace>& constraints) const {
  require(x0.size() == nx_, "condensed problem: state dimension mismatch");
  require(static_cast<Index>(constraints.size()) == K_ - 1, "condensed problem: need one constraint per inner step");
  const Index n = K_ * nu_ + 1;
  const Index t_col = n - 1;
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<double> h;
  Index row = 0;
  auto dense_row = [&](const Eigen::RowVectorXd& coeffs, double rhs) {
    for (Index j = 0; j < coeffs.size(); ++j)
      if (coeffs(j) != 0.0) trip.emplace_back(row, j, coeffs(j));
    h.push_back(rhs);
    ++row;
  };

  for (Index k = 0; k < K_; ++k) {
    for (Index i = 0; i < nu_; ++i) {
      const Index col = k * nu_ + i;
      if (std::isfinite(cfg_.input_hi(i))) {
        trip.emplace_back(row++, col, 1.0);
        h.push_back(cfg_.input_hi(i));
      }
      if (std::isfinite(cfg_.input_lo(i))) {
        trip.emplace_back(row++, col, -1.0);
        h.push_back(-cfg_.input_lo(i));
      }
    }
  }
  for (Index k = 1; k < K_; ++k) {
    const Matrix& G = gamma_[static_cast<std::size_t>(k)];
    const Vector free = phi_[static_cast<std::size_t>(k)] * x0;
    for (Index i = 0; i < nx_; ++i) {
      if (std::isfinite(cfg_.state_hi(i))) dense_row(G.row(i), cfg_.state_hi(i) - free(i));
      if (std::isfinite(cfg_.state_lo(i))) dense_row(-G.row(i), free(i) - cfg_.state_lo(i));
    }
    const Halfspace& hs = constraints[static_cast<std::size_t>(k - 1)];
    if (hs.normal.size() == 0) continue;
    require(hs.normal.size() == nx_, "condensed problem: half-space dimension mismatch");
    dense_row(-(hs.normal.transpose() * G), hs.normal.dot(free) - hs.offset);
  }
  const Index linear_rows = row;

  // Rotated cone ||(2 rho, t - 1)|| <= t + 1, i.e. ||rho||^2 <= t, with
  // rho = L' u + c(x0) the compressed residual.
  const Vector g = residual_offset(sqrtQ_, phi_, x0, cfg_.cost.target, K_, nx_, nu_);
  const Vector c = chol_lower_.triangularView<Eigen::Lower>().solve(F_.transpose() * g);
  trip.emplace_back(row++, t_col, -1.0);
  h.push_back(1.0);
  trip.emplace_back(row++, t_col, -1.0);
  h.push_back(-1.0);
  for (Index r = 0; r < chol_.rows(); ++r) dense_row(-2.0 * chol_.row(r), 2.0 * c(r));

  conic::ConicProgram prog;
  prog.c = Vector::Zero(n);
  prog.c(t_col) = 1.0;
  const Vector e0 = x0 - cfg_.cost.target;
  prog.objective_offset = e0.dot(cfg_.cost.Q * e0) + g.squaredNorm() - c.squaredNorm();
  prog.G.resize(row, n);
  prog.G.setFromTriplets(trip.begin(), trip.end());
  prog.h = Eigen::Map<const Vector>(h.data(), static_cast<Index>(h.size()));
  prog.cones.push_back({conic::ConeKind::nonnegative, linear_rows});
  prog.cones.push_back({conic::ConeKind::second_order, row - linear_rows});

  std::vector<Eigen::Triplet<double>> eq;
  const Matrix& GK = gamma_.back();
  for (Index i = 0; i < nx_; ++i)
    for (Index j = 0; j < K_ * nu_; ++j)
      if (GK(i, j) != 0.0) eq.emplace_back(i, j, GK(i, j));
  prog.A.resize(nx_, n);
  prog.A.setFromTriplets(eq.begin(), eq.end());
  prog.b = Vector::Zero(nx_);
  return prog;
}

CondensedProblem::Plan CondensedProblem::simulate(const Vector& x0, const std::vector<Vector>& inputs) const {
  Plan plan;
  plan.states.push_back(x0);
  for (const auto& u : inputs) {
    plan.stage_cost += cfg_.cost(plan.states.back(), u);
    plan.states.push_back(dyn_.step(plan.states.back(), u));
  }
  plan.inputs = inputs;
  return plan;
}

std::optional<CondensedProblem::Plan> CondensedProblem::solve(conic::ConicProgram& prepared, const Vector& x0,
                                                              const Vector& terminal,
                                                              const std::vector<Halfspace>& constraints,
                                                              double& work) const {
  prepared.b = terminal - phi_.back() * x0;
  const conic::ConicSolution sol = conic::solve(prepared, cfg_.solver);
  work += sol.work;
  if (sol.status == conic::SolveStatus::infeasible || sol.status == conic::SolveStatus::unbounded) return std::nullopt;
  if (!sol.optimal()) {
    const auto& r = sol.residuals;
    if (std::max({r.primal, r.dual, r.gap}) > 1e3 * cfg_.solver.tol) return std::nullopt;
  }
  std::vector<Vector> inputs;
  for (Index k = 0; k < K_; ++k)
    inputs.push_back(sol.x.segment(k * nu_, nu_).cwiseMax(cfg_.input_lo).cwiseMin(cfg_.input_hi));
  Plan plan = simulate(x0, inputs);

  // Certify the plan directly rather than trusting solver residuals.
  if ((plan.states.back() - terminal).norm() > kFeasTol) return std::nullopt;
  for (Index k = 1; k < K_; ++k) {
    const Vector& xk = plan.states[static_cast<std::size_t>(k)];
    if (((xk - cfg_.state_hi).array() > kFeasTol).any() || ((cfg_.state_lo - xk).array() > kFeasTol).any())
      return std::nullopt;
    const Halfspace& hs = constraints[static_cast<std::size_t>(k - 1)];
    if (hs.normal.size() != 0 && hs.slack(xk) < -kFeasTol) return std::nullopt;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Finite-horizon problem

std::optional<MpcSolution> solve_finite_horizon(const Vector& x, const SampledSafeSet& ss, const CostMap& qmap,
                                                const CompiledConstraints& compiled, const CondensedProblem& problem,
                                                const MpcConfig& cfg, double incumbent, bool exhaustive,
                                                SearchStats* stats) {
  require(!ss.empty(), "finite-horizon problem: empty safe set");
  const auto start = std::chrono::steady_clock::now();
  const std::vector<CostMap::Entry> entries = qmap.entries();
  std::vector<double> lb(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    lb[i] = problem.relaxed_cost(x, entries[i].state) + entries[i].cost;
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lb[a] < lb[b]; });

  conic::ConicProgram prog = problem.prepare(x, compiled.constraints);
  std::optional<MpcSolution> best;
  double best_value = incumbent;
  double work = 0.0;
  int solved = 0;
  std::vector<const Vector*> tried;
  for (const std::size_t i : order) {
    if (!std::isfinite(lb[i])) break;
    if (!exhaustive && lb[i] >= best_value) break;
    const auto& e = entries[i];
    // Stored copies of one state that differ only at solver precision would
    // repeat the same subproblem.
    if (!exhaustive && std::any_of(tried.begin(), tried.end(), [&](const Vector* t) {
          return (*t - e.state).lpNorm<Eigen::Infinity>() <= cfg.candidate_merge_tol;
        }))
      continue;
    tried.push_back(&e.state);
    ++solved;
    const auto plan = problem.solve(prog, x, e.state, compiled.constraints, work);
    if (!plan) continue;
    const double value = plan->stage_cost + e.cost;
    if (value >= best_value) continue;
    best_value = value;
    MpcSolution sol;
    sol.states = plan->states;
    sol.inputs = plan->inputs;
    sol.objective = value;
    sol.terminal_state = e.state;
    sol.terminal_iteration = e.iteration;
    sol.terminal_time = e.time;
    best = std::move(sol);
  }
  if (stats) {
    stats->work += work;
    stats->subproblems += solved;
  }
  if (best) {
    best->work = work + compiled.work;
    best->subproblems = solved;
    best->solve_time = elapsed_since(start);
  }
  return best;
}

namespace {

std::optional<MpcSolution> solve_wasserstein(const Vector& x, const SampledSafeSet& ss, const CostMap& qmap,
                                             const SafetySetSpec& spec, const CondensedProblem& problem,
                                             const MpcConfig& cfg, const std::vector<Vector>& reference,
                                             SearchStats& stats) {
  std::optional<MpcSolution> best;
  std::vector<Vector> ref = reference;
  for (int round = 0; round < cfg.convexification_rounds; ++round) {
    const CompiledConstraints compiled = compile_safety_constraints(spec, ref, cfg);
    stats.work += compiled.work;
    auto sol = solve_finite_horizon(x, ss, qmap, compiled, problem, cfg, kNoIncumbent, false, &stats);
    if (!sol) break;
    const bool improved = better(sol, best);
    const double gain = best ? best->objective - sol->objective : std::numeric_limits<double>::infinity();
    ref = sol->states;
    if (improved) best = std::move(sol);
    if (gain <= 1e-9 * (1.0 + std::abs(best->objective))) break;
  }
  return best;
}

std::optional<MpcSolution> solve_inner(const Vector& x, const SampledSafeSet& ss, const CostMap& qmap,
                                       const SafetySetSpec& spec, const CondensedProblem& problem,
                                       const MpcConfig& cfg, const std::vector<Vector>& reference,
                                       SearchStats& stats) {
  const ObstacleModel& obs = spec.obstacle();
  const Vector& off = spec.offsets();
  CompiledConstraints compiled = compile_safety_constraints(spec, reference, cfg);
  std::vector<Index> facets = compiled.facets;
  auto attempt = [&](const std::vector<Index>& f, double incumbent) {
    const CompiledConstraints c = facet_constraints(obs, off, f);
    return solve_finite_horizon(x, ss, qmap, c, problem, cfg, incumbent, false, &stats);
  };

  std::optional<MpcSolution> best = attempt(facets, kNoIncumbent);
  for (int round = 0; round < cfg.convexification_rounds; ++round) {
    // Runner-up facet trials at ambiguous steps where the current facet binds
    // the incumbent; a slack facet can be swapped out without improving it.
    const CompiledConstraints current = best ? facet_constraints(obs, off, facets) : CompiledConstraints{};
    for (std::size_t k = 0; k < facets.size(); ++k) {
      if (compiled.runners[k] < 0) continue;
      if (best && current.constraints[k].slack(best->states[k + 1]) > kActiveTol) continue;
      std::vector<Index> trial = facets;
      trial[k] = compiled.runners[k];
      auto sol = attempt(trial, best ? best->objective : kNoIncumbent);
      if (better(sol, best)) {
        best = std::move(sol);
        facets = std::move(trial);
      }
    }
    if (!best) break;
    // Re-assign facets around the new plan.
    compiled = compile_safety_constraints(spec, best->states, cfg);
    if (compiled.facets == facets) break;
    auto sol = attempt(compiled.facets, best->objective);
    if (!better(sol, best)) break;
    best = std::move(sol);
    facets = compiled.facets;
  }
  return best;
}

// Follows stored trajectory continuations from x, if x is a stored state.
std::optional<MpcSolution> stored_plan(const Vector& x, const SampledSafeSet& ss, const CondensedProblem& problem) {
  const SafePoint* p = nullptr;
  for (const auto& q : ss.points()) {
    if ((q.state - x).lpNorm<Eigen::Infinity>() <= 1e-9 && (!p || q.cost_to_go < p->cost_to_go)) p = &q;
  }
  if (!p) return std::nullopt;
  std::vector<Vector> inputs;
  for (Index k = 0; k < problem.horizon(); ++k) {
    inputs.push_back(p->input);
    if (const SafePoint* s = ss.successor(*p)) p = s;
  }
  const auto plan = problem.simulate(x, inputs);
  MpcSolution sol;
  sol.states = plan.states;
  sol.inputs = plan.inputs;
  sol.objective = plan.stage_cost + p->cost_to_go;
  sol.terminal_state = p->state;
  sol.terminal_iteration = p->iteration;
  sol.terminal_time = p->time;
  sol.fallback = true;
  return sol;
}

// Previous plan shifted by one step, continued inside the safe set.
std::optional<MpcSolution> shifted_plan(const MpcSolution& prev, const SampledSafeSet& ss,
                                        const CondensedProblem& problem) {
  const SafePoint* p = find_point(ss, prev.terminal_iteration, prev.terminal_time);
  if (!p || prev.states.size() < 2) return std::nullopt;
  std::vector<Vector> inputs(prev.inputs.begin() + 1, prev.inputs.end());
  inputs.push_back(p->input);
  const SafePoint* next = ss.successor(*p);
  if (!next) next = p;
  const auto plan = problem.simulate(prev.states[1], inputs);
  MpcSolution sol;
  sol.states = plan.states;
  sol.inputs = plan.inputs;
  sol.objective = plan.stage_cost + next->cost_to_go;
  sol.terminal_state = next->state;
  sol.terminal_iteration = next->iteration;
  sol.terminal_time = next->time;
  sol.fallback = true;
  return sol;
}

// Current state followed by the cheapest stored trajectory, padded to K + 1.
std::vector<Vector> initial_reference(const Vector& x, const SampledSafeSet& ss, Index K) {
  std::vector<const SafePoint*> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const Index j : ss.trajectory_indices()) {
    auto traj = ss.trajectory(j);
    if (!traj.empty() && traj.front()->cost_to_go < best_cost) {
      best_cost = traj.front()->cost_to_go;
      best = std::move(traj);
    }
  }
  std::vector<Vector> ref{x};
  for (const SafePoint* p : best) {
    if (static_cast<Index>(ref.size()) > K) break;
    if (ref.size() == 1 && (p->state - x).lpNorm<Eigen::Infinity>() <= 1e-9) continue;
    ref.push_back(p->state);
  }
  while (static_cast<Index>(ref.size()) <= K) ref.push_back(ref.back());
  return ref;
}

std::string dump_state(std::size_t step, const Vector& x, const std::optional<MpcSolution>& prev) {
  std::ostringstream os;
  const Eigen::IOFormat fmt(Eigen::FullPrecision, Eigen::DontAlignCols, ", ", ", ", "", "", "[", "]");
  os << "rollout step " << step << ": x = " << x.format(fmt);
  if (prev) {
    os << "; previous plan terminal (" << prev->terminal_iteration << ", " << prev->terminal_time << ") states:";
    for (const auto& s : prev->states) os << ' ' << s.format(fmt);
  }
  return os.str();
}

}  // namespace

std::optional<MpcSolution> solve_step(const Vector& x, const SampledSafeSet& ss, const CostMap& qmap,
                                      const SafetySetSpec& spec, const CondensedProblem& problem, const MpcConfig& cfg,
                                      const std::vector<Vector>& reference, SearchStats& stats) {
  require(static_cast<Index>(reference.size()) == problem.horizon() + 1, "mpc step: reference must have K + 1 states");
  const auto start = std::chrono::steady_clock::now();
  SearchStats own;
  auto sol = spec.variant() == Variant::inn_wass ? solve_inner(x, ss, qmap, spec, problem, cfg, reference, own)
                                                 : solve_wasserstein(x, ss, qmap, spec, problem, cfg, reference, own);
  stats.work += own.work;
  stats.subproblems += own.subproblems;
  if (sol) {
    sol->work = own.work;
    sol->subproblems = own.subproblems;
    sol->solve_time = elapsed_since(start);
  }
  return sol;
}

RolloutResult safe_mpc_rollout(const Vector& start, const SampledSafeSet& ss, const SafetySetSpec& spec,
                               const MpcConfig& cfg, const Dynamics& dynamics) {
  cfg.validate(dynamics);
  require(start.size() == dynamics.state_dim(), "rollout: start dimension mismatch");
  require(!ss.empty(), "rollout: the safe set is empty");
  const CondensedProblem problem(dynamics, cfg, cfg.horizon);
  const CostMap qmap(ss);

  RolloutResult out;
  out.states.push_back(start);
  if ((start - cfg.target()).norm() <= cfg.terminal_tol) return out;

  std::optional<MpcSolution> prev;
  for (int step = 0; step < cfg.step_cap; ++step) {
    const Vector x = out.states.back();
    const std::vector<Vector> reference = prev ? shifted_plan(*prev, ss, problem).value_or(*prev).states
                                               : initial_reference(x, ss, cfg.horizon);
    const auto t0 = std::chrono::steady_clock::now();
    SearchStats stats;
    std::optional<MpcSolution> sol = solve_step(x, ss, qmap, spec, problem, cfg, reference, stats);
    const double wall = elapsed_since(t0);

    if (!sol || !spec.contains(sol->states[1])) {
      sol = prev ? shifted_plan(*prev, ss, problem) : stored_plan(x, ss, problem);
      if (!sol || !spec.contains(sol->states[1]))
        throw InfeasibleError("no safe action (recursive feasibility violated) at " +
                              dump_state(static_cast<std::size_t>(step), x, prev));
      ++out.fallback_steps;
    }
    log_debug("step " + std::to_string(step) + ": objective " + std::to_string(sol->objective) + ", subproblems " +
              std::to_string(stats.subproblems) + (sol->fallback ? ", fallback" : "") + ", " + std::to_string(wall) + " s");
    out.inputs.push_back(sol->inputs.front());
    out.states.push_back(dynamics.step(x, sol->inputs.front()));
    out.step_times.push_back(wall);
    out.step_work.push_back(stats.work);
    prev = std::move(sol);
    if ((out.states.back() - cfg.target()).norm() <= cfg.terminal_tol) return out;
  }
  throw NonConvergenceError("rollout did not reach the target within " + std::to_string(cfg.step_cap) + " steps");
}

}  // namespace drmpc
