#include "drmpc/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

namespace drmpc {

namespace {

using conic::LinearExpr;

constexpr double kWeightTol = 1e-12;

bool usable(const conic::ConicSolution& sol, double tol) {
  if (sol.optimal()) return true;
  if (sol.status != conic::SolveStatus::stalled && sol.status != conic::SolveStatus::max_iter) return false;
  const auto& r = sol.residuals;
  return r.primal <= 1e3 * tol && r.dual <= 1e3 * tol && r.gap <= 1e3 * tol;
}

[[noreturn]] void fail(const std::string& what, const conic::ConicProgram& prog, const conic::ConicSolution& sol) {
  std::ostringstream os;
  os << what << ": conic solve returned " << conic::to_string(sol.status) << " after " << sol.iterations
     << " iterations (residuals " << sol.residuals.primal << ", " << sol.residuals.dual << ", " << sol.residuals.gap
     << "; n=" << prog.num_variables() << " p=" << prog.num_equalities() << " m=" << prog.num_cone_rows() << ")";
  if (prog.num_cone_rows() + prog.num_variables() <= 60) {
    os << "\n";
    conic::write_triplets(os, prog);
  }
  throw NumericalError(os.str());
}

void check_beta(double beta) { require(beta > 0.0 && beta <= 1.0, "risk: beta must lie in (0, 1]"); }

std::vector<double> g_values(const std::vector<Vector>& atoms, const Vector& x, const ObstacleModel& obs) {
  std::vector<double> g;
  g.reserve(atoms.size());
  for (const auto& w : atoms) g.push_back(constraint_g(x, w, obs));
  return g;
}

void check_problem(const AmbiguitySet& amb, double beta, const ObstacleModel& obs, const Polytope& support) {
  amb.validate();
  check_beta(beta);
  require(support.dim() == obs.position_dim(), "risk: support dimension must match obstacle dimension");
  require(amb.center.dim() == support.dim(), "risk: atom dimension must match support dimension");
}

// Index layout of the worst-case CVaR program.
struct Layout {
  Index lambda = 0;
  Index eta = 0;
  Index s = 0;
  std::vector<Index> nu;     // start of each nu block
  std::vector<Index> gamma;  // start of each gamma block
};

conic::ConicProgram build_worst_case(const AmbiguitySet& amb, double beta, const Vector& x, const ObstacleModel& obs,
                                     const Polytope& support, DualCoupling coupling, Layout& lay) {
  const Matrix& A = obs.body.A();
  const Vector& b = obs.body.b();
  const Matrix& H = support.A();
  const Vector& h = support.b();
  const Index M = A.rows();
  const Index R = H.rows();
  const Index np = A.cols();
  const Index L = amb.center.size();
  const Vector r = A * (obs.C * x) - b;

  conic::ProgramBuilder pb;
  lay.lambda = pb.add_variable(conic::Domain::nonnegative);
  lay.eta = pb.add_variable();
  lay.s = pb.add_variables(L, conic::Domain::nonnegative);
  const Index num_nu = coupling == DualCoupling::shared ? 1 : L;
  lay.nu.clear();
  lay.gamma.clear();
  for (Index k = 0; k < num_nu; ++k) lay.nu.push_back(pb.add_variables(M, conic::Domain::nonnegative));
  for (Index l = 0; l < L; ++l) lay.gamma.push_back(pb.add_variables(R, conic::Domain::nonnegative));

  // ||A' nu|| <= 1 for every distinct nu.
  for (Index k = 0; k < num_nu; ++k) {
    std::vector<LinearExpr> cone{LinearExpr(1.0)};
    for (Index i = 0; i < np; ++i) {
      LinearExpr e;
      for (Index m = 0; m < M; ++m) e.add(lay.nu[k] + m, A(m, i));
      cone.push_back(std::move(e));
    }
    pb.add_second_order_cone(cone);
  }

  for (Index l = 0; l < L; ++l) {
    const Vector& w = amb.center.atoms()[static_cast<std::size_t>(l)];
    const double p = amb.center.weights()[static_cast<std::size_t>(l)];
    const Index nu = lay.nu[static_cast<std::size_t>(coupling == DualCoupling::shared ? 0 : l)];
    const Index gam = lay.gamma[static_cast<std::size_t>(l)];
    const Vector r_shift = r - A * w;
    const Vector h_shift = h - H * w;

    // s_l - p (eta + d - nu'(r - A w) + gamma'(h - H w)) >= 0
    LinearExpr hinge(-p * obs.clearance);
    hinge.add(lay.s + l, 1.0);
    hinge.add(lay.eta, -p);
    for (Index m = 0; m < M; ++m) hinge.add(nu + m, p * r_shift(m));
    for (Index k = 0; k < R; ++k) hinge.add(gam + k, -p * h_shift(k));
    pb.add_nonnegative(hinge);

    // ||A' nu - H' gamma_l|| <= lambda
    std::vector<LinearExpr> cone{LinearExpr::variable(lay.lambda)};
    for (Index i = 0; i < np; ++i) {
      LinearExpr e;
      for (Index m = 0; m < M; ++m) e.add(nu + m, A(m, i));
      for (Index k = 0; k < R; ++k) e.add(gam + k, -H(k, i));
      cone.push_back(std::move(e));
    }
    pb.add_second_order_cone(cone);
  }

  LinearExpr obj;
  obj.add(lay.lambda, amb.radius);
  obj.add(lay.eta, -beta);
  for (Index l = 0; l < L; ++l) obj.add(lay.s + l, 1.0);
  pb.set_objective(obj);
  return pb.build();
}

}  // namespace

DiscreteDistribution::DiscreteDistribution(std::vector<Vector> atoms, std::vector<double> weights)
    : atoms_(std::move(atoms)), weights_(std::move(weights)) {
  require(!atoms_.empty(), "distribution: no atoms");
  require(atoms_.size() == weights_.size(), "distribution: atom and weight counts differ");
  const Index d = atoms_.front().size();
  double total = 0.0;
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    require(atoms_[i].size() == d, "distribution: atoms differ in dimension");
    require(atoms_[i].allFinite(), "distribution: non-finite atom");
    require(std::isfinite(weights_[i]) && weights_[i] > 0.0, "distribution: weights must be positive");
    total += weights_[i];
  }
  require(std::abs(total - 1.0) <= kWeightTol * static_cast<double>(atoms_.size()),
          "distribution: weights must sum to 1");
}

DiscreteDistribution DiscreteDistribution::empirical(std::vector<Vector> samples) {
  require(!samples.empty(), "distribution: no samples");
  const double p = 1.0 / static_cast<double>(samples.size());
  std::vector<double> weights(samples.size(), p);
  return DiscreteDistribution(std::move(samples), std::move(weights));
}

void DiscreteDistribution::check_support(const Polytope& support, double tol) const {
  for (std::size_t i = 0; i < atoms_.size(); ++i)
    require(support.contains(atoms_[i], tol), "distribution: atom " + std::to_string(i) + " lies outside the support");
}

void AmbiguitySet::validate() const {
  require(center.size() > 0, "ambiguity set: empty center distribution");
  require(std::isfinite(radius) && radius >= 0.0, "ambiguity set: radius must be finite and >= 0");
}

void RiskParams::validate() const { require(beta > 0.0 && beta < 1.0, "risk: beta must lie in (0, 1)"); }

double cvar_discrete(std::span<const double> values, std::span<const double> weights, double beta) {
  require(!values.empty(), "cvar: empty value list");
  require(values.size() == weights.size(), "cvar: value and weight counts differ");
  check_beta(beta);
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(std::isfinite(values[i]), "cvar: non-finite value");
    require(std::isfinite(weights[i]) && weights[i] >= 0.0, "cvar: weights must be nonnegative");
    total += weights[i];
  }
  require(std::abs(total - 1.0) <= 1e-9, "cvar: weights must sum to 1");

  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  double mass = 0.0;
  double acc = 0.0;
  for (const std::size_t i : order) {
    const double take = std::min(weights[i], beta - mass);
    if (take <= 0.0) break;
    acc += take * values[i];
    mass += take;
  }
  // Rounding in the weights can leave the tail a hair short of beta.
  if (mass < beta) acc += (beta - mass) * values[order.back()];
  return acc / beta;
}

double wasserstein_discrete(const DiscreteDistribution& mu, const DiscreteDistribution& nu) {
  require(mu.size() > 0 && nu.size() > 0, "wasserstein: empty distribution");
  require(mu.dim() == nu.dim(), "wasserstein: dimension mismatch");
  const Index n = mu.size();
  const Index m = nu.size();
  if (n == 1 || m == 1) {
    // A single atom admits exactly one coupling.
    double v = 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j)
        v += mu.weights()[static_cast<std::size_t>(i)] * nu.weights()[static_cast<std::size_t>(j)] *
             (mu.atoms()[static_cast<std::size_t>(i)] - nu.atoms()[static_cast<std::size_t>(j)]).norm();
    return v;
  }
  conic::ProgramBuilder pb;
  const Index pi = pb.add_variables(n * m, conic::Domain::nonnegative);
  LinearExpr obj;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j)
      obj.add(pi + i * m + j,
              (mu.atoms()[static_cast<std::size_t>(i)] - nu.atoms()[static_cast<std::size_t>(j)]).norm());
  pb.set_objective(obj);
  for (Index i = 0; i < n; ++i) {
    LinearExpr row(-mu.weights()[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < m; ++j) row.add(pi + i * m + j, 1.0);
    pb.add_equality(row);
  }
  // The last column marginal is implied by the others.
  for (Index j = 0; j + 1 < m; ++j) {
    LinearExpr col(-nu.weights()[static_cast<std::size_t>(j)]);
    for (Index i = 0; i < n; ++i) col.add(pi + i * m + j, 1.0);
    pb.add_equality(col);
  }
  const auto prog = pb.build();
  const auto sol = conic::solve(prog);
  if (!usable(sol, 1e-8)) fail("wasserstein", prog, sol);
  return std::max(0.0, sol.objective);
}

WorstCaseCvar worst_case_cvar_ub(const AmbiguitySet& amb, double beta, const Vector& x, const ObstacleModel& obs,
                                 const Polytope& support, DualCoupling coupling) {
  check_problem(amb, beta, obs, support);
  require(x.size() == obs.state_dim(), "risk: state has wrong dimension");
  Layout lay;
  const auto prog = build_worst_case(amb, beta, x, obs, support, coupling, lay);
  WorstCaseCvar out;
  out.solution = conic::solve(prog);
  if (!usable(out.solution, 1e-8)) fail("worst-case CVaR bound", prog, out.solution);
  const Vector& z = out.solution.x;
  out.value = out.solution.objective / beta;
  out.lambda = z(lay.lambda);
  out.eta = z(lay.eta);
  const Index L = amb.center.size();
  out.s.resize(static_cast<std::size_t>(L));
  for (Index l = 0; l < L; ++l) out.s[static_cast<std::size_t>(l)] = z(lay.s + l);
  for (const Index k : lay.nu) out.nu.push_back(z.segment(k, obs.body.num_facets()).cwiseMax(0.0));
  for (const Index k : lay.gamma) out.gamma.push_back(z.segment(k, support.num_facets()).cwiseMax(0.0));
  return out;
}

double center_cvar(const AmbiguitySet& amb, double beta, const Vector& x, const ObstacleModel& obs) {
  amb.validate();
  const auto g = g_values(amb.center.atoms(), x, obs);
  return cvar_discrete(g, amb.center.weights(), beta);
}

double worst_case_cvar_lb_oracle(const AmbiguitySet& amb, double beta, const Vector& x, const ObstacleModel& obs,
                                 const Polytope& support, double grid_resolution) {
  check_problem(amb, beta, obs, support);
  require(grid_resolution > 0.0, "lb oracle: grid resolution must be positive");
  const double base = center_cvar(amb, beta, x, obs);
  if (amb.radius == 0.0) return base;

  // Candidate destinations: a grid over the support's bounding box clipped to
  // the support, its vertices, and the atoms themselves.
  const Index d = support.dim();
  Vector lo = support.vertices().front();
  Vector hi = lo;
  for (const auto& v : support.vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  std::vector<Vector> points = support.vertices();
  std::vector<Index> counts(static_cast<std::size_t>(d));
  double total = 1.0;
  for (Index i = 0; i < d; ++i) {
    counts[static_cast<std::size_t>(i)] = static_cast<Index>(std::floor((hi(i) - lo(i)) / grid_resolution)) + 1;
    total *= static_cast<double>(counts[static_cast<std::size_t>(i)]);
  }
  require(total <= 2e5, "lb oracle: grid too fine");
  std::vector<Index> idx(static_cast<std::size_t>(d), 0);
  for (Index k = 0; k < static_cast<Index>(total); ++k) {
    Vector q(d);
    for (Index i = 0; i < d; ++i) q(i) = lo(i) + grid_resolution * static_cast<double>(idx[static_cast<std::size_t>(i)]);
    if (support.contains(q, 1e-12)) points.push_back(q);
    for (Index i = 0; i < d; ++i) {
      if (++idx[static_cast<std::size_t>(i)] < counts[static_cast<std::size_t>(i)]) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  for (const auto& w : amb.center.atoms()) points.push_back(w);
  const auto gq = g_values(points, x, obs);

  // Choose beta units of mass m_lq moved from atom l to point q, maximizing
  // their mean g under the transport budget.
  const Index L = amb.center.size();
  const Index Q = static_cast<Index>(points.size());
  conic::ProgramBuilder pb;
  const Index mvar = pb.add_variables(L * Q, conic::Domain::nonnegative);
  LinearExpr obj;
  LinearExpr total_mass(-beta);
  LinearExpr budget(amb.radius);
  std::vector<double> cost(static_cast<std::size_t>(L * Q));
  for (Index l = 0; l < L; ++l) {
    LinearExpr cap(amb.center.weights()[static_cast<std::size_t>(l)]);
    for (Index q = 0; q < Q; ++q) {
      const Index v = mvar + l * Q + q;
      const double c = (points[static_cast<std::size_t>(q)] - amb.center.atoms()[static_cast<std::size_t>(l)]).norm();
      cost[static_cast<std::size_t>(l * Q + q)] = c;
      obj.add(v, -gq[static_cast<std::size_t>(q)]);
      cap.add(v, -1.0);
      total_mass.add(v, 1.0);
      if (c > 0.0) budget.add(v, -c);
    }
    pb.add_nonnegative(cap);
  }
  pb.add_equality(total_mass);
  pb.add_nonnegative(budget);
  pb.set_objective(obj);
  const auto prog = pb.build();
  const auto sol = conic::solve(prog);
  if (!usable(sol, 1e-8)) return base;

  // Assemble the moved distribution, repairing solver round-off so that it is
  // exactly inside the ball.
  std::vector<double> moved(static_cast<std::size_t>(L * Q));
  double spent = 0.0;
  for (Index k = 0; k < L * Q; ++k) {
    moved[static_cast<std::size_t>(k)] = std::max(0.0, sol.x(mvar + k));
    spent += moved[static_cast<std::size_t>(k)] * cost[static_cast<std::size_t>(k)];
  }
  const double shrink = spent > amb.radius ? amb.radius / spent : 1.0;
  std::vector<double> values;
  std::vector<double> weights;
  for (Index l = 0; l < L; ++l) {
    const double p = amb.center.weights()[static_cast<std::size_t>(l)];
    double out_mass = 0.0;
    for (Index q = 0; q < Q; ++q) out_mass += moved[static_cast<std::size_t>(l * Q + q)] * shrink;
    const double cap = out_mass > p ? p / out_mass : 1.0;
    double left = p;
    for (Index q = 0; q < Q; ++q) {
      const double mass = moved[static_cast<std::size_t>(l * Q + q)] * shrink * cap;
      if (mass <= 0.0) continue;
      values.push_back(gq[static_cast<std::size_t>(q)]);
      weights.push_back(mass);
      left -= mass;
    }
    if (left > 0.0) {
      values.push_back(gq[static_cast<std::size_t>(Q - L + l)]);
      weights.push_back(left);
    }
  }
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (auto& w : weights) w /= sum;
  return std::max(base, cvar_discrete(values, weights, beta));
}

double robust_margin(const Vector& x, const ObstacleModel& obs, const Polytope& support) {
  require(x.size() == obs.state_dim(), "risk: state has wrong dimension");
  const Matrix& A = obs.body.A();
  const Vector p = obs.C * x;
  double best = -std::numeric_limits<double>::infinity();
  for (Index m = 0; m < A.rows(); ++m) {
    const Vector am = A.row(m).transpose();
    best = std::max(best, am.dot(p) - obs.body.b()(m) - support.support(am) - obs.clearance);
  }
  return best;
}

bool member_x_wass(const Vector& x, const AmbiguitySet& amb, double beta, const ObstacleModel& obs,
                   const Polytope& support, double tol, DualCoupling coupling) {
  check_problem(amb, beta, obs, support);
  // A robustly separating facet certifies the bound directly (nu = e_m,
  // gamma = support dual of A_m, lambda = 0 gives value -margin).
  if (robust_margin(x, obs, support) >= 0.0) return true;
  // The empirical CVaR of g is a lower bound of every form of the bound.
  if (center_cvar(amb, beta, x, obs) > tol) return false;
  return worst_case_cvar_ub(amb, beta, x, obs, support, coupling).value <= tol;
}

Vector inner_offsets(const AmbiguitySet& amb, double beta, const ObstacleModel& obs, const Polytope& support,
                     double* work) {
  check_problem(amb, beta, obs, support);
  const Matrix& A = obs.body.A();
  const Matrix& H = support.A();
  const Vector& h = support.b();
  const Index R = H.rows();
  const Index np = A.cols();
  const Index L = amb.center.size();
  Vector offsets(A.rows());
  for (Index m = 0; m < A.rows(); ++m) {
    conic::ProgramBuilder pb;
    const Index lambda = pb.add_variable(conic::Domain::nonnegative);
    const Index eta = pb.add_variable();
    const Index s = pb.add_variables(L, conic::Domain::nonnegative);
    for (Index l = 0; l < L; ++l) {
      const Vector& w = amb.center.atoms()[static_cast<std::size_t>(l)];
      const double p = amb.center.weights()[static_cast<std::size_t>(l)];
      const Index xi = pb.add_variables(R, conic::Domain::nonnegative);
      const Vector h_shift = h - H * w;
      // s_l - p (eta + A_m w + xi'(h - H w)) >= 0
      LinearExpr hinge(-p * A.row(m).dot(w));
      hinge.add(s + l, 1.0);
      hinge.add(eta, -p);
      for (Index k = 0; k < R; ++k) hinge.add(xi + k, -p * h_shift(k));
      pb.add_nonnegative(hinge);
      // ||A_m - H' xi|| <= lambda
      std::vector<LinearExpr> cone{LinearExpr::variable(lambda)};
      for (Index i = 0; i < np; ++i) {
        LinearExpr e(A(m, i));
        for (Index k = 0; k < R; ++k) e.add(xi + k, -H(k, i));
        cone.push_back(std::move(e));
      }
      pb.add_second_order_cone(cone);
    }
    LinearExpr obj;
    obj.add(lambda, amb.radius);
    obj.add(eta, -beta);
    for (Index l = 0; l < L; ++l) obj.add(s + l, 1.0);
    pb.set_objective(obj);
    const auto prog = pb.build();
    const auto sol = conic::solve(prog);
    if (work) *work += sol.work;
    if (!usable(sol, 1e-8)) fail("inner offset", prog, sol);
    offsets(m) = sol.objective / beta;
  }
  return offsets;
}

Vector inner_margins(const Vector& x, const ObstacleModel& obs, const Vector& offsets) {
  require(x.size() == obs.state_dim(), "risk: state has wrong dimension");
  require(offsets.size() == obs.body.num_facets(), "risk: one offset per facet required");
  return obs.body.A() * (obs.C * x) - obs.body.b() - offsets - Vector::Constant(offsets.size(), obs.clearance);
}

bool member_x_inn(const Vector& x, const ObstacleModel& obs, const Vector& offsets, double tol) {
  return inner_margins(x, obs, offsets).maxCoeff() >= -tol;
}

Halfspace frozen_halfspace(const WorstCaseCvar& ub, const AmbiguitySet& amb, double beta, const ObstacleModel& obs,
                           const Polytope& support) {
  require(ub.nu.size() == 1, "frozen half-space: a shared-coupling solution is required");
  require(static_cast<Index>(ub.gamma.size()) == amb.center.size(), "frozen half-space: gamma count mismatch");
  const Matrix& A = obs.body.A();
  const Matrix& H = support.A();
  const Vector& h = support.b();
  // Round-off can leave ||A' nu|| a hair above one; rescaling (nu, gamma)
  // restores dual feasibility.
  const double scale = std::max(1.0, (A.transpose() * ub.nu.front()).norm());
  const Vector nu = ub.nu.front() / scale;
  std::vector<Vector> gamma;
  for (const auto& g : ub.gamma) gamma.push_back(g / scale);
  std::vector<double> e;
  e.reserve(static_cast<std::size_t>(amb.center.size()));
  for (Index l = 0; l < amb.center.size(); ++l) {
    const Vector& w = amb.center.atoms()[static_cast<std::size_t>(l)];
    const Vector& gam = gamma[static_cast<std::size_t>(l)];
    e.push_back(obs.clearance + nu.dot(obs.body.b() + A * w) + gam.dot(h - H * w));
  }
  // Re-derive the smallest lambda compatible with the frozen nu and gamma.
  double lambda = 0.0;
  const Vector At_nu = A.transpose() * nu;
  for (const auto& gam : gamma) lambda = std::max(lambda, (At_nu - H.transpose() * gam).norm());
  Halfspace out;
  out.normal = obs.C.transpose() * At_nu;
  out.offset = lambda * amb.radius / beta + cvar_discrete(e, amb.center.weights(), beta);
  return out;
}

}  // namespace drmpc
