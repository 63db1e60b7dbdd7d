#include "drmpc/experiment.hpp"
#include "drmpc/mpc.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

namespace drmpc {
namespace {

using testing::vec;

// Equality-constrained QP oracle built only from simulate(): the stage cost is
// an exact quadratic in the stacked inputs, so finite differences recover it.
struct QuadraticModel {
  Matrix P;
  Vector p;
  double c0;
  std::vector<Matrix> G;  // x_k = s_k + G_k u
  std::vector<Vector> s;
};

QuadraticModel model_from_simulation(const CondensedProblem& prob, const Vector& x0, Index nu) {
  const Index K = prob.horizon();
  const Index n = K * nu;
  auto inputs = [&](const Vector& u) {
    std::vector<Vector> out;
    for (Index k = 0; k < K; ++k) out.push_back(u.segment(k * nu, nu));
    return out;
  };
  auto cost = [&](const Vector& u) { return prob.simulate(x0, inputs(u)).stage_cost; };
  QuadraticModel m;
  const Vector zero = Vector::Zero(n);
  m.c0 = cost(zero);
  m.P = Matrix::Zero(n, n);
  m.p = Vector::Zero(n);
  std::vector<double> plus(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Vector e = Vector::Unit(n, i);
    plus[static_cast<std::size_t>(i)] = cost(e);
    m.p(i) = (cost(e) - cost(-e)) / 2.0;
    m.P(i, i) = (cost(e) + cost(-e)) / 2.0 - m.c0;
  }
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const double v = (cost(Vector::Unit(n, i) + Vector::Unit(n, j)) - plus[static_cast<std::size_t>(i)] -
                        plus[static_cast<std::size_t>(j)] + m.c0) /
                       2.0;
      m.P(i, j) = m.P(j, i) = v;
    }
  const auto base = prob.simulate(x0, inputs(zero)).states;
  m.s = base;
  m.G.assign(base.size(), Matrix::Zero(x0.size(), n));
  for (Index i = 0; i < n; ++i) {
    const auto states = prob.simulate(x0, inputs(Vector::Unit(n, i))).states;
    for (std::size_t k = 0; k < states.size(); ++k) m.G[k].col(i) = states[k] - base[k];
  }
  return m;
}

// min u'Pu + p'u s.t. E u = e.
Vector solve_equality_qp(const QuadraticModel& m, const Matrix& E, const Vector& e) {
  const Index n = m.P.rows();
  const Index r = E.rows();
  Matrix kkt = Matrix::Zero(n + r, n + r);
  kkt.topLeftCorner(n, n) = 2.0 * m.P;
  kkt.topRightCorner(n, r) = E.transpose();
  kkt.bottomLeftCorner(r, n) = E;
  Vector rhs(n + r);
  rhs << -m.p, e;
  return Eigen::FullPivLU<Matrix>(kkt).solve(rhs).head(n);
}

class MpcFixture : public ::testing::Test {
 protected:
  ExperimentSetup setup = testing::reference_setup();
  const Dynamics& dyn = setup.dynamics;
  MpcConfig cfg = setup.mpc;
  const Index nu = 2;
};

TEST_F(MpcFixture, CondensedQpMatchesKktOracle) {
  const Index K = 6;
  const CondensedProblem prob(dyn, cfg, K);
  const Vector target = cfg.target();
  const Vector x0 = target + vec({-0.3, -0.2, 0.0, 0.0});
  const QuadraticModel m = model_from_simulation(prob, x0, nu);

  // Terminal equality only.
  const Vector u_free = solve_equality_qp(m, m.G.back(), target - m.s.back());
  const double free_value = u_free.dot(m.P * u_free) + m.p.dot(u_free) + m.c0;
  ASSERT_LE(u_free.cwiseAbs().maxCoeff(), 0.5);

  std::vector<Halfspace> none(static_cast<std::size_t>(K - 1));
  auto prog = prob.prepare(x0, none);
  double work = 0.0;
  const auto plan = prob.solve(prog, x0, target, none, work);
  ASSERT_TRUE(plan.has_value());
  EXPECT_NEAR(plan->stage_cost, free_value, 1e-6 * (1.0 + free_value));
  EXPECT_NEAR(prob.relaxed_cost(x0, target), free_value, 1e-9 * (1.0 + free_value));

  // An active half-space on x_2: the optimum lies on its boundary.
  const Index k = 2;
  const Vector xk_free = m.s[k] + m.G[k] * u_free;
  std::vector<Halfspace> cut(static_cast<std::size_t>(K - 1));
  cut[k - 1] = Halfspace{vec({1.0, 0.0, 0.0, 0.0}), xk_free(0) + 0.05};
  Matrix E(5, K * nu);
  E << m.G.back(), cut[k - 1].normal.transpose() * m.G[k];
  Vector e(5);
  e << target - m.s.back(), cut[k - 1].offset - cut[k - 1].normal.dot(m.s[k]);
  const Vector u_cut = solve_equality_qp(m, E, e);
  ASSERT_LE(u_cut.cwiseAbs().maxCoeff(), 0.5);
  const double cut_value = u_cut.dot(m.P * u_cut) + m.p.dot(u_cut) + m.c0;
  EXPECT_GT(cut_value, free_value);

  auto prog_cut = prob.prepare(x0, cut);
  const auto plan_cut = prob.solve(prog_cut, x0, target, cut, work);
  ASSERT_TRUE(plan_cut.has_value());
  EXPECT_NEAR(plan_cut->stage_cost, cut_value, 1e-6 * (1.0 + cut_value));
  EXPECT_GE(cut[k - 1].slack(plan_cut->states[k]), -1e-7);
}

TEST_F(MpcFixture, UnreachableTerminalIsRejected) {
  const CondensedProblem prob(dyn, cfg, 3);
  std::vector<Halfspace> none(2);
  auto prog = prob.prepare(cfg.start, none);
  double work = 0.0;
  // Three steps with |u| <= 0.5 cannot cover 5 units.
  EXPECT_FALSE(prob.solve(prog, cfg.start, cfg.target(), none, work).has_value());
}

class SafeSetFixture : public MpcFixture {
 protected:
  Trajectory robust = initial_robust_trajectory(cfg, dyn, setup.obstacle, setup.uncertainty.support);
  SampledSafeSet ss = SampledSafeSet{}.append_trajectory(0, robust.states, robust.inputs, robust.costs, 0);
};

TEST_F(SafeSetFixture, CandidatePruningMatchesExhaustiveSearch) {
  const CostMap qmap(ss);
  ASSERT_LE(qmap.size(), 40u);
  const CondensedProblem prob(dyn, cfg, cfg.horizon);
  CompiledConstraints none;
  none.constraints.resize(static_cast<std::size_t>(cfg.horizon - 1));
  for (int rep = 0; rep < 4; ++rep) {
    const Vector x = robust.states[static_cast<std::size_t>(rep * 3)];
    SearchStats fast_stats, full_stats;
    const auto fast = solve_finite_horizon(x, ss, qmap, none, prob, cfg, kNoIncumbent, false, &fast_stats);
    const auto full = solve_finite_horizon(x, ss, qmap, none, prob, cfg, kNoIncumbent, true, &full_stats);
    ASSERT_TRUE(fast && full);
    EXPECT_NEAR(fast->objective, full->objective, 1e-9 * (1.0 + full->objective));
    EXPECT_LE(fast_stats.subproblems, full_stats.subproblems);

    // Dynamics consistency of the returned plan.
    for (std::size_t t = 0; t + 1 < fast->states.size(); ++t)
      EXPECT_LE((fast->states[t + 1] - dyn.step(fast->states[t], fast->inputs[t])).norm(), 1e-7);
    EXPECT_LE((fast->states.back() - fast->terminal_state).norm(), 1e-7);
  }
}

TEST_F(SafeSetFixture, NearDuplicateCandidatesAreMerged) {
  // A second copy of the stored trajectory shifted below solver precision.
  std::vector<Vector> shifted = robust.states;
  for (std::size_t t = 1; t + 1 < shifted.size(); ++t) shifted[t].array() += 5e-8;
  const SampledSafeSet doubled = ss.append_trajectory(1, shifted, robust.inputs, robust.costs, 1);
  const CostMap single_map(ss), doubled_map(doubled);
  ASSERT_GT(doubled_map.size(), single_map.size());
  const CondensedProblem prob(dyn, cfg, cfg.horizon);
  CompiledConstraints none;
  none.constraints.resize(static_cast<std::size_t>(cfg.horizon - 1));
  SearchStats one, two, full;
  const auto a = solve_finite_horizon(cfg.start, ss, single_map, none, prob, cfg, kNoIncumbent, false, &one);
  const auto b = solve_finite_horizon(cfg.start, doubled, doubled_map, none, prob, cfg, kNoIncumbent, false, &two);
  const auto c = solve_finite_horizon(cfg.start, doubled, doubled_map, none, prob, cfg, kNoIncumbent, true, &full);
  ASSERT_TRUE(a && b && c);
  EXPECT_EQ(two.subproblems, one.subproblems);
  EXPECT_GT(full.subproblems, two.subproblems);
  EXPECT_NEAR(b->objective, c->objective, 1e-5);
}

TEST_F(SafeSetFixture, AtTargetObjectiveIsZero) {
  const CostMap qmap(ss);
  const CondensedProblem prob(dyn, cfg, cfg.horizon);
  CompiledConstraints none;
  none.constraints.resize(static_cast<std::size_t>(cfg.horizon - 1));
  const auto sol = solve_finite_horizon(cfg.target(), ss, qmap, none, prob, cfg);
  ASSERT_TRUE(sol.has_value());
  EXPECT_NEAR(sol->objective, 0.0, 1e-7);
}

TEST_F(SafeSetFixture, RolloutFromTargetIsTrivial) {
  const auto spec = build_safety_set(Variant::inn_wass, setup, sample_displacements(setup.uncertainty, 15),
                                     setup.theta_at(0), 1);
  const auto r = safe_mpc_rollout(cfg.target(), ss, spec, cfg, dyn);
  ASSERT_EQ(r.states.size(), 1u);
  EXPECT_EQ(r.states[0], cfg.target());
  EXPECT_TRUE(r.inputs.empty());
}

TEST_F(SafeSetFixture, RobustTrajectoryIsStoredSafeSet) {
  EXPECT_EQ(robust.states.front(), cfg.start);
  EXPECT_LE((robust.states.back() - cfg.target()).norm(), cfg.terminal_tol);
  for (std::size_t t = 0; t + 1 < robust.states.size(); ++t)
    EXPECT_LE((robust.states[t + 1] - dyn.step(robust.states[t], robust.inputs[t])).norm(), 1e-9);
}

TEST(Variant, ParsesNames) {
  EXPECT_EQ(parse_variant("wass"), Variant::wass);
  EXPECT_EQ(parse_variant("cl-wass"), Variant::cl_wass);
  EXPECT_EQ(parse_variant("inn"), Variant::inn_wass);
  EXPECT_EQ(to_string(Variant::cl_wass), "cl-wass");
  EXPECT_THROW(parse_variant("all"), InputError);
  EXPECT_THROW(parse_variant("Wass"), InputError);
}

}  // namespace
}  // namespace drmpc
