// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "drmpc/clustering.hpp"
#include "drmpc/conic.hpp"
#include "drmpc/experiment.hpp"
#include "drmpc/log.hpp"
#include "drmpc/outputs.hpp"
#include "drmpc/risk.hpp"
#include "drmpc/run_config.hpp"
#include "drmpc/safeset.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace drmpc;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("AC%d %s  %s: %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (const double x : v) out(i++) = x;
  return out;
}

// Rockafellar-Uryasev over the atoms, independent of the library's CVaR.
double cvar_ru(const std::vector<double>& v, const std::vector<double>& p, double beta) {
  double best = std::numeric_limits<double>::infinity();
  for (const double t : v) {
    double e = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) e += p[i] * std::max(0.0, v[i] - t);
    best = std::min(best, t + e / beta);
  }
  return best;
}

// Position uniform over the state box, zero velocity. Half of the draws come
// from a window around the obstacle so the sets are exercised near their
// boundaries.
Vector random_state(std::mt19937_64& rng, const ExperimentSetup& s, int k) {
  Vector x = Vector::Zero(s.dynamics.state_dim());
  const bool near = k % 2 == 1;
  const Vector lo = near ? vec({0.6, -0.2}) : Vector(s.obstacle.C * s.mpc.state_lo);
  const Vector hi = near ? vec({3.4, 2.6}) : Vector(s.obstacle.C * s.mpc.state_hi);
  Vector p(2);
  for (Index i = 0; i < 2; ++i) p(i) = std::uniform_real_distribution<double>(lo(i), hi(i))(rng);
  x.head(2) = p;
  return x;
}

std::vector<Vector> draws(const ExperimentSetup& s, std::uint64_t seed, Index n) {
  UncertaintyModel m = s.uncertainty;
  m.seed = seed;
  return sample_displacements(m, n);
}

// ---------------------------------------------------------------------------

Outcome ac1(const ExperimentSetup& s) {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Vector x = random_state(rng, s, k);
    const auto w = draws(s, 1000 + static_cast<std::uint64_t>(k), 5);
    const AmbiguitySet amb{DiscreteDistribution::empirical(w), 0.0};
    std::vector<double> g;
    for (const auto& wl : w) g.push_back(constraint_g(x, wl, s.obstacle));
    const double oracle = cvar_ru(g, std::vector<double>(5, 0.2), s.beta);
    const double ub = worst_case_cvar_ub(amb, s.beta, x, s.obstacle, s.uncertainty.support).value;
    worst = std::max(worst, std::abs(ub - oracle));
  }
  return {worst <= 1e-6, "max |ub - empirical CVaR| = " + fmt("%.2e", worst) + " over 50 instances"};
}

Outcome ac2(const ExperimentSetup& s) {
  std::mt19937_64 rng(202);
  const std::array<double, 3> thetas{1e-3, 0.05, 0.2};
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 20; ++k) {
    const Vector x = random_state(rng, s, k);
    const AmbiguitySet amb{DiscreteDistribution::empirical(draws(s, 2000 + static_cast<std::uint64_t>(k), 5)),
                           thetas[static_cast<std::size_t>(k) % 3]};
    const double ub = worst_case_cvar_ub(amb, s.beta, x, s.obstacle, s.uncertainty.support).value;
    const double lb = worst_case_cvar_lb_oracle(amb, s.beta, x, s.obstacle, s.uncertainty.support, 0.05);
    worst_excess = std::max(worst_excess, lb - ub);
  }
  // One-dimensional displacement along the first axis.
  Matrix A(2, 1);
  A << 1, -1;
  Matrix C = Matrix::Zero(1, 4);
  C(0, 0) = 1.0;
  const ObstacleModel obs(Polytope(A, vec({2.5, -1.5})), C, 0.3);
  const Polytope W = Polytope::box(vec({-0.45}), vec({0.45}));
  std::mt19937_64 wrng(203);
  std::uniform_real_distribution<double> ud(-0.45, 0.45);
  double worst_gap = 0.0;
  for (const double theta : thetas)
    for (const double pos : {0.9, 1.1, 3.0}) {
      std::vector<Vector> w;
      for (int l = 0; l < 5; ++l) w.push_back(vec({ud(wrng)}));
      const AmbiguitySet amb{DiscreteDistribution::empirical(w), theta};
      const Vector x = vec({pos, 0.0, 0.0, 0.0});
      const double ub = worst_case_cvar_ub(amb, s.beta, x, obs, W).value;
      const double lb = worst_case_cvar_lb_oracle(amb, s.beta, x, obs, W, 0.002);
      worst_excess = std::max(worst_excess, lb - ub);
      worst_gap = std::max(worst_gap, ub - lb);
    }
  return {worst_excess <= 1e-6 && worst_gap <= 1e-2,
          "max (lb - ub) = " + fmt("%.2e", worst_excess) + ", max 1-D gap = " + fmt("%.2e", worst_gap)};
}

Outcome ac3(const ExperimentSetup& s) {
  std::mt19937_64 rng(303);
  const Polytope& W = s.uncertainty.support;
  const std::array<double, 3> thetas{1e-3, 0.05, 0.2};
  int inn_hits = 0, cl_hits = 0, viol_a = 0, viol_b = 0;
  double worst_ub = -std::numeric_limits<double>::infinity();
  for (int set = 0; set < 3; ++set) {
    const auto samples = draws(s, 3000 + static_cast<std::uint64_t>(set), 15);
    const AmbiguitySet amb{DiscreteDistribution::empirical(samples), thetas[static_cast<std::size_t>(set)]};
    const Vector off = inner_offsets(amb, s.beta, s.obstacle, W);
    const auto cd = cluster(samples, s.n_clusters, clustering_seed(0, set), W);
    const AmbiguitySet cl = inflated_ambiguity(cd, amb.radius);
    const int count = set == 2 ? 66 : 67;
    for (int k = 0; k < count; ++k) {
      const Vector x = random_state(rng, s, k);
      if (member_x_inn(x, s.obstacle, off)) {
        ++inn_hits;
        const double ub = worst_case_cvar_ub(amb, s.beta, x, s.obstacle, W).value;
        worst_ub = std::max(worst_ub, ub);
        if (ub > 1e-6) ++viol_a;
      }
      if (member_x_wass(x, cl, s.beta, s.obstacle, W)) {
        ++cl_hits;
        if (!member_x_wass(x, amb, s.beta, s.obstacle, W)) ++viol_b;
      }
    }
  }
  std::ostringstream os;
  os << "200 states; (a) " << viol_a << " violations among " << inn_hits << " in X_inn (max ub "
     << fmt("%.2e", worst_ub) << "); (b) " << viol_b << " violations among " << cl_hits << " in X_cl-Wass";
  return {viol_a == 0 && viol_b == 0 && inn_hits > 0 && cl_hits > 0, os.str()};
}

// ---------------------------------------------------------------------------
// AC4-AC6 share one run of the three variants.

struct ReferenceRun {
  std::vector<ExperimentResult> results;
  std::vector<std::string> errors;
  double seconds = 0.0;
};

// Rebuilds the safety set used during each iteration from the recorded
// samples and checks every executed state against it.
void audit(const ExperimentSetup& s, const ExperimentResult& r, int& violations, int& checked) {
  Index used = s.initial_samples;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const int j = r.records[i].iteration;
    const std::vector<Vector> samples(r.samples.begin(), r.samples.begin() + used);
    const SafetySetSpec spec = build_safety_set(r.variant, s, samples, s.theta_at(std::min(j - 1, s.iterations - 1)),
                                                clustering_seed(s.uncertainty.seed, j - 1));
    for (const auto& x : r.records[i].states) {
      ++checked;
      if (!spec.contains(x, 1e-6)) ++violations;
    }
    used += r.records[i].samples_gathered;
  }
}

Outcome ac4(const ExperimentSetup& s, const ReferenceRun& run) {
  int violations = 0, checked = 0, fallbacks = 0;
  bool reached = true;
  std::size_t max_steps = 0;
  for (const auto& r : run.results) {
    if (static_cast<int>(r.records.size()) != s.iterations) reached = false;
    for (const auto& rec : r.records) {
      fallbacks += rec.fallback_steps;
      max_steps = std::max(max_steps, rec.inputs.size());
      if ((rec.states.back() - s.mpc.target()).norm() > 1e-2 || rec.inputs.size() > 200) reached = false;
    }
    audit(s, r, violations, checked);
  }
  std::ostringstream os;
  os << run.results.size() << "/3 variants completed " << s.iterations << " iterations";
  for (const auto& e : run.errors) os << " [" << e << "]";
  os << "; max steps " << max_steps << "; " << violations << " membership violations in " << checked
     << " executed states; " << fallbacks << " recovered fallback steps; run " << fmt("%.0f", run.seconds) << " s";
  const bool ok = run.errors.empty() && run.results.size() == 3 && reached && violations == 0 &&
                  run.seconds <= 1800.0;
  return {ok, os.str()};
}

double mean(const std::vector<double>& v) {
  double t = 0.0;
  for (const double x : v) t += x;
  return v.empty() ? 0.0 : t / static_cast<double>(v.size());
}

const ExperimentResult* find(const ReferenceRun& run, Variant v) {
  for (const auto& r : run.results)
    if (r.variant == v) return &r;
  return nullptr;
}

Outcome ac5(const ReferenceRun& run) {
  const auto* inn = find(run, Variant::inn_wass);
  const auto* cl = find(run, Variant::cl_wass);
  const auto* wass = find(run, Variant::wass);
  if (!inn || !cl || !wass) return {false, "missing variant results"};
  std::vector<int> bad;
  std::size_t n = std::min({inn->records.size(), cl->records.size(), wass->records.size()});
  for (std::size_t i = 4; i < n; ++i) {
    const double a = mean(inn->records[i].step_times);
    const double b = mean(cl->records[i].step_times);
    const double c = mean(wass->records[i].step_times);
    if (!(a <= b && b < c)) bad.push_back(static_cast<int>(i + 1));
  }
  std::ostringstream os;
  os << "mean step time at j = " << n << ": inn " << fmt("%.3f", mean(inn->records[n - 1].step_times)) << " s, cl-wass "
     << fmt("%.3f", mean(cl->records[n - 1].step_times)) << " s, wass " << fmt("%.3f", mean(wass->records[n - 1].step_times))
     << " s; order violated at " << bad.size() << " of " << (n > 4 ? n - 4 : 0) << " iterations j >= 5";
  for (const int j : bad) os << " " << j;
  return {bad.empty() && n >= 5, os.str()};
}

Outcome ac6(const ReferenceRun& run) {
  const auto* inn = find(run, Variant::inn_wass);
  if (!inn || inn->records.empty()) return {false, "missing inner-variant results"};
  const double first = inn->records.front().cost;
  const double last = inn->records.back().cost;
  const bool part1 = last <= first;
  int above = 0;
  for (const auto& r : run.results) {
    const double robust = r.initial.costs.front();
    for (std::size_t i = 1; i < r.records.size(); ++i)
      if (r.records[i].cost > robust * (1.0 + 1e-9)) ++above;
  }
  std::ostringstream os;
  os << "inn cost j=1 " << fmt("%.4f", first) << ", j=" << inn->records.size() << " " << fmt("%.4f", last)
     << (part1 ? " (non-increasing)" : " (INCREASED)") << "; " << above
     << " iteration costs above the robust initial cost " << fmt("%.4f", inn->initial.costs.front()) << " for j >= 2";
  return {part1 && above == 0, os.str()};
}

// ---------------------------------------------------------------------------

std::vector<Vector> scalars(std::initializer_list<double> v) {
  std::vector<Vector> out;
  for (const double x : v) out.push_back(vec({x}));
  return out;
}

Outcome ac7(const ExperimentSetup& s) {
  std::ostringstream os;
  bool ok = true;

  // Pruning idempotence on a safe set grown from the robust trajectory and
  // perturbed copies of it.
  const Trajectory robust =
      initial_robust_trajectory(s.mpc, s.dynamics, s.obstacle, s.uncertainty.support, s.robust_horizon);
  SampledSafeSet ss = SampledSafeSet{}.append_trajectory(0, robust.states, robust.inputs, robust.costs, 0);
  std::mt19937_64 rng(707);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (Index j = 1; j <= 6; ++j) {
    std::vector<Vector> states = robust.states;
    for (std::size_t t = 1; t + 1 < states.size(); ++t) {
      states[t](0) += nd(rng);
      states[t](1) += nd(rng);
    }
    ss = ss.append_trajectory(j, states, robust.inputs, robust.costs, 1);
  }
  const auto spec = build_safety_set(Variant::inn_wass, s, draws(s, 7, 15), s.theta_at(0), 1);
  const auto is_safe = [&](const Vector& x) { return spec.contains(x); };
  const SampledSafeSet once = ss.prune(is_safe);
  const SampledSafeSet twice = once.prune(is_safe);
  const bool idem = twice == once && !once.pruned_trajectories().empty();
  ok &= idem;
  os << "prune idempotent " << (idem ? "yes" : "no") << " (" << once.pruned_trajectories().size() << " of 7 pruned)";

  // Q-map minimum selection.
  SampledSafeSet two;
  two = two.append_trajectory(0, scalars({5.0, 2.0, 0.0}), scalars({0.0, 0.0}), {10.0, 7.0, 0.0}, 0);
  two = two.append_trajectory(1, scalars({3.0, 2.0, 0.0}), scalars({0.0, 0.0}), {6.0, 4.0, 0.0}, 0);
  const auto q = min_cost_map(two).lookup(vec({2.0}));
  const bool qmin = q && *q == 4.0;
  ok &= qmin;
  os << "; Q-map {7,4} -> " << (q ? fmt("%g", *q) : std::string("none"));

  // Suffix costs against direct recomputation.
  const auto J = cost_to_go(robust.states, robust.inputs, s.mpc.cost);
  double err = 0.0;
  for (std::size_t t = 0; t < J.size(); ++t) {
    double direct = 0.0;
    for (std::size_t k = t; k < robust.inputs.size(); ++k) {
      const Vector e = robust.states[k] - s.mpc.target();
      direct += e.dot(s.mpc.cost.Q * e) + robust.inputs[k].dot(s.mpc.cost.R * robust.inputs[k]);
    }
    err = std::max(err, std::abs(J[t] - direct));
  }
  ok &= err <= 1e-9;
  os << "; suffix-cost error " << fmt("%.1e", err);
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------

double grid_min(const std::function<double(const Vector&)>& f, const std::function<bool(const Vector&)>& feasible) {
  Vector lo = -Vector::Ones(3), hi = Vector::Ones(3), best_x = Vector::Zero(3);
  double best = std::numeric_limits<double>::infinity();
  const int n = 40;
  for (int level = 0; level < 24; ++level) {
    const Vector step = (hi - lo) / n;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j)
        for (int k = 0; k <= n; ++k) {
          const Vector x = lo + Vector(vec({i * step(0), j * step(1), k * step(2)}));
          if (!feasible(x)) continue;
          const double v = f(x);
          if (v < best) {
            best = v;
            best_x = x;
          }
        }
    lo = (best_x - 10.0 * step).cwiseMax(-Vector::Ones(3));
    hi = (best_x + 10.0 * step).cwiseMin(Vector::Ones(3));
  }
  return best;
}

Outcome ac8() {
  using namespace conic;
  std::ostringstream os;
  bool ok = true;

  {
    ProgramBuilder pb;
    const Index t = pb.add_variable();
    const std::array<LinearExpr, 3> parts{LinearExpr::variable(t), LinearExpr(3.0), LinearExpr(4.0)};
    pb.add_second_order_cone(parts);
    pb.set_objective(LinearExpr::variable(t));
    const auto sol = solve(pb.build());
    const bool good = sol.status == SolveStatus::optimal && std::abs(sol.objective - 5.0) <= 1e-7;
    ok &= good;
    os << "SOC value " << fmt("%.9f", sol.objective);
  }
  {
    ProgramBuilder pb;
    const Index x = pb.add_variable();
    pb.add_nonnegative(LinearExpr::variable(x) + LinearExpr(-1.0));
    pb.add_nonnegative(LinearExpr(0.0) - LinearExpr::variable(x));
    pb.set_objective(LinearExpr::variable(x));
    const auto prog = pb.build();
    const auto sol = solve(prog);
    const bool cert = sol.status == SolveStatus::infeasible && (prog.G.transpose() * sol.z).norm() <= 1e-7 &&
                      std::abs(prog.h.dot(sol.z) + 1.0) <= 1e-7 && sol.z.minCoeff() >= -1e-9;
    ok &= cert;
    os << "; infeasibility certificate " << (cert ? "valid" : "INVALID");
  }
  std::mt19937_64 rng(808);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(-0.5, 0.5);
  double worst = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    Matrix M(3, 3);
    for (Index i = 0; i < 9; ++i) M(i) = nd(rng);
    const Matrix P = M.transpose() * M / 3.0 + 0.05 * Matrix::Identity(3, 3);
    const Vector q = 2.0 * vec({nd(rng), nd(rng), nd(rng)});
    const Vector c = vec({ud(rng), ud(rng), ud(rng)});
    const double r = 0.6 + 0.3 * (ud(rng) + 0.5);
    const Vector a = vec({nd(rng), nd(rng), nd(rng)}).normalized();
    const double b = a.dot(c) + 0.2 * ud(rng);

    ProgramBuilder pb;
    const Index x = pb.add_variables(3);
    const std::array<LinearExpr, 3> xs{LinearExpr::variable(x), LinearExpr::variable(x + 1), LinearExpr::variable(x + 2)};
    const Index t = add_quadratic_epigraph(pb, P, xs);
    const std::array<LinearExpr, 4> ball{LinearExpr(r), xs[0] + LinearExpr(-c(0)), xs[1] + LinearExpr(-c(1)),
                                         xs[2] + LinearExpr(-c(2))};
    pb.add_second_order_cone(ball);
    LinearExpr half(b);
    for (Index i = 0; i < 3; ++i) {
      half.add(x + i, -a(i));
      pb.add_nonnegative(LinearExpr(1.0) - xs[static_cast<std::size_t>(i)]);
      pb.add_nonnegative(LinearExpr(1.0) + xs[static_cast<std::size_t>(i)]);
    }
    pb.add_nonnegative(half);
    LinearExpr obj = LinearExpr::variable(t);
    for (Index i = 0; i < 3; ++i) obj.add(x + i, q(i));
    pb.set_objective(obj);
    const auto sol = solve(pb.build());
    const double oracle = grid_min([&](const Vector& y) { return y.dot(P * y) + q.dot(y); },
                                   [&](const Vector& y) {
                                     return (y - c).norm() <= r && a.dot(y) <= b && y.cwiseAbs().maxCoeff() <= 1.0;
                                   });
    if (sol.status != SolveStatus::optimal) ok = false;
    worst = std::max(worst, std::abs(sol.objective - oracle));
  }
  ok &= worst <= 1e-4;
  os << "; dense-grid max deviation " << fmt("%.1e", worst) << " on 5 instances";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome ac9(const ExperimentSetup& base) {
  ExperimentSetup s = base;
  s.clock = Clock::work;
  s.iterations = 2;
  const auto root = std::filesystem::temp_directory_path() / "drmpc_acceptance_determinism";
  std::filesystem::remove_all(root);
  for (const char* dir : {"a", "b"}) {
    std::vector<ExperimentResult> results;
    for (const Variant v : {Variant::wass, Variant::cl_wass, Variant::inn_wass}) results.push_back(run_iterations(s, v));
    emit_outputs(results, s, root / dir);
  }
  int identical = 0, total = 0;
  std::string differ;
  for (const char* f : {"trajectories.csv", "metrics.json", "trajectories.svg", "timing.svg", "cost.svg"}) {
    ++total;
    const std::string a = slurp(root / "a" / f);
    if (!a.empty() && a == slurp(root / "b" / f)) ++identical;
    else differ += std::string(" ") + f;
  }
  std::filesystem::remove_all(root);
  return {identical == total, std::to_string(identical) + "/" + std::to_string(total) +
                                  " output files byte-identical (work clock, 3 variants x 2 iterations)" + differ};
}

}  // namespace

int main() {
  set_log_level(LogLevel::error);
  ExperimentSetup setup = RunConfig{}.to_setup();

  report(1, "zero-radius exactness", [&] { return ac1(setup); });
  report(2, "bracket soundness", [&] { return ac2(setup); });
  report(3, "set containments", [&] { return ac3(setup); });

  ReferenceRun run;
  {
    const auto t0 = std::chrono::steady_clock::now();
    for (const Variant v : {Variant::wass, Variant::cl_wass, Variant::inn_wass}) {
      try {
        run.results.push_back(run_iterations(setup, v));
      } catch (const std::exception& e) {
        run.errors.push_back(to_string(v) + ": " + e.what());
      }
    }
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  report(4, "experiment reproduction", [&] { return ac4(setup, run); });
  report(5, "timing trend", [&] { return ac5(run); });
  report(6, "cost trend", [&] { return ac6(run); });
  report(7, "safe-set mechanics", [&] { return ac7(setup); });
  report(8, "solver unit suite", [] { return ac8(); });
  report(9, "determinism", [&] { return ac9(setup); });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
