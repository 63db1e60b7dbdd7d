#include "drmpc/clustering.hpp"
#include "drmpc/conic.hpp"
#include "drmpc/experiment.hpp"
#include "drmpc/log.hpp"
#include "drmpc/run_config.hpp"

#include <benchmark/benchmark.h>

#include <array>

namespace {

using namespace drmpc;

const ExperimentSetup& setup() {
  static const ExperimentSetup s = [] {
    set_log_level(LogLevel::error);
    return RunConfig{}.to_setup();
  }();
  return s;
}

Vector near_obstacle() {
  Vector x = Vector::Zero(4);
  x << 1.2, 2.2, 0.0, 0.0;
  return x;
}

void BM_SocNorm(benchmark::State& state) {
  using namespace conic;
  ProgramBuilder pb;
  const Index t = pb.add_variable();
  const std::array<LinearExpr, 3> parts{LinearExpr::variable(t), LinearExpr(3.0), LinearExpr(4.0)};
  pb.add_second_order_cone(parts);
  pb.set_objective(LinearExpr::variable(t));
  const ConicProgram prog = pb.build();
  for (auto _ : state) benchmark::DoNotOptimize(solve(prog).objective);
}
BENCHMARK(BM_SocNorm);

void BM_WorstCaseCvar(benchmark::State& state) {
  const auto& s = setup();
  const auto samples = sample_displacements(s.uncertainty, state.range(0));
  const AmbiguitySet amb{DiscreteDistribution::empirical(samples), 1e-3};
  const Vector x = near_obstacle();
  for (auto _ : state)
    benchmark::DoNotOptimize(
        worst_case_cvar_ub(amb, s.beta, x, s.obstacle, s.uncertainty.support, DualCoupling::shared).value);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_WorstCaseCvar)->RangeMultiplier(2)->Range(5, 160)->Complexity()->Unit(benchmark::kMillisecond);

void BM_InnerOffsets(benchmark::State& state) {
  const auto& s = setup();
  const AmbiguitySet amb{DiscreteDistribution::empirical(sample_displacements(s.uncertainty, state.range(0))), 1e-3};
  for (auto _ : state) benchmark::DoNotOptimize(inner_offsets(amb, s.beta, s.obstacle, s.uncertainty.support));
}
BENCHMARK(BM_InnerOffsets)->RangeMultiplier(4)->Range(5, 160)->Unit(benchmark::kMillisecond);

void BM_Cluster(benchmark::State& state) {
  const auto& s = setup();
  const auto samples = sample_displacements(s.uncertainty, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(cluster(samples, 5, 1, s.uncertainty.support).inflation);
}
BENCHMARK(BM_Cluster)->RangeMultiplier(4)->Range(16, 1024);

void BM_MpcStep(benchmark::State& state) {
  const auto& s = setup();
  const auto variant = static_cast<Variant>(state.range(0));
  const Trajectory robust =
      initial_robust_trajectory(s.mpc, s.dynamics, s.obstacle, s.uncertainty.support, s.robust_horizon);
  const SampledSafeSet ss = SampledSafeSet{}.append_trajectory(0, robust.states, robust.inputs, robust.costs, 0);
  const CostMap qmap(ss);
  const SafetySetSpec spec =
      build_safety_set(variant, s, sample_displacements(s.uncertainty, 40), s.theta_at(0), clustering_seed(0, 0));
  const CondensedProblem problem(s.dynamics, s.mpc, s.mpc.horizon);
  std::vector<Vector> reference(robust.states.begin(), robust.states.begin() + s.mpc.horizon + 1);
  for (auto _ : state) {
    SearchStats stats;
    benchmark::DoNotOptimize(solve_step(s.mpc.start, ss, qmap, spec, problem, s.mpc, reference, stats));
  }
  state.SetLabel(to_string(variant));
}
BENCHMARK(BM_MpcStep)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
