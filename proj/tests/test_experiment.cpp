#include "drmpc/experiment.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

namespace drmpc {
namespace {

using testing::vec;

TEST(Sampler, StaysInSupportWithTruncatedNormalSpread) {
  const ExperimentSetup setup = testing::reference_setup();
  const auto w = sample_displacements(setup.uncertainty, 20000);
  // Standard deviation of N(0, 0.15^2) truncated to [-0.45, 0.45].
  const double a = 3.0;
  const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
  const double mass = std::erf(a / std::sqrt(2.0));
  const double expected_sd = 0.15 * std::sqrt(1.0 - 2.0 * a * phi / mass);
  EXPECT_NEAR(expected_sd, 0.14799, 1e-5);
  for (Index axis = 0; axis < 2; ++axis) {
    double sum = 0.0, sq = 0.0;
    for (const auto& x : w) {
      ASSERT_TRUE(setup.uncertainty.support.contains(x));
      sum += x(axis);
      sq += x(axis) * x(axis);
    }
    const double mean = sum / w.size();
    const double sd = std::sqrt(sq / w.size() - mean * mean);
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(sd, expected_sd, 0.05 * expected_sd);
  }
}

TEST(Sampler, EngineStateRestoresDraws) {
  const ExperimentSetup setup = testing::reference_setup();
  DisplacementSampler a(setup.uncertainty);
  a.draw(7);
  const std::string state = a.engine_state();
  const auto next = a.draw(5);
  DisplacementSampler b(setup.uncertainty);
  b.restore_engine_state(state);
  EXPECT_EQ(b.draw(5), next);
  EXPECT_EQ(sample_displacements(setup.uncertainty, 9), sample_displacements(setup.uncertainty, 9));
}

TEST(RobustTrajectory, SafeAtEverySupportVertex) {
  const ExperimentSetup setup = testing::reference_setup();
  const Trajectory tr = initial_robust_trajectory(setup.mpc, setup.dynamics, setup.obstacle, setup.uncertainty.support,
                                                  setup.robust_horizon);
  ASSERT_EQ(tr.costs.size(), tr.states.size());
  for (const auto& x : tr.states) {
    for (const auto& v : setup.uncertainty.support.vertices()) EXPECT_LE(constraint_g(x, v, setup.obstacle), 1e-9);
    EXPECT_GE(robust_margin(x, setup.obstacle, setup.uncertainty.support), -1e-9);
  }
  EXPECT_NEAR(tr.costs.front(), cost_to_go(tr.states, tr.inputs, setup.mpc.cost).front(), 1e-12);
}

TEST(SafetySet, VariantsAreNested) {
  const ExperimentSetup setup = testing::reference_setup();
  const auto samples = sample_displacements(setup.uncertainty, 15);
  const auto wass = build_safety_set(Variant::wass, setup, samples, 1e-3, 1);
  const auto cl = build_safety_set(Variant::cl_wass, setup, samples, 1e-3, 1);
  const auto inn = build_safety_set(Variant::inn_wass, setup, samples, 1e-3, 1);
  EXPECT_EQ(wass.variant(), Variant::wass);
  EXPECT_EQ(inn.variant(), Variant::inn_wass);
  EXPECT_GE(cl.ambiguity().radius, wass.ambiguity().radius);
  EXPECT_THROW(inn.ambiguity(), InputError);
  std::mt19937_64 rng(3);
  int inner = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const Vector x = testing::random_state(rng, vec({0.5, 0.0}), vec({3.5, 2.5}));
    if (inn.contains(x)) {
      ++inner;
      EXPECT_TRUE(wass.contains(x));
    }
    if (cl.contains(x)) EXPECT_TRUE(wass.contains(x));
  }
  EXPECT_GT(inner, 0);
}

TEST(ClusteringSeed, DiffersPerIteration) {
  EXPECT_NE(clustering_seed(0, 0), clustering_seed(0, 1));
  EXPECT_NE(clustering_seed(0, 3), clustering_seed(1, 3));
  EXPECT_EQ(clustering_seed(5, 2), clustering_seed(5, 2));
}

class ShortRun : public ::testing::Test {
 protected:
  ExperimentSetup setup = [] {
    ExperimentSetup s = testing::reference_setup();
    s.clock = Clock::work;
    s.iterations = 2;
    return s;
  }();
};

TEST_F(ShortRun, CheckpointResumeEqualsUninterruptedRun) {
  const ExperimentResult full = run_iterations(setup, Variant::inn_wass);

  const auto path = std::filesystem::temp_directory_path() / "drmpc_test_checkpoint.json";
  std::filesystem::remove(path);
  ExperimentSetup first = setup;
  first.iterations = 1;
  RunOptions options;
  options.checkpoint_path = path.string();
  run_iterations(first, Variant::inn_wass, options);
  ASSERT_TRUE(std::filesystem::exists(path));
  const ExperimentResult resumed = run_iterations(setup, Variant::inn_wass, options);
  std::filesystem::remove(path);

  ASSERT_EQ(resumed.records.size(), full.records.size());
  for (std::size_t j = 0; j < full.records.size(); ++j) {
    EXPECT_EQ(resumed.records[j].states, full.records[j].states);
    EXPECT_EQ(resumed.records[j].step_times, full.records[j].step_times);
    EXPECT_EQ(resumed.records[j].cost, full.records[j].cost);
  }
  EXPECT_EQ(resumed.samples, full.samples);
  EXPECT_TRUE(resumed.safe_set == full.safe_set);
}

TEST_F(ShortRun, RecordsAreConsistent) {
  const ExperimentResult r = run_iterations(setup, Variant::inn_wass);
  ASSERT_EQ(r.records.size(), 2u);
  Index total = setup.initial_samples;
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.states.size(), rec.inputs.size() + 1);
    EXPECT_EQ(rec.step_times.size(), rec.inputs.size());
    EXPECT_EQ(rec.samples_gathered, static_cast<Index>(rec.inputs.size()));
    total += rec.samples_gathered;
    EXPECT_EQ(rec.total_samples, total);
    EXPECT_EQ(rec.states.front(), setup.mpc.start);
    EXPECT_LE((rec.states.back() - setup.mpc.target()).norm(), setup.mpc.terminal_tol);
    EXPECT_NEAR(rec.cost, cost_to_go(rec.states, rec.inputs, setup.mpc.cost).front(), 1e-12);
  }
  EXPECT_EQ(static_cast<Index>(r.samples.size()), total);

  // Post-prune audit: every stored state passes the final safety set.
  const auto spec = build_safety_set(Variant::inn_wass, setup, r.samples, setup.theta_at(1),
                                     clustering_seed(setup.uncertainty.seed, 2));
  for (const auto& p : r.safe_set.points()) EXPECT_TRUE(spec.contains(p.state));
}

}  // namespace
}  // namespace drmpc
