#pragma once

#include "drmpc/geometry.hpp"
#include "drmpc/mpc.hpp"
#include "drmpc/risk.hpp"
#include "drmpc/safeset.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace drmpc {

/// Obstacle displacement: independent truncated normals per axis (mean 0),
/// truncated to [lower, upper], with the support polytope W.
struct UncertaintyModel {
  Polytope support;
  double sigma = 0.15;
  Vector lower;
  Vector upper;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Stateful rejection sampler. The engine state can be saved and restored
/// between draws, which makes checkpointed runs reproduce uninterrupted ones.
class DisplacementSampler {
 public:
  explicit DisplacementSampler(UncertaintyModel model);

  std::vector<Vector> draw(Index count);

  std::string engine_state() const;
  void restore_engine_state(const std::string& state);

 private:
  UncertaintyModel model_;
  std::mt19937_64 rng_;
};

/// count i.i.d. draws from a fresh sampler seeded with model.seed.
std::vector<Vector> sample_displacements(const UncertaintyModel& model, Index count);

enum class Clock { wall, work };

/// Work proxy to seconds-like units for the deterministic clock.
inline constexpr double kWorkUnit = 1e-9;

struct ExperimentSetup {
  Dynamics dynamics;
  MpcConfig mpc;
  ObstacleModel obstacle;
  UncertaintyModel uncertainty;
  double beta = 0.05;
  std::vector<double> theta{1e-3};  // one value, or one per ambiguity set 0..J-1
  int iterations = 20;
  Index n_clusters = 5;
  Index initial_samples = 15;
  Index robust_horizon = 30;
  Clock clock = Clock::wall;

  double theta_at(int j) const;
  /// Includes the check that every displaced obstacle stays inside C X.
  void validate() const;
};

/// Seed for reclustering the samples gathered through iteration j.
std::uint64_t clustering_seed(std::uint64_t seed, int j);

struct Trajectory {
  std::vector<Vector> states;
  std::vector<Vector> inputs;
  std::vector<double> costs;  // cost-to-go at each state
};

/// A trajectory from cfg.start to the target that is safe for every
/// displacement in the support: each inner state satisfies a robust facet
/// half-space, chosen by reference-guided assignment along detours around the
/// obstacle. Verified at every support vertex; throws ConfigError when no
/// robust trajectory is found.
Trajectory initial_robust_trajectory(const MpcConfig& cfg, const Dynamics& dynamics, const ObstacleModel& obstacle,
                                     const Polytope& support, Index horizon = 30);

/// Builds X_safe from the samples gathered so far. The clustered variant
/// reclusters with `cluster_seed`. Solver effort is added to *work.
SafetySetSpec build_safety_set(Variant variant, const ExperimentSetup& setup, const std::vector<Vector>& samples,
                               double theta, std::uint64_t cluster_seed, double* work = nullptr);

struct IterationRecord {
  int iteration = 0;
  std::vector<Vector> states;
  std::vector<Vector> inputs;
  std::vector<double> step_times;  // per the setup's clock
  double cost = 0.0;
  Index samples_gathered = 0;
  Index total_samples = 0;
  double safety_build_time = 0.0;
  std::vector<Index> pruned;
  int fallback_steps = 0;
};

struct ExperimentResult {
  Variant variant = Variant::inn_wass;
  Trajectory initial;
  std::vector<IterationRecord> records;
  SampledSafeSet safe_set;
  /// Every displacement sample, initial ones first, in draw order.
  std::vector<Vector> samples;
};

struct RunOptions {
  /// Written after every iteration; an existing file for the same variant
  /// and seed is resumed from.
  std::optional<std::string> checkpoint_path;
  std::function<void(const IterationRecord&)> on_iteration;
};

/// Iterative loop: rollout with the current safe set and safety set, gather
/// one sample per executed step, rebuild the safety set, append the new
/// trajectory and prune every trajectory that left the safety set.
ExperimentResult run_iterations(const ExperimentSetup& setup, Variant variant, const RunOptions& options = {});

}  // namespace drmpc
