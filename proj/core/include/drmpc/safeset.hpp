#pragma once

#include "drmpc/common.hpp"

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace drmpc {

/// Quadratic stage cost r(x, u) = (x - target)' Q (x - target) + u' R u.
struct StageCost {
  Matrix Q;
  Matrix R;
  Vector target;

  double operator()(const Vector& x, const Vector& u) const;
  void validate() const;
};

/// Stored state of trajectory `iteration` at time `time`, with its
/// cost-to-go and the input that was applied there (zero at the end).
struct SafePoint {
  Index iteration = 0;
  Index time = 0;
  Vector state;
  double cost_to_go = 0.0;
  Vector input;
};

/// Suffix sums J_t = sum_{k >= t} r(x_k, u_k) of a trajectory x_0..x_T,
/// u_0..u_{T-1} ending within `tol` of the cost target; J_T = 0.
std::vector<double> cost_to_go(const std::vector<Vector>& states, const std::vector<Vector>& inputs,
                               const StageCost& cost, double tol = 1e-2);

class SampledSafeSet {
 public:
  const std::vector<SafePoint>& points() const { return points_; }
  const std::set<Index>& active_trajectories() const { return active_; }
  /// Every trajectory ever removed by pruning.
  const std::set<Index>& pruned_trajectories() const { return pruned_; }
  bool empty() const { return points_.empty(); }

  std::vector<Index> trajectory_indices() const;
  std::vector<Vector> states() const;
  std::vector<double> costs() const;

  /// Stored points of trajectory j ordered by time.
  std::vector<const SafePoint*> trajectory(Index j) const;

  /// The stored point of the same trajectory one step later, if any.
  const SafePoint* successor(const SafePoint& p) const;

  /// Adds (j, x_t, J_t) for t = first_time..T. inputs has one entry fewer
  /// than states. Throws InputError on a duplicate (j, t) or bad lengths.
  SampledSafeSet append_trajectory(Index j, const std::vector<Vector>& states, const std::vector<Vector>& inputs,
                                   const std::vector<double>& costs, Index first_time = 1) const;

  /// Removes every trajectory owning at least one state for which is_safe is
  /// false. Throws InfeasibleError if nothing survives.
  SampledSafeSet prune(const std::function<bool(const Vector&)>& is_safe) const;

  std::string to_json() const;
  static SampledSafeSet from_json(const std::string& text);

  bool operator==(const SampledSafeSet& other) const;

 private:
  std::vector<SafePoint> points_;
  std::set<Index> active_;
  std::set<Index> pruned_;
};

/// Minimum cost-to-go over all stored copies of a state. States are matched
/// after snapping to a 1e-9 grid; absent states have infinite cost.
class CostMap {
 public:
  explicit CostMap(const SampledSafeSet& ss);

  std::optional<double> lookup(const Vector& x) const;
  std::size_t size() const { return entries_.size(); }

  struct Entry {
    Vector state;
    double cost;
    Index iteration;  // owner of the minimizing copy
    Index time;
  };
  /// Distinct states in deterministic order.
  std::vector<Entry> entries() const;

 private:
  using Key = std::vector<long long>;
  static Key key(const Vector& x);
  std::map<Key, Entry> entries_;
};

inline CostMap min_cost_map(const SampledSafeSet& ss) { return CostMap(ss); }

}  // namespace drmpc
