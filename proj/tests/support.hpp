#pragma once

#include "drmpc/experiment.hpp"
#include "drmpc/run_config.hpp"

#include <random>
#include <vector>

namespace drmpc::testing {

inline ExperimentSetup reference_setup() { return RunConfig{}.to_setup(); }

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (const double x : v) out(i++) = x;
  return out;
}

/// Uniform random state whose position lies in [lo, hi] and velocity is zero.
inline Vector random_state(std::mt19937_64& rng, const Vector& lo, const Vector& hi, Index nx = 4) {
  Vector x = Vector::Zero(nx);
  for (Index i = 0; i < lo.size(); ++i) x(i) = std::uniform_real_distribution<double>(lo(i), hi(i))(rng);
  return x;
}

/// Uniform samples from a box support.
inline std::vector<Vector> uniform_samples(std::mt19937_64& rng, const Vector& lo, const Vector& hi, int n) {
  std::vector<Vector> out;
  for (int k = 0; k < n; ++k) {
    Vector w(lo.size());
    for (Index i = 0; i < lo.size(); ++i) w(i) = std::uniform_real_distribution<double>(lo(i), hi(i))(rng);
    out.push_back(w);
  }
  return out;
}

}  // namespace drmpc::testing
