#pragma once

#include "drmpc/geometry.hpp"
#include "drmpc/risk.hpp"

#include <cstdint>
#include <vector>

namespace drmpc {

/// K-means compression of a sample set: centers with cluster-mass weights,
/// the sample-to-cluster map, and the largest sample-to-center distance.
struct ClusteredDistribution {
  DiscreteDistribution base;
  std::vector<Index> assignment;
  double inflation = 0.0;
};

struct ClusterOptions {
  int max_iterations = 100;
};

/// Lloyd's algorithm with k-means++ seeding. Centers are projected onto the
/// support after each update; empty clusters are re-seeded at the sample
/// farthest from its center.
ClusteredDistribution cluster(const std::vector<Vector>& samples, Index k, std::uint64_t seed,
                              const Polytope& support, const ClusterOptions& options = {});

/// Ball around the clustered center with radius theta + inflation.
AmbiguitySet inflated_ambiguity(const ClusteredDistribution& cd, double theta);

/// Within-cluster sum of squared distances.
double clustering_sse(const std::vector<Vector>& samples, const ClusteredDistribution& cd);

}  // namespace drmpc
