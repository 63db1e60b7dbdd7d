#include "drmpc/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace drmpc {

namespace {

// Nearest center, lowest index on ties.
Index nearest(const Vector& p, const std::vector<Vector>& centers) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = (p - centers[c]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<Index>(c);
    }
  }
  return best;
}

std::vector<Vector> kmeanspp(const std::vector<Vector>& samples, Index k, std::mt19937_64& rng) {
  const std::size_t n = samples.size();
  std::vector<Vector> centers;
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  centers.push_back(samples[first(rng)]);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<Index>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (samples[i] - centers.back()).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // Duplicated samples: every remaining draw is equally distant.
      pick = static_cast<std::size_t>(centers.size()) % n;
    }
    centers.push_back(samples[pick]);
  }
  return centers;
}

}  // namespace

ClusteredDistribution cluster(const std::vector<Vector>& samples, Index k, std::uint64_t seed,
                              const Polytope& support, const ClusterOptions& options) {
  const Index n = static_cast<Index>(samples.size());
  require(n > 0, "cluster: no samples");
  require(k >= 1 && k <= n, "cluster: k must lie in [1, N]");
  for (const auto& s : samples) require(s.size() == support.dim(), "cluster: sample dimension mismatch");

  std::mt19937_64 rng(seed);
  std::vector<Vector> centers = kmeanspp(samples, k, rng);
  std::vector<Index> assign(static_cast<std::size_t>(n), -1);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const Index c = nearest(samples[static_cast<std::size_t>(i)], centers);
      if (c != assign[static_cast<std::size_t>(i)]) {
        assign[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    // Repair empty clusters with the sample farthest from its own center.
    std::vector<Index> count(static_cast<std::size_t>(k), 0);
    for (const Index c : assign) ++count[static_cast<std::size_t>(c)];
    for (Index c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) continue;
      Index far = -1;
      double far_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        const Index own = assign[static_cast<std::size_t>(i)];
        if (count[static_cast<std::size_t>(own)] <= 1) continue;
        const double d = (samples[static_cast<std::size_t>(i)] - centers[static_cast<std::size_t>(own)]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) break;
      --count[static_cast<std::size_t>(assign[static_cast<std::size_t>(far)])];
      assign[static_cast<std::size_t>(far)] = c;
      count[static_cast<std::size_t>(c)] = 1;
      centers[static_cast<std::size_t>(c)] = samples[static_cast<std::size_t>(far)];
      changed = true;
    }
    if (!changed && iter > 0) break;
    for (Index c = 0; c < k; ++c) {
      Vector sum = Vector::Zero(support.dim());
      for (Index i = 0; i < n; ++i)
        if (assign[static_cast<std::size_t>(i)] == c) sum += samples[static_cast<std::size_t>(i)];
      centers[static_cast<std::size_t>(c)] = support.project(sum / static_cast<double>(count[static_cast<std::size_t>(c)]));
    }
  }

  std::vector<Index> count(static_cast<std::size_t>(k), 0);
  for (const Index c : assign) ++count[static_cast<std::size_t>(c)];
  std::vector<Vector> atoms;
  std::vector<double> weights;
  std::vector<Index> relabel(static_cast<std::size_t>(k), -1);
  for (Index c = 0; c < k; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0) continue;
    relabel[static_cast<std::size_t>(c)] = static_cast<Index>(atoms.size());
    atoms.push_back(centers[static_cast<std::size_t>(c)]);
    weights.push_back(static_cast<double>(count[static_cast<std::size_t>(c)]) / static_cast<double>(n));
  }
  ClusteredDistribution out;
  out.assignment.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index c = relabel[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    out.assignment[static_cast<std::size_t>(i)] = c;
    out.inflation = std::max(out.inflation, (samples[static_cast<std::size_t>(i)] - atoms[static_cast<std::size_t>(c)]).norm());
  }
  out.base = DiscreteDistribution(std::move(atoms), std::move(weights));
  return out;
}

AmbiguitySet inflated_ambiguity(const ClusteredDistribution& cd, double theta) {
  require(std::isfinite(theta) && theta >= 0.0, "inflated ambiguity: theta must be finite and >= 0");
  return AmbiguitySet{cd.base, theta + cd.inflation};
}

double clustering_sse(const std::vector<Vector>& samples, const ClusteredDistribution& cd) {
  require(samples.size() == cd.assignment.size(), "cluster: sample count does not match assignment");
  double sse = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    sse += (samples[i] - cd.base.atoms()[static_cast<std::size_t>(cd.assignment[i])]).squaredNorm();
  return sse;
}

}  // namespace drmpc
