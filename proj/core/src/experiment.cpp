#include "drmpc/experiment.hpp"

#include "drmpc/clustering.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace drmpc {

namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;
// Extra robust margin so that solver round-off cannot leave g slightly positive.
constexpr double kRobustPadding = 1e-6;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// A state whose positions are p and whose other components are zero.
Vector lift_position(const ObstacleModel& obs, const Vector& p) {
  const Matrix& C = obs.C;
  return C.transpose() * (C * C.transpose()).ldlt().solve(p);
}

// n + 1 points spaced evenly in arc length along a polyline.
std::vector<Vector> resample(const std::vector<Vector>& polyline, Index n) {
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < polyline.size(); ++i) cum.push_back(cum.back() + (polyline[i] - polyline[i - 1]).norm());
  std::vector<Vector> out;
  std::size_t seg = 1;
  for (Index k = 0; k <= n; ++k) {
    const double s = cum.back() * static_cast<double>(k) / static_cast<double>(n);
    while (seg + 1 < polyline.size() && cum[seg] < s) ++seg;
    const double len = cum[seg] - cum[seg - 1];
    const double a = len > 0.0 ? std::clamp((s - cum[seg - 1]) / len, 0.0, 1.0) : 1.0;
    out.push_back((1.0 - a) * polyline[seg - 1] + a * polyline[seg]);
  }
  return out;
}

std::vector<Index> assign_facets(const std::vector<Vector>& states, const ObstacleModel& obs, const Vector& offsets,
                                 Index steps) {
  std::vector<Index> facets;
  for (Index k = 1; k <= steps; ++k) {
    const Vector m = inner_margins(states[static_cast<std::size_t>(k)], obs, offsets);
    Index best = 0;
    for (Index i = 1; i < m.size(); ++i)
      if (m(i) > m(best)) best = i;
    facets.push_back(best);
  }
  return facets;
}

json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

json vecs_json(const std::vector<Vector>& vs) {
  json a = json::array();
  for (const auto& v : vs) a.push_back(vec_json(v));
  return a;
}

std::vector<Vector> json_vecs(const json& j) {
  std::vector<Vector> out;
  for (const auto& e : j) out.push_back(json_vec(e));
  return out;
}

json record_json(const IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"states", vecs_json(r.states)},
          {"inputs", vecs_json(r.inputs)},
          {"step_times", r.step_times},
          {"cost", r.cost},
          {"samples_gathered", r.samples_gathered},
          {"total_samples", r.total_samples},
          {"safety_build_time", r.safety_build_time},
          {"pruned", r.pruned},
          {"fallback_steps", r.fallback_steps}};
}

IterationRecord json_record(const json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.states = json_vecs(j.at("states"));
  r.inputs = json_vecs(j.at("inputs"));
  r.step_times = j.at("step_times").get<std::vector<double>>();
  r.cost = j.at("cost").get<double>();
  r.samples_gathered = j.at("samples_gathered").get<Index>();
  r.total_samples = j.at("total_samples").get<Index>();
  r.safety_build_time = j.at("safety_build_time").get<double>();
  r.pruned = j.at("pruned").get<std::vector<Index>>();
  r.fallback_steps = j.at("fallback_steps").get<int>();
  return r;
}

struct LoopState {
  int completed = 0;
  std::vector<Vector> samples;
  std::string rng;
  SampledSafeSet safe_set;
  Trajectory initial;
  std::vector<IterationRecord> records;
};

void write_checkpoint(const std::string& path, Variant variant, const ExperimentSetup& setup, const LoopState& st) {
  json doc;
  doc["version"] = kCheckpointVersion;
  doc["variant"] = to_string(variant);
  doc["seed"] = setup.uncertainty.seed;
  doc["completed"] = st.completed;
  doc["samples"] = vecs_json(st.samples);
  doc["rng"] = st.rng;
  doc["safe_set"] = json::parse(st.safe_set.to_json());
  doc["initial"] = {{"states", vecs_json(st.initial.states)},
                    {"inputs", vecs_json(st.initial.inputs)},
                    {"costs", st.initial.costs}};
  doc["records"] = json::array();
  for (const auto& r : st.records) doc["records"].push_back(record_json(r));
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp);
    os << doc.dump(1) << '\n';
    if (!os) throw IoError("cannot write checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write checkpoint " + path + ": " + ec.message());
}

std::optional<LoopState> read_checkpoint(const std::string& path, Variant variant, const ExperimentSetup& setup) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    const json doc = json::parse(ss.str());
    if (doc.at("version").get<int>() != kCheckpointVersion || doc.at("variant").get<std::string>() != to_string(variant) ||
        doc.at("seed").get<std::uint64_t>() != setup.uncertainty.seed)
      throw ConfigError("checkpoint " + path + " belongs to a different run (variant or seed differ)");
    LoopState st;
    st.completed = doc.at("completed").get<int>();
    st.samples = json_vecs(doc.at("samples"));
    st.rng = doc.at("rng").get<std::string>();
    st.safe_set = SampledSafeSet::from_json(doc.at("safe_set").dump());
    st.initial.states = json_vecs(doc.at("initial").at("states"));
    st.initial.inputs = json_vecs(doc.at("initial").at("inputs"));
    st.initial.costs = doc.at("initial").at("costs").get<std::vector<double>>();
    for (const auto& r : doc.at("records")) st.records.push_back(json_record(r));
    if (st.completed != static_cast<int>(st.records.size()))
      throw ConfigError("checkpoint " + path + " is inconsistent");
    return st;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint " + path + " is malformed: " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Sampling

void UncertaintyModel::validate() const {
  const Index n = support.dim();
  require(sigma > 0.0 && std::isfinite(sigma), "uncertainty: sigma must be positive");
  require(lower.size() == n && upper.size() == n, "uncertainty: truncation bounds must match the support dimension");
  require((lower.array() < upper.array()).all(), "uncertainty: each truncation interval must be nonempty");
  const Polytope box = Polytope::box(lower, upper);
  for (const auto& v : box.vertices())
    require(support.contains(v, 1e-12), "uncertainty: truncation bounds must lie within the support");
}

DisplacementSampler::DisplacementSampler(UncertaintyModel model) : model_(std::move(model)), rng_(model_.seed) {
  model_.validate();
}

std::vector<Vector> DisplacementSampler::draw(Index count) {
  require(count >= 0, "sampler: count must be >= 0");
  // A fresh distribution per call keeps all state inside the engine.
  std::normal_distribution<double> normal(0.0, model_.sigma);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    Vector w(model_.lower.size());
    for (Index a = 0; a < w.size(); ++a) {
      double v = normal(rng_);
      while (v < model_.lower(a) || v > model_.upper(a)) v = normal(rng_);
      w(a) = v;
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::string DisplacementSampler::engine_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void DisplacementSampler::restore_engine_state(const std::string& state) {
  std::istringstream is(state);
  is >> rng_;
  if (!is) throw InputError("sampler: malformed engine state");
}

std::vector<Vector> sample_displacements(const UncertaintyModel& model, Index count) {
  DisplacementSampler sampler(model);
  return sampler.draw(count);
}

// ---------------------------------------------------------------------------
// Setup

std::uint64_t clustering_seed(std::uint64_t seed, int j) {
  return splitmix64(seed ^ (0x5bd1e995ULL * static_cast<std::uint64_t>(j + 1)));
}

double ExperimentSetup::theta_at(int j) const {
  require(!theta.empty(), "experiment: theta schedule is empty");
  if (theta.size() == 1) return theta.front();
  require(j >= 0 && static_cast<std::size_t>(j) < theta.size(), "experiment: theta schedule too short");
  return theta[static_cast<std::size_t>(j)];
}

void ExperimentSetup::validate() const {
  mpc.validate(dynamics);
  uncertainty.validate();
  require(obstacle.state_dim() == dynamics.state_dim(), "experiment: obstacle selector does not match the state");
  require(uncertainty.support.dim() == obstacle.position_dim(), "experiment: support dimension mismatch");
  require(beta > 0.0 && beta <= 1.0, "experiment: beta must lie in (0, 1]");
  require(iterations >= 1, "experiment: iterations must be >= 1");
  require(theta.size() == 1 || theta.size() >= static_cast<std::size_t>(iterations),
          "experiment: theta must be one value or one per iteration");
  for (const double t : theta) require(std::isfinite(t) && t >= 0.0, "experiment: theta must be finite and >= 0");
  require(n_clusters >= 1, "experiment: n_clusters must be >= 1");
  require(initial_samples >= n_clusters, "experiment: initial_samples must be >= n_clusters");
  require(robust_horizon >= 1, "experiment: robust_horizon must be >= 1");
  // Every displaced obstacle must stay inside the position box of X.
  const Vector lo = obstacle.C * mpc.state_lo;
  const Vector hi = obstacle.C * mpc.state_hi;
  for (const auto& v : obstacle.body.vertices())
    for (const auto& w : uncertainty.support.vertices()) {
      const Vector p = v + w;
      if ((p.array() < lo.array()).any() || (p.array() > hi.array()).any())
        throw ConfigError("experiment: a displaced obstacle leaves the position range of the state box");
    }
}

// ---------------------------------------------------------------------------
// Robust initial trajectory

Trajectory initial_robust_trajectory(const MpcConfig& cfg, const Dynamics& dynamics, const ObstacleModel& obstacle,
                                     const Polytope& support, Index horizon) {
  cfg.validate(dynamics);
  require(horizon >= 1, "robust trajectory: horizon must be >= 1");
  require(obstacle.state_dim() == dynamics.state_dim(), "robust trajectory: obstacle selector does not match");
  const Matrix& A = obstacle.body.A();
  Vector offsets(A.rows());
  for (Index m = 0; m < A.rows(); ++m) offsets(m) = support.support(A.row(m).transpose()) + kRobustPadding;

  // Reference polylines: straight, and through each corner of the robustly
  // inflated obstacle, pushed slightly outwards.
  const Vector p_start = obstacle.C * cfg.start;
  const Vector p_target = obstacle.C * cfg.target();
  const Polytope inflated(A, obstacle.body.b() + offsets + Vector::Constant(A.rows(), obstacle.clearance));
  Vector centroid = Vector::Zero(inflated.dim());
  for (const auto& v : inflated.vertices()) centroid += v;
  centroid /= static_cast<double>(inflated.vertices().size());
  std::vector<std::vector<Vector>> polylines{{p_start, p_target}};
  for (const auto& v : inflated.vertices()) {
    const Vector out = v - centroid;
    polylines.push_back({p_start, v + 0.1 * out + 0.1 * out.normalized(), p_target});
  }

  const CondensedProblem full(dynamics, cfg, horizon);
  std::optional<CondensedProblem::Plan> best;
  std::vector<Index> best_facets;
  double work = 0.0;
  for (const auto& polyline : polylines) {
    std::vector<Vector> ref;
    for (const auto& p : resample(polyline, horizon)) ref.push_back(lift_position(obstacle, p));
    std::vector<Index> facets = assign_facets(ref, obstacle, offsets, horizon - 1);
    for (int round = 0; round < 6; ++round) {
      const auto c = facet_constraints(obstacle, offsets, facets);
      auto prog = full.prepare(cfg.start, c.constraints);
      const auto plan = full.solve(prog, cfg.start, cfg.target(), c.constraints, work);
      if (!plan) break;
      if (!best || plan->stage_cost < best->stage_cost) {
        best = plan;
        best_facets = facets;
      }
      const auto next = assign_facets(plan->states, obstacle, offsets, horizon - 1);
      if (next == facets) break;
      facets = next;
    }
  }
  if (!best) throw ConfigError("robust trajectory: no robustly safe trajectory reaches the target");

  // Trim at the first state near the target and land on it exactly.
  Index T = horizon;
  for (Index k = 1; k <= horizon; ++k) {
    if ((best->states[static_cast<std::size_t>(k)] - cfg.target()).norm() <= cfg.terminal_tol) {
      T = k;
      break;
    }
  }
  std::optional<CondensedProblem::Plan> trimmed;
  for (Index h = T; h <= horizon && !trimmed; ++h) {
    const CondensedProblem shorter(dynamics, cfg, h);
    const std::vector<Index> facets(best_facets.begin(), best_facets.begin() + (h - 1));
    const auto c = facet_constraints(obstacle, offsets, facets);
    auto prog = shorter.prepare(cfg.start, c.constraints);
    trimmed = shorter.solve(prog, cfg.start, cfg.target(), c.constraints, work);
  }
  if (!trimmed) trimmed = best;

  for (const auto& x : trimmed->states)
    for (const auto& w : support.vertices())
      if (constraint_g(x, w, obstacle) > 0.0)
        throw ConfigError("robust trajectory: vertex check failed (g > 0 at a support vertex)");

  Trajectory out;
  out.states = trimmed->states;
  out.inputs = trimmed->inputs;
  out.costs = cost_to_go(out.states, out.inputs, cfg.cost, cfg.terminal_tol);
  return out;
}

// ---------------------------------------------------------------------------
// Safety sets and the iteration loop

SafetySetSpec build_safety_set(Variant variant, const ExperimentSetup& setup, const std::vector<Vector>& samples,
                               double theta, std::uint64_t cluster_seed, double* work) {
  require(!samples.empty(), "safety set: no samples");
  const Polytope& W = setup.uncertainty.support;
  switch (variant) {
    case Variant::wass:
      return SafetySetSpec::wass(setup.obstacle, W, setup.beta,
                                 AmbiguitySet{DiscreteDistribution::empirical(samples), theta});
    case Variant::cl_wass: {
      const Index k = std::min<Index>(setup.n_clusters, static_cast<Index>(samples.size()));
      const auto cd = cluster(samples, k, cluster_seed, W);
      return SafetySetSpec::cl_wass(setup.obstacle, W, setup.beta, inflated_ambiguity(cd, theta));
    }
    case Variant::inn_wass: {
      const AmbiguitySet amb{DiscreteDistribution::empirical(samples), theta};
      return SafetySetSpec::inn_wass(setup.obstacle, W, setup.beta,
                                     inner_offsets(amb, setup.beta, setup.obstacle, W, work));
    }
  }
  throw InputError("safety set: unknown variant");
}

ExperimentResult run_iterations(const ExperimentSetup& setup, Variant variant, const RunOptions& options) {
  setup.validate();
  DisplacementSampler sampler(setup.uncertainty);
  const auto cluster_seed = [&](int j) { return clustering_seed(setup.uncertainty.seed, j); };
  const auto to_time = [&](double wall, double work) { return setup.clock == Clock::wall ? wall : work * kWorkUnit; };

  LoopState st;
  std::optional<LoopState> resumed;
  if (options.checkpoint_path) resumed = read_checkpoint(*options.checkpoint_path, variant, setup);
  if (resumed) {
    st = std::move(*resumed);
    sampler.restore_engine_state(st.rng);
  } else {
    st.initial = initial_robust_trajectory(setup.mpc, setup.dynamics, setup.obstacle, setup.uncertainty.support,
                                           setup.robust_horizon);
    st.safe_set = SampledSafeSet{}.append_trajectory(0, st.initial.states, st.initial.inputs, st.initial.costs, 0);
    st.samples = sampler.draw(setup.initial_samples);
  }
  SafetySetSpec spec = build_safety_set(variant, setup, st.samples, setup.theta_at(std::min(st.completed, setup.iterations - 1)),
                                       cluster_seed(st.completed));
  if (!resumed) st.safe_set = st.safe_set.prune([&](const Vector& x) { return spec.contains(x); });
  for (const auto& r : st.records)
    if (options.on_iteration) options.on_iteration(r);

  for (int j = st.completed + 1; j <= setup.iterations; ++j) {
    const RolloutResult roll = safe_mpc_rollout(setup.mpc.start, st.safe_set, spec, setup.mpc, setup.dynamics);
    const Index T = static_cast<Index>(roll.inputs.size());

    IterationRecord rec;
    rec.iteration = j;
    rec.states = roll.states;
    rec.inputs = roll.inputs;
    for (std::size_t t = 0; t < roll.step_times.size(); ++t)
      rec.step_times.push_back(to_time(roll.step_times[t], roll.step_work[t]));
    rec.fallback_steps = roll.fallback_steps;
    const auto costs = cost_to_go(roll.states, roll.inputs, setup.mpc.cost, setup.mpc.terminal_tol);
    rec.cost = costs.front();

    const auto fresh = sampler.draw(T);
    st.samples.insert(st.samples.end(), fresh.begin(), fresh.end());
    rec.samples_gathered = T;
    rec.total_samples = static_cast<Index>(st.samples.size());

    const auto t0 = std::chrono::steady_clock::now();
    double build_work = 0.0;
    spec = build_safety_set(variant, setup, st.samples, setup.theta_at(std::min(j, setup.iterations - 1)),
                            cluster_seed(j), &build_work);
    rec.safety_build_time = to_time(elapsed_since(t0), build_work);

    SampledSafeSet grown = T > 0 ? st.safe_set.append_trajectory(j, roll.states, roll.inputs, costs, 1) : st.safe_set;
    const auto before = grown.active_trajectories();
    st.safe_set = grown.prune([&](const Vector& x) { return spec.contains(x); });
    for (const Index i : before)
      if (!st.safe_set.active_trajectories().contains(i)) rec.pruned.push_back(i);

    st.records.push_back(rec);
    st.completed = j;
    st.rng = sampler.engine_state();
    if (options.checkpoint_path) write_checkpoint(*options.checkpoint_path, variant, setup, st);
    if (options.on_iteration) options.on_iteration(rec);
  }

  ExperimentResult out;
  out.variant = variant;
  out.initial = std::move(st.initial);
  out.records = std::move(st.records);
  out.safe_set = std::move(st.safe_set);
  out.samples = std::move(st.samples);
  return out;
}

}  // namespace drmpc
