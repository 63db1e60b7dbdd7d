#include "drmpc/safeset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace drmpc {

namespace {

using nlohmann::json;

constexpr double kSnap = 1e-9;

json vec_to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector vec_from_json(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Index>(i)) = a[i].get<double>();
  return v;
}

}  // namespace

double StageCost::operator()(const Vector& x, const Vector& u) const {
  const Vector e = x - target;
  return e.dot(Q * e) + u.dot(R * u);
}

void StageCost::validate() const {
  require(Q.rows() == Q.cols() && Q.rows() == target.size(), "stage cost: Q must be square and match the target");
  require(R.rows() == R.cols() && R.rows() > 0, "stage cost: R must be square");
  require(Q.allFinite() && R.allFinite() && target.allFinite(), "stage cost: non-finite data");
}

std::vector<double> cost_to_go(const std::vector<Vector>& states, const std::vector<Vector>& inputs,
                               const StageCost& cost, double tol) {
  require(!states.empty(), "cost-to-go: empty trajectory");
  require(inputs.size() + 1 == states.size(), "cost-to-go: need exactly one input per transition");
  require((states.back() - cost.target).norm() <= tol, "cost-to-go: trajectory does not end at the target");
  std::vector<double> J(states.size(), 0.0);
  for (std::size_t t = inputs.size(); t-- > 0;) J[t] = J[t + 1] + cost(states[t], inputs[t]);
  return J;
}

std::vector<Index> SampledSafeSet::trajectory_indices() const { return {active_.begin(), active_.end()}; }

std::vector<Vector> SampledSafeSet::states() const {
  std::vector<Vector> out;
  out.reserve(points_.size());
  for (const auto& p : points_) out.push_back(p.state);
  return out;
}

std::vector<double> SampledSafeSet::costs() const {
  std::vector<double> out;
  out.reserve(points_.size());
  for (const auto& p : points_) out.push_back(p.cost_to_go);
  return out;
}

std::vector<const SafePoint*> SampledSafeSet::trajectory(Index j) const {
  std::vector<const SafePoint*> out;
  for (const auto& p : points_)
    if (p.iteration == j) out.push_back(&p);
  std::sort(out.begin(), out.end(), [](const SafePoint* a, const SafePoint* b) { return a->time < b->time; });
  return out;
}

const SafePoint* SampledSafeSet::successor(const SafePoint& p) const {
  for (const auto& q : points_)
    if (q.iteration == p.iteration && q.time == p.time + 1) return &q;
  return nullptr;
}

SampledSafeSet SampledSafeSet::append_trajectory(Index j, const std::vector<Vector>& states,
                                                 const std::vector<Vector>& inputs, const std::vector<double>& costs,
                                                 Index first_time) const {
  require(!states.empty(), "safe set: empty trajectory");
  require(states.size() == costs.size(), "safe set: states and costs differ in length");
  require(inputs.size() + 1 == states.size(), "safe set: need one input per transition");
  require(first_time >= 0 && first_time < static_cast<Index>(states.size()), "safe set: first time out of range");
  require(!active_.contains(j) && !pruned_.contains(j), "safe set: trajectory " + std::to_string(j) + " already stored");
  for (const double c : costs) require(std::isfinite(c) && c >= 0.0, "safe set: cost-to-go must be finite and >= 0");
  const Index nu = inputs.empty() ? 0 : inputs.front().size();
  SampledSafeSet out = *this;
  for (Index t = first_time; t < static_cast<Index>(states.size()); ++t) {
    const auto ut = static_cast<std::size_t>(t);
    SafePoint p;
    p.iteration = j;
    p.time = t;
    p.state = states[ut];
    p.cost_to_go = costs[ut];
    p.input = ut < inputs.size() ? inputs[ut] : Vector::Zero(nu);
    out.points_.push_back(std::move(p));
  }
  out.active_.insert(j);
  return out;
}

SampledSafeSet SampledSafeSet::prune(const std::function<bool(const Vector&)>& is_safe) const {
  std::set<Index> unsafe;
  for (const Index j : active_) {
    for (const SafePoint* p : trajectory(j)) {
      if (!is_safe(p->state)) {
        unsafe.insert(j);
        break;
      }
    }
  }
  SampledSafeSet out;
  out.pruned_ = pruned_;
  out.pruned_.insert(unsafe.begin(), unsafe.end());
  for (const Index j : active_)
    if (!unsafe.contains(j)) out.active_.insert(j);
  for (const auto& p : points_)
    if (out.active_.contains(p.iteration)) out.points_.push_back(p);
  if (out.points_.empty()) throw InfeasibleError("safe set: pruning removed every stored trajectory");
  return out;
}

std::string SampledSafeSet::to_json() const {
  json doc;
  doc["points"] = json::array();
  for (const auto& p : points_) {
    doc["points"].push_back({{"iteration", p.iteration},
                             {"time", p.time},
                             {"state", vec_to_json(p.state)},
                             {"cost_to_go", p.cost_to_go},
                             {"input", vec_to_json(p.input)}});
  }
  doc["active"] = json(std::vector<Index>(active_.begin(), active_.end()));
  doc["pruned"] = json(std::vector<Index>(pruned_.begin(), pruned_.end()));
  return doc.dump(2);
}

SampledSafeSet SampledSafeSet::from_json(const std::string& text) {
  SampledSafeSet out;
  try {
    const json doc = json::parse(text);
    for (const auto& jp : doc.at("points")) {
      SafePoint p;
      p.iteration = jp.at("iteration").get<Index>();
      p.time = jp.at("time").get<Index>();
      p.state = vec_from_json(jp.at("state"));
      p.cost_to_go = jp.at("cost_to_go").get<double>();
      p.input = vec_from_json(jp.at("input"));
      out.points_.push_back(std::move(p));
    }
    for (const auto& j : doc.at("active")) out.active_.insert(j.get<Index>());
    for (const auto& j : doc.at("pruned")) out.pruned_.insert(j.get<Index>());
  } catch (const json::exception& e) {
    throw InputError(std::string("safe set: malformed JSON: ") + e.what());
  }
  for (const auto& p : out.points_)
    require(out.active_.contains(p.iteration), "safe set: point belongs to an inactive trajectory");
  return out;
}

bool SampledSafeSet::operator==(const SampledSafeSet& other) const {
  if (active_ != other.active_ || pruned_ != other.pruned_ || points_.size() != other.points_.size()) return false;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& a = points_[i];
    const auto& b = other.points_[i];
    if (a.iteration != b.iteration || a.time != b.time || a.cost_to_go != b.cost_to_go || a.state != b.state ||
        a.input != b.input)
      return false;
  }
  return true;
}

CostMap::Key CostMap::key(const Vector& x) {
  Key k(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) k[static_cast<std::size_t>(i)] = std::llround(x(i) / kSnap);
  return k;
}

CostMap::CostMap(const SampledSafeSet& ss) {
  for (const auto& p : ss.points()) {
    auto [it, inserted] = entries_.try_emplace(key(p.state), Entry{p.state, p.cost_to_go, p.iteration, p.time});
    if (!inserted && p.cost_to_go < it->second.cost) it->second = Entry{p.state, p.cost_to_go, p.iteration, p.time};
  }
}

std::optional<double> CostMap::lookup(const Vector& x) const {
  const auto it = entries_.find(key(x));
  if (it == entries_.end()) return std::nullopt;
  return it->second.cost;
}

std::vector<CostMap::Entry> CostMap::entries() const {
  std::vector<Entry> out;
  out.reserve(entries_.size());
  for (const auto& [k, e] : entries_) out.push_back(e);
  return out;
}

}  // namespace drmpc
