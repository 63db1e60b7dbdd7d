#include "drmpc/run_config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace drmpc {

namespace {

using nlohmann::json;

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  throw ConfigError(field + ": " + what);
}

void check(bool ok, const std::string& field, const std::string& what) {
  if (!ok) field_error(field, what);
}

double number(const json& v, const std::string& field) {
  check(v.is_number(), field, "expected a number");
  const double x = v.get<double>();
  check(std::isfinite(x), field, "must be finite");
  return x;
}

long long integer(const json& v, const std::string& field) {
  check(v.is_number_integer(), field, "expected an integer");
  return v.get<long long>();
}

std::string text(const json& v, const std::string& field) {
  check(v.is_string(), field, "expected a string");
  return v.get<std::string>();
}

Vector vector(const json& v, const std::string& field) {
  check(v.is_array(), field, "expected an array of numbers");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Index>(i)) = number(v[i], field + "[" + std::to_string(i) + "]");
  return out;
}

Matrix matrix(const json& v, const std::string& field) {
  check(v.is_array() && !v.empty(), field, "expected a nonempty array of rows");
  const Vector first = vector(v[0], field + "[0]");
  Matrix out(static_cast<Index>(v.size()), first.size());
  for (std::size_t r = 0; r < v.size(); ++r) {
    const Vector row = vector(v[r], field + "[" + std::to_string(r) + "]");
    check(row.size() == first.size(), field, "rows must have equal length");
    out.row(static_cast<Index>(r)) = row.transpose();
  }
  return out;
}

json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json mat_json(const Matrix& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows(); ++r) a.push_back(vec_json(m.row(r).transpose()));
  return a;
}

std::string clock_name(Clock c) { return c == Clock::wall ? "wall" : "work"; }

}  // namespace

RunConfig::RunConfig() {
  obstacle_center = (Vector(2) << 2.0, 1.2).finished();
  A = (Matrix(4, 4) << 1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 0, 1).finished();
  B = (Matrix(4, 2) << 0, 0, 0, 0, 1, 0, 0, 1).finished();
  x_start = Vector::Zero(4);
  x_target = (Vector(4) << 5.0, 3.0, 0.0, 0.0).finished();
  q_diag = (Vector(4) << 1.0, 1.0, 0.01, 0.01).finished();
  r_diag = (Vector(2) << 0.01, 0.01).finished();
  state_lower = (Vector(4) << -1.0, -1.0, -1.0, -1.0).finished();
  state_upper = (Vector(4) << 6.0, 4.0, 1.0, 1.0).finished();
  input_lower = Vector::Constant(2, -0.5);
  input_upper = Vector::Constant(2, 0.5);
}

void RunConfig::validate() const {
  check(beta > 0.0 && beta <= 1.0, "beta", "must lie in (0, 1]");
  check(d_min >= 0.0, "d_min", "must be >= 0");
  check(agent_radius >= 0.0, "agent_radius", "must be >= 0");
  check(obstacle_side > 0.0, "obstacle_side", "must be > 0");
  check(obstacle_center.size() == 2, "obstacle_center", "must have 2 entries");
  check(horizon >= 1 && horizon <= 200, "horizon", "must lie in [1, 200]");
  check(iterations >= 1 && iterations <= 10000, "iterations", "must lie in [1, 10000]");
  check(!theta.empty(), "theta", "must be a number or a nonempty array");
  for (const double t : theta) check(std::isfinite(t) && t >= 0.0, "theta", "entries must be >= 0");
  check(theta.size() == 1 || theta.size() >= static_cast<std::size_t>(iterations), "theta",
        "a schedule needs one entry per iteration");
  check(n_clusters >= 1, "n_clusters", "must be >= 1");
  if (zeta) check(*zeta > 0.0 && *zeta < 1.0, "zeta", "must lie in (0, 1)");

  const Index nx = A.rows();
  check(nx >= 2 && A.cols() == nx, "dynamics.A", "must be square with at least 2 rows");
  check(B.rows() == nx && B.cols() >= 1, "dynamics.B", "must have as many rows as dynamics.A");
  const Index nu = B.cols();
  check(x_start.size() == nx, "x_start", "must have one entry per state");
  check(x_target.size() == nx, "x_target", "must have one entry per state");
  check(q_diag.size() == nx, "q_diag", "must have one entry per state");
  check((q_diag.array() >= 0.0).all(), "q_diag", "entries must be >= 0");
  check(r_diag.size() == nu, "r_diag", "must have one entry per input");
  check((r_diag.array() > 0.0).all(), "r_diag", "entries must be > 0");
  check(sigma > 0.0, "sigma", "must be > 0");
  check(support_half_width > 0.0, "support_half_width", "must be > 0");
  check(initial_samples >= 1, "initial_samples", "must be >= 1");
  check(initial_samples >= n_clusters, "initial_samples", "must be >= n_clusters");
  check(state_lower.size() == nx, "state_lower", "must have one entry per state");
  check(state_upper.size() == nx, "state_upper", "must have one entry per state");
  check((state_lower.array() <= state_upper.array()).all(), "state_upper", "must be >= state_lower");
  check(input_lower.size() == nu, "input_lower", "must have one entry per input");
  check(input_upper.size() == nu, "input_upper", "must have one entry per input");
  check((input_lower.array() <= 0.0).all(), "input_lower", "the input box must contain 0");
  check((input_upper.array() >= 0.0).all(), "input_upper", "the input box must contain 0");
  check((x_start.array() >= state_lower.array()).all() && (x_start.array() <= state_upper.array()).all(), "x_start",
        "must lie in the state box");
  check((x_target.array() >= state_lower.array()).all() && (x_target.array() <= state_upper.array()).all(),
        "x_target", "must lie in the state box");
  check(terminal_tol > 0.0, "terminal_tol", "must be > 0");
  check(step_cap >= 1, "step_cap", "must be >= 1");
  check(robust_horizon >= 1 && robust_horizon <= 500, "robust_horizon", "must lie in [1, 500]");
  check(variant == "all" || variant == "wass" || variant == "cl-wass" || variant == "inn", "variant",
        "must be one of wass, cl-wass, inn, all");
  check(!output_dir.empty(), "output_dir", "must not be empty");
}

std::vector<Variant> RunConfig::variants() const {
  if (variant == "all") return {Variant::wass, Variant::cl_wass, Variant::inn_wass};
  return {parse_variant(variant)};
}

ExperimentSetup RunConfig::to_setup() const {
  validate();
  const Index nx = A.rows();
  Matrix C = Matrix::Zero(2, nx);
  C(0, 0) = 1.0;
  C(1, 1) = 1.0;
  Matrix Ao(4, 2);
  Ao << 1, 0, -1, 0, 0, 1, 0, -1;
  const double r = obstacle_side / 2.0;
  Vector bo(4);
  bo << obstacle_center(0) + r, -(obstacle_center(0) - r), obstacle_center(1) + r, -(obstacle_center(1) - r);
  const Vector half = Vector::Constant(2, support_half_width);
  Polytope W = Polytope::box(-half, half);

  MpcConfig mpc;
  mpc.horizon = horizon;
  mpc.cost = StageCost{q_diag.asDiagonal(), r_diag.asDiagonal(), x_target};
  mpc.state_lo = state_lower;
  mpc.state_hi = state_upper;
  mpc.input_lo = input_lower;
  mpc.input_hi = input_upper;
  mpc.start = x_start;
  mpc.terminal_tol = terminal_tol;
  mpc.step_cap = step_cap;

  ExperimentSetup setup{
      Dynamics{A, B},
      mpc,
      ObstacleModel(Polytope(Ao, bo), C, d_min + agent_radius),
      UncertaintyModel{W, sigma, -half, half, seed},
  };
  setup.beta = beta;
  setup.theta = theta;
  setup.iterations = iterations;
  setup.n_clusters = n_clusters;
  setup.initial_samples = initial_samples;
  setup.robust_horizon = robust_horizon;
  setup.clock = clock;
  try {
    setup.validate();
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  return setup;
}

std::string RunConfig::to_json() const {
  json doc;
  doc["beta"] = beta;
  doc["d_min"] = d_min;
  doc["agent_radius"] = agent_radius;
  doc["obstacle_side"] = obstacle_side;
  doc["obstacle_center"] = vec_json(obstacle_center);
  doc["horizon"] = horizon;
  doc["theta"] = theta.size() == 1 ? json(theta.front()) : json(theta);
  doc["iterations"] = iterations;
  doc["n_clusters"] = n_clusters;
  doc["zeta"] = zeta ? json(*zeta) : json(nullptr);
  doc["dynamics"] = {{"A", mat_json(A)}, {"B", mat_json(B)}};
  doc["x_start"] = vec_json(x_start);
  doc["x_target"] = vec_json(x_target);
  doc["q_diag"] = vec_json(q_diag);
  doc["r_diag"] = vec_json(r_diag);
  doc["sigma"] = sigma;
  doc["support_half_width"] = support_half_width;
  doc["initial_samples"] = initial_samples;
  doc["state_lower"] = vec_json(state_lower);
  doc["state_upper"] = vec_json(state_upper);
  doc["input_lower"] = vec_json(input_lower);
  doc["input_upper"] = vec_json(input_upper);
  doc["terminal_tol"] = terminal_tol;
  doc["step_cap"] = step_cap;
  doc["robust_horizon"] = robust_horizon;
  doc["seed"] = seed;
  doc["variant"] = variant;
  doc["output_dir"] = output_dir;
  doc["clock"] = clock_name(clock);
  return doc.dump(2);
}

RunConfig parse_config_text(const std::string& text_in) {
  json doc;
  try {
    doc = json::parse(text_in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: the top level must be a JSON object");

  RunConfig c;
  for (const auto& [key, v] : doc.items()) {
    if (key == "beta") c.beta = number(v, key);
    else if (key == "d_min") c.d_min = number(v, key);
    else if (key == "agent_radius") c.agent_radius = number(v, key);
    else if (key == "obstacle_side") c.obstacle_side = number(v, key);
    else if (key == "obstacle_center") c.obstacle_center = vector(v, key);
    else if (key == "horizon") c.horizon = integer(v, key);
    else if (key == "theta") {
      if (v.is_array()) {
        const Vector t = vector(v, key);
        c.theta.assign(t.data(), t.data() + t.size());
      } else {
        c.theta = {number(v, key)};
      }
    } else if (key == "iterations") {
      const long long n = integer(v, key);
      check(n >= 1 && n <= 10000, key, "must lie in [1, 10000]");
      c.iterations = static_cast<int>(n);
    } else if (key == "n_clusters") c.n_clusters = integer(v, key);
    else if (key == "zeta") {
      if (v.is_null()) c.zeta.reset();
      else c.zeta = number(v, key);
    } else if (key == "dynamics") {
      check(v.is_object(), key, "expected an object with keys A and B");
      for (const auto& [sub, m] : v.items()) {
        if (sub == "A") c.A = matrix(m, "dynamics.A");
        else if (sub == "B") c.B = matrix(m, "dynamics.B");
        else field_error("dynamics." + sub, "unknown key");
      }
    } else if (key == "x_start") c.x_start = vector(v, key);
    else if (key == "x_target") c.x_target = vector(v, key);
    else if (key == "q_diag") c.q_diag = vector(v, key);
    else if (key == "r_diag") c.r_diag = vector(v, key);
    else if (key == "sigma") c.sigma = number(v, key);
    else if (key == "support_half_width") c.support_half_width = number(v, key);
    else if (key == "initial_samples") c.initial_samples = integer(v, key);
    else if (key == "state_lower") c.state_lower = vector(v, key);
    else if (key == "state_upper") c.state_upper = vector(v, key);
    else if (key == "input_lower") c.input_lower = vector(v, key);
    else if (key == "input_upper") c.input_upper = vector(v, key);
    else if (key == "terminal_tol") c.terminal_tol = number(v, key);
    else if (key == "step_cap") {
      const long long n = integer(v, key);
      check(n >= 1 && n <= 100000, key, "must lie in [1, 100000]");
      c.step_cap = static_cast<int>(n);
    } else if (key == "robust_horizon") c.robust_horizon = integer(v, key);
    else if (key == "seed") {
      check(v.is_number_unsigned(), key, "expected a nonnegative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "variant") c.variant = text(v, key);
    else if (key == "output_dir") c.output_dir = text(v, key);
    else if (key == "clock") {
      const std::string s = text(v, key);
      if (s == "wall") c.clock = Clock::wall;
      else if (s == "work") c.clock = Clock::work;
      else field_error(key, "must be wall or work");
    } else {
      field_error(key, "unknown key");
    }
  }
  c.validate();
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace drmpc
