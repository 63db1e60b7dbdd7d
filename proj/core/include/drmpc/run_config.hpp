#pragma once

#include "drmpc/common.hpp"
#include "drmpc/experiment.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace drmpc {

/// Everything a `plan` run needs. A default-constructed RunConfig holds the
/// path-planning study's parameters.
struct RunConfig {
  RunConfig();

  double beta = 0.05;
  double d_min = 0.1;
  double agent_radius = 0.2;
  double obstacle_side = 1.0;
  Vector obstacle_center;
  Index horizon = 11;
  std::vector<double> theta{1e-3};
  int iterations = 20;
  Index n_clusters = 5;
  std::optional<double> zeta;  // recorded only
  Matrix A;
  Matrix B;
  Vector x_start;
  Vector x_target;
  Vector q_diag;
  Vector r_diag;
  double sigma = 0.15;
  double support_half_width = 0.45;
  Index initial_samples = 15;
  Vector state_lower, state_upper;
  Vector input_lower, input_upper;
  double terminal_tol = 1e-2;
  int step_cap = 200;
  Index robust_horizon = 30;
  std::uint64_t seed = 0;
  std::string variant = "all";
  std::string output_dir = "out";
  Clock clock = Clock::wall;

  /// Range and consistency checks; throws ConfigError naming the field.
  void validate() const;

  /// Variants selected by `variant` ("all" expands to the three).
  std::vector<Variant> variants() const;

  ExperimentSetup to_setup() const;

  /// Canonical JSON; parse_config_text(to_json()) reproduces the config.
  std::string to_json() const;
};

/// Parses and validates a JSON object. Omitted keys keep their defaults;
/// unknown keys, wrong types and out-of-range values throw ConfigError.
RunConfig parse_config_text(const std::string& text);

/// Reads a config file; a missing or unreadable file is a ConfigError.
RunConfig parse_config(const std::filesystem::path& path);

}  // namespace drmpc
