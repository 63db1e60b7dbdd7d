#pragma once

#include "drmpc/experiment.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace drmpc {

/// One row per executed state (t = 0..T_j) of every iteration; the input and
/// step-time columns are empty on the final row of a trajectory.
void write_trajectories_csv(std::ostream& os, const std::vector<ExperimentResult>& results);

/// Per-variant, per-iteration totals, mean step time and iteration cost.
std::string metrics_json(const std::vector<ExperimentResult>& results, Clock clock);

/// Position traces over the nominal obstacle and its displacement halo.
std::string trajectories_svg(const std::vector<ExperimentResult>& results, const ExperimentSetup& setup);
/// Mean step time per iteration.
std::string timing_svg(const std::vector<ExperimentResult>& results, Clock clock);
/// Iteration cost, with the robust initial trajectory's cost for reference.
std::string cost_svg(const std::vector<ExperimentResult>& results);

/// Writes trajectories.csv, metrics.json, trajectories.svg, timing.svg and
/// cost.svg into out_dir (created if needed). Throws IoError on failure.
void emit_outputs(const std::vector<ExperimentResult>& results, const ExperimentSetup& setup,
                  const std::filesystem::path& out_dir);

}  // namespace drmpc
