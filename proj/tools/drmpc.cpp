#include "drmpc/experiment.hpp"
#include "drmpc/log.hpp"
#include "drmpc/outputs.hpp"
#include "drmpc/run_config.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kIo = 3, kSolve = 4 };

struct PlanArgs {
  std::string config;
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> iterations;
  std::optional<std::string> checkpoint;
};

std::string checkpoint_for(const std::string& path, drmpc::Variant v, bool several) {
  if (!several) return path;
  const std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + "." + drmpc::to_string(v) + p.extension().string())).string();
}

int run_plan(const PlanArgs& args) {
  using namespace drmpc;
  RunConfig cfg;
  ExperimentSetup setup = [&] {
    cfg = parse_config(args.config);
    if (args.variant) cfg.variant = *args.variant;
    if (args.seed) cfg.seed = *args.seed;
    if (args.out) cfg.output_dir = *args.out;
    if (args.iterations) cfg.iterations = *args.iterations;
    cfg.validate();
    return cfg.to_setup();
  }();

  // Fail on an unusable output directory before spending time on the run.
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.output_dir + ": " + ec.message());

  const std::vector<Variant> variants = cfg.variants();
  std::vector<ExperimentResult> results;
  for (const Variant v : variants) {
    log_info("variant " + to_string(v) + ": " + std::to_string(setup.iterations) + " iterations, seed " +
             std::to_string(setup.uncertainty.seed));
    RunOptions options;
    if (args.checkpoint) options.checkpoint_path = checkpoint_for(*args.checkpoint, v, variants.size() > 1);
    options.on_iteration = [&](const IterationRecord& r) {
      log_info(to_string(v) + " iteration " + std::to_string(r.iteration) + ": cost " + std::to_string(r.cost) +
               ", " + std::to_string(r.inputs.size()) + " steps");
    };
    results.push_back(run_iterations(setup, v, options));
  }
  emit_outputs(results, setup, cfg.output_dir);
  log_info("wrote outputs to " + cfg.output_dir);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    drmpc::configure_logging_from_env();
  } catch (const drmpc::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }

  CLI::App app{"Iterative MPC with distributionally robust safety constraints"};
  app.require_subcommand(1);
  PlanArgs args;
  CLI::App* plan = app.add_subcommand("plan", "Run the iterative experiment and write CSV, JSON and SVG outputs");
  plan->add_option("--config", args.config, "JSON run configuration")->required();
  plan->add_option("--variant", args.variant, "Safety set: wass, cl-wass, inn or all")
      ->check(CLI::IsMember({"wass", "cl-wass", "inn", "all"}));
  plan->add_option("--seed", args.seed, "Sampling seed (overrides the config)");
  plan->add_option("--out", args.out, "Output directory (overrides the config)");
  plan->add_option("--iterations", args.iterations, "Number of iterations (overrides the config)");
  plan->add_option("--checkpoint", args.checkpoint,
                   "Checkpoint file, resumed when present; suffixed per variant with --variant all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    return run_plan(args);
  } catch (const drmpc::ConfigError& e) {
    drmpc::log_error(std::string("config: ") + e.what());
    return kConfig;
  } catch (const drmpc::InputError& e) {
    drmpc::log_error(std::string("config: ") + e.what());
    return kConfig;
  } catch (const drmpc::IoError& e) {
    drmpc::log_error(std::string("io: ") + e.what());
    return kIo;
  } catch (const drmpc::InfeasibleError& e) {
    drmpc::log_error(std::string("infeasible: ") + e.what());
    return kSolve;
  } catch (const drmpc::NonConvergenceError& e) {
    drmpc::log_error(std::string("non-convergence: ") + e.what());
    return kSolve;
  } catch (const drmpc::NumericalError& e) {
    drmpc::log_error(std::string("numerical: ") + e.what());
    return kSolve;
  } catch (const std::exception& e) {
    drmpc::log_error(std::string("unexpected: ") + e.what());
    return 1;
  }
}
