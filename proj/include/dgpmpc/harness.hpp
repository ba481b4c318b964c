#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dgpmpc/checkpoint.hpp"
#include "dgpmpc/config.hpp"
#include "dgpmpc/environments.hpp"
#include "dgpmpc/metrics.hpp"

namespace dgpmpc {

struct ExperimentResult {
  RunConfig config;
  std::vector<EpisodeLog> episodes;
  std::vector<Transition> dataset;
  Warnings warnings;
  std::string training_trace;  // CSV text
  std::string planner_debug;   // CSV text
  std::string timing;          // wall-clock lines, kept out of the CSVs
  std::optional<Checkpoint> checkpoint;
  bool numerical_failure = false;
  std::string failure_message;
};

// Episode 0 takes uniform random actions. Every later episode retrains the
// model on all data (warm-started from the previous episode), then replans
// every actions_per_replan steps. With oracle_dynamics the planner rolls out
// the true simulator and no model is trained.
//
// A NumericalFailure ends the run with a partial log and numerical_failure set.
//
// stop, when set, is called after every episode with the logs so far; a true
// return ends the run early.
using StopRule = std::function<bool(const std::vector<EpisodeLog>&)>;
ExperimentResult run_experiment(const RunConfig& config, std::ostream* progress = nullptr,
                                const StopRule& stop = {});

// episodes.csv, metrics.csv, metrics_summary.csv, config.echo.toml,
// warnings.log, timing.log, training_trace.csv, planner_debug.csv and
// model.ckpt when a model was trained.
void write_outputs(const ExperimentResult& result, const std::string& dir);

}  // namespace dgpmpc
