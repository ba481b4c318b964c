#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dgpmpc/common.hpp"

namespace dgpmpc {

struct StepLog {
  Index step = 0;
  double t = 0.0;
  Vector state;   // state the action was taken in
  Vector action;
  double reward = 0.0;
};

struct EpisodeLog {
  std::uint64_t seed = 0;
  Index episode = 0;
  std::vector<StepLog> steps;
  double total_reward = 0.0;  // sum of step rewards in order
  Index replans = 0;
  double wall_seconds = 0.0;  // not written to episodes.csv
  bool aborted = false;
  Warnings warnings;
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  std::vector<Index> episodes;
  std::vector<double> episode_rewards;
  std::vector<Index> control_steps;  // cumulative at the end of each episode
  std::vector<double> max_seen;      // running max of episode_rewards
  double average = 0.0;              // over the first E episodes
};

struct MetricsReport {
  std::vector<SeedMetrics> seeds;
  Index episodes_averaged = 0;
  double mean = 0.0;
  double deviation = 0.0;  // sample standard deviation across seeds; 0 for one seed
};

// Groups logs by seed (ascending) and averages each seed's first
// first_episodes episodes, counting the random episode 0.
MetricsReport compute_metrics(const std::vector<EpisodeLog>& logs, Index first_episodes);

void write_episodes_csv(std::ostream& out, const std::vector<EpisodeLog>& logs,
                        Index state_dim, Index action_dim);
std::vector<EpisodeLog> read_episodes_csv(std::istream& in);

void write_metrics_csv(std::ostream& out, const MetricsReport& report);
void write_metrics_summary(std::ostream& out, const MetricsReport& report);

}  // namespace dgpmpc
