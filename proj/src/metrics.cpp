#include "dgpmpc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dgpmpc {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<EpisodeLog>& logs, Index first_episodes) {
  if (logs.empty()) throw std::invalid_argument("compute_metrics: no episode logs");
  if (first_episodes < 1) throw std::invalid_argument("compute_metrics: E must be >= 1");
  std::map<std::uint64_t, std::vector<const EpisodeLog*>> by_seed;
  for (const auto& log : logs) by_seed[log.seed].push_back(&log);

  MetricsReport report;
  report.episodes_averaged = first_episodes;
  for (auto& [seed, episodes] : by_seed) {
    std::stable_sort(episodes.begin(), episodes.end(),
                     [](const EpisodeLog* a, const EpisodeLog* b) { return a->episode < b->episode; });
    SeedMetrics m;
    m.seed = seed;
    Index steps = 0;
    double best = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    Index counted = 0;
    for (const EpisodeLog* e : episodes) {
      steps += static_cast<Index>(e->steps.size());
      best = std::max(best, e->total_reward);
      m.episodes.push_back(e->episode);
      m.episode_rewards.push_back(e->total_reward);
      m.control_steps.push_back(steps);
      m.max_seen.push_back(best);
      if (counted < first_episodes) {
        sum += e->total_reward;
        ++counted;
      }
    }
    m.average = sum / static_cast<double>(counted);
    report.seeds.push_back(std::move(m));
  }

  const double n = static_cast<double>(report.seeds.size());
  for (const auto& s : report.seeds) report.mean += s.average / n;
  if (report.seeds.size() > 1) {
    double ss = 0.0;
    for (const auto& s : report.seeds) ss += (s.average - report.mean) * (s.average - report.mean);
    report.deviation = std::sqrt(ss / (n - 1.0));
  }
  return report;
}

void write_episodes_csv(std::ostream& out, const std::vector<EpisodeLog>& logs,
                        Index state_dim, Index action_dim) {
  out << "seed,episode,step,t";
  for (Index a = 0; a < action_dim; ++a) out << ",action_" << a;
  for (Index s = 0; s < state_dim; ++s) out << ",state_" << s;
  out << ",reward\n";
  out << std::setprecision(17);
  for (const auto& log : logs) {
    for (const auto& st : log.steps) {
      out << log.seed << ',' << log.episode << ',' << st.step << ',' << st.t;
      for (Index a = 0; a < action_dim; ++a) out << ',' << st.action(a);
      for (Index s = 0; s < state_dim; ++s) out << ',' << st.state(s);
      out << ',' << st.reward << '\n';
    }
  }
}

std::vector<EpisodeLog> read_episodes_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("episodes.csv: missing header");
  const auto header = split_csv(line);
  Index actions = 0, states = 0;
  for (const auto& h : header) {
    if (h.rfind("action_", 0) == 0) ++actions;
    if (h.rfind("state_", 0) == 0) ++states;
  }
  if (static_cast<Index>(header.size()) != 5 + actions + states)
    throw std::runtime_error("episodes.csv: unexpected header");

  std::vector<EpisodeLog> logs;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw std::runtime_error("episodes.csv line " + std::to_string(number) + ": wrong column count");
    const std::uint64_t seed = std::stoull(cells[0]);
    const Index episode = std::stoll(cells[1]);
    if (logs.empty() || logs.back().seed != seed || logs.back().episode != episode) {
      logs.emplace_back();
      logs.back().seed = seed;
      logs.back().episode = episode;
    }
    StepLog st;
    st.step = std::stoll(cells[2]);
    st.t = std::stod(cells[3]);
    st.action.resize(actions);
    st.state.resize(states);
    for (Index a = 0; a < actions; ++a) st.action(a) = std::stod(cells[static_cast<std::size_t>(4 + a)]);
    for (Index s = 0; s < states; ++s)
      st.state(s) = std::stod(cells[static_cast<std::size_t>(4 + actions + s)]);
    st.reward = std::stod(cells.back());
    logs.back().total_reward += st.reward;
    logs.back().steps.push_back(std::move(st));
  }
  return logs;
}

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << "seed,episode,control_steps,episode_reward,max_seen_reward\n" << std::setprecision(17);
  for (const auto& s : report.seeds)
    for (std::size_t i = 0; i < s.episodes.size(); ++i)
      out << s.seed << ',' << s.episodes[i] << ',' << s.control_steps[i] << ','
          << s.episode_rewards[i] << ',' << s.max_seen[i] << '\n';
}

void write_metrics_summary(std::ostream& out, const MetricsReport& report) {
  out << "num_seeds,episodes_averaged,mean_average_reward,std_average_reward\n"
      << std::setprecision(17) << report.seeds.size() << ',' << report.episodes_averaged << ','
      << report.mean << ',' << report.deviation << '\n';
}

}  // namespace dgpmpc
