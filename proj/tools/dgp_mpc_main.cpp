#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dgpmpc/harness.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

int run_metrics(const std::vector<std::string>& dirs, dgpmpc::Index first_episodes) {
  std::vector<dgpmpc::EpisodeLog> logs;
  for (const auto& dir : dirs) {
    const auto path = (std::filesystem::path(dir) / "episodes.csv").string();
    std::ifstream in(path);
    if (!in) {
      std::cerr << path << ": cannot open\n";
      return kExitConfig;
    }
    auto part = dgpmpc::read_episodes_csv(in);
    logs.insert(logs.end(), part.begin(), part.end());
  }
  const auto report = dgpmpc::compute_metrics(logs, first_episodes);
  dgpmpc::write_metrics_csv(std::cout, report);
  std::cout << '\n';
  dgpmpc::write_metrics_summary(std::cout, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DGP-MPC experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run one seed of the episode loop");
  std::string config_path;
  run->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);

  // Flags that were given on the command line become overrides.
  struct Flag {
    const char* name;
    const char* key;
    const char* help;
  };
  const std::vector<Flag> flags = {
      {"--env", "env", "cartpole-modified, cartpole-center or reacher"},
      {"--preset", "preset", "cartpole, reacher or cheetah planner settings"},
      {"--layers", "layers", "number of GP layers"},
      {"--kernel", "kernel", "sexp, matern52, matern32 or matern12 (comma list per layer)"},
      {"--episodes", "episodes", "episodes including the random one"},
      {"--task-horizon", "task-horizon", "control steps per episode"},
      {"--seed", "seed", "base seed"},
      {"--inducing", "inducing", "inducing points M"},
      {"--particles", "particles", "particles P"},
      {"--popsize", "popsize", "CEM population K"},
      {"--horizon", "horizon", "planning horizon H"},
      {"--cem-iters", "cem-iters", "CEM iterations"},
      {"--elite-frac", "elite-frac", "elite fraction"},
      {"--actions-per-replan", "actions-per-replan", "actions executed per plan"},
      {"--workers", "workers", "rollout threads"},
      {"--step-budget", "step-budget", "SG-HMC steps per episode"},
      {"--metric-episodes", "metric-episodes", "episodes averaged in metrics"},
      {"--out", "out", "output directory"},
  };
  std::vector<std::string> values(flags.size());
  std::vector<CLI::Option*> options;
  for (std::size_t i = 0; i < flags.size(); ++i)
    options.push_back(run->add_option(flags[i].name, values[i], flags[i].help));
  bool oracle = false;
  auto* oracle_flag = run->add_flag("--oracle-dynamics", oracle, "plan with the true simulator");
  bool quiet = false;
  run->add_flag("--quiet", quiet, "no progress output");

  auto* metrics = app.add_subcommand("metrics", "aggregate episodes.csv across run directories");
  std::vector<std::string> dirs;
  dgpmpc::Index first_episodes = 15;
  metrics->add_option("--in", dirs, "run directories")->required();
  metrics->add_option("--episodes", first_episodes, "episodes averaged per seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (metrics->parsed()) {
    try {
      return run_metrics(dirs, first_episodes);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitConfig;
    }
  }

  dgpmpc::RunConfig config;
  try {
    dgpmpc::KeyValues overrides;
    for (std::size_t i = 0; i < flags.size(); ++i)
      if (options[i]->count() > 0) overrides.emplace_back(flags[i].key, values[i]);
    if (oracle_flag->count() > 0) overrides.emplace_back("oracle-dynamics", oracle ? "true" : "false");
    config = dgpmpc::load_config(config_path, overrides);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    const auto result = dgpmpc::run_experiment(config, quiet ? nullptr : &std::cerr);
    dgpmpc::write_outputs(result, config.out);
    if (result.numerical_failure) {
      std::cerr << "numerical failure: " << result.failure_message << '\n';
      return kExitNumerical;
    }
  } catch (const dgpmpc::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const dgpmpc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}
