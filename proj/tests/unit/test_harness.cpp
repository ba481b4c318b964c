#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dgpmpc/checkpoint.hpp"
#include "dgpmpc/config.hpp"
#include "dgpmpc/harness.hpp"
#include "dgpmpc/metrics.hpp"

using namespace dgpmpc;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  return resolve_config({}, {{"episodes", "2"},
                             {"task-horizon", "8"},
                             {"inducing", "8"},
                             {"popsize", "12"},
                             {"particles", "2"},
                             {"horizon", "4"},
                             {"cem-iters", "2"},
                             {"burn-in", "20"},
                             {"step-budget", "40"},
                             {"thinning", "5"},
                             {"reservoir", "4"},
                             {"minibatch", "16"}});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

EpisodeLog episode(std::uint64_t seed, Index e, std::vector<double> rewards) {
  EpisodeLog log;
  log.seed = seed;
  log.episode = e;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    StepLog s;
    s.step = static_cast<Index>(i);
    s.t = 0.05 * static_cast<double>(i);
    s.state = Vector::Constant(2, 0.1 * static_cast<double>(i));
    s.action = Vector::Constant(1, -0.3);
    s.reward = rewards[i];
    log.total_reward += rewards[i];
    log.steps.push_back(s);
  }
  return log;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dgpmpc_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("empty config gives the table defaults") {
  std::istringstream empty("");
  const RunConfig c = resolve_config(parse_config_text(empty, "empty"), {});
  CHECK(c.inducing == 200);
  CHECK(c.planner.num_particles == 5);
  CHECK(c.planner.num_sequences == 300);
  CHECK(c.planner.elite_fraction == 0.1);
  CHECK(c.planner.cem_iterations == 5);
  CHECK(c.planner.horizon == 30);
  CHECK(c.planner.actions_per_replan == 1);
  CHECK(c.task_horizon == 200);
  CHECK(c == RunConfig{});

  const RunConfig r = resolve_config({{"env", "reacher"}}, {});
  CHECK(r.planner.horizon == 20);
  CHECK(r.task_horizon == 150);

  const RunConfig h = resolve_config({{"preset", "cheetah"}}, {});
  CHECK(h.planner.horizon == 40);
  CHECK(h.planner.cem_iterations == 10);
  CHECK(h.planner.actions_per_replan == 2);
  CHECK(h.metric_episodes == 10);
}

TEST_CASE("command line values override the file") {
  std::istringstream file("layers = 2\nkernel = sexp  # comment\nhorizon = 12\n");
  const RunConfig c =
      resolve_config(parse_config_text(file, "f"), {{"layers", "3"}, {"kernel", "matern32"}});
  CHECK(c.layers == 3);
  CHECK(c.kernel_for_layer(2) == KernelFamily::kMatern32);
  CHECK(c.planner.horizon == 12);

  std::istringstream preset_after("horizon = 7\npreset = cheetah\n");
  CHECK(resolve_config(parse_config_text(preset_after, "f"), {}).planner.horizon == 7);
}

TEST_CASE("config errors carry context") {
  CHECK_THROWS_WITH_AS(resolve_config({}, {{"elite-frac", "1.5"}}),
                       doctest::Contains("elite-frac"), ConfigError);
  std::istringstream unknown("layers = 2\nbogus = 1\n");
  CHECK_THROWS_WITH_AS(parse_config_text(unknown, "run.toml"), doctest::Contains("run.toml:2"),
                       ConfigError);
  std::istringstream no_eq("layers 2\n");
  CHECK_THROWS_AS(parse_config_text(no_eq, "x"), ConfigError);
  CHECK_THROWS_AS(resolve_config({}, {{"layers", "two"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({}, {{"kernel", "rbf"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({}, {{"layers", "3"}, {"kernel", "sexp,matern32"}}), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/run.toml"), ConfigError);
}

TEST_CASE("config echo re-parses to an equal config") {
  RunConfig c = resolve_config({}, {{"layers", "3"},
                                    {"kernel", "sexp,matern52,matern12"},
                                    {"step-size", "0.00031"},
                                    {"hyper-lr", "0.123456789012345"},
                                    {"seed", "18446744073709551615"},
                                    {"oracle-dynamics", "true"},
                                    {"out", "some dir/x"},
                                    {"elite-frac", "0.15"}});
  std::ostringstream out;
  write_config(out, c);
  std::istringstream in(out.str());
  CHECK(resolve_config(parse_config_text(in, "echo"), {}) == c);
}

TEST_CASE("metrics on a single episode") {
  const MetricsReport m = compute_metrics({episode(0, 0, {40.0, 2.0})}, 15);
  REQUIRE(m.seeds.size() == 1);
  CHECK(m.mean == 42.0);
  CHECK(m.deviation == 0.0);
  CHECK(m.seeds[0].max_seen == std::vector<double>{42.0});
  CHECK(m.seeds[0].control_steps == std::vector<Index>{2});
}

TEST_CASE("metrics across seeds") {
  const std::vector<EpisodeLog> logs = {episode(2, 0, {20.0}), episode(1, 0, {4.0}),
                                        episode(1, 1, {16.0}), episode(1, 2, {100.0}),
                                        episode(2, 1, {20.0})};
  const MetricsReport m = compute_metrics(logs, 2);
  REQUIRE(m.seeds.size() == 2);
  CHECK(m.seeds[0].seed == 1);
  CHECK(m.seeds[0].average == 10.0);
  CHECK(m.seeds[1].average == 20.0);
  CHECK(m.mean == 15.0);
  CHECK(m.deviation == doctest::Approx(std::sqrt(50.0)));
  for (const auto& s : m.seeds)
    for (std::size_t i = 1; i < s.max_seen.size(); ++i) CHECK(s.max_seen[i] >= s.max_seen[i - 1]);
  CHECK(m.seeds[0].max_seen == std::vector<double>{4.0, 16.0, 100.0});

  std::ostringstream csv, summary;
  write_metrics_csv(csv, m);
  write_metrics_summary(summary, m);
  CHECK(csv.str().rfind("seed,episode,control_steps,episode_reward,max_seen_reward\n", 0) == 0);
  CHECK(summary.str().find("15") != std::string::npos);
}

TEST_CASE("episodes csv round trip") {
  const std::vector<EpisodeLog> logs = {episode(3, 0, {0.1, 0.2, 1.0 / 3.0}),
                                        episode(3, 1, {-2.5e-17, 7.0})};
  std::ostringstream out;
  write_episodes_csv(out, logs, 2, 1);
  CHECK(out.str().rfind("seed,episode,step,t,action_0,state_0,state_1,reward\n", 0) == 0);
  std::istringstream in(out.str());
  const std::vector<EpisodeLog> back = read_episodes_csv(in);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].total_reward == logs[i].total_reward);
    CHECK(back[i].steps.size() == logs[i].steps.size());
    CHECK(back[i].steps.back().state == logs[i].steps.back().state);
  }
}

TEST_CASE("a single episode only collects random data") {
  RunConfig c = tiny_config();
  c.episodes = 1;
  const ExperimentResult r = run_experiment(c);
  REQUIRE(r.episodes.size() == 1);
  CHECK(r.dataset.size() == 8);
  CHECK(r.episodes[0].replans == 0);
  CHECK(!r.checkpoint);
  const Environment env = make_environment(c.env);
  for (const auto& s : r.episodes[0].steps) {
    CHECK(s.action(0) >= env.action_low(0));
    CHECK(s.action(0) <= env.action_high(0));
  }
}

TEST_CASE("learning loop grows the dataset and replans on cadence") {
  RunConfig c = tiny_config();
  c.episodes = 3;
  c.task_horizon = 7;
  c.planner.actions_per_replan = 2;
  const ExperimentResult r = run_experiment(c);
  REQUIRE(!r.numerical_failure);
  REQUIRE(r.episodes.size() == 3);
  CHECK(r.dataset.size() == 21);
  CHECK(r.episodes[1].replans == 4);
  CHECK(r.episodes[2].replans == 4);
  CHECK(r.checkpoint.has_value());
  for (const auto& e : r.episodes) CHECK(e.steps.size() == 7);
}

TEST_CASE("same seed gives identical files for any worker count") {
  RunConfig c = tiny_config();
  const fs::path a = scratch_dir("a"), b = scratch_dir("b"), other = scratch_dir("c");
  write_outputs(run_experiment(c), a.string());
  c.planner.workers = 3;
  write_outputs(run_experiment(c), b.string());
  for (const char* f : {"episodes.csv", "metrics.csv", "metrics_summary.csv",
                        "training_trace.csv", "planner_debug.csv", "model.ckpt"}) {
    INFO(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  // The echo differs only in the worker count.
  CHECK(slurp(a / "config.echo.toml") != slurp(b / "config.echo.toml"));

  c.seed = 1;
  write_outputs(run_experiment(c), other.string());
  CHECK(slurp(a / "episodes.csv") != slurp(other / "episodes.csv"));
  for (const auto& p : {a, b, other}) fs::remove_all(p);
}

TEST_CASE("oracle mode plans with the simulator") {
  RunConfig c = tiny_config();
  c.oracle_dynamics = true;
  const ExperimentResult r = run_experiment(c);
  CHECK(r.episodes.size() == 2);
  CHECK(r.episodes[1].replans == 8);
  CHECK(!r.checkpoint);
  CHECK(r.training_trace.find('\n') == r.training_trace.size() - 1);  // header only
}

TEST_CASE("checkpoint round trip") {
  RunConfig c = tiny_config();
  const ExperimentResult r = run_experiment(c);
  REQUIRE(r.checkpoint);
  std::stringstream io;
  write_checkpoint(io, *r.checkpoint);
  const Checkpoint back = read_checkpoint(io);
  const DgpModel& m = r.checkpoint->model;
  CHECK(back.model.log_noise_precision == m.log_noise_precision);
  CHECK(back.model.normalizer.target_scale == m.normalizer.target_scale);
  REQUIRE(back.model.layers.size() == m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    CHECK(back.model.layers[l].inducing_inputs == m.layers[l].inducing_inputs);
    CHECK(back.model.layers[l].kernel.log_lengthscales() == m.layers[l].kernel.log_lengthscales());
    CHECK(back.model.layers[l].mean_kind == m.layers[l].mean_kind);
  }
  REQUIRE(back.samples.size() == r.checkpoint->samples.size());
  for (std::size_t i = 0; i < back.samples.size(); ++i)
    CHECK(back.samples[i].inducing_outputs == r.checkpoint->samples[i].inducing_outputs);

  std::istringstream bad("NOTACKPT\n");
  CHECK_THROWS(read_checkpoint(bad));
}
