#include "dgpmpc/harness.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dgpmpc/inference.hpp"
#include "dgpmpc/planning.hpp"

namespace dgpmpc {
namespace {

// Stream purposes for derive_seed(seed, {episode, purpose, ...}).
enum : std::uint64_t { kReset = 0, kRandomAction = 1, kTrain = 2, kParticles = 3, kPlan = 4 };

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Vector uniform_action(const Environment& env, RngStream& rng) {
  Vector a(env.action_dim);
  for (Index i = 0; i < env.action_dim; ++i)
    a(i) = env.action_low(i) + (env.action_high(i) - env.action_low(i)) * rng.uniform();
  return a;
}

DgpModel initial_model(const RunConfig& config, const Environment& env) {
  ModelShape shape;
  shape.state_dim = env.state_dim;
  shape.action_dim = env.action_dim;
  shape.num_layers = config.layers;
  shape.num_inducing = config.inducing;
  shape.family = config.kernel_for_layer(0);
  DgpModel model = make_dgp_model(shape);
  for (Index l = 0; l < config.layers; ++l) {
    auto& kernel = model.layers[static_cast<std::size_t>(l)].kernel;
    kernel = KernelSpec::from_log(config.kernel_for_layer(l), kernel.log_lengthscales(),
                                  kernel.log_signal_variance());
  }
  return model;
}

void append_trace(std::ostringstream& out, Index episode, const std::vector<TraceRow>& rows,
                  Index num_layers) {
  std::ostringstream body;
  body << std::setprecision(17);
  write_trace_csv(body, rows, num_layers, false);
  std::istringstream lines(body.str());
  std::string line;
  while (std::getline(lines, line)) out << episode << ',' << line << '\n';
}

}  // namespace

ExperimentResult run_experiment(const RunConfig& config, std::ostream* progress,
                                const StopRule& stop) {
  config.validate();
  ExperimentResult result;
  result.config = config;
  const Environment env = make_environment(config.env);
  const PlannerConfig& pc = config.planner;

  DgpModel model = initial_model(config, env);
  PosteriorReservoir reservoir(model, config.sghmc.reservoir_size);
  HyperOptimizer optimizer;
  bool trained = false;

  std::ostringstream trace, debug, timing;
  trace << "episode,step,neg_log_joint,beta";
  for (Index l = 0; l < config.layers; ++l) trace << ",mean_lengthscale_" << l;
  trace << ",jitter_warnings\n";
  debug << "episode,env_step,iteration,best,mean,worst,proposal_mean_norm\n" << std::setprecision(17);
  bool debug_header = false;

  for (Index e = 0; e < config.episodes; ++e) {
    const auto ue = static_cast<std::uint64_t>(e);
    const auto episode_start = std::chrono::steady_clock::now();
    EpisodeLog log;
    log.seed = config.seed;
    log.episode = e;
    double train_seconds = 0.0;

    try {
      if (e > 0 && !config.oracle_dynamics) {
        const auto t0 = std::chrono::steady_clock::now();
        RngStream train_rng(derive_seed(config.seed, {ue, kTrain}));
        prepare_for_training(model, reservoir, result.dataset, train_rng);
        TrainResult tr = train_model(model, reservoir, optimizer, result.dataset, config.sghmc,
                                     config.hyper, train_rng);
        model = std::move(tr.model);
        reservoir = std::move(tr.reservoir);
        optimizer = std::move(tr.optimizer);
        for (auto& w : tr.warnings) log.warnings.push_back("training: " + w);
        append_trace(trace, e, tr.trace, config.layers);
        trained = true;
        train_seconds = seconds_since(t0);
      }

      RngStream reset_rng(derive_seed(config.seed, {ue, kReset}));
      RngStream action_rng(derive_seed(config.seed, {ue, kRandomAction}));
      Vector state = env.reset(reset_rng);
      CemProposal proposal = initial_proposal(pc.horizon, env.action_low, env.action_high);
      Matrix planned;

      for (Index step = 0; step < config.task_horizon; ++step) {
        const auto us = static_cast<std::uint64_t>(step);
        Vector action;
        if (e == 0) {
          action = uniform_action(env, action_rng);
        } else {
          const Index offset = step % pc.actions_per_replan;
          if (offset == 0) {
            PlanResult pr;
            if (config.oracle_dynamics) {
              OracleTransitionSampler sampler(env.step);
              pr = plan(sampler, state, proposal, pc, env.reward, derive_seed(config.seed, {ue, kPlan, us}));
            } else {
              RngStream particle_rng(derive_seed(config.seed, {ue, kParticles, us}));
              DgpTransitionSampler sampler(
                  model, draw_particle_samples(reservoir, pc.num_particles, particle_rng),
                  pc.include_noise);
              pr = plan(sampler, state, proposal, pc, env.reward, derive_seed(config.seed, {ue, kPlan, us}));
            }
            ++log.replans;
            for (auto& w : pr.warnings) log.warnings.push_back("planning step " + std::to_string(step) + ": " + w);
            planned = pr.actions;
            proposal = shift_proposal(pr.proposal, pc.actions_per_replan);
            std::ostringstream rows;
            rows << std::setprecision(17);
            write_planner_debug_csv(rows, step, pr.iterations, debug_header);
            std::istringstream lines(rows.str());
            std::string line;
            while (std::getline(lines, line)) debug << e << ',' << line << '\n';
          }
          action = planned.row(offset).transpose();
        }
        const Vector next = env.step(state, action);
        StepLog st;
        st.step = step;
        st.t = static_cast<double>(step) * env.dt;
        st.state = state;
        st.action = action;
        st.reward = env.reward(next, action);
        log.total_reward += st.reward;
        log.steps.push_back(std::move(st));
        result.dataset.push_back({state, action, next});
        state = next;
      }
    } catch (const NumericalFailure& err) {
      log.aborted = true;
      result.numerical_failure = true;
      result.failure_message = "episode " + std::to_string(e) + ": " + err.what();
      log.warnings.push_back(result.failure_message);
    }

    log.wall_seconds = seconds_since(episode_start);
    timing << "episode " << e << " total_s " << log.wall_seconds << " train_s " << train_seconds
           << " replans " << log.replans << '\n';
    if (progress)
      *progress << "seed " << config.seed << " episode " << e << " reward " << log.total_reward
                << " (" << std::fixed << std::setprecision(1) << log.wall_seconds << " s)"
                << std::defaultfloat << std::setprecision(6) << std::endl;
    for (const auto& w : log.warnings)
      result.warnings.push_back("episode " + std::to_string(e) + ": " + w);
    result.episodes.push_back(std::move(log));
    if (result.numerical_failure) break;
    if (stop && stop(result.episodes)) break;
  }

  result.training_trace = trace.str();
  result.planner_debug = debug.str();
  result.timing = timing.str();
  if (trained) {
    Checkpoint ck;
    ck.model = model;
    ck.samples.assign(reservoir.samples().begin(), reservoir.samples().end());
    result.checkpoint = std::move(ck);
  }
  return result;
}

void write_outputs(const ExperimentResult& result, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(dir + ": cannot create output directory: " + ec.message());
  auto open = [&](const std::string& name) {
    const std::string path = (fs::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    return out;
  };
  auto check = [&](std::ofstream& out, const std::string& name) {
    out.flush();
    if (!out) throw std::runtime_error((fs::path(dir) / name).string() + ": write failed");
  };

  const Environment env = make_environment(result.config.env);
  {
    auto out = open("episodes.csv");
    write_episodes_csv(out, result.episodes, env.state_dim, env.action_dim);
    check(out, "episodes.csv");
  }
  const MetricsReport report = compute_metrics(result.episodes, result.config.metric_episodes);
  {
    auto out = open("metrics.csv");
    write_metrics_csv(out, report);
    check(out, "metrics.csv");
  }
  {
    auto out = open("metrics_summary.csv");
    write_metrics_summary(out, report);
    check(out, "metrics_summary.csv");
  }
  {
    auto out = open("config.echo.toml");
    write_config(out, result.config);
    check(out, "config.echo.toml");
  }
  {
    auto out = open("warnings.log");
    for (const auto& w : result.warnings) out << w << '\n';
    check(out, "warnings.log");
  }
  {
    auto out = open("timing.log");
    out << result.timing;
    check(out, "timing.log");
  }
  {
    auto out = open("training_trace.csv");
    out << result.training_trace;
    check(out, "training_trace.csv");
  }
  {
    auto out = open("planner_debug.csv");
    out << result.planner_debug;
    check(out, "planner_debug.csv");
  }
  if (result.checkpoint) save_checkpoint((fs::path(dir) / "model.ckpt").string(), *result.checkpoint);
}

}  // namespace dgpmpc
