#include "dgpmpc/planning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace dgpmpc {
namespace {

Matrix stack_step(const ActionSequences& actions, Index t) {
  const Index K = static_cast<Index>(actions.size());
  Matrix out(K, actions.front().cols());
  for (Index k = 0; k < K; ++k) out.row(k) = actions[static_cast<std::size_t>(k)].row(t);
  return out;
}

void clip_rows(Matrix& m, const Vector& low, const Vector& high) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = std::clamp(m(i, j), low(j), high(j));
}

}  // namespace

CemProposal initial_proposal(Index horizon, const Vector& low, const Vector& high) {
  if (low.size() != high.size() || (high.array() < low.array()).any())
    throw std::invalid_argument("initial_proposal: invalid action bounds");
  CemProposal p;
  p.low = low;
  p.high = high;
  const Vector mid = 0.5 * (low + high);
  const Vector var = ((high - low) / 4.0).array().square().max(kVarianceFloor);
  p.mean = mid.transpose().replicate(horizon, 1);
  p.variance = var.transpose().replicate(horizon, 1);
  return p;
}

Index PlannerConfig::elite_count() const {
  return std::max<Index>(1, std::llround(elite_fraction * static_cast<double>(num_sequences)));
}

void PlannerConfig::validate() const {
  if (horizon < 1 || num_sequences < 1 || num_particles < 1 || cem_iterations < 0)
    throw std::invalid_argument("planner horizon, sequences and particles must be >= 1");
  if (!(elite_fraction > 0.0 && elite_fraction <= 1.0))
    throw std::invalid_argument("elite fraction must lie in (0, 1]");
  if (actions_per_replan < 1 || actions_per_replan > horizon)
    throw std::invalid_argument("actions per replan must lie in [1, horizon]");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
}

DgpTransitionSampler::DgpTransitionSampler(const DgpModel& model,
                                           std::vector<PosteriorSample> particle_samples,
                                           bool include_noise)
    : samples_(std::move(particle_samples)), include_noise_(include_noise) {
  if (samples_.empty()) throw std::invalid_argument("DgpTransitionSampler needs samples");
  predictors_.reserve(samples_.size());
  for (const auto& s : samples_) predictors_.emplace_back(model, s);
}

Matrix DgpTransitionSampler::sample_next(Index particle, const Matrix& states,
                                         const Matrix& actions, RngStream& rng) const {
  const auto& predictor = predictors_[static_cast<std::size_t>(particle) % predictors_.size()];
  return predictor.predict_next_states(states, actions, include_noise_, rng);
}

Matrix OracleTransitionSampler::sample_next(Index, const Matrix& states,
                                            const Matrix& actions, RngStream&) const {
  Matrix out(states.rows(), states.cols());
  for (Index k = 0; k < states.rows(); ++k)
    out.row(k) = step_(states.row(k).transpose(), actions.row(k).transpose()).transpose();
  return out;
}

std::vector<PosteriorSample> draw_particle_samples(const PosteriorReservoir& reservoir,
                                                   Index num_particles, RngStream& rng) {
  std::vector<PosteriorSample> out;
  out.reserve(static_cast<std::size_t>(num_particles));
  for (Index p = 0; p < num_particles; ++p) out.push_back(resample_posterior(reservoir, rng));
  return out;
}

ActionSequences sample_action_sequences(const CemProposal& proposal, Index count,
                                        RngStream& rng) {
  const Matrix sd = proposal.variance.cwiseSqrt();
  ActionSequences out(static_cast<std::size_t>(count));
  for (auto& seq : out) {
    seq.resize(proposal.horizon(), proposal.action_dim());
    for (Index t = 0; t < seq.rows(); ++t)
      for (Index a = 0; a < seq.cols(); ++a)
        seq(t, a) = proposal.mean(t, a) + sd(t, a) * rng.normal();
    clip_rows(seq, proposal.low, proposal.high);
  }
  return out;
}

TrajectoryBatch rollout(const TransitionSampler& sampler, const Vector& s0,
                        const ActionSequences& actions, Index num_particles,
                        std::uint64_t seed, Index workers) {
  if (actions.empty()) throw std::invalid_argument("rollout: no action sequences");
  TrajectoryBatch batch;
  batch.particles = num_particles;
  batch.sequences = static_cast<Index>(actions.size());
  batch.horizon = actions.front().rows();
  batch.states.resize(static_cast<std::size_t>(num_particles * (batch.horizon + 1)));
  std::vector<Matrix> step_actions;
  for (Index t = 0; t < batch.horizon; ++t) step_actions.push_back(stack_step(actions, t));

  auto run_particle = [&](Index p) {
    batch.at(p, 0) = s0.transpose().replicate(batch.sequences, 1);
    for (Index t = 0; t < batch.horizon; ++t) {
      RngStream rng(derive_seed(seed, {static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(t)}));
      try {
        batch.at(p, t + 1) = sampler.sample_next(p, batch.at(p, t),
                                                 step_actions[static_cast<std::size_t>(t)], rng);
      } catch (const NumericalFailure& e) {
        std::ostringstream msg;
        msg << "rollout particle " << p << " step " << t << ": " << e.what();
        throw NumericalFailure(msg.str());
      }
    }
  };

  const Index threads = std::min(workers, num_particles);
  if (threads <= 1) {
    for (Index p = 0; p < num_particles; ++p) run_particle(p);
    return batch;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (Index w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index p = w; p < num_particles; p += threads) run_particle(p);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return batch;
}

Vector expected_reward(const TrajectoryBatch& batch, const RewardFn& reward,
                       const ActionSequences& actions, Warnings* warnings) {
  if (static_cast<Index>(actions.size()) != batch.sequences)
    throw std::invalid_argument("expected_reward: sequence count mismatch");
  Vector out = Vector::Zero(batch.sequences);
  const double inv_p = 1.0 / static_cast<double>(batch.particles);
  for (Index k = 0; k < batch.sequences; ++k) {
    const Matrix& seq = actions[static_cast<std::size_t>(k)];
    double total = 0.0;
    for (Index t = 0; t < batch.horizon; ++t) {
      const Vector a = seq.row(t).transpose();
      double step_sum = 0.0;
      for (Index p = 0; p < batch.particles; ++p)
        step_sum += reward(batch.state(p, k, t + 1), a);
      total += inv_p * step_sum;
    }
    if (!std::isfinite(total)) {
      if (warnings) {
        std::ostringstream msg;
        msg << "non-finite expected reward for sequence " << k << "; demoted to -inf";
        warnings->push_back(msg.str());
      }
      total = -std::numeric_limits<double>::infinity();
    }
    out(k) = total;
  }
  return out;
}

CemProposal cem_refit(const CemProposal& proposal, const ActionSequences& actions,
                      const Vector& rewards, double elite_fraction, Warnings* warnings) {
  const Index K = static_cast<Index>(actions.size());
  if (rewards.size() != K) throw std::invalid_argument("cem_refit: reward count mismatch");
  const Index elites =
      std::max<Index>(1, std::llround(elite_fraction * static_cast<double>(K)));
  if (K < elites) throw std::invalid_argument("cem_refit: fewer sequences than elites");
  bool any_finite = false;
  for (Index k = 0; k < K; ++k) any_finite = any_finite || std::isfinite(rewards(k));
  if (!any_finite) {
    if (warnings) warnings->push_back("cem_refit: every sequence scored -inf; proposal kept");
    return proposal;
  }
  std::vector<Index> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return rewards(a) > rewards(b); });

  CemProposal out = proposal;
  out.mean.setZero();
  out.variance.setZero();
  for (Index e = 0; e < elites; ++e) out.mean += actions[static_cast<std::size_t>(order[static_cast<std::size_t>(e)])];
  out.mean /= static_cast<double>(elites);
  for (Index e = 0; e < elites; ++e)
    out.variance +=
        (actions[static_cast<std::size_t>(order[static_cast<std::size_t>(e)])] - out.mean).cwiseAbs2();
  out.variance /= static_cast<double>(elites);
  out.variance = out.variance.cwiseMax(kVarianceFloor);
  clip_rows(out.mean, out.low, out.high);
  return out;
}

PlanResult plan(const TransitionSampler& sampler, const Vector& s0,
                const CemProposal& proposal, const PlannerConfig& config,
                const RewardFn& reward, std::uint64_t seed) {
  config.validate();
  PlanResult result;
  result.proposal = proposal;
  for (Index it = 0; it < config.cem_iterations; ++it) {
    const auto iter = static_cast<std::uint64_t>(it);
    RngStream action_rng(derive_seed(seed, {iter, 0}));
    const ActionSequences actions =
        sample_action_sequences(result.proposal, config.num_sequences, action_rng);
    const TrajectoryBatch batch = rollout(sampler, s0, actions, config.num_particles,
                                          derive_seed(seed, {iter, 1}), config.workers);
    const Vector rewards = expected_reward(batch, reward, actions, &result.warnings);
    result.proposal =
        cem_refit(result.proposal, actions, rewards, config.elite_fraction, &result.warnings);

    CemIterationStats stats;
    double sum = 0.0;
    Index finite = 0;
    stats.best = -std::numeric_limits<double>::infinity();
    stats.worst = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < rewards.size(); ++k) {
      stats.best = std::max(stats.best, rewards(k));
      stats.worst = std::min(stats.worst, rewards(k));
      if (std::isfinite(rewards(k))) {
        sum += rewards(k);
        ++finite;
      }
    }
    stats.mean = finite ? sum / static_cast<double>(finite) : -std::numeric_limits<double>::infinity();
    stats.proposal_mean_norm = result.proposal.mean.norm();
    result.iterations.push_back(stats);
  }
  result.actions = result.proposal.mean;
  return result;
}

CemProposal shift_proposal(const CemProposal& proposal, Index steps_executed) {
  const Index H = proposal.horizon();
  if (steps_executed < 1 || steps_executed > H)
    throw std::invalid_argument("shift_proposal: steps executed must lie in [1, H]");
  CemProposal fresh = initial_proposal(H, proposal.low, proposal.high);
  const Index keep = H - steps_executed;
  if (keep > 0) {
    fresh.mean.topRows(keep) = proposal.mean.bottomRows(keep);
    fresh.variance.topRows(keep) = proposal.variance.bottomRows(keep);
  }
  return fresh;
}

void write_planner_debug_csv(std::ostream& out, Index env_step,
                             const std::vector<CemIterationStats>& stats, bool header) {
  if (header) out << "env_step,iteration,best,mean,worst,proposal_mean_norm\n";
  for (std::size_t i = 0; i < stats.size(); ++i)
    out << env_step << ',' << i << ',' << stats[i].best << ',' << stats[i].mean << ','
        << stats[i].worst << ',' << stats[i].proposal_mean_norm << '\n';
}

}  // namespace dgpmpc
