#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include "dgpmpc/dgp_model.hpp"
#include "dgpmpc/inference.hpp"

namespace dgpmpc {

inline constexpr double kVarianceFloor = 1e-6;

// Diagonal Gaussian over an H x A action sequence, clipped to box bounds.
struct CemProposal {
  Matrix mean;      // H x A
  Matrix variance;  // H x A
  Vector low;
  Vector high;

  Index horizon() const { return mean.rows(); }
  Index action_dim() const { return mean.cols(); }
};

// Mean at the box midpoint, variance ((high - low) / 4)^2.
CemProposal initial_proposal(Index horizon, const Vector& low, const Vector& high);

struct PlannerConfig {
  Index horizon = 30;
  Index num_sequences = 300;
  Index num_particles = 5;
  Index cem_iterations = 5;
  double elite_fraction = 0.1;
  Index actions_per_replan = 1;
  bool include_noise = false;
  Index workers = 1;  // threads for particle rollouts; never changes results

  Index elite_count() const;
  void validate() const;
  bool operator==(const PlannerConfig&) const = default;
};

using ActionSequences = std::vector<Matrix>;  // K entries, each H x A
using RewardFn = std::function<double(const Vector& next_state, const Vector& action)>;

// Sampled trajectories for P particles x K sequences; index 0 is s0.
struct TrajectoryBatch {
  Index particles = 0;
  Index sequences = 0;
  Index horizon = 0;
  std::vector<Matrix> states;  // [p * (horizon + 1) + t] is K x S

  const Matrix& at(Index p, Index t) const {
    return states[static_cast<std::size_t>(p * (horizon + 1) + t)];
  }
  Matrix& at(Index p, Index t) { return states[static_cast<std::size_t>(p * (horizon + 1) + t)]; }
  Vector state(Index p, Index k, Index t) const { return at(p, t).row(k).transpose(); }
};

// Draws next states for all K sequences of one particle jointly.
class TransitionSampler {
 public:
  virtual ~TransitionSampler() = default;
  virtual Matrix sample_next(Index particle, const Matrix& states, const Matrix& actions,
                             RngStream& rng) const = 0;
};

// Learned dynamics: particle p uses its own posterior sample for the whole
// horizon, and every call is one joint Gaussian draw per layer.
class DgpTransitionSampler final : public TransitionSampler {
 public:
  DgpTransitionSampler(const DgpModel& model, std::vector<PosteriorSample> particle_samples,
                       bool include_noise);
  DgpTransitionSampler(const DgpTransitionSampler&) = delete;
  DgpTransitionSampler& operator=(const DgpTransitionSampler&) = delete;
  Matrix sample_next(Index particle, const Matrix& states, const Matrix& actions,
                     RngStream& rng) const override;

 private:
  std::vector<PosteriorSample> samples_;
  std::vector<DgpPredictor> predictors_;
  bool include_noise_;
};

// Known dynamics applied row by row (used to check the planner in isolation).
class OracleTransitionSampler final : public TransitionSampler {
 public:
  explicit OracleTransitionSampler(std::function<Vector(const Vector&, const Vector&)> step)
      : step_(std::move(step)) {}
  Matrix sample_next(Index particle, const Matrix& states, const Matrix& actions,
                     RngStream& rng) const override;

 private:
  std::function<Vector(const Vector&, const Vector&)> step_;
};

// One resample_posterior draw per particle.
std::vector<PosteriorSample> draw_particle_samples(const PosteriorReservoir& reservoir,
                                                   Index num_particles, RngStream& rng);

ActionSequences sample_action_sequences(const CemProposal& proposal, Index count,
                                        RngStream& rng);

// Particle p at step t draws from stream derive_seed(seed, {p, t}), so the
// result is identical for any worker count.
TrajectoryBatch rollout(const TransitionSampler& sampler, const Vector& s0,
                        const ActionSequences& actions, Index num_particles,
                        std::uint64_t seed, Index workers = 1);

// Per sequence: sum_t (1/P) sum_p r(s[p][k][t+1], a[k][t]). Sequences with a
// non-finite reward score -inf.
Vector expected_reward(const TrajectoryBatch& batch, const RewardFn& reward,
                       const ActionSequences& actions, Warnings* warnings = nullptr);

// Refits mean and variance to the elite sequences (ties broken by lower index).
CemProposal cem_refit(const CemProposal& proposal, const ActionSequences& actions,
                      const Vector& rewards, double elite_fraction,
                      Warnings* warnings = nullptr);

struct CemIterationStats {
  double best = 0.0;
  double mean = 0.0;
  double worst = 0.0;
  double proposal_mean_norm = 0.0;
};

struct PlanResult {
  Matrix actions;  // H x A, final proposal mean
  CemProposal proposal;
  std::vector<CemIterationStats> iterations;
  Warnings warnings;
};

PlanResult plan(const TransitionSampler& sampler, const Vector& s0,
                const CemProposal& proposal, const PlannerConfig& config,
                const RewardFn& reward, std::uint64_t seed);

// Drops the executed rows and appends fresh rows at the initial proposal.
CemProposal shift_proposal(const CemProposal& proposal, Index steps_executed);

void write_planner_debug_csv(std::ostream& out, Index env_step,
                             const std::vector<CemIterationStats>& stats, bool header);

}  // namespace dgpmpc
