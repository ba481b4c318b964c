#pragma once

#include <deque>
#include <functional>
#include <iosfwd>
#include <vector>

#include "dgpmpc/dgp_model.hpp"
#include "dgpmpc/log_joint.hpp"

namespace dgpmpc {

struct SghmcConfig {
  double step_size = 5e-4;      // epsilon
  double friction = 100.0;      // C, default 0.05 / epsilon * mass
  double noise_estimate = 0.0;  // B-hat
  double mass = 1.0;
  Index burn_in_steps = 500;
  Index thinning = 20;
  Index reservoir_size = 20;
  Index minibatch_size = 100;
  Index step_budget = 2000;  // sampler steps per train_model call

  void validate() const;
  bool operator==(const SghmcConfig&) const = default;
};

struct HyperOptConfig {
  double learning_rate = 0.01;
  Index hyper_interval = 10;  // sampler steps per hyperparameter step
  bool optimize_inducing_inputs = false;
  // Box on log-space hyperparameters, in natural units.
  double min_lengthscale = 1e-2;
  double max_lengthscale = 1e2;
  double min_signal_variance = 1e-4;
  double max_signal_variance = 1e2;
  double min_noise_precision = 1e-2;
  double max_noise_precision = 1e5;

  void validate() const;
  bool operator==(const HyperOptConfig&) const = default;
};

// The live SG-HMC chain plus a moving window of its thinned samples.
class PosteriorReservoir {
 public:
  PosteriorReservoir() = default;
  PosteriorReservoir(const DgpModel& model, Index capacity);

  // Restarts the chain at position with zero momentum and an empty window.
  void restart(PosteriorSample position);

  const std::deque<PosteriorSample>& samples() const { return samples_; }
  bool empty() const { return samples_.empty(); }
  Index capacity() const { return capacity_; }
  // Appends, evicting the oldest sample once the window is full.
  void push(PosteriorSample sample);

  PosteriorSample position;
  PosteriorSample momentum;
  Index steps = 0;            // sampler steps since restart
  double step_scale = 1.0;    // halved by the divergence guard

 private:
  Index capacity_ = 1;
  std::deque<PosteriorSample> samples_;
};

// Generic SG-HMC update on a flat parameter vector with gradient g of the
// potential (negative log density):
//   r <- r - eps g - eps C r / mass + N(0, 2 eps (C - B))
//   x <- x + eps r / mass
void sghmc_update(Vector& position, Vector& momentum, const Vector& grad_potential,
                  const SghmcConfig& config, double step_size, RngStream& rng);

// d/dU of -(N / |batch|) log p(batch | U) - log p(U), on a fixed path.
PosteriorSample grad_neg_log_joint(const DgpModel& model, const PosteriorSample& sample,
                                   const Matrix& inputs, const Matrix& targets,
                                   const PathNoise& noise, double dataset_size,
                                   double* neg_log_joint = nullptr);
PosteriorSample grad_neg_log_joint(const DgpModel& model, const PosteriorSample& sample,
                                   const Matrix& inputs, const Matrix& targets,
                                   const PathNoise& noise, double dataset_size,
                                   double* neg_log_joint, Index* jitter_escalations);
PosteriorSample grad_neg_log_joint(const DgpModel& model, const PosteriorSample& sample,
                                   const std::vector<Transition>& batch,
                                   double dataset_size, RngStream& rng);

struct StepRecord {
  double neg_log_joint = 0.0;
  Index jitter_escalations = 0;
  bool diverged = false;
};

// One sampler step on a minibatch of data (normalized matrices).
StepRecord sghmc_step(PosteriorReservoir& reservoir, const DgpModel& model,
                      const TrainingData& data, const SghmcConfig& config,
                      RngStream& rng, Warnings* warnings = nullptr);

// Adam moments over the flattened hyperparameter vector.
struct HyperOptimizer {
  Vector first_moment;
  Vector second_moment;
  Index iterations = 0;
};

struct HyperStepRecord {
  double objective = 0.0;  // (1/W) sum_w log_joint(model, U_w, minibatch)
  bool skipped = false;
};

// One Adam ascent step on the window-averaged log joint with respect to log
// kernel hyperparameters, log beta and (optionally) Z. Uses the stored
// samples, or the live chain position while the window is still empty.
HyperStepRecord hyper_step(DgpModel& model, const PosteriorReservoir& reservoir,
                           const TrainingData& data, const SghmcConfig& sghmc,
                           const HyperOptConfig& config, HyperOptimizer& optimizer,
                           RngStream& rng, Warnings* warnings = nullptr);

// One row of the training trace CSV.
struct TraceRow {
  Index step = 0;
  double neg_log_joint = 0.0;
  double noise_precision = 0.0;
  std::vector<double> mean_lengthscales;
  Index jitter_warnings = 0;
};

struct TrainResult {
  DgpModel model;
  PosteriorReservoir reservoir;
  HyperOptimizer optimizer;
  Warnings warnings;
  std::vector<TraceRow> trace;
};

// Refits the normalizer, re-selects Z by k-means and restarts the chain at
// the projected-process posterior mean of the output layer (warping layers
// at their prior mean). Kernel hyperparameters and beta are kept.
void prepare_for_training(DgpModel& model, PosteriorReservoir& reservoir,
                          const std::vector<Transition>& data, RngStream& rng);

// Interleaves sghmc_step and hyper_step (one per hyper_interval sampler
// steps) for sghmc.step_budget steps.
TrainResult train_model(const DgpModel& model, const PosteriorReservoir& reservoir,
                        const HyperOptimizer& optimizer,
                        const std::vector<Transition>& data, const SghmcConfig& sghmc,
                        const HyperOptConfig& hyper, RngStream& rng);

// Uniform draw from the stored window; throws InvalidState when empty.
const PosteriorSample& resample_posterior(const PosteriorReservoir& reservoir,
                                          RngStream& rng);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows,
                     Index num_layers, bool header = true);

}  // namespace dgpmpc
