#pragma once

#include <vector>

#include "dgpmpc/common.hpp"
#include "dgpmpc/kernels.hpp"
#include "dgpmpc/random.hpp"

namespace dgpmpc {

// Warping layers use the identity mean so an untrained deep model reduces
// to a single GP on the raw state-action input. The output layer is zero
// mean and predicts the state delta.
enum class MeanKind { kIdentity, kZero };

struct GpLayer {
  KernelSpec kernel;
  Matrix inducing_inputs;  // M x input_dim
  Index output_dim = 0;
  MeanKind mean_kind = MeanKind::kZero;

  Index input_dim() const { return inducing_inputs.cols(); }
  Index num_inducing() const { return inducing_inputs.rows(); }
  // m(X), n x output_dim.
  Matrix mean_at(const Matrix& X) const;
};

// One observed transition (s_t, a_t, s_{t+1}).
struct Transition {
  Vector state;
  Vector action;
  Vector next_state;
};

// Per-dimension standardization of the model inputs (s, a) and of the
// regression targets (s_{t+1} - s_t).
struct Normalizer {
  Vector input_mean;
  Vector input_scale;
  Vector target_mean;
  Vector target_scale;

  static Normalizer identity(Index state_dim, Index action_dim);
  static Normalizer fit(const std::vector<Transition>& data);

  Matrix normalize_inputs(const Matrix& inputs) const;
  Matrix normalize_targets(const Matrix& deltas) const;
  Matrix denormalize_targets(const Matrix& deltas) const;
};

struct DgpModel {
  std::vector<GpLayer> layers;
  double log_noise_precision = 0.0;  // log beta
  Index state_dim = 0;
  Index action_dim = 0;
  Normalizer normalizer;
  // Jitter added to kernel inverses, relative to each layer's signal variance.
  double relative_jitter = kRelativeJitter;

  double noise_precision() const;
  Index input_dim() const { return state_dim + action_dim; }
  Index num_layers() const { return static_cast<Index>(layers.size()); }
  // Throws std::invalid_argument if layer shapes do not chain correctly.
  void validate() const;
};

struct ModelShape {
  Index state_dim = 0;
  Index action_dim = 0;
  Index num_layers = 1;
  Index num_inducing = 50;
  KernelFamily family = KernelFamily::kSquaredExponential;
  double lengthscale = 1.0;
  double final_signal_variance = 1.0;
  double warp_signal_variance = 0.01;
  double noise_precision = 100.0;
};

// Builds a model with zero inducing inputs and identity normalization;
// call initialize_inducing_inputs before use.
DgpModel make_dgp_model(const ModelShape& shape);

// k-means (Lloyd, fixed iteration count) over the rows of inputs, seeded by
// a random subset. With fewer rows than M, all rows are used and the rest
// are jittered duplicates.
Matrix select_inducing_inputs(const Matrix& inputs, Index num_inducing,
                              RngStream& rng);

// Inducing outputs U_l, one M x output_dim matrix per layer.
struct PosteriorSample {
  std::vector<Matrix> inducing_outputs;

  bool matches(const DgpModel& model) const;
};

// U_l = m(Z_l) for every layer.
PosteriorSample prior_mean_sample(const DgpModel& model);

// Factorized K_zz and the projected inducing outputs for one (layer, U) pair.
// Independent of the query inputs so it is reused across rollout steps.
struct LayerCache {
  Matrix kzz_lower;
  Matrix alpha;  // K_zz^{-1} (U - m(Z))
  double jitter_applied = 0.0;
};

LayerCache prepare_layer(const GpLayer& layer, const Matrix& inducing_outputs,
                         double relative_jitter);

// Gaussian conditional of a layer's outputs at n inputs. Rows of the input
// that are exactly equal are collapsed before factorizing, so duplicates
// share one draw.
struct LayerConditional {
  Matrix mean;  // n x output_dim
  Matrix cov;   // n x n, shared by all output columns (empty unless requested)
  Matrix chol;  // lower factor over the distinct rows (cov + jitter)
  double jitter_applied = 0.0;
  std::vector<Index> slot_of_row;  // row -> distinct slot
};

LayerConditional layer_conditional(const GpLayer& layer, const LayerCache& cache,
                                   const Matrix& inputs, double relative_jitter,
                                   bool with_cov = true);
LayerConditional layer_conditional(const GpLayer& layer,
                                   const Matrix& inducing_outputs,
                                   const Matrix& inputs,
                                   double relative_jitter = kRelativeJitter);

Matrix sample_layer_output(const LayerConditional& cond, RngStream& rng);

// Caches every layer of one posterior sample for repeated forward passes.
class DgpPredictor {
 public:
  DgpPredictor(const DgpModel& model, const PosteriorSample& sample);

  // inputs and the returned deltas are in normalized model coordinates.
  Matrix forward(const Matrix& inputs, bool include_noise, RngStream& rng) const;
  // Raw coordinates: states + denormalized delta.
  Matrix predict_next_states(const Matrix& states, const Matrix& actions,
                             bool include_noise, RngStream& rng) const;

  const DgpModel& model() const { return *model_; }

 private:
  const DgpModel* model_;
  const PosteriorSample* sample_;
  std::vector<LayerCache> caches_;
};

Matrix dgp_forward(const DgpModel& model, const PosteriorSample& sample,
                   const Matrix& inputs, bool include_noise, RngStream& rng);

Matrix predict_next_states(const DgpModel& model, const PosteriorSample& sample,
                           const Matrix& states, const Matrix& actions,
                           bool include_noise, RngStream& rng);

// Stacks transitions into normalized (inputs, targets) matrices.
struct TrainingData {
  Matrix inputs;   // N x (S + A)
  Matrix targets;  // N x S
};
TrainingData make_training_data(const Normalizer& normalizer,
                                const std::vector<Transition>& data);

}  // namespace dgpmpc
