#pragma once

#include <vector>

#include "dgpmpc/dgp_model.hpp"

namespace dgpmpc {

// Standard-normal draws that fix the reparameterized path through the
// warping layers: one n x output_dim matrix per warping layer.
struct PathNoise {
  std::vector<Matrix> layers;
};

PathNoise draw_path_noise(const DgpModel& model, Index num_points, RngStream& rng);

struct PathRecord {
  std::vector<Matrix> layer_inputs;  // input to every layer, [0] = data
  PathNoise noise;
  Matrix output_mean;                // output layer conditional mean
  Vector output_variance;            // marginal variance incl. jitter, no noise
};

struct LogJoint {
  double value = 0.0;           // weight * log_likelihood + log_prior
  double log_likelihood = 0.0;  // unweighted
  double log_prior = 0.0;
  Index jitter_escalations = 0;  // factorizations that needed extra jitter
  PathRecord path;
};

// Gradient of LogJoint::value (ascent direction).
struct ModelGradient {
  std::vector<Matrix> inducing_outputs;
  std::vector<KernelGradient> kernels;
  std::vector<Matrix> inducing_inputs;
  double log_noise_precision = 0.0;

  static ModelGradient zeros(const DgpModel& model);
};

enum class GradientScope {
  kNone,
  kInducingOutputs,  // only d/dU
  kAll,              // U, log kernel hyperparameters, Z, log beta
};

// Log joint density of targets and inducing outputs,
//   w * sum_i log N(y_i | mu_i, v_i + 1/beta) + sum_l log N(vec U_l | m(Z_l), K_zz),
// where warping-layer outputs are drawn per point as mu + sqrt(v) * noise and
// (mu_i, v_i) is the output-layer marginal at the end of that path.
// inputs/targets are normalized; targets are state deltas.
LogJoint log_joint(const DgpModel& model, const PosteriorSample& sample,
                   const Matrix& inputs, const Matrix& targets,
                   const PathNoise& noise, double likelihood_weight = 1.0,
                   GradientScope scope = GradientScope::kNone,
                   ModelGradient* gradient = nullptr);

// Convenience form on raw transitions; draws a fresh path.
LogJoint log_joint(const DgpModel& model, const PosteriorSample& sample,
                   const std::vector<Transition>& batch, RngStream& rng);

// log N(vec U_l | m(Z_l), K_zz) summed over layers.
double log_prior(const DgpModel& model, const PosteriorSample& sample);

}  // namespace dgpmpc
