#include "dgpmpc/log_joint.hpp"

#include <cmath>

namespace dgpmpc {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Matrix lower_solve(const Matrix& L, const Matrix& B) {
  return L.triangularView<Eigen::Lower>().solve(B);
}

Matrix upper_solve(const Matrix& L, const Matrix& B) {
  return L.transpose().triangularView<Eigen::Upper>().solve(B);
}

Matrix chol_solve(const Matrix& L, const Matrix& B) {
  return upper_solve(L, lower_solve(L, B));
}

struct LayerPass {
  Matrix lower;  // chol(K_zz + jitter)
  double jitter = 0.0;
  Matrix kzx;    // M x n
  Matrix proj;   // K_zz^{-1} K_zx
  Matrix alpha;  // K_zz^{-1} (U - m(Z))
  Matrix centered;
  Vector var_raw;
  Vector var;
  Matrix mean;
};

LayerPass forward_layer(const GpLayer& layer, const Matrix& U, const Matrix& X,
                        double relative_jitter) {
  LayerPass p;
  const double s2 = layer.kernel.signal_variance();
  CholeskyFactor f = stabilized_cholesky(
      kernel_matrix(layer.kernel, layer.inducing_inputs, layer.inducing_inputs),
      relative_jitter * s2, kRelativeJitterCap * s2);
  p.lower = std::move(f.lower);
  p.jitter = f.jitter_applied;
  p.kzx = kernel_matrix(layer.kernel, layer.inducing_inputs, X);
  Matrix W = lower_solve(p.lower, p.kzx);
  p.var_raw = (Vector::Constant(X.rows(), s2).array() -
               W.colwise().squaredNorm().transpose().array())
                  .matrix();
  p.proj = upper_solve(p.lower, W);

  p.centered = U - layer.mean_at(layer.inducing_inputs);
  p.alpha = chol_solve(p.lower, p.centered);
  p.mean = layer.mean_at(X) + p.kzx.transpose() * p.alpha;
  p.var = p.var_raw.cwiseMax(0.0).array() + relative_jitter * s2;
  return p;
}

double layer_prior(const LayerPass& p) {
  const Index M = p.centered.rows();
  const Index D = p.centered.cols();
  return -0.5 * p.centered.cwiseProduct(p.alpha).sum() -
         static_cast<double>(D) * p.lower.diagonal().array().log().sum() -
         0.5 * static_cast<double>(M * D) * kLog2Pi;
}

}  // namespace

PathNoise draw_path_noise(const DgpModel& model, Index num_points, RngStream& rng) {
  PathNoise noise;
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l)
    noise.layers.push_back(rng.normal_matrix(num_points, model.layers[l].output_dim));
  return noise;
}

ModelGradient ModelGradient::zeros(const DgpModel& model) {
  ModelGradient g;
  for (const auto& layer : model.layers) {
    g.inducing_outputs.push_back(Matrix::Zero(layer.num_inducing(), layer.output_dim));
    g.kernels.push_back(KernelGradient::zeros(layer.input_dim()));
    g.inducing_inputs.push_back(Matrix::Zero(layer.num_inducing(), layer.input_dim()));
  }
  return g;
}

LogJoint log_joint(const DgpModel& model, const PosteriorSample& sample,
                   const Matrix& inputs, const Matrix& targets,
                   const PathNoise& noise, double likelihood_weight,
                   GradientScope scope, ModelGradient* gradient) {
  if (!sample.matches(model))
    throw std::invalid_argument("log_joint: posterior sample does not match model");
  if (inputs.rows() == 0) throw std::invalid_argument("log_joint: empty batch");
  if (inputs.rows() != targets.rows() || inputs.cols() != model.input_dim() ||
      targets.cols() != model.state_dim)
    throw std::invalid_argument("log_joint: batch shape mismatch");
  const std::size_t L = model.layers.size();
  if (noise.layers.size() != L - 1)
    throw std::invalid_argument("log_joint: path noise needs one matrix per warping layer");
  const Index n = inputs.rows();

  LogJoint out;
  out.path.noise = noise;
  out.path.layer_inputs.push_back(inputs);
  std::vector<LayerPass> passes;
  passes.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    passes.push_back(forward_layer(model.layers[l], sample.inducing_outputs[l],
                                   out.path.layer_inputs.back(), model.relative_jitter));
    const LayerPass& p = passes.back();
    out.log_prior += layer_prior(p);
    if (p.jitter > 1.000001 * model.relative_jitter * model.layers[l].kernel.signal_variance())
      ++out.jitter_escalations;
    if (l + 1 < L) {
      const Matrix& E = noise.layers[l];
      if (E.rows() != n || E.cols() != model.layers[l].output_dim)
        throw std::invalid_argument("log_joint: path noise shape mismatch");
      out.path.layer_inputs.push_back(p.mean + p.var.cwiseSqrt().asDiagonal() * E);
    }
  }
  const LayerPass& last = passes.back();
  const double beta = model.noise_precision();
  const Vector total_var = last.var.array() + 1.0 / beta;
  const Matrix resid = targets - last.mean;
  const double D = static_cast<double>(model.state_dim);
  out.log_likelihood =
      -0.5 * (static_cast<double>(n) * D * kLog2Pi + D * total_var.array().log().sum() +
              (resid.array().colwise() / total_var.array()).cwiseProduct(resid.array()).sum());
  out.value = likelihood_weight * out.log_likelihood + out.log_prior;
  out.path.output_mean = last.mean;
  out.path.output_variance = last.var;

  if (scope == GradientScope::kNone || gradient == nullptr) return out;
  const bool all = scope == GradientScope::kAll;
  *gradient = ModelGradient::zeros(model);

  // Output layer likelihood.
  Matrix g_mean = likelihood_weight * (resid.array().colwise() / total_var.array()).matrix();
  Vector g_var(n);
  for (Index i = 0; i < n; ++i) {
    const double s = total_var(i);
    g_var(i) = likelihood_weight * (-0.5 * D / s + 0.5 * resid.row(i).squaredNorm() / (s * s));
  }
  gradient->log_noise_precision = -(1.0 / beta) * g_var.sum();

  for (std::size_t li = L; li-- > 0;) {
    const GpLayer& layer = model.layers[li];
    const LayerPass& p = passes[li];
    const Matrix& X = out.path.layer_inputs[li];
    const double s2 = layer.kernel.signal_variance();
    KernelGradient& gk = gradient->kernels[li];

    Vector g_var_raw = g_var;
    for (Index i = 0; i < n; ++i)
      if (!(p.var_raw(i) > 0.0)) g_var_raw(i) = 0.0;
    gk.log_signal_variance += s2 * g_var_raw.sum() + model.relative_jitter * s2 * g_var.sum();

    const Matrix g_alpha = p.kzx * g_mean;
    Matrix g_kzx = p.alpha * g_mean.transpose() - 2.0 * p.proj * g_var_raw.asDiagonal();
    const Matrix G = chol_solve(p.lower, g_alpha);
    const Matrix g_centered = G - p.alpha;
    gradient->inducing_outputs[li] = g_centered;

    Matrix g_X;
    const bool need_input_grad = li > 0;
    if (need_input_grad) {
      g_X = layer.mean_kind == MeanKind::kIdentity ? g_mean : Matrix::Zero(n, X.cols());
    }
    if (all) {
      const Matrix kzz_inv =
          chol_solve(p.lower, Matrix::Identity(p.lower.rows(), p.lower.rows()));
      const double D_out = static_cast<double>(layer.output_dim);
      Matrix g_kzz = p.proj * g_var_raw.asDiagonal() * p.proj.transpose() -
                     G * p.alpha.transpose() + 0.5 * p.alpha * p.alpha.transpose() -
                     0.5 * D_out * kzz_inv;
      gk.log_signal_variance += p.jitter * g_kzz.trace();
      Matrix& gZ = gradient->inducing_inputs[li];
      kernel_matrix_backward(layer.kernel, layer.inducing_inputs, layer.inducing_inputs,
                             g_kzz, gk, &gZ, &gZ);
      if (layer.mean_kind == MeanKind::kIdentity) gZ -= g_centered;
      kernel_matrix_backward(layer.kernel, layer.inducing_inputs, X, g_kzx, gk, &gZ,
                             need_input_grad ? &g_X : nullptr);
    } else if (need_input_grad) {
      KernelGradient scratch = KernelGradient::zeros(layer.input_dim());
      kernel_matrix_backward(layer.kernel, layer.inducing_inputs, X, g_kzx, scratch,
                             nullptr, &g_X);
    }
    if (!need_input_grad) break;

    // Into the previous warping layer: X = mean + sqrt(var) * E.
    const LayerPass& prev = passes[li - 1];
    const Matrix& E = noise.layers[li - 1];
    g_mean = g_X;
    g_var.resize(n);
    for (Index i = 0; i < n; ++i)
      g_var(i) = g_X.row(i).dot(E.row(i)) / (2.0 * std::sqrt(prev.var(i)));
  }
  return out;
}

LogJoint log_joint(const DgpModel& model, const PosteriorSample& sample,
                   const std::vector<Transition>& batch, RngStream& rng) {
  if (batch.empty()) throw std::invalid_argument("log_joint: empty batch");
  const TrainingData data = make_training_data(model.normalizer, batch);
  return log_joint(model, sample, data.inputs, data.targets,
                   draw_path_noise(model, data.inputs.rows(), rng));
}

double log_prior(const DgpModel& model, const PosteriorSample& sample) {
  if (!sample.matches(model))
    throw std::invalid_argument("log_prior: posterior sample does not match model");
  double total = 0.0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const GpLayer& layer = model.layers[l];
    LayerPass p;
    const double s2 = layer.kernel.signal_variance();
    CholeskyFactor f = stabilized_cholesky(
        kernel_matrix(layer.kernel, layer.inducing_inputs, layer.inducing_inputs),
        model.relative_jitter * s2, kRelativeJitterCap * s2);
    p.lower = std::move(f.lower);
    p.centered = sample.inducing_outputs[l] - layer.mean_at(layer.inducing_inputs);
    p.alpha = chol_solve(p.lower, p.centered);
    total += layer_prior(p);
  }
  return total;
}

}  // namespace dgpmpc
