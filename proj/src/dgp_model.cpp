#include "dgpmpc/dgp_model.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace dgpmpc {
namespace {

double max_jitter(const KernelSpec& kernel) {
  return kRelativeJitterCap * kernel.signal_variance();
}

std::size_t hash_row(const Matrix& X, Index i) {
  std::size_t h = 1469598103934665603ULL;
  for (Index d = 0; d < X.cols(); ++d) {
    h ^= std::hash<double>{}(X(i, d));
    h *= 1099511628211ULL;
  }
  return h;
}

bool rows_equal(const Matrix& X, Index a, Index b) {
  for (Index d = 0; d < X.cols(); ++d)
    if (!(X(a, d) == X(b, d))) return false;
  return true;
}

// Returns the distinct rows of X (first occurrence order) and fills
// slot_of_row with each row's distinct index.
Matrix distinct_rows(const Matrix& X, std::vector<Index>& slot_of_row) {
  const Index n = X.rows();
  slot_of_row.assign(static_cast<std::size_t>(n), 0);
  std::unordered_multimap<std::size_t, Index> seen;
  std::vector<Index> firsts;
  firsts.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const std::size_t h = hash_row(X, i);
    Index slot = -1;
    auto range = seen.equal_range(h);
    for (auto it = range.first; it != range.second; ++it) {
      if (rows_equal(X, firsts[static_cast<std::size_t>(it->second)], i)) {
        slot = it->second;
        break;
      }
    }
    if (slot < 0) {
      slot = static_cast<Index>(firsts.size());
      firsts.push_back(i);
      seen.emplace(h, slot);
    }
    slot_of_row[static_cast<std::size_t>(i)] = slot;
  }
  if (static_cast<Index>(firsts.size()) == n) return X;
  Matrix out(static_cast<Index>(firsts.size()), X.cols());
  for (std::size_t s = 0; s < firsts.size(); ++s) out.row(static_cast<Index>(s)) = X.row(firsts[s]);
  return out;
}

}  // namespace

Matrix GpLayer::mean_at(const Matrix& X) const {
  if (mean_kind == MeanKind::kIdentity) return X;
  return Matrix::Zero(X.rows(), output_dim);
}

Normalizer Normalizer::identity(Index state_dim, Index action_dim) {
  return {Vector::Zero(state_dim + action_dim), Vector::Ones(state_dim + action_dim),
          Vector::Zero(state_dim), Vector::Ones(state_dim)};
}

Normalizer Normalizer::fit(const std::vector<Transition>& data) {
  if (data.empty()) throw std::invalid_argument("Normalizer::fit: empty dataset");
  const Index S = data.front().state.size();
  const Index A = data.front().action.size();
  Matrix inputs(static_cast<Index>(data.size()), S + A);
  Matrix deltas(static_cast<Index>(data.size()), S);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = static_cast<Index>(i);
    inputs.row(row) << data[i].state.transpose(), data[i].action.transpose();
    deltas.row(row) = (data[i].next_state - data[i].state).transpose();
  }
  auto stats = [](const Matrix& M, Vector& mean, Vector& scale) {
    mean = M.colwise().mean().transpose();
    scale.resize(M.cols());
    for (Index d = 0; d < M.cols(); ++d) {
      const double var = (M.col(d).array() - mean(d)).square().mean();
      const double sd = std::sqrt(var);
      scale(d) = sd > 1e-8 ? sd : 1.0;
    }
  };
  Normalizer out;
  stats(inputs, out.input_mean, out.input_scale);
  stats(deltas, out.target_mean, out.target_scale);
  return out;
}

Matrix Normalizer::normalize_inputs(const Matrix& inputs) const {
  return ((inputs.rowwise() - input_mean.transpose()).array().rowwise() /
          input_scale.transpose().array())
      .matrix();
}

Matrix Normalizer::normalize_targets(const Matrix& deltas) const {
  return ((deltas.rowwise() - target_mean.transpose()).array().rowwise() /
          target_scale.transpose().array())
      .matrix();
}

Matrix Normalizer::denormalize_targets(const Matrix& deltas) const {
  return ((deltas.array().rowwise() * target_scale.transpose().array()).matrix())
             .rowwise() +
         target_mean.transpose();
}

double DgpModel::noise_precision() const { return std::exp(log_noise_precision); }

void DgpModel::validate() const {
  if (layers.empty()) throw std::invalid_argument("DGP model needs at least one layer");
  if (state_dim < 1 || action_dim < 1)
    throw std::invalid_argument("DGP model needs positive state and action dims");
  if (!std::isfinite(log_noise_precision))
    throw std::invalid_argument("noise precision must be positive and finite");
  const Index io = input_dim();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const GpLayer& layer = layers[l];
    const bool last = l + 1 == layers.size();
    std::ostringstream where;
    where << "layer " << l << ": ";
    if (layer.num_inducing() < 1)
      throw std::invalid_argument(where.str() + "needs at least one inducing input");
    if (layer.input_dim() != io || layer.kernel.input_dim() != io)
      throw std::invalid_argument(where.str() + "input dimension must equal S+A");
    if (last) {
      if (layer.output_dim != state_dim || layer.mean_kind != MeanKind::kZero)
        throw std::invalid_argument(where.str() + "output layer must be zero-mean with S outputs");
    } else if (layer.output_dim != io || layer.mean_kind != MeanKind::kIdentity) {
      throw std::invalid_argument(where.str() + "warping layer must be identity-mean with S+A outputs");
    }
  }
}

DgpModel make_dgp_model(const ModelShape& shape) {
  if (shape.num_layers < 1 || shape.num_inducing < 1)
    throw std::invalid_argument("model needs at least one layer and one inducing point");
  DgpModel model;
  model.state_dim = shape.state_dim;
  model.action_dim = shape.action_dim;
  model.log_noise_precision = std::log(shape.noise_precision);
  model.normalizer = Normalizer::identity(shape.state_dim, shape.action_dim);
  const Index io = shape.state_dim + shape.action_dim;
  for (Index l = 0; l < shape.num_layers; ++l) {
    const bool last = l + 1 == shape.num_layers;
    model.layers.push_back(GpLayer{
        KernelSpec(shape.family, Vector::Constant(io, shape.lengthscale),
                   last ? shape.final_signal_variance : shape.warp_signal_variance),
        Matrix::Zero(shape.num_inducing, io), last ? shape.state_dim : io,
        last ? MeanKind::kZero : MeanKind::kIdentity});
  }
  model.validate();
  return model;
}

Matrix select_inducing_inputs(const Matrix& inputs, Index num_inducing,
                              RngStream& rng) {
  const Index n = inputs.rows();
  if (n == 0) throw std::invalid_argument("select_inducing_inputs: no data");
  Matrix Z(num_inducing, inputs.cols());
  if (n <= num_inducing) {
    for (Index m = 0; m < num_inducing; ++m) {
      Z.row(m) = inputs.row(m % n);
      if (m >= n)
        for (Index d = 0; d < Z.cols(); ++d) Z(m, d) += 1e-3 * rng.normal();
    }
    return Z;
  }
  // Random initial centers, then Lloyd iterations.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (Index m = 0; m < num_inducing; ++m) {
    const std::size_t pick =
        static_cast<std::size_t>(m) + rng.index(static_cast<std::size_t>(n - m));
    std::swap(order[static_cast<std::size_t>(m)], order[pick]);
    Z.row(m) = inputs.row(order[static_cast<std::size_t>(m)]);
  }
  std::vector<Index> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 10; ++iter) {
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Index m = 0; m < num_inducing; ++m) {
        const double d = (Z.row(m) - inputs.row(i)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = m;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
    }
    Matrix sums = Matrix::Zero(num_inducing, inputs.cols());
    Vector counts = Vector::Zero(num_inducing);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += inputs.row(i);
      counts(assign[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (Index m = 0; m < num_inducing; ++m)
      if (counts(m) > 0.0) Z.row(m) = sums.row(m) / counts(m);
  }
  return Z;
}

bool PosteriorSample::matches(const DgpModel& model) const {
  if (inducing_outputs.size() != model.layers.size()) return false;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& U = inducing_outputs[l];
    if (U.rows() != model.layers[l].num_inducing() ||
        U.cols() != model.layers[l].output_dim)
      return false;
  }
  return true;
}

PosteriorSample prior_mean_sample(const DgpModel& model) {
  PosteriorSample s;
  for (const auto& layer : model.layers)
    s.inducing_outputs.push_back(layer.mean_at(layer.inducing_inputs));
  return s;
}

LayerCache prepare_layer(const GpLayer& layer, const Matrix& inducing_outputs,
                         double relative_jitter) {
  if (inducing_outputs.rows() != layer.num_inducing() ||
      inducing_outputs.cols() != layer.output_dim)
    throw std::invalid_argument("inducing outputs do not match layer shape");
  const Matrix& Z = layer.inducing_inputs;
  const double s2 = layer.kernel.signal_variance();
  CholeskyFactor f = stabilized_cholesky(kernel_matrix(layer.kernel, Z, Z),
                                         relative_jitter * s2, max_jitter(layer.kernel));
  LayerCache cache;
  cache.alpha = inducing_outputs - layer.mean_at(Z);
  f.lower.triangularView<Eigen::Lower>().solveInPlace(cache.alpha);
  f.lower.transpose().triangularView<Eigen::Upper>().solveInPlace(cache.alpha);
  cache.kzz_lower = std::move(f.lower);
  cache.jitter_applied = f.jitter_applied;
  return cache;
}

LayerConditional layer_conditional(const GpLayer& layer, const LayerCache& cache,
                                   const Matrix& inputs, double relative_jitter,
                                   bool with_cov) {
  if (inputs.cols() != layer.input_dim())
    throw std::invalid_argument("layer_conditional: input dimension mismatch");
  LayerConditional cond;
  const Index n = inputs.rows();
  if (n == 0) {
    cond.mean = Matrix(0, layer.output_dim);
    cond.cov = Matrix(0, 0);
    cond.chol = Matrix(0, 0);
    return cond;
  }
  const Matrix unique = distinct_rows(inputs, cond.slot_of_row);

  Matrix W = kernel_matrix(layer.kernel, layer.inducing_inputs, unique);  // M x u
  const Matrix mean_u = layer.mean_at(unique) + W.transpose() * cache.alpha;
  cache.kzz_lower.triangularView<Eigen::Lower>().solveInPlace(W);

  Matrix cov_u = kernel_matrix(layer.kernel, unique);
  cov_u.selfadjointView<Eigen::Lower>().rankUpdate(W.transpose(), -1.0);
  cov_u.triangularView<Eigen::StrictlyUpper>() = cov_u.transpose();

  const double s2 = layer.kernel.signal_variance();
  CholeskyFactor f = stabilized_cholesky(cov_u, relative_jitter * s2, max_jitter(layer.kernel));
  cond.chol = std::move(f.lower);
  cond.jitter_applied = f.jitter_applied;

  cond.mean.resize(n, layer.output_dim);
  for (Index i = 0; i < n; ++i)
    cond.mean.row(i) = mean_u.row(cond.slot_of_row[static_cast<std::size_t>(i)]);
  if (with_cov) {
    cond.cov.resize(n, n);
    for (Index i = 0; i < n; ++i) {
      const Index si = cond.slot_of_row[static_cast<std::size_t>(i)];
      for (Index j = 0; j < n; ++j)
        cond.cov(i, j) = cov_u(si, cond.slot_of_row[static_cast<std::size_t>(j)]);
    }
  }
  return cond;
}

LayerConditional layer_conditional(const GpLayer& layer,
                                   const Matrix& inducing_outputs,
                                   const Matrix& inputs, double relative_jitter) {
  return layer_conditional(layer, prepare_layer(layer, inducing_outputs, relative_jitter),
                           inputs, relative_jitter);
}

Matrix sample_layer_output(const LayerConditional& cond, RngStream& rng) {
  const Index n = cond.mean.rows();
  if (n == 0) return cond.mean;
  const Matrix draws = cond.chol * rng.normal_matrix(cond.chol.rows(), cond.mean.cols());
  Matrix out = cond.mean;
  for (Index i = 0; i < n; ++i) out.row(i) += draws.row(cond.slot_of_row[static_cast<std::size_t>(i)]);
  return out;
}

DgpPredictor::DgpPredictor(const DgpModel& model, const PosteriorSample& sample)
    : model_(&model), sample_(&sample) {
  if (!sample.matches(model))
    throw std::invalid_argument("posterior sample does not match the model shape");
  caches_.reserve(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    caches_.push_back(prepare_layer(model.layers[l], sample.inducing_outputs[l],
                                    model.relative_jitter));
}

Matrix DgpPredictor::forward(const Matrix& inputs, bool include_noise,
                             RngStream& rng) const {
  if (inputs.cols() != model_->input_dim())
    throw std::invalid_argument("dgp_forward: inputs must have S+A columns");
  if (inputs.rows() == 0) return Matrix(0, model_->state_dim);
  Matrix f = inputs;
  for (std::size_t l = 0; l < model_->layers.size(); ++l) {
    const LayerConditional cond =
        layer_conditional(model_->layers[l], caches_[l], f, model_->relative_jitter, false);
    f = sample_layer_output(cond, rng);
  }
  if (include_noise) {
    const double sd = std::sqrt(1.0 / model_->noise_precision());
    f += sd * rng.normal_matrix(f.rows(), f.cols());
  }
  return f;
}

Matrix DgpPredictor::predict_next_states(const Matrix& states, const Matrix& actions,
                                         bool include_noise, RngStream& rng) const {
  if (states.rows() != actions.rows())
    throw std::invalid_argument("predict_next_states: state/action row counts differ");
  if (states.cols() != model_->state_dim || actions.cols() != model_->action_dim)
    throw std::invalid_argument("predict_next_states: state/action dimension mismatch");
  Matrix inputs(states.rows(), model_->input_dim());
  inputs << states, actions;
  const Matrix delta = model_->normalizer.denormalize_targets(
      forward(model_->normalizer.normalize_inputs(inputs), include_noise, rng));
  return states + delta;
}

Matrix dgp_forward(const DgpModel& model, const PosteriorSample& sample,
                   const Matrix& inputs, bool include_noise, RngStream& rng) {
  return DgpPredictor(model, sample).forward(inputs, include_noise, rng);
}

Matrix predict_next_states(const DgpModel& model, const PosteriorSample& sample,
                           const Matrix& states, const Matrix& actions,
                           bool include_noise, RngStream& rng) {
  return DgpPredictor(model, sample).predict_next_states(states, actions, include_noise, rng);
}

TrainingData make_training_data(const Normalizer& normalizer,
                                const std::vector<Transition>& data) {
  if (data.empty()) return {};
  const Index S = data.front().state.size();
  const Index A = data.front().action.size();
  Matrix inputs(static_cast<Index>(data.size()), S + A);
  Matrix deltas(static_cast<Index>(data.size()), S);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = static_cast<Index>(i);
    inputs.row(row) << data[i].state.transpose(), data[i].action.transpose();
    deltas.row(row) = (data[i].next_state - data[i].state).transpose();
  }
  return {normalizer.normalize_inputs(inputs), normalizer.normalize_targets(deltas)};
}

}  // namespace dgpmpc
