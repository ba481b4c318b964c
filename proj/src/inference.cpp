#include "dgpmpc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dgpmpc {
namespace {

constexpr double kDivergenceBound = 1e6;

Vector flatten(const PosteriorSample& s) {
  Index total = 0;
  for (const auto& U : s.inducing_outputs) total += U.size();
  Vector v(total);
  Index at = 0;
  for (const auto& U : s.inducing_outputs) {
    v.segment(at, U.size()) = Eigen::Map<const Vector>(U.data(), U.size());
    at += U.size();
  }
  return v;
}

void unflatten(const Vector& v, PosteriorSample& s) {
  Index at = 0;
  for (auto& U : s.inducing_outputs) {
    Eigen::Map<Vector>(U.data(), U.size()) = v.segment(at, U.size());
    at += U.size();
  }
}

PosteriorSample zeros_like(const PosteriorSample& s) {
  PosteriorSample z = s;
  for (auto& U : z.inducing_outputs) U.setZero();
  return z;
}

// Uniform minibatch without replacement, returned in ascending row order.
std::vector<Index> draw_minibatch(Index n, Index size, RngStream& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (size >= n) return idx;
  for (Index i = 0; i < size; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) + rng.index(static_cast<std::size_t>(n - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(size));
  std::sort(idx.begin(), idx.end());
  return idx;
}

TrainingData gather(const TrainingData& data, const std::vector<Index>& rows) {
  TrainingData out{Matrix(static_cast<Index>(rows.size()), data.inputs.cols()),
                   Matrix(static_cast<Index>(rows.size()), data.targets.cols())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Index>(i)) = data.inputs.row(rows[i]);
    out.targets.row(static_cast<Index>(i)) = data.targets.row(rows[i]);
  }
  return out;
}

Index hyper_dim(const DgpModel& model, bool with_z) {
  Index n = 1;
  for (const auto& layer : model.layers) {
    n += layer.input_dim() + 1;
    if (with_z) n += layer.inducing_inputs.size();
  }
  return n;
}

Vector pack_hyper(const DgpModel& model, bool with_z) {
  Vector v(hyper_dim(model, with_z));
  Index at = 0;
  for (const auto& layer : model.layers) {
    v.segment(at, layer.input_dim()) = layer.kernel.log_lengthscales();
    at += layer.input_dim();
    v(at++) = layer.kernel.log_signal_variance();
  }
  v(at++) = model.log_noise_precision;
  if (with_z) {
    for (const auto& layer : model.layers) {
      const Matrix& Z = layer.inducing_inputs;
      v.segment(at, Z.size()) = Eigen::Map<const Vector>(Z.data(), Z.size());
      at += Z.size();
    }
  }
  return v;
}

Vector pack_gradient(const ModelGradient& g, const DgpModel& model, bool with_z) {
  Vector v(hyper_dim(model, with_z));
  Index at = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Index d = model.layers[l].input_dim();
    v.segment(at, d) = g.kernels[l].log_lengthscales;
    at += d;
    v(at++) = g.kernels[l].log_signal_variance;
  }
  v(at++) = g.log_noise_precision;
  if (with_z) {
    for (const Matrix& gz : g.inducing_inputs) {
      v.segment(at, gz.size()) = Eigen::Map<const Vector>(gz.data(), gz.size());
      at += gz.size();
    }
  }
  return v;
}

void unpack_hyper(const Vector& v, DgpModel& model, bool with_z, const HyperOptConfig& c) {
  Index at = 0;
  for (auto& layer : model.layers) {
    const Index d = layer.input_dim();
    const Vector ls = v.segment(at, d).cwiseMax(std::log(c.min_lengthscale))
                          .cwiseMin(std::log(c.max_lengthscale));
    at += d;
    const double var = std::clamp(v(at++), std::log(c.min_signal_variance),
                                  std::log(c.max_signal_variance));
    layer.kernel.set_log_params(ls, var);
  }
  model.log_noise_precision = std::clamp(v(at++), std::log(c.min_noise_precision),
                                         std::log(c.max_noise_precision));
  if (with_z) {
    for (auto& layer : model.layers) {
      Matrix& Z = layer.inducing_inputs;
      Eigen::Map<Vector>(Z.data(), Z.size()) = v.segment(at, Z.size());
      at += Z.size();
    }
  }
}

}  // namespace

PosteriorSample grad_neg_log_joint(const DgpModel& model, const PosteriorSample& sample,
                                   const Matrix& inputs, const Matrix& targets,
                                   const PathNoise& noise, double dataset_size,
                                   double* neg_log_joint, Index* jitter_escalations) {
  const double weight = dataset_size / static_cast<double>(inputs.rows());
  ModelGradient g;
  const LogJoint lj = log_joint(model, sample, inputs, targets, noise, weight,
                                GradientScope::kInducingOutputs, &g);
  if (neg_log_joint) *neg_log_joint = -lj.value;
  if (jitter_escalations) *jitter_escalations = lj.jitter_escalations;
  PosteriorSample out;
  for (auto& gu : g.inducing_outputs) out.inducing_outputs.push_back(-gu);
  return out;
}

void SghmcConfig::validate() const {
  if (!(step_size > 0.0)) throw std::invalid_argument("sghmc step size must be positive");
  if (!(friction > 0.0)) throw std::invalid_argument("sghmc friction must be positive");
  if (!(mass > 0.0)) throw std::invalid_argument("sghmc mass must be positive");
  if (noise_estimate < 0.0) throw std::invalid_argument("sghmc noise estimate must be >= 0");
  if (!(step_size * (friction - noise_estimate) > 0.0))
    throw std::invalid_argument("sghmc needs friction > noise estimate");
  if (burn_in_steps < 0 || step_budget < 0)
    throw std::invalid_argument("sghmc step counts must be non-negative");
  if (thinning < 1 || reservoir_size < 1 || minibatch_size < 1)
    throw std::invalid_argument("sghmc thinning, reservoir and minibatch sizes must be >= 1");
}

void HyperOptConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("hyper learning rate must be >= 0");
  if (hyper_interval < 1) throw std::invalid_argument("hyper interval must be >= 1");
}

PosteriorReservoir::PosteriorReservoir(const DgpModel& model, Index capacity)
    : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("reservoir capacity must be >= 1");
  restart(prior_mean_sample(model));
}

void PosteriorReservoir::restart(PosteriorSample start) {
  momentum = zeros_like(start);
  position = std::move(start);
  samples_.clear();
  steps = 0;
  step_scale = 1.0;
}

void PosteriorReservoir::push(PosteriorSample sample) {
  samples_.push_back(std::move(sample));
  while (static_cast<Index>(samples_.size()) > capacity_) samples_.pop_front();
}

void sghmc_update(Vector& position, Vector& momentum, const Vector& grad_potential,
                  const SghmcConfig& config, double step_size, RngStream& rng) {
  const double inv_mass = 1.0 / config.mass;
  const double noise_sd =
      std::sqrt(std::max(0.0, 2.0 * step_size * (config.friction - config.noise_estimate)));
  for (Index i = 0; i < momentum.size(); ++i) {
    const double injected = noise_sd > 0.0 ? noise_sd * rng.normal() : 0.0;
    momentum(i) += -step_size * grad_potential(i) -
                   step_size * config.friction * inv_mass * momentum(i) + injected;
  }
  position += step_size * inv_mass * momentum;
}

PosteriorSample grad_neg_log_joint(const DgpModel& model, const PosteriorSample& sample,
                                   const Matrix& inputs, const Matrix& targets,
                                   const PathNoise& noise, double dataset_size,
                                   double* neg_log_joint) {
  return grad_neg_log_joint(model, sample, inputs, targets, noise, dataset_size,
                            neg_log_joint, nullptr);
}

PosteriorSample grad_neg_log_joint(const DgpModel& model, const PosteriorSample& sample,
                                   const std::vector<Transition>& batch,
                                   double dataset_size, RngStream& rng) {
  if (batch.empty()) throw std::invalid_argument("grad_neg_log_joint: empty batch");
  const TrainingData d = make_training_data(model.normalizer, batch);
  return grad_neg_log_joint(model, sample, d.inputs, d.targets,
                            draw_path_noise(model, d.inputs.rows(), rng), dataset_size);
}

StepRecord sghmc_step(PosteriorReservoir& reservoir, const DgpModel& model,
                      const TrainingData& data, const SghmcConfig& config,
                      RngStream& rng, Warnings* warnings) {
  const Index n = data.inputs.rows();
  if (n == 0) throw std::invalid_argument("sghmc_step: empty dataset");
  const TrainingData batch = gather(data, draw_minibatch(n, config.minibatch_size, rng));
  const PathNoise noise = draw_path_noise(model, batch.inputs.rows(), rng);

  StepRecord rec;
  const PosteriorSample grad =
      grad_neg_log_joint(model, reservoir.position, batch.inputs, batch.targets, noise,
                         static_cast<double>(n), &rec.neg_log_joint, &rec.jitter_escalations);

  Vector position = flatten(reservoir.position);
  Vector momentum = flatten(reservoir.momentum);
  const Vector previous = position;
  const double eps = config.step_size * reservoir.step_scale;
  sghmc_update(position, momentum, flatten(grad), config, eps, rng);

  if (!position.allFinite() || position.cwiseAbs().maxCoeff() > kDivergenceBound) {
    rec.diverged = true;
    position = previous;
    momentum.setZero();
    reservoir.step_scale *= 0.5;
    if (warnings) {
      std::ostringstream msg;
      msg << "sghmc divergence at step " << reservoir.steps
          << "; momentum reset, step size now " << config.step_size * reservoir.step_scale;
      warnings->push_back(msg.str());
    }
  }
  unflatten(position, reservoir.position);
  unflatten(momentum, reservoir.momentum);

  ++reservoir.steps;
  const Index post = reservoir.steps - config.burn_in_steps;
  if (post > 0 && post % config.thinning == 0) reservoir.push(reservoir.position);
  return rec;
}

HyperStepRecord hyper_step(DgpModel& model, const PosteriorReservoir& reservoir,
                           const TrainingData& data, const SghmcConfig& sghmc,
                           const HyperOptConfig& config, HyperOptimizer& optimizer,
                           RngStream& rng, Warnings* warnings) {
  const Index n = data.inputs.rows();
  if (n == 0) throw std::invalid_argument("hyper_step: empty dataset");
  std::vector<const PosteriorSample*> window;
  for (const auto& s : reservoir.samples()) window.push_back(&s);
  if (window.empty()) window.push_back(&reservoir.position);

  const bool with_z = config.optimize_inducing_inputs;
  const TrainingData batch = gather(data, draw_minibatch(n, sghmc.minibatch_size, rng));
  const double weight = static_cast<double>(n) / static_cast<double>(batch.inputs.rows());

  Vector grad = Vector::Zero(hyper_dim(model, with_z));
  double objective = 0.0;
  Index finite = 0;
  for (const PosteriorSample* s : window) {
    const PathNoise noise = draw_path_noise(model, batch.inputs.rows(), rng);
    ModelGradient g;
    LogJoint lj;
    try {
      lj = log_joint(model, *s, batch.inputs, batch.targets, noise, weight,
                     GradientScope::kAll, &g);
    } catch (const NumericalFailure&) {
      continue;
    }
    const Vector packed = pack_gradient(g, model, with_z);
    if (!std::isfinite(lj.value) || !packed.allFinite()) continue;
    objective += lj.value;
    grad += packed;
    ++finite;
  }
  HyperStepRecord rec;
  if (finite == 0) {
    rec.skipped = true;
    rec.objective = std::numeric_limits<double>::quiet_NaN();
    if (warnings) warnings->push_back("hyper_step skipped: no finite objective in window");
    return rec;
  }
  rec.objective = objective / static_cast<double>(finite);
  grad /= static_cast<double>(finite);

  const Index dim = grad.size();
  if (optimizer.first_moment.size() != dim) {
    optimizer.first_moment = Vector::Zero(dim);
    optimizer.second_moment = Vector::Zero(dim);
    optimizer.iterations = 0;
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++optimizer.iterations;
  optimizer.first_moment = kBeta1 * optimizer.first_moment + (1.0 - kBeta1) * grad;
  optimizer.second_moment =
      kBeta2 * optimizer.second_moment + (1.0 - kBeta2) * grad.cwiseAbs2();
  const double t = static_cast<double>(optimizer.iterations);
  const Vector m_hat = optimizer.first_moment / (1.0 - std::pow(kBeta1, t));
  const Vector v_hat = optimizer.second_moment / (1.0 - std::pow(kBeta2, t));
  if (config.learning_rate > 0.0) {
    const Vector step =
        config.learning_rate * (m_hat.array() / (v_hat.array().sqrt() + kEps)).matrix();
    unpack_hyper(pack_hyper(model, with_z) + step, model, with_z, config);
  }
  return rec;
}

void prepare_for_training(DgpModel& model, PosteriorReservoir& reservoir,
                          const std::vector<Transition>& data, RngStream& rng) {
  if (data.empty()) throw std::invalid_argument("prepare_for_training: empty dataset");
  model.normalizer = Normalizer::fit(data);
  const TrainingData td = make_training_data(model.normalizer, data);
  const Matrix Z = select_inducing_inputs(td.inputs, model.layers.front().num_inducing(), rng);
  for (auto& layer : model.layers) layer.inducing_inputs = Z;

  // With warping layers at their prior mean the path is the identity, so the
  // output layer sees the data inputs directly.
  PosteriorSample start = prior_mean_sample(model);
  const GpLayer& out = model.layers.back();
  const double beta = model.noise_precision();
  const Matrix kzz = kernel_matrix(out.kernel, Z, Z);
  const Matrix kzx = kernel_matrix(out.kernel, Z, td.inputs);
  Matrix sigma = kzz + beta * kzx * kzx.transpose();
  sigma.diagonal().array() += model.relative_jitter * out.kernel.signal_variance();
  const Eigen::LDLT<Matrix> ldlt(sigma);
  Matrix U = kzz * ldlt.solve(beta * kzx * td.targets);
  if (U.allFinite()) start.inducing_outputs.back() = U;
  if (reservoir.capacity() < 1) throw std::invalid_argument("reservoir capacity must be >= 1");
  reservoir.restart(std::move(start));
}

TrainResult train_model(const DgpModel& model, const PosteriorReservoir& reservoir,
                        const HyperOptimizer& optimizer,
                        const std::vector<Transition>& data, const SghmcConfig& sghmc,
                        const HyperOptConfig& hyper, RngStream& rng) {
  sghmc.validate();
  hyper.validate();
  TrainResult result{model, reservoir, optimizer, {}, {}};
  if (sghmc.step_budget == 0) return result;
  if (data.empty()) throw std::invalid_argument("train_model: empty dataset");
  if (!result.reservoir.position.matches(result.model))
    throw std::invalid_argument("train_model: reservoir does not match the model");

  const TrainingData td = make_training_data(result.model.normalizer, data);
  Index escalations = 0;
  double nlj_acc = 0.0;
  Index nlj_count = 0;
  for (Index step = 1; step <= sghmc.step_budget; ++step) {
    StepRecord rec = sghmc_step(result.reservoir, result.model, td, sghmc, rng, &result.warnings);
    nlj_acc += rec.neg_log_joint;
    escalations += rec.jitter_escalations;
    ++nlj_count;
    if (step % hyper.hyper_interval == 0) {
      hyper_step(result.model, result.reservoir, td, sghmc, hyper, result.optimizer, rng,
                 &result.warnings);
      TraceRow row;
      row.step = step;
      row.neg_log_joint = nlj_acc / static_cast<double>(nlj_count);
      row.noise_precision = result.model.noise_precision();
      for (const auto& layer : result.model.layers)
        row.mean_lengthscales.push_back(layer.kernel.lengthscales().mean());
      row.jitter_warnings = escalations;
      result.trace.push_back(std::move(row));
      nlj_acc = 0.0;
      nlj_count = 0;
      escalations = 0;
    }
  }
  return result;
}

const PosteriorSample& resample_posterior(const PosteriorReservoir& reservoir,
                                          RngStream& rng) {
  if (reservoir.empty())
    throw InvalidState("resample_posterior: the posterior reservoir is empty");
  return reservoir.samples()[rng.index(reservoir.samples().size())];
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows,
                     Index num_layers, bool header) {
  if (header) {
    out << "step,neg_log_joint,beta";
    for (Index l = 0; l < num_layers; ++l) out << ",mean_lengthscale_" << l;
    out << ",jitter_warnings\n";
  }
  for (const TraceRow& r : rows) {
    out << r.step << ',' << r.neg_log_joint << ',' << r.noise_precision;
    for (double ls : r.mean_lengthscales) out << ',' << ls;
    out << ',' << r.jitter_warnings << '\n';
  }
}

}  // namespace dgpmpc
