#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dgpmpc/inference.hpp"
#include "dgpmpc/log_joint.hpp"
#include "helpers.hpp"

using namespace dgpmpc;

namespace {

struct Tiny {
  DgpModel model;
  PosteriorSample sample;
  Matrix X, Y;
  PathNoise noise;
};

// L=2, M=3, N=5 with S=1, A=1 so every dimension is at most 2.
Tiny tiny_model(KernelFamily family, std::uint64_t seed) {
  ModelShape shape;
  shape.state_dim = 1;
  shape.action_dim = 1;
  shape.num_layers = 2;
  shape.num_inducing = 3;
  shape.family = family;
  shape.warp_signal_variance = 0.3;
  shape.noise_precision = 20.0;
  Tiny t{make_dgp_model(shape), {}, {}, {}, {}};
  RngStream rng(seed);
  for (auto& layer : t.model.layers) layer.inducing_inputs = rng.normal_matrix(3, 2);
  t.sample = prior_mean_sample(t.model);
  for (auto& u : t.sample.inducing_outputs) u += 0.5 * rng.normal_matrix(u.rows(), u.cols());
  t.X = rng.normal_matrix(5, 2);
  t.Y = rng.normal_matrix(5, 1);
  t.noise = draw_path_noise(t.model, 5, rng);
  return t;
}

double neg_objective(const Tiny& t, const PosteriorSample& u, double n) {
  return -log_joint(t.model, u, t.X, t.Y, t.noise, n / 5.0).value;
}

}  // namespace

TEST_CASE("prior at the mean equals the log-determinant form") {
  Tiny t = tiny_model(KernelFamily::kMatern52, 3);
  t.model.relative_jitter = 1e-12;
  const PosteriorSample u = prior_mean_sample(t.model);
  double expected = 0.0;
  for (const auto& layer : t.model.layers) {
    const Matrix K = testutil::ref_gram(layer.kernel.family(), layer.kernel.lengthscales(),
                                        layer.kernel.signal_variance(), layer.inducing_inputs,
                                        layer.inducing_inputs);
    const double M = static_cast<double>(layer.num_inducing());
    const double D = static_cast<double>(layer.output_dim);
    const double logdet = std::log(K.determinant());
    expected += -0.5 * (M * D * std::log(2 * std::numbers::pi) + D * logdet);
  }
  CHECK(log_prior(t.model, u) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("log joint grows as the residual shrinks") {
  Matrix X(1, 2), Y(1, 1);
  X << 0.2, -0.1;
  Y << 0.4;
  auto setup = testutil::exact_gp_setup(KernelFamily::kSquaredExponential, X, Y, 1.0, 1.0, 1e4);
  PathNoise none;
  const LayerConditional c = layer_conditional(setup.model.layers[0],
                                               setup.mean_sample.inducing_outputs[0], X, 1e-14);
  double previous = -std::numeric_limits<double>::infinity();
  for (double offset : {1.0, 0.5, 0.1, 0.01, 0.0}) {
    Matrix target = c.mean;
    target(0, 0) += offset;
    const double v = log_joint(setup.model, setup.mean_sample, X, target, none).value;
    CHECK(v > previous);
    previous = v;
  }
}

TEST_CASE("log joint rejects an empty batch") {
  Tiny t = tiny_model(KernelFamily::kSquaredExponential, 1);
  CHECK_THROWS_AS(log_joint(t.model, t.sample, Matrix(0, 2), Matrix(0, 1), PathNoise{}),
                  std::invalid_argument);
}

TEST_CASE("inducing-output gradient matches central differences") {
  for (KernelFamily f : {KernelFamily::kSquaredExponential, KernelFamily::kMatern52,
                         KernelFamily::kMatern32, KernelFamily::kMatern12}) {
    const Tiny t = tiny_model(f, 17);
    const double N = 40.0;
    const PosteriorSample g = grad_neg_log_joint(t.model, t.sample, t.X, t.Y, t.noise, N);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t l = 0; l < g.inducing_outputs.size(); ++l) {
      for (Index i = 0; i < g.inducing_outputs[l].size(); ++i) {
        PosteriorSample up = t.sample, dn = t.sample;
        up.inducing_outputs[l].data()[i] += h;
        dn.inducing_outputs[l].data()[i] -= h;
        const double fd = (neg_objective(t, up, N) - neg_objective(t, dn, N)) / (2 * h);
        const double an = g.inducing_outputs[l].data()[i];
        worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(fd)));
      }
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("hyperparameter gradient matches central differences") {
  for (KernelFamily f : {KernelFamily::kSquaredExponential, KernelFamily::kMatern32}) {
    const Tiny t = tiny_model(f, 23);
    ModelGradient g;
    log_joint(t.model, t.sample, t.X, t.Y, t.noise, 2.0, GradientScope::kAll, &g);
    auto value = [&](const DgpModel& m) {
      return log_joint(m, t.sample, t.X, t.Y, t.noise, 2.0).value;
    };
    const double h = 1e-6;
    for (std::size_t l = 0; l < t.model.layers.size(); ++l) {
      const KernelSpec& k = t.model.layers[l].kernel;
      for (Index d = 0; d < k.input_dim(); ++d) {
        DgpModel up = t.model, dn = t.model;
        Vector lu = k.log_lengthscales(), ld = k.log_lengthscales();
        lu(d) += h;
        ld(d) -= h;
        up.layers[l].kernel.set_log_params(lu, k.log_signal_variance());
        dn.layers[l].kernel.set_log_params(ld, k.log_signal_variance());
        const double fd = (value(up) - value(dn)) / (2 * h);
        CHECK(g.kernels[l].log_lengthscales(d) == doctest::Approx(fd).epsilon(1e-5));
      }
      DgpModel up = t.model, dn = t.model;
      up.layers[l].kernel.set_log_params(k.log_lengthscales(), k.log_signal_variance() + h);
      dn.layers[l].kernel.set_log_params(k.log_lengthscales(), k.log_signal_variance() - h);
      CHECK(g.kernels[l].log_signal_variance ==
            doctest::Approx((value(up) - value(dn)) / (2 * h)).epsilon(1e-5));

      up = t.model;
      dn = t.model;
      up.layers[l].inducing_inputs(1, 0) += h;
      dn.layers[l].inducing_inputs(1, 0) -= h;
      CHECK(g.inducing_inputs[l](1, 0) ==
            doctest::Approx((value(up) - value(dn)) / (2 * h)).epsilon(1e-5));
    }
    DgpModel up = t.model, dn = t.model;
    up.log_noise_precision += h;
    dn.log_noise_precision -= h;
    CHECK(g.log_noise_precision == doctest::Approx((value(up) - value(dn)) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("prior-only gradient vanishes at the prior mean") {
  const Tiny t = tiny_model(KernelFamily::kMatern32, 5);
  const PosteriorSample g =
      grad_neg_log_joint(t.model, prior_mean_sample(t.model), t.X, t.Y, t.noise, 0.0);
  for (const auto& m : g.inducing_outputs) CHECK(m.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("doubling the likelihood weight doubles its gradient") {
  const Tiny t = tiny_model(KernelFamily::kSquaredExponential, 9);
  const PosteriorSample g0 = grad_neg_log_joint(t.model, t.sample, t.X, t.Y, t.noise, 0.0);
  const PosteriorSample g1 = grad_neg_log_joint(t.model, t.sample, t.X, t.Y, t.noise, 5.0);
  const PosteriorSample g2 = grad_neg_log_joint(t.model, t.sample, t.X, t.Y, t.noise, 10.0);
  for (std::size_t l = 0; l < g0.inducing_outputs.size(); ++l) {
    const Matrix lik1 = g1.inducing_outputs[l] - g0.inducing_outputs[l];
    const Matrix lik2 = g2.inducing_outputs[l] - g0.inducing_outputs[l];
    CHECK((lik2 - 2.0 * lik1).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + lik2.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("exact GP posterior mean is a stationary point") {
  RngStream rng(2);
  Matrix X = rng.normal_matrix(8, 2);
  Matrix Y(8, 1);
  for (Index i = 0; i < 8; ++i) Y(i, 0) = std::sin(X(i, 0)) - 0.5 * X(i, 1);
  const auto setup = testutil::exact_gp_setup(KernelFamily::kSquaredExponential, X, Y, 1.2, 1.0, 50.0);
  const PosteriorSample g =
      grad_neg_log_joint(setup.model, setup.mean_sample, X, Y, PathNoise{}, 8.0);
  CHECK(g.inducing_outputs[0].norm() <= 1e-6);
}

TEST_CASE("observation noise adds 1/beta of variance") {
  ModelShape shape;
  shape.state_dim = 2;
  shape.action_dim = 1;
  shape.num_layers = 2;
  shape.num_inducing = 4;
  shape.noise_precision = 25.0;
  DgpModel model = make_dgp_model(shape);
  RngStream rng(4);
  for (auto& layer : model.layers) layer.inducing_inputs = rng.normal_matrix(4, 3);
  const PosteriorSample u = prior_mean_sample(model);
  const Index n = 100000;
  const Matrix S = Matrix::Constant(n, 2, 5.0), A = Matrix::Constant(n, 1, 5.0);
  // Distinct streams per call; rows are all equal so each call is one draw.
  Eigen::Vector2d var_with = Eigen::Vector2d::Zero(), var_without = Eigen::Vector2d::Zero();
  for (bool noise : {true, false}) {
    Matrix draws(n, 2);
    for (Index i = 0; i < n; i += 1000) {
      RngStream r = rng.split({static_cast<std::uint64_t>(i), noise ? 1u : 0u});
      for (Index j = 0; j < 1000; ++j) {
        draws.row(i + j) = predict_next_states(model, u, S.topRows(1), A.topRows(1), noise, r);
      }
    }
    const Eigen::RowVector2d mean = draws.colwise().mean();
    const Eigen::Vector2d var =
        ((draws.rowwise() - mean).array().square().colwise().sum() / double(n - 1)).transpose();
    (noise ? var_with : var_without) = var;
  }
  for (int d = 0; d < 2; ++d)
    CHECK((var_with(d) - var_without(d)) == doctest::Approx(1.0 / 25.0).epsilon(0.05));
}
