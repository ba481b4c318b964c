#pragma once

#include <cmath>
#include <vector>

#include "dgpmpc/dgp_model.hpp"
#include "dgpmpc/environments.hpp"
#include "dgpmpc/kernels.hpp"

namespace testutil {

using dgpmpc::Index;
using dgpmpc::Matrix;
using dgpmpc::Vector;

// Closed-form kernels written independently of the library.
inline double ref_kernel(dgpmpc::KernelFamily family, const Vector& ls, double s2,
                         const Vector& x, const Vector& y) {
  const double r2 = ((x - y).array() / ls.array()).square().sum();
  const double r = std::sqrt(r2);
  switch (family) {
    case dgpmpc::KernelFamily::kSquaredExponential: return s2 * std::exp(-0.5 * r2);
    case dgpmpc::KernelFamily::kMatern52:
      return s2 * (1 + std::sqrt(5.0) * r + 5.0 * r2 / 3.0) * std::exp(-std::sqrt(5.0) * r);
    case dgpmpc::KernelFamily::kMatern32:
      return s2 * (1 + std::sqrt(3.0) * r) * std::exp(-std::sqrt(3.0) * r);
    case dgpmpc::KernelFamily::kMatern12: return s2 * std::exp(-r);
  }
  return 0.0;
}

inline Matrix ref_gram(dgpmpc::KernelFamily family, const Vector& ls, double s2,
                       const Matrix& X, const Matrix& Y) {
  Matrix K(X.rows(), Y.rows());
  for (Index i = 0; i < X.rows(); ++i)
    for (Index j = 0; j < Y.rows(); ++j)
      K(i, j) = ref_kernel(family, ls, s2, X.row(i).transpose(), Y.row(j).transpose());
  return K;
}

// Dense GP regression: predictive mean and covariance of f at Xs.
struct DenseGp {
  Matrix mean;
  Matrix cov;
};

inline DenseGp dense_gp(dgpmpc::KernelFamily family, const Vector& ls, double s2,
                        double noise_var, const Matrix& X, const Matrix& Y, const Matrix& Xs) {
  const Matrix K = ref_gram(family, ls, s2, X, X) +
                   noise_var * Matrix::Identity(X.rows(), X.rows());
  const Matrix Ks = ref_gram(family, ls, s2, X, Xs);
  const Eigen::FullPivLU<Matrix> lu(K);
  DenseGp out;
  out.mean = Ks.transpose() * lu.solve(Y);
  out.cov = ref_gram(family, ls, s2, Xs, Xs) - Ks.transpose() * lu.solve(Ks);
  return out;
}

// Single-layer model whose inducing inputs are X, with posterior mean and
// covariance of U given (X, Y) under noise 1/beta.
struct ExactGpSetup {
  dgpmpc::DgpModel model;
  dgpmpc::PosteriorSample mean_sample;
  Matrix u_cov;  // shared across output columns
};

inline ExactGpSetup exact_gp_setup(dgpmpc::KernelFamily family, const Matrix& X, const Matrix& Y,
                                   double lengthscale, double s2, double beta) {
  dgpmpc::ModelShape shape;
  shape.state_dim = Y.cols();
  shape.action_dim = X.cols() - Y.cols();
  shape.num_layers = 1;
  shape.num_inducing = X.rows();
  shape.family = family;
  shape.lengthscale = lengthscale;
  shape.final_signal_variance = s2;
  shape.noise_precision = beta;
  ExactGpSetup out{dgpmpc::make_dgp_model(shape), {}, {}};
  out.model.layers[0].inducing_inputs = X;
  out.model.relative_jitter = 1e-14;
  const Vector ls = Vector::Constant(X.cols(), lengthscale);
  const Matrix K = ref_gram(family, ls, s2, X, X);
  const Eigen::FullPivLU<Matrix> lu(K + (1.0 / beta) * Matrix::Identity(X.rows(), X.rows()));
  out.mean_sample.inducing_outputs = {K * lu.solve(Y)};
  out.u_cov = K - K * lu.solve(K);
  return out;
}

inline double max_rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

}  // namespace testutil
