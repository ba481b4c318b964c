#include "dgpmpc/kernels.hpp"

#include <cmath>
#include <sstream>

namespace dgpmpc {
namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kSqrt5 = 2.23606797749979;

struct Profile {
  double value;     // g(r)
  double d_sqdist;  // dg / d(r^2)
};

// Unit-variance kernel profile as a function of the squared scaled distance.
Profile profile(KernelFamily family, double r2) {
  switch (family) {
    case KernelFamily::kSquaredExponential: {
      const double v = std::exp(-0.5 * r2);
      return {v, -0.5 * v};
    }
    case KernelFamily::kMatern52: {
      const double r = std::sqrt(r2);
      const double e = std::exp(-kSqrt5 * r);
      return {(1.0 + kSqrt5 * r + 5.0 * r2 / 3.0) * e,
              -(5.0 / 6.0) * (1.0 + kSqrt5 * r) * e};
    }
    case KernelFamily::kMatern32: {
      const double r = std::sqrt(r2);
      const double e = std::exp(-kSqrt3 * r);
      return {(1.0 + kSqrt3 * r) * e, -1.5 * e};
    }
    case KernelFamily::kMatern12: {
      const double r = std::sqrt(r2);
      const double e = std::exp(-r);
      // Not differentiable at r = 0; use the zero subgradient there.
      return {e, r > 0.0 ? -0.5 * e / r : 0.0};
    }
  }
  throw std::invalid_argument("unknown kernel family");
}

void require_dims(const KernelSpec& spec, Index cols, const char* what) {
  if (cols != spec.input_dim()) {
    std::ostringstream msg;
    msg << what << " has dimension " << cols << " but the kernel expects "
        << spec.input_dim();
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::kSquaredExponential: return "sexp";
    case KernelFamily::kMatern52: return "matern52";
    case KernelFamily::kMatern32: return "matern32";
    case KernelFamily::kMatern12: return "matern12";
  }
  return "unknown";
}

KernelFamily parse_kernel_family(std::string_view name) {
  if (name == "sexp") return KernelFamily::kSquaredExponential;
  if (name == "matern52") return KernelFamily::kMatern52;
  if (name == "matern32") return KernelFamily::kMatern32;
  if (name == "matern12") return KernelFamily::kMatern12;
  throw std::invalid_argument("unknown kernel family '" + std::string(name) +
                              "' (expected sexp|matern52|matern32|matern12)");
}

KernelSpec::KernelSpec(KernelFamily family, const Vector& lengthscales,
                       double signal_variance)
    : family_(family) {
  if (lengthscales.size() == 0)
    throw std::invalid_argument("kernel needs at least one lengthscale");
  if ((lengthscales.array() <= 0.0).any() || !lengthscales.allFinite())
    throw std::invalid_argument("kernel lengthscales must be positive");
  if (!(signal_variance > 0.0) || !std::isfinite(signal_variance))
    throw std::invalid_argument("kernel signal variance must be positive");
  log_lengthscales_ = lengthscales.array().log();
  log_signal_variance_ = std::log(signal_variance);
}

KernelSpec KernelSpec::from_log(KernelFamily family, const Vector& log_lengthscales,
                                double log_signal_variance) {
  KernelSpec spec(family, log_lengthscales.array().exp(), std::exp(log_signal_variance));
  // Keep the log values bit-exact rather than round-tripping through exp.
  spec.set_log_params(log_lengthscales, log_signal_variance);
  return spec;
}

double KernelSpec::lengthscale(Index d) const {
  return std::exp(log_lengthscales_(d));
}

double KernelSpec::signal_variance() const { return std::exp(log_signal_variance_); }

void KernelSpec::set_log_params(const Vector& log_lengthscales,
                                double log_signal_variance) {
  if (log_lengthscales.size() != log_lengthscales_.size())
    throw std::invalid_argument("lengthscale count cannot change");
  if (!log_lengthscales.allFinite() || !std::isfinite(log_signal_variance))
    throw std::invalid_argument("non-finite kernel hyperparameters");
  log_lengthscales_ = log_lengthscales;
  log_signal_variance_ = log_signal_variance;
}

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& y) {
  require_dims(spec, x.size(), "x");
  require_dims(spec, y.size(), "y");
  const Vector inv_ls = (-spec.log_lengthscales()).array().exp();
  double r2 = 0.0;
  for (Index d = 0; d < x.size(); ++d) {
    const double diff = (x(d) - y(d)) * inv_ls(d);
    r2 += diff * diff;
  }
  return spec.signal_variance() * profile(spec.family(), r2).value;
}

Matrix kernel_matrix(const KernelSpec& spec, const Matrix& X, const Matrix& Y) {
  require_dims(spec, X.cols(), "X");
  require_dims(spec, Y.cols(), "Y");
  const Vector inv_ls = (-spec.log_lengthscales()).array().exp();
  const double s2 = spec.signal_variance();
  Matrix K(X.rows(), Y.rows());
  for (Index j = 0; j < Y.rows(); ++j) {
    for (Index i = 0; i < X.rows(); ++i) {
      double r2 = 0.0;
      for (Index d = 0; d < X.cols(); ++d) {
        const double diff = (X(i, d) - Y(j, d)) * inv_ls(d);
        r2 += diff * diff;
      }
      K(i, j) = s2 * profile(spec.family(), r2).value;
    }
  }
  return K;
}

Matrix kernel_matrix(const KernelSpec& spec, const Matrix& X) {
  require_dims(spec, X.cols(), "X");
  const Vector inv_ls = (-spec.log_lengthscales()).array().exp();
  const double s2 = spec.signal_variance();
  const Index n = X.rows();
  Matrix K(n, n);
  for (Index j = 0; j < n; ++j) {
    K(j, j) = s2 * profile(spec.family(), 0.0).value;
    for (Index i = j + 1; i < n; ++i) {
      double r2 = 0.0;
      for (Index d = 0; d < X.cols(); ++d) {
        const double diff = (X(i, d) - X(j, d)) * inv_ls(d);
        r2 += diff * diff;
      }
      K(i, j) = s2 * profile(spec.family(), r2).value;
      K(j, i) = K(i, j);
    }
  }
  return K;
}

void kernel_matrix_backward(const KernelSpec& spec, const Matrix& X,
                            const Matrix& Y, const Matrix& dK,
                            KernelGradient& grad, Matrix* dX, Matrix* dY) {
  require_dims(spec, X.cols(), "X");
  require_dims(spec, Y.cols(), "Y");
  const Index dim = spec.input_dim();
  const Vector inv_ls = (-spec.log_lengthscales()).array().exp();
  const double s2 = spec.signal_variance();
  Vector diff(dim);
  for (Index j = 0; j < Y.rows(); ++j) {
    for (Index i = 0; i < X.rows(); ++i) {
      const double upstream = dK(i, j);
      if (upstream == 0.0) continue;
      double r2 = 0.0;
      for (Index d = 0; d < dim; ++d) {
        diff(d) = (X(i, d) - Y(j, d)) * inv_ls(d);
        r2 += diff(d) * diff(d);
      }
      const Profile p = profile(spec.family(), r2);
      grad.log_signal_variance += upstream * s2 * p.value;
      // d r^2 / d x_d = 2 (x_d - y_d) / l_d^2 ; d r^2 / d log l_d = -2 diff_d^2
      const double g = upstream * s2 * p.d_sqdist;
      if (g == 0.0) continue;
      for (Index d = 0; d < dim; ++d) {
        grad.log_lengthscales(d) -= 2.0 * g * diff(d) * diff(d);
        const double dx = 2.0 * g * diff(d) * inv_ls(d);
        if (dX) (*dX)(i, d) += dx;
        if (dY) (*dY)(j, d) -= dx;
      }
    }
  }
}

CholeskyFactor stabilized_cholesky(const Matrix& K, double base_jitter,
                                   double max_jitter) {
  if (K.rows() != K.cols())
    throw std::invalid_argument("stabilized_cholesky: matrix is not square");
  const Index n = K.rows();
  if (n == 0) return {Matrix(0, 0), 0.0};
  const double scale = K.cwiseAbs().maxCoeff();
  if (!std::isfinite(scale))
    throw NumericalFailure("stabilized_cholesky: matrix has non-finite entries");
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1e-300))
    throw std::invalid_argument("stabilized_cholesky: matrix is not symmetric");
  if (base_jitter < 0.0 || max_jitter < base_jitter)
    throw std::invalid_argument("stabilized_cholesky: bad jitter schedule");

  double jitter = base_jitter;
  Matrix work = K;
  while (true) {
    work.diagonal() = K.diagonal().array() + jitter;
    Eigen::LLT<Matrix> llt(work);
    if (llt.info() == Eigen::Success) {
      Matrix lower = llt.matrixL();
      const auto diag = lower.diagonal().array();
      if ((diag > 0.0).all() && diag.allFinite()) return {std::move(lower), jitter};
    }
    if (jitter >= max_jitter || jitter == 0.0) break;
    jitter = std::min(jitter * 10.0, max_jitter);
  }
  std::ostringstream msg;
  msg << "Cholesky factorization of a " << n << "x" << n
      << " matrix failed with jitter " << jitter;
  throw NumericalFailure(msg.str());
}

}  // namespace dgpmpc
