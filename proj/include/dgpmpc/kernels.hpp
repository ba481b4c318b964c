#pragma once

#include <string>
#include <string_view>

#include "dgpmpc/common.hpp"

namespace dgpmpc {

enum class KernelFamily { kSquaredExponential, kMatern52, kMatern32, kMatern12 };

std::string_view to_string(KernelFamily family);
// Accepts "sexp", "matern52", "matern32", "matern12".
KernelFamily parse_kernel_family(std::string_view name);

// Stationary ARD kernel k(x, y) = s2 * g(r), r = ||(x - y) / lengthscales||.
// Hyperparameters are held in log space so any update keeps them positive.
class KernelSpec {
 public:
  KernelSpec(KernelFamily family, const Vector& lengthscales,
             double signal_variance);
  static KernelSpec from_log(KernelFamily family, const Vector& log_lengthscales,
                             double log_signal_variance);

  KernelFamily family() const { return family_; }
  Index input_dim() const { return log_lengthscales_.size(); }

  Vector lengthscales() const { return log_lengthscales_.array().exp(); }
  double lengthscale(Index d) const;
  double signal_variance() const;

  const Vector& log_lengthscales() const { return log_lengthscales_; }
  double log_signal_variance() const { return log_signal_variance_; }
  void set_log_params(const Vector& log_lengthscales, double log_signal_variance);

 private:
  KernelFamily family_;
  Vector log_lengthscales_;
  double log_signal_variance_;
};

// Gradient of a scalar objective with respect to the log hyperparameters.
struct KernelGradient {
  Vector log_lengthscales;
  double log_signal_variance = 0.0;

  static KernelGradient zeros(Index input_dim) {
    return {Vector::Zero(input_dim), 0.0};
  }
};

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& y);

// Entry (i, j) is kernel_eval(spec, X.row(i), Y.row(j)).
Matrix kernel_matrix(const KernelSpec& spec, const Matrix& X, const Matrix& Y);
// kernel_matrix(spec, X, X), evaluating each unordered pair once.
Matrix kernel_matrix(const KernelSpec& spec, const Matrix& X);

// Reverse-mode sweep through kernel_matrix. Given dK = d(objective)/dK for
// every entry of K = kernel_matrix(spec, X, Y), accumulates into grad and
// (when non-null) into dX and dY.
void kernel_matrix_backward(const KernelSpec& spec, const Matrix& X,
                            const Matrix& Y, const Matrix& dK,
                            KernelGradient& grad, Matrix* dX, Matrix* dY);

struct CholeskyFactor {
  Matrix lower;
  double jitter_applied = 0.0;
};

// Factorizes K + jitter * I, starting at base_jitter and multiplying by ten
// after each failed attempt until max_jitter. Throws std::invalid_argument
// if K is not square and symmetric, NumericalFailure if the cap is hit.
CholeskyFactor stabilized_cholesky(const Matrix& K, double base_jitter,
                                   double max_jitter);

// Default jitter schedule, relative to the kernel signal variance.
inline constexpr double kRelativeJitter = 1e-6;
inline constexpr double kRelativeJitterCap = 1e-2;

}  // namespace dgpmpc
