#pragma once

// Squared-exponential kernel on states and time, its derivatives, and the
// matrix-valued PHS kernel.
//
// The quadratic form uses the lengthscale weights directly:
//   k(x, x') = sigma_f^2 exp(-sum_i lambda_i (x_i - x'_i)^2)
// so each lambda_i acts as a precision weight, not as a lengthscale.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "gpphs/errors.hpp"

namespace gpphs::kernels {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class SeHyperparams {
 public:
  SeHyperparams(double sigma_f, VectorXd lambda) : sigma_f_(sigma_f), lambda_(std::move(lambda)) {
    if (!(sigma_f_ > 0.0) || !std::isfinite(sigma_f_)) {
      throw std::invalid_argument("SeHyperparams: sigma_f must be positive and finite");
    }
    for (Eigen::Index i = 0; i < lambda_.size(); ++i) {
      if (!(lambda_[i] > 0.0) || !std::isfinite(lambda_[i])) {
        throw std::invalid_argument("SeHyperparams: lambda entries must be positive and finite");
      }
    }
  }

  double sigma_f() const { return sigma_f_; }
  const VectorXd& lambda() const { return lambda_; }
  Eigen::Index dim() const { return lambda_.size(); }

 private:
  double sigma_f_;
  VectorXd lambda_;
};

namespace detail {
inline void check_dims(const VectorXd& x, const VectorXd& xp, Eigen::Index n, const char* who) {
  if (x.size() != n || xp.size() != n) {
    throw DimensionMismatch(std::string(who) + ": expected vectors of size " + std::to_string(n));
  }
}
}  // namespace detail

/// exp(-||x - x'||^2_Lambda), the unit-amplitude SE correlation.
inline double se_correlation(const VectorXd& x, const VectorXd& xp, const VectorXd& lambda) {
  return std::exp(-(lambda.array() * (x - xp).array().square()).sum());
}

inline double k_hh(const VectorXd& x, const VectorXd& xp, const SeHyperparams& h) {
  detail::check_dims(x, xp, h.dim(), "k_hh");
  return h.sigma_f() * h.sigma_f() * se_correlation(x, xp, h.lambda());
}

/// Gradient of k_hh with respect to its first argument.
inline VectorXd grad_k_hh(const VectorXd& x, const VectorXd& xp, const SeHyperparams& h) {
  detail::check_dims(x, xp, h.dim(), "grad_k_hh");
  const double k = k_hh(x, xp, h);
  return (-2.0 * k) * (h.lambda().array() * (x - xp).array()).matrix();
}

/// Mixed second derivative d^2/dx_i dx'_j of exp(-||x - x'||^2_Lambda):
///   (2 lambda_i delta_ij - 4 lambda_i lambda_j d_i d_j) exp(-||d||^2_Lambda), d = x - x'.
inline MatrixXd hessian_pi(const VectorXd& x, const VectorXd& xp, const VectorXd& lambda) {
  detail::check_dims(x, xp, lambda.size(), "hessian_pi");
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (!(lambda[i] > 0.0)) throw std::invalid_argument("hessian_pi: lambda must be positive");
  }
  const VectorXd ld = (lambda.array() * (x - xp).array()).matrix();
  const double e = se_correlation(x, xp, lambda);
  MatrixXd pi = -4.0 * ld * ld.transpose();
  pi.diagonal() += 2.0 * lambda;
  return e * pi;
}

/// Evaluates J(x) - R(x) at a state.
using JrFunction = std::function<MatrixXd(const VectorXd&)>;

/// k_phs with J_R already evaluated at both points.
inline MatrixXd k_phs_block(const VectorXd& x, const VectorXd& xp, const MatrixXd& jr_x,
                            const MatrixXd& jr_xp, const SeHyperparams& h) {
  return (h.sigma_f() * h.sigma_f()) * jr_x * hessian_pi(x, xp, h.lambda()) * jr_xp.transpose();
}

/// sigma_f^2 J_R(x) Pi(x, x') J_R(x')^T: covariance between the drifts at x and x'.
inline MatrixXd k_phs(const VectorXd& x, const VectorXd& xp, const SeHyperparams& h,
                      const JrFunction& jr) {
  return k_phs_block(x, xp, jr(x), jr(xp), h);
}

/// Covariance between the drift at x and the Hamiltonian value at x'.
inline VectorXd k_dxh_block(const VectorXd& x, const VectorXd& xp, const MatrixXd& jr_x,
                            const SeHyperparams& h) {
  return jr_x * grad_k_hh(x, xp, h);
}

inline VectorXd k_dxh(const VectorXd& x, const VectorXd& xp, const SeHyperparams& h,
                      const JrFunction& jr) {
  return k_dxh_block(x, xp, jr(x), h);
}

struct TimeKernel {
  double k;    // k(t, t')
  double k1;   // d/dt k(t, t')
  double k12;  // d^2/dt dt' k(t, t')
};

/// Scalar SE kernel in time with weight lambda_t = ell, plus the derivatives the
/// state-derivative GP needs.
inline TimeKernel time_kernel_derivatives(double t, double tp, double sigma_f, double ell) {
  const double d = t - tp;
  const double k = sigma_f * sigma_f * std::exp(-ell * d * d);
  return {k, -2.0 * ell * d * k, (2.0 * ell - 4.0 * ell * ell * d * d) * k};
}

}  // namespace gpphs::kernels
