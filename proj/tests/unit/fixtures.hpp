#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "gpphs/gpphs.hpp"

namespace fixtures {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Damped unit oscillator, H = q^2/2 + p^2/2, dissipation "d" on the momentum.
inline gpphs::dynamics::PhsStructure mass_spring(double d_init = 0.3, double d_lo = 0.0, double d_hi = 5.0) {
  using gpphs::dynamics::ExprMatrix;
  return gpphs::dynamics::PhsStructure(2, 1, ExprMatrix::parse({{"0", "1"}, {"-1", "0"}}),
                                       ExprMatrix::parse({{"0", "0"}, {"0", "d"}}), ExprMatrix::parse({{"0"}, {"1"}}),
                                       {{"d", d_init, d_lo, d_hi}});
}

inline gpphs::dynamics::HamiltonianFn quadratic_h() {
  return {[](const VectorXd& x) { return 0.5 * x.squaredNorm(); }, [](const VectorXd& x) { return x; }};
}

/// Noise-free trajectory of the damped oscillator with zero input.
inline gpphs::learning::Trajectory mass_spring_data(double damping = 0.2, int samples = 101, double t_end = 10.0,
                                                    double noise = 0.0, std::uint64_t seed = 0) {
  VectorXd x0(2);
  x0 << 1.5, 0.0;
  gpphs::numerics::RkConfig rk;
  rk.dt = 1e-3;
  const auto sol = gpphs::numerics::integrate_rk(
      [damping](double, const VectorXd& x) {
        VectorXd dx(2);
        dx << x[1], -x[0] - damping * x[1];
        return dx;
      },
      x0, 0.0, t_end, rk);
  std::vector<double> times(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k) times[static_cast<std::size_t>(k)] = t_end * k / (samples - 1);
  MatrixXd states = gpphs::numerics::resample(sol, times);
  const gpphs::numerics::CounterRng rng(seed);
  for (Eigen::Index i = 0; i < states.size(); ++i) states.data()[i] += noise * rng.normal(static_cast<std::uint64_t>(i));
  return gpphs::learning::Trajectory(times, states, MatrixXd::Zero(samples, 1));
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace fixtures
