#pragma once

// Magnetic levitation benchmark: ground-truth dynamics, input profiles, and
// the noisy training/test data generator.
//
// States: x1 ball position, x2 momentum, x3 flux linkage. Inductance
// L(x1) = 1/(0.1 + x1^2), so H = x2^2/(2m) + x3^2 (0.1 + x1^2)/2.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gpphs/dynamics.hpp"
#include "gpphs/learning.hpp"
#include "gpphs/numerics.hpp"

namespace gpphs::maglev {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Constants {
  double mass = 0.1;
  double resistance = 0.1;
  double drag = 1.0;  // c
};

inline double hamiltonian(const VectorXd& x, const Constants& k = {}) {
  return x[1] * x[1] / (2.0 * k.mass) + 0.5 * x[2] * x[2] * (0.1 + x[0] * x[0]);
}

inline VectorXd hamiltonian_gradient(const VectorXd& x, const Constants& k = {}) {
  VectorXd g(3);
  g << x[2] * x[2] * x[0], x[1] / k.mass, x[2] * (0.1 + x[0] * x[0]);
  return g;
}

inline dynamics::HamiltonianFn true_hamiltonian(const Constants& k = {}) {
  return {[k](const VectorXd& x) { return hamiltonian(x, k); },
          [k](const VectorXd& x) { return hamiltonian_gradient(x, k); }};
}

/// Hand-written right-hand side, independent of the expression machinery.
inline VectorXd rhs(const VectorXd& x, double u, const Constants& k = {}) {
  VectorXd dx(3);
  const double v = x[1] / k.mass;
  dx[0] = v;
  dx[1] = -x[2] * x[2] * x[0] - k.drag * std::fabs(x[1]) * v;
  dx[2] = -x[2] * (0.1 + x[0] * x[0]) / k.resistance + u;
  return dx;
}

/// +amplitude on the first half of each period, -amplitude on the second. Breakpoints stop
/// before t_end, so the sample at t_end keeps the last level.
inline dynamics::PiecewiseConstantInput training_input(double t_end = 20.0, double amplitude = 2.0,
                                                      double period = 5.0) {
  dynamics::PiecewiseConstantInput u;
  const int halves = static_cast<int>(std::ceil(t_end / (0.5 * period)));
  for (int k = 0; k < halves; ++k) {
    u.times.push_back(0.5 * period * k);
    u.values.push_back(VectorXd::Constant(1, k % 2 == 0 ? amplitude : -amplitude));
  }
  return u;
}

/// amplitude on [0, t_off), zero afterwards.
inline dynamics::PiecewiseConstantInput test_input(double amplitude = 2.0, double t_off = 10.0) {
  dynamics::PiecewiseConstantInput u;
  u.times = {0.0, t_off};
  u.values = {VectorXd::Constant(1, amplitude), VectorXd::Zero(1)};
  return u;
}

inline std::vector<std::vector<std::string>> j_strings() {
  return {{"0", "1", "0"}, {"-1", "0", "0"}, {"0", "0", "0"}};
}

/// The drag coefficient is the free parameter "c"; 1/R = 10 is known.
inline std::vector<std::vector<std::string>> r_strings() {
  return {{"0", "0", "0"}, {"0", "c*abs(x2)", "0"}, {"0", "0", "10"}};
}

inline std::vector<std::vector<std::string>> g_strings() { return {{"0"}, {"0"}, {"1"}}; }

inline dynamics::PhsStructure structure(const dynamics::ParamSpec& c = {"c", 0.5, 0.0, 10.0}) {
  return dynamics::PhsStructure(3, 1, dynamics::ExprMatrix::parse(j_strings()),
                                dynamics::ExprMatrix::parse(r_strings()), dynamics::ExprMatrix::parse(g_strings()),
                                {c});
}

/// Probe box used when validating the benchmark structure.
inline MatrixXd probe_box() {
  MatrixXd b(3, 2);
  b << -0.5, 2.0, -0.2, 0.2, -3.0, 5.0;
  return b;
}

enum class Profile { training, test };

struct GenerateConfig {
  Profile profile = Profile::training;
  double noise_sigma = 0.01;
  double dt_sample = 0.05;
  double t_end = 20.0;
  VectorXd x0;  // empty: profile default
  std::uint64_t seed = 0;
  double dt_integrate = 1e-3;
  Constants constants{};
};

inline VectorXd default_x0(Profile p) {
  VectorXd x(3);
  if (p == Profile::training) {
    x << 1.0, 0.0, 0.0;
  } else {
    x << 0.5, 0.1, 0.5;
  }
  return x;
}

inline dynamics::PiecewiseConstantInput profile_input(Profile p, double t_end) {
  return p == Profile::training ? training_input(t_end) : test_input();
}

/// Ground-truth integration on the sampling grid, noise-free.
inline numerics::OdeSolution integrate_truth(const VectorXd& x0, const dynamics::InputFn& u, double t_end,
                                             double dt, const Constants& k = {}) {
  numerics::RkConfig rk;
  rk.dt = dt;
  return numerics::integrate_rk([&](double t, const VectorXd& x) { return rhs(x, u(t)[0], k); }, x0, 0.0, t_end,
                                rk);
}

inline learning::Trajectory generate(const GenerateConfig& cfg) {
  const VectorXd x0 = cfg.x0.size() == 3 ? cfg.x0 : default_x0(cfg.profile);
  const auto u = profile_input(cfg.profile, cfg.t_end);
  const auto sol = integrate_truth(x0, u, cfg.t_end, cfg.dt_integrate, cfg.constants);
  const long samples = std::lround(cfg.t_end / cfg.dt_sample) + 1;
  std::vector<double> times(static_cast<std::size_t>(samples));
  for (long k = 0; k < samples; ++k) times[static_cast<std::size_t>(k)] = std::min(cfg.t_end, k * cfg.dt_sample);
  MatrixXd states = numerics::resample(sol, times);
  const numerics::CounterRng rng(cfg.seed);
  std::uint64_t c = 0;
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    for (Eigen::Index d = 0; d < states.cols(); ++d) states(i, d) += cfg.noise_sigma * rng.normal(c++);
  }
  MatrixXd inputs(samples, 1);
  for (long k = 0; k < samples; ++k) inputs(k, 0) = u(times[static_cast<std::size_t>(k)])[0];
  return learning::Trajectory(std::move(times), std::move(states), std::move(inputs));
}

}  // namespace gpphs::maglev
