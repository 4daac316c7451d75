#pragma once

// Posterior over the Hamiltonian on a grid, the Gaussian-RBF interpolant of a
// grid draw, drift prediction, and a plain x -> xdot GP used as a baseline.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "gpphs/dynamics.hpp"
#include "gpphs/errors.hpp"
#include "gpphs/kernels.hpp"
#include "gpphs/learning.hpp"
#include "gpphs/numerics.hpp"
#include "gpphs/parallel.hpp"

namespace gpphs::posterior {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using learning::GpPhsModel;

struct HamiltonianGridSample {
  MatrixXd grid;  // M x n
  VectorXd values;
  std::uint64_t seed = 0;
  VectorXd posterior_mean;
  VectorXd posterior_std;
};

/// Uniform lattice over a box; rows of `box` are [lo, hi]. The first axis varies slowest.
inline MatrixXd lattice(const MatrixXd& box, const std::vector<int>& counts) {
  const auto n = box.rows();
  if (static_cast<Eigen::Index>(counts.size()) != n) throw DimensionMismatch("lattice: one count per axis");
  Eigen::Index total = 1;
  for (int c : counts) {
    if (c < 1) throw DegenerateGrid("lattice: counts must be positive");
    total *= c;
  }
  MatrixXd g(total, n);
  for (Eigen::Index r = 0; r < total; ++r) {
    Eigen::Index rem = r;
    for (Eigen::Index d = n - 1; d >= 0; --d) {
      const int c = counts[static_cast<std::size_t>(d)];
      const Eigen::Index k = rem % c;
      rem /= c;
      g(r, d) = c == 1 ? 0.5 * (box(d, 0) + box(d, 1))
                       : box(d, 0) + (box(d, 1) - box(d, 0)) * static_cast<double>(k) / static_cast<double>(c - 1);
    }
  }
  return g;
}

/// Gaussian posterior of H at a fixed grid, factorized once for repeated draws.
class HamiltonianPosterior {
 public:
  HamiltonianPosterior(const GpPhsModel& model, const MatrixXd& grid) : grid_(grid) {
    const int n = model.state_dim();
    if (grid.rows() < 1) throw DegenerateGrid("posterior grid is empty");
    if (grid.cols() != n) throw DimensionMismatch("posterior grid has wrong dimension");
    if (!grid.allFinite()) throw DegenerateGrid("posterior grid has non-finite rows");
    const Eigen::Index n_pts = model.training.size();
    const Eigen::Index m = grid.rows();
    const auto& h = model.hyper;

    MatrixXd c(n * n_pts, m);  // column j: stacked k_dxh(x_i, g_j)
    parallel_for(static_cast<int>(m), [&](int j) {
      const VectorXd g = grid.row(j).transpose();
      for (Eigen::Index i = 0; i < n_pts; ++i) {
        c.block(i * n, j, n, 1) = kernels::k_dxh_block(model.training.states.row(i).transpose(), g,
                                                       model.jr_training[static_cast<std::size_t>(i)], h);
      }
    });
    mean_ = c.transpose() * model.alpha;
    const MatrixXd v = model.kphs_factorization.solve_lower(c);
    MatrixXd cov(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      const VectorXd ga = grid.row(a).transpose();
      for (Eigen::Index b = 0; b <= a; ++b) cov(a, b) = kernels::k_hh(ga, grid.row(b).transpose(), h);
    }
    cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
    cov.noalias() -= v.transpose() * v;
    cov = 0.5 * (cov + cov.transpose());
    std_ = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    sampler_ = std::make_shared<numerics::MvnSampler>(cov);
  }

  const MatrixXd& grid() const { return grid_; }
  const VectorXd& mean() const { return mean_; }
  const VectorXd& std() const { return std_; }

  HamiltonianGridSample draw(std::uint64_t seed) const {
    HamiltonianGridSample s;
    s.grid = grid_;
    s.seed = seed;
    s.values = sampler_->draw(mean_, seed);
    s.posterior_mean = mean_;
    s.posterior_std = std_;
    return s;
  }

 private:
  MatrixXd grid_;
  VectorXd mean_;
  VectorXd std_;
  std::shared_ptr<const numerics::MvnSampler> sampler_;
};

inline HamiltonianGridSample sample_hamiltonian(const GpPhsModel& model, const MatrixXd& grid, std::uint64_t seed) {
  return HamiltonianPosterior(model, grid).draw(seed);
}

// -- interpolation -----------------------------------------------------------

struct RbfConfig {
  double shape_scale = 2.0;
};

struct InterpolatedHamiltonian {
  dynamics::HamiltonianFn fn;
  MatrixXd centers;
  VectorXd weights;
  double shape = 0.0;  // Gaussian width s
  double shape_scale = 2.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline double median_nn_spacing(const MatrixXd& g) {
  const Eigen::Index m = g.rows();
  std::vector<double> nn(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
  parallel_for(static_cast<int>(m), [&](int i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      best = std::min(best, (g.row(i) - g.row(j)).squaredNorm());
    }
    nn[static_cast<std::size_t>(i)] = std::sqrt(best);
  });
  std::sort(nn.begin(), nn.end());
  const std::size_t k = nn.size() / 2;
  return nn.size() % 2 == 1 ? nn[k] : 0.5 * (nn[k - 1] + nn[k]);
}

/// Shared RBF evaluation state; terms with exponent below -cutoff are skipped.
struct RbfCore {
  MatrixXd centers;
  VectorXd weights;
  double inv_two_s2 = 0.0;
  static constexpr double cutoff = 45.0;

  double value(const VectorXd& x) const {
    double v = 0.0;
    for (Eigen::Index j = 0; j < centers.rows(); ++j) {
      const double e = (centers.row(j).transpose() - x).squaredNorm() * inv_two_s2;
      if (e < cutoff) v += weights[j] * std::exp(-e);
    }
    return v;
  }

  VectorXd gradient(const VectorXd& x) const {
    VectorXd g = VectorXd::Zero(x.size());
    for (Eigen::Index j = 0; j < centers.rows(); ++j) {
      const VectorXd d = x - centers.row(j).transpose();
      const double e = d.squaredNorm() * inv_two_s2;
      if (e < cutoff) g -= (2.0 * inv_two_s2 * weights[j] * std::exp(-e)) * d;
    }
    return g;
  }
};

}  // namespace detail

/// Gaussian RBF interpolant through the grid draw. Decays to 0 away from the grid.
inline InterpolatedHamiltonian interpolate(const HamiltonianGridSample& sample, const RbfConfig& cfg = {}) {
  const MatrixXd& g = sample.grid;
  const Eigen::Index m = g.rows();
  const Eigen::Index n = g.cols();
  if (sample.values.size() != m) throw DimensionMismatch("interpolate: values/grid size mismatch");
  if (m < n + 1) throw DegenerateGrid("interpolate: need at least n+1 grid nodes");
  if (!sample.values.allFinite() || !g.allFinite()) throw DegenerateGrid("interpolate: non-finite grid sample");
  {
    const MatrixXd centered = g.rowwise() - g.colwise().mean();
    Eigen::JacobiSVD<MatrixXd> svd(centered);
    const auto sv = svd.singularValues();
    if (sv.size() < n || sv[n - 1] <= 1e-12 * std::max(1.0, sv[0])) {
      throw DegenerateGrid("interpolate: grid nodes are rank-degenerate");
    }
  }
  if (!(cfg.shape_scale > 0.0)) throw std::invalid_argument("interpolate: shape_scale must be positive");
  const double spacing = detail::median_nn_spacing(g);
  if (!(spacing > 0.0)) throw DegenerateGrid("interpolate: duplicate grid nodes");
  const double s = cfg.shape_scale * spacing;

  auto core = std::make_shared<detail::RbfCore>();
  core->centers = g;
  core->inv_two_s2 = 1.0 / (2.0 * s * s);
  MatrixXd phi(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      phi(i, j) = phi(j, i) = std::exp(-(g.row(i) - g.row(j)).squaredNorm() * core->inv_two_s2);
    }
  }
  phi.diagonal().array() += 1e-10;
  Eigen::LLT<MatrixXd> llt(phi);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("interpolate: RBF system not positive definite");
  core->weights = llt.solve(sample.values);

  InterpolatedHamiltonian out;
  out.centers = g;
  out.weights = core->weights;
  out.shape = s;
  out.shape_scale = cfg.shape_scale;
  out.seed = sample.seed;
  out.fn.value = [core](const VectorXd& x) { return core->value(x); };
  out.fn.gradient = [core](const VectorXd& x) { return core->gradient(x); };
  return out;
}

// -- drift prediction --------------------------------------------------------

struct DriftPrediction {
  VectorXd mean;
  MatrixXd cov;
};

inline DriftPrediction predict_drift(const GpPhsModel& model, const VectorXd& x, const VectorXd& u) {
  const int n = model.state_dim();
  if (x.size() != n) throw DimensionMismatch("predict_drift: state has wrong dimension");
  if (u.size() != model.input_dim()) throw DimensionMismatch("predict_drift: input has wrong dimension");
  const Eigen::Index n_pts = model.training.size();
  const MatrixXd jr_x = model.structure.eval_jr(x, model.phi);
  MatrixXd cross(n * n_pts, n);
  for (Eigen::Index i = 0; i < n_pts; ++i) {
    cross.block(i * n, 0, n, n) = kernels::k_phs_block(model.training.states.row(i).transpose(), x,
                                                       model.jr_training[static_cast<std::size_t>(i)], jr_x,
                                                       model.hyper);
  }
  DriftPrediction out;
  out.mean = cross.transpose() * model.alpha;
  if (n > 0 && model.input_dim() > 0) out.mean += model.structure.eval_g(x, model.phi) * u;
  const MatrixXd v = model.kphs_factorization.solve_lower(cross);
  out.cov = kernels::k_phs_block(x, x, jr_x, jr_x, model.hyper) - v.transpose() * v;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

/// Posterior mean of grad H at x. The mean drift is J_R(x) times this.
class MeanGradient {
 public:
  explicit MeanGradient(const GpPhsModel& model) : model_(&model) {
    const int n = model.state_dim();
    beta_.resize(model.training.size(), n);
    for (Eigen::Index i = 0; i < model.training.size(); ++i) {
      beta_.row(i) = (model.jr_training[static_cast<std::size_t>(i)].transpose() *
                      model.alpha.segment(i * n, n)).transpose();
    }
  }

  VectorXd operator()(const VectorXd& x) const {
    const auto& h = model_->hyper;
    VectorXd g = VectorXd::Zero(x.size());
    for (Eigen::Index i = 0; i < beta_.rows(); ++i) {
      g += kernels::hessian_pi(model_->training.states.row(i).transpose(), x, h.lambda()) * beta_.row(i).transpose();
    }
    return (h.sigma_f() * h.sigma_f()) * g;
  }

 private:
  const GpPhsModel* model_;
  MatrixXd beta_;
};

/// Posterior mean drift as an ODE right-hand side.
inline numerics::VectorField mean_drift_field(const GpPhsModel& model, const dynamics::InputFn& u) {
  auto grad = std::make_shared<MeanGradient>(model);
  return [&model, grad, u](double t, const VectorXd& x) -> VectorXd {
    VectorXd dx = model.structure.eval_jr(x, model.phi) * (*grad)(x);
    if (model.input_dim() > 0) dx += model.structure.eval_g(x, model.phi) * u(t);
    return dx;
  };
}

// -- sample, interpolate, simulate -------------------------------------------

struct PosteriorSimulation {
  HamiltonianGridSample sample;
  InterpolatedHamiltonian hamiltonian;
  dynamics::SimulationRecord record;
  std::vector<char> grid_escape;  // per stored step: state outside the grid box
  bool escaped = false;
};

inline std::vector<char> grid_escape_flags(const MatrixXd& grid, const MatrixXd& states) {
  const VectorXd lo = grid.colwise().minCoeff().transpose();
  const VectorXd hi = grid.colwise().maxCoeff().transpose();
  std::vector<char> out(static_cast<std::size_t>(states.rows()), 0);
  for (Eigen::Index k = 0; k < states.rows(); ++k) {
    for (Eigen::Index d = 0; d < states.cols(); ++d) {
      if (states(k, d) < lo[d] || states(k, d) > hi[d]) out[static_cast<std::size_t>(k)] = 1;
    }
  }
  return out;
}

inline PosteriorSimulation simulate_sample(const GpPhsModel& model, HamiltonianGridSample sample,
                                           const VectorXd& x0, const dynamics::InputFn& u, double t0, double t1,
                                           const numerics::RkConfig& rk = {}, const RbfConfig& rbf = {}) {
  PosteriorSimulation out;
  out.hamiltonian = interpolate(sample, rbf);
  out.sample = std::move(sample);
  out.record = dynamics::simulate(model.structure, model.phi, out.hamiltonian.fn, u, x0, t0, t1, rk);
  out.grid_escape = grid_escape_flags(out.sample.grid, out.record.solution.states);
  out.escaped = std::any_of(out.grid_escape.begin(), out.grid_escape.end(), [](char c) { return c != 0; });
  return out;
}

inline PosteriorSimulation sample_and_simulate(const GpPhsModel& model, const MatrixXd& grid, std::uint64_t seed,
                                               const VectorXd& x0, const dynamics::InputFn& u, double t0, double t1,
                                               const numerics::RkConfig& rk = {}, const RbfConfig& rbf = {}) {
  return simulate_sample(model, sample_hamiltonian(model, grid, seed), x0, u, t0, t1, rk, rbf);
}

// -- baseline ----------------------------------------------------------------

/// Independent SE-ARD GPs from (x, optionally u) to each component of xdot.
class NaiveGp {
 public:
  struct Config {
    bool include_inputs = true;
    int restarts = 2;
    int max_evals = 800;
    std::uint64_t seed = 0;
  };

  NaiveGp(const learning::DerivativeDataset& ds, const Config& cfg) : cfg_(cfg) {
    inputs_ = features(ds.states, ds.inputs);
    const Eigen::Index n = ds.state_dim();
    const Eigen::Index d = inputs_.cols();
    outputs_.resize(static_cast<std::size_t>(n));
    parallel_for(static_cast<int>(n), [&](int j) {
      const VectorXd y = ds.derivs.col(j);
      const VectorXd noise = ds.deriv_vars.col(j);
      const double sy = learning::detail::stddev(y);
      VectorXd theta0(d + 2);
      theta0[0] = std::log(sy > 0.0 ? sy : 1.0);
      for (Eigen::Index k = 0; k < d; ++k) {
        const double v = learning::detail::stddev(inputs_.col(k));
        theta0[1 + k] = std::log(v > 0.0 ? 1.0 / (v * v) : 1.0);
      }
      theta0[d + 1] = std::log(1e-3 * (sy > 0.0 ? sy : 1.0));
      numerics::MinimizeConfig mc;
      mc.restarts = cfg_.restarts;
      mc.max_evals = cfg_.max_evals;
      mc.seed = cfg_.seed + static_cast<std::uint64_t>(j);
      mc.ftol = 1e-9;
      mc.xtol = 1e-5;
      const auto res = numerics::minimize([&](const VectorXd& th) { return nlml(th, y, noise); }, theta0, mc);
      if (!std::isfinite(res.f_best)) throw OptimizationFailed("baseline GP fit failed");
      Output o;
      o.theta = res.x_best;
      const MatrixXd k = gram(o.theta, noise);
      o.alpha = numerics::cholesky_jittered(k).solve(y);
      outputs_[static_cast<std::size_t>(j)] = std::move(o);
    });
  }

  VectorXd mean(const VectorXd& x, const VectorXd& u) const {
    const VectorXd z = features(x.transpose(), u.transpose()).row(0).transpose();
    VectorXd out(static_cast<Eigen::Index>(outputs_.size()));
    for (std::size_t j = 0; j < outputs_.size(); ++j) {
      const auto& o = outputs_[j];
      const double sf2 = std::exp(2.0 * o.theta[0]);
      const VectorXd lam = o.theta.segment(1, z.size()).array().exp();
      double v = 0.0;
      for (Eigen::Index i = 0; i < inputs_.rows(); ++i) {
        v += o.alpha[i] * sf2 * kernels::se_correlation(inputs_.row(i).transpose(), z, lam);
      }
      out[static_cast<Eigen::Index>(j)] = v;
    }
    return out;
  }

  numerics::VectorField field(const dynamics::InputFn& u) const {
    return [this, u](double t, const VectorXd& x) { return mean(x, u(t)); };
  }

 private:
  struct Output {
    VectorXd theta;  // [log sigma_f, log lambda (d), log sigma_n]
    VectorXd alpha;
  };

  MatrixXd features(const MatrixXd& x, const MatrixXd& u) const {
    if (!cfg_.include_inputs || u.cols() == 0) return x;
    MatrixXd z(x.rows(), x.cols() + u.cols());
    z << x, u;
    return z;
  }

  MatrixXd gram(const VectorXd& theta, const VectorXd& noise) const {
    const Eigen::Index d = inputs_.cols();
    const double sf2 = std::exp(2.0 * theta[0]);
    const VectorXd lam = theta.segment(1, d).array().exp();
    const double sn2 = std::exp(2.0 * theta[d + 1]);
    const Eigen::Index p = inputs_.rows();
    MatrixXd k(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
      for (Eigen::Index l = 0; l <= i; ++l) {
        k(i, l) = k(l, i) = sf2 * kernels::se_correlation(inputs_.row(i).transpose(), inputs_.row(l).transpose(), lam);
      }
    }
    k.diagonal() += noise;
    k.diagonal().array() += sn2;
    return k;
  }

  double nlml(const VectorXd& theta, const VectorXd& y, const VectorXd& noise) const {
    if (!theta.allFinite() || theta.maxCoeff() > 50.0) return std::numeric_limits<double>::infinity();
    Eigen::LLT<MatrixXd> llt(gram(theta, noise));
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const VectorXd a = llt.matrixL().solve(y);
    const double v = a.squaredNorm() + 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  }

  Config cfg_;
  MatrixXd inputs_;
  std::vector<Output> outputs_;
};

}  // namespace gpphs::posterior
