#pragma once

// Training pipeline: per-dimension time GPs give smoothed states and
// derivatives, the PHS kernel turns them into a structured GP over drifts, and
// its marginal likelihood fits kernel hyperparameters and physical parameters.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gpphs/dynamics.hpp"
#include "gpphs/errors.hpp"
#include "gpphs/kernels.hpp"
#include "gpphs/numerics.hpp"
#include "gpphs/parallel.hpp"

namespace gpphs::learning {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double deriv_var_floor = 1e-10;

class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::vector<double> times, MatrixXd states, MatrixXd inputs)
      : times_(std::move(times)), states_(std::move(states)), inputs_(std::move(inputs)) {
    const auto n_rows = static_cast<Eigen::Index>(times_.size());
    if (n_rows < 2) throw DegenerateData("trajectory needs at least 2 samples");
    if (states_.rows() != n_rows) throw DimensionMismatch("trajectory: state rows != number of times");
    if (inputs_.rows() != n_rows && !(inputs_.cols() == 0)) {
      throw DimensionMismatch("trajectory: input rows != number of times");
    }
    if (inputs_.cols() == 0) inputs_.resize(n_rows, 0);
    if (!states_.allFinite() || !inputs_.allFinite()) throw DegenerateData("trajectory has non-finite entries");
    for (std::size_t i = 0; i < times_.size(); ++i) {
      if (!std::isfinite(times_[i])) throw DegenerateData("trajectory has a non-finite time");
      if (i > 0 && !(times_[i] > times_[i - 1])) {
        throw DegenerateData("trajectory times must be strictly increasing (row " + std::to_string(i + 1) + ")");
      }
    }
  }

  const std::vector<double>& times() const { return times_; }
  const MatrixXd& states() const { return states_; }
  const MatrixXd& inputs() const { return inputs_; }
  Eigen::Index size() const { return states_.rows(); }
  Eigen::Index state_dim() const { return states_.cols(); }
  Eigen::Index input_dim() const { return inputs_.cols(); }

  /// Rows [begin, end).
  Trajectory slice(Eigen::Index begin, Eigen::Index end) const {
    return Trajectory(std::vector<double>(times_.begin() + begin, times_.begin() + end),
                      states_.middleRows(begin, end - begin), inputs_.middleRows(begin, end - begin));
  }

 private:
  std::vector<double> times_;
  MatrixXd states_;
  MatrixXd inputs_;
};

struct DerivativeDataset {
  MatrixXd states;      // N x n
  MatrixXd derivs;      // N x n
  MatrixXd deriv_vars;  // N x n
  MatrixXd inputs;      // N x m

  Eigen::Index size() const { return states.rows(); }
  Eigen::Index state_dim() const { return states.cols(); }
};

inline DerivativeDataset concatenate(const std::vector<DerivativeDataset>& parts) {
  if (parts.empty()) throw DegenerateData("no datasets to concatenate");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.states.cols() != parts[0].states.cols() || p.inputs.cols() != parts[0].inputs.cols()) {
      throw DimensionMismatch("datasets have different state or input dimensions");
    }
    rows += p.size();
  }
  DerivativeDataset out;
  out.states.resize(rows, parts[0].states.cols());
  out.derivs.resize(rows, parts[0].states.cols());
  out.deriv_vars.resize(rows, parts[0].states.cols());
  out.inputs.resize(rows, parts[0].inputs.cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.states.middleRows(r, p.size()) = p.states;
    out.derivs.middleRows(r, p.size()) = p.derivs;
    out.deriv_vars.middleRows(r, p.size()) = p.deriv_vars;
    out.inputs.middleRows(r, p.size()) = p.inputs;
    r += p.size();
  }
  return out;
}

// -- time GPs ----------------------------------------------------------------

struct TimeGpHyper {
  double sigma_f = 1.0;
  double ell = 1.0;      // weight in exp(-ell (t - t')^2)
  double sigma_n = 0.0;  // observation noise std
};

struct TimeGpConfig {
  int restarts = 2;
  int max_evals = 600;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct TimeGpFit {
  std::vector<TimeGpHyper> hyper;  // one per state dimension
  DerivativeDataset data;
};

namespace detail {

inline MatrixXd time_gram(const std::vector<double>& t, double sigma_f, double ell) {
  const auto n = static_cast<Eigen::Index>(t.size());
  MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double d = t[static_cast<std::size_t>(i)] - t[static_cast<std::size_t>(j)];
      k(i, j) = k(j, i) = sigma_f * sigma_f * std::exp(-ell * d * d);
    }
  }
  return k;
}

/// Smallest noise std allowed, relative to the signal scale. Keeps the Gram
/// matrix factorizable on noise-free data.
inline double noise_floor(double scale) { return 1e-6 * scale; }

inline double effective_noise(double sigma_n, double scale) {
  const double f = noise_floor(scale);
  return std::sqrt(sigma_n * sigma_n + f * f);
}

/// Standard scalar GP negative log marginal likelihood (constant dropped).
inline double time_gp_nlml(const std::vector<double>& t, const VectorXd& y, double sigma_f, double ell,
                           double sigma_n) {
  if (!std::isfinite(sigma_f) || !std::isfinite(ell) || !std::isfinite(sigma_n) || sigma_f <= 0.0 || ell <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  MatrixXd k = time_gram(t, sigma_f, ell);
  k.diagonal().array() += sigma_n * sigma_n;
  Eigen::LLT<MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const VectorXd a = llt.matrixL().solve(y);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double v = 0.5 * a.squaredNorm() + 0.5 * logdet;
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

inline double stddev(const VectorXd& v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Fits one GP per state dimension (time -> state) and returns the posterior
/// means of states and derivatives at the sample times.
inline TimeGpFit fit_time_gps(const Trajectory& traj, const TimeGpConfig& cfg = {}) {
  const auto& t = traj.times();
  const Eigen::Index n_pts = traj.size();
  const Eigen::Index n = traj.state_dim();
  const double span = t.back() - t.front();

  TimeGpFit out;
  out.hyper.resize(static_cast<std::size_t>(n));
  out.data.states.resize(n_pts, n);
  out.data.derivs.resize(n_pts, n);
  out.data.deriv_vars.resize(n_pts, n);
  out.data.inputs = traj.inputs();

  parallel_for(
      static_cast<int>(n),
      [&](int j) {
        const VectorXd raw = traj.states().col(j);
        const double mean = raw.mean();
        const VectorXd y = raw.array() - mean;
        const double scale = detail::stddev(raw);
        if (!(scale > 1e-12 * std::max(1.0, std::fabs(mean)))) {
          // constant signal: derivative is identically zero
          out.hyper[static_cast<std::size_t>(j)] = {1e-8, 1.0 / (span * span), 0.0};
          out.data.states.col(j).setConstant(mean);
          out.data.derivs.col(j).setZero();
          out.data.deriv_vars.col(j).setConstant(deriv_var_floor);
          return;
        }
        const double ell0 = 100.0 / (span * span);
        VectorXd theta0(3);
        theta0 << std::log(scale), std::log(ell0), std::log(0.1 * scale);
        numerics::MinimizeConfig mc;
        mc.restarts = cfg.restarts;
        mc.max_evals = cfg.max_evals;
        mc.seed = cfg.seed + 7919u * static_cast<std::uint64_t>(j);
        mc.simplex_scale = 1.0;
        mc.ftol = 1e-9;
        mc.xtol = 1e-5;
        mc.threads = 1;
        const auto res = numerics::minimize(
            [&](const VectorXd& th) {
              return detail::time_gp_nlml(t, y, std::exp(th[0]), std::exp(th[1]),
                                          detail::effective_noise(std::exp(th[2]), scale));
            },
            theta0, mc);
        if (!std::isfinite(res.f_best)) {
          throw OptimizationFailed("time GP fit failed for state dimension " + std::to_string(j + 1));
        }
        const double sf = std::exp(res.x_best[0]);
        const double ell = std::exp(res.x_best[1]);
        const double sn = detail::effective_noise(std::exp(res.x_best[2]), scale);
        out.hyper[static_cast<std::size_t>(j)] = {sf, ell, sn};

        MatrixXd k = detail::time_gram(t, sf, ell);
        k.diagonal().array() += sn * sn;
        const auto fac = numerics::cholesky_jittered(k);
        const VectorXd alpha = fac.solve(VectorXd(y));
        MatrixXd k1(n_pts, n_pts);  // k1(i, l) = d/dt k(t_i, t_l)
        MatrixXd k0(n_pts, n_pts);
        for (Eigen::Index i = 0; i < n_pts; ++i) {
          for (Eigen::Index l = 0; l < n_pts; ++l) {
            const auto tk = kernels::time_kernel_derivatives(t[static_cast<std::size_t>(i)],
                                                             t[static_cast<std::size_t>(l)], sf, ell);
            k0(i, l) = tk.k;
            k1(i, l) = tk.k1;
          }
        }
        out.data.states.col(j) = (k0 * alpha).array() + mean;
        out.data.derivs.col(j) = k1 * alpha;
        const MatrixXd v = fac.solve_lower(k1.transpose());  // column i = L^{-1} k1(t_i, T)
        const double prior = 2.0 * ell * sf * sf;
        for (Eigen::Index i = 0; i < n_pts; ++i) {
          out.data.deriv_vars(i, j) = std::max(prior - v.col(i).squaredNorm(), deriv_var_floor);
        }
      },
      cfg.threads);
  return out;
}

// -- PHS covariance and objective --------------------------------------------

inline std::vector<MatrixXd> evaluate_jr(const DerivativeDataset& ds, const dynamics::PhsStructure& s,
                                         const VectorXd& phi) {
  std::vector<MatrixXd> jr(static_cast<std::size_t>(ds.size()));
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    try {
      jr[static_cast<std::size_t>(i)] = s.eval_jr(ds.states.row(i).transpose(), phi);
    } catch (const EvalError& e) {
      throw EvalError(e.offset(), std::string(e.what()) + " (training point " + std::to_string(i + 1) + ")");
    }
  }
  return jr;
}

/// Block (i, i') is k_phs(x_i, x_i'); diagonal blocks add diag(deriv_vars_i).
/// Row index i*n + d for point i and state dimension d.
inline MatrixXd assemble_kphs(const DerivativeDataset& ds, const dynamics::PhsStructure& s,
                              const kernels::SeHyperparams& hyper, const VectorXd& phi) {
  if (!s.within_bounds(phi)) throw StructureInvalid("params", "parameters outside declared bounds");
  const Eigen::Index n = s.state_dim();
  if (ds.state_dim() != n || hyper.dim() != n) throw DimensionMismatch("assemble_kphs: state dimension mismatch");
  const Eigen::Index n_pts = ds.size();
  const auto jr = evaluate_jr(ds, s, phi);
  const double sf2 = hyper.sigma_f() * hyper.sigma_f();
  MatrixXd k(n * n_pts, n * n_pts);
  for (Eigen::Index i = 0; i < n_pts; ++i) {
    const VectorXd xi = ds.states.row(i).transpose();
    for (Eigen::Index l = 0; l <= i; ++l) {
      const VectorXd xl = ds.states.row(l).transpose();
      const MatrixXd block = sf2 * jr[static_cast<std::size_t>(i)] * kernels::hessian_pi(xi, xl, hyper.lambda()) *
                             jr[static_cast<std::size_t>(l)].transpose();
      k.block(i * n, l * n, n, n) = block;
      if (l != i) k.block(l * n, i * n, n, n) = block.transpose();
    }
    k.block(i * n, i * n, n, n).diagonal() += ds.deriv_vars.row(i).transpose();
  }
  return k;
}

/// Stacked mu(xdot_i) - G(x_i) u_i, same ordering as assemble_kphs.
inline VectorXd mean_adjusted_outputs(const DerivativeDataset& ds, const dynamics::PhsStructure& s,
                                      const VectorXd& phi) {
  const Eigen::Index n = s.state_dim();
  if (ds.inputs.cols() != s.input_dim()) {
    throw DimensionMismatch("mean_adjusted_outputs: data has " + std::to_string(ds.inputs.cols()) +
                            " inputs, structure expects " + std::to_string(s.input_dim()));
  }
  VectorXd out(n * ds.size());
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    VectorXd d = ds.derivs.row(i).transpose();
    if (s.input_dim() > 0) d -= s.eval_g(ds.states.row(i).transpose(), phi) * ds.inputs.row(i).transpose();
    out.segment(i * n, n) = d;
  }
  return out;
}

/// theta = [log sigma_f, log lambda_1..n, t(phi_1)..t(phi_p)] where each phi_k
/// maps through a scaled logistic on finite bounds, a shifted exponential on
/// one-sided bounds, and the identity when unbounded.
class ThetaCodec {
 public:
  ThetaCodec() = default;
  explicit ThetaCodec(const dynamics::PhsStructure& s) : n_(s.state_dim()), params_(s.params()) {}

  int size() const { return 1 + n_ + static_cast<int>(params_.size()); }
  int state_dim() const { return n_; }

  struct Decoded {
    double sigma_f;
    VectorXd lambda;
    VectorXd phi;
  };

  Decoded decode(const VectorXd& theta) const {
    if (theta.size() != size()) throw DimensionMismatch("theta has wrong size");
    Decoded d{std::exp(theta[0]), theta.segment(1, n_).array().exp().matrix(), VectorXd(params_.size())};
    for (std::size_t k = 0; k < params_.size(); ++k) {
      d.phi[static_cast<Eigen::Index>(k)] = to_phi(params_[k], theta[1 + n_ + static_cast<Eigen::Index>(k)]);
    }
    return d;
  }

  VectorXd encode(double sigma_f, const VectorXd& lambda, const VectorXd& phi) const {
    VectorXd theta(size());
    theta[0] = std::log(sigma_f);
    theta.segment(1, n_) = lambda.array().log().matrix();
    for (std::size_t k = 0; k < params_.size(); ++k) {
      theta[1 + n_ + static_cast<Eigen::Index>(k)] = to_theta(params_[k], phi[static_cast<Eigen::Index>(k)]);
    }
    return theta;
  }

  static double to_phi(const dynamics::ParamSpec& p, double z) {
    const bool lo = std::isfinite(p.lower), hi = std::isfinite(p.upper);
    if (lo && hi) return p.lower + (p.upper - p.lower) / (1.0 + std::exp(-z));
    if (lo) return p.lower + std::exp(z);
    if (hi) return p.upper - std::exp(z);
    return z;
  }

  static double to_theta(const dynamics::ParamSpec& p, double phi) {
    const bool lo = std::isfinite(p.lower), hi = std::isfinite(p.upper);
    if (lo && hi) {
      if (p.upper == p.lower) return 0.0;
      const double u = std::clamp((phi - p.lower) / (p.upper - p.lower), 1e-9, 1.0 - 1e-9);
      return std::log(u / (1.0 - u));
    }
    if (lo) return std::log(std::max(phi - p.lower, 1e-300));
    if (hi) return std::log(std::max(p.upper - phi, 1e-300));
    return phi;
  }

 private:
  int n_ = 0;
  std::vector<dynamics::ParamSpec> params_;
};

/// Xdot0^T K^{-1} Xdot0 + log|K| for explicit hyperparameters; throws on failure.
inline double nlml_value(const DerivativeDataset& ds, const dynamics::PhsStructure& s,
                         const kernels::SeHyperparams& hyper, const VectorXd& phi) {
  const MatrixXd k = assemble_kphs(ds, s, hyper, phi);
  const VectorXd y = mean_adjusted_outputs(ds, s, phi);
  const auto fac = numerics::cholesky_jittered(k);
  const VectorXd a = fac.solve_lower(MatrixXd(y)).col(0);
  return a.squaredNorm() + fac.log_det;
}

/// Objective over packed theta. Any failure yields +inf.
inline double nlml(const DerivativeDataset& ds, const dynamics::PhsStructure& s, const VectorXd& theta) {
  if (!theta.allFinite()) return std::numeric_limits<double>::infinity();
  try {
    const auto d = ThetaCodec(s).decode(theta);
    if (!std::isfinite(d.sigma_f) || d.sigma_f <= 0.0 || !d.lambda.allFinite() || (d.lambda.array() <= 0.0).any() ||
        !d.phi.allFinite()) {
      return std::numeric_limits<double>::infinity();
    }
    const double v = nlml_value(ds, s, kernels::SeHyperparams(d.sigma_f, d.lambda), d.phi);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  } catch (const std::exception&) {
    return std::numeric_limits<double>::infinity();
  }
}

// -- input segmentation ------------------------------------------------------

/// Row ranges [begin, end) over which the sampled input is constant. A sample whose input differs
/// from its predecessor opens a new piece, since the derivative jumps there. Pieces shorter than
/// min_length are merged into the preceding one, so inputs that vary at every sample give one piece.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> input_segments(const Trajectory& traj, int min_length) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  const Eigen::Index n = traj.size();
  Eigen::Index begin = 0;
  for (Eigen::Index k = 1; k <= n; ++k) {
    const bool change = k == n || traj.inputs().row(k) != traj.inputs().row(k - 1);
    if (!change) continue;
    if (k - begin >= min_length || out.empty()) {
      out.emplace_back(begin, k);
    } else {
      out.back().second = k;
    }
    begin = k;
  }
  // A short leading piece is folded into its successor.
  if (out.size() > 1 && out.front().second - out.front().first < min_length) {
    out[1].first = out.front().first;
    out.erase(out.begin());
  }
  return out;
}

// -- training ----------------------------------------------------------------

struct TrainConfig {
  int restarts = 4;
  int max_evals = 1500;
  std::uint64_t seed = 0;
  int threads = thread_count();
  TimeGpConfig time_gp{};
  /// Fit the time-GPs separately on each piece where the input is constant.
  bool split_at_input_changes = true;
  int min_segment = 8;
  std::optional<double> sigma_f_init;
  std::optional<VectorXd> lambda_init;
};

struct GpPhsModel {
  dynamics::PhsStructure structure;
  kernels::SeHyperparams hyper{1.0, VectorXd::Ones(1)};
  VectorXd phi;
  VectorXd noise_sigmas;                 // time-GP noise std per state dimension
  std::vector<TimeGpHyper> time_gp;      // per fitted piece and dimension, piece-major
  DerivativeDataset training;
  numerics::SpdFactorization kphs_factorization;
  VectorXd alpha;                        // K_phs^{-1} Xdot0
  double nlml_initial = 0.0;
  double nlml_final = 0.0;
  int evals = 0;
  bool budget_exhausted = false;
  std::vector<MatrixXd> jr_training;     // J_R at each training state

  int state_dim() const { return structure.state_dim(); }
  int input_dim() const { return structure.input_dim(); }
};

/// Builds the factorization and weights for fixed hyperparameters and parameters.
inline GpPhsModel finalize_model(dynamics::PhsStructure s, const kernels::SeHyperparams& hyper, VectorXd phi,
                                 DerivativeDataset ds) {
  GpPhsModel m;
  m.structure = std::move(s);
  m.hyper = hyper;
  m.phi = std::move(phi);
  m.training = std::move(ds);
  const MatrixXd k = assemble_kphs(m.training, m.structure, m.hyper, m.phi);
  m.kphs_factorization = numerics::cholesky_jittered(k);
  const VectorXd y = mean_adjusted_outputs(m.training, m.structure, m.phi);
  m.alpha = m.kphs_factorization.solve(y);
  const VectorXd a = m.kphs_factorization.solve_lower(MatrixXd(y)).col(0);
  m.nlml_final = a.squaredNorm() + m.kphs_factorization.log_det;
  m.jr_training = evaluate_jr(m.training, m.structure, m.phi);
  return m;
}

inline GpPhsModel train(const std::vector<Trajectory>& trajs, const dynamics::PhsStructure& s,
                        const TrainConfig& cfg = {}) {
  if (trajs.empty()) throw DegenerateData("no training trajectories");
  const int n = s.state_dim();
  std::vector<DerivativeDataset> parts;
  std::vector<TimeGpHyper> tgp;
  std::uint64_t piece = 0;
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    if (trajs[r].state_dim() != n || trajs[r].input_dim() != s.input_dim()) {
      throw DimensionMismatch("trajectory " + std::to_string(r + 1) + " does not match model dimensions");
    }
    std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges{{0, trajs[r].size()}};
    if (cfg.split_at_input_changes && s.input_dim() > 0) ranges = input_segments(trajs[r], std::max(cfg.min_segment, 2));
    for (const auto& [begin, end] : ranges) {
      auto tc = cfg.time_gp;
      tc.seed = cfg.seed + 104729u * piece++;
      auto fit = fit_time_gps(ranges.size() == 1 ? trajs[r] : trajs[r].slice(begin, end), tc);
      parts.push_back(std::move(fit.data));
      tgp.insert(tgp.end(), fit.hyper.begin(), fit.hyper.end());
    }
  }
  DerivativeDataset ds = concatenate(parts);

  const VectorXd phi0 = s.initial_params();
  if (!s.within_bounds(phi0)) throw StructureInvalid("params", "initial parameters outside declared bounds");
  const VectorXd y0 = mean_adjusted_outputs(ds, s, phi0);
  double sf0 = cfg.sigma_f_init.value_or(detail::stddev(y0));
  if (!(sf0 > 0.0) || !std::isfinite(sf0)) throw DegenerateData("derivative data has zero spread");
  VectorXd lambda0(n);
  if (cfg.lambda_init) {
    lambda0 = *cfg.lambda_init;
  } else {
    for (int d = 0; d < n; ++d) {
      const double v = detail::stddev(ds.states.col(d));
      lambda0[d] = v > 0.0 ? 1.0 / (v * v) : 1.0;
    }
  }

  const ThetaCodec codec(s);
  const VectorXd theta0 = codec.encode(sf0, lambda0, phi0);
  const auto objective = [&](const VectorXd& th) { return nlml(ds, s, th); };
  const double f0 = objective(theta0);

  numerics::MinimizeConfig mc;
  mc.restarts = cfg.restarts;
  mc.max_evals = cfg.max_evals;
  mc.seed = cfg.seed;
  mc.simplex_scale = 0.5;
  mc.ftol = 1e-9;
  mc.xtol = 1e-5;
  mc.threads = cfg.threads;
  const auto res = numerics::minimize(objective, theta0, mc);
  if (!std::isfinite(res.f_best)) throw OptimizationFailed("every optimizer start returned a non-finite NLML");

  const auto best = codec.decode(res.x_best);
  GpPhsModel m = finalize_model(s, kernels::SeHyperparams(best.sigma_f, best.lambda), best.phi, std::move(ds));
  m.time_gp = std::move(tgp);
  m.noise_sigmas = VectorXd::Zero(n);
  for (std::size_t k = 0; k < m.time_gp.size(); ++k) {
    m.noise_sigmas[static_cast<Eigen::Index>(k % static_cast<std::size_t>(n))] += m.time_gp[k].sigma_n;
  }
  m.noise_sigmas /= static_cast<double>(piece);
  m.nlml_initial = f0;
  m.evals = res.evals;
  m.budget_exhausted = res.budget_exhausted;
  return m;
}

}  // namespace gpphs::learning
