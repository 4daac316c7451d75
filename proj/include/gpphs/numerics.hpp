#pragma once

// Dense linear algebra and ODE primitives shared by the rest of the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "gpphs/errors.hpp"
#include "gpphs/parallel.hpp"

namespace gpphs::numerics {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// -- counter-based RNG -------------------------------------------------------

/// Stateless generator: the k-th draw of a stream is a hash of (seed, k), so a
/// (seed, shape) pair reproduces the same numbers regardless of call order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t bits(std::uint64_t counter) const {
    return mix(key_ ^ mix(counter + 0x9e3779b97f4a7c15ULL));
  }

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t counter) const {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on counters (2k, 2k+1).
  double normal(std::uint64_t k) const {
    const double u1 = uniform(2 * k);
    const double u2 = uniform(2 * k + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  VectorXd normal_vector(Eigen::Index p, std::uint64_t first = 0) const {
    VectorXd z(p);
    for (Eigen::Index i = 0; i < p; ++i) z[i] = normal(first + static_cast<std::uint64_t>(i));
    return z;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
};

// -- Cholesky ----------------------------------------------------------------

/// Lower Cholesky factor of A + jitter_used * I.
struct SpdFactorization {
  MatrixXd lower;
  double jitter_used = 0.0;
  double log_det = 0.0;

  Eigen::Index size() const { return lower.rows(); }

  /// L^{-1} B.
  MatrixXd solve_lower(const MatrixXd& b) const {
    check(b.rows());
    return lower.triangularView<Eigen::Lower>().solve(b);
  }

  /// (A + jitter I)^{-1} B via two triangular solves.
  MatrixXd solve(const MatrixXd& b) const {
    check(b.rows());
    MatrixXd y = lower.triangularView<Eigen::Lower>().solve(b);
    lower.triangularView<Eigen::Lower>().transpose().solveInPlace(y);
    return y;
  }

  VectorXd solve(const VectorXd& b) const {
    check(b.rows());
    VectorXd y = lower.triangularView<Eigen::Lower>().solve(b);
    lower.triangularView<Eigen::Lower>().transpose().solveInPlace(y);
    return y;
  }

  /// L L^T, i.e. the factored matrix including jitter.
  MatrixXd reconstruct() const { return lower * lower.transpose(); }

 private:
  void check(Eigen::Index rows) const {
    if (rows != lower.rows()) {
      throw DimensionMismatch("solve: right-hand side has " + std::to_string(rows) +
                              " rows, factor is " + std::to_string(lower.rows()) + "x" +
                              std::to_string(lower.cols()));
    }
  }
};

/// Factorizes sym(A) with no jitter, then 1e-10*mean(diag A) growing by 10x up to
/// 1e-2*mean(diag A). Returns the first success.
inline SpdFactorization cholesky_jittered(const MatrixXd& a) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch("cholesky: matrix is " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()));
  }
  const Eigen::Index p = a.rows();
  MatrixXd sym = 0.5 * (a + a.transpose());
  if (!sym.allFinite()) throw NotPositiveDefinite("cholesky: matrix has non-finite entries");
  const double mean_diag = p > 0 ? sym.diagonal().mean() : 0.0;

  auto attempt = [&](double jitter, SpdFactorization& out) {
    MatrixXd work = sym;
    if (jitter > 0.0) work.diagonal().array() += jitter;
    Eigen::LLT<Eigen::Ref<MatrixXd>> llt(work);
    if (llt.info() != Eigen::Success) return false;
    work.triangularView<Eigen::StrictlyUpper>().setZero();
    const auto d = work.diagonal().array();
    if ((d <= 0.0).any() || !d.isFinite().all()) return false;
    out.lower = std::move(work);
    out.jitter_used = jitter;
    out.log_det = 2.0 * out.lower.diagonal().array().log().sum();
    return true;
  };

  SpdFactorization f;
  if (attempt(0.0, f)) return f;
  if (mean_diag > 0.0) {
    for (double rel = 1e-10; rel <= 1e-2 * (1.0 + 1e-9); rel *= 10.0) {
      if (attempt(rel * mean_diag, f)) return f;
    }
  }
  throw NotPositiveDefinite("cholesky: matrix of size " + std::to_string(p) +
                            " not positive definite after jitter up to 1e-2*mean(diag)");
}

inline MatrixXd solve_spd(const SpdFactorization& f, const MatrixXd& b) { return f.solve(b); }

// -- multivariate normal -----------------------------------------------------

/// Square-root factor S of a covariance C (C ~= S S^T) reused across draws.
///
/// Sampling covariances from smooth kernels are numerically singular, and
/// diagonal jitter would inject white noise into every draw. The factor is
/// therefore taken from a diagonally pivoted LDL^T: pivots below the roundoff
/// floor are zeroed, so draws stay inside the well-resolved eigenspace.
class MvnSampler {
 public:
  explicit MvnSampler(const MatrixXd& cov) {
    if (cov.rows() != cov.cols()) throw DimensionMismatch("sample_mvn: covariance not square");
    const Eigen::Index p = cov.rows();
    MatrixXd sym = 0.5 * (cov + cov.transpose());
    if (!sym.allFinite()) throw NotPositiveDefinite("sample_mvn: covariance has non-finite entries");
    const double scale = p > 0 ? sym.diagonal().cwiseAbs().maxCoeff() : 0.0;
    factor_ = MatrixXd::Zero(p, p);
    if (p == 0 || scale == 0.0) return;
    Eigen::LDLT<MatrixXd> ldlt(sym);
    if (ldlt.info() != Eigen::Success) throw NotPositiveDefinite("sample_mvn: LDLT failed");
    VectorXd d = ldlt.vectorD();
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() * scale *
                         static_cast<double>(p);
    const double worst = d.minCoeff();
    if (worst < -std::max(1e-8 * scale, floor)) {
      throw NotPositiveDefinite("sample_mvn: covariance has a negative pivot " +
                                std::to_string(worst));
    }
    for (Eigen::Index i = 0; i < p; ++i) d[i] = d[i] > floor ? std::sqrt(d[i]) : 0.0;
    // C = P^T L D L^T P  =>  S = P^T L sqrt(D)
    MatrixXd ld = ldlt.matrixL();
    ld = ld * d.asDiagonal();
    factor_ = ldlt.transpositionsP().transpose() * ld;
  }

  Eigen::Index dim() const { return factor_.rows(); }
  const MatrixXd& factor() const { return factor_; }

  VectorXd draw(const VectorXd& mean, std::uint64_t seed) const {
    if (mean.size() != factor_.rows()) throw DimensionMismatch("sample_mvn: mean/cov size mismatch");
    const CounterRng rng(seed);
    return mean + factor_ * rng.normal_vector(mean.size());
  }

 private:
  MatrixXd factor_;
};

inline VectorXd sample_mvn(const VectorXd& mean, const MatrixXd& cov, std::uint64_t seed) {
  return MvnSampler(cov).draw(mean, seed);
}

// -- Nelder-Mead -------------------------------------------------------------

struct MinimizeConfig {
  int restarts = 0;           // extra perturbed starts beyond x0 itself
  int max_evals = 2000;       // per start
  double simplex_scale = 0.5; // initial simplex edge along each axis
  std::uint64_t seed = 0;
  double ftol = 1e-10;        // simplex value spread, relative to max(1, |f_best|)
  double xtol = 1e-10;        // simplex extent (infinity norm)
  int threads = 1;
};

struct MinimizeResult {
  VectorXd x_best;
  double f_best = std::numeric_limits<double>::infinity();
  int evals = 0;
  bool budget_exhausted = false;
  int best_start = 0;
  std::vector<double> start_values;  // best f of each start, in start order
};

using Objective = std::function<double(const VectorXd&)>;

namespace detail {

struct RunResult {
  VectorXd x;
  double f;
  int evals;
  bool exhausted;
};

inline RunResult nelder_mead(const Objective& f, const VectorXd& x0, const MinimizeConfig& cfg) {
  const Eigen::Index d = x0.size();
  int evals = 0;
  auto eval = [&](const VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  if (d == 0) return {x0, eval(x0), evals, false};

  // Adaptive coefficients (Gao & Han) behave better than the classic ones as d grows.
  const double dd = static_cast<double>(d);
  const double alpha = 1.0;
  const double beta = 1.0 + 2.0 / dd;
  const double gamma = 0.75 - 0.5 / dd;
  const double delta = 1.0 - 1.0 / dd;

  std::vector<VectorXd> pts(static_cast<std::size_t>(d + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(d + 1));
  vals[0] = eval(x0);
  for (Eigen::Index i = 0; i < d; ++i) {
    pts[static_cast<std::size_t>(i + 1)][i] += cfg.simplex_scale;
    vals[static_cast<std::size_t>(i + 1)] = eval(pts[static_cast<std::size_t>(i + 1)]);
  }
  std::vector<std::size_t> order(pts.size());

  bool exhausted = false;
  for (;;) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    {
      std::vector<VectorXd> p2;
      std::vector<double> v2;
      for (std::size_t i : order) {
        p2.push_back(pts[i]);
        v2.push_back(vals[i]);
      }
      pts.swap(p2);
      vals.swap(v2);
    }
    const double spread = vals.back() - vals.front();
    double extent = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      extent = std::max(extent, (pts[i] - pts[0]).cwiseAbs().maxCoeff());
    }
    if (std::isfinite(spread) && spread <= cfg.ftol * std::max(1.0, std::fabs(vals.front())) && extent <= cfg.xtol) break;
    if (extent == 0.0) break;
    if (evals >= cfg.max_evals) {
      exhausted = true;
      break;
    }

    VectorXd centroid = VectorXd::Zero(d);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) centroid += pts[i];
    centroid /= dd;
    const VectorXd& worst = pts.back();

    const VectorXd xr = centroid + alpha * (centroid - worst);
    const double fr = eval(xr);
    if (fr < vals.front()) {
      const VectorXd xe = centroid + beta * (xr - centroid);
      const double fe = eval(xe);
      if (fe < fr) {
        pts.back() = xe;
        vals.back() = fe;
      } else {
        pts.back() = xr;
        vals.back() = fr;
      }
      continue;
    }
    if (fr < vals[vals.size() - 2]) {
      pts.back() = xr;
      vals.back() = fr;
      continue;
    }
    if (fr < vals.back()) {
      const VectorXd xc = centroid + gamma * (xr - centroid);
      const double fc = eval(xc);
      if (fc <= fr) {
        pts.back() = xc;
        vals.back() = fc;
        continue;
      }
    } else {
      const VectorXd xc = centroid - gamma * (centroid - worst);
      const double fc = eval(xc);
      if (fc < vals.back()) {
        pts.back() = xc;
        vals.back() = fc;
        continue;
      }
    }
    // shrink toward the best vertex
    for (std::size_t i = 1; i < pts.size(); ++i) {
      pts[i] = pts[0] + delta * (pts[i] - pts[0]);
      vals[i] = eval(pts[i]);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i) {
    if (vals[i] < vals[best]) best = i;
  }
  return {pts[best], vals[best], evals, exhausted};
}

}  // namespace detail

/// Multi-start Nelder-Mead. Start 0 is x0; start r > 0 is x0 shifted by
/// log(factor) per coordinate, factor log-normal and clipped to [1/3, 3]. The
/// shift is a multiplicative perturbation for coordinates that are logs of
/// positive quantities, which is how every objective in this library is posed.
inline MinimizeResult minimize(const Objective& f, const VectorXd& x0, const MinimizeConfig& cfg) {
  const int starts = 1 + std::max(cfg.restarts, 0);
  const CounterRng rng(cfg.seed);
  const double log3 = std::log(3.0);
  std::vector<detail::RunResult> runs(static_cast<std::size_t>(starts));
  parallel_for(
      starts,
      [&](int r) {
        VectorXd start = x0;
        if (r > 0) {
          for (Eigen::Index i = 0; i < start.size(); ++i) {
            const std::uint64_t k = static_cast<std::uint64_t>(r) * 1024u + static_cast<std::uint64_t>(i);
            start[i] += std::clamp(0.5 * log3 * rng.normal(k), -log3, log3);
          }
        }
        runs[static_cast<std::size_t>(r)] = detail::nelder_mead(f, start, cfg);
      },
      cfg.threads);

  MinimizeResult out;
  out.x_best = x0;
  for (int r = 0; r < starts; ++r) {
    const auto& run = runs[static_cast<std::size_t>(r)];
    out.evals += run.evals;
    out.start_values.push_back(run.f);
    if (run.f < out.f_best) {  // strict: ties keep the lower start index
      out.f_best = run.f;
      out.x_best = run.x;
      out.best_start = r;
      out.budget_exhausted = run.exhausted;
    }
  }
  return out;
}

// -- Runge-Kutta -------------------------------------------------------------

enum class RkMethod { rk4, rk45 };

struct RkConfig {
  RkMethod method = RkMethod::rk4;
  double dt = 1e-3;      // fixed step (RK4) or initial step (RK45)
  double atol = 1e-8;
  double rtol = 1e-6;
  long max_steps = 50'000'000;
};

struct OdeSolution {
  std::vector<double> times;
  MatrixXd states;  // steps x n

  Eigen::Index steps() const { return states.rows(); }
};

using VectorField = std::function<VectorXd(double, const VectorXd&)>;
/// Called after every accepted step with (step index, t, x); may throw to abort.
using StepObserver = std::function<void(long, double, const VectorXd&)>;

namespace detail {

inline void check_finite(const VectorXd& x, double t) {
  if (!x.allFinite()) {
    throw NonFiniteState(t, "integration produced a non-finite state at t=" + std::to_string(t));
  }
}

inline OdeSolution pack(const std::vector<double>& times, const std::vector<double>& flat, Eigen::Index n) {
  OdeSolution sol;
  sol.times = times;
  sol.states.resize(static_cast<Eigen::Index>(times.size()), n);
  for (Eigen::Index k = 0; k < sol.states.rows(); ++k) {
    for (Eigen::Index j = 0; j < n; ++j) sol.states(k, j) = flat[static_cast<std::size_t>(k * n + j)];
  }
  return sol;
}

}  // namespace detail

inline OdeSolution integrate_rk(const VectorField& f, const VectorXd& x0, double t0, double t1,
                                const RkConfig& cfg, const StepObserver& observer = {}) {
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("integrate_rk: dt must be positive");
  if (!(t1 > t0)) throw std::invalid_argument("integrate_rk: t1 must exceed t0");
  detail::check_finite(x0, t0);
  const Eigen::Index n = x0.size();
  std::vector<double> times{t0};
  std::vector<double> flat(x0.data(), x0.data() + n);
  if (observer) observer(0, t0, x0);

  auto push = [&](double t, const VectorXd& x) {
    detail::check_finite(x, t);
    times.push_back(t);
    flat.insert(flat.end(), x.data(), x.data() + n);
    if (observer) observer(static_cast<long>(times.size() - 1), t, x);
  };

  if (cfg.method == RkMethod::rk4) {
    const double span = t1 - t0;
    long steps = static_cast<long>(std::ceil(span / cfg.dt - 1e-9));
    steps = std::max(steps, 1L);
    if (steps > cfg.max_steps) throw std::invalid_argument("integrate_rk: too many steps");
    times.reserve(static_cast<std::size_t>(steps + 1));
    flat.reserve(static_cast<std::size_t>((steps + 1) * n));
    VectorXd x = x0;
    double t = t0;
    for (long k = 1; k <= steps; ++k) {
      const double t_next = k == steps ? t1 : t0 + static_cast<double>(k) * cfg.dt;
      const double h = t_next - t;
      const VectorXd k1 = f(t, x);
      const VectorXd k2 = f(t + 0.5 * h, x + 0.5 * h * k1);
      const VectorXd k3 = f(t + 0.5 * h, x + 0.5 * h * k2);
      const VectorXd k4 = f(t + h, x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t = t_next;
      push(t, x);
    }
    return detail::pack(times, flat, n);
  }

  // Dormand-Prince 5(4) with FSAL and local extrapolation.
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                   b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                   e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  VectorXd x = x0;
  double t = t0;
  double h = std::min(cfg.dt, t1 - t0);
  VectorXd k1 = f(t, x);
  long accepted = 0;
  long attempts = 0;
  while (t < t1) {
    if (++attempts > cfg.max_steps) {
      throw NonFiniteState(t, "integrate_rk: step budget exhausted at t=" + std::to_string(t));
    }
    const bool last = t + h >= t1;
    if (last) h = t1 - t;
    const VectorXd k2 = f(t + c2 * h, x + h * a21 * k1);
    const VectorXd k3 = f(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
    const VectorXd k4 = f(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const VectorXd k5 = f(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const VectorXd k6 = f(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const VectorXd x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const VectorXd k7 = f(t + h, x_new);
    const VectorXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const VectorXd scale =
        (cfg.atol + cfg.rtol * x.cwiseAbs().cwiseMax(x_new.cwiseAbs()).array()).matrix();
    const double err_norm =
        n > 0 ? std::sqrt((err.array() / scale.array()).square().mean()) : 0.0;
    if (!std::isfinite(err_norm)) {
      h *= 0.2;
      if (h < 1e-14 * std::max(1.0, std::fabs(t))) {
        throw NonFiniteState(t, "integrate_rk: non-finite derivative at t=" + std::to_string(t));
      }
      continue;
    }
    if (err_norm <= 1.0) {
      t = last ? t1 : t + h;
      x = x_new;
      k1 = k7;
      ++accepted;
      push(t, x);
    }
    const double factor = err_norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 5.0);
    h *= factor;
  }
  return detail::pack(times, flat, n);
}

/// Linear interpolation of a solution onto `times` (clamped to the solved span).
inline MatrixXd resample(const OdeSolution& sol, const std::vector<double>& times) {
  MatrixXd out(static_cast<Eigen::Index>(times.size()), sol.states.cols());
  std::size_t seg = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = std::clamp(times[i], sol.times.front(), sol.times.back());
    while (seg + 2 < sol.times.size() && sol.times[seg + 1] < t) ++seg;
    if (seg + 1 >= sol.times.size()) {
      out.row(static_cast<Eigen::Index>(i)) = sol.states.row(static_cast<Eigen::Index>(seg));
      continue;
    }
    const double ta = sol.times[seg], tb = sol.times[seg + 1];
    const double w = tb > ta ? (t - ta) / (tb - ta) : 0.0;
    out.row(static_cast<Eigen::Index>(i)) =
        (1.0 - w) * sol.states.row(static_cast<Eigen::Index>(seg)) +
        w * sol.states.row(static_cast<Eigen::Index>(seg + 1));
  }
  return out;
}

}  // namespace gpphs::numerics
