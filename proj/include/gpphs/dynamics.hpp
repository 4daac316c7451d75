#pragma once

// Port-Hamiltonian structure (J, R, G), vector field, simulation with a
// passivity audit, and power-preserving interconnection of two systems.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gpphs/errors.hpp"
#include "gpphs/expr.hpp"
#include "gpphs/numerics.hpp"

namespace gpphs::dynamics {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ParamSpec {
  std::string name;
  double init = 0.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

/// Row-major matrix of expressions.
class ExprMatrix {
 public:
  ExprMatrix() = default;
  ExprMatrix(int rows, int cols) : rows_(rows), cols_(cols), entries_(static_cast<std::size_t>(rows * cols)) {}
  ExprMatrix(int rows, int cols, std::vector<expr::Expr> entries)
      : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    if (entries_.size() != static_cast<std::size_t>(rows * cols)) {
      throw DimensionMismatch("ExprMatrix: entry count does not match shape");
    }
  }

  /// Parses a row-major table of expression strings.
  static ExprMatrix parse(const std::vector<std::vector<std::string>>& rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows[0].size()) : 0;
    ExprMatrix m(r, c);
    for (int i = 0; i < r; ++i) {
      if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != c) {
        throw DimensionMismatch("ExprMatrix: ragged rows");
      }
      for (int j = 0; j < c; ++j) m.at(i, j) = expr::parse_expr(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  expr::Expr& at(int i, int j) { return entries_[static_cast<std::size_t>(i * cols_ + j)]; }
  const expr::Expr& at(int i, int j) const { return entries_[static_cast<std::size_t>(i * cols_ + j)]; }
  const std::vector<expr::Expr>& entries() const { return entries_; }

  std::vector<std::vector<std::string>> to_strings() const {
    std::vector<std::vector<std::string>> out(static_cast<std::size_t>(rows_));
    for (int i = 0; i < rows_; ++i) {
      for (int j = 0; j < cols_; ++j) out[static_cast<std::size_t>(i)].push_back(expr::to_string(at(i, j)));
    }
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<expr::Expr> entries_;
};

/// Parametric J(x|phi), R(x|phi), G(x|phi). Immutable after construction.
class PhsStructure {
 public:
  PhsStructure() = default;

  PhsStructure(int n, int m, ExprMatrix j, ExprMatrix r, ExprMatrix g, std::vector<ParamSpec> params)
      : n_(n), m_(m), j_(std::move(j)), r_(std::move(r)), g_(std::move(g)), params_(std::move(params)) {
    if (n_ <= 0 || m_ < 0) throw DimensionMismatch("PhsStructure: need n > 0 and m >= 0");
    if (j_.rows() != n_ || j_.cols() != n_) throw DimensionMismatch("PhsStructure: J must be n x n");
    if (r_.rows() != n_ || r_.cols() != n_) throw DimensionMismatch("PhsStructure: R must be n x n");
    if (g_.rows() != n_ || g_.cols() != m_) {
      if (!(m_ == 0 && g_.rows() == 0)) throw DimensionMismatch("PhsStructure: G must be n x m");
    }
    std::set<std::string> seen;
    for (const auto& p : params_) {
      if (!seen.insert(p.name).second) throw BindError("duplicate parameter '" + p.name + "'");
      if (!(p.lower <= p.upper)) throw BindError("parameter '" + p.name + "' has lower > upper");
      names_.push_back(p.name);
    }
    auto bind_all = [&](const ExprMatrix& src, std::vector<expr::BoundExpr>& dst) {
      for (const auto& e : src.entries()) dst.emplace_back(e, n_, names_);
    };
    bind_all(j_, bj_);
    bind_all(r_, br_);
    bind_all(g_, bg_);
  }

  int state_dim() const { return n_; }
  int input_dim() const { return m_; }
  const ExprMatrix& j() const { return j_; }
  const ExprMatrix& r() const { return r_; }
  const ExprMatrix& g() const { return g_; }
  const std::vector<ParamSpec>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  int param_count() const { return static_cast<int>(params_.size()); }

  VectorXd initial_params() const {
    VectorXd phi(param_count());
    for (int i = 0; i < param_count(); ++i) phi[i] = params_[static_cast<std::size_t>(i)].init;
    return phi;
  }

  bool within_bounds(const VectorXd& phi) const {
    if (phi.size() != param_count()) return false;
    for (int i = 0; i < param_count(); ++i) {
      const auto& p = params_[static_cast<std::size_t>(i)];
      if (!(phi[i] >= p.lower && phi[i] <= p.upper)) return false;
    }
    return true;
  }

  MatrixXd eval_j(const VectorXd& x, const VectorXd& phi) const { return eval(bj_, n_, n_, x, phi); }
  MatrixXd eval_r(const VectorXd& x, const VectorXd& phi) const { return eval(br_, n_, n_, x, phi); }
  MatrixXd eval_g(const VectorXd& x, const VectorXd& phi) const { return eval(bg_, n_, m_, x, phi); }
  /// J(x) - R(x).
  MatrixXd eval_jr(const VectorXd& x, const VectorXd& phi) const {
    return eval_j(x, phi) - eval_r(x, phi);
  }

 private:
  MatrixXd eval(const std::vector<expr::BoundExpr>& code, int rows, int cols, const VectorXd& x,
                const VectorXd& phi) const {
    if (x.size() != n_) throw DimensionMismatch("PhsStructure: state has wrong dimension");
    if (phi.size() != param_count()) throw DimensionMismatch("PhsStructure: parameter vector has wrong size");
    MatrixXd out(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int k = 0; k < cols; ++k) {
        try {
          out(i, k) = code[static_cast<std::size_t>(i * cols + k)].eval(x.data(), phi.data());
        } catch (const EvalError& e) {
          std::string where = "[";
          for (Eigen::Index s = 0; s < x.size(); ++s) where += (s ? ", " : "") + std::to_string(x[s]);
          throw EvalError(e.offset(), std::string(e.what()) + " (entry (" + std::to_string(i + 1) + "," +
                                          std::to_string(k + 1) + ") at state " + where + "])");
        }
      }
    }
    return out;
  }

  int n_ = 0;
  int m_ = 0;
  ExprMatrix j_, r_, g_;
  std::vector<ParamSpec> params_;
  std::vector<std::string> names_;
  std::vector<expr::BoundExpr> bj_, br_, bg_;
};

struct HamiltonianFn {
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> gradient;
};

// -- validation --------------------------------------------------------------

struct ValidationReport {
  double max_skew_defect = 0.0;      // max |J + J^T|
  double max_symmetry_defect = 0.0;  // max |R - R^T|
  double min_r_eigenvalue = std::numeric_limits<double>::infinity();
  int probes = 0;
};

struct ValidationTolerances {
  double skew = 1e-12;
  double symmetry = 1e-12;
  double psd = 1e-10;
};

namespace detail {
inline std::string format_state(const VectorXd& x) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < x.size(); ++i) s += (i ? ", " : "") + std::to_string(x[i]);
  return s + "]";
}
}  // namespace detail

/// Checks skewness of J, symmetry and PSD-ness of R at every (state, params) pair.
inline ValidationReport validate_structure(const PhsStructure& s, const MatrixXd& probe_states,
                                           const std::vector<VectorXd>& probe_params,
                                           const ValidationTolerances& tol = {}) {
  if (probe_states.rows() == 0 || probe_params.empty()) {
    throw std::invalid_argument("validate_structure: probe sets must be non-empty");
  }
  ValidationReport rep;
  for (const auto& phi : probe_params) {
    if (!s.within_bounds(phi)) {
      throw StructureInvalid("params", "probe parameters outside declared bounds");
    }
    for (Eigen::Index k = 0; k < probe_states.rows(); ++k) {
      const VectorXd x = probe_states.row(k).transpose();
      const MatrixXd j = s.eval_j(x, phi);
      const MatrixXd r = s.eval_r(x, phi);
      const double skew = (j + j.transpose()).cwiseAbs().maxCoeff();
      const double sym = (r - r.transpose()).cwiseAbs().maxCoeff();
      const double scale_j = std::max(1.0, j.cwiseAbs().maxCoeff());
      const double scale_r = std::max(1.0, r.cwiseAbs().maxCoeff());
      rep.max_skew_defect = std::max(rep.max_skew_defect, skew);
      rep.max_symmetry_defect = std::max(rep.max_symmetry_defect, sym);
      if (skew > tol.skew * scale_j) {
        throw StructureInvalid("skew", "J is not skew-symmetric (defect " + std::to_string(skew) +
                                           ") at state " + detail::format_state(x));
      }
      if (sym > tol.symmetry * scale_r) {
        throw StructureInvalid("symmetry", "R is not symmetric (defect " + std::to_string(sym) +
                                               ") at state " + detail::format_state(x));
      }
      const double lmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (r + r.transpose()), Eigen::EigenvaluesOnly)
                              .eigenvalues()
                              .minCoeff();
      rep.min_r_eigenvalue = std::min(rep.min_r_eigenvalue, lmin);
      if (lmin < -tol.psd * scale_r) {
        throw StructureInvalid("psd", "R has negative eigenvalue " + std::to_string(lmin) +
                                          " at state " + detail::format_state(x));
      }
      ++rep.probes;
    }
  }
  return rep;
}

/// Uniform random states in an axis-aligned box given as rows [lo, hi].
inline MatrixXd random_probe_states(const MatrixXd& box, int count, std::uint64_t seed) {
  const numerics::CounterRng rng(seed);
  MatrixXd out(count, box.rows());
  std::uint64_t c = 0;
  for (int k = 0; k < count; ++k) {
    for (Eigen::Index i = 0; i < box.rows(); ++i) {
      out(k, i) = box(i, 0) + (box(i, 1) - box(i, 0)) * rng.uniform(c++);
    }
  }
  return out;
}

/// Parameter samples uniform within finite bounds; unbounded sides fall back to the initial value.
inline std::vector<VectorXd> random_probe_params(const PhsStructure& s, int count, std::uint64_t seed) {
  const numerics::CounterRng rng(seed ^ 0x5bd1e995ULL);
  std::vector<VectorXd> out;
  std::uint64_t c = 0;
  for (int k = 0; k < count; ++k) {
    VectorXd phi(s.param_count());
    for (int i = 0; i < s.param_count(); ++i) {
      const auto& p = s.params()[static_cast<std::size_t>(i)];
      const double u = rng.uniform(c++);
      if (std::isfinite(p.lower) && std::isfinite(p.upper)) {
        phi[i] = p.lower + (p.upper - p.lower) * u;
      } else if (std::isfinite(p.lower)) {
        phi[i] = std::max(p.lower, p.init) * (0.5 + u);
        if (phi[i] < p.lower) phi[i] = p.lower;
      } else if (std::isfinite(p.upper)) {
        phi[i] = std::min(p.upper, p.init - std::fabs(p.init) * u);
      } else {
        phi[i] = p.init;
      }
    }
    out.push_back(phi);
  }
  return out;
}

// -- inputs and vector field -------------------------------------------------

using InputFn = std::function<VectorXd(double)>;

/// u(t) = values[i] for t in [times[i], times[i+1]); before times[0] the first value holds.
struct PiecewiseConstantInput {
  std::vector<double> times;
  std::vector<VectorXd> values;

  VectorXd operator()(double t) const {
    if (values.empty()) return VectorXd();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t idx = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin() - 1);
    return values[idx];
  }

  static PiecewiseConstantInput constant(const VectorXd& v) { return {{0.0}, {v}}; }
};

/// x' = (J - R)(x) grad H(x) + G(x) u(t).
inline numerics::VectorField vector_field(const PhsStructure& s, const VectorXd& phi,
                                          const HamiltonianFn& h, const InputFn& u) {
  if (!s.within_bounds(phi)) throw StructureInvalid("params", "parameters outside declared bounds");
  return [s, phi, h, u](double t, const VectorXd& x) -> VectorXd {
    VectorXd dx = s.eval_jr(x, phi) * h.gradient(x);
    if (s.input_dim() > 0) dx += s.eval_g(x, phi) * u(t);
    return dx;
  };
}

// -- simulation --------------------------------------------------------------

struct SimulationRecord {
  numerics::OdeSolution solution;
  MatrixXd inputs;       // steps x m
  VectorXd hamiltonian;  // H(x(t_k))
  MatrixXd outputs;      // y = G^T grad H, steps x m
  VectorXd supply;       // u^T y
};

struct SimulateOptions {
  int psd_check_every = 100;
};

inline SimulationRecord simulate(const PhsStructure& s, const VectorXd& phi, const HamiltonianFn& h,
                                 const InputFn& u, const VectorXd& x0, double t0, double t1,
                                 const numerics::RkConfig& rk = {}, const SimulateOptions& opt = {}) {
  if (x0.size() != s.state_dim()) throw DimensionMismatch("simulate: x0 has wrong dimension");
  const auto f = vector_field(s, phi, h, u);
  numerics::StepObserver observer;
  if (opt.psd_check_every > 0) {
    observer = [&](long step, double, const VectorXd& x) {
      if (step % opt.psd_check_every != 0) return;
      const MatrixXd r = s.eval_r(x, phi);
      const double lmin =
          Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (r + r.transpose()), Eigen::EigenvaluesOnly)
              .eigenvalues()
              .minCoeff();
      if (lmin < -1e-10 * std::max(1.0, r.cwiseAbs().maxCoeff())) {
        throw StructureInvalid("psd", "R lost positive semidefiniteness during simulation at state " +
                                          detail::format_state(x));
      }
    };
  }
  SimulationRecord rec;
  rec.solution = numerics::integrate_rk(f, x0, t0, t1, rk, observer);
  const Eigen::Index steps = rec.solution.steps();
  const int m = s.input_dim();
  rec.inputs.resize(steps, m);
  rec.outputs.resize(steps, m);
  rec.hamiltonian.resize(steps);
  rec.supply.resize(steps);
  for (Eigen::Index k = 0; k < steps; ++k) {
    const VectorXd x = rec.solution.states.row(k).transpose();
    const double t = rec.solution.times[static_cast<std::size_t>(k)];
    rec.hamiltonian[k] = h.value(x);
    if (m > 0) {
      const VectorXd uk = u(t);
      const VectorXd y = s.eval_g(x, phi).transpose() * h.gradient(x);
      rec.inputs.row(k) = uk.transpose();
      rec.outputs.row(k) = y.transpose();
      rec.supply[k] = uk.dot(y);
    } else {
      rec.supply[k] = 0.0;
    }
  }
  return rec;
}

struct PassivityAudit {
  double max_violation = -std::numeric_limits<double>::infinity();
  long worst_step = -1;     // index k of the step [t_k, t_{k+1}]
  VectorXd dissipated;      // supply - dH/dt per step
};

/// Discrete check of dH/dt <= u^T y. Step k compares the forward difference of H
/// with the mean supply over the step, or with the larger endpoint supply where
/// the input jumps inside the step.
inline PassivityAudit passivity_audit(const std::vector<double>& times, const MatrixXd& inputs,
                                      const VectorXd& hamiltonian, const VectorXd& supply) {
  PassivityAudit out;
  const Eigen::Index steps = hamiltonian.size();
  out.dissipated.resize(std::max<Eigen::Index>(steps - 1, 0));
  for (Eigen::Index k = 0; k + 1 < steps; ++k) {
    const double dt = times[static_cast<std::size_t>(k + 1)] - times[static_cast<std::size_t>(k)];
    const double hdot = (hamiltonian[k + 1] - hamiltonian[k]) / dt;
    const bool jump = inputs.cols() > 0 && (inputs.row(k) - inputs.row(k + 1)).cwiseAbs().maxCoeff() > 0.0;
    const double s = jump ? std::max(supply[k], supply[k + 1]) : 0.5 * (supply[k] + supply[k + 1]);
    out.dissipated[k] = s - hdot;
    if (hdot - s > out.max_violation) {
      out.max_violation = hdot - s;
      out.worst_step = static_cast<long>(k);
    }
  }
  return out;
}

inline PassivityAudit passivity_audit(const SimulationRecord& rec) {
  return passivity_audit(rec.solution.times, rec.inputs, rec.hamiltonian, rec.supply);
}

// -- interconnection ---------------------------------------------------------

struct PortHamiltonianSystem {
  PhsStructure structure;
  HamiltonianFn hamiltonian;
};

/// Input index of system 1 wired to input index of system 2 (0-based).
struct PortPair {
  int input1 = 0;
  int input2 = 0;
};

struct ProbeSettings {
  MatrixXd box1;  // n1 x 2; empty means [-1, 1] per state
  MatrixXd box2;
  int states = 20;
  int param_samples = 3;
  std::uint64_t seed = 7;
};

struct ComposedSystem {
  PortHamiltonianSystem system;
  int n1 = 0;
  int n2 = 0;
  std::vector<PortPair> ports;
  std::vector<int> external1;  // system-1 inputs kept external, in order
  std::vector<int> external2;
  std::map<std::string, std::string> renames1;  // parameter renames, if names collided
  std::map<std::string, std::string> renames2;
  ValidationReport validation;
};

namespace detail {

inline MatrixXd default_box(const MatrixXd& box, int n) {
  if (box.rows() == n && box.cols() == 2) return box;
  MatrixXd b(n, 2);
  b.col(0).setConstant(-1.0);
  b.col(1).setConstant(1.0);
  return b;
}

inline ValidationReport probe(const PhsStructure& s, const MatrixXd& box, const ProbeSettings& p) {
  return validate_structure(s, random_probe_states(box, p.states, p.seed),
                            random_probe_params(s, p.param_samples, p.seed + 1));
}

inline expr::Expr times(const expr::Expr& a, const expr::Expr& b) {
  if (expr::is_constant(a, 0.0) || expr::is_constant(b, 0.0)) return expr::constant(0.0);
  if (expr::is_constant(a, 1.0)) return b;
  if (expr::is_constant(b, 1.0)) return a;
  return expr::mul(a, b);
}

inline expr::Expr plus(const expr::Expr& a, const expr::Expr& b) {
  if (expr::is_constant(a, 0.0)) return b;
  if (expr::is_constant(b, 0.0)) return a;
  return expr::add(a, b);
}

}  // namespace detail

/// Power-preserving interconnection u1c = -y2c, u2c = y1c of two systems.
///
/// The composed matrix [[J_R1, -G1c G2c^T], [G2c G1c^T, J_R2]] has the coupling in
/// its skew part only, so J = [[J1, -G1c G2c^T], [G2c G1c^T, J2]] and
/// R = diag(R1, R2). The composed Hamiltonian is H1(x) + H2(xi).
inline ComposedSystem interconnect(const PortHamiltonianSystem& a, const PortHamiltonianSystem& b,
                                   const std::vector<PortPair>& ports, const ProbeSettings& probes = {}) {
  const auto& s1 = a.structure;
  const auto& s2 = b.structure;
  const int n1 = s1.state_dim(), n2 = s2.state_dim();
  const int m1 = s1.input_dim(), m2 = s2.input_dim();
  const int mc = static_cast<int>(ports.size());
  if (mc > std::min(m1, m2)) throw PortMismatch("interconnect: more port pairs than inputs");
  std::set<int> used1, used2;
  for (const auto& p : ports) {
    if (p.input1 < 0 || p.input1 >= m1 || p.input2 < 0 || p.input2 >= m2) {
      throw PortMismatch("interconnect: port index out of range");
    }
    if (!used1.insert(p.input1).second || !used2.insert(p.input2).second) {
      throw PortMismatch("interconnect: port indices must be distinct");
    }
  }

  detail::probe(s1, detail::default_box(probes.box1, n1), probes);
  detail::probe(s2, detail::default_box(probes.box2, n2), probes);

  ComposedSystem out;
  out.n1 = n1;
  out.n2 = n2;
  out.ports = ports;
  for (int i = 0; i < m1; ++i) if (!used1.count(i)) out.external1.push_back(i);
  for (int i = 0; i < m2; ++i) if (!used2.count(i)) out.external2.push_back(i);

  std::set<std::string> names2(s2.param_names().begin(), s2.param_names().end());
  for (const auto& name : s1.param_names()) {
    if (names2.count(name)) {
      out.renames1[name] = name + "_1";
      out.renames2[name] = name + "_2";
    }
  }
  auto lift1 = [&](const expr::Expr& e) { return expr::rename_params(e, out.renames1); };
  auto lift2 = [&](const expr::Expr& e) {
    return expr::shift_states(expr::rename_params(e, out.renames2), n1);
  };

  const int n = n1 + n2;
  const int m = static_cast<int>(out.external1.size() + out.external2.size());
  ExprMatrix j(n, n), r(n, n), g(n, m);
  for (int i = 0; i < n1; ++i) {
    for (int k = 0; k < n1; ++k) {
      j.at(i, k) = lift1(s1.j().at(i, k));
      r.at(i, k) = lift1(s1.r().at(i, k));
    }
  }
  for (int i = 0; i < n2; ++i) {
    for (int k = 0; k < n2; ++k) {
      j.at(n1 + i, n1 + k) = lift2(s2.j().at(i, k));
      r.at(n1 + i, n1 + k) = lift2(s2.r().at(i, k));
    }
  }
  // coupling blocks: (G1c G2c^T)_{ik} = sum_p G1(i, p1) G2(k, p2)
  for (int i = 0; i < n1; ++i) {
    for (int k = 0; k < n2; ++k) {
      expr::Expr sum = expr::constant(0.0);
      for (const auto& p : ports) {
        sum = detail::plus(sum, detail::times(lift1(s1.g().at(i, p.input1)), lift2(s2.g().at(k, p.input2))));
      }
      j.at(n1 + k, i) = sum;
      j.at(i, n1 + k) = expr::is_constant(sum, 0.0) ? sum : expr::neg(sum);
    }
  }
  int col = 0;
  for (int e : out.external1) {
    for (int i = 0; i < n1; ++i) g.at(i, col) = lift1(s1.g().at(i, e));
    ++col;
  }
  for (int e : out.external2) {
    for (int i = 0; i < n2; ++i) g.at(n1 + i, col) = lift2(s2.g().at(i, e));
    ++col;
  }

  std::vector<ParamSpec> params;
  for (auto p : s1.params()) {
    if (auto it = out.renames1.find(p.name); it != out.renames1.end()) p.name = it->second;
    params.push_back(p);
  }
  for (auto p : s2.params()) {
    if (auto it = out.renames2.find(p.name); it != out.renames2.end()) p.name = it->second;
    params.push_back(p);
  }
  out.system.structure = PhsStructure(n, m, std::move(j), std::move(r), std::move(g), std::move(params));

  const HamiltonianFn h1 = a.hamiltonian, h2 = b.hamiltonian;
  if (h1.value && h2.value) {
    out.system.hamiltonian.value = [h1, h2, n1, n2](const VectorXd& z) {
      return h1.value(z.head(n1)) + h2.value(z.tail(n2));
    };
    out.system.hamiltonian.gradient = [h1, h2, n1, n2](const VectorXd& z) {
      VectorXd g(n1 + n2);
      g.head(n1) = h1.gradient(z.head(n1));
      g.tail(n2) = h2.gradient(z.tail(n2));
      return g;
    };
  }

  MatrixXd box(n, 2);
  box.topRows(n1) = detail::default_box(probes.box1, n1);
  box.bottomRows(n2) = detail::default_box(probes.box2, n2);
  out.validation = detail::probe(out.system.structure, box, probes);
  return out;
}

}  // namespace gpphs::dynamics
