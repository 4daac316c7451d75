#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "gpphs/posterior.hpp"

using namespace gpphs;
using namespace gpphs::posterior;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

/// Trained once and shared; the damped oscillator has invertible J - R so grad H is identifiable.
const learning::GpPhsModel& oscillator_model() {
  static const learning::GpPhsModel m = [] {
    learning::TrainConfig cfg;
    cfg.restarts = 2;
    cfg.max_evals = 600;
    cfg.seed = 3;
    return learning::train({fixtures::mass_spring_data(0.5, 101, 10.0, 0.005, 11)}, fixtures::mass_spring(0.3), cfg);
  }();
  return m;
}

MatrixXd inner_box() {
  MatrixXd box(2, 2);
  box << -0.8, 0.8, -0.6, 0.6;
  return box;
}

double centered_rms(const VectorXd& a, const VectorXd& b) {
  const VectorXd d = a - b;
  return std::sqrt((d.array() - d.mean()).square().mean());
}

HamiltonianGridSample analytic_sample(const MatrixXd& grid, const std::function<double(const VectorXd&)>& f) {
  HamiltonianGridSample s;
  s.grid = grid;
  s.values.resize(grid.rows());
  for (Eigen::Index i = 0; i < grid.rows(); ++i) s.values[i] = f(grid.row(i).transpose());
  return s;
}

}  // namespace

TEST(Lattice, OrderAndBounds) {
  MatrixXd box(2, 2);
  box << 0.0, 1.0, -2.0, 2.0;
  const MatrixXd g = lattice(box, {2, 3});
  ASSERT_EQ(g.rows(), 6);
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_EQ(g(0, 1), -2.0);
  EXPECT_EQ(g(1, 1), 0.0);
  EXPECT_EQ(g(2, 1), 2.0);
  EXPECT_EQ(g(3, 0), 1.0);
  EXPECT_EQ(g(5, 1), 2.0);
  EXPECT_THROW(lattice(box, {2}), DimensionMismatch);
  EXPECT_THROW(lattice(box, {0, 3}), DegenerateGrid);
}

TEST(HamiltonianPosterior, MeanRecoversOscillatorEnergy) {
  const auto& m = oscillator_model();
  const HamiltonianPosterior post(m, lattice(inner_box(), {9, 9}));
  VectorXd truth(post.grid().rows());
  for (Eigen::Index i = 0; i < truth.size(); ++i) truth[i] = 0.5 * post.grid().row(i).squaredNorm();
  EXPECT_LE(centered_rms(post.mean(), truth), 0.05);
  EXPECT_GE(post.std().minCoeff(), 0.0);
}

TEST(HamiltonianPosterior, DrawsAreSeededAndPlausible) {
  const auto& m = oscillator_model();
  const HamiltonianPosterior post(m, lattice(inner_box(), {7, 7}));
  const auto a = post.draw(1), b = post.draw(1), c = post.draw(2);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
  int inside = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = post.draw(seed);
    for (Eigen::Index i = 0; i < d.values.size(); ++i) {
      inside += std::fabs(d.values[i] - post.mean()[i]) <= 4.0 * post.std()[i] + 1e-12;
      ++total;
    }
  }
  EXPECT_GE(inside, static_cast<int>(0.99 * total));
}

TEST(HamiltonianPosterior, UncertaintyGrowsAwayFromData) {
  const auto& m = oscillator_model();
  MatrixXd grid(2, 2);
  grid << 0.3, 0.2, 6.0, 6.0;
  const HamiltonianPosterior post(m, grid);
  EXPECT_GT(post.std()[1], post.std()[0]);
  const auto near = predict_drift(m, grid.row(0).transpose(), VectorXd::Zero(1));
  const auto far = predict_drift(m, grid.row(1).transpose(), VectorXd::Zero(1));
  EXPECT_GT(far.cov.trace(), near.cov.trace());
}

TEST(Interpolate, ReproducesNodesAndConstants) {
  MatrixXd box(2, 2);
  box << -1.0, 1.0, 0.0, 2.0;
  const MatrixXd g = lattice(box, {6, 5});
  const auto ih = interpolate(analytic_sample(g, [](const VectorXd& x) { return std::sin(x[0]) + x[1] * x[1]; }));
  double range = 0.0;
  {
    const auto s = analytic_sample(g, [](const VectorXd& x) { return std::sin(x[0]) + x[1] * x[1]; });
    range = s.values.maxCoeff() - s.values.minCoeff();
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      EXPECT_NEAR(ih.fn.value(g.row(i).transpose()), s.values[i], 1e-6 * range);
    }
  }
  const auto flat = interpolate(analytic_sample(g, [](const VectorXd&) { return 2.5; }));
  for (Eigen::Index i = 0; i < g.rows(); ++i) EXPECT_NEAR(flat.fn.value(g.row(i).transpose()), 2.5, 1e-6);
}

TEST(Interpolate, OneDimensionalNodes) {
  MatrixXd box(1, 2);
  box << 0.0, 3.0;
  const MatrixXd g = lattice(box, {7});
  const auto ih = interpolate(analytic_sample(g, [](const VectorXd& x) { return x[0] * x[0]; }));
  for (Eigen::Index i = 0; i < g.rows(); ++i) EXPECT_NEAR(ih.fn.value(g.row(i).transpose()), g(i, 0) * g(i, 0), 1e-5);
  EXPECT_DOUBLE_EQ(ih.shape, 2.0 * 0.5);
}

TEST(Interpolate, GradientMatchesFiniteDifferences) {
  MatrixXd box(3, 2);
  box << -1.0, 1.0, -1.0, 1.0, 0.0, 1.0;
  const auto ih =
      interpolate(analytic_sample(lattice(box, {5, 5, 4}), [](const VectorXd& x) { return x.squaredNorm(); }));
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd x(3);
    x << u(rng), u(rng), 0.5 + 0.5 * u(rng);
    const VectorXd g = ih.fn.gradient(x);
    for (int d = 0; d < 3; ++d) {
      const double fd = fixtures::central_diff(
          [&](double v) {
            VectorXd y = x;
            y[d] = v;
            return ih.fn.value(y);
          },
          x[d], 1e-5);
      EXPECT_NEAR(g[d], fd, 1e-5 * std::max(1.0, std::fabs(fd)));
    }
  }
}

TEST(Interpolate, FidelityAcrossShapeScales) {
  MatrixXd box(2, 2);
  box << -1.0, 1.0, -1.0, 1.0;
  const MatrixXd g = lattice(box, {9, 9});
  const auto f = [](const VectorXd& x) { return 0.5 * x.squaredNorm() + 0.2 * x[0]; };
  const auto sample = analytic_sample(g, f);
  MatrixXd probe_box(2, 2);
  probe_box << -0.8, 0.8, -0.8, 0.8;
  const MatrixXd probes = lattice(probe_box, {13, 13});
  for (double scale : {1.0, 2.0, 4.0}) {
    RbfConfig cfg;
    cfg.shape_scale = scale;
    const auto ih = interpolate(sample, cfg);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < probes.rows(); ++i) {
      const VectorXd x = probes.row(i).transpose();
      worst = std::max(worst, std::fabs(ih.fn.value(x) - f(x)));
    }
    EXPECT_LE(worst, 0.05) << "shape scale " << scale;
  }
}

TEST(Interpolate, DecaysFarFromGrid) {
  MatrixXd box(2, 2);
  box << 0.0, 1.0, 0.0, 1.0;
  const auto ih = interpolate(analytic_sample(lattice(box, {4, 4}), [](const VectorXd& x) { return 1.0 + x[0]; }));
  VectorXd far(2);
  far << 50.0, 50.0;
  EXPECT_EQ(ih.fn.value(far), 0.0);
  EXPECT_EQ(ih.fn.gradient(far).norm(), 0.0);
}

TEST(Interpolate, RejectsDegenerateGrids) {
  MatrixXd line(4, 2);
  line << 0, 0, 1, 1, 2, 2, 3, 3;
  EXPECT_THROW(interpolate(analytic_sample(line, [](const VectorXd&) { return 1.0; })), DegenerateGrid);
  MatrixXd few(2, 2);
  few << 0, 0, 1, 0;
  EXPECT_THROW(interpolate(analytic_sample(few, [](const VectorXd&) { return 1.0; })), DegenerateGrid);
  MatrixXd dup(3, 2);
  dup << 0, 0, 0, 0, 1, 1;
  EXPECT_THROW(interpolate(analytic_sample(dup, [](const VectorXd&) { return 1.0; })), DegenerateGrid);
}

TEST(PredictDrift, MeanMatchesMeanGradientAndCovarianceIsPsd) {
  const auto& m = oscillator_model();
  const MeanGradient grad(m);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd x(2);
    x << u(rng), u(rng);
    const VectorXd in = VectorXd::Constant(1, 0.3 * trial);
    const auto p = predict_drift(m, x, in);
    const VectorXd via_grad = m.structure.eval_jr(x, m.phi) * grad(x) + m.structure.eval_g(x, m.phi) * in;
    EXPECT_LT((p.mean - via_grad).norm(), 1e-9 * std::max(1.0, p.mean.norm()));
    EXPECT_LE((p.cov - p.cov.transpose()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(p.cov).eigenvalues().minCoeff(), -1e-9);
    const auto field = mean_drift_field(m, [&](double) { return in; });
    EXPECT_LT((field(0.0, x) - p.mean).norm(), 1e-9 * std::max(1.0, p.mean.norm()));
  }
  EXPECT_THROW(predict_drift(m, VectorXd::Zero(3), VectorXd::Zero(1)), DimensionMismatch);
}

TEST(PredictDrift, MeanGradientMatchesPosteriorMeanGradient) {
  const auto& m = oscillator_model();
  const MeanGradient grad(m);
  VectorXd x(2);
  x << 0.2, -0.3;
  const double step = 1e-5;
  for (int d = 0; d < 2; ++d) {
    MatrixXd pts(2, 2);
    pts.row(0) = x.transpose();
    pts.row(1) = x.transpose();
    pts(0, d) += step;
    pts(1, d) -= step;
    const HamiltonianPosterior post(m, pts);
    EXPECT_NEAR(grad(x)[d], (post.mean()[0] - post.mean()[1]) / (2 * step), 1e-5);
  }
}

TEST(SampleAndSimulate, UnforcedRolloutIsPassive) {
  const auto& m = oscillator_model();
  MatrixXd box(2, 2);
  box << -1.6, 1.6, -1.4, 1.4;
  VectorXd x0(2);
  x0 << 1.0, 0.0;
  numerics::RkConfig rk;
  rk.dt = 1e-2;
  const auto sim = sample_and_simulate(m, lattice(box, {13, 13}), 4, x0,
                                       dynamics::PiecewiseConstantInput::constant(VectorXd::Zero(1)), 0.0, 5.0, rk);
  const auto audit = dynamics::passivity_audit(sim.record);
  const auto& h = sim.record.hamiltonian;
  EXPECT_LE(audit.max_violation, 1e-3 * (h.maxCoeff() - h.minCoeff()));
  EXPECT_FALSE(sim.escaped);
  EXPECT_EQ(sim.grid_escape.size(), static_cast<std::size_t>(sim.record.solution.steps()));
}

TEST(GridEscape, FlagsStatesOutsideBox) {
  MatrixXd grid(2, 1);
  grid << 0.0, 1.0;
  MatrixXd states(3, 1);
  states << 0.5, 1.5, -0.1;
  const auto f = grid_escape_flags(grid, states);
  EXPECT_EQ(f, (std::vector<char>{0, 1, 1}));
}

TEST(NaiveGp, FitsTrainingDerivatives) {
  const auto& m = oscillator_model();
  NaiveGp::Config cfg;
  cfg.seed = 2;
  const NaiveGp gp(m.training, cfg);
  double sq = 0.0, ref = 0.0;
  for (Eigen::Index i = 0; i < m.training.size(); ++i) {
    const VectorXd e = gp.mean(m.training.states.row(i).transpose(), m.training.inputs.row(i).transpose()) -
                       m.training.derivs.row(i).transpose();
    sq += e.squaredNorm();
    ref += m.training.derivs.row(i).squaredNorm();
  }
  EXPECT_LT(sq, 0.01 * ref);
  const auto field = gp.field(dynamics::PiecewiseConstantInput::constant(VectorXd::Zero(1)));
  EXPECT_TRUE(field(0.0, VectorXd::Zero(2)).allFinite());
}
