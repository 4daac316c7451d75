#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "gpphs/dynamics.hpp"
#include "gpphs/maglev.hpp"

using namespace gpphs;
using namespace gpphs::dynamics;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

PhsStructure oscillator(const std::string& k, const std::string& d, double k_init) {
  return PhsStructure(2, 1, ExprMatrix::parse({{"0", "1"}, {"-1", "0"}}), ExprMatrix::parse({{"0", "0"}, {"0", d}}),
                      ExprMatrix::parse({{"0"}, {"1"}}), {{k, k_init, 0.1, 10.0}});
}

/// H = k q^2/2 + p^2/2 with k read from phi.
HamiltonianFn spring_h(double k) {
  return {[k](const VectorXd& x) { return 0.5 * k * x[0] * x[0] + 0.5 * x[1] * x[1]; },
          [k](const VectorXd& x) {
            VectorXd g(2);
            g << k * x[0], x[1];
            return g;
          }};
}

VectorXd phi1(double v) { return VectorXd::Constant(1, v); }

}  // namespace

TEST(Structure, MaglevValidAtRandomProbes) {
  const auto s = maglev::structure();
  const auto states = random_probe_states(maglev::probe_box(), 100, 3);
  std::vector<VectorXd> params;
  for (double c : {0.1, 1.0, 2.5, 5.0}) params.push_back(phi1(c));
  const auto rep = validate_structure(s, states, params);
  EXPECT_EQ(rep.probes, 400);
  EXPECT_EQ(rep.max_skew_defect, 0.0);
  EXPECT_GE(rep.min_r_eigenvalue, 0.0);
}

TEST(Structure, DetectsSkewSymmetryAndPsdViolations) {
  const MatrixXd probe = MatrixXd::Zero(1, 3);
  const std::vector<VectorXd> none{VectorXd()};
  const auto z = ExprMatrix::parse({{"0", "0", "0"}, {"0", "0", "0"}, {"0", "0", "0"}});
  const auto g = ExprMatrix::parse({{"0"}, {"0"}, {"1"}});
  try {
    validate_structure(PhsStructure(3, 1, ExprMatrix::parse({{"1", "0", "0"}, {"0", "0", "0"}, {"0", "0", "0"}}), z, g, {}),
                       probe, none);
    FAIL();
  } catch (const StructureInvalid& e) {
    EXPECT_EQ(e.condition(), "skew");
  }
  try {
    validate_structure(PhsStructure(3, 1, z, ExprMatrix::parse({{"0", "1", "0"}, {"0", "0", "0"}, {"0", "0", "0"}}), g, {}),
                       probe, none);
    FAIL();
  } catch (const StructureInvalid& e) {
    EXPECT_EQ(e.condition(), "symmetry");
  }
  try {
    validate_structure(PhsStructure(3, 1, z, ExprMatrix::parse({{"0", "0", "0"}, {"0", "-1", "0"}, {"0", "0", "0"}}), g, {}),
                       probe, none);
    FAIL();
  } catch (const StructureInvalid& e) {
    EXPECT_EQ(e.condition(), "psd");
  }
  EXPECT_THROW(validate_structure(maglev::structure(), probe, {phi1(11.0)}), StructureInvalid);
}

TEST(Structure, RejectsBadDeclarations) {
  const auto j = ExprMatrix::parse({{"0", "1"}, {"-1", "0"}});
  const auto r = ExprMatrix::parse({{"0", "0"}, {"0", "k"}});
  const auto g = ExprMatrix::parse({{"0"}, {"1"}});
  EXPECT_THROW(PhsStructure(2, 1, j, r, g, {}), BindError);
  EXPECT_THROW(PhsStructure(2, 1, j, r, g, {{"k", 1, 0, 2}, {"k", 1, 0, 2}}), BindError);
  EXPECT_THROW(PhsStructure(2, 1, j, r, g, {{"k", 1, 3, 2}}), BindError);
  EXPECT_THROW(PhsStructure(3, 1, j, r, g, {{"k", 1, 0, 2}}), DimensionMismatch);
  EXPECT_THROW(PhsStructure(2, 1, j, ExprMatrix::parse({{"0", "0"}, {"0", "x3"}}), g, {}), BindError);
}

TEST(VectorField, MatchesHandCodedMaglev) {
  const auto s = maglev::structure();
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    VectorXd x(3);
    x << u(rng), 0.2 * u(rng), 3.0 * u(rng);
    const double c = 0.5 + std::fabs(u(rng));
    const double in = 2.0 * u(rng);
    maglev::Constants k;
    k.drag = c;
    const auto f = vector_field(s, phi1(c), maglev::true_hamiltonian(), [in](double) { return VectorXd::Constant(1, in); });
    EXPECT_LT((f(0.0, x) - maglev::rhs(x, in, k)).norm(), 1e-12);
  }
}

TEST(VectorField, AffineInInputAndZeroForFlatHamiltonian) {
  const auto s = maglev::structure();
  const auto h = maglev::true_hamiltonian();
  VectorXd x(3);
  x << 0.4, -0.1, 1.2;
  auto at = [&](double v) {
    return vector_field(s, phi1(1.0), h, [v](double) { return VectorXd::Constant(1, v); })(0.0, x);
  };
  EXPECT_LT((at(1.5 + 0.7) - at(1.5) - at(0.7) + at(0.0)).norm(), 1e-12);
  const HamiltonianFn flat{[](const VectorXd&) { return 0.0; }, [](const VectorXd& z) { return VectorXd(VectorXd::Zero(z.size())); }};
  EXPECT_EQ(vector_field(s, phi1(1.0), flat, [](double) { return VectorXd::Zero(1); })(0.0, x), VectorXd::Zero(3));
  EXPECT_THROW(vector_field(s, phi1(20.0), h, [](double) { return VectorXd::Zero(1); }), StructureInvalid);
}

TEST(Hamiltonian, MaglevGradientMatchesFiniteDifferences) {
  const auto h = maglev::true_hamiltonian();
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd x(3);
    x << u(rng), u(rng), 2 * u(rng);
    const VectorXd g = h.gradient(x);
    for (int i = 0; i < 3; ++i) {
      VectorXd a = x, b = x;
      a[i] += 1e-5;
      b[i] -= 1e-5;
      const double fd = (h.value(a) - h.value(b)) / 2e-5;
      EXPECT_NEAR(g[i], fd, 1e-4 * std::max(1.0, std::fabs(fd)));
    }
  }
}

TEST(Simulate, RecordsOutputsAndDissipatesWithoutInput) {
  const auto s = maglev::structure();
  const auto h = maglev::true_hamiltonian();
  VectorXd x0(3);
  x0 << 0.5, 0.1, 0.5;
  numerics::RkConfig rk;
  rk.dt = 1e-3;
  const auto rec = simulate(s, phi1(1.0), h, [](double) { return VectorXd::Zero(1); }, x0, 0.0, 5.0, rk);
  for (Eigen::Index k = 0; k < rec.solution.steps(); k += 97) {
    const VectorXd x = rec.solution.states.row(k).transpose();
    EXPECT_NEAR(rec.outputs(k, 0), (s.eval_g(x, phi1(1.0)).transpose() * h.gradient(x))(0), 1e-10);
  }
  const double range = rec.hamiltonian.maxCoeff() - rec.hamiltonian.minCoeff();
  for (Eigen::Index k = 0; k + 1 < rec.hamiltonian.size(); ++k) {
    ASSERT_LE(rec.hamiltonian[k + 1], rec.hamiltonian[k] + 1e-6 * range);
  }
  EXPECT_EQ(rec.supply.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Simulate, EquilibriumStaysPut) {
  const auto rec = simulate(maglev::structure(), phi1(1.0), maglev::true_hamiltonian(),
                            [](double) { return VectorXd::Zero(1); }, VectorXd::Zero(3), 0.0, 1.0, {});
  EXPECT_EQ(rec.solution.states.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Simulate, RuntimePsdCheckFires) {
  // R(x) = diag(0, x1) turns indefinite once x1 < 0
  const PhsStructure s(2, 0, ExprMatrix::parse({{"0", "1"}, {"-1", "0"}}), ExprMatrix::parse({{"0", "0"}, {"0", "x1"}}),
                       ExprMatrix(2, 0), {});
  VectorXd x0(2);
  x0 << 0.5, 0.0;
  numerics::RkConfig rk;
  rk.dt = 1e-2;
  EXPECT_THROW(simulate(s, VectorXd(), fixtures::quadratic_h(), [](double) { return VectorXd(); }, x0, 0.0, 5.0, rk),
               StructureInvalid);
}

TEST(Passivity, LosslessSystemConservesEnergy) {
  const auto s = oscillator("k", "0", 2.0);
  numerics::RkConfig rk;
  rk.dt = 1e-3;
  VectorXd x0(2);
  x0 << 1.0, 0.5;
  const auto rec = simulate(s, phi1(2.0), spring_h(2.0), [](double) { return VectorXd::Zero(1); }, x0, 0.0, 10.0, rk);
  const auto audit = passivity_audit(rec);
  EXPECT_LT(std::fabs(audit.max_violation), 1e-8);
  EXPECT_LT((rec.hamiltonian.array() - rec.hamiltonian[0]).abs().maxCoeff(), 1e-9);
}

TEST(Passivity, AuditFlagsEnergyInjection) {
  std::vector<double> t{0.0, 1.0, 2.0, 3.0};
  MatrixXd u = MatrixXd::Zero(4, 1);
  VectorXd h(4), supply = VectorXd::Zero(4);
  h << 1.0, 0.9, 1.2, 1.1;
  const auto audit = passivity_audit(t, u, h, supply);
  EXPECT_EQ(audit.worst_step, 1);
  EXPECT_NEAR(audit.max_violation, 0.3, 1e-12);
  EXPECT_NEAR(audit.dissipated[0], 0.1, 1e-12);
}

TEST(Passivity, DrivenMaglevSatisfiesSupplyInequality) {
  numerics::RkConfig rk;
  rk.dt = 1e-3;
  const auto rec = simulate(maglev::structure(), phi1(1.0), maglev::true_hamiltonian(), maglev::training_input(), maglev::default_x0(maglev::Profile::training), 0.0, 20.0, rk);
  const double range = rec.hamiltonian.maxCoeff() - rec.hamiltonian.minCoeff();
  EXPECT_LE(passivity_audit(rec).max_violation, 1e-3 * range);
}

TEST(Interconnect, LosslessOscillatorsConserveTotalEnergy) {
  const PortHamiltonianSystem a{oscillator("k", "0", 1.0), spring_h(1.0)};
  const PortHamiltonianSystem b{oscillator("k", "0", 3.0), spring_h(3.0)};
  const auto c = interconnect(a, b, {{0, 0}});
  const auto& s = c.system.structure;
  EXPECT_EQ(s.state_dim(), 4);
  EXPECT_EQ(s.input_dim(), 0);
  EXPECT_EQ(s.param_names(), (std::vector<std::string>{"k_1", "k_2"}));
  VectorXd phi(2);
  phi << 1.0, 3.0;
  VectorXd x0(4);
  x0 << 1.0, 0.0, -0.5, 0.3;
  numerics::RkConfig rk;
  rk.dt = 1e-3;
  const auto rec = simulate(s, phi, c.system.hamiltonian, [](double) { return VectorXd(); }, x0, 0.0, 10.0, rk);
  EXPECT_LT((rec.hamiltonian.array() - rec.hamiltonian[0]).abs().maxCoeff(), 1e-6 * rec.hamiltonian[0]);
  for (auto& p : random_probe_params(s, 3, 1)) {
    const MatrixXd j = s.eval_j(x0, p);
    EXPECT_LT((j + j.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Interconnect, MatchesHandBuiltComposite) {
  const PortHamiltonianSystem a{oscillator("k", "0.4", 1.0), spring_h(1.0)};
  const PortHamiltonianSystem b{oscillator("m", "0", 2.0), spring_h(2.0)};
  const auto c = interconnect(a, b, {{0, 0}});
  VectorXd phi(2);
  phi << 1.0, 2.0;
  VectorXd x0(4);
  x0 << 0.3, -0.2, 0.8, 0.1;
  numerics::RkConfig rk;
  rk.dt = 1e-3;
  const auto rec = simulate(c.system.structure, phi, c.system.hamiltonian, [](double) { return VectorXd(); }, x0, 0.0,
                            5.0, rk);
  const auto mono = numerics::integrate_rk(
      [](double, const VectorXd& z) {
        const double y1 = z[1], y2 = z[3];
        VectorXd d(4);
        d << z[1], -z[0] - 0.4 * z[1] - y2, z[3], -2.0 * z[2] + y1;
        return d;
      },
      x0, 0.0, 5.0, rk);
  EXPECT_LT((rec.solution.states - mono.states).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Interconnect, ZeroCouplingDecouples) {
  const PortHamiltonianSystem a{oscillator("k", "0.2", 1.0), spring_h(1.0)};
  const PortHamiltonianSystem b{oscillator("m", "0", 2.0), spring_h(2.0)};
  const auto c = interconnect(a, b, {});
  EXPECT_EQ(c.system.structure.input_dim(), 2);
  VectorXd phi(2);
  phi << 1.0, 2.0;
  VectorXd z(4);
  z << 0.1, 0.2, 0.3, 0.4;
  const MatrixXd j = c.system.structure.eval_j(z, phi);
  EXPECT_EQ(j.topRightCorner(2, 2), MatrixXd::Zero(2, 2));
  EXPECT_EQ(j.bottomLeftCorner(2, 2), MatrixXd::Zero(2, 2));

  numerics::RkConfig rk;
  rk.dt = 1e-3;
  const auto rec = simulate(c.system.structure, phi, c.system.hamiltonian, [](double) { return VectorXd::Zero(2); }, z,
                            0.0, 3.0, rk);
  const auto lone = simulate(a.structure, phi1(1.0), a.hamiltonian, [](double) { return VectorXd::Zero(1); }, z.head(2),
                             0.0, 3.0, rk);
  EXPECT_LT((rec.solution.states.leftCols(2) - lone.solution.states).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Interconnect, PortPowerCancels) {
  const PortHamiltonianSystem a{oscillator("k", "0.3", 1.0), spring_h(1.0)};
  const PortHamiltonianSystem b{oscillator("m", "0.1", 2.0), spring_h(2.0)};
  const auto c = interconnect(a, b, {{0, 0}});
  VectorXd phi(2);
  phi << 1.0, 2.0;
  VectorXd x0(4);
  x0 << 1.0, 0.0, 0.0, -1.0;
  numerics::RkConfig rk;
  rk.dt = 1e-3;
  const auto rec = simulate(c.system.structure, phi, c.system.hamiltonian, [](double) { return VectorXd(); }, x0, 0.0,
                            5.0, rk);
  for (Eigen::Index k = 0; k < rec.solution.steps(); k += 50) {
    const VectorXd x = rec.solution.states.row(k).transpose();
    const double y1 = (a.structure.eval_g(x.head(2), phi1(1.0)).transpose() * a.hamiltonian.gradient(x.head(2)))(0);
    const double y2 = (b.structure.eval_g(x.tail(2), phi1(2.0)).transpose() * b.hamiltonian.gradient(x.tail(2)))(0);
    const double u1 = -y2, u2 = y1;
    EXPECT_LE(std::fabs(u1 * y1 + u2 * y2), 1e-10);
  }
}

TEST(Interconnect, RejectsBadPortMaps) {
  const PortHamiltonianSystem a{oscillator("k", "0", 1.0), spring_h(1.0)};
  const PortHamiltonianSystem b{oscillator("m", "0", 2.0), spring_h(2.0)};
  EXPECT_THROW(interconnect(a, b, {{0, 0}, {0, 0}}), PortMismatch);
  EXPECT_THROW(interconnect(a, b, {{1, 0}}), PortMismatch);
  const PortHamiltonianSystem bad{
      PhsStructure(2, 1, ExprMatrix::parse({{"0", "1"}, {"1", "0"}}), ExprMatrix::parse({{"0", "0"}, {"0", "0"}}),
                   ExprMatrix::parse({{"0"}, {"1"}}), {}),
      spring_h(1.0)};
  EXPECT_THROW(interconnect(a, bad, {{0, 0}}), StructureInvalid);
}

TEST(Inputs, PiecewiseConstantLookup) {
  const auto u = maglev::training_input();
  EXPECT_EQ(u(0.0)[0], 2.0);
  EXPECT_EQ(u(2.49)[0], 2.0);
  EXPECT_EQ(u(2.5)[0], -2.0);
  EXPECT_EQ(u(5.0)[0], 2.0);
  EXPECT_EQ(u(19.99)[0], -2.0);
  EXPECT_EQ(u(20.0)[0], -2.0);
  const auto v = maglev::test_input();
  EXPECT_EQ(v(9.999)[0], 2.0);
  EXPECT_EQ(v(10.0)[0], 0.0);
}
