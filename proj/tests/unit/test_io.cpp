#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "gpphs/io.hpp"
#include "gpphs/maglev.hpp"

using namespace gpphs;
using namespace gpphs::io;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const char* maglev_model_json = R"json({
  "state_dim": 3,
  "input_dim": 1,
  "J": [["0", "1", "0"], ["-1", "0", "0"], ["0", "0", "0"]],
  "R": [["0", "0", "0"], ["0", "c*abs(x2)", "0"], ["0", "0", 10]],
  "G": [["0"], ["0"], ["1"]],
  "params": [{"name": "c", "init": 0.5, "lower": 0, "upper": "inf"}],
  "probe_box": [[-0.5, 2], [-0.2, 0.2], [-3, 5]]
})json";

}  // namespace

TEST(Csv, TrajectoryRoundTripIsExact) {
  maglev::GenerateConfig cfg;
  cfg.seed = 5;
  cfg.t_end = 2.0;
  const auto traj = maglev::generate(cfg);
  const std::string text = format_trajectory(traj);
  const auto back = parse_trajectory(text, "mem.csv");
  EXPECT_EQ(back.times(), traj.times());
  EXPECT_EQ(back.states(), traj.states());
  EXPECT_EQ(back.inputs(), traj.inputs());
  EXPECT_EQ(format_trajectory(back), text);
}

TEST(Csv, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) EXPECT_EQ(*parse_double(format_double(v)), v);
  EXPECT_FALSE(parse_double("1.5x").has_value());
  EXPECT_FALSE(parse_double("").has_value());
}

TEST(Csv, MalformedCellReportsLineAndColumn) {
  try {
    parse_csv("t,x1\n0,1\n1,abc\n", "bad.csv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.file(), "bad.csv");
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.column(), 3u);
    EXPECT_NE(std::string(e.what()).find("bad.csv:3:3"), std::string::npos);
  }
  try {
    parse_csv("t,x1\n0,1,2\n", "short.csv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Csv, TrajectoryHeaderAndOrderingErrors) {
  EXPECT_THROW(parse_trajectory("time,x1\n0,1\n1,2\n", "f"), ParseError);
  EXPECT_THROW(parse_trajectory("t,x2\n0,1\n1,2\n", "f"), ParseError);
  EXPECT_THROW(parse_trajectory("t,x1,u1,x2\n0,1,0,0\n1,2,0,0\n", "f"), ParseError);
  EXPECT_THROW(parse_trajectory("t,x1\n0,1\n0,2\n", "f"), ParseError);
  EXPECT_THROW(parse_trajectory("t,x1\n0,1\n", "f"), DegenerateData);
  const auto ok = parse_trajectory("t,x1\r\n0,1\r\n\r\n1,2\r\n", "f");
  EXPECT_EQ(ok.size(), 2);
  EXPECT_EQ(ok.input_dim(), 0);
}

TEST(InputSpec, ParsesAndFormats) {
  const auto u = parse_input_spec("0:2,10:0", 1);
  EXPECT_EQ(u(5.0)[0], 2.0);
  EXPECT_EQ(u(10.0)[0], 0.0);
  EXPECT_EQ(format_input_spec(u), "0:2,10:0");
  EXPECT_EQ(parse_input_spec("0:1:2", 2)(0.0)[1], 2.0);
  EXPECT_THROW(parse_input_spec("0:1,x:2", 1), ParseError);
  EXPECT_THROW(parse_input_spec("0:1:2", 1), ParseError);
  EXPECT_THROW(parse_input_spec("1:0,0:1", 1), ParseError);
}

TEST(ModelFile, ParsesMaglevDeclaration) {
  const auto mf = parse_model_file(maglev_model_json, "maglev.json");
  EXPECT_EQ(mf.structure.state_dim(), 3);
  EXPECT_EQ(mf.structure.input_dim(), 1);
  EXPECT_EQ(mf.structure.param_names(), std::vector<std::string>{"c"});
  EXPECT_TRUE(std::isinf(mf.structure.params()[0].upper));
  EXPECT_EQ(mf.probe_box(2, 1), 5.0);
  EXPECT_GE(mf.validation.min_r_eigenvalue, 0.0);
  EXPECT_GT(mf.validation.probes, 0);
  const auto again = parse_model_file(model_file_json(mf).dump(), "again.json");
  EXPECT_EQ(structure_to_json(again.structure), structure_to_json(mf.structure));
}

TEST(ModelFile, RejectsInvalidStructures) {
  std::string skew = maglev_model_json;
  skew.replace(skew.find("\"-1\""), 4, "\"-2\"");
  try {
    parse_model_file(skew, "skew.json");
    FAIL() << "expected StructureInvalid";
  } catch (const StructureInvalid& e) {
    EXPECT_EQ(e.condition(), "skew");
  }
  std::string negative = maglev_model_json;
  negative.replace(negative.find("10]"), 2, "-10");
  EXPECT_THROW(parse_model_file(negative, "psd.json"), StructureInvalid);
  std::string unbound = maglev_model_json;
  unbound.replace(unbound.find("c*abs"), 1, "k");
  EXPECT_THROW(parse_model_file(unbound, "unbound.json"), BindError);
  std::string out_of_bounds = maglev_model_json;
  out_of_bounds.replace(out_of_bounds.find("\"init\": 0.5"), 11, "\"init\": -1");
  EXPECT_THROW(parse_model_file(out_of_bounds, "bounds.json"), StructureInvalid);
}

TEST(ModelFile, MalformedJsonReportsPosition) {
  try {
    parse_model_file("{\n  \"state_dim\": 3,\n  oops\n}", "broken.json");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_GE(e.column(), 3u);
  }
  EXPECT_THROW(parse_model_file(R"({"state_dim": 1, "J": [["0"]]})", "missing.json"), BindError);
  EXPECT_THROW(parse_model_file(R"({"state_dim": 2, "J": [["0"]], "R": [["0"]], "G": []})", "dims.json"),
               DimensionMismatch);
}

TEST(Archive, RoundTripIsByteIdentical) {
  learning::TrainConfig cfg;
  cfg.restarts = 0;
  cfg.max_evals = 150;
  const auto m = learning::train({fixtures::mass_spring_data(0.5, 31, 6.0, 0.01, 2)}, fixtures::mass_spring(), cfg);
  const std::string bytes = format_archive(m);
  const auto back = parse_archive(bytes, "mem.gpphs");
  EXPECT_EQ(format_archive(back), bytes);
  EXPECT_EQ(back.alpha, m.alpha);
  EXPECT_EQ(back.phi, m.phi);
  EXPECT_EQ(back.nlml_final, m.nlml_final);

  const auto path = std::filesystem::temp_directory_path() / "gpphs_io_test.gpphs";
  write_archive(path.string(), m);
  EXPECT_EQ(read_file(path.string()), bytes);
  std::filesystem::remove(path);

  EXPECT_THROW(parse_archive("not an archive at all....", "x"), ParseError);
  EXPECT_THROW(parse_archive(bytes.substr(0, bytes.size() - 8), "x"), ParseError);
  EXPECT_THROW(read_archive("/nonexistent/dir/model.gpphs"), IoError);
}

TEST(SampleCsv, RoundTrip) {
  posterior::HamiltonianGridSample s;
  s.grid = MatrixXd::Random(5, 2);
  s.values = VectorXd::Random(5);
  s.posterior_mean = VectorXd::Random(5);
  s.posterior_std = VectorXd::Random(5).cwiseAbs();
  const auto back = parse_sample(format_sample(s), "s.csv");
  EXPECT_EQ(back.grid, s.grid);
  EXPECT_EQ(back.values, s.values);
  EXPECT_EQ(back.posterior_std, s.posterior_std);
  EXPECT_THROW(parse_sample("x1,H\n0,1\n", "s.csv"), ParseError);
}

TEST(SimulationCsv, RoundTrip) {
  const auto s = maglev::structure();
  VectorXd x0(3);
  x0 << 0.5, 0.1, 0.5;
  numerics::RkConfig rk;
  rk.dt = 1e-2;
  const auto rec = dynamics::simulate(s, s.initial_params(), maglev::true_hamiltonian(), maglev::test_input(), x0,
                                      0.0, 1.0, rk);
  std::vector<char> esc(static_cast<std::size_t>(rec.solution.steps()), 0);
  esc[3] = 1;
  const auto table = parse_simulation(format_simulation(rec, esc), "sim.csv");
  EXPECT_EQ(table.times, rec.solution.times);
  EXPECT_EQ(table.states, rec.solution.states);
  EXPECT_EQ(table.inputs, rec.inputs);
  EXPECT_EQ(table.hamiltonian, rec.hamiltonian);
  EXPECT_EQ(table.outputs, rec.outputs);
  EXPECT_EQ(table.supply, rec.supply);
  EXPECT_EQ(table.grid_escape, esc);
  EXPECT_THROW(parse_simulation("t,x1\n0,1\n1,2\n", "sim.csv"), ParseError);
}
