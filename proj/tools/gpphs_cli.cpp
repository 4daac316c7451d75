// gpphs: learn, sample, simulate and audit Gaussian-process Port-Hamiltonian models.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gpphs/gpphs.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;
using namespace gpphs;

enum Exit { ok = 0, verification_failed = 1, input_error = 2, numerical_error = 3 };

VectorXd parse_vector(const std::string& text, const char* what) {
  std::vector<double> v;
  for (auto part : io::split(text, ',')) {
    const auto x = io::parse_double(part);
    if (!x) throw ParseError("<" + std::string(what) + ">", 1, 1, std::string(what) + ": invalid number '" + std::string(part) + "'");
    v.push_back(*x);
  }
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// "lo:hi,lo:hi,..." -> n x 2
MatrixXd parse_box(const std::string& text) {
  const auto items = io::split(text, ',');
  MatrixXd box(static_cast<Eigen::Index>(items.size()), 2);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto lh = io::split(items[i], ':');
    const auto lo = lh.size() == 2 ? io::parse_double(lh[0]) : std::nullopt;
    const auto hi = lh.size() == 2 ? io::parse_double(lh[1]) : std::nullopt;
    if (!lo || !hi || !(*lo <= *hi)) {
      throw ParseError("<box>", 1, 1, "box: axis " + std::to_string(i + 1) + " must be 'lo:hi' with lo <= hi");
    }
    box(static_cast<Eigen::Index>(i), 0) = *lo;
    box(static_cast<Eigen::Index>(i), 1) = *hi;
  }
  return box;
}

std::vector<int> parse_counts(const std::string& text) {
  std::vector<int> out;
  for (auto part : io::split(text, ',')) {
    const auto x = io::parse_double(part);
    if (!x || *x < 1 || *x != static_cast<int>(*x)) throw ParseError("<counts>", 1, 1, "counts: positive integers expected");
    out.push_back(static_cast<int>(*x));
  }
  return out;
}

void print_error(const std::exception& e) {
  json j;
  j["message"] = e.what();
  if (const auto* g = dynamic_cast<const Error*>(&e)) {
    j["error"] = g->kind();
    if (const auto* p = dynamic_cast<const ParseError*>(&e)) {
      j["file"] = p->file();
      j["line"] = p->line();
      j["column"] = p->column();
    }
    if (const auto* s = dynamic_cast<const SyntaxError*>(&e)) {
      j["offset"] = s->offset();
      j["expected"] = s->expected();
    }
    if (const auto* v = dynamic_cast<const EvalError*>(&e)) j["offset"] = v->offset();
    if (const auto* s = dynamic_cast<const StructureInvalid*>(&e)) j["condition"] = s->condition();
    if (const auto* s = dynamic_cast<const NonFiniteState*>(&e)) j["t"] = s->time();
  } else {
    j["error"] = "InternalError";
  }
  std::cerr << j.dump() << '\n';
}

int exit_code(const std::exception& e) {
  if (const auto* g = dynamic_cast<const Error*>(&e)) {
    return g->error_class() == ErrorClass::numerical ? numerical_error : input_error;
  }
  if (dynamic_cast<const std::invalid_argument*>(&e)) return input_error;
  return numerical_error;
}

// -- generate-maglev ---------------------------------------------------------

struct GenerateArgs {
  std::string out;
  std::string model_out;
  double noise_sigma = 0.01;
  double dt_sample = 0.05;
  double t_end = 20.0;
  std::string x0;
  std::uint64_t seed = 0;
  std::string input = "training";
};

int run_generate(const GenerateArgs& a) {
  maglev::GenerateConfig cfg;
  cfg.profile = a.input == "test" ? maglev::Profile::test : maglev::Profile::training;
  cfg.noise_sigma = a.noise_sigma;
  cfg.dt_sample = a.dt_sample;
  cfg.t_end = a.t_end;
  cfg.seed = a.seed;
  if (!a.x0.empty()) {
    cfg.x0 = parse_vector(a.x0, "x0");
    if (cfg.x0.size() != 3) throw DimensionMismatch("x0 needs 3 entries");
  }
  if (!(a.dt_sample > 0.0) || !(a.t_end > 0.0) || !(a.noise_sigma >= 0.0)) {
    throw std::invalid_argument("dt-sample and t-end must be positive, noise-sigma non-negative");
  }
  const auto traj = maglev::generate(cfg);
  io::write_trajectory(a.out, traj);
  if (!a.model_out.empty()) {
    io::ModelFile mf;
    mf.structure = maglev::structure();
    mf.probe_box = maglev::probe_box();
    io::write_file(a.model_out, io::model_file_json(mf).dump(2) + "\n");
  }
  std::cout << "wrote " << traj.size() << " samples to " << a.out << '\n';
  return ok;
}

// -- train -------------------------------------------------------------------

struct TrainArgs {
  std::string model;
  std::vector<std::string> data;
  std::string out;
  int restarts = 4;
  int max_evals = 1500;
  std::uint64_t seed = 0;
  bool no_split = false;
};

int run_train(const TrainArgs& a) {
  const auto mf = io::read_model_file(a.model);
  std::vector<learning::Trajectory> trajs;
  for (const auto& path : a.data) trajs.push_back(io::read_trajectory(path));
  learning::TrainConfig cfg;
  cfg.restarts = a.restarts;
  cfg.max_evals = a.max_evals;
  cfg.seed = a.seed;
  cfg.split_at_input_changes = !a.no_split;
  cfg.sigma_f_init = mf.sigma_f_init;
  cfg.lambda_init = mf.lambda_init;
  const auto model = learning::train(trajs, mf.structure, cfg);
  io::write_archive(a.out, model);

  std::printf("%-16s %s\n", "quantity", "value");
  for (int k = 0; k < model.structure.param_count(); ++k) {
    std::printf("%-16s %.10g\n", ("phi." + model.structure.param_names()[static_cast<std::size_t>(k)]).c_str(), model.phi[k]);
  }
  std::printf("%-16s %.10g\n", "sigma_f", model.hyper.sigma_f());
  for (Eigen::Index i = 0; i < model.hyper.dim(); ++i) {
    std::printf("%-16s %.10g\n", ("lambda." + std::to_string(i + 1)).c_str(), model.hyper.lambda()[i]);
  }
  std::printf("%-16s %.10g\n", "nlml.initial", model.nlml_initial);
  std::printf("%-16s %.10g\n", "nlml.final", model.nlml_final);
  std::printf("%-16s %d%s\n", "evals", model.evals, model.budget_exhausted ? " (budget exhausted)" : "");
  return ok;
}

// -- sample ------------------------------------------------------------------

struct SampleArgs {
  std::string model;
  std::string box;
  std::string counts;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
};

int run_sample(const SampleArgs& a) {
  const auto model = io::read_archive(a.model);
  const MatrixXd box = parse_box(a.box);
  if (box.rows() != model.state_dim()) throw DimensionMismatch("box needs one range per state");
  const auto grid = posterior::lattice(box, parse_counts(a.counts));
  const posterior::HamiltonianPosterior post(model, grid);
  std::filesystem::create_directories(a.out_dir);
  for (auto seed : a.seeds) {
    const auto path = (std::filesystem::path(a.out_dir) / ("sample_seed" + std::to_string(seed) + ".csv")).string();
    io::write_file(path, io::format_sample(post.draw(seed)));
    std::cout << "wrote " << path << " (" << grid.rows() << " points)\n";
  }
  return ok;
}

// -- simulate ----------------------------------------------------------------

struct SimulateArgs {
  std::string model;
  std::string sample;
  std::string x0;
  std::string input;
  double t_end = 20.0;
  double dt = 1e-3;
  double shape_scale = 2.0;
  long stride = 10;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  const auto model = io::read_archive(a.model);
  auto sample = io::parse_sample(io::read_file(a.sample), a.sample);
  if (sample.grid.cols() != model.state_dim()) throw DimensionMismatch("sample grid does not match model dimension");
  const VectorXd x0 = parse_vector(a.x0, "x0");
  if (x0.size() != model.state_dim()) throw DimensionMismatch("x0 has wrong dimension");
  const int m = model.input_dim();
  dynamics::PiecewiseConstantInput u =
      a.input.empty() ? dynamics::PiecewiseConstantInput::constant(VectorXd::Zero(m)) : io::parse_input_spec(a.input, m);
  numerics::RkConfig rk;
  rk.dt = a.dt;
  if (!(a.dt > 0.0) || !(a.t_end > 0.0) || a.stride < 1) throw std::invalid_argument("dt, t-end and stride must be positive");
  auto sim = posterior::simulate_sample(model, std::move(sample), x0, u, 0.0, a.t_end, rk, {a.shape_scale});

  // thin the stored steps; the last step is always kept
  auto& rec = sim.record;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < rec.solution.steps(); k += a.stride) keep.push_back(k);
  if (keep.back() != rec.solution.steps() - 1) keep.push_back(rec.solution.steps() - 1);
  dynamics::SimulationRecord thin;
  thin.solution.states.resize(static_cast<Eigen::Index>(keep.size()), rec.solution.states.cols());
  thin.inputs.resize(thin.solution.states.rows(), rec.inputs.cols());
  thin.outputs.resize(thin.solution.states.rows(), rec.outputs.cols());
  thin.hamiltonian.resize(thin.solution.states.rows());
  thin.supply.resize(thin.solution.states.rows());
  std::vector<char> escape;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto k = keep[i];
    const auto r = static_cast<Eigen::Index>(i);
    thin.solution.times.push_back(rec.solution.times[static_cast<std::size_t>(k)]);
    thin.solution.states.row(r) = rec.solution.states.row(k);
    thin.inputs.row(r) = rec.inputs.row(k);
    thin.outputs.row(r) = rec.outputs.row(k);
    thin.hamiltonian[r] = rec.hamiltonian[k];
    thin.supply[r] = rec.supply[k];
    escape.push_back(sim.grid_escape[static_cast<std::size_t>(k)]);
  }
  io::write_file(a.out, io::format_simulation(thin, escape));
  if (sim.escaped) {
    std::cerr << json{{"warning", "GridEscape"}, {"message", "trajectory left the sample grid's bounding box"}}.dump() << '\n';
  }
  std::cout << "wrote " << keep.size() << " rows to " << a.out << '\n';
  return ok;
}

// -- verify ------------------------------------------------------------------

struct VerifyArgs {
  std::string sim;
  std::string model;
  double tolerance = 1e-3;
};

int run_verify(const VerifyArgs& a) {
  if (!a.model.empty()) (void)io::read_archive(a.model);
  const auto t = io::parse_simulation(io::read_file(a.sim), a.sim);
  const auto audit = dynamics::passivity_audit(t.times, t.inputs, t.hamiltonian, t.supply);
  const double range = t.hamiltonian.maxCoeff() - t.hamiltonian.minCoeff();
  const double tol = a.tolerance * range;
  // the audit compares rates; a step passes when its energy excess is within tol
  double worst_excess = 0.0;
  long worst = -1;
  for (Eigen::Index k = 0; k < audit.dissipated.size(); ++k) {
    const double dt = t.times[static_cast<std::size_t>(k + 1)] - t.times[static_cast<std::size_t>(k)];
    const double excess = -audit.dissipated[k] * dt;
    if (excess > worst_excess || worst < 0) {
      worst_excess = excess;
      worst = static_cast<long>(k);
    }
  }
  const bool pass = worst_excess <= tol;
  json report{{"max_violation", audit.max_violation},
              {"max_energy_excess", worst_excess},
              {"tolerance", tol},
              {"h_range", range},
              {"pass", pass}};
  if (worst >= 0) {
    report["worst_step"] = worst;
    report["worst_time"] = t.times[static_cast<std::size_t>(worst)];
  }
  std::cout << report.dump(2) << '\n';
  return pass ? ok : verification_failed;
}

// -- compose -----------------------------------------------------------------

struct ComposeArgs {
  std::string a, b, ports, out;
};

int run_compose(const ComposeArgs& c) {
  const auto ma = io::read_model_file(c.a);
  const auto mb = io::read_model_file(c.b);
  std::vector<dynamics::PortPair> ports;
  if (!c.ports.empty()) {
    for (auto item : io::split(c.ports, ',')) {
      const auto ij = io::split(item, ':');
      const auto i = ij.size() == 2 ? io::parse_double(ij[0]) : std::nullopt;
      const auto j = ij.size() == 2 ? io::parse_double(ij[1]) : std::nullopt;
      if (!i || !j) throw ParseError("<ports>", 1, 1, "ports: expected 'i:j' pairs of 1-based input indices");
      ports.push_back({static_cast<int>(*i) - 1, static_cast<int>(*j) - 1});
    }
  }
  dynamics::ProbeSettings probes;
  probes.box1 = ma.probe_box;
  probes.box2 = mb.probe_box;
  const auto composed = dynamics::interconnect({ma.structure, {}}, {mb.structure, {}}, ports, probes);
  io::ModelFile out;
  out.structure = composed.system.structure;
  out.probe_box.resize(composed.n1 + composed.n2, 2);
  out.probe_box << ma.probe_box, mb.probe_box;
  out.validation = io::validate_model(out.structure, out.probe_box);
  json j = io::model_file_json(out);
  j["validation"] = {{"max_skew_defect", out.validation.max_skew_defect},
                     {"max_symmetry_defect", out.validation.max_symmetry_defect},
                     {"min_r_eigenvalue", out.validation.min_r_eigenvalue},
                     {"probes", out.validation.probes}};
  io::write_file(c.out, j.dump(2) + "\n");
  std::cout << "wrote composed " << out.structure.state_dim() << "-state model to " << c.out << '\n';
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn Port-Hamiltonian systems with Gaussian processes"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-maglev", "Write a maglev benchmark trajectory CSV");
  g->add_option("--out", gen.out, "Output CSV")->required();
  g->add_option("--model-out", gen.model_out, "Also write the benchmark model file (JSON)");
  g->add_option("--noise-sigma", gen.noise_sigma, "Measurement noise std")->capture_default_str();
  g->add_option("--dt-sample", gen.dt_sample, "Sampling interval")->capture_default_str();
  g->add_option("--t-end", gen.t_end, "End time")->capture_default_str();
  g->add_option("--x0", gen.x0, "Initial state 'a,b,c' (default per profile)");
  g->add_option("--seed", gen.seed, "Noise seed")->required();
  g->add_option("--input", gen.input, "Input profile")->check(CLI::IsMember({"training", "test"}))->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fit a GP-PHS model and write a model archive");
  t->add_option("--model", tr.model, "Model file (JSON)")->required();
  t->add_option("--data", tr.data, "Trajectory CSV (repeatable)")->required();
  t->add_option("--out", tr.out, "Output archive")->required();
  t->add_option("--restarts", tr.restarts, "Extra optimizer starts")->capture_default_str();
  t->add_option("--max-evals", tr.max_evals, "Objective evaluations per start")->capture_default_str();
  t->add_option("--seed", tr.seed, "Optimizer seed")->required();
  t->add_flag("--no-input-split", tr.no_split, "Fit derivative GPs over whole trajectories, not per constant-input piece");

  SampleArgs sa;
  auto* s = app.add_subcommand("sample", "Draw Hamiltonian realizations on a grid");
  s->add_option("--model", sa.model, "Model archive")->required();
  s->add_option("--box", sa.box, "Grid box 'lo:hi,lo:hi,...'")->required();
  s->add_option("--counts", sa.counts, "Grid points per axis 'n1,n2,...'")->required();
  s->add_option("--seed", sa.seeds, "Sample seed (repeatable)")->required();
  s->add_option("--out-dir", sa.out_dir, "Output directory")->required();

  SimulateArgs si;
  auto* m = app.add_subcommand("simulate", "Simulate one sampled Hamiltonian");
  m->add_option("--model", si.model, "Model archive")->required();
  m->add_option("--sample", si.sample, "Sample CSV from 'sample'")->required();
  m->add_option("--x0", si.x0, "Initial state 'a,b,...'")->required();
  m->add_option("--input", si.input, "Piecewise-constant input 't0:v0,t1:v1,...' (default 0)");
  m->add_option("--t-end", si.t_end, "End time")->capture_default_str();
  m->add_option("--dt", si.dt, "RK4 step")->capture_default_str();
  m->add_option("--shape-scale", si.shape_scale, "RBF width in median node spacings")->capture_default_str();
  m->add_option("--stride", si.stride, "Write every k-th step")->capture_default_str();
  m->add_option("--out", si.out, "Output CSV")->required();

  VerifyArgs ve;
  auto* v = app.add_subcommand("verify", "Audit a simulation CSV for passivity");
  v->add_option("--sim", ve.sim, "Simulation CSV")->required();
  v->add_option("--model", ve.model, "Model archive (optional, checked for readability)");
  v->add_option("--tolerance", ve.tolerance, "Allowed energy excess per step, relative to range(H)")->capture_default_str();

  ComposeArgs co;
  auto* c = app.add_subcommand("compose", "Interconnect two model files");
  c->add_option("--a", co.a, "First model file")->required();
  c->add_option("--b", co.b, "Second model file")->required();
  c->add_option("--ports", co.ports, "Port pairs 'i:j,...' (1-based inputs of a and b)");
  c->add_option("--out", co.out, "Output model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "UsageError"}, {"message", e.what()}}.dump() << '\n';
    return input_error;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*s) return run_sample(sa);
    if (*m) return run_simulate(si);
    if (*v) return run_verify(ve);
    if (*c) return run_compose(co);
  } catch (const std::exception& e) {
    print_error(e);
    return exit_code(e);
  }
  return ok;
}
