#pragma once

// File formats: model definitions (JSON), trajectories and tables (CSV),
// trained model archives (JSON manifest + little-endian float64 matrices),
// and command-line input signals.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gpphs/dynamics.hpp"
#include "gpphs/errors.hpp"
#include "gpphs/learning.hpp"
#include "gpphs/posterior.hpp"

namespace gpphs::io {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

// -- numbers -----------------------------------------------------------------

/// 17 significant digits, enough to round-trip any double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

// -- CSV ---------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  MatrixXd data;

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Numeric CSV with a header row. Blank lines are skipped.
inline CsvTable parse_csv(const std::string& text, const std::string& file) {
  CsvTable t;
  std::vector<double> values;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  Eigen::Index rows = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    const auto cells = split(line, ',');
    if (t.header.empty()) {
      for (auto c : cells) {
        std::string name(c);
        name.erase(0, name.find_first_not_of(" \t"));
        name.erase(name.find_last_not_of(" \t") + 1);
        t.header.push_back(name);
      }
    } else {
      if (cells.size() != t.header.size()) {
        throw ParseError(file, line_no, 1,
                         file + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                             " columns, found " + std::to_string(cells.size()));
      }
      std::size_t col = 1;
      for (auto c : cells) {
        const auto v = parse_double(c);
        if (!v) {
          throw ParseError(file, line_no, col,
                           file + ":" + std::to_string(line_no) + ":" + std::to_string(col) + ": invalid number '" +
                               std::string(c) + "'");
        }
        values.push_back(*v);
        col += c.size() + 1;
      }
      ++rows;
    }
    if (end == text.size()) break;
  }
  if (t.header.empty()) throw ParseError(file, 1, 1, file + ": missing header row");
  t.data.resize(rows, static_cast<Eigen::Index>(t.header.size()));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < t.data.cols(); ++c) t.data(r, c) = values[static_cast<std::size_t>(r * t.data.cols() + c)];
  }
  return t;
}

inline CsvTable read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

inline std::string format_csv(const std::vector<std::string>& header, const MatrixXd& data) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += '\n';
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      if (c) out += ',';
      out += format_double(data(r, c));
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> numbered(const std::string& prefix, int count) {
  std::vector<std::string> out;
  for (int i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// -- trajectories ------------------------------------------------------------

inline std::string format_trajectory(const learning::Trajectory& traj) {
  std::vector<std::string> header{"t"};
  for (auto& h : numbered("x", static_cast<int>(traj.state_dim()))) header.push_back(h);
  for (auto& h : numbered("u", static_cast<int>(traj.input_dim()))) header.push_back(h);
  MatrixXd data(traj.size(), 1 + traj.state_dim() + traj.input_dim());
  for (Eigen::Index i = 0; i < traj.size(); ++i) data(i, 0) = traj.times()[static_cast<std::size_t>(i)];
  data.middleCols(1, traj.state_dim()) = traj.states();
  data.rightCols(traj.input_dim()) = traj.inputs();
  return format_csv(header, data);
}

inline void write_trajectory(const std::string& path, const learning::Trajectory& traj) {
  write_file(path, format_trajectory(traj));
}

/// Header must be t,x1..xn,u1..um (m may be 0).
inline learning::Trajectory parse_trajectory(const std::string& text, const std::string& file) {
  const CsvTable t = parse_csv(text, file);
  const auto& h = t.header;
  if (h.empty() || h[0] != "t") throw ParseError(file, 1, 1, file + ":1:1: first column must be 't'");
  int n = 0, m = 0;
  std::size_t col = 1;
  while (col < h.size() && h[col] == "x" + std::to_string(n + 1)) ++n, ++col;
  while (col < h.size() && h[col] == "u" + std::to_string(m + 1)) ++m, ++col;
  if (col != h.size() || n == 0) {
    throw ParseError(file, 1, col + 1, file + ":1: header must be t,x1..xn,u1..um; unexpected column '" +
                                           (col < h.size() ? h[col] : std::string("")) + "'");
  }
  std::vector<double> times(static_cast<std::size_t>(t.data.rows()));
  for (Eigen::Index r = 0; r < t.data.rows(); ++r) {
    times[static_cast<std::size_t>(r)] = t.data(r, 0);
    if (r > 0 && !(t.data(r, 0) > t.data(r - 1, 0))) {
      throw ParseError(file, static_cast<std::size_t>(r + 2), 1,
                       file + ":" + std::to_string(r + 2) + ":1: time column must be strictly increasing");
    }
  }
  return learning::Trajectory(std::move(times), t.data.middleCols(1, n), t.data.rightCols(m));
}

inline learning::Trajectory read_trajectory(const std::string& path) {
  return parse_trajectory(read_file(path), path);
}

// -- grid samples ------------------------------------------------------------

inline std::string format_sample(const posterior::HamiltonianGridSample& s) {
  const auto n = s.grid.cols();
  auto header = numbered("x", static_cast<int>(n));
  header.insert(header.end(), {"H_sample", "H_mean", "H_std"});
  MatrixXd data(s.grid.rows(), n + 3);
  data << s.grid, s.values, s.posterior_mean, s.posterior_std;
  return format_csv(header, data);
}

inline posterior::HamiltonianGridSample parse_sample(const std::string& text, const std::string& file) {
  const CsvTable t = parse_csv(text, file);
  const auto k = static_cast<int>(t.header.size());
  if (k < 4 || t.header[static_cast<std::size_t>(k - 3)] != "H_sample" ||
      t.header[static_cast<std::size_t>(k - 2)] != "H_mean" || t.header[static_cast<std::size_t>(k - 1)] != "H_std") {
    throw ParseError(file, 1, 1, file + ":1: header must be x1..xn,H_sample,H_mean,H_std");
  }
  for (int i = 0; i < k - 3; ++i) {
    if (t.header[static_cast<std::size_t>(i)] != "x" + std::to_string(i + 1)) {
      throw ParseError(file, 1, 1, file + ":1: expected column x" + std::to_string(i + 1));
    }
  }
  posterior::HamiltonianGridSample s;
  s.grid = t.data.leftCols(k - 3);
  s.values = t.data.col(k - 3);
  s.posterior_mean = t.data.col(k - 2);
  s.posterior_std = t.data.col(k - 1);
  return s;
}

// -- simulation records ------------------------------------------------------

inline std::string format_simulation(const dynamics::SimulationRecord& rec, const std::vector<char>& escape) {
  const auto n = rec.solution.states.cols();
  const auto m = rec.inputs.cols();
  std::vector<std::string> header{"t"};
  for (auto& h : numbered("x", static_cast<int>(n))) header.push_back(h);
  for (auto& h : numbered("u", static_cast<int>(m))) header.push_back(h);
  header.push_back("H");
  for (auto& h : numbered("y", static_cast<int>(m))) header.push_back(h);
  header.push_back("supply");
  header.push_back("grid_escape");
  const auto steps = rec.solution.steps();
  MatrixXd data(steps, 1 + n + 2 * m + 3);
  for (Eigen::Index k = 0; k < steps; ++k) {
    data(k, 0) = rec.solution.times[static_cast<std::size_t>(k)];
    data(k, 1 + n + m) = rec.hamiltonian[k];
    data(k, 2 + n + 2 * m) = rec.supply[k];
    data(k, 3 + n + 2 * m) = escape.empty() ? 0.0 : static_cast<double>(escape[static_cast<std::size_t>(k)]);
  }
  data.middleCols(1, n) = rec.solution.states;
  data.middleCols(1 + n, m) = rec.inputs;
  data.middleCols(2 + n + m, m) = rec.outputs;
  return format_csv(header, data);
}

struct SimulationTable {
  std::vector<double> times;
  MatrixXd states;
  MatrixXd inputs;
  VectorXd hamiltonian;
  MatrixXd outputs;
  VectorXd supply;
  std::vector<char> grid_escape;
};

inline SimulationTable parse_simulation(const std::string& text, const std::string& file) {
  const CsvTable t = parse_csv(text, file);
  auto need = [&](const std::string& name) {
    const int c = t.column(name);
    if (c < 0) throw ParseError(file, 1, 1, file + ":1: missing column '" + name + "'");
    return c;
  };
  SimulationTable s;
  const int ct = need("t"), ch = need("H"), cs = need("supply");
  int n = 0, m = 0;
  while (t.column("x" + std::to_string(n + 1)) >= 0) ++n;
  while (t.column("u" + std::to_string(m + 1)) >= 0) ++m;
  const auto rows = t.data.rows();
  if (rows < 2) throw ParseError(file, 2, 1, file + ": need at least two rows");
  s.states.resize(rows, n);
  s.inputs.resize(rows, m);
  s.outputs.resize(rows, m);
  for (int i = 0; i < n; ++i) s.states.col(i) = t.data.col(need("x" + std::to_string(i + 1)));
  for (int i = 0; i < m; ++i) {
    s.inputs.col(i) = t.data.col(need("u" + std::to_string(i + 1)));
    s.outputs.col(i) = t.data.col(need("y" + std::to_string(i + 1)));
  }
  s.hamiltonian = t.data.col(ch);
  s.supply = t.data.col(cs);
  const int ce = t.column("grid_escape");
  for (Eigen::Index r = 0; r < rows; ++r) {
    s.times.push_back(t.data(r, ct));
    if (r > 0 && !(s.times.back() > s.times[static_cast<std::size_t>(r - 1)])) {
      throw ParseError(file, static_cast<std::size_t>(r + 2), 1,
                       file + ":" + std::to_string(r + 2) + ": time column must be strictly increasing");
    }
    s.grid_escape.push_back(ce >= 0 && t.data(r, ce) != 0.0 ? 1 : 0);
  }
  return s;
}

// -- input signals -----------------------------------------------------------

/// "t0:v0,t1:v1,..." with "t:v1:v2" for several inputs.
inline dynamics::PiecewiseConstantInput parse_input_spec(std::string_view spec, int m) {
  dynamics::PiecewiseConstantInput u;
  std::size_t offset = 0;
  for (auto item : split(spec, ',')) {
    const auto parts = split(item, ':');
    if (static_cast<int>(parts.size()) != 1 + m) {
      throw ParseError("<input>", 1, offset + 1,
                       "input spec: breakpoint '" + std::string(item) + "' needs a time and " + std::to_string(m) +
                           " value(s) at column " + std::to_string(offset + 1));
    }
    const auto t = parse_double(parts[0]);
    if (!t) throw ParseError("<input>", 1, offset + 1, "input spec: invalid time at column " + std::to_string(offset + 1));
    VectorXd v(m);
    for (int i = 0; i < m; ++i) {
      const auto x = parse_double(parts[static_cast<std::size_t>(i + 1)]);
      if (!x) throw ParseError("<input>", 1, offset + 1, "input spec: invalid value at column " + std::to_string(offset + 1));
      v[i] = *x;
    }
    if (!u.times.empty() && !(*t > u.times.back())) {
      throw ParseError("<input>", 1, offset + 1, "input spec: breakpoint times must increase");
    }
    u.times.push_back(*t);
    u.values.push_back(v);
    offset += item.size() + 1;
  }
  return u;
}

inline std::string format_input_spec(const dynamics::PiecewiseConstantInput& u) {
  std::string out;
  for (std::size_t k = 0; k < u.times.size(); ++k) {
    if (k) out += ',';
    out += format_double(u.times[k]);
    for (Eigen::Index i = 0; i < u.values[k].size(); ++i) out += ":" + format_double(u.values[k][i]);
  }
  return out;
}

// -- model files -------------------------------------------------------------

struct ModelFile {
  dynamics::PhsStructure structure;
  std::optional<double> sigma_f_init;
  std::optional<VectorXd> lambda_init;
  std::optional<VectorXd> noise;
  MatrixXd probe_box;  // n x 2
  dynamics::ValidationReport validation;
};

namespace detail {

inline double bound_from_json(const json& j, double fallback) {
  if (j.is_null()) return fallback;
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw BindError("parameter bound must be a number, null, or \"inf\"/\"-inf\"");
}

inline json bound_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return v;
}

inline std::vector<std::vector<std::string>> matrix_strings(const json& j, const char* name) {
  if (!j.contains(name)) throw BindError(std::string("model file: missing '") + name + "'");
  std::vector<std::vector<std::string>> out;
  for (const auto& row : j.at(name)) {
    std::vector<std::string> r;
    for (const auto& e : row) {
      if (e.is_string()) {
        r.push_back(e.get<std::string>());
      } else if (e.is_number()) {
        r.push_back(format_double(e.get<double>()));
      } else {
        throw BindError(std::string("model file: entries of '") + name + "' must be strings or numbers");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline json parse_json(const std::string& text, const std::string& file) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ParseError(file, line, col, file + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

}  // namespace detail

inline json structure_to_json(const dynamics::PhsStructure& s) {
  json j;
  j["state_dim"] = s.state_dim();
  j["input_dim"] = s.input_dim();
  j["J"] = s.j().to_strings();
  j["R"] = s.r().to_strings();
  j["G"] = s.g().to_strings();
  j["params"] = json::array();
  for (const auto& p : s.params()) {
    j["params"].push_back(
        {{"name", p.name}, {"init", p.init}, {"lower", detail::bound_to_json(p.lower)}, {"upper", detail::bound_to_json(p.upper)}});
  }
  return j;
}

inline dynamics::PhsStructure structure_from_json(const json& j) {
  try {
    const int n = j.at("state_dim").get<int>();
    const int m = j.value("input_dim", 0);
    std::vector<dynamics::ParamSpec> params;
    if (j.contains("params")) {
      for (const auto& p : j.at("params")) {
        dynamics::ParamSpec spec;
        spec.name = p.at("name").get<std::string>();
        spec.init = p.value("init", 0.0);
        spec.lower = detail::bound_from_json(p.value("lower", json()), -std::numeric_limits<double>::infinity());
        spec.upper = detail::bound_from_json(p.value("upper", json()), std::numeric_limits<double>::infinity());
        params.push_back(spec);
      }
    }
    auto g = detail::matrix_strings(j, "G");
    if (m == 0 && g.empty()) g.assign(static_cast<std::size_t>(n), {});
    return dynamics::PhsStructure(n, m, dynamics::ExprMatrix::parse(detail::matrix_strings(j, "J")),
                                  dynamics::ExprMatrix::parse(detail::matrix_strings(j, "R")),
                                  dynamics::ExprMatrix::parse(g), std::move(params));
  } catch (const json::exception& e) {
    throw BindError(std::string("model file: ") + e.what());
  }
}

inline MatrixXd box_from_json(const json& j, int n) {
  MatrixXd box(n, 2);
  box.col(0).setConstant(-1.0);
  box.col(1).setConstant(1.0);
  if (j.is_null()) return box;
  if (!j.is_array() || static_cast<int>(j.size()) != n) throw DimensionMismatch("probe_box needs one [lo, hi] per state");
  for (int i = 0; i < n; ++i) {
    box(i, 0) = j[static_cast<std::size_t>(i)].at(0).get<double>();
    box(i, 1) = j[static_cast<std::size_t>(i)].at(1).get<double>();
  }
  return box;
}

inline json box_to_json(const MatrixXd& box) {
  json j = json::array();
  for (Eigen::Index i = 0; i < box.rows(); ++i) j.push_back({box(i, 0), box(i, 1)});
  return j;
}

/// 50 random probe states; parameters at their initial values plus random samples.
inline dynamics::ValidationReport validate_model(const dynamics::PhsStructure& s, const MatrixXd& box,
                                                 std::uint64_t seed = 1) {
  std::vector<VectorXd> params{s.initial_params()};
  for (auto& p : dynamics::random_probe_params(s, 4, seed)) params.push_back(p);
  return dynamics::validate_structure(s, dynamics::random_probe_states(box, 50, seed), params);
}

inline ModelFile parse_model_file(const std::string& text, const std::string& file) {
  const json j = detail::parse_json(text, file);
  ModelFile mf;
  mf.structure = structure_from_json(j);
  const int n = mf.structure.state_dim();
  try {
    if (j.contains("kernel")) {
      const auto& k = j.at("kernel");
      if (k.contains("sigma_f_init") && !k.at("sigma_f_init").is_null()) mf.sigma_f_init = k.at("sigma_f_init").get<double>();
      if (k.contains("lambda_init") && !k.at("lambda_init").is_null()) {
        const auto v = k.at("lambda_init").get<std::vector<double>>();
        if (static_cast<int>(v.size()) != n) throw DimensionMismatch("kernel.lambda_init needs one entry per state");
        mf.lambda_init = Eigen::Map<const VectorXd>(v.data(), n);
      }
    }
    if (j.contains("noise") && !j.at("noise").is_null()) {
      const auto v = j.at("noise").get<std::vector<double>>();
      if (static_cast<int>(v.size()) != n) throw DimensionMismatch("noise needs one entry per state");
      mf.noise = Eigen::Map<const VectorXd>(v.data(), n);
    }
    mf.probe_box = box_from_json(j.contains("probe_box") ? j.at("probe_box") : json(), n);
  } catch (const json::exception& e) {
    throw BindError(std::string("model file: ") + e.what());
  }
  if (!mf.structure.within_bounds(mf.structure.initial_params())) {
    throw StructureInvalid("params", "initial parameter values outside declared bounds");
  }
  mf.validation = validate_model(mf.structure, mf.probe_box);
  return mf;
}

inline ModelFile read_model_file(const std::string& path) { return parse_model_file(read_file(path), path); }

inline json model_file_json(const ModelFile& mf) {
  json j = structure_to_json(mf.structure);
  json k = json::object();
  if (mf.sigma_f_init) k["sigma_f_init"] = *mf.sigma_f_init;
  if (mf.lambda_init) k["lambda_init"] = std::vector<double>(mf.lambda_init->data(), mf.lambda_init->data() + mf.lambda_init->size());
  j["kernel"] = k;
  if (mf.noise) j["noise"] = std::vector<double>(mf.noise->data(), mf.noise->data() + mf.noise->size());
  j["probe_box"] = box_to_json(mf.probe_box);
  return j;
}

// -- model archives ----------------------------------------------------------

inline constexpr char archive_magic[8] = {'G', 'P', 'P', 'H', 'S', 'A', 'R', 'C'};
inline constexpr int archive_format = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos, const std::string& file) {
  if (pos + 8 > in.size()) throw ParseError(file, 0, 0, file + ": archive truncated at byte " + std::to_string(pos));
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

inline std::vector<double> to_vector(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

/// Layout: magic, u64 format, u64 manifest length, manifest JSON, then every
/// matrix listed in manifest["matrices"] as row-major little-endian float64.
inline std::string format_archive(const learning::GpPhsModel& m) {
  json man;
  man["format"] = archive_format;
  man["structure"] = structure_to_json(m.structure);
  man["hyper"] = {{"sigma_f", m.hyper.sigma_f()}, {"lambda", detail::to_vector(m.hyper.lambda())}};
  man["phi"] = json::object();
  for (int k = 0; k < m.structure.param_count(); ++k) man["phi"][m.structure.param_names()[static_cast<std::size_t>(k)]] = m.phi[k];
  man["phi_vector"] = detail::to_vector(m.phi);
  man["noise_sigmas"] = detail::to_vector(m.noise_sigmas);
  man["time_gp"] = json::array();
  for (const auto& h : m.time_gp) man["time_gp"].push_back({{"sigma_f", h.sigma_f}, {"ell", h.ell}, {"sigma_n", h.sigma_n}});
  man["nlml_initial"] = m.nlml_initial;
  man["nlml_final"] = m.nlml_final;
  man["evals"] = m.evals;
  man["budget_exhausted"] = m.budget_exhausted;
  man["jitter"] = m.kphs_factorization.jitter_used;

  const std::vector<std::pair<std::string, const MatrixXd*>> mats{{"states", &m.training.states},
                                                                   {"derivs", &m.training.derivs},
                                                                   {"deriv_vars", &m.training.deriv_vars},
                                                                   {"inputs", &m.training.inputs}};
  man["matrices"] = json::array();
  for (const auto& [name, mat] : mats) man["matrices"].push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}});

  const std::string text = man.dump(2);
  std::string out(archive_magic, archive_magic + 8);
  detail::put_u64(out, archive_format);
  detail::put_u64(out, text.size());
  out += text;
  for (const auto& [name, mat] : mats) {
    for (Eigen::Index r = 0; r < mat->rows(); ++r) {
      for (Eigen::Index c = 0; c < mat->cols(); ++c) detail::put_u64(out, std::bit_cast<std::uint64_t>((*mat)(r, c)));
    }
  }
  return out;
}

inline void write_archive(const std::string& path, const learning::GpPhsModel& m) { write_file(path, format_archive(m)); }

inline learning::GpPhsModel parse_archive(const std::string& bytes, const std::string& file) {
  if (bytes.size() < 24 || !std::equal(archive_magic, archive_magic + 8, bytes.begin())) {
    throw ParseError(file, 0, 0, file + ": not a model archive");
  }
  std::size_t pos = 8;
  const auto format = detail::get_u64(bytes, pos, file);
  if (format != archive_format) throw ParseError(file, 0, 0, file + ": unsupported archive format " + std::to_string(format));
  const auto len = detail::get_u64(bytes, pos, file);
  if (pos + len > bytes.size()) throw ParseError(file, 0, 0, file + ": archive manifest truncated");
  const json man = detail::parse_json(bytes.substr(pos, len), file);
  pos += len;
  try {
    auto s = structure_from_json(man.at("structure"));
    const auto lam = man.at("hyper").at("lambda").get<std::vector<double>>();
    const kernels::SeHyperparams hyper(man.at("hyper").at("sigma_f").get<double>(),
                                       Eigen::Map<const VectorXd>(lam.data(), static_cast<Eigen::Index>(lam.size())));
    const auto phi_v = man.at("phi_vector").get<std::vector<double>>();
    VectorXd phi = Eigen::Map<const VectorXd>(phi_v.data(), static_cast<Eigen::Index>(phi_v.size()));
    std::map<std::string, MatrixXd> mats;
    for (const auto& d : man.at("matrices")) {
      const auto rows = d.at("rows").get<Eigen::Index>();
      const auto cols = d.at("cols").get<Eigen::Index>();
      MatrixXd mat(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) mat(r, c) = std::bit_cast<double>(detail::get_u64(bytes, pos, file));
      }
      mats[d.at("name").get<std::string>()] = std::move(mat);
    }
    learning::DerivativeDataset ds;
    ds.states = mats.at("states");
    ds.derivs = mats.at("derivs");
    ds.deriv_vars = mats.at("deriv_vars");
    ds.inputs = mats.at("inputs");
    auto m = learning::finalize_model(std::move(s), hyper, std::move(phi), std::move(ds));
    const auto ns = man.at("noise_sigmas").get<std::vector<double>>();
    m.noise_sigmas = Eigen::Map<const VectorXd>(ns.data(), static_cast<Eigen::Index>(ns.size()));
    for (const auto& h : man.at("time_gp")) {
      m.time_gp.push_back({h.at("sigma_f").get<double>(), h.at("ell").get<double>(), h.at("sigma_n").get<double>()});
    }
    m.nlml_initial = man.at("nlml_initial").get<double>();
    m.evals = man.at("evals").get<int>();
    m.budget_exhausted = man.at("budget_exhausted").get<bool>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(file, 0, 0, file + ": malformed archive manifest: " + e.what());
  } catch (const std::out_of_range&) {
    throw ParseError(file, 0, 0, file + ": archive is missing a matrix");
  }
}

inline learning::GpPhsModel read_archive(const std::string& path) { return parse_archive(read_file(path), path); }

}  // namespace gpphs::io
