#pragma once

// Run configuration, artifact files and the `toda` command line.
//
//   toda mesh      --genus 2 --subdivision 1 --out m.itri
//   toda spectrum  --mesh m.itri --spin-class scan --out-dir spec/
//   toda solve     --mesh m.itri --spin-class 1 --rho 0.5x-lambda1 --out-dir run/
//   toda sweep     --config sweep.json
//   toda verify    --mesh m.itri --state run/state.csv

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "supertoda/error.hpp"
#include "supertoda/hypmesh.hpp"
#include "supertoda/saddle.hpp"
#include "supertoda/spinops.hpp"
#include "supertoda/variational.hpp"

#ifndef SUPERTODA_VERSION
#define SUPERTODA_VERSION "0.0.0"
#endif

namespace supertoda::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Eigen::VectorXd;

inline constexpr const char* kVersion = SUPERTODA_VERSION;

// ---------------------------------------------------------------------------
// rho values: absolute ("0.3", 0.3) or relative to the k-th positive
// eigenvalue ("0.5x-lambda1").

struct RhoValue {
  double value = 0.0;
  int lambda_index = 0;  // 0 for absolute values

  double resolve(const spinops::DiracSpectrum& spec) const {
    return lambda_index == 0 ? value : value * spec.lambda_positive(lambda_index);
  }
  std::string str() const {
    std::ostringstream os;
    os << std::setprecision(17) << value;
    if (lambda_index > 0) os << "x-lambda" << lambda_index;
    return os.str();
  }
};

inline RhoValue parse_rho(const std::string& text) {
  RhoValue r;
  const auto pos = text.find("x-lambda");
  std::string num = text, idx;
  if (pos != std::string::npos) {
    num = text.substr(0, pos);
    idx = text.substr(pos + 8);
  }
  std::size_t used = 0;
  try {
    r.value = std::stod(num, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != num.size()) fail_usage("rho: cannot parse '" + text + "'");
  if (pos != std::string::npos) {
    if (idx.empty() || !std::all_of(idx.begin(), idx.end(), [](char c) { return std::isdigit(c); }))
      fail_usage("rho: bad eigenvalue index in '" + text + "'");
    r.lambda_index = std::stoi(idx);
    if (r.lambda_index < 1) fail_usage("rho: eigenvalue index must be at least 1 in '" + text + "'");
  }
  if (!(r.value > 0.0)) fail_usage("rho: must be positive, got '" + text + "'");
  return r;
}

// ---------------------------------------------------------------------------
// Configuration.

struct MeshSource {
  std::optional<std::string> path;
  int genus = 2;
  int subdivision = 0;
};

struct RunConfig {
  MeshSource mesh;
  int spin_class = -1;  // -1: scan
  std::vector<RhoValue> rho;
  saddle::SolverConfig solver;
  Eigen::Matrix2d cartan = variational::su3_cartan();
  std::string output_dir = "run";

  bool scan() const { return spin_class < 0; }
};

namespace detail {

inline void reject_unknown(const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) fail_usage("config: " + (where.empty() ? std::string("top level") : where) + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail_usage("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
T get(const json& obj, const std::string& key, const std::string& path) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail_usage("config: '" + path + "' has the wrong type");
  }
}

inline RhoValue rho_from_json(const json& j, const std::string& path) {
  if (j.is_number()) {
    RhoValue r;
    r.value = j.get<double>();
    if (!(r.value > 0.0)) fail_usage("config: '" + path + "' must be positive");
    return r;
  }
  if (j.is_string()) return parse_rho(j.get<std::string>());
  fail_usage("config: '" + path + "' must be a number or a string like 0.5x-lambda1");
}

} // namespace detail

inline RunConfig parse_config(const json& j) {
  using detail::get;
  detail::reject_unknown(j, {"mesh", "spin_class", "rho", "solver", "cartan", "output_dir"}, "");
  RunConfig c;
  if (!j.contains("mesh")) fail_usage("config: 'mesh' is required");
  const json& m = j["mesh"];
  detail::reject_unknown(m, {"genus", "subdivision", "path"}, "mesh");
  const bool gen = m.contains("genus") || m.contains("subdivision");
  if (gen == m.contains("path")) fail_usage("config: 'mesh' needs exactly one of {genus, subdivision} or {path}");
  if (m.contains("path")) {
    c.mesh.path = get<std::string>(m, "path", "mesh.path");
  } else {
    if (m.contains("genus")) c.mesh.genus = get<int>(m, "genus", "mesh.genus");
    if (m.contains("subdivision")) c.mesh.subdivision = get<int>(m, "subdivision", "mesh.subdivision");
  }
  if (j.contains("spin_class")) {
    const json& s = j["spin_class"];
    if (s.is_string() && s.get<std::string>() == "scan") {
      c.spin_class = -1;
    } else if (s.is_number_integer() && s.get<int>() >= 0) {
      c.spin_class = s.get<int>();
    } else {
      fail_usage("config: 'spin_class' must be a nonnegative integer or \"scan\"");
    }
  }
  if (j.contains("rho")) {
    const json& r = j["rho"];
    if (r.is_array()) {
      for (std::size_t i = 0; i < r.size(); ++i) c.rho.push_back(detail::rho_from_json(r[i], "rho[" + std::to_string(i) + "]"));
    } else {
      c.rho.push_back(detail::rho_from_json(r, "rho"));
    }
  }
  if (j.contains("solver")) {
    const json& s = j["solver"];
    detail::reject_unknown(s, {"R", "tau", "path_points", "max_deform_steps", "step_size", "newton_tol",
                               "nontrivial_floor", "rng_seed", "deform_tol", "max_newton_steps"},
                           "solver");
    auto& v = c.solver;
    if (s.contains("R")) v.R = get<double>(s, "R", "solver.R");
    if (s.contains("tau")) v.tau = get<double>(s, "tau", "solver.tau");
    if (s.contains("path_points")) v.path_points = get<int>(s, "path_points", "solver.path_points");
    if (s.contains("max_deform_steps")) v.max_deform_steps = get<int>(s, "max_deform_steps", "solver.max_deform_steps");
    if (s.contains("step_size")) v.step_size = get<double>(s, "step_size", "solver.step_size");
    if (s.contains("newton_tol")) v.newton_tol = get<double>(s, "newton_tol", "solver.newton_tol");
    if (s.contains("nontrivial_floor")) v.nontrivial_floor = get<double>(s, "nontrivial_floor", "solver.nontrivial_floor");
    if (s.contains("rng_seed")) v.rng_seed = get<std::uint64_t>(s, "rng_seed", "solver.rng_seed");
    if (s.contains("deform_tol")) v.deform_tol = get<double>(s, "deform_tol", "solver.deform_tol");
    if (s.contains("max_newton_steps")) v.max_newton_steps = get<int>(s, "max_newton_steps", "solver.max_newton_steps");
  }
  if (j.contains("cartan")) {
    const json& a = j["cartan"];
    if (!a.is_array() || a.size() != 2 || !a[0].is_array() || !a[1].is_array() || a[0].size() != 2 || a[1].size() != 2)
      fail_usage("config: 'cartan' must be a 2x2 array");
    for (int r = 0; r < 2; ++r)
      for (int k = 0; k < 2; ++k) {
        if (!a[r][k].is_number()) fail_usage("config: 'cartan' entries must be numbers");
        c.cartan(r, k) = a[r][k].get<double>();
      }
    variational::validate_cartan(c.cartan);
  }
  if (j.contains("output_dir")) c.output_dir = get<std::string>(j, "output_dir", "output_dir");
  c.solver.cartan = c.cartan;
  // rho is validated against the spectrum later; the rest now.
  saddle::SolverConfig probe = c.solver;
  probe.rho = 1.0;
  probe.validate();
  return c;
}

inline RunConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail_usage("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

inline json config_to_json(const RunConfig& c) {
  json j;
  if (c.mesh.path) {
    j["mesh"] = {{"path", *c.mesh.path}};
  } else {
    j["mesh"] = {{"genus", c.mesh.genus}, {"subdivision", c.mesh.subdivision}};
  }
  j["spin_class"] = c.scan() ? json("scan") : json(c.spin_class);
  json r = json::array();
  for (const auto& v : c.rho) r.push_back(v.str());
  j["rho"] = r;
  const auto& s = c.solver;
  j["solver"] = {{"R", s.R},
                 {"tau", s.tau},
                 {"path_points", s.path_points},
                 {"max_deform_steps", s.max_deform_steps},
                 {"step_size", s.step_size},
                 {"newton_tol", s.newton_tol},
                 {"nontrivial_floor", s.nontrivial_floor},
                 {"rng_seed", s.rng_seed},
                 {"deform_tol", s.deform_tol},
                 {"max_newton_steps", s.max_newton_steps}};
  j["cartan"] = {{c.cartan(0, 0), c.cartan(0, 1)}, {c.cartan(1, 0), c.cartan(1, 1)}};
  j["output_dir"] = c.output_dir;
  return j;
}

inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string config_hash(const RunConfig& c) { return fnv1a_hex(config_to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Files.

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail_io("cannot create output directory '" + dir.string() + "'");
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_io("cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail_io("write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string spectrum_csv(const spinops::DiracSpectrum& spec) {
  std::string s = "index,lambda\n";
  for (int k = 0; k < spec.size(); ++k) s += std::to_string(spec.signed_index(k)) + "," + fmt(spec.eigenvalues[k]) + "\n";
  return s;
}

inline std::string eigenspinor_csv(const spinops::DiracSpectrum& spec, int mode) {
  std::string s = "vertex,re_w,re_x,re_y,re_z\n";
  const auto col = spec.eigenspinors.col(mode);
  for (int v = 0; v < spec.vertex_count(); ++v) {
    s += std::to_string(v);
    for (int c = 0; c < 4; ++c) s += "," + fmt(col[4 * v + c]);
    s += "\n";
  }
  return s;
}

struct StateMeta {
  double rho = 0.0;
  std::string mesh_hash;
  int spin_class = 0;
  Eigen::Matrix2d cartan = variational::su3_cartan();
};

inline std::string state_csv(const variational::FieldState& s) {
  std::string out = "vertex,u1,u2,p1w,p1x,p1y,p1z,p2w,p2x,p2y,p2z\n";
  for (Eigen::Index v = 0; v < s.u1.size(); ++v) {
    out += std::to_string(v) + "," + fmt(s.u1[v]) + "," + fmt(s.u2[v]);
    for (int c = 0; c < 4; ++c) out += "," + fmt(s.psi1[4 * v + c]);
    for (int c = 0; c < 4; ++c) out += "," + fmt(s.psi2[4 * v + c]);
    out += "\n";
  }
  return out;
}

inline json state_sidecar(const StateMeta& meta) {
  return {{"rho", meta.rho},
          {"mesh_hash", meta.mesh_hash},
          {"spin_class", meta.spin_class},
          {"cartan", {{meta.cartan(0, 0), meta.cartan(0, 1)}, {meta.cartan(1, 0), meta.cartan(1, 1)}}}};
}

inline fs::path sidecar_path(const fs::path& csv) {
  fs::path p = csv;
  return p.replace_extension(".json");
}

inline void write_state(const fs::path& csv, const variational::FieldState& s, const StateMeta& meta) {
  write_text(csv, state_csv(s));
  write_text(sidecar_path(csv), state_sidecar(meta).dump(2) + "\n");
}

inline StateMeta read_state_meta(const fs::path& csv) {
  const fs::path side = sidecar_path(csv);
  json j;
  try {
    j = json::parse(read_text(side));
    detail::reject_unknown(j, {"rho", "mesh_hash", "spin_class", "cartan"}, "state sidecar");
    StateMeta m;
    m.rho = j.at("rho").get<double>();
    m.mesh_hash = j.at("mesh_hash").get<std::string>();
    m.spin_class = j.at("spin_class").get<int>();
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) m.cartan(r, c) = j.at("cartan").at(r).at(c).get<double>();
    return m;
  } catch (const json::exception& e) {
    fail_usage("state sidecar '" + side.string() + "' is malformed: " + e.what());
  }
}

/// Rows of the state CSV as (u1, u2, psi1, psi2).
struct StateColumns {
  VectorXd u1, u2, psi1, psi2;
};

inline StateColumns read_state_csv(const fs::path& csv, int vertex_count) {
  std::istringstream in(read_text(csv));
  std::string line;
  if (!std::getline(in, line) || line != "vertex,u1,u2,p1w,p1x,p1y,p1z,p2w,p2x,p2y,p2z")
    fail_usage("state file '" + csv.string() + "' has an unexpected header");
  StateColumns c{VectorXd::Zero(vertex_count), VectorXd::Zero(vertex_count), VectorXd::Zero(4 * vertex_count),
                 VectorXd::Zero(4 * vertex_count)};
  std::vector<bool> seen(vertex_count, false);
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        fail_usage("state file '" + csv.string() + "' row " + std::to_string(row) + ": bad number '" + cell + "'");
      }
    }
    if (vals.size() != 11) fail_usage("state file '" + csv.string() + "' row " + std::to_string(row) + ": expected 11 columns");
    const int v = static_cast<int>(vals[0]);
    if (v < 0 || v >= vertex_count || vals[0] != v || seen[v])
      fail_usage("state file '" + csv.string() + "' row " + std::to_string(row) + ": bad vertex id");
    seen[v] = true;
    c.u1[v] = vals[1];
    c.u2[v] = vals[2];
    for (int k = 0; k < 4; ++k) {
      c.psi1[4 * v + k] = vals[3 + k];
      c.psi2[4 * v + k] = vals[7 + k];
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    fail_usage("state file '" + csv.string() + "' does not cover every vertex");
  return c;
}

inline json report_json(const saddle::SolverReport& r) {
  return {{"outcome", saddle::to_string(r.outcome)},
          {"J", r.J_value},
          {"residuals", {{"sT_u", r.residuals.sT_u}, {"sT_psi", r.residuals.sT_psi}, {"sTprime", r.residuals.sTprime}}},
          {"constraint_norm", r.constraint_norm},
          {"linking_level", r.linking_level_estimate},
          {"steps", r.steps},
          {"seed", r.seed},
          {"efimov_flag", r.efimov_flag},
          {"rho", r.rho},
          {"nehari_dim", r.nehari_dim},
          {"message", r.message}};
}

inline std::string iterate_log_csv(const saddle::SolverReport& r) {
  std::string s = "step,J,grad_norm\n";
  for (const auto& rec : r.iterate_log) s += std::to_string(rec.step) + "," + fmt(rec.J) + "," + fmt(rec.grad_norm) + "\n";
  return s;
}

inline json verdict_json(const saddle::Verdict& v) {
  return {{"verdict", v.verdict},
          {"classification", v.classification},
          {"J", v.J},
          {"residuals", {{"sT_u", v.residuals.sT_u}, {"sT_psi", v.residuals.sT_psi}, {"sTprime", v.residuals.sTprime}}},
          {"constraint_norm", v.constraint_norm},
          {"psi_l2", v.psi_norm},
          {"residual_ok", v.residual_ok},
          {"constraint_ok", v.constraint_ok},
          {"nontrivial", v.nontrivial},
          {"efimov_flag", v.efimov_flag}};
}

inline json manifest_json(const std::string& cfg_hash, const std::string& mesh_hash, int spin_class,
                          const std::vector<std::int8_t>& signs) {
  json s = json::array();
  for (auto e : signs) s.push_back(static_cast<int>(e));
  return {{"config_hash", cfg_hash}, {"mesh_hash", mesh_hash}, {"spin_class", spin_class}, {"edge_signs", s},
          {"version", kVersion}};
}

// ---------------------------------------------------------------------------
// Stages.

inline hypmesh::SurfaceMesh load_source(const MeshSource& src) {
  if (src.path) return hypmesh::load_mesh(*src.path);
  return hypmesh::build_fuchsian_mesh(src.genus, src.subdivision);
}

struct SpinContext {
  spinops::SpinStructure spin;
  spinops::DiracSpectrum spectrum;
};

inline SpinContext spin_context(const hypmesh::SurfaceMesh& mesh, int spin_class) {
  const auto hb = spinops::homology_basis(mesh);
  auto spin = spinops::spin_structure(mesh, hb, spinops::transport_angles(mesh), spin_class);
  auto spec = spinops::eigendecompose(spinops::assemble_dirac(mesh, spin));
  return {std::move(spin), std::move(spec)};
}

inline int thread_cap() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("TODA_SPIN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) fail_usage("TODA_SPIN_THREADS must be a positive integer");
    n = static_cast<int>(std::min<long>(v, n));
  }
  return n;
}

struct ClassSpectrum {
  int class_index = 0;
  spinops::DiracSpectrum spectrum;
};

/// Spectra of all spin classes, computed by up to thread_cap() workers.
inline std::vector<ClassSpectrum> scan_spin_classes(const hypmesh::SurfaceMesh& mesh) {
  const auto classes = spinops::enumerate_spin_classes(mesh);
  std::vector<ClassSpectrum> out(classes.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::optional<Error> first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < classes.size(); i = next++) {
      try {
        out[i] = {classes[i].class_index, spinops::eigendecompose(spinops::assemble_dirac(mesh, classes[i]))};
      } catch (const Error& e) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = e;
      }
    }
  };
  const int n = std::min<int>(thread_cap(), static_cast<int>(classes.size()));
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) throw *first_error;
  return out;
}

/// Kernel-free class with the largest spectral gap (lowest index on ties).
inline int best_kernel_free_class(const std::vector<ClassSpectrum>& scan) {
  int best = -1;
  double gap = 0.0;
  for (const auto& c : scan) {
    if (c.spectrum.kernel_dim > 0) continue;
    const double g = c.spectrum.min_abs_eigenvalue();
    if (best < 0 || g > gap) {
      best = c.class_index;
      gap = g;
    }
  }
  if (best < 0) fail("nontrivial kernel in every spin class");
  return best;
}

inline json kernel_table(const std::vector<ClassSpectrum>& scan) {
  json t = json::array();
  for (const auto& c : scan)
    t.push_back({{"class", c.class_index},
                 {"kernel_dim", c.spectrum.kernel_dim},
                 {"min_abs_lambda", c.spectrum.min_abs_eigenvalue()}});
  return t;
}

struct SolveArtifacts {
  saddle::SolverReport report;
  variational::FieldState state;
};

inline void write_run(const fs::path& dir, const saddle::SolverReport& report, const variational::FieldState& state,
                      const StateMeta& meta) {
  ensure_dir(dir);
  write_text(dir / "report.json", report_json(report).dump(2) + "\n");
  write_text(dir / "iterate_log.csv", iterate_log_csv(report));
  write_state(dir / "state.csv", state, meta);
}

inline int resolve_class(const hypmesh::SurfaceMesh& mesh, const RunConfig& cfg) {
  if (!cfg.scan()) return cfg.spin_class;
  return best_kernel_free_class(scan_spin_classes(mesh));
}

/// One solve per rho in the config (a single value for `solve`).
inline std::vector<SolveArtifacts> run_solve(const RunConfig& cfg, bool sweep, std::ostream& log) {
  if (cfg.rho.empty()) fail_usage("rho is required");
  const auto mesh = load_source(cfg.mesh);
  const int cls = resolve_class(mesh, cfg);
  auto ctx = spin_context(mesh, cls);
  std::vector<double> grid;
  for (const auto& r : cfg.rho) grid.push_back(r.resolve(ctx.spectrum));
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) fail_usage("rho grid must be strictly increasing");
  for (double r : grid) spinops::spectral_split(ctx.spectrum, r);
  const variational::Model model(mesh, ctx.spectrum);
  const std::string mhash = hypmesh::mesh_hash(mesh);
  const fs::path root(cfg.output_dir);
  ensure_dir(root);
  write_text(root / "manifest.json",
             manifest_json(config_hash(cfg), mhash, cls, ctx.spin.edge_sign).dump(2) + "\n");
  write_text(root / "config.json", config_to_json(cfg).dump(2) + "\n");
  write_text(root / "spectrum.csv", spectrum_csv(ctx.spectrum));

  std::vector<SolveArtifacts> out;
  auto meta_for = [&](double rho) { return StateMeta{rho, mhash, cls, cfg.cartan}; };
  if (!sweep) {
    saddle::SolverConfig sc = cfg.solver;
    sc.rho = grid[0];
    auto res = saddle::solve(model, sc);
    write_run(root, res.report, res.state, meta_for(sc.rho));
    log << "class " << cls << " rho " << fmt(sc.rho) << ": " << saddle::to_string(res.report.outcome) << " J "
        << fmt(res.report.J_value) << "\n";
    out.push_back({res.report, res.state});
    return out;
  }
  const auto entries = saddle::continuation_sweep(model, grid, cfg.solver);
  json summary = json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto state = e.state ? *e.state : variational::trivial_state(ctx.spectrum, e.rho);
    write_run(root / ("rho_" + std::to_string(i)), e.report, state, meta_for(e.rho));
    json r = report_json(e.report);
    r["index"] = i;
    summary.push_back(r);
    log << "rho " << fmt(e.rho) << " dim N " << e.report.nehari_dim << ": " << saddle::to_string(e.report.outcome)
        << " J " << fmt(e.report.J_value) << (e.report.message.empty() ? "" : "  (" + e.report.message + ")") << "\n";
    out.push_back({e.report, state});
  }
  write_text(root / "sweep.json", summary.dump(2) + "\n");
  return out;
}

inline saddle::Verdict run_verify(const hypmesh::SurfaceMesh& mesh, const fs::path& state_csv_path,
                                  const saddle::SolverConfig& base, std::optional<int> spin_class = std::nullopt) {
  const StateMeta meta = read_state_meta(state_csv_path);
  if (meta.mesh_hash != hypmesh::mesh_hash(mesh)) fail_usage("state was computed on a different mesh (hash mismatch)");
  const int cls = spin_class.value_or(meta.spin_class);
  auto ctx = spin_context(mesh, cls);
  const variational::Model model(mesh, ctx.spectrum);
  const auto cols = read_state_csv(state_csv_path, mesh.vertex_count());
  const auto state =
      variational::from_spinors(ctx.spectrum, cols.u1, cols.u2, cols.psi1, cols.psi2, meta.rho, meta.cartan);
  saddle::SolverConfig cfg = base;
  cfg.rho = meta.rho;
  return saddle::verify_solution(model, state, cfg);
}

// ---------------------------------------------------------------------------
// Command line.

/// Nonnegative class index, or -1 for "scan".
inline int parse_class(const std::string& text) {
  if (text == "scan") return -1;
  try {
    std::size_t used = 0;
    const int c = std::stoi(text, &used);
    if (used == text.size() && c >= 0) return c;
  } catch (const std::exception&) {
  }
  fail_usage("--spin-class must be a nonnegative integer or 'scan'");
}

inline int exit_code(ErrorKind k) { return k == ErrorKind::usage ? 2 : 1; }

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Super Toda saddle-point laboratory on hyperbolic surfaces", "toda"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto* mesh_cmd = app.add_subcommand("mesh", "Generate a genus-g Fuchsian mesh in ITRI format");
  int genus = 2, subdivision = 0;
  std::string out_path;
  mesh_cmd->add_option("--genus", genus, "Surface genus (>= 2)");
  mesh_cmd->add_option("--subdivision", subdivision, "Refinement level (>= 0)");
  mesh_cmd->add_option("--out", out_path, "Output ITRI file")->required();

  auto* spec_cmd = app.add_subcommand("spectrum", "Dirac spectra for one spin class or all of them");
  std::string mesh_path, spin_arg = "scan", out_dir = "spectrum";
  spec_cmd->add_option("--mesh", mesh_path, "ITRI mesh file")->required();
  spec_cmd->add_option("--spin-class", spin_arg, "Class index or 'scan'");
  spec_cmd->add_option("--out-dir", out_dir, "Output directory");

  auto* solve_cmd = app.add_subcommand("solve", "Find a nontrivial critical point");
  auto* sweep_cmd = app.add_subcommand("sweep", "Continuation over a rho grid");
  std::string config_path, rho_arg, solve_spin = "scan", solve_out;
  std::vector<std::string> grid_args;
  std::uint64_t seed = 0;
  for (auto* cmd : {solve_cmd, sweep_cmd}) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--mesh", mesh_path, "ITRI mesh file (overrides the config)");
    cmd->add_option("--spin-class", solve_spin, "Class index or 'scan' (overrides the config)");
    cmd->add_option("--out-dir", solve_out, "Output directory (overrides the config)");
    cmd->add_option("--seed", seed, "RNG seed (overrides the config)");
  }
  solve_cmd->add_option("--rho", rho_arg, "Coupling, e.g. 0.3 or 0.5x-lambda1");
  sweep_cmd->add_option("--rho", grid_args, "Increasing rho grid")->delimiter(',');

  auto* verify_cmd = app.add_subcommand("verify", "Check a stored FieldState");
  std::string state_path, verdict_out;
  verify_cmd->add_option("--mesh", mesh_path, "ITRI mesh file")->required();
  verify_cmd->add_option("--state", state_path, "FieldState CSV (sidecar JSON next to it)")->required();
  verify_cmd->add_option("--out", verdict_out, "Write the verdict JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*mesh_cmd) {
      const auto m = hypmesh::build_fuchsian_mesh(genus, subdivision);
      hypmesh::write_mesh(m, out_path);
      const auto rep = hypmesh::mesh_report(m);
      out << "V=" << m.vertex_count() << " F=" << m.face_count() << " genus=" << m.genus()
          << " area_error=" << rep.area_error << " max_defect=" << rep.max_vertex_defect << "\n";
      return 0;
    }
    if (*spec_cmd) {
      const auto m = hypmesh::load_mesh(mesh_path);
      const fs::path dir(out_dir);
      ensure_dir(dir);
      if (parse_class(spin_arg) < 0) {
        const auto scan = scan_spin_classes(m);
        for (const auto& c : scan)
          write_text(dir / ("spectrum_class_" + std::to_string(c.class_index) + ".csv"), spectrum_csv(c.spectrum));
        write_text(dir / "kernel_table.json", kernel_table(scan).dump(2) + "\n");
        for (const auto& c : scan)
          out << "class " << c.class_index << " kernel_dim " << c.spectrum.kernel_dim << " min|lambda| "
              << fmt(c.spectrum.min_abs_eigenvalue()) << "\n";
      } else {
        const int cls = parse_class(spin_arg);
        const auto ctx = spin_context(m, cls);
        write_text(dir / "spectrum.csv", spectrum_csv(ctx.spectrum));
        write_text(dir / "kernel_table.json",
                   kernel_table({{cls, ctx.spectrum}}).dump(2) + "\n");
        out << "class " << cls << " kernel_dim " << ctx.spectrum.kernel_dim << "\n";
      }
      return 0;
    }
    if (*solve_cmd || *sweep_cmd) {
      RunConfig cfg;
      if (!config_path.empty()) {
        cfg = read_config(config_path);
      } else {
        if (mesh_path.empty()) fail_usage("either --config or --mesh is required");
        cfg.mesh.path = mesh_path;
      }
      if (!mesh_path.empty()) cfg.mesh = MeshSource{mesh_path, 2, 0};
      auto* cmd = *solve_cmd ? solve_cmd : sweep_cmd;
      if (cmd->count("--spin-class") > 0 || config_path.empty()) {
        cfg.spin_class = parse_class(solve_spin);
      }
      if (!solve_out.empty()) cfg.output_dir = solve_out;
      if (cmd->count("--seed") > 0) cfg.solver.rng_seed = seed;
      if (*solve_cmd && !rho_arg.empty()) cfg.rho = {parse_rho(rho_arg)};
      if (*sweep_cmd && !grid_args.empty()) {
        cfg.rho.clear();
        for (const auto& g : grid_args) cfg.rho.push_back(parse_rho(g));
      }
      if (*solve_cmd && cfg.rho.size() != 1) fail_usage("solve needs exactly one rho value");
      run_solve(cfg, static_cast<bool>(*sweep_cmd), out);
      return 0;
    }
    if (*verify_cmd) {
      const auto m = hypmesh::load_mesh(mesh_path);
      const auto v = run_verify(m, state_path, saddle::SolverConfig{});
      const std::string text = verdict_json(v).dump(2) + "\n";
      if (!verdict_out.empty()) write_text(verdict_out, text);
      out << text;
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

} // namespace supertoda::pipeline
