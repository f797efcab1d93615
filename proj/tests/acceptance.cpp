#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "supertoda/saddle.hpp"

using namespace supertoda;
using Eigen::VectorXd;
using saddle::Outcome;
using variational::FieldState;
using variational::Model;
using variational::Tangent;

namespace {

constexpr double kFrozenJ = 27.305831480166532;

struct Result {
  bool pass = false;
  std::string detail;
};

struct Shared {
  hypmesh::SurfaceMesh mesh = hypmesh::build_fuchsian_mesh(2, 0);
  std::vector<spinops::SpinStructure> classes;
  std::vector<spinops::DiracSpectrum> spectra;
  int cls = -1;
  std::unique_ptr<Model> model;
  std::optional<saddle::SolveResult> existence;

  const Model& m() {
    if (!model) {
      classes = spinops::enumerate_spin_classes(mesh);
      for (const auto& c : classes) spectra.push_back(spinops::eigendecompose(spinops::assemble_dirac(mesh, c)));
      for (int c = 0; c < static_cast<int>(spectra.size()); ++c)
        if (spectra[c].kernel_dim == 0 && (cls < 0 || spectra[c].min_abs_eigenvalue() > spectra[cls].min_abs_eigenvalue()))
          cls = c;
      if (cls < 0) fail("no kernel-free class");
      model = std::make_unique<Model>(mesh, spectra[cls]);
    }
    return *model;
  }
  double lambda1() { return m().spectrum().lambda_first(); }
};

Shared& shared() {
  static Shared s;
  return s;
}

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

FieldState random_state(const Model& m, std::mt19937_64& rng, double ru, double ra, double rho) {
  std::vector<int> all(m.spinor_dim());
  std::iota(all.begin(), all.end(), 0);
  return variational::from_coeffs(m.spectrum(), variational::random_scalar(m, rng, ru),
                                  variational::random_scalar(m, rng, ru), variational::random_coeffs(m, all, rng, ra),
                                  variational::random_coeffs(m, all, rng, ra), rho);
}

Tangent random_tangent(const Model& m, std::mt19937_64& rng) {
  std::vector<int> all(m.spinor_dim());
  std::iota(all.begin(), all.end(), 0);
  return {variational::random_scalar(m, rng, 1.0), variational::random_scalar(m, rng, 1.0),
          variational::random_coeffs(m, all, rng, 1.0), variational::random_coeffs(m, all, rng, 1.0)};
}

Result geometry() {
  double worst_defect = 0.0, worst_area = 0.0, worst_time = 0.0;
  for (int s = 0; s <= 3; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = hypmesh::build_fuchsian_mesh(2, s);
    const auto rep = hypmesh::mesh_report(m);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    worst_defect = std::max(worst_defect, rep.max_vertex_defect);
    worst_area = std::max(worst_area, std::abs(m.total_area() - 4.0 * std::numbers::pi));
    worst_time = std::max(worst_time, dt);
  }
  return {worst_defect <= 1e-8 && worst_area <= 1e-8 && worst_time < 1.0,
          "max defect " + num(worst_defect) + ", area error " + num(worst_area) + ", slowest level " +
              num(worst_time) + " s"};
}

Result spectral_structure() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& mesh = shared().mesh;
  const auto classes = spinops::enumerate_spin_classes(mesh);
  std::mt19937_64 rng(2);
  double sym = 0.0, gauge = 0.0;
  bool mult4 = true;
  for (const auto& c : classes) {
    const auto s = spinops::eigendecompose(spinops::assemble_dirac(mesh, c));
    sym = std::max(sym, spinops::symmetry_defect(s));
    for (int k : spinops::cluster_multiplicities(s)) mult4 = mult4 && k % 4 == 0;
    auto flipped = c;
    for (int i = 0; i < 7; ++i)
      flipped = spinops::gauge_flip(mesh, flipped, static_cast<int>(rng() % mesh.vertex_count()));
    const auto f = spinops::eigendecompose(spinops::assemble_dirac(mesh, flipped));
    gauge = std::max(gauge, (f.eigenvalues - s.eigenvalues).cwiseAbs().maxCoeff());
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {classes.size() == 16 && sym <= 1e-8 && mult4 && gauge <= 1e-9 && dt < 60.0,
          std::to_string(classes.size()) + " classes, symmetry defect " + num(sym) + ", multiplicities " +
              (mult4 ? "all divisible by 4" : "NOT divisible by 4") + ", gauge difference " + num(gauge) + ", " +
              num(dt) + " s"};
}

Result kernel_free() {
  auto& sh = shared();
  sh.m();
  int free_count = 0;
  for (const auto& s : sh.spectra)
    if (s.kernel_dim == 0) ++free_count;
  const double gap = sh.spectra[sh.cls].min_abs_eigenvalue();
  return {gap >= 1e-3, std::to_string(free_count) + " kernel-free classes; class " + std::to_string(sh.cls) +
                           " has min|lambda| " + num(gap)};
}

Result trivial_solution() {
  const auto& m = shared().m();
  const auto s = variational::trivial_state(m.spectrum(), 0.5 * shared().lambda1());
  const double j = variational::evaluate_J(m, s).J;
  const double r = variational::el_residual(m, s).max_norm();
  return {j == 0.0 && r <= 1e-12, "J " + num(j) + ", max residual " + num(r)};
}

Result cartan_equivalence() {
  const auto& m = shared().m();
  std::mt19937_64 rng(5);
  const Eigen::Matrix2d a = variational::su3_cartan();
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto s = random_state(m, rng, 0.8, 2.0, 0.3);
    const auto r = variational::el_residual(m, s);
    const VectorXd d1 = r.p1 - (a(0, 0) * r.u1 + a(0, 1) * r.u2);
    const VectorXd d2 = r.p2 - (a(1, 0) * r.u1 + a(1, 1) * r.u2);
    worst = std::max(worst, std::hypot(m.dual_h1_norm(d1), m.dual_h1_norm(d2)));
  }
  return {worst <= 1e-12, "max dual-norm difference " + num(worst) + " over 100 states"};
}

Result gradient_oracle() {
  const auto& m = shared().m();
  std::mt19937_64 rng(6);
  double worst = 0.0;
  const double h = 1e-5;
  for (int t = 0; t < 50; ++t) {
    const auto s = random_state(m, rng, 0.5, 1.5, 0.05 + 0.01 * t);
    const Tangent d = random_tangent(m, rng);
    const double fd = (variational::evaluate_J(m, variational::advance(m.spectrum(), s, d, h)).J -
                       variational::evaluate_J(m, variational::advance(m.spectrum(), s, d, -h)).J) /
                      (2.0 * h);
    const double an = variational::derivative_J(m, s).dot(d);
    worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(an)));
  }
  return {worst <= 1e-6, "max relative error " + num(worst) + " over 50 pairs"};
}

Result nehari_mechanics() {
  const auto& m = shared().m();
  const auto& spec = m.spectrum();
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto p = variational::nehari_project(m, random_state(m, rng, 0.8, 3.0, 0.02 + 0.002 * t));
    worst = std::max(worst, variational::nehari_constraint(m, p).norm());
  }
  bool zero = true;
  const int nv = m.vertex_count();
  for (int t = 0; t < 20; ++t) {
    const auto s = random_state(m, rng, 0.5, 2.0, 0.3);
    const auto p = variational::nehari_project(
        m, variational::from_coeffs(spec, VectorXd::Constant(nv, 0.1 * t - 1.0), VectorXd::Constant(nv, 0.05 * t),
                                    s.a1, s.a2, s.rho));
    for (int k : m.negative()) zero = zero && p.a1[k] == 0.0 && p.a2[k] == 0.0;
  }
  // Constraint evaluated with explicit vertex sums and the dense Dirac matrix.
  const auto& sh = shared();
  const auto dense = spinops::assemble_dirac(sh.mesh, sh.classes[sh.cls]).dense();
  double oracle = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto p = variational::nehari_project(m, random_state(m, rng, 0.8, 3.0, 0.3));
    for (int j = 0; j < 2; ++j) {
      const VectorXd dpsi = dense * p.psi(j);
      for (int k : m.negative()) {
        const VectorXd mode = spec.eigenspinors.col(k);
        double lhs = 0.0, rhs = 0.0, scale = 0.0;
        for (int v = 0; v < nv; ++v) {
          const double w = m.mass()[v];
          lhs += w * mode.segment<4>(4 * v).dot(dpsi.segment<4>(4 * v));
          rhs += w * std::exp(p.u(j)[v]) * mode.segment<4>(4 * v).dot(p.psi(j).segment<4>(4 * v));
          scale += w * std::abs(mode.segment<4>(4 * v).dot(dpsi.segment<4>(4 * v)));
        }
        oracle = std::max(oracle, std::abs(lhs - p.rho * rhs) / std::max(1.0, scale));
      }
    }
  }
  return {worst <= 1e-10 && zero && oracle <= 1e-11,
          "constraint " + num(worst) + ", constant-u negative part " + (zero ? "exactly zero" : "NONZERO") +
              ", dense oracle " + num(oracle)};
}

Result saddle_geometry() {
  const auto& m = shared().m();
  const double l1 = shared().lambda1();
  const auto low = saddle::accept_cone(m, 0.5 * l1, 4.0, 0.5, 1000, 1);
  const double rho_b = 3.0 * l1;
  const auto high = saddle::accept_cone(m, rho_b, 4.0, 0.5, 1000, 1);
  const int b = static_cast<int>(saddle::b_modes(m, rho_b).size());
  const int idx_low = saddle::trivial_negative_index(m, 0.5 * l1);
  const int idx_high = saddle::trivial_negative_index(m, rho_b);
  const bool ok = low.all_positive && low.samples == 1000 && high.all_positive && high.samples == 1000 &&
                  high.linear_samples > 0 && high.max_J_on_linear_part <= 0.0 && idx_low == 0 && idx_high == 2 * b;
  return {ok, "c " + num(low.C) + " (tau " + num(low.tau) + ", R " + num(low.R) + ") and " + num(high.C) + " (tau " +
                  num(high.tau) + ", R " + num(high.R) + "), max J on N " + num(high.max_J_on_linear_part) +
                  ", index " + std::to_string(idx_low) + " and " + std::to_string(idx_high) + " = 2*" +
                  std::to_string(b)};
}

Result existence_run() {
  auto& sh = shared();
  const auto& m = sh.m();
  saddle::SolverConfig cfg;
  cfg.rho = 0.5 * sh.lambda1();
  const auto t0 = std::chrono::steady_clock::now();
  sh.existence = saddle::solve(m, cfg);
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& r = sh.existence->report;
  const double psi = saddle::psi_l2(m, sh.existence->state);
  const bool frozen = std::abs(r.J_value - kFrozenJ) <= 1e-6 * kFrozenJ;
  const bool ok = r.outcome == Outcome::converged && r.residuals.max() <= 1e-8 && psi >= 1e-3 && r.J_value > 0.0 &&
                  !r.efimov_flag && dt <= 300.0 && frozen;
  std::ostringstream os;
  os.precision(17);
  os << saddle::to_string(r.outcome) << ", J " << r.J_value << " (frozen " << kFrozenJ << "), residual "
     << num(r.residuals.max()) << ", |psi| " << num(psi) << ", efimov " << (r.efimov_flag ? "true" : "false") << ", "
     << num(dt) << " s";
  return {ok, os.str()};
}

Result symmetry_family() {
  auto& sh = shared();
  if (!sh.existence || sh.existence->report.outcome != Outcome::converged) return {false, "no solution to rotate"};
  const auto& m = sh.m();
  const auto& s = sh.existence->state;
  const double j0 = variational::evaluate_J(m, s).J;
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n01;
  double dj = 0.0, res = 0.0;
  for (int t = 0; t < 20; ++t) {
    Quat q(n01(rng), n01(rng), n01(rng), n01(rng));
    q.normalize();
    const auto r = variational::quaternion_act(m.spectrum(), s, q);
    dj = std::max(dj, std::abs(variational::evaluate_J(m, r).J - j0));
    res = std::max(res, variational::el_residual(m, r).max_norm());
  }
  return {res <= 1e-8 && dj <= 1e-10, "max residual " + num(res) + ", max |dJ| " + num(dj) + " over 20 rotations"};
}

Result linking_regime() {
  const auto& m = shared().m();
  const double l1 = shared().lambda1();
  saddle::SolverConfig cfg;
  cfg.rho = 3.0 * l1;
  const int b = static_cast<int>(saddle::b_modes(m, cfg.rho).size());
  const auto res = saddle::solve(m, cfg);
  const auto& r = res.report;
  const bool solved = r.outcome == Outcome::converged && saddle::psi_l2(m, res.state) >= cfg.nontrivial_floor;
  const bool logged =
      (r.outcome == Outcome::trivial_attractor || r.outcome == Outcome::max_iters) && !r.iterate_log.empty();
  saddle::SolverConfig base;
  const auto sweep = saddle::continuation_sweep(m, {0.5 * l1, 1.5 * l1}, base);
  const bool jump = sweep.size() == 2 && sweep[1].report.message.find("dim N jumps 0 -> ") != std::string::npos;
  return {b >= 4 && (solved || logged) && jump,
          "|b| " + std::to_string(b) + ": " + saddle::to_string(r.outcome) + ", J " + num(r.J_value) + ", |psi| " +
              num(saddle::psi_l2(m, res.state)) + "; sweep: " + (sweep.size() == 2 ? sweep[1].report.message : "")};
}

Result negative_part_bound() {
  const auto& m = shared().m();
  const double rho = 0.5 * shared().lambda1();
  const double a = variational::negative_part_ratio(m, rho, 0.5, 500, 12);
  const double b = variational::negative_part_ratio(m, rho, 0.5, 1000, 13);
  const bool ok = std::isfinite(a) && std::isfinite(b) && a > 0.0 && std::abs(b - a) <= 0.2 * a;
  return {ok, "max ratio " + num(a) + " (500 samples), " + num(b) + " (1000 samples, independent seed)"};
}

} // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Result()>>> criteria = {
      {"geometry", geometry},
      {"spectral structure", spectral_structure},
      {"kernel-free class", kernel_free},
      {"trivial solution", trivial_solution},
      {"Cartan equivalence", cartan_equivalence},
      {"gradient oracle", gradient_oracle},
      {"Nehari mechanics", nehari_mechanics},
      {"saddle geometry", saddle_geometry},
      {"existence run", existence_run},
      {"symmetry family", symmetry_family},
      {"linking regime", linking_regime},
      {"negative-part bound", negative_part_bound},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Result r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!r.pass) ++failed;
    std::printf("%s %2zu %-20s %s [%.2f s]\n", r.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                r.detail.c_str(), dt);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
