#pragma once

// Saddle search on the Nehari manifold: path deformation for the mountain
// pass (rho < lambda_1) and its linking variant (inner maximization over the
// finitely many modes with 0 < lambda < rho), Newton refinement bordered by
// the quaternionic symmetry, rho continuation and verification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "supertoda/error.hpp"
#include "supertoda/quaternion.hpp"
#include "supertoda/spinops.hpp"
#include "supertoda/variational.hpp"

namespace supertoda::saddle {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using variational::FieldState;
using variational::Model;
using variational::Tangent;

struct SolverConfig {
  double rho = 0.0;
  double R = 0.5;
  double tau = 4.0;
  int path_points = 64;
  int max_deform_steps = 5000;
  double step_size = 1e-2;
  double newton_tol = 1e-10;
  double nontrivial_floor = 1e-3;
  std::uint64_t rng_seed = 0;
  double deform_tol = 1e-8;
  int max_newton_steps = 50;
  Eigen::Matrix2d cartan = variational::su3_cartan();

  void validate() const {
    variational::validate_cartan(cartan);
    if (!(rho > 0.0)) fail_usage("rho must be positive");
    if (!(tau > 1.0)) fail_usage("tau must exceed 1");
    if (!(R > 0.0 && R < 1.0)) fail_usage("R must lie in (0, 1)");
    if (path_points < 3) fail_usage("path_points must be at least 3");
    if (max_deform_steps < 0 || max_newton_steps < 0) fail_usage("iteration budgets must be nonnegative");
    if (!(step_size > 0.0 && newton_tol > 0.0 && nontrivial_floor > 0.0 && deform_tol > 0.0))
      fail_usage("tolerances and step size must be positive");
  }
};

enum class Outcome { converged, trivial_attractor, max_iters, numeric_failure };

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::converged: return "converged";
    case Outcome::trivial_attractor: return "trivial_attractor";
    case Outcome::max_iters: return "max_iters";
    case Outcome::numeric_failure: return "numeric_failure";
  }
  return "numeric_failure";
}

struct IterateRecord {
  int step = 0;
  double J = 0.0;
  double grad_norm = 0.0;
};

struct ResidualSummary {
  double sT_u = 0.0, sT_psi = 0.0, sTprime = 0.0;
  double max() const { return std::max({sT_u, sT_psi, sTprime}); }
};

struct SolverReport {
  Outcome outcome = Outcome::numeric_failure;
  double rho = 0.0;
  double J_value = 0.0;
  ResidualSummary residuals;
  double constraint_norm = 0.0;
  double linking_level_estimate = 0.0;
  std::vector<IterateRecord> iterate_log;
  bool symmetry_checked = false;
  bool efimov_flag = false;
  int steps = 0;
  std::uint64_t seed = 0;
  int nehari_dim = 0;  // |idx_pos_b|
  std::string message;
};

// ---------------------------------------------------------------------------

inline std::vector<int> b_modes(const Model& m, double rho) {
  std::vector<int> b;
  for (int k : m.positive())
    if (m.spectrum().eigenvalues[k] < rho) b.push_back(k);
  return b;
}

inline double psi_l2(const Model& m, const FieldState& s) {
  return std::hypot(m.l2_norm(s.psi1), m.l2_norm(s.psi2));
}

inline ResidualSummary summarize(const variational::Residuals& r) { return {r.sT_u, r.sT_psi, r.sTprime}; }

/// Mode index of the k-th positive eigenvalue (k >= 1).
inline int positive_mode(const Model& m, int k) {
  if (k < 1 || k > static_cast<int>(m.positive().size())) fail_usage("no positive mode " + std::to_string(k));
  return m.positive()[k - 1];
}

/// u = 0, psi_1 = psi_2 = eps Psi_k.
inline FieldState seed_bifurcation(const Model& m, double rho, int k, double eps,
                                   const Eigen::Matrix2d& cartan = variational::su3_cartan()) {
  spinops::spectral_split(m.spectrum(), rho);
  const int idx = positive_mode(m, k);
  VectorXd a = VectorXd::Zero(m.spinor_dim());
  a[idx] = eps;
  const VectorXd z = VectorXd::Zero(m.vertex_count());
  return variational::nehari_project(m, z, z, a, a, rho, cartan);
}

/// u = (c, c), psi_j = t Psi_k with t doubled until J < 0.
inline FieldState seed_endpoint(const Model& m, double rho, double c, int k, double t,
                                const Eigen::Matrix2d& cartan = variational::su3_cartan()) {
  spinops::spectral_split(m.spectrum(), rho);
  const int idx = positive_mode(m, k);
  if (!(t > 0.0)) fail_usage("endpoint amplitude must be positive");
  const VectorXd u = VectorXd::Constant(m.vertex_count(), c);
  for (int i = 0; i <= 50; ++i, t *= 2.0) {
    VectorXd a = VectorXd::Zero(m.spinor_dim());
    a[idx] = t;
    FieldState s = variational::nehari_project(m, u, u, a, a, rho, cartan);
    if (variational::evaluate_J(m, s).J < 0.0) return s;
  }
  fail("no negative endpoint");
}

/// Default endpoint: rho e^c = 2 lambda_k, with k the first mode above rho
/// (mode 1 when rho < lambda_1).
inline FieldState default_endpoint(const Model& m, double rho, int k = 0,
                                   const Eigen::Matrix2d& cartan = variational::su3_cartan()) {
  if (k == 0) k = static_cast<int>(b_modes(m, rho).size()) + 1;
  const double lk = m.spectrum().eigenvalues[positive_mode(m, k)];
  return seed_endpoint(m, rho, std::log(2.0 * lk / rho), k, 1.0, cartan);
}

inline void fill_report_tail(const Model& m, const FieldState& s, const SolverConfig& cfg, SolverReport& rep) {
  const auto r = variational::el_residual(m, s);
  rep.residuals = summarize(r);
  rep.constraint_norm = variational::nehari_constraint(m, s).norm();
  rep.J_value = variational::evaluate_J(m, s).J;
  const double floor = cfg.nontrivial_floor;
  rep.efimov_flag = psi_l2(m, s) >= floor && variational::standard_deviation(m, s.u1) <= 1e-6 &&
                    variational::standard_deviation(m, s.u2) <= 1e-6;
}

// ---------------------------------------------------------------------------
// Newton refinement.

/// Tangents of the Sp(1) x Sp(1) orbit: psi_j * i, psi_j * j, psi_j * k for
/// each nonzero field, in packed coordinates, orthonormalized.
inline MatrixXd symmetry_tangents(const Model& m, const FieldState& s) {
  const int nv = m.vertex_count(), n = m.spinor_dim();
  std::vector<VectorXd> cols;
  const Quat units[3] = {quat(0, 1, 0, 0), quat(0, 0, 1, 0), quat(0, 0, 0, 1)};
  for (int j = 0; j < 2; ++j) {
    if (m.l2_norm(s.psi(j)) < 1e-8) continue;
    for (const auto& q : units) {
      VectorXd col = VectorXd::Zero(2 * nv + 2 * n);
      col.segment(2 * nv + j * n, n) = m.spectrum().analyze(right_multiply(s.psi(j), q));
      cols.push_back(col);
    }
  }
  MatrixXd t(2 * nv + 2 * n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) t.col(i) = cols[i];
  if (t.cols() > 0) {
    Eigen::HouseholderQR<MatrixXd> qr(t);
    t = qr.householderQ() * MatrixXd::Identity(t.rows(), t.cols());
  }
  return t;
}

struct NewtonResult {
  FieldState state;
  SolverReport report;
};

inline NewtonResult newton_refine(const Model& m, const FieldState& start, const SolverConfig& cfg) {
  cfg.validate();
  const int nv = m.vertex_count(), n = m.spinor_dim();
  NewtonResult out{start, {}};
  SolverReport& rep = out.report;
  rep.rho = start.rho;
  rep.seed = cfg.rng_seed;
  rep.nehari_dim = static_cast<int>(b_modes(m, start.rho).size());
  FieldState s = start;
  auto merit = [&](const FieldState& x) { return m.h_norm(variational::gradient_J(m, x)); };
  auto residual = [&](const FieldState& x) { return variational::el_residual(m, x).max_norm(); };

  double res = residual(s);
  double best = res;
  int growth = 0;
  rep.outcome = Outcome::max_iters;
  for (int step = 0;; ++step) {
    const double jv = variational::evaluate_J(m, s).J;
    rep.iterate_log.push_back({step, jv, merit(s)});
    rep.steps = step;
    if (!std::isfinite(res)) {
      rep.outcome = Outcome::numeric_failure;
      rep.message = "non-finite residual";
      break;
    }
    if (res <= cfg.newton_tol) {
      rep.outcome = Outcome::converged;
      break;
    }
    if (step >= cfg.max_newton_steps) break;

    const MatrixXd hess = variational::hessian(m, s);
    const MatrixXd t = symmetry_tangents(m, s);
    const int dim = 2 * nv + 2 * n, nb = static_cast<int>(t.cols());
    MatrixXd big = MatrixXd::Zero(dim + nb, dim + nb);
    big.topLeftCorner(dim, dim) = hess;
    big.topRightCorner(dim, nb) = t;
    big.bottomLeftCorner(nb, dim) = t.transpose();
    VectorXd rhs = VectorXd::Zero(dim + nb);
    rhs.head(dim) = -variational::derivative_J(m, s).packed();
    Eigen::PartialPivLU<MatrixXd> lu(big);
    if (!(lu.rcond() > 1e-15)) {
      rep.outcome = Outcome::numeric_failure;
      rep.message = "singular bordered Jacobian";
      break;
    }
    const Tangent d = Tangent::unpack(lu.solve(rhs).head(dim), nv, n);
    // Backtrack on the residual.
    double alpha = 1.0;
    FieldState next = s;
    double next_res = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 30; ++k, alpha *= 0.5) {
      try {
        next = variational::advance(m.spectrum(), s, d, alpha);
        next_res = residual(next);
      } catch (const Error&) {
        next_res = std::numeric_limits<double>::infinity();
      }
      if (next_res < res) break;
    }
    if (!std::isfinite(next_res)) {
      rep.outcome = Outcome::numeric_failure;
      rep.message = "Newton step left the numeric range";
      break;
    }
    s = std::move(next);
    growth = next_res > best ? growth + 1 : 0;
    best = std::min(best, next_res);
    res = next_res;
    if (growth >= 10) {
      rep.outcome = Outcome::numeric_failure;
      rep.message = "residual grew for 10 steps";
      break;
    }
  }
  out.state = s;
  fill_report_tail(m, s, cfg, rep);
  rep.linking_level_estimate = rep.J_value;
  return out;
}

// ---------------------------------------------------------------------------
// Path deformation.

/// Puts a state on N_rho; in the linking case also maximizes J over the
/// coefficients of the modes with 0 < lambda < rho.
class Lifter {
public:
  Lifter(const Model& m, double rho) : m_(m), rho_(rho), b_(b_modes(m, rho)) {
    free_ = m.negative();
    free_.insert(free_.end(), b_.begin(), b_.end());
    std::sort(free_.begin(), free_.end());
    std::vector<bool> is_free(m.spinor_dim(), false);
    for (int k : free_) is_free[k] = true;
    for (int k = 0; k < m.spinor_dim(); ++k)
      if (!is_free[k]) fixed_.push_back(k);
    const auto& e = m.spectrum().eigenspinors;
    free_modes_.resize(e.rows(), static_cast<Eigen::Index>(free_.size()));
    for (std::size_t i = 0; i < free_.size(); ++i) free_modes_.col(i) = e.col(free_[i]);
    fixed_modes_.resize(e.rows(), static_cast<Eigen::Index>(fixed_.size()));
    for (std::size_t i = 0; i < fixed_.size(); ++i) fixed_modes_.col(i) = e.col(fixed_[i]);
  }

  bool linking() const { return !b_.empty(); }
  const std::vector<int>& b() const { return b_; }

  FieldState operator()(const FieldState& s) const {
    if (b_.empty()) return variational::nehari_project(m_, s);
    VectorXd a[2] = {s.a1, s.a2};
    for (int j = 0; j < 2; ++j) {
      const VectorXd& u = s.u(j);
      if (variational::is_constant(u) && rho_ * std::exp(u[0]) > m_.spectrum().eigenvalues[b_.back()]) {
        for (int k : free_) a[j][k] = 0.0;
        continue;
      }
      const VectorXd w = m_.spinor_weight(u);
      MatrixXd sys = rho_ * (free_modes_.transpose() * w.asDiagonal() * free_modes_);
      for (std::size_t i = 0; i < free_.size(); ++i) sys(i, i) -= m_.spectrum().eigenvalues[free_[i]];
      VectorXd af(fixed_.size());
      for (std::size_t i = 0; i < fixed_.size(); ++i) af[i] = a[j][fixed_[i]];
      const VectorXd rhs = -rho_ * (free_modes_.transpose() * w.cwiseProduct(fixed_modes_ * af));
      Eigen::LLT<MatrixXd> llt(sys);
      if (llt.info() != Eigen::Success) {
        // J is not bounded above in the b directions here; keep the
        // Nehari part only.
        const VectorXd an = variational::negative_part(m_, u, a[j], rho_);
        for (std::size_t i = 0; i < m_.negative().size(); ++i) a[j][m_.negative()[i]] = an[i];
        continue;
      }
      const VectorXd x = llt.solve(rhs);
      for (std::size_t i = 0; i < free_.size(); ++i) a[j][free_[i]] = x[i];
    }
    return variational::from_coeffs(m_.spectrum(), s.u1, s.u2, a[0], a[1], s.rho, s.cartan);
  }

private:
  const Model& m_;
  double rho_;
  std::vector<int> b_, free_, fixed_;
  MatrixXd free_modes_, fixed_modes_;
};

struct MountainPassResult {
  FieldState state;
  SolverReport report;
  // Path maximum before and after each accepted deformation step.
  std::vector<std::pair<double, double>> deformation_max;
  bool polished = false;
};

inline FieldState midpoint(const Model& m, const FieldState& a, const FieldState& b) {
  return variational::from_coeffs(m.spectrum(), 0.5 * (a.u1 + b.u1), 0.5 * (a.u2 + b.u2), 0.5 * (a.a1 + b.a1),
                                  0.5 * (a.a2 + b.a2), a.rho, a.cartan);
}

inline constexpr int kStallWindow = 300;

/// Deforms a path from the trivial state to `endpoint` by pushing its
/// maximizer down the constrained gradient. When the path maximum stops
/// decreasing the maximizer is handed to a bordered Newton polish, which is
/// accepted only if it lands on a nontrivial critical point at the path
/// level.
inline MountainPassResult mountain_pass_search(const Model& m, const SolverConfig& cfg,
                                               std::optional<FieldState> endpoint = std::nullopt) {
  cfg.validate();
  spinops::spectral_split(m.spectrum(), cfg.rho);
  const Lifter lift(m, cfg.rho);
  const FieldState zero = variational::trivial_state(m.spectrum(), cfg.rho, cfg.cartan);
  FieldState end = endpoint ? lift(*endpoint) : default_endpoint(m, cfg.rho, 0, cfg.cartan);

  MountainPassResult out{zero, {}, {}};
  SolverReport& rep = out.report;
  rep.rho = cfg.rho;
  rep.seed = cfg.rng_seed;
  rep.nehari_dim = static_cast<int>(lift.b().size());

  std::vector<FieldState> path;
  std::vector<double> values;
  const int n = cfg.path_points;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    FieldState p = variational::from_coeffs(m.spectrum(), t * end.u1, t * end.u2, t * end.a1, t * end.a2, cfg.rho,
                                            end.cartan);
    path.push_back(lift(p));
    values.push_back(variational::evaluate_J(m, path.back()).J);
  }
  auto spacing = [&](std::size_t i) { return m.h_norm(variational::difference(path[i + 1], path[i])); };
  double base_spacing = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) base_spacing = std::max(base_spacing, spacing(i));
  const std::size_t max_points = 4 * static_cast<std::size_t>(n);

  double h = cfg.step_size;
  int trivial_run = 0;
  double best_max = std::numeric_limits<double>::infinity();
  int best_step = 0;
  bool stalled = false;
  rep.outcome = Outcome::max_iters;
  std::size_t imax = 0;
  for (int step = 0;; ++step) {
    imax = static_cast<std::size_t>(std::max_element(values.begin() + 1, values.end() - 1) - values.begin());
    FieldState& p = path[imax];
    const Tangent g = variational::tangent_gradient(m, p);
    const double gn = m.h_norm(g);
    rep.iterate_log.push_back({step, values[imax], gn});
    rep.steps = step;
    if (!std::isfinite(values[imax]) || !std::isfinite(gn)) {
      rep.outcome = Outcome::numeric_failure;
      rep.message = "non-finite iterate";
      break;
    }
    if (values[imax] < 1e-12 && psi_l2(m, p) < 1e-6) {
      if (++trivial_run >= 100) {
        rep.outcome = Outcome::trivial_attractor;
        break;
      }
    } else {
      trivial_run = 0;
    }
    if (gn <= cfg.deform_tol) {
      rep.outcome = Outcome::converged;
      break;
    }
    if (step >= cfg.max_deform_steps) break;
    if (values[imax] < best_max * (1.0 - 1e-9) - 1e-14) {
      best_max = values[imax];
      best_step = step;
    } else if (step - best_step >= kStallWindow) {
      stalled = true;
      break;
    }

    const double before = values[imax];
    bool accepted = false;
    for (int tries = 0; tries < 60 && !accepted; ++tries) {
      FieldState trial;
      double jt = std::numeric_limits<double>::infinity();
      try {
        trial = lift(variational::advance(m.spectrum(), p, g, -h));
        jt = variational::evaluate_J(m, trial).J;
      } catch (const Error&) {
        jt = std::numeric_limits<double>::infinity();
      }
      if (jt < values[imax]) {
        p = std::move(trial);
        values[imax] = jt;
        accepted = true;
        h *= 1.2;
      } else {
        h *= 0.5;
      }
    }
    if (!accepted) {
      rep.outcome = Outcome::numeric_failure;
      rep.message = "step size underflow";
      break;
    }
    out.deformation_max.emplace_back(before, *std::max_element(values.begin() + 1, values.end() - 1));
    // Keep the path resolved around the moved point.
    for (std::size_t side : {imax, imax - 1}) {
      if (path.size() >= max_points) break;
      if (spacing(side) > 2.0 * base_spacing) {
        FieldState mid = lift(midpoint(m, path[side], path[side + 1]));
        const double jm = variational::evaluate_J(m, mid).J;
        path.insert(path.begin() + static_cast<std::ptrdiff_t>(side) + 1, std::move(mid));
        values.insert(values.begin() + static_cast<std::ptrdiff_t>(side) + 1, jm);
        if (side == imax - 1) ++imax;
      }
    }
  }
  out.state = path[imax];
  rep.linking_level_estimate = *std::max_element(values.begin() + 1, values.end() - 1);
  if (stalled || (rep.outcome == Outcome::max_iters && psi_l2(m, out.state) >= cfg.nontrivial_floor)) {
    const auto polish = newton_refine(m, out.state, cfg);
    const double level = rep.linking_level_estimate;
    if (polish.report.outcome == Outcome::converged && psi_l2(m, polish.state) >= cfg.nontrivial_floor &&
        variational::nehari_constraint(m, polish.state).norm() <= 1e-8 &&
        std::abs(polish.report.J_value - level) <= 1e-2 * std::max(1.0, std::abs(level))) {
      out.state = polish.state;
      out.polished = true;
      rep.outcome = Outcome::converged;
      rep.message = "path stalled; maximizer polished";
      const int offset = rep.iterate_log.back().step + 1;
      for (auto rec : polish.report.iterate_log) {
        rec.step += offset;
        rep.iterate_log.push_back(rec);
      }
      rep.steps = rep.iterate_log.back().step;
    } else if (stalled) {
      rep.message = "path maximum stalled";
    }
  }
  fill_report_tail(m, out.state, cfg, rep);
  if (rep.outcome == Outcome::converged && psi_l2(m, out.state) < cfg.nontrivial_floor)
    rep.outcome = Outcome::trivial_attractor;
  return out;
}

// ---------------------------------------------------------------------------
// Verification.

struct Verdict {
  bool residual_ok = false;
  bool constraint_ok = false;
  bool nontrivial = false;
  bool efimov_flag = false;
  double J = 0.0;
  ResidualSummary residuals;
  double constraint_norm = 0.0;
  double psi_norm = 0.0;
  std::string classification;  // mountain_pass | linking
  std::string verdict;         // solution | trivial solution | not a solution
};

inline Verdict verify_solution(const Model& m, const FieldState& s, const SolverConfig& cfg) {
  Verdict v;
  const auto r = variational::el_residual(m, s);
  v.residuals = summarize(r);
  v.residual_ok = v.residuals.max() <= 100.0 * cfg.newton_tol;
  v.constraint_norm = variational::nehari_constraint(m, s).norm();
  v.constraint_ok = v.constraint_norm <= 1e-8;
  v.psi_norm = psi_l2(m, s);
  v.nontrivial = v.psi_norm >= cfg.nontrivial_floor;
  v.efimov_flag = v.nontrivial && variational::standard_deviation(m, s.u1) <= 1e-6 &&
                  variational::standard_deviation(m, s.u2) <= 1e-6;
  v.J = variational::evaluate_J(m, s).J;
  v.classification = s.rho < m.spectrum().lambda_first() ? "mountain_pass" : "linking";
  if (!(v.residual_ok && v.constraint_ok)) {
    v.verdict = "not a solution";
  } else if (!v.nontrivial) {
    v.verdict = "trivial solution";
  } else {
    v.verdict = "solution";
  }
  return v;
}

/// Mountain pass (or linking) search followed by Newton refinement.
struct SolveResult {
  FieldState state;
  SolverReport report;
  SolverReport search_report;
};

inline SolveResult solve(const Model& m, const SolverConfig& cfg, std::optional<FieldState> warm = std::nullopt) {
  SolveResult out{variational::trivial_state(m.spectrum(), cfg.rho, cfg.cartan), {}, {}};
  FieldState start = out.state;
  if (warm) {
    start = *warm;
    start.rho = cfg.rho;
    start.cartan = cfg.cartan;
    start = Lifter(m, cfg.rho)(start);
    out.search_report.outcome = Outcome::converged;
    out.search_report.message = "warm start";
  } else {
    auto mp = mountain_pass_search(m, cfg);
    out.search_report = mp.report;
    if (mp.report.outcome == Outcome::trivial_attractor || mp.report.outcome == Outcome::numeric_failure) {
      out.state = mp.state;
      out.report = mp.report;
      return out;
    }
    start = mp.state;
  }
  auto nr = newton_refine(m, start, cfg);
  out.state = nr.state;
  out.report = nr.report;
  out.report.linking_level_estimate = out.search_report.linking_level_estimate;
  if (out.report.message.empty()) out.report.message = out.search_report.message;
  out.report.iterate_log = out.search_report.iterate_log;
  const int offset = out.report.iterate_log.empty() ? 0 : out.report.iterate_log.back().step + 1;
  for (auto rec : nr.report.iterate_log) {
    rec.step += offset;
    out.report.iterate_log.push_back(rec);
  }
  out.report.steps = out.search_report.steps + nr.report.steps;
  if (out.report.outcome == Outcome::converged) {
    const auto v = verify_solution(m, out.state, cfg);
    if (!v.nontrivial) {
      out.report.outcome = Outcome::trivial_attractor;
      out.report.message = "refinement reached the trivial solution";
    } else if (!v.constraint_ok) {
      out.report.outcome = Outcome::numeric_failure;
      out.report.message = "constraint violated after refinement";
    }
  }
  return out;
}

struct SweepEntry {
  double rho = 0.0;
  SolverReport report;
  std::optional<FieldState> state;
};

/// Solves along an increasing rho grid, warm-starting from the last
/// converged state; jumps of |idx_pos_b| are noted in the report message.
inline std::vector<SweepEntry> continuation_sweep(const Model& m, const std::vector<double>& rho_grid,
                                                  const SolverConfig& base) {
  for (std::size_t i = 1; i < rho_grid.size(); ++i)
    if (!(rho_grid[i] > rho_grid[i - 1])) fail_usage("rho grid must be strictly increasing");
  std::vector<SweepEntry> out;
  std::optional<FieldState> warm;
  int prev_dim = -1;
  for (double rho : rho_grid) {
    SweepEntry e;
    e.rho = rho;
    SolverConfig cfg = base;
    cfg.rho = rho;
    try {
      spinops::spectral_split(m.spectrum(), rho);
      const int dim = static_cast<int>(b_modes(m, rho).size());
      std::ostringstream note;
      if (prev_dim >= 0 && dim != prev_dim) note << "dim N jumps " << prev_dim << " -> " << dim << "; ";
      const bool crossed = prev_dim >= 0 && dim != prev_dim;
      prev_dim = dim;
      auto res = solve(m, cfg, crossed ? std::nullopt : warm);
      if (res.report.outcome != Outcome::converged && warm && !crossed) res = solve(m, cfg);
      e.report = res.report;
      e.report.message = note.str() + e.report.message;
      e.report.nehari_dim = dim;
      if (res.report.outcome == Outcome::converged) {
        warm = res.state;
        e.state = res.state;
      }
    } catch (const Error& err) {
      e.report.outcome = Outcome::numeric_failure;
      e.report.rho = rho;
      e.report.message = err.what();
    }
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cone and index diagnostics.

struct ConeSample {
  double J = 0.0;
  double norm2 = 0.0;  // |u|^2_{H1} + |psi|^2_{H^{1/2}}
};

struct ConeDiagnostic {
  double tau = 0.0, R = 0.0;
  double C = 0.0;  // min J / norm2 over accepted samples
  int samples = 0;
  int rejected_in_cone = 0;
  bool all_positive = false;
  double max_J_on_linear_part = 0.0;  // sup J over sampled {0} x span(b)
  int linear_samples = 0;
};

inline double state_norm2(const Model& m, const FieldState& s) {
  return m.h1_norm2(s.u1) + m.h1_norm2(s.u2) + m.half_norm2(s.a1) + m.half_norm2(s.a2);
}

/// |u|^2 + |psi^-|^2 + |psi_a^+|^2 < tau |psi_b^+|^2.
inline bool in_cone(const Model& m, const FieldState& s, double tau, const std::vector<int>& b) {
  std::vector<bool> is_b(m.spinor_dim(), false);
  for (int k : b) is_b[k] = true;
  double inside = m.h1_norm2(s.u1) + m.h1_norm2(s.u2), bpart = 0.0;
  const auto& w = m.half_weights();
  for (int k = 0; k < m.spinor_dim(); ++k) {
    const double v = w[k] * (s.a1[k] * s.a1[k] + s.a2[k] * s.a2[k]);
    (is_b[k] ? bpart : inside) += v;
  }
  return inside < tau * bpart;
}

/// Samples N_rho on the sphere of radius R outside the cone and checks
/// J >= C (|u|^2 + |psi|^2); also samples {0} x span(b).
inline ConeDiagnostic cone_diagnostic(const Model& m, double rho, double tau, double R, int samples,
                                      std::uint64_t seed) {
  spinops::spectral_split(m.spectrum(), rho);
  const auto b = b_modes(m, rho);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ConeDiagnostic d;
  d.tau = tau;
  d.R = R;
  d.C = std::numeric_limits<double>::infinity();
  const auto& pos = m.positive();
  const int budget = 50 * samples;
  int tries = 0;
  while (d.samples < samples && tries++ < budget) {
    // Direction: random split of the radius between u and psi^+ parts.
    const double share = unit(rng);
    VectorXd u1 = variational::random_scalar(m, rng, std::sqrt(share / 2.0));
    VectorXd u2 = variational::random_scalar(m, rng, std::sqrt(share / 2.0));
    VectorXd a1 = variational::random_coeffs(m, pos, rng, std::sqrt((1.0 - share) / 2.0));
    VectorXd a2 = variational::random_coeffs(m, pos, rng, std::sqrt((1.0 - share) / 2.0));
    auto at = [&](double t) {
      return variational::nehari_project(m, t * u1, t * u2, t * a1, t * a2, rho);
    };
    // Rescale until the projected state has norm R; the norm is nearly
    // linear in the scale, bisection is the fallback.
    double t = R;
    FieldState s = at(t);
    bool hit = false;
    for (int it = 0; it < 30 && !hit; ++it) {
      const double nrm = std::sqrt(state_norm2(m, s));
      if (std::abs(nrm - R) <= 1e-12 * R) {
        hit = true;
        break;
      }
      t *= R / nrm;
      s = at(t);
    }
    if (!hit) {
      double lo = 0.0, hi = 2.0 * R;
      while (state_norm2(m, at(hi)) < R * R) hi *= 2.0;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (state_norm2(m, at(mid)) < R * R ? lo : hi) = mid;
      }
      s = at(0.5 * (lo + hi));
    }
    if (in_cone(m, s, tau, b)) {
      ++d.rejected_in_cone;
      continue;
    }
    const double j = variational::evaluate_J(m, s).J;
    d.C = std::min(d.C, j / state_norm2(m, s));
    ++d.samples;
  }
  d.all_positive = d.samples > 0 && d.C > 0.0;
  d.max_J_on_linear_part = b.empty() ? 0.0 : -std::numeric_limits<double>::infinity();
  if (!b.empty()) {
    const VectorXd z = VectorXd::Zero(m.vertex_count());
    for (int i = 0; i < samples; ++i) {
      const double r = R * unit(rng);
      const FieldState s = variational::nehari_project(m, z, z, variational::random_coeffs(m, b, rng, r),
                                                       variational::random_coeffs(m, b, rng, r), rho);
      d.max_J_on_linear_part = std::max(d.max_J_on_linear_part, variational::evaluate_J(m, s).J);
      ++d.linear_samples;
    }
  }
  return d;
}

/// Smallest tau in the sequence tau0, 2 tau0, ... (and R halved when needed)
/// for which all samples are positive.
inline ConeDiagnostic accept_cone(const Model& m, double rho, double tau0, double R0, int samples,
                                  std::uint64_t seed) {
  ConeDiagnostic last;
  for (double R = R0; R > 1e-3; R *= 0.5) {
    for (double tau = tau0; tau <= tau0 * 1024.0; tau *= 2.0) {
      last = cone_diagnostic(m, rho, tau, R, samples, seed);
      if (last.all_positive && last.samples == samples) return last;
    }
  }
  return last;
}

/// Negative eigenvalues of the Hessian at the trivial state restricted to
/// its tangent space (u, psi^+).
inline int trivial_negative_index(const Model& m, double rho) {
  const FieldState z = variational::trivial_state(m.spectrum(), rho);
  const MatrixXd h = variational::hessian(m, z);
  const int nv = m.vertex_count(), n = m.spinor_dim();
  std::vector<int> idx;
  for (int i = 0; i < 2 * nv; ++i) idx.push_back(i);
  for (int j = 0; j < 2; ++j)
    for (int k : m.positive()) idx.push_back(2 * nv + j * n + k);
  MatrixXd r(idx.size(), idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t c = 0; c < idx.size(); ++c) r(a, c) = h(idx[a], idx[c]);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(r, Eigen::EigenvaluesOnly);
  return static_cast<int>((es.eigenvalues().array() < 0.0).count());
}

} // namespace supertoda::saddle
