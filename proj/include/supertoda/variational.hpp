#pragma once

// The action functional J = F + Q on (u1, u2, psi1, psi2), its derivatives,
// the Euler-Lagrange residuals and the Nehari manifold
//   N = { P^- (1+|D|)^{-1} (D psi_j - rho e^{u_j} psi_j) = 0, j = 1, 2 }.
//
// Spinors are handled in spectral coordinates a_j (psi_j = Psi a_j). All
// derivatives below are with respect to (u_j, a_j). Integrals use the
// lumped vertex areas.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "supertoda/error.hpp"
#include "supertoda/hypmesh.hpp"
#include "supertoda/quaternion.hpp"
#include "supertoda/spinops.hpp"

namespace supertoda::variational {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using spinops::DiracSpectrum;

inline constexpr double kOverflowLimit = 300.0;
inline constexpr double kSeriesCutoff = 1e-4;

inline Eigen::Matrix2d su3_cartan() {
  Eigen::Matrix2d a;
  a << 2.0, -1.0, -1.0, 2.0;
  return a;
}

inline void validate_cartan(const Eigen::Matrix2d& a) {
  if (a(0, 1) != a(1, 0)) fail_usage("cartan matrix must be symmetric");
  if (!(a(0, 0) > 0.0 && a(1, 1) > 0.0)) fail_usage("cartan matrix must have a positive diagonal");
  if (!(a(0, 0) > std::abs(a(0, 1)) && a(1, 1) > std::abs(a(1, 0))))
    fail_usage("cartan matrix must be strictly diagonally dominant");
}

/// e^{2u} - 1 - 2u without cancellation near 0.
inline double exp_defect(double u) {
  if (std::abs(u) < kSeriesCutoff) {
    const double u2 = u * u;
    return 2.0 * u2 + (4.0 / 3.0) * u2 * u + (2.0 / 3.0) * u2 * u2;
  }
  return std::expm1(2.0 * u) - 2.0 * u;
}

inline void guard_range(const VectorXd& u) {
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u[i]) || u[i] > kOverflowLimit) fail("field out of numeric range");
  }
}

// ---------------------------------------------------------------------------

struct FieldState {
  VectorXd u1, u2;      // per vertex
  VectorXd psi1, psi2;  // per vertex, 4 components each
  VectorXd a1, a2;      // spectral coefficients
  double rho = 0.0;
  Eigen::Matrix2d cartan = su3_cartan();

  const VectorXd& u(int j) const { return j == 0 ? u1 : u2; }
  const VectorXd& psi(int j) const { return j == 0 ? psi1 : psi2; }
  const VectorXd& a(int j) const { return j == 0 ? a1 : a2; }
};

inline FieldState from_coeffs(const DiracSpectrum& spec, VectorXd u1, VectorXd u2, VectorXd a1, VectorXd a2,
                              double rho, const Eigen::Matrix2d& cartan = su3_cartan()) {
  const int nv = spec.vertex_count();
  if (u1.size() != nv || u2.size() != nv || a1.size() != spec.size() || a2.size() != spec.size())
    fail_usage("field sizes do not match the spectrum");
  validate_cartan(cartan);
  FieldState s;
  s.psi1 = spec.synthesize(a1);
  s.psi2 = spec.synthesize(a2);
  s.u1 = std::move(u1);
  s.u2 = std::move(u2);
  s.a1 = std::move(a1);
  s.a2 = std::move(a2);
  s.rho = rho;
  s.cartan = cartan;
  return s;
}

inline FieldState from_spinors(const DiracSpectrum& spec, VectorXd u1, VectorXd u2, const VectorXd& psi1,
                               const VectorXd& psi2, double rho, const Eigen::Matrix2d& cartan = su3_cartan()) {
  if (psi1.size() != spec.size() || psi2.size() != spec.size()) fail_usage("spinor sizes do not match the spectrum");
  return from_coeffs(spec, std::move(u1), std::move(u2), spec.analyze(psi1), spec.analyze(psi2), rho, cartan);
}

inline FieldState trivial_state(const DiracSpectrum& spec, double rho, const Eigen::Matrix2d& cartan = su3_cartan()) {
  const int nv = spec.vertex_count();
  return from_coeffs(spec, VectorXd::Zero(nv), VectorXd::Zero(nv), VectorXd::Zero(spec.size()),
                     VectorXd::Zero(spec.size()), rho, cartan);
}

/// Right-multiplies both spinor fields by the unit quaternion q.
inline FieldState quaternion_act(const DiracSpectrum& spec, const FieldState& s, const Quat& q) {
  const auto p = spinops::quaternion_act({s.psi1, s.psi2}, q);
  return from_spinors(spec, s.u1, s.u2, p.first, p.second, s.rho, s.cartan);
}

/// Vector in the (u1, u2, a1, a2) coordinates: derivatives, gradients,
/// search directions.
struct Tangent {
  VectorXd u1, u2, a1, a2;

  static Tangent zero(int nv, int n) {
    return {VectorXd::Zero(nv), VectorXd::Zero(nv), VectorXd::Zero(n), VectorXd::Zero(n)};
  }
  VectorXd& u(int j) { return j == 0 ? u1 : u2; }
  VectorXd& a(int j) { return j == 0 ? a1 : a2; }
  const VectorXd& u(int j) const { return j == 0 ? u1 : u2; }
  const VectorXd& a(int j) const { return j == 0 ? a1 : a2; }

  Tangent& operator+=(const Tangent& o) {
    u1 += o.u1; u2 += o.u2; a1 += o.a1; a2 += o.a2;
    return *this;
  }
  Tangent& operator-=(const Tangent& o) {
    u1 -= o.u1; u2 -= o.u2; a1 -= o.a1; a2 -= o.a2;
    return *this;
  }
  Tangent& operator*=(double t) {
    u1 *= t; u2 *= t; a1 *= t; a2 *= t;
    return *this;
  }
  friend Tangent operator+(Tangent a, const Tangent& b) { return a += b; }
  friend Tangent operator-(Tangent a, const Tangent& b) { return a -= b; }
  friend Tangent operator*(double t, Tangent a) { return a *= t; }

  /// Euclidean pairing; a derivative paired with a direction.
  double dot(const Tangent& o) const { return u1.dot(o.u1) + u2.dot(o.u2) + a1.dot(o.a1) + a2.dot(o.a2); }

  VectorXd packed() const {
    VectorXd x(u1.size() * 2 + a1.size() * 2);
    x << u1, u2, a1, a2;
    return x;
  }
  static Tangent unpack(const VectorXd& x, int nv, int n) {
    return {x.segment(0, nv), x.segment(nv, nv), x.segment(2 * nv, n), x.segment(2 * nv + n, n)};
  }
};

inline FieldState advance(const DiracSpectrum& spec, const FieldState& s, const Tangent& d, double t) {
  return from_coeffs(spec, s.u1 + t * d.u1, s.u2 + t * d.u2, s.a1 + t * d.a1, s.a2 + t * d.a2, s.rho, s.cartan);
}

inline Tangent difference(const FieldState& a, const FieldState& b) {
  return {a.u1 - b.u1, a.u2 - b.u2, a.a1 - b.a1, a.a2 - b.a2};
}

// ---------------------------------------------------------------------------

/// Mesh operators and spectrum shared by all evaluations. Immutable.
class Model {
public:
  Model(const hypmesh::SurfaceMesh& mesh, DiracSpectrum spec)
      : laplace_(hypmesh::laplace_pair(mesh)), spec_(std::move(spec)) {
    if (spec_.kernel_dim > 0) fail("nontrivial kernel (dim " + std::to_string(spec_.kernel_dim) + ")");
    if (spec_.vertex_count() != mesh.vertex_count()) fail_usage("spectrum does not belong to this mesh");
    Eigen::SparseMatrix<double> h = laplace_.stiffness;
    for (int v = 0; v < mesh.vertex_count(); ++v) h.coeffRef(v, v) += laplace_.mass[v];
    h1_ = h;
    solver_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(h1_);
    if (solver_->info() != Eigen::Success) fail_internal("H1 factorization failed");
    neg_ = spec_.negative_indices();
    pos_ = spec_.positive_indices();
    h_half_ = (1.0 + spec_.eigenvalues.array().abs()).matrix();
    psi_neg_.resize(spec_.size(), static_cast<Eigen::Index>(neg_.size()));
    for (std::size_t k = 0; k < neg_.size(); ++k) psi_neg_.col(k) = spec_.eigenspinors.col(neg_[k]);
    psi_pos_.resize(spec_.size(), static_cast<Eigen::Index>(pos_.size()));
    for (std::size_t k = 0; k < pos_.size(); ++k) psi_pos_.col(k) = spec_.eigenspinors.col(pos_[k]);
  }

  int vertex_count() const { return static_cast<int>(laplace_.mass.size()); }
  int spinor_dim() const { return spec_.size(); }
  const hypmesh::LaplacePair& laplace() const { return laplace_; }
  const VectorXd& mass() const { return laplace_.mass; }
  const DiracSpectrum& spectrum() const { return spec_; }
  const std::vector<int>& negative() const { return neg_; }
  const std::vector<int>& positive() const { return pos_; }
  const MatrixXd& negative_modes() const { return psi_neg_; }
  const MatrixXd& positive_modes() const { return psi_pos_; }
  /// 1 + |lambda_k|: the H^{1/2} weights of spectral coefficients.
  const VectorXd& half_weights() const { return h_half_; }
  const Eigen::SparseMatrix<double>& h1_matrix() const { return h1_; }

  VectorXd solve_h1(const VectorXd& rhs) const { return solver_->solve(rhs); }
  MatrixXd solve_h1(const MatrixXd& rhs) const { return solver_->solve(rhs); }

  /// Per-component spinor weights A_v e^{u_v}.
  VectorXd spinor_weight(const VectorXd& u) const {
    VectorXd w(4 * u.size());
    for (Eigen::Index v = 0; v < u.size(); ++v) w.segment<4>(4 * v).setConstant(laplace_.mass[v] * std::exp(u[v]));
    return w;
  }

  /// <e^u Psi_m, Psi_k> for rows and columns given by mode matrices.
  MatrixXd gram(const VectorXd& u, const MatrixXd& rows, const MatrixXd& cols) const {
    return rows.transpose() * spinor_weight(u).asDiagonal() * cols;
  }

  /// H-inner product on tangents: H1 on scalars, 1+|lambda| on coefficients.
  double h_inner(const Tangent& x, const Tangent& y) const {
    return x.u1.dot(h1_ * y.u1) + x.u2.dot(h1_ * y.u2) + x.a1.dot(h_half_.cwiseProduct(y.a1)) +
           x.a2.dot(h_half_.cwiseProduct(y.a2));
  }
  double h_norm(const Tangent& x) const { return std::sqrt(h_inner(x, x)); }

  /// Riesz representative of a derivative.
  Tangent riesz(const Tangent& d) const {
    return {solve_h1(d.u1), solve_h1(d.u2), d.a1.cwiseQuotient(h_half_), d.a2.cwiseQuotient(h_half_)};
  }
  Tangent riesz_inverse(const Tangent& g) const {
    return {h1_ * g.u1, h1_ * g.u2, g.a1.cwiseProduct(h_half_), g.a2.cwiseProduct(h_half_)};
  }

  /// H^{-1} norm of a strong-form scalar residual r (the functional M r).
  double dual_h1_norm(const VectorXd& r) const {
    const VectorXd f = laplace_.mass.cwiseProduct(r);
    return std::sqrt(std::max(0.0, f.dot(solve_h1(f))));
  }
  /// H^{-1/2} norm of a vertex spinor field.
  double dual_half_norm(const VectorXd& r) const {
    const VectorXd c = spec_.analyze(r);
    return std::sqrt(c.cwiseAbs2().cwiseQuotient(h_half_).sum());
  }
  double h1_norm2(const VectorXd& u) const { return u.dot(h1_ * u); }
  double half_norm2(const VectorXd& a) const { return a.cwiseAbs2().dot(h_half_); }
  double l2_norm(const VectorXd& psi) const { return std::sqrt(std::max(0.0, spec_.l2_inner(psi, psi))); }

private:
  hypmesh::LaplacePair laplace_;
  DiracSpectrum spec_;
  Eigen::SparseMatrix<double> h1_;
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> solver_;
  std::vector<int> neg_, pos_;
  VectorXd h_half_;
  MatrixXd psi_neg_, psi_pos_;
};

inline void check_state(const Model& m, const FieldState& s) {
  if (s.u1.size() != m.vertex_count() || s.u2.size() != m.vertex_count() || s.a1.size() != m.spinor_dim() ||
      s.a2.size() != m.spinor_dim())
    fail_usage("state does not match the model");
  if (!(s.rho > 0.0)) fail_usage("rho must be positive");
  guard_range(s.u1);
  guard_range(s.u2);
}

// ---------------------------------------------------------------------------
// Functional.

struct Energy {
  double J = 0.0, F = 0.0, Q = 0.0;
};

inline Energy evaluate_J(const Model& m, const FieldState& s) {
  check_state(m, s);
  const auto& lap = m.laplace();
  const Eigen::Matrix2d ainv = s.cartan.inverse();
  const VectorXd su1 = lap.stiffness * s.u1, su2 = lap.stiffness * s.u2;
  double grad = ainv(0, 0) * s.u1.dot(su1) + 2.0 * ainv(0, 1) * s.u1.dot(su2) + ainv(1, 1) * s.u2.dot(su2);
  double pot = 0.0;
  for (int v = 0; v < m.vertex_count(); ++v) pot += lap.mass[v] * (exp_defect(s.u1[v]) + exp_defect(s.u2[v]));
  const auto& lam = m.spectrum().eigenvalues;
  double q = 0.0;
  for (int j = 0; j < 2; ++j) {
    q += s.a(j).cwiseAbs2().dot(lam);
    const VectorXd n2 = pointwise_norm2(s.psi(j));
    double coupling = 0.0;
    for (int v = 0; v < m.vertex_count(); ++v) coupling += lap.mass[v] * std::exp(s.u(j)[v]) * n2[v];
    q -= s.rho * coupling;
  }
  Energy e;
  e.F = 0.5 * grad + pot;
  e.Q = q;
  e.J = e.F + e.Q;
  return e;
}

/// Partial derivatives of J in (u, a) coordinates.
inline Tangent derivative_J(const Model& m, const FieldState& s) {
  check_state(m, s);
  const auto& lap = m.laplace();
  const Eigen::Matrix2d ainv = s.cartan.inverse();
  const VectorXd su1 = lap.stiffness * s.u1, su2 = lap.stiffness * s.u2;
  Tangent d;
  d.u1 = ainv(0, 0) * su1 + ainv(0, 1) * su2;
  d.u2 = ainv(1, 0) * su1 + ainv(1, 1) * su2;
  const auto& lam = m.spectrum().eigenvalues;
  for (int j = 0; j < 2; ++j) {
    const VectorXd n2 = pointwise_norm2(s.psi(j));
    VectorXd& du = d.u(j);
    for (int v = 0; v < m.vertex_count(); ++v) {
      const double e = std::exp(s.u(j)[v]);
      du[v] += lap.mass[v] * (2.0 * std::expm1(2.0 * s.u(j)[v]) - s.rho * e * n2[v]);
    }
    const VectorXd weighted = m.spinor_weight(s.u(j)).cwiseProduct(s.psi(j));
    d.a(j) = 2.0 * lam.cwiseProduct(s.a(j)) - 2.0 * s.rho * (m.spectrum().eigenspinors.transpose() * weighted);
  }
  return d;
}

/// Riesz representative of dJ in the H-inner product.
inline Tangent gradient_J(const Model& m, const FieldState& s) { return m.riesz(derivative_J(m, s)); }

// ---------------------------------------------------------------------------
// Euler-Lagrange residuals.

struct Residuals {
  VectorXd u1, u2;          // scalar (sT) blocks, strong form
  VectorXd psi1, psi2;      // spinor blocks D psi - rho e^u psi
  VectorXd p1, p2;          // scalar blocks of the Cartan-multiplied form
  double sT_u = 0.0;        // H^{-1}
  double sT_psi = 0.0;      // H^{-1/2}
  double sTprime = 0.0;     // H^{-1}
  double max_norm() const { return std::max({sT_u, sT_psi, sTprime}); }
};

inline Residuals el_residual(const Model& m, const FieldState& s) {
  check_state(m, s);
  const auto& lap = m.laplace();
  const int nv = m.vertex_count();
  constexpr double kg = -1.0;
  const Eigen::Matrix2d ainv = s.cartan.inverse();
  const VectorXd lu1 = (lap.stiffness * s.u1).cwiseQuotient(lap.mass);  // -Laplacian
  const VectorXd lu2 = (lap.stiffness * s.u2).cwiseQuotient(lap.mass);
  const VectorXd n1 = pointwise_norm2(s.psi1), n2 = pointwise_norm2(s.psi2);

  VectorXd e1(nv), e2(nv), h1(nv), h2(nv);
  for (int v = 0; v < nv; ++v) {
    e1[v] = 2.0 * std::exp(2.0 * s.u1[v]) - s.rho * std::exp(s.u1[v]) * n1[v];
    e2[v] = 2.0 * std::exp(2.0 * s.u2[v]) - s.rho * std::exp(s.u2[v]) * n2[v];
    h1[v] = 2.0 * std::expm1(2.0 * s.u1[v]) - s.rho * std::exp(s.u1[v]) * n1[v];
    h2[v] = 2.0 * std::expm1(2.0 * s.u2[v]) - s.rho * std::exp(s.u2[v]) * n2[v];
  }
  Residuals r;
  // 2 e^{2u} + 2 K_g is evaluated as 2 expm1(2u) so the trivial state is exact.
  r.u1 = ainv(0, 0) * lu1 + ainv(0, 1) * lu2 + h1;
  r.u2 = ainv(1, 0) * lu1 + ainv(1, 1) * lu2 + h2;
  const double c1 = 2.0 * kg * (s.cartan(0, 0) + s.cartan(0, 1));
  const double c2 = 2.0 * kg * (s.cartan(1, 0) + s.cartan(1, 1));
  r.p1 = lu1 + s.cartan(0, 0) * e1 + s.cartan(0, 1) * e2;
  r.p2 = lu2 + s.cartan(1, 0) * e1 + s.cartan(1, 1) * e2;
  r.p1.array() += c1;
  r.p2.array() += c2;

  const auto& spec = m.spectrum();
  r.psi1 = spec.synthesize(spec.eigenvalues.cwiseProduct(s.a1));
  r.psi2 = spec.synthesize(spec.eigenvalues.cwiseProduct(s.a2));
  for (int v = 0; v < nv; ++v) {
    r.psi1.segment<4>(4 * v) -= s.rho * std::exp(s.u1[v]) * s.psi1.segment<4>(4 * v);
    r.psi2.segment<4>(4 * v) -= s.rho * std::exp(s.u2[v]) * s.psi2.segment<4>(4 * v);
  }
  r.sT_u = std::hypot(m.dual_h1_norm(r.u1), m.dual_h1_norm(r.u2));
  r.sT_psi = std::hypot(m.dual_half_norm(r.psi1), m.dual_half_norm(r.psi2));
  r.sTprime = std::hypot(m.dual_h1_norm(r.p1), m.dual_h1_norm(r.p2));
  return r;
}

// ---------------------------------------------------------------------------
// Nehari manifold.

/// g_{j,k} for negative modes k, smoothed by (1 + |lambda_k|)^{-1}.
struct NehariValues {
  VectorXd g1, g2;
  double norm() const { return std::hypot(g1.norm(), g2.norm()); }
  /// Same values before the (1 + |lambda|)^{-1} smoothing.
  VectorXd raw1, raw2;
  double raw_norm() const { return std::hypot(raw1.norm(), raw2.norm()); }
};

inline NehariValues nehari_constraint(const Model& m, const FieldState& s) {
  check_state(m, s);
  const auto& lam = m.spectrum().eigenvalues;
  const auto& neg = m.negative();
  NehariValues out;
  for (int j = 0; j < 2; ++j) {
    const VectorXd proj = m.negative_modes().transpose() * m.spinor_weight(s.u(j)).cwiseProduct(s.psi(j));
    VectorXd raw(neg.size()), g(neg.size());
    for (std::size_t k = 0; k < neg.size(); ++k) {
      raw[k] = lam[neg[k]] * s.a(j)[neg[k]] - s.rho * proj[k];
      g[k] = raw[k] / (1.0 + std::abs(lam[neg[k]]));
    }
    (j == 0 ? out.g1 : out.g2) = g;
    (j == 0 ? out.raw1 : out.raw2) = raw;
  }
  return out;
}

inline bool is_constant(const VectorXd& u) { return u.size() == 0 || u.maxCoeff() == u.minCoeff(); }

/// Negative coefficients solving (Lambda^- - rho G^{--}) a^- = rho G^{-+} a^+.
inline VectorXd negative_part(const Model& m, const VectorXd& u, const VectorXd& a, double rho) {
  const auto& neg = m.negative();
  const auto& pos = m.positive();
  if (is_constant(u)) return VectorXd::Zero(static_cast<Eigen::Index>(neg.size()));
  const auto& lam = m.spectrum().eigenvalues;
  VectorXd ap(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) ap[k] = a[pos[k]];
  const VectorXd w = m.spinor_weight(u);
  // Negated system matrix rho G^{--} - Lambda^- is positive definite.
  MatrixXd sys = rho * (m.negative_modes().transpose() * w.asDiagonal() * m.negative_modes());
  for (std::size_t k = 0; k < neg.size(); ++k) sys(k, k) -= lam[neg[k]];
  const VectorXd rhs = -rho * (m.negative_modes().transpose() * w.cwiseProduct(m.positive_modes() * ap));
  Eigen::LLT<MatrixXd> llt(sys);
  if (llt.info() != Eigen::Success) fail_internal("Nehari system is not definite");
  return llt.solve(rhs);
}

/// Replaces the negative spectral part of both spinors so that the state
/// lies on N; positive coefficients and u are kept.
inline FieldState nehari_project(const Model& m, const FieldState& s) {
  check_state(m, s);
  VectorXd a[2] = {s.a1, s.a2};
  for (int j = 0; j < 2; ++j) {
    const VectorXd an = negative_part(m, s.u(j), a[j], s.rho);
    for (std::size_t k = 0; k < m.negative().size(); ++k) a[j][m.negative()[k]] = an[k];
  }
  return from_coeffs(m.spectrum(), s.u1, s.u2, a[0], a[1], s.rho, s.cartan);
}

inline FieldState nehari_project(const Model& m, const VectorXd& u1, const VectorXd& u2, const VectorXd& a1_plus,
                                 const VectorXd& a2_plus, double rho,
                                 const Eigen::Matrix2d& cartan = su3_cartan()) {
  return nehari_project(m, from_coeffs(m.spectrum(), u1, u2, a1_plus, a2_plus, rho, cartan));
}

/// Rows of dG_j in (u_j, a_j) coordinates, one per negative mode.
struct ConstraintJacobian {
  MatrixXd du, da;  // |neg| x V, |neg| x 4V
};

inline ConstraintJacobian constraint_jacobian(const Model& m, const FieldState& s, int j) {
  const auto& lam = m.spectrum().eigenvalues;
  const auto& neg = m.negative();
  const auto& mass = m.mass();
  const int nv = m.vertex_count();
  ConstraintJacobian c;
  c.da = -s.rho * m.gram(s.u(j), m.negative_modes(), m.spectrum().eigenspinors);
  c.du.resize(static_cast<Eigen::Index>(neg.size()), nv);
  const VectorXd& psi = s.psi(j);
  for (std::size_t k = 0; k < neg.size(); ++k) {
    c.da(k, neg[k]) += lam[neg[k]];
    const auto col = m.negative_modes().col(k);
    for (int v = 0; v < nv; ++v)
      c.du(k, v) = -s.rho * mass[v] * std::exp(s.u(j)[v]) * col.segment<4>(4 * v).dot(psi.segment<4>(4 * v));
    const double scale = 1.0 / (1.0 + std::abs(lam[neg[k]]));
    c.da.row(k) *= scale;
    c.du.row(k) *= scale;
  }
  return c;
}

/// Component of grad_H J that is H-orthogonal to the range of dG*.
inline Tangent tangent_gradient(const Model& m, const FieldState& s) {
  Tangent g = gradient_J(m, s);
  if (m.negative().empty()) return g;
  for (int j = 0; j < 2; ++j) {
    const auto c = constraint_jacobian(m, s, j);
    // H^{-1} dG^T column blocks.
    const MatrixXd xu = m.solve_h1(MatrixXd(c.du.transpose()));
    const MatrixXd xa = m.half_weights().cwiseInverse().asDiagonal() * c.da.transpose();
    const MatrixXd schur = c.du * xu + c.da * xa;
    const VectorXd rhs = c.du * g.u(j) + c.da * g.a(j);
    Eigen::LDLT<MatrixXd> ldlt(schur);
    if (ldlt.info() != Eigen::Success) fail_internal("multiplier system is singular");
    const VectorXd mu = ldlt.solve(rhs);
    g.u(j) -= xu * mu;
    g.a(j) -= xa * mu;
  }
  return g;
}

// ---------------------------------------------------------------------------

/// Full Hessian of J in packed (u1, u2, a1, a2) coordinates.
inline MatrixXd hessian(const Model& m, const FieldState& s) {
  check_state(m, s);
  const int nv = m.vertex_count(), n = m.spinor_dim();
  const Eigen::Matrix2d ainv = s.cartan.inverse();
  const MatrixXd stiff = MatrixXd(m.laplace().stiffness);
  const auto& mass = m.mass();
  const auto& spec = m.spectrum();
  MatrixXd h = MatrixXd::Zero(2 * nv + 2 * n, 2 * nv + 2 * n);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) h.block(i * nv, j * nv, nv, nv) = ainv(i, j) * stiff;
  for (int j = 0; j < 2; ++j) {
    const VectorXd& u = s.u(j);
    const VectorXd& psi = s.psi(j);
    const VectorXd n2 = pointwise_norm2(psi);
    for (int v = 0; v < nv; ++v)
      h(j * nv + v, j * nv + v) += mass[v] * (4.0 * std::exp(2.0 * u[v]) - s.rho * std::exp(u[v]) * n2[v]);
    MatrixXd ua(nv, n);
    for (int v = 0; v < nv; ++v)
      ua.row(v) = (-2.0 * s.rho * mass[v] * std::exp(u[v])) *
                  (psi.segment<4>(4 * v).transpose() * spec.eigenspinors.middleRows(4 * v, 4));
    const int off = 2 * nv + j * n;
    h.block(j * nv, off, nv, n) = ua;
    h.block(off, j * nv, n, nv) = ua.transpose();
    MatrixXd aa = -2.0 * s.rho * m.gram(u, spec.eigenspinors, spec.eigenspinors);
    aa.diagonal() += 2.0 * spec.eigenvalues;
    h.block(off, off, n, n) = 0.5 * (aa + aa.transpose());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Diagnostics.

/// Split u = mean + oscillation with respect to the area measure.
inline std::pair<double, VectorXd> mean_oscillation(const Model& m, const VectorXd& u) {
  const double mean = m.mass().dot(u) / m.mass().sum();
  return {mean, (u.array() - mean).matrix()};
}

inline double standard_deviation(const Model& m, const VectorXd& u) {
  const auto [mean, osc] = mean_oscillation(m, u);
  (void)mean;
  return std::sqrt(m.mass().dot(osc.cwiseAbs2()) / m.mass().sum());
}

/// Random u with H1 norm r (per field).
inline VectorXd random_scalar(const Model& m, std::mt19937_64& rng, double r) {
  std::normal_distribution<double> n01;
  VectorXd u(m.vertex_count());
  for (auto& x : u) x = n01(rng);
  const double nrm = std::sqrt(m.h1_norm2(u));
  return u * (r / nrm);
}

/// Random coefficients supported on the given indices with H^{1/2} norm r.
inline VectorXd random_coeffs(const Model& m, const std::vector<int>& support, std::mt19937_64& rng, double r) {
  std::normal_distribution<double> n01;
  VectorXd a = VectorXd::Zero(m.spinor_dim());
  for (int k : support) a[k] = n01(rng);
  const double nrm = std::sqrt(m.half_norm2(a));
  return nrm > 0.0 ? VectorXd(a * (r / nrm)) : a;
}

/// min over samples of F(u) / |u|^2_{H1} for random u with |u|_{H1} <= R.
inline double coercivity_constant(const Model& m, double R, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> radius(0.05, 1.0);
  double c = std::numeric_limits<double>::infinity();
  const int n = m.spinor_dim();
  for (int i = 0; i < samples; ++i) {
    const double r = R * radius(rng);
    FieldState s = from_coeffs(m.spectrum(), random_scalar(m, rng, r / std::sqrt(2.0)),
                               random_scalar(m, rng, r / std::sqrt(2.0)), VectorXd::Zero(n), VectorXd::Zero(n), 1.0);
    const double f = evaluate_J(m, s).F;
    c = std::min(c, f / (m.h1_norm2(s.u1) + m.h1_norm2(s.u2)));
  }
  return c;
}

/// max over samples (u, psi^+) in the ball of radius R of
/// |psi^-|_{H^{1/2}} / (rho |psi^+|_{H^{1/2}}), psi^- from the Nehari projection.
inline double negative_part_ratio(const Model& m, double rho, double R, int samples, std::uint64_t seed) {
  if (samples < 1) fail_usage("samples must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& neg = m.negative();
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double r = R * unit(rng), share = unit(rng);
    const VectorXd u = random_scalar(m, rng, r * std::sqrt(share));
    const VectorXd a = random_coeffs(m, m.positive(), rng, r * std::sqrt(1.0 - share));
    const VectorXd an = negative_part(m, u, a, rho);
    double num = 0.0;
    for (std::size_t k = 0; k < neg.size(); ++k) num += m.half_weights()[neg[k]] * an[k] * an[k];
    const double den = rho * std::sqrt(m.half_norm2(a));
    if (den > 0.0) worst = std::max(worst, std::sqrt(num) / den);
  }
  return worst;
}

} // namespace supertoda::variational
