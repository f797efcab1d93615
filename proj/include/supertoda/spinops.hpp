#pragma once

// Spin structures and the discrete Dirac operator on a hyperbolic mesh.
//
// Tangent frames live at vertices: the direction of the edge v->w in the
// frame of v is phi_v(w), accumulated from corner angles CCW around v
// starting at v's smallest neighbour. Parallel transport along v->w rotates
// frames by theta(v->w) = phi_w(v) + pi - phi_v(w) (wrapped, antisymmetric).
// Spinors transport by the lift spin_rotation(theta), which is only defined
// up to sign; a spin structure is the choice of edge signs that makes the
// spinor holonomy of every triangle the lift connected to the identity.
//
// The operator
//   (D psi)(v) = 1/A_v sum_{w~v} c_vw eps_vw sigma(phi_v(w)) S(theta(w->v)) psi(w)
// with c_vw = (cotan weight) * l_vw / 2 is symmetric in the area inner
// product, anticommutes with the volume element (left multiplication by k)
// and commutes with right multiplication by quaternions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "supertoda/error.hpp"
#include "supertoda/hypmesh.hpp"
#include "supertoda/quaternion.hpp"

namespace supertoda::spinops {

using hypmesh::SurfaceMesh;

inline constexpr double kKernelTolerance = 1e-6;
inline constexpr double kExceptionalMargin = 1e-9;
inline constexpr double kClusterGap = 1e-7;
inline constexpr int kMaxVertices = 2000;

inline double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::remainder(a, two_pi);  // [-pi, pi]
  if (a <= -std::numbers::pi) a += two_pi;
  return a;
}

// ---------------------------------------------------------------------------
// Levi-Civita frame transport.

struct TransportAngles {
  std::vector<double> edge_angle;       // theta(v0 -> v1) per edge id
  std::vector<double> vertex_holonomy;  // total frame turn around each vertex
  std::vector<std::vector<std::pair<int, double>>> direction;  // (neighbour, phi_v(w)) per vertex

  /// theta(from -> to); antisymmetric by construction.
  double angle(const SurfaceMesh& mesh, int from, int to) const {
    const auto e = mesh.edge_index(from, to);
    if (!e) fail("no edge " + std::to_string(from) + "-" + std::to_string(to));
    const double t = edge_angle[*e];
    return from < to ? t : -t;
  }

  double phi(int v, int w) const {
    for (const auto& [n, a] : direction[v])
      if (n == w) return a;
    fail("vertex " + std::to_string(w) + " is not a neighbour of " + std::to_string(v));
  }
};

inline TransportAngles transport_angles(const SurfaceMesh& mesh) {
  TransportAngles t;
  const int nv = mesh.vertex_count();
  t.direction.resize(nv);
  t.vertex_holonomy.assign(nv, 0.0);
  for (int v = 0; v < nv; ++v) {
    double acc = 0.0;
    for (const auto& c : mesh.ring(v)) {
      t.direction[v].emplace_back(c.from, acc);
      acc += c.angle;
    }
    t.vertex_holonomy[v] = acc;
  }
  t.edge_angle.resize(mesh.edge_count());
  for (int e = 0; e < mesh.edge_count(); ++e) {
    const auto& edge = mesh.edges()[e];
    t.edge_angle[e] = wrap_angle(t.phi(edge.v1, edge.v0) + std::numbers::pi - t.phi(edge.v0, edge.v1));
  }
  return t;
}

/// Parity m_f of each face: the sum of the three (wrapped) transport angles
/// around the face is wrap(sum) + 2*pi*m_f.
inline std::vector<int> face_parities(const SurfaceMesh& mesh, const TransportAngles& t) {
  std::vector<int> m(mesh.face_count());
  for (int f = 0; f < mesh.face_count(); ++f) {
    const auto& v = mesh.faces()[f].v;
    const double s = t.angle(mesh, v[0], v[1]) + t.angle(mesh, v[1], v[2]) + t.angle(mesh, v[2], v[0]);
    m[f] = static_cast<int>(std::lround((s - wrap_angle(s)) / (2.0 * std::numbers::pi)));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Spin structures.

struct SpinStructure {
  std::vector<std::int8_t> edge_sign;  // per undirected edge, eps(-e) = eps(e)
  TransportAngles transport;
  int class_index = 0;

  int sign(const SurfaceMesh& mesh, int a, int b) const { return edge_sign[*mesh.edge_index(a, b)]; }
};

/// Tree-cotree decomposition: primal BFS tree (lowest index first), dual
/// tree of faces across the remaining edges, and the 2g generator edges
/// with their fundamental cycles closed through the primal tree.
struct HomologyBasis {
  std::vector<bool> primal_tree;
  std::vector<int> dual_order;        // faces in BFS order
  std::vector<int> dual_parent_edge;  // per face, -1 for the root
  std::vector<int> generators;        // edge ids
  std::vector<std::vector<int>> cycles;
};

inline HomologyBasis homology_basis(const SurfaceMesh& mesh) {
  const int nv = mesh.vertex_count(), ne = mesh.edge_count(), nf = mesh.face_count();
  std::vector<std::vector<std::pair<int, int>>> adj(nv);  // (neighbour, edge)
  for (int e = 0; e < ne; ++e) {
    adj[mesh.edges()[e].v0].emplace_back(mesh.edges()[e].v1, e);
    adj[mesh.edges()[e].v1].emplace_back(mesh.edges()[e].v0, e);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());

  HomologyBasis hb;
  hb.primal_tree.assign(ne, false);
  std::vector<int> parent(nv, -1), parent_edge(nv, -1), depth(nv, -1);
  std::queue<int> q;
  q.push(0);
  depth[0] = 0;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (const auto& [w, e] : adj[v]) {
      if (depth[w] >= 0) continue;
      depth[w] = depth[v] + 1;
      parent[w] = v;
      parent_edge[w] = e;
      hb.primal_tree[e] = true;
      q.push(w);
    }
  }

  hb.dual_parent_edge.assign(nf, -2);
  std::vector<bool> dual_tree(ne, false);
  std::queue<int> fq;
  fq.push(0);
  hb.dual_parent_edge[0] = -1;
  while (!fq.empty()) {
    const int f = fq.front();
    fq.pop();
    hb.dual_order.push_back(f);
    for (int e : mesh.faces()[f].edge) {
      if (hb.primal_tree[e]) continue;
      const auto& ef = mesh.edges()[e].faces;
      const int g = ef[0] == f ? ef[1] : ef[0];
      if (hb.dual_parent_edge[g] != -2) continue;
      hb.dual_parent_edge[g] = e;
      dual_tree[e] = true;
      fq.push(g);
    }
  }
  if (static_cast<int>(hb.dual_order.size()) != nf) fail_internal("dual graph is disconnected");

  for (int e = 0; e < ne; ++e) {
    if (hb.primal_tree[e] || dual_tree[e]) continue;
    hb.generators.push_back(e);
    // Fundamental cycle: e plus the tree paths from both ends to their LCA.
    std::vector<int> cycle{e};
    int a = mesh.edges()[e].v0, b = mesh.edges()[e].v1;
    while (a != b) {
      if (depth[a] >= depth[b]) {
        cycle.push_back(parent_edge[a]);
        a = parent[a];
      } else {
        cycle.push_back(parent_edge[b]);
        b = parent[b];
      }
    }
    hb.cycles.push_back(std::move(cycle));
  }
  if (static_cast<int>(hb.generators.size()) != 2 * mesh.genus())
    fail_internal("tree-cotree produced " + std::to_string(hb.generators.size()) + " generators");
  return hb;
}

/// Spinor holonomy sign of each face relative to the identity-connected
/// lift; +1 everywhere is the spin-structure condition.
inline std::vector<int> face_spin_holonomy(const SurfaceMesh& mesh, const SpinStructure& spin) {
  const auto m = face_parities(mesh, spin.transport);
  std::vector<int> h(mesh.face_count());
  for (int f = 0; f < mesh.face_count(); ++f) {
    int p = (m[f] % 2 == 0) ? 1 : -1;
    for (int e : mesh.faces()[f].edge) p *= spin.edge_sign[e];
    h[f] = p;
  }
  return h;
}

/// Spinor holonomy sign around the link of each vertex (the loop through
/// its neighbours). Around a flat cone point the frame turns once, which
/// the wrapped transport angles record as 2*pi*m; the condition is that the
/// edge signs cancel the parity of that turn.
inline std::vector<int> vertex_link_holonomy(const SurfaceMesh& mesh, const SpinStructure& spin) {
  std::vector<int> h(mesh.vertex_count());
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    double s = 0.0;
    int p = 1;
    for (const auto& c : mesh.ring(v)) {
      s += spin.transport.angle(mesh, c.from, c.to);
      p *= spin.sign(mesh, c.from, c.to);
    }
    const long turns = std::lround((s - wrap_angle(s)) / (2.0 * std::numbers::pi));
    h[v] = p * ((turns % 2 == 0) ? 1 : -1);
  }
  return h;
}

inline bool satisfies_link_condition(const SurfaceMesh& mesh, const SpinStructure& spin) {
  if (static_cast<int>(spin.edge_sign.size()) != mesh.edge_count()) return false;
  for (int h : face_spin_holonomy(mesh, spin))
    if (h != 1) return false;
  for (int h : vertex_link_holonomy(mesh, spin))
    if (h != 1) return false;
  return true;
}

/// Gauge-invariant class label: bit i is set when the sign product around
/// the i-th fundamental cycle is -1.
inline int class_signature(const SurfaceMesh& mesh, const HomologyBasis& hb, const SpinStructure& spin) {
  (void)mesh;
  int index = 0;
  for (std::size_t i = 0; i < hb.cycles.size(); ++i) {
    int p = 1;
    for (int e : hb.cycles[i]) p *= spin.edge_sign[e];
    if (p < 0) index |= 1 << i;
  }
  return index;
}

inline SpinStructure spin_structure(const SurfaceMesh& mesh, const HomologyBasis& hb,
                                    const TransportAngles& transport, int class_index) {
  const int n_classes = 1 << hb.generators.size();
  if (class_index < 0 || class_index >= n_classes)
    fail("spin class " + std::to_string(class_index) + " out of range [0, " + std::to_string(n_classes) + ")");
  const auto parity = face_parities(mesh, transport);
  SpinStructure spin;
  spin.transport = transport;
  spin.class_index = class_index;
  spin.edge_sign.assign(mesh.edge_count(), 0);
  for (int e = 0; e < mesh.edge_count(); ++e)
    if (hb.primal_tree[e]) spin.edge_sign[e] = 1;
  for (std::size_t i = 0; i < hb.generators.size(); ++i)
    spin.edge_sign[hb.generators[i]] = (class_index >> i) & 1 ? -1 : 1;
  // Peel the dual tree from its leaves: each face fixes its parent edge.
  for (auto it = hb.dual_order.rbegin(); it != hb.dual_order.rend(); ++it) {
    const int f = *it;
    int target = (parity[f] % 2 == 0) ? 1 : -1;
    int unknown = -1;
    for (int e : mesh.faces()[f].edge) {
      if (spin.edge_sign[e] == 0) {
        unknown = e;
      } else {
        target *= spin.edge_sign[e];
      }
    }
    if (hb.dual_parent_edge[f] == -1) {
      if (unknown != -1 || target != 1)
        fail("no edge-sign assignment satisfies the link condition (inconsistent orientation?)");
      continue;
    }
    if (unknown != hb.dual_parent_edge[f]) fail_internal("dual tree peeling order broken");
    spin.edge_sign[unknown] = static_cast<std::int8_t>(target);
  }
  if (!satisfies_link_condition(mesh, spin))
    fail("no edge-sign assignment satisfies the link condition (inconsistent orientation?)");
  return spin;
}

/// One representative per spin class, indexed by class signature.
inline std::vector<SpinStructure> enumerate_spin_classes(const SurfaceMesh& mesh) {
  const auto hb = homology_basis(mesh);
  const auto transport = transport_angles(mesh);
  std::vector<SpinStructure> out;
  const int n = 1 << hb.generators.size();
  out.reserve(n);
  for (int c = 0; c < n; ++c) {
    out.push_back(spin_structure(mesh, hb, transport, c));
    if (class_signature(mesh, hb, out.back()) != c) fail_internal("class signature mismatch");
  }
  return out;
}

/// Flips all edge signs at vertex v; the spin class is unchanged.
inline SpinStructure gauge_flip(const SurfaceMesh& mesh, SpinStructure spin, int v) {
  for (const auto& c : mesh.ring(v)) {
    const int e = *mesh.edge_index(v, c.from);
    spin.edge_sign[e] = static_cast<std::int8_t>(-spin.edge_sign[e]);
  }
  return spin;
}

// ---------------------------------------------------------------------------
// Dirac operator.

struct DiracOperator {
  int vertex_count = 0;
  Eigen::SparseMatrix<double> form;  // K, symmetric; D = W^{-1} K
  Eigen::VectorXd weight;            // vertex area repeated on the 4 components

  int dimension() const { return 4 * vertex_count; }

  Eigen::VectorXd apply(const Eigen::VectorXd& psi) const {
    return (form * psi).cwiseQuotient(weight);
  }

  Eigen::VectorXd volume_element(const Eigen::VectorXd& psi) const {
    return left_multiply(psi, volume_unit());
  }

  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return a.dot(weight.cwiseProduct(b));
  }

  Eigen::MatrixXd dense() const {
    return weight.cwiseInverse().asDiagonal() * Eigen::MatrixXd(form);
  }
};

inline std::vector<double> dirac_edge_weights(const SurfaceMesh& mesh) {
  auto w = hypmesh::cotan_weights(mesh);
  for (int e = 0; e < mesh.edge_count(); ++e) w[e] *= 0.5 * mesh.edges()[e].length;
  return w;
}

inline DiracOperator assemble_dirac(const SurfaceMesh& mesh, const SpinStructure& spin) {
  if (static_cast<int>(spin.edge_sign.size()) != mesh.edge_count() ||
      static_cast<int>(spin.transport.edge_angle.size()) != mesh.edge_count() ||
      !satisfies_link_condition(mesh, spin))
    fail("spin structure does not match this mesh");
  const int nv = mesh.vertex_count();
  const auto c = dirac_edge_weights(mesh);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(32 * mesh.edge_count());
  for (int v = 0; v < nv; ++v) {
    for (const auto& corner : mesh.ring(v)) {
      const int w = corner.from;
      const int e = *mesh.edge_index(v, w);
      const Quat block = clifford_unit(spin.transport.phi(v, w)) *
                         spin_rotation(spin.transport.angle(mesh, w, v));
      const Eigen::Matrix4d m = (c[e] * spin.edge_sign[e]) * left_matrix(block);
      for (int r = 0; r < 4; ++r)
        for (int s = 0; s < 4; ++s)
          if (m(r, s) != 0.0) trips.emplace_back(4 * v + r, 4 * w + s, m(r, s));
    }
  }
  DiracOperator d;
  d.vertex_count = nv;
  Eigen::SparseMatrix<double> raw(4 * nv, 4 * nv);
  raw.setFromTriplets(trips.begin(), trips.end());
  // (D + D*)/2 in the area inner product is (K + K^T)/2 on the form.
  Eigen::SparseMatrix<double> raw_t = raw.transpose();
  d.form = 0.5 * (raw + raw_t);
  d.form.prune(0.0);
  d.weight.resize(4 * nv);
  for (int v = 0; v < nv; ++v) d.weight.segment<4>(4 * v).setConstant(mesh.vertex_areas()[v]);
  return d;
}

// ---------------------------------------------------------------------------
// Spectrum.

struct SpectralSplit {
  std::vector<int> idx_neg;    // lambda < 0
  std::vector<int> idx_pos_b;  // 0 < lambda < rho
  std::vector<int> idx_pos_a;  // lambda > rho
};

struct DiracSpectrum {
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenspinors;  // columns, orthonormal in the area inner product
  Eigen::VectorXd weight;        // area inner-product weights (4V)
  int kernel_dim = 0;
  std::optional<double> rho;
  std::optional<SpectralSplit> split;

  int size() const { return static_cast<int>(eigenvalues.size()); }
  int vertex_count() const { return size() / 4; }

  /// Coefficients <psi, Psi_k> in the area inner product.
  Eigen::VectorXd analyze(const Eigen::VectorXd& psi) const {
    return eigenspinors.transpose() * weight.cwiseProduct(psi);
  }
  Eigen::VectorXd synthesize(const Eigen::VectorXd& coeffs) const { return eigenspinors * coeffs; }

  double l2_inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return a.dot(weight.cwiseProduct(b));
  }

  std::vector<int> positive_indices() const {
    std::vector<int> out;
    for (int k = 0; k < size(); ++k)
      if (eigenvalues[k] >= kKernelTolerance) out.push_back(k);
    return out;
  }
  std::vector<int> negative_indices() const {
    std::vector<int> out;
    for (int k = 0; k < size(); ++k)
      if (eigenvalues[k] <= -kKernelTolerance) out.push_back(k);
    return out;
  }

  /// Smallest positive eigenvalue lambda_1.
  double lambda_first() const {
    for (int k = 0; k < size(); ++k)
      if (eigenvalues[k] >= kKernelTolerance) return eigenvalues[k];
    fail("spectrum has no positive eigenvalue");
  }

  /// k-th positive eigenvalue (k >= 1), counted with multiplicity.
  double lambda_positive(int k) const {
    const auto pos = positive_indices();
    if (k < 1 || k > static_cast<int>(pos.size())) fail("no positive eigenvalue with index " + std::to_string(k));
    return eigenvalues[pos[k - 1]];
  }

  /// Integer label in Z_* (negative for negative eigenvalues, 0 in the kernel).
  int signed_index(int position) const {
    const double l = eigenvalues[position];
    if (std::abs(l) < kKernelTolerance) return 0;
    if (l > 0) {
      int k = 0;
      for (int i = 0; i <= position; ++i)
        if (eigenvalues[i] >= kKernelTolerance) ++k;
      return k;
    }
    int k = 0;
    for (int i = position; i < size(); ++i)
      if (eigenvalues[i] <= -kKernelTolerance) ++k;
    return -k;
  }

  double min_abs_eigenvalue() const { return eigenvalues.cwiseAbs().minCoeff(); }
};

inline DiracSpectrum eigendecompose(const DiracOperator& d, int max_vertices = kMaxVertices,
                                    double kernel_tol = kKernelTolerance) {
  if (d.vertex_count > max_vertices)
    fail("mesh has " + std::to_string(d.vertex_count) + " vertices, above the dense eigensolver cap " +
         std::to_string(max_vertices));
  const Eigen::VectorXd isq = d.weight.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd c = isq.asDiagonal() * Eigen::MatrixXd(d.form) * isq.asDiagonal();
  c = 0.5 * (c + c.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  if (es.info() != Eigen::Success) fail("eigensolver did not converge");
  DiracSpectrum s;
  s.eigenvalues = es.eigenvalues();
  s.eigenspinors = isq.asDiagonal() * es.eigenvectors();
  s.weight = d.weight;
  s.kernel_dim = static_cast<int>((s.eigenvalues.array().abs() < kernel_tol).count());
  return s;
}

/// max_i |lambda_i + lambda_{n-1-i}| / max |lambda|.
inline double symmetry_defect(const DiracSpectrum& s) {
  const int n = s.size();
  double worst = 0.0;
  for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(s.eigenvalues[i] + s.eigenvalues[n - 1 - i]));
  return worst / s.eigenvalues.cwiseAbs().maxCoeff();
}

/// Multiplicities of eigenvalue clusters (consecutive gaps <= gap).
inline std::vector<int> cluster_multiplicities(const DiracSpectrum& s, double gap = kClusterGap) {
  std::vector<int> out;
  int run = 1;
  for (int i = 1; i < s.size(); ++i) {
    if (s.eigenvalues[i] - s.eigenvalues[i - 1] <= gap) {
      ++run;
    } else {
      out.push_back(run);
      run = 1;
    }
  }
  out.push_back(run);
  return out;
}

inline SpectralSplit spectral_split(const DiracSpectrum& s, double rho, double margin = kExceptionalMargin) {
  if (!(rho > 0.0)) fail_usage("rho must be positive");
  if (s.kernel_dim > 0) fail("nontrivial kernel (dim " + std::to_string(s.kernel_dim) + ")");
  double closest = std::numeric_limits<double>::infinity();
  for (int k = 0; k < s.size(); ++k) closest = std::min(closest, std::abs(s.eigenvalues[k] - rho));
  if (closest < margin) {
    std::ostringstream os;
    os << "exceptional rho: " << rho << " lies within " << margin << " of the spectrum";
    fail(os.str());
  }
  SpectralSplit sp;
  for (int k = 0; k < s.size(); ++k) {
    const double l = s.eigenvalues[k];
    if (l < 0) {
      sp.idx_neg.push_back(k);
    } else if (l < rho) {
      sp.idx_pos_b.push_back(k);
    } else {
      sp.idx_pos_a.push_back(k);
    }
  }
  return sp;
}

inline DiracSpectrum with_split(DiracSpectrum s, double rho) {
  s.split = spectral_split(s, rho);
  s.rho = rho;
  return s;
}

/// <psi, phi>_{L2} + sum_k |lambda_k|^{2s} a_k b_k for s != 0; plain L2 for s = 0.
inline double sobolev_inner(const DiracSpectrum& spec, const Eigen::VectorXd& psi, const Eigen::VectorXd& phi,
                            double s) {
  if (s != 0.0 && spec.kernel_dim > 0) fail("nontrivial kernel: H^s inner product undefined for s != 0");
  const double l2 = spec.l2_inner(psi, phi);
  if (s == 0.0) return l2;
  const Eigen::VectorXd a = spec.analyze(psi), b = spec.analyze(phi);
  const Eigen::ArrayXd w = spec.eigenvalues.array().abs().pow(2.0 * s);
  return l2 + (w * a.array() * b.array()).sum();
}

/// H^{1/2} norm from spectral coefficients: sum (1 + |lambda|) a^2.
inline double half_norm2_coeffs(const DiracSpectrum& spec, const Eigen::VectorXd& coeffs) {
  return ((1.0 + spec.eigenvalues.array().abs()) * coeffs.array().square()).sum();
}

struct SpinorPair {
  Eigen::VectorXd first, second;
};

inline SpinorPair quaternion_act(const SpinorPair& psi, const Quat& q) {
  if (std::abs(q.norm() - 1.0) > 1e-12) fail("non-unit quaternion (|q| = " + std::to_string(q.norm()) + ")");
  return {right_multiply(psi.first, q), right_multiply(psi.second, q)};
}

} // namespace supertoda::spinops
