#pragma once

// Intrinsic triangulations of closed hyperbolic surfaces (K = -1).
//
// A SurfaceMesh is a list of oriented triangles together with hyperbolic
// edge lengths. Everything else (corner angles, face areas, lumped vertex
// areas, the CCW corner ring around each vertex) is derived from the lengths
// with the hyperbolic law of cosines and the angle-defect area formula.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "supertoda/error.hpp"

namespace supertoda::hypmesh {

inline constexpr double kFlatTolerance = 1e-8;
inline constexpr double kDuplicateLengthTolerance = 1e-12;

/// Angle opposite side `a` in a hyperbolic triangle with sides a, b, c.
inline double hyperbolic_corner_angle(double a, double b, double c) {
  const double num = std::cosh(b) * std::cosh(c) - std::cosh(a);
  const double den = std::sinh(b) * std::sinh(c);
  return std::acos(std::clamp(num / den, -1.0, 1.0));
}

/// Hyperbolic distance between two points of the Poincare disk.
inline double disk_distance(std::complex<double> p, std::complex<double> q) {
  const double r = std::abs(p - q) / std::abs(1.0 - std::conj(p) * q);
  return 2.0 * std::atanh(r);
}

/// Geodesic midpoint of two points of the Poincare disk.
inline std::complex<double> disk_midpoint(std::complex<double> p, std::complex<double> q) {
  const std::complex<double> q0 = (q - p) / (1.0 - std::conj(p) * q);
  const double r = std::abs(q0);
  if (r == 0.0) return p;
  const std::complex<double> m0 = std::tanh(0.5 * std::atanh(r)) * (q0 / r);
  return (m0 + p) / (1.0 + std::conj(p) * m0);
}

struct Face {
  std::array<int, 3> v{};
  std::array<double, 3> length{};  // |v0v1|, |v1v2|, |v2v0|
  std::array<double, 3> angle{};   // at v0, v1, v2
  std::array<int, 3> edge{};       // edge ids of (v0v1), (v1v2), (v2v0)
  double area = 0.0;
};

struct Edge {
  int v0 = 0, v1 = 0;  // v0 < v1
  double length = 0.0;
  std::array<int, 2> faces{-1, -1};
};

/// One corner of the CCW ring around a vertex: the face sweeps from the
/// direction of `from` to the direction of `to` through `angle`.
struct Corner {
  int face = 0;
  int slot = 0;
  int from = 0;
  int to = 0;
  double angle = 0.0;
};

class SurfaceMesh {
public:
  SurfaceMesh() = default;

  /// Builds and validates the combinatorics and per-face geometry. Zero
  /// angle defect is not required here; see mesh_report / check_flatness.
  SurfaceMesh(int vertex_count, const std::vector<std::array<int, 3>>& faces,
              const std::vector<std::array<double, 3>>& lengths)
      : vertex_count_(vertex_count) {
    if (vertex_count <= 0) fail("mesh has no vertices");
    if (faces.size() != lengths.size()) fail("face/length count mismatch");
    if (faces.empty()) fail("mesh has no faces");
    build_faces(faces, lengths);
    build_edges();
    build_rings();
    const int chi = euler_characteristic();
    if (chi > -2) fail("genus below 2 (Euler characteristic " + std::to_string(chi) + ")");
    if (chi % 2 != 0) fail("odd Euler characteristic " + std::to_string(chi));
    genus_ = (2 - chi) / 2;
  }

  int vertex_count() const { return vertex_count_; }
  int face_count() const { return static_cast<int>(faces_.size()); }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  int euler_characteristic() const { return vertex_count() - edge_count() + face_count(); }
  int genus() const { return genus_; }

  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<double>& vertex_areas() const { return vertex_areas_; }
  const std::vector<Corner>& ring(int v) const { return rings_[v]; }

  std::optional<int> edge_index(int a, int b) const {
    auto it = edge_lookup_.find(key(std::min(a, b), std::max(a, b)));
    if (it == edge_lookup_.end()) return std::nullopt;
    return it->second;
  }

  double total_area() const {
    double sum = 0.0;
    for (const auto& f : faces_) sum += f.area;
    return sum;
  }

  double angle_sum(int v) const {
    double sum = 0.0;
    for (const auto& c : rings_[v]) sum += c.angle;
    return sum;
  }

  bool operator==(const SurfaceMesh& o) const {
    if (vertex_count_ != o.vertex_count_ || faces_.size() != o.faces_.size()) return false;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (faces_[f].v != o.faces_[f].v || faces_[f].length != o.faces_[f].length) return false;
    }
    return true;
  }

private:
  static std::uint64_t key(int a, int b) {
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
  }

  void build_faces(const std::vector<std::array<int, 3>>& faces,
                   const std::vector<std::array<double, 3>>& lengths) {
    faces_.resize(faces.size());
    vertex_areas_.assign(vertex_count_, 0.0);
    for (std::size_t f = 0; f < faces.size(); ++f) {
      Face& face = faces_[f];
      face.v = faces[f];
      face.length = lengths[f];
      for (int i = 0; i < 3; ++i) {
        if (face.v[i] < 0 || face.v[i] >= vertex_count_)
          fail("face " + std::to_string(f) + " references vertex out of range");
        if (!(face.length[i] > 0.0) || !std::isfinite(face.length[i]))
          fail("nonpositive edge length in face " + std::to_string(f));
      }
      if (face.v[0] == face.v[1] || face.v[1] == face.v[2] || face.v[2] == face.v[0])
        fail("degenerate face " + std::to_string(f));
      const auto& l = face.length;
      for (int i = 0; i < 3; ++i) {
        if (!(l[i] < l[(i + 1) % 3] + l[(i + 2) % 3]))
          fail("triangle inequality violated in face " + std::to_string(f));
      }
      face.angle[0] = hyperbolic_corner_angle(l[1], l[2], l[0]);
      face.angle[1] = hyperbolic_corner_angle(l[2], l[0], l[1]);
      face.angle[2] = hyperbolic_corner_angle(l[0], l[1], l[2]);
      face.area = std::numbers::pi - face.angle[0] - face.angle[1] - face.angle[2];
      for (int i = 0; i < 3; ++i) vertex_areas_[face.v[i]] += face.area / 3.0;
    }
    for (int v = 0; v < vertex_count_; ++v) {
      if (!(vertex_areas_[v] > 0.0)) fail("vertex " + std::to_string(v) + " is not used by any face");
    }
  }

  void build_edges() {
    std::unordered_map<std::uint64_t, int> halfedges;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      Face& face = faces_[f];
      for (int i = 0; i < 3; ++i) {
        const int a = face.v[i], b = face.v[(i + 1) % 3];
        if (!halfedges.emplace(key(a, b), static_cast<int>(f)).second)
          fail("ambiguous edge gluing: oriented edge " + std::to_string(a) + "->" +
               std::to_string(b) + " appears twice");
        const std::uint64_t k = key(std::min(a, b), std::max(a, b));
        auto it = edge_lookup_.find(k);
        if (it == edge_lookup_.end()) {
          Edge e;
          e.v0 = std::min(a, b);
          e.v1 = std::max(a, b);
          e.length = face.length[i];
          e.faces = {static_cast<int>(f), -1};
          edge_lookup_.emplace(k, static_cast<int>(edges_.size()));
          face.edge[i] = static_cast<int>(edges_.size());
          edges_.push_back(e);
        } else {
          Edge& e = edges_[it->second];
          const double scale = std::max(e.length, face.length[i]);
          if (std::abs(e.length - face.length[i]) > kDuplicateLengthTolerance * scale)
            fail("inconsistent duplicate edge length on edge " + std::to_string(e.v0) + "-" +
                 std::to_string(e.v1));
          e.faces[1] = static_cast<int>(f);
          face.edge[i] = it->second;
        }
      }
    }
    for (const auto& [k, f] : halfedges) {
      const int a = static_cast<int>(k >> 32), b = static_cast<int>(k & 0xffffffffu);
      if (!halfedges.count(key(b, a)))
        fail("mesh is not closed: edge " + std::to_string(a) + "-" + std::to_string(b) +
             " has one incident face");
    }
  }

  void build_rings() {
    std::vector<std::vector<Corner>> corners(vertex_count_);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const Face& face = faces_[f];
      for (int i = 0; i < 3; ++i) {
        corners[face.v[i]].push_back(
            {static_cast<int>(f), i, face.v[(i + 1) % 3], face.v[(i + 2) % 3], face.angle[i]});
      }
    }
    rings_.resize(vertex_count_);
    for (int v = 0; v < vertex_count_; ++v) {
      auto& cs = corners[v];
      std::map<int, int> by_from;
      for (std::size_t c = 0; c < cs.size(); ++c) by_from[cs[c].from] = static_cast<int>(c);
      // Start at the smallest neighbour so that the vertex frame is reproducible.
      int current = by_from.begin()->second;
      std::vector<Corner> ring;
      ring.reserve(cs.size());
      for (std::size_t step = 0; step < cs.size(); ++step) {
        ring.push_back(cs[current]);
        auto next = by_from.find(cs[current].to);
        if (next == by_from.end()) fail("vertex " + std::to_string(v) + " has a broken link");
        current = next->second;
      }
      if (current != by_from.begin()->second || ring.size() != cs.size())
        fail("vertex " + std::to_string(v) + " link is not a single cycle");
      rings_[v] = std::move(ring);
    }
  }

  int vertex_count_ = 0;
  int genus_ = 0;
  std::vector<Face> faces_;
  std::vector<Edge> edges_;
  std::vector<double> vertex_areas_;
  std::vector<std::vector<Corner>> rings_;
  std::unordered_map<std::uint64_t, int> edge_lookup_;
};

struct MeshReport {
  double max_vertex_defect = 0.0;
  double total_area = 0.0;
  double area_error = 0.0;
  double min_angle = 0.0;
  std::pair<double, double> edge_length_range{0.0, 0.0};
};

inline double gauss_bonnet_area(int genus) { return 4.0 * std::numbers::pi * (genus - 1); }

inline MeshReport mesh_report(const SurfaceMesh& mesh) {
  MeshReport r;
  for (int v = 0; v < mesh.vertex_count(); ++v)
    r.max_vertex_defect =
        std::max(r.max_vertex_defect, std::abs(2.0 * std::numbers::pi - mesh.angle_sum(v)));
  r.total_area = mesh.total_area();
  r.area_error = std::abs(r.total_area - gauss_bonnet_area(mesh.genus()));
  r.min_angle = std::numeric_limits<double>::infinity();
  for (const auto& f : mesh.faces())
    for (double a : f.angle) r.min_angle = std::min(r.min_angle, a);
  r.edge_length_range = {std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& e : mesh.edges()) {
    r.edge_length_range.first = std::min(r.edge_length_range.first, e.length);
    r.edge_length_range.second = std::max(r.edge_length_range.second, e.length);
  }
  return r;
}

/// Throws unless every vertex is flat (cone angle 2*pi) and Gauss-Bonnet holds.
inline void check_flatness(const SurfaceMesh& mesh, double tol = kFlatTolerance) {
  const MeshReport r = mesh_report(mesh);
  if (r.max_vertex_defect > tol) {
    std::ostringstream os;
    os << "angle defect " << r.max_vertex_defect << " exceeds tolerance " << tol;
    fail(os.str());
  }
  if (r.area_error > tol) {
    std::ostringstream os;
    os << "total area " << r.total_area << " differs from 4*pi*(genus-1) by " << r.area_error;
    fail(os.str());
  }
}

// ---------------------------------------------------------------------------
// Generator: regular hyperbolic 4g-gon with the a1 b1 a1^-1 b1^-1 ... side
// pairing, fan-triangulated from its center and refined in the Poincare disk.

namespace detail {

struct PointTag {
  enum Kind { interior, corner, side } kind = interior;
  int side_id = 0;  // corner: polygon vertex index; side: side index
  int index = 0;    // position along the side in units of side_length / 2^levels
};

inline int side_partner(int s) { return (s % 4 < 2) ? s + 2 : s - 2; }

} // namespace detail

inline SurfaceMesh build_fuchsian_mesh(int genus, int subdivision) {
  using detail::PointTag;
  using cplx = std::complex<double>;
  if (genus < 2) fail("genus below 2");
  if (subdivision < 0) fail_usage("subdivision must be nonnegative");
  // Two refinements are needed before every edge joins a distinct vertex pair.
  const int levels = subdivision + 2;
  const int n = 4 * genus;
  const int steps = 1 << levels;
  const double pi = std::numbers::pi;

  // Fan triangle angles: 2*pi/n at the center, pi/n at both polygon corners.
  const double cosh_spoke =
      (std::cos(pi / n) + std::cos(2 * pi / n) * std::cos(pi / n)) / (std::sin(2 * pi / n) * std::sin(pi / n));
  const double disk_radius = std::tanh(0.5 * std::acosh(cosh_spoke));

  std::vector<cplx> pos;
  std::vector<PointTag> tag;
  pos.emplace_back(0.0, 0.0);
  tag.push_back({PointTag::interior, 0, 0});
  for (int s = 0; s < n; ++s) {
    pos.push_back(std::polar(disk_radius, 2 * pi * s / n));
    tag.push_back({PointTag::corner, s, 0});
  }
  std::vector<std::array<int, 3>> tris;
  for (int s = 0; s < n; ++s) tris.push_back({0, 1 + s, 1 + (s + 1) % n});

  // Position of a tag on side s, if it lies there.
  auto on_side = [&](const PointTag& t, int s) -> std::optional<int> {
    if (t.kind == PointTag::side && t.side_id == s) return t.index;
    if (t.kind == PointTag::corner && t.side_id == s) return 0;
    if (t.kind == PointTag::corner && t.side_id == (s + 1) % n) return steps;
    return std::nullopt;
  };
  auto midpoint_tag = [&](const PointTag& a, const PointTag& b) -> PointTag {
    for (int s = 0; s < n; ++s) {
      auto ia = on_side(a, s), ib = on_side(b, s);
      if (ia && ib) return {PointTag::side, s, (*ia + *ib) / 2};
    }
    return {PointTag::interior, 0, 0};
  };

  for (int level = 0; level < levels; ++level) {
    std::map<std::pair<int, int>, int> mids;
    auto mid = [&](int a, int b) {
      const auto k = std::minmax(a, b);
      auto it = mids.find(k);
      if (it != mids.end()) return it->second;
      const int id = static_cast<int>(pos.size());
      pos.push_back(disk_midpoint(pos[a], pos[b]));
      tag.push_back(midpoint_tag(tag[a], tag[b]));
      mids.emplace(k, id);
      return id;
    };
    std::vector<std::array<int, 3>> refined;
    refined.reserve(4 * tris.size());
    for (const auto& t : tris) {
      const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
      refined.push_back({t[0], ab, ca});
      refined.push_back({ab, t[1], bc});
      refined.push_back({ca, bc, t[2]});
      refined.push_back({ab, bc, ca});
    }
    tris = std::move(refined);
  }

  // Identify boundary points: all corners become one vertex, side points are
  // glued to their partner with reversed orientation.
  auto canonical = [&](int local) -> std::pair<int, int> {
    const PointTag& t = tag[local];
    if (t.kind == PointTag::interior) return {-1, local};
    if (t.kind == PointTag::corner || t.index == 0 || t.index == steps) return {-2, 0};
    const std::pair<int, int> a{t.side_id, t.index};
    const std::pair<int, int> b{detail::side_partner(t.side_id), steps - t.index};
    return std::min(a, b);
  };
  std::map<std::pair<int, int>, int> global;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<double, 3>> lengths;
  for (const auto& t : tris) {
    std::array<int, 3> f{};
    for (int i = 0; i < 3; ++i) {
      auto [it, inserted] = global.emplace(canonical(t[i]), static_cast<int>(global.size()));
      f[i] = it->second;
    }
    faces.push_back(f);
    lengths.push_back({disk_distance(pos[t[0]], pos[t[1]]), disk_distance(pos[t[1]], pos[t[2]]),
                       disk_distance(pos[t[2]], pos[t[0]])});
  }
  return SurfaceMesh(static_cast<int>(global.size()), faces, lengths);
}

// ---------------------------------------------------------------------------
// ITRI text format.

inline void write_itri(const SurfaceMesh& mesh, std::ostream& os) {
  os << "ITRI 1\n" << mesh.vertex_count() << ' ' << mesh.face_count() << ' ' << mesh.genus() << '\n';
  os << std::setprecision(17);
  for (const auto& f : mesh.faces()) {
    os << f.v[0] << ' ' << f.v[1] << ' ' << f.v[2] << ' ' << f.length[0] << ' ' << f.length[1] << ' '
       << f.length[2] << '\n';
  }
}

inline std::string to_itri(const SurfaceMesh& mesh) {
  std::ostringstream os;
  write_itri(mesh, os);
  return os.str();
}

inline void write_mesh(const SurfaceMesh& mesh, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail_io("cannot open " + path + " for writing");
  write_itri(mesh, os);
  if (!os) fail_io("write failed: " + path);
}

/// Parses ITRI text; the mesh must also be flat and satisfy Gauss-Bonnet.
inline SurfaceMesh parse_itri(std::istream& is) {
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(is, line)) fail(std::string("malformed ITRI: missing ") + what);
  };
  next_line("header");
  if (line != "ITRI 1") fail("malformed ITRI: bad header '" + line + "'");
  next_line("size line");
  int v = 0, f = 0, g = 0;
  {
    std::istringstream ls(line);
    std::string extra;
    if (!(ls >> v >> f >> g) || (ls >> extra)) fail("malformed ITRI: bad size line '" + line + "'");
  }
  if (v <= 0 || f <= 0) fail("malformed ITRI: nonpositive counts");
  std::vector<std::array<int, 3>> faces(f);
  std::vector<std::array<double, 3>> lengths(f);
  for (int i = 0; i < f; ++i) {
    next_line("face line");
    std::istringstream ls(line);
    std::string extra;
    auto& t = faces[i];
    auto& l = lengths[i];
    if (!(ls >> t[0] >> t[1] >> t[2] >> l[0] >> l[1] >> l[2]) || (ls >> extra))
      fail("malformed ITRI: bad face line " + std::to_string(i + 3));
  }
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) fail("malformed ITRI: trailing content");
  }
  SurfaceMesh mesh(v, faces, lengths);
  if (mesh.genus() != g)
    fail("malformed ITRI: header genus " + std::to_string(g) + " but Euler characteristic gives " +
         std::to_string(mesh.genus()));
  check_flatness(mesh);
  return mesh;
}

inline SurfaceMesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail_io("cannot open mesh file " + path);
  return parse_itri(is);
}

/// FNV-1a over the ITRI serialization; stable across runs and platforms.
inline std::string mesh_hash(const SurfaceMesh& mesh) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : to_itri(mesh)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Scalar Laplace form and lumped mass.

struct LaplacePair {
  Eigen::SparseMatrix<double> stiffness;  // u^T S u = sum_e w_e (u_a - u_b)^2
  Eigen::VectorXd mass;                   // lumped hyperbolic vertex areas
};

inline std::vector<double> cotan_weights(const SurfaceMesh& mesh) {
  std::vector<double> w(mesh.edge_count(), 0.0);
  for (const auto& f : mesh.faces()) {
    // The edge (v_i, v_{i+1}) is opposite the corner at v_{i+2}.
    for (int i = 0; i < 3; ++i) w[f.edge[i]] += 0.5 / std::tan(f.angle[(i + 2) % 3]);
  }
  return w;
}

inline LaplacePair laplace_pair(const SurfaceMesh& mesh) {
  const auto w = cotan_weights(mesh);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(4 * mesh.edge_count());
  for (int e = 0; e < mesh.edge_count(); ++e) {
    const auto& edge = mesh.edges()[e];
    trips.emplace_back(edge.v0, edge.v0, w[e]);
    trips.emplace_back(edge.v1, edge.v1, w[e]);
    trips.emplace_back(edge.v0, edge.v1, -w[e]);
    trips.emplace_back(edge.v1, edge.v0, -w[e]);
  }
  LaplacePair lp;
  lp.stiffness.resize(mesh.vertex_count(), mesh.vertex_count());
  lp.stiffness.setFromTriplets(trips.begin(), trips.end());
  lp.mass = Eigen::Map<const Eigen::VectorXd>(mesh.vertex_areas().data(), mesh.vertex_count());
  return lp;
}

} // namespace supertoda::hypmesh
