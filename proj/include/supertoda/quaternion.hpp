#pragma once

// Quaternion helpers for spinor fields. A spinor field on V vertices is a
// real vector of length 4V; vertex v occupies entries [4v, 4v+4) in the
// order (w, x, y, z). Clifford multiplication and spin transport act by
// left multiplication, the quaternionic symmetry acts by right
// multiplication, so the two always commute.

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace supertoda {

using Quat = Eigen::Quaterniond;

inline Quat quat(double w, double x, double y, double z) { return Quat(w, x, y, z); }

/// Matrix of p -> q * p on (w, x, y, z) coordinates.
inline Eigen::Matrix4d left_matrix(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix4d m;
  m << w, -x, -y, -z,
       x,  w, -z,  y,
       y,  z,  w, -x,
       z, -y,  x,  w;
  return m;
}

/// Matrix of p -> p * q on (w, x, y, z) coordinates.
inline Eigen::Matrix4d right_matrix(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix4d m;
  m << w, -x, -y, -z,
       x,  w,  z, -y,
       y, -z,  w,  x,
       z,  y, -x,  w;
  return m;
}

/// Clifford multiplication by the unit tangent vector at angle phi in the
/// vertex frame: e1 -> i, e2 -> j.
inline Quat clifford_unit(double phi) { return quat(0.0, std::cos(phi), std::sin(phi), 0.0); }

/// Spin lift of a frame rotation by theta; rotation by 2*pi lifts to -1.
inline Quat spin_rotation(double theta) {
  return quat(std::cos(0.5 * theta), 0.0, 0.0, std::sin(0.5 * theta));
}

/// Volume element e1 * e2 = i * j = k.
inline Quat volume_unit() { return quat(0.0, 0.0, 0.0, 1.0); }

/// Fiberwise right multiplication of a spinor field by q.
inline Eigen::VectorXd right_multiply(const Eigen::VectorXd& psi, const Quat& q) {
  const Eigen::Matrix4d r = right_matrix(q);
  Eigen::VectorXd out(psi.size());
  for (Eigen::Index v = 0; v < psi.size() / 4; ++v) out.segment<4>(4 * v) = r * psi.segment<4>(4 * v);
  return out;
}

/// Fiberwise left multiplication of a spinor field by q.
inline Eigen::VectorXd left_multiply(const Eigen::VectorXd& psi, const Quat& q) {
  const Eigen::Matrix4d l = left_matrix(q);
  Eigen::VectorXd out(psi.size());
  for (Eigen::Index v = 0; v < psi.size() / 4; ++v) out.segment<4>(4 * v) = l * psi.segment<4>(4 * v);
  return out;
}

/// Pointwise squared norms |psi(v)|^2.
inline Eigen::VectorXd pointwise_norm2(const Eigen::VectorXd& psi) {
  Eigen::VectorXd out(psi.size() / 4);
  for (Eigen::Index v = 0; v < out.size(); ++v) out[v] = psi.segment<4>(4 * v).squaredNorm();
  return out;
}

} // namespace supertoda
