#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "supertoda/hypmesh.hpp"

using namespace supertoda;
using namespace supertoda::hypmesh;

namespace {

constexpr double kPi = std::numbers::pi;

// Angle from the spherical-free form of the hyperbolic law of cosines,
// written out independently of the library helper.
double oracle_angle(double opposite, double b, double c) {
  const double x = (std::cosh(b) * std::cosh(c) - std::cosh(opposite)) / (std::sinh(b) * std::sinh(c));
  return std::acos(std::max(-1.0, std::min(1.0, x)));
}

double oracle_area(const SurfaceMesh& m) {
  double total = 0.0;
  for (const auto& f : m.faces()) {
    const double a = f.length[1], b = f.length[2], c = f.length[0];  // opposite v0, v1, v2
    total += kPi - oracle_angle(a, b, c) - oracle_angle(b, c, a) - oracle_angle(c, a, b);
  }
  return total;
}

std::vector<double> oracle_defects(const SurfaceMesh& m) {
  std::vector<double> sum(m.vertex_count(), 0.0);
  for (const auto& f : m.faces()) {
    const double a = f.length[1], b = f.length[2], c = f.length[0];
    sum[f.v[0]] += oracle_angle(a, b, c);
    sum[f.v[1]] += oracle_angle(b, c, a);
    sum[f.v[2]] += oracle_angle(c, a, b);
  }
  for (auto& s : sum) s = std::abs(2.0 * kPi - s);
  return sum;
}

std::string expect_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

} // namespace

TEST(Generator, GenusTwoBaseMeshHasGaussBonnetArea) {
  const auto m = build_fuchsian_mesh(2, 0);
  EXPECT_EQ(m.euler_characteristic(), -2);
  EXPECT_EQ(m.genus(), 2);
  EXPECT_NEAR(m.total_area(), 4.0 * kPi, 1e-8);
  EXPECT_NEAR(mesh_report(m).area_error, 0.0, 1e-8);
}

TEST(Generator, ZeroDefectAtEveryLevel) {
  for (int s = 0; s <= 2; ++s) {
    const auto m = build_fuchsian_mesh(2, s);
    EXPECT_LE(mesh_report(m).max_vertex_defect, 1e-8) << "subdivision " << s;
    const auto d = oracle_defects(m);
    EXPECT_LE(*std::max_element(d.begin(), d.end()), 1e-8);
  }
}

TEST(Generator, GenusThreeAreaByIndependentSum) {
  const auto m = build_fuchsian_mesh(3, 1);
  EXPECT_EQ(m.genus(), 3);
  EXPECT_NEAR(oracle_area(m), 4.0 * kPi * (3 - 1), 1e-8);
  EXPECT_NEAR(m.total_area(), 8.0 * kPi, 1e-8);
}

TEST(Generator, RefinementIsMonotone) {
  auto prev = build_fuchsian_mesh(2, 0);
  for (int s = 1; s <= 2; ++s) {
    const auto m = build_fuchsian_mesh(2, s);
    EXPECT_GT(m.vertex_count(), prev.vertex_count());
    EXPECT_EQ(m.genus(), prev.genus());
    EXPECT_NEAR(m.total_area(), prev.total_area(), 1e-8);
    prev = m;
  }
}

TEST(Generator, RejectsLowGenus) {
  EXPECT_NE(expect_error([] { build_fuchsian_mesh(1, 0); }), "");
  EXPECT_NE(expect_error([] { build_fuchsian_mesh(2, -1); }), "");
}

TEST(Itri, RoundTripIsFieldByField) {
  const auto m = build_fuchsian_mesh(2, 1);
  std::stringstream ss;
  write_itri(m, ss);
  const auto back = parse_itri(ss);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(mesh_hash(back), mesh_hash(m));
  ASSERT_EQ(back.face_count(), m.face_count());
  for (int f = 0; f < m.face_count(); ++f)
    for (int i = 0; i < 3; ++i) EXPECT_EQ(back.faces()[f].angle[i], m.faces()[f].angle[i]);
  for (int v = 0; v < m.vertex_count(); ++v) EXPECT_EQ(back.vertex_areas()[v], m.vertex_areas()[v]);
}

TEST(Itri, ZeroLengthRejected) {
  auto text = to_itri(build_fuchsian_mesh(2, 0));
  // Replace the first length on the first face line.
  std::istringstream in(text);
  std::string l1, l2, l3, rest;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  std::istringstream fl(l3);
  int a, b, c;
  double x, y, z;
  fl >> a >> b >> c >> x >> y >> z;
  std::ostringstream out;
  out << l1 << "\n" << l2 << "\n" << a << ' ' << b << ' ' << c << " 0 " << y << ' ' << z << "\n";
  std::string line;
  while (std::getline(in, line)) out << line << "\n";
  std::istringstream bad(out.str());
  EXPECT_NE(expect_error([&] { parse_itri(bad); }).find("nonpositive edge length"), std::string::npos);
}

TEST(Itri, TetrahedronIsGenusBelowTwo) {
  const double l = 1.0;
  std::ostringstream os;
  os << "ITRI 1\n4 4 0\n";
  os << "0 1 2 " << l << ' ' << l << ' ' << l << "\n";
  os << "0 3 1 " << l << ' ' << l << ' ' << l << "\n";
  os << "1 3 2 " << l << ' ' << l << ' ' << l << "\n";
  os << "0 2 3 " << l << ' ' << l << ' ' << l << "\n";
  std::istringstream in(os.str());
  EXPECT_NE(expect_error([&] { parse_itri(in); }).find("genus below 2"), std::string::npos);
}

TEST(Itri, InconsistentDuplicateLengthRejected) {
  const auto m = build_fuchsian_mesh(2, 0);
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<double, 3>> lengths;
  for (const auto& f : m.faces()) {
    faces.push_back(f.v);
    lengths.push_back(f.length);
  }
  lengths[0][0] *= 1.0 + 1e-6;
  EXPECT_NE(expect_error([&] { SurfaceMesh(m.vertex_count(), faces, lengths); }).find("inconsistent duplicate"),
            std::string::npos);
}

TEST(Report, EquilateralTriangleArea) {
  const double alpha = 2.0 * kPi / 7.0;
  // cosh a = (cos A + cos^2 A) / sin^2 A for an equilateral triangle.
  const double side = std::acosh((std::cos(alpha) + std::cos(alpha) * std::cos(alpha)) / std::pow(std::sin(alpha), 2));
  const double angle = hyperbolic_corner_angle(side, side, side);
  EXPECT_NEAR(angle, alpha, 1e-12);
  EXPECT_NEAR(kPi - 3.0 * angle, kPi / 7.0, 1e-12);
}

TEST(Report, PerturbedEdgeShowsDefect) {
  const auto m = build_fuchsian_mesh(2, 1);
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<double, 3>> lengths;
  for (const auto& f : m.faces()) {
    faces.push_back(f.v);
    lengths.push_back(f.length);
  }
  const auto& e = m.edges()[7];
  const double old = e.length;
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int i = 0; i < 3; ++i) {
      const int a = faces[f][i], b = faces[f][(i + 1) % 3];
      if ((a == e.v0 && b == e.v1) || (a == e.v1 && b == e.v0)) lengths[f][i] = old + 1e-3;
    }
  const SurfaceMesh p(m.vertex_count(), faces, lengths);
  const auto rep = mesh_report(p);
  EXPECT_GT(rep.max_vertex_defect, 1e-4);
  const auto d = oracle_defects(p);
  EXPECT_NEAR(rep.max_vertex_defect, *std::max_element(d.begin(), d.end()), 1e-12);
  EXPECT_NE(expect_error([&] { check_flatness(p); }), "");
}

TEST(Laplace, ConstantsInKernelAndMassIsArea) {
  const auto m = build_fuchsian_mesh(2, 1);
  const auto lp = laplace_pair(m);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(m.vertex_count());
  EXPECT_LE((lp.stiffness * one).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(lp.mass.sum(), 4.0 * kPi, 1e-8);
  Eigen::MatrixXd s(lp.stiffness);
  EXPECT_LE((s - s.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Laplace, PositiveSemidefiniteWithOneDimensionalKernel) {
  const auto m = build_fuchsian_mesh(2, 0);
  const auto lp = laplace_pair(m);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd x(m.vertex_count());
    for (auto& v : x) v = n01(rng);
    EXPECT_GE(x.dot(lp.stiffness * x), 0.0);
  }
  const Eigen::VectorXd isq = lp.mass.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd c = isq.asDiagonal() * Eigen::MatrixXd(lp.stiffness) * isq.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  EXPECT_NEAR(es.eigenvalues()[0], 0.0, 1e-10);
  EXPECT_GT(es.eigenvalues()[1], 1e-3);
}
