#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "supertoda/saddle.hpp"

using namespace supertoda;
using namespace supertoda::saddle;
using Eigen::VectorXd;
using variational::FieldState;
using variational::Model;

namespace {

struct Setup {
  hypmesh::SurfaceMesh mesh = hypmesh::build_fuchsian_mesh(2, 0);
  std::unique_ptr<Model> model;
  Setup() {
    const auto classes = spinops::enumerate_spin_classes(mesh);
    std::optional<spinops::DiracSpectrum> best;
    for (const auto& c : classes) {
      auto s = spinops::eigendecompose(spinops::assemble_dirac(mesh, c));
      if (s.kernel_dim == 0 && (!best || s.min_abs_eigenvalue() > best->min_abs_eigenvalue())) best = std::move(s);
    }
    model = std::make_unique<Model>(mesh, std::move(*best));
  }
};

const Model& model() {
  static const Setup s;
  return *s.model;
}
double lambda1() { return model().spectrum().lambda_first(); }

SolverConfig config(double rho) {
  SolverConfig c;
  c.rho = rho;
  return c;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

bool same_state(const FieldState& a, const FieldState& b) {
  return a.u1 == b.u1 && a.u2 == b.u2 && a.a1 == b.a1 && a.a2 == b.a2;
}

} // namespace

TEST(Seeds, BifurcationSeedEnergy) {
  const double rho = 0.5 * lambda1();
  for (double eps : {1e-3, 0.1, 0.7}) {
    const auto s = seed_bifurcation(model(), rho, 1, eps);
    EXPECT_NEAR(variational::evaluate_J(model(), s).J, 2.0 * (lambda1() - rho) * eps * eps, 1e-13);
  }
  const auto z = seed_bifurcation(model(), rho, 1, 0.0);
  EXPECT_EQ(variational::evaluate_J(model(), z).J, 0.0);
  EXPECT_EQ(psi_l2(model(), z), 0.0);
}

TEST(Seeds, EndpointIsBelowZero) {
  for (double rho : {0.5 * lambda1(), 3.0 * lambda1()}) {
    const auto e = default_endpoint(model(), rho);
    EXPECT_LT(variational::evaluate_J(model(), e).J, 0.0);
    EXPECT_LE(variational::nehari_constraint(model(), e).norm(), 1e-12);
  }
  EXPECT_NE(error_of([] { seed_endpoint(model(), 0.5 * lambda1(), 1.0, 1, -1.0); }), "");
  EXPECT_NE(error_of([] { seed_endpoint(model(), lambda1(), 1.0, 1, 1.0); }).find("exceptional rho"),
            std::string::npos);
}

TEST(Config, ValidationRejectsBadValues) {
  auto c = config(0.05);
  EXPECT_NO_THROW(c.validate());
  c.tau = 1.0;
  EXPECT_NE(error_of([&] { c.validate(); }).find("tau"), std::string::npos);
  c = config(0.05);
  c.R = 1.5;
  EXPECT_NE(error_of([&] { c.validate(); }).find("R must"), std::string::npos);
  c = config(-1.0);
  EXPECT_NE(error_of([&] { c.validate(); }).find("rho"), std::string::npos);
}

TEST(Newton, TrivialStateNeedsNoSteps) {
  const double rho = 0.5 * lambda1();
  const auto r = newton_refine(model(), variational::trivial_state(model().spectrum(), rho), config(rho));
  EXPECT_EQ(r.report.outcome, Outcome::converged);
  EXPECT_EQ(r.report.steps, 0);
  const auto v = verify_solution(model(), r.state, config(rho));
  EXPECT_EQ(v.verdict, "trivial solution");
  EXPECT_FALSE(v.efimov_flag);
}

TEST(Search, TrivialEndpointIsReported) {
  const double rho = 0.5 * lambda1();
  auto cfg = config(rho);
  cfg.path_points = 8;
  const auto r = mountain_pass_search(model(), cfg, variational::trivial_state(model().spectrum(), rho));
  EXPECT_EQ(r.report.outcome, Outcome::trivial_attractor);
  EXPECT_EQ(psi_l2(model(), r.state), 0.0);
}

TEST(Search, ShortRunIsDeterministicAndMonotone) {
  auto cfg = config(0.5 * lambda1());
  cfg.max_deform_steps = 60;
  const auto a = mountain_pass_search(model(), cfg);
  const auto b = mountain_pass_search(model(), cfg);
  EXPECT_TRUE(same_state(a.state, b.state));
  EXPECT_EQ(a.report.J_value, b.report.J_value);
  ASSERT_FALSE(a.deformation_max.empty());
  for (const auto& [before, after] : a.deformation_max) EXPECT_LE(after, before);
  EXPECT_GT(a.report.linking_level_estimate, 0.0);
}

TEST(Solve, MountainPassSolutionAndOrbitRefinement) {
  const double rho = 0.5 * lambda1();
  const auto cfg = config(rho);
  const auto res = solve(model(), cfg);
  ASSERT_EQ(res.report.outcome, Outcome::converged) << res.report.message;
  EXPECT_LE(res.report.residuals.max(), 1e-10);
  EXPECT_LE(res.report.constraint_norm, 1e-8);
  EXPECT_FALSE(res.report.efimov_flag);
  EXPECT_NEAR(res.report.J_value, 27.305831480166532, 1e-6 * 27.305831480166532);
  EXPECT_GT(res.report.J_value, 0.0);

  const auto v = verify_solution(model(), res.state, cfg);
  EXPECT_EQ(v.verdict, "solution");
  EXPECT_EQ(v.classification, "mountain_pass");
  EXPECT_GT(variational::standard_deviation(model(), res.state.u1), 1e-3);

  Quat q(0.4, -0.2, 0.7, 0.1);
  q.normalize();
  const auto moved = variational::quaternion_act(model().spectrum(), res.state, q);
  EXPECT_NEAR(variational::evaluate_J(model(), moved).J, res.report.J_value, 1e-9 * res.report.J_value);
  const auto again = newton_refine(model(), moved, cfg);
  EXPECT_EQ(again.report.outcome, Outcome::converged);
  EXPECT_LE(again.report.steps, 2);
}

TEST(Verify, ConstantFieldSetsEfimovFlag) {
  const auto& spec = model().spectrum();
  const double rho = 0.5 * lambda1();
  const int k = positive_mode(model(), 1);
  const double c = std::log(spec.eigenvalues[k] / rho);
  VectorXd a = VectorXd::Zero(spec.size());
  a[k] = 1.0;
  const int nv = model().vertex_count();
  const auto s = variational::from_coeffs(spec, VectorXd::Constant(nv, c), VectorXd::Constant(nv, c), a, a, rho);
  const auto v = verify_solution(model(), s, config(rho));
  EXPECT_TRUE(v.efimov_flag);
  EXPECT_TRUE(v.nontrivial);
  EXPECT_LE(v.residuals.sT_psi, 1e-12);
  EXPECT_EQ(v.verdict, "not a solution");
}

TEST(Sweep, EmptyAndInvalidGrids) {
  const auto base = config(0.05);
  EXPECT_TRUE(continuation_sweep(model(), {}, base).empty());
  EXPECT_NE(error_of([&] { continuation_sweep(model(), {0.2, 0.1}, base); }).find("strictly increasing"),
            std::string::npos);
}

TEST(Sweep, DimensionJumpAcrossFirstEigenvalue) {
  auto base = config(0.05);
  base.path_points = 8;
  base.max_deform_steps = 3;
  base.max_newton_steps = 1;
  const double l1 = lambda1();
  const double mid = 0.5 * (model().spectrum().lambda_positive(4) + model().spectrum().lambda_positive(5));
  const auto out = continuation_sweep(model(), {0.5 * l1, l1, mid}, base);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].report.nehari_dim, 0);
  EXPECT_EQ(out[1].report.outcome, Outcome::numeric_failure);
  EXPECT_NE(out[1].report.message.find("exceptional rho"), std::string::npos);
  EXPECT_EQ(out[2].report.nehari_dim, 4);
  EXPECT_NE(out[2].report.message.find("dim N jumps 0 -> 4"), std::string::npos);
}

TEST(Index, TrivialNegativeIndexIsTwiceLinkingDimension) {
  EXPECT_EQ(trivial_negative_index(model(), 0.5 * lambda1()), 0);
  for (double f : {1.5, 3.0, 6.0}) {
    const double rho = f * lambda1();
    const auto b = b_modes(model(), rho);
    EXPECT_EQ(trivial_negative_index(model(), rho), 2 * static_cast<int>(b.size())) << f;
  }
}

TEST(Cone, PositiveOutsideConeAndNonpositiveOnLinearPart) {
  const auto low = cone_diagnostic(model(), 0.5 * lambda1(), 4.0, 0.5, 100, 1);
  EXPECT_TRUE(low.all_positive);
  EXPECT_EQ(low.samples, 100);
  EXPECT_GT(low.C, 0.0);
  EXPECT_EQ(low.linear_samples, 0);

  const auto high = cone_diagnostic(model(), 3.0 * lambda1(), 4.0, 0.5, 100, 1);
  EXPECT_TRUE(high.all_positive);
  EXPECT_EQ(high.linear_samples, 100);
  EXPECT_LE(high.max_J_on_linear_part, 1e-8);

  const auto again = cone_diagnostic(model(), 3.0 * lambda1(), 4.0, 0.5, 100, 1);
  EXPECT_EQ(again.C, high.C);
}

TEST(Cone, SampledStatesLieOnSphereAndConstraint) {
  std::mt19937_64 rng(4);
  const double rho = 3.0 * lambda1();
  const auto b = b_modes(model(), rho);
  const VectorXd z = VectorXd::Zero(model().vertex_count());
  const auto s = variational::nehari_project(model(), z, z, variational::random_coeffs(model(), b, rng, 0.3),
                                             variational::random_coeffs(model(), b, rng, 0.3), rho);
  EXPECT_TRUE(in_cone(model(), s, 4.0, b));
  EXPECT_LE(variational::evaluate_J(model(), s).J, 0.0);
}
