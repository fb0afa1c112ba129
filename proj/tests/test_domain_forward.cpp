#include "test_support.hpp"

#include <khg/forward.hpp>
#include <khg/grid.hpp>
#include <khg/materials.hpp>
#include <khg/operator.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace khg;

TEST(Grid, OneDimensionalSlab) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(g.hx(), 0.25);
  EXPECT_EQ(g.n_cells(), 4u);
  ASSERT_EQ(g.n_boundary(), 2u);
  EXPECT_DOUBLE_EQ(g.boundary_point(0).normal_x, -1.0);
  EXPECT_DOUBLE_EQ(g.boundary_point(1).normal_x, 1.0);
  EXPECT_DOUBLE_EQ(g.boundary_weights().sum(), 2.0);
}

TEST(Grid, SquarePerimeter) {
  const Grid g = build_grid(3, 3, 3.0, 3.0);
  EXPECT_DOUBLE_EQ(g.hx(), 1.0);
  EXPECT_EQ(g.n_cells(), 9u);
  EXPECT_EQ(g.n_boundary(), 12u);
  EXPECT_DOUBLE_EQ(g.boundary_weights().sum(), 12.0);
}

TEST(Grid, RectanglePerimeterAndPartition) {
  const Grid g = build_grid(10, 20, 1.0, 2.0);
  EXPECT_NEAR(g.hx(), 0.1, 1e-15);
  EXPECT_NEAR(g.hy(), 0.1, 1e-15);
  EXPECT_NEAR(g.boundary_weights().sum(), 6.0, 1e-12);
  EXPECT_EQ(g.interior_ids().size() + g.n_boundary(), 10u * 20u + 2u * (10u + 20u));
  for (const auto& bp : g.boundary()) {
    EXPECT_GE(bp.id, g.n_cells());
    EXPECT_DOUBLE_EQ(std::hypot(bp.normal_x, bp.normal_y), 1.0);
  }
}

TEST(Grid, RejectsBadInput) {
  EXPECT_THROW(build_grid(2, 3, 1.0, 1.0), Error);
  EXPECT_THROW(build_grid(4, 3, 0.0, 1.0), Error);
  EXPECT_THROW(build_grid(4, 3, 1.0, -1.0), Error);
}

TEST(Materials, DiffusionFromCrossSections) {
  EXPECT_DOUBLE_EQ(diffusion_from_cross_sections(1.0, 0.0, 0.0), 1.0 / 3.0);
  EXPECT_NEAR(diffusion_from_cross_sections(2.0, 1.5, 1.0 / 3.0), 1.0 / 4.5, 1e-15);
  EXPECT_THROW(diffusion_from_cross_sections(1.0, 3.0, 0.5), Error);
}

TEST(Materials, BadCrossSectionNamesCell) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  MaterialRegion base;
  base.diffusion = 1.0;
  MaterialRegion bad;
  bad.rect = Rect{0.5, 1.0, 0.0, 1.0};
  bad.sigma_t = 1.0;
  bad.sigma_s = 3.0;
  bad.mu0 = 0.5;
  try {
    MaterialField::from_regions(g, {base, bad});
    FAIL() << "expected a validation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
    EXPECT_NE(std::string(e.what()).find("cell (2,0)"), std::string::npos) << e.what();
  }
}

TEST(Materials, LastRegionWins) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  MaterialRegion a, b;
  a.diffusion = 1.0;
  b.rect = Rect{0.0, 0.5, 0.0, 1.0};
  b.diffusion = 2.0;
  const auto m = MaterialField::from_regions(g, {a, b});
  EXPECT_EQ(m.diffusion()[0], 2.0);
  EXPECT_EQ(m.diffusion()[3], 1.0);
}

TEST(Materials, ValidationIsTotal) {
  for (int trial = 0; trial < 50; ++trial) {
    const Grid g = build_grid(5, 4, 1.0, 1.0);
    const auto m = test::random_media(g, 100 + static_cast<unsigned>(trial));
    const auto b = m.bounds();
    EXPECT_GT(b.d_min, 0.0);
    EXPECT_GE(b.sigma_a_min, 0.0);
  }
  EXPECT_THROW(MaterialField(Vector::Constant(4, -1.0), Vector::Zero(4), Vector::Zero(4)), Error);
  EXPECT_THROW(MaterialField(Vector::Ones(4), Vector::Constant(4, -0.1), Vector::Zero(4)), Error);
}

TEST(Materials, RodAbsorption) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  Scenario s;
  EXPECT_EQ(rod_absorption(s, g), Vector::Zero(4));
  s.sigma_a_cr = 0.2;
  s.rod_mask = {0, 1, 2, 3};
  EXPECT_EQ(rod_absorption(s, g), Vector::Constant(4, 0.2));
  s.sigma_a_cr = 1.0;
  s.rod_mask = {0, 1};
  const Vector expect = (Vector(4) << 1, 1, 0, 0).finished();
  EXPECT_EQ(rod_absorption(s, g), expect);
  s.rod_mask = {7};
  EXPECT_THROW(rod_absorption(s, g), Error);
}

TEST(Materials, SubcriticalityMargin) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 0.1, 0.2);
  Scenario s;
  s.mode = SourceMode::flux_proportional;
  EXPECT_THROW(check_subcritical(s, g, m), Error);
  s.rod_mask = {0, 1, 2, 3};
  s.sigma_a_cr = 0.2;
  EXPECT_NO_THROW(check_subcritical(s, g, m));
}

TEST(Operator, OneDimensionalStencil) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  const auto op = assemble(g, MaterialField::uniform(g, 1.0, 0.0));
  const Matrix a = op.matrix();
  // interior coefficient: D * face length / distance = 1 * 1 / 0.25
  EXPECT_DOUBLE_EQ(a(1, 0), -4.0);
  EXPECT_DOUBLE_EQ(a(1, 1), 8.0);
  EXPECT_DOUBLE_EQ(a(1, 2), -4.0);
  // boundary row: ghost distance h/2 gives 1 / 0.125 = 8 on top of the interior face
  EXPECT_DOUBLE_EQ(a(0, 0), 12.0);
  EXPECT_DOUBLE_EQ(Matrix(op.boundary_coupling())(0, 0), 8.0);
}

TEST(Operator, HarmonicMeanFace) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  const Vector d = (Vector(4) << 1, 1, 2, 2).finished();
  const auto faces = build_faces(g, d);
  EXPECT_NEAR(faces[1].d_face, 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(faces[1].coefficient, 4.0 / 3.0 * 4.0, 1e-14);
}

TEST(Operator, SymmetricForRandomMedia) {
  for (unsigned seed = 1; seed <= 10; ++seed) {
    const Grid g = build_grid(7, 6, 1.3, 0.9);
    const auto op = assemble(g, test::random_media(g, seed));
    const Matrix a = op.matrix();
    EXPECT_EQ((a - a.transpose()).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Operator, IndefiniteReportedAsSubcriticalityViolation) {
  const Grid g = build_grid(5, 1, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 0.0);
  try {
    assemble(g, m, Vector::Constant(5, -1000.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
    EXPECT_NE(std::string(e.what()).find("subcriticality"), std::string::npos);
  }
}

TEST(SolveDirichlet, LinearProfileIsExact) {
  for (std::size_t nx : {3u, 8u, 33u}) {
    const Grid g = build_grid(nx, 1, 1.0, 1.0);
    const auto op = assemble(g, MaterialField::uniform(g, 1.0, 0.0));
    const Vector phi = solve_dirichlet(op, Vector::Zero(static_cast<Eigen::Index>(nx)), Vector::Unit(2, 1));
    for (std::size_t i = 0; i < nx; ++i) EXPECT_NEAR(phi[static_cast<Eigen::Index>(i)], g.center_x(i), 1e-12);
  }
}

TEST(SolveDirichlet, SinhOracleSecondOrder) {
  std::vector<double> err;
  for (std::size_t nx : {20u, 40u, 80u}) {
    const Grid g = build_grid(nx, 1, 1.0, 1.0);
    const auto op = assemble(g, MaterialField::uniform(g, 1.0, 1.0));
    const Vector phi = solve_dirichlet(op, Vector::Zero(static_cast<Eigen::Index>(nx)), Vector::Unit(2, 1));
    double e = 0.0;
    for (std::size_t i = 0; i < nx; ++i)
      e = std::max(e, std::abs(phi[static_cast<Eigen::Index>(i)] - std::sinh(g.center_x(i)) / std::sinh(1.0)));
    err.push_back(e);
  }
  for (std::size_t k = 0; k + 1 < err.size(); ++k) {
    const double order = std::log2(err[k] / err[k + 1]);
    EXPECT_GE(order, 1.8);
    EXPECT_LE(order, 2.2);
  }
  // phi(0.5) from the two straddling cells
  const Grid g = build_grid(80, 1, 1.0, 1.0);
  const auto op = assemble(g, MaterialField::uniform(g, 1.0, 1.0));
  const Vector phi = solve_dirichlet(op, Vector::Zero(80), Vector::Unit(2, 1));
  EXPECT_NEAR(0.5 * (phi[39] + phi[40]), 0.443409, 1e-3);
}

TEST(SolveDirichlet, InterfaceOracle) {
  const std::size_t nx = 100;
  const Grid g = build_grid(nx, 1, 1.0, 1.0);
  Vector d(nx);
  for (std::size_t i = 0; i < nx; ++i) d[static_cast<Eigen::Index>(i)] = g.center_x(i) < 0.5 ? 1.0 : 2.0;
  const MaterialField m(d, Vector::Zero(nx), Vector::Zero(nx));
  const Vector phi = solve_dirichlet(assemble(g, m), Vector::Zero(nx), Vector::Unit(2, 1));
  EXPECT_NEAR(face_value(phi, d, 49, 50), 2.0 / 3.0, 1e-10);
  // piecewise-linear profile with slopes 4/3 and 2/3 is reproduced at every cell
  for (std::size_t i = 0; i < nx; ++i) {
    const double x = g.center_x(i);
    const double exact = x < 0.5 ? 4.0 / 3.0 * x : 2.0 / 3.0 + 2.0 / 3.0 * (x - 0.5);
    EXPECT_NEAR(phi[static_cast<Eigen::Index>(i)], exact, 1e-10);
  }
}

TEST(SolveDirichlet, MaximumPrinciple) {
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const Grid g = build_grid(9, 7, 1.0, 1.0);
    const auto media = test::random_media(g, seed);
    const auto n = static_cast<Eigen::Index>(g.n_cells());
    const MaterialField m(media.diffusion(), Vector::Zero(n), Vector::Zero(n));
    const Vector psi = test::random_vector(static_cast<Eigen::Index>(g.n_boundary()), seed + 50);
    const Vector phi = solve_dirichlet(assemble(g, m), Vector::Zero(static_cast<Eigen::Index>(g.n_cells())), psi);
    EXPECT_GE(phi.minCoeff(), psi.minCoeff() - 1e-12);
    EXPECT_LE(phi.maxCoeff(), psi.maxCoeff() + 1e-12);
  }
}

TEST(Measurements, NoiseFreeSamplingIsExact) {
  const Grid g = build_grid(6, 5, 1.0, 1.0);
  const auto m = test::random_media(g, 3);
  const Vector phi = test::random_vector(30, 4);
  const Vector psi = test::random_vector(static_cast<Eigen::Index>(g.n_boundary()), 5);
  const auto ms = synthesize_measurements(phi, psi, g, m, {0, 7, 29}, 0.0, 1);
  EXPECT_EQ(ms.u_obs[0], phi[0]);
  EXPECT_EQ(ms.u_obs[1], phi[7]);
  EXPECT_EQ(ms.u_obs[2], phi[29]);
  EXPECT_EQ(ms.psi_obs, psi);
  EXPECT_THROW(synthesize_measurements(phi, psi, g, m, {30}, 0.0, 1), Error);
}

TEST(Measurements, LinearProfileCurrentSigns) {
  const Grid g = build_grid(10, 1, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 0.0);
  const Vector psi = Vector::Unit(2, 1);
  const Vector phi = solve_dirichlet(assemble(g, m), Vector::Zero(10), psi);
  const auto ms = synthesize_measurements(phi, psi, g, m, {0}, 0.0, 1);
  EXPECT_NEAR(ms.current_obs[0], -1.0, 1e-12);  // x = 0, outward normal -x
  EXPECT_NEAR(ms.current_obs[1], 1.0, 1e-12);   // x = 1, outward normal +x
}

TEST(Measurements, NoiseStatistics) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 0.0);
  const Vector phi = Vector::Constant(4, 2.0);
  std::vector<double> draws;
  for (std::uint64_t seed = 0; seed < 10000; ++seed)
    draws.push_back(synthesize_measurements(phi, Vector::Ones(2), g, m, {1}, 0.01, seed).u_obs[0]);
  const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
  double var = 0.0;
  for (double v : draws) var += (v - mean) * (v - mean);
  const double rel_std = std::sqrt(var / static_cast<double>(draws.size() - 1)) / mean;
  EXPECT_NEAR(rel_std, 0.01, 0.15 * 0.01);
}

TEST(Measurements, SeededNoiseIsReproducible) {
  const Grid g = build_grid(5, 5, 1.0, 1.0);
  const auto m = test::random_media(g, 9);
  const Vector phi = test::random_vector(25, 1);
  const Vector psi = test::random_vector(20, 2);
  const auto a = synthesize_measurements(phi, psi, g, m, {1, 2, 3}, 0.05, 77);
  const auto b = synthesize_measurements(phi, psi, g, m, {1, 2, 3}, 0.05, 77);
  EXPECT_EQ(a.u_obs, b.u_obs);
  EXPECT_EQ(a.current_obs, b.current_obs);
  EXPECT_EQ(a.psi_obs, b.psi_obs);
}

TEST(ForwardPicard, NoCouplingConvergesInOneIteration) {
  const Grid g = build_grid(8, 1, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 1.0, 0.0);
  Scenario s;
  s.mode = SourceMode::flux_proportional;
  s.psi = Vector::Unit(2, 1);
  const auto r = forward_picard(g, m, s, 1e-10, 50);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_TRUE(r.converged);
  const Vector direct = solve_dirichlet(assemble(g, m), Vector::Zero(8), s.psi);
  EXPECT_LE((r.phi - direct).norm() / direct.norm(), 1e-12);
}

TEST(ForwardPicard, MatchesDirectSolveWithReducedAbsorption) {
  const Grid g = build_grid(40, 1, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 1.0, 0.1);
  Scenario s;
  s.mode = SourceMode::flux_proportional;
  s.psi = (Vector(2) << 0.5, 1.0).finished();
  const double tol = 1e-10;
  const auto r = forward_picard(g, m, s, tol, 200);
  ASSERT_TRUE(r.converged);
  const Vector direct = solve_dirichlet(assemble(g, MaterialField::uniform(g, 1.0, 0.9)), Vector::Zero(40), s.psi);
  EXPECT_LE((r.phi - direct).norm() / direct.norm(), 1e-8);
  // contraction factor of the lagged source is below one and roughly steady
  ASSERT_GE(r.ratios.size(), 3u);
  EXPECT_LT(r.ratios[r.ratios.size() - 2], 1.0);
  EXPECT_NEAR(r.ratios[2], r.ratios[1], 0.05);
}

TEST(ForwardPicard, FixedPointMatchesFullOperatorOnRandomMedia) {
  for (unsigned seed = 1; seed <= 4; ++seed) {
    const Grid g = build_grid(9, 8, 1.0, 1.0);
    const auto m = test::random_media(g, seed, 0.3);
    Scenario s;
    s.mode = SourceMode::flux_proportional;
    s.psi = test::random_vector(static_cast<Eigen::Index>(g.n_boundary()), seed).cwiseAbs();
    s.sigma_a_cr = 0.4;
    s.rod_mask = {3, 4, 5, 12, 13};
    const double tol = 1e-9;
    const auto r = forward_picard(g, m, s, tol, 500);
    ASSERT_TRUE(r.converged);
    const Vector direct = truth_flux(g, m, s);
    EXPECT_LE((r.phi - direct).norm() / direct.norm(), 10 * tol);
  }
}
