#include "test_support.hpp"

#include <khg/diagnostics.hpp>
#include <khg/picard.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace khg;

namespace {

struct FluxCase {
  Grid grid;
  MaterialField media;
  Scenario scenario;
  LiftingField lifting;
  TrainingData data;
};

FluxCase flux_case(std::size_t n, unsigned seed) {
  const Grid g = build_grid(n, n, 1.0, 1.0);
  const auto m = test::random_media(g, seed, 0.6);
  Scenario s;
  s.name = "flux";
  s.mode = SourceMode::flux_proportional;
  s.psi = (0.5 + test::random_vector(static_cast<Eigen::Index>(g.n_boundary()), seed + 1).cwiseAbs().array()).matrix();
  s.sigma_a_cr = 0.3;
  for (std::size_t k = 0; k < g.n_cells(); k += 3) s.rod_mask.push_back(k);
  const Vector phi = truth_flux(g, m, s);
  std::vector<std::size_t> ids(g.n_cells());
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
  const auto ms = synthesize_measurements(phi, s.psi, g, m, ids, 0.0, 1);
  auto lf = build_lifting(s.psi, g, m);
  auto td = make_training_data(ms, lf, g, m, Vector::Zero(static_cast<Eigen::Index>(g.n_cells())));
  return {g, m, s, std::move(lf), std::move(td)};
}

}  // namespace

TEST(NonlinearSource, ZeroCouplingIsUIndependent) {
  const Grid g = build_grid(5, 4, 1.0, 1.0);
  const auto m = test::random_media(g, 3);
  Scenario s;
  s.mode = SourceMode::flux_proportional;
  s.psi = test::random_vector(18, 1);
  const auto lf = build_lifting(s.psi, g, m);
  const Vector expect = effective_source(Vector::Zero(20), lf, m);
  for (unsigned k = 0; k < 3; ++k)
    EXPECT_LE((nonlinear_source(test::random_vector(20, k), lf, m, s, g) - expect).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(NonlinearSource, NegativeLiftingCancelsCoupling) {
  const auto c = flux_case(5, 2);
  const Vector q = nonlinear_source(-c.lifting.w, c.lifting, c.media, c.scenario, c.grid);
  const Vector expect = c.lifting.grad_term - c.media.sigma_a().cwiseProduct(c.lifting.w);
  EXPECT_LE((q - expect).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
}

TEST(NonlinearSource, LipschitzInSup) {
  const auto c = flux_case(6, 4);
  const NonlinearSource src(c.lifting, c.media, c.scenario, c.grid);
  const double l_s = source_coupling(c.scenario, c.grid, c.media).cwiseAbs().maxCoeff();
  EXPECT_EQ(src.lipschitz(), l_s);
  for (unsigned k = 0; k < 100; ++k) {
    const Vector u1 = test::random_vector(36, 2 * k), u2 = test::random_vector(36, 2 * k + 1);
    EXPECT_LE(volume_norm(c.grid, src(u1) - src(u2)), l_s * volume_norm(c.grid, u1 - u2) * (1 + 1e-12));
  }
}

TEST(Lipschitz, Examples) {
  const Grid g = build_grid(4, 4, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 1.0, 0.5);
  Scenario s;
  s.mode = SourceMode::flux_proportional;
  for (std::size_t k = 0; k < 16; ++k) s.rod_mask.push_back(k);
  s.sigma_a_cr = 0.2;
  // ||f1||_L2(Gamma) = 1, ||f2||_L2(Omega) = 2
  const auto c = lipschitz_constants(g, Vector::Constant(16, 0.5), Vector::Constant(16, 2.0), m, s, 1.0,
                                     0.1, 0.5, 0.4);
  EXPECT_NEAR(c.l_s, 0.3, 1e-15);
  EXPECT_NEAR(c.l_f, 3.0, 1e-14);
  EXPECT_NEAR(c.l_kinv, 1.0, 1e-15);
  EXPECT_NEAR(c.l_t, 0.9, 1e-14);

  s.rod_mask.clear();
  const auto none = lipschitz_constants(g, Vector::Constant(16, 0.5), Vector::Constant(16, 2.0),
                                        MaterialField::uniform(g, 1.0, 1.0), s, 1.0, 0.1, 0.5, 0.4);
  EXPECT_EQ(none.l_s, 0.0);
  EXPECT_EQ(none.l_t, 0.0);
}

TEST(Picard, LinearModeStopsAfterSecondIteration) {
  const Grid g = build_grid(5, 5, 1.0, 1.0);
  const auto m = test::random_media(g, 5);
  Scenario s;
  s.mode = SourceMode::linear;
  s.q_ext = test::random_vector(25, 1).cwiseAbs();
  s.psi = test::random_vector(20, 2).cwiseAbs();
  const auto data = test::linear_training_data(g, m, s.q_ext, s.psi);
  const auto lf = build_lifting(s.psi, g, m);
  const KernelSpace space(g);
  const auto r = iterate(space, data, NonlinearSource(lf, m, s, g), m, s, TikhonovConfig{}, PicardConfig{});
  EXPECT_TRUE(r.trace.converged);
  EXPECT_EQ(r.trace.n_iters, 2);
  EXPECT_EQ(r.trace.kernel_steps.back(), 0.0);
  EXPECT_EQ(r.trace.constants.l_t, 0.0);
}

TEST(Picard, ContractionWithinAnalyticBound) {
  const auto c = flux_case(6, 7);
  const KernelSpace space(c.grid);
  PicardConfig pc;
  pc.keep_history = true;
  const TikhonovConfig tik;
  const auto r = iterate(space, c.data, NonlinearSource(c.lifting, c.media, c.scenario, c.grid), c.media,
                         c.scenario, tik, pc);
  ASSERT_TRUE(r.trace.converged);
  const double l_t = r.trace.constants.l_t;
  ASSERT_LT(l_t, 1.0);
  for (double ratio : r.trace.ratios) {
    EXPECT_TRUE(std::isfinite(ratio));
    EXPECT_LE(ratio, l_t + 0.05);
  }
  EXPECT_LE(r.trace.relative_steps.back(), pc.tol);

  // a-priori geometric bound against the converged kernel
  const auto& h = r.trace.history;
  ASSERT_EQ(h.size(), static_cast<std::size_t>(r.trace.n_iters) + 1);
  const DiscreteKernel& star = h.back();
  const double first = space.x_norm(h[1] - h[0]);
  const double slack = 10 * pc.tol * space.x_norm(star);
  for (std::size_t n = 0; n + 1 < h.size(); ++n) {
    const double bound = std::pow(l_t, static_cast<double>(n)) / (1 - l_t) * first;
    EXPECT_LE(space.x_norm(h[n + 1] - star), bound + slack) << "n = " << n;
  }

  // one more full step leaves the limit in place
  TrainingData td = c.data;
  td.q_eff = NonlinearSource(c.lifting, c.media, c.scenario, c.grid)(r.u);
  const auto again = train(space, td, tik, {false});
  EXPECT_LE(space.x_norm(again.kernel - r.kernel), 10 * pc.tol * space.x_norm(r.kernel));
}

TEST(Picard, PredictionMatchesTruth) {
  const auto c = flux_case(6, 9);
  const KernelSpace space(c.grid);
  const NonlinearSource src(c.lifting, c.media, c.scenario, c.grid);
  const auto r = iterate(space, c.data, src, c.media, c.scenario, TikhonovConfig{}, PicardConfig{});
  const auto flux = fixed_kernel_flux(r.kernel, c.data.g, src, 1e-12, 200);
  ASSERT_TRUE(flux.converged);
  const Vector truth = truth_flux(c.grid, c.media, c.scenario);
  const Vector phi = shift_to_physical(flux.u, c.lifting);
  EXPECT_LE((phi - truth).norm(), 1e-2 * truth.norm());
}

TEST(Picard, RejectsBadConfig) {
  PicardConfig pc;
  pc.tol = 0.0;
  EXPECT_THROW(pc.validate(), Error);
  pc.tol = 1e-6;
  pc.max_iter = 0;
  EXPECT_THROW(pc.validate(), Error);
}

TEST(FixedKernelFlux, MatchesForwardSolveWithOracleKernel) {
  const auto c = flux_case(7, 11);
  const auto k = oracle_kernel(assemble(c.grid, c.media));
  const NonlinearSource src(c.lifting, c.media, c.scenario, c.grid);
  const auto flux = fixed_kernel_flux(k, c.data.g, src, 1e-13, 500);
  ASSERT_TRUE(flux.converged);
  const Vector truth = truth_flux(c.grid, c.media, c.scenario);
  EXPECT_LE((shift_to_physical(flux.u, c.lifting) - truth).norm(), 1e-10 * truth.norm());
}

TEST(FixedKernelFlux, SupercriticalCouplingDiverges) {
  const Grid g = build_grid(6, 6, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 0.1, 60.0);
  Scenario s;
  s.mode = SourceMode::flux_proportional;
  s.psi = Vector::Ones(24);
  const auto lf = build_lifting(s.psi, g, m);
  const auto k = oracle_kernel(assemble(g, m));
  try {
    fixed_kernel_flux(k, Vector::Zero(24), NonlinearSource(lf, m, s, g), 1e-10, 100);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
    EXPECT_NE(std::string(e.what()).find("diverges"), std::string::npos);
  }
}

TEST(Poincare, UnitIntervalAndSquare) {
  EXPECT_NEAR(poincare_constant(build_grid(201, 1, 1.0, 1.0)).c_p, 1 / std::numbers::pi, 0.005 / std::numbers::pi);
  const double sq = 1 / (std::numbers::pi * std::sqrt(2.0));
  EXPECT_NEAR(poincare_constant(build_grid(101, 101, 1.0, 1.0)).c_p, sq, 0.01 * sq);
}

TEST(Poincare, DomainScaling) {
  const double a = poincare_constant(build_grid(21, 21, 1.0, 1.0)).c_p;
  const double b = poincare_constant(build_grid(21, 21, 2.0, 2.0)).c_p;
  EXPECT_NEAR(b / a, 2.0, 0.02);
}

TEST(Poincare, SecondOrderConvergence) {
  std::vector<double> err;
  for (std::size_t nx : {25u, 50u, 100u}) err.push_back(std::abs(poincare_constant(build_grid(nx, 1, 1.0, 1.0)).c_p - 1 / std::numbers::pi));
  for (std::size_t k = 0; k + 1 < err.size(); ++k) EXPECT_NEAR(std::log2(err[k] / err[k + 1]), 2.0, 0.2);
}

TEST(LaxMilgram, Examples) {
  const double c_p = 1 / std::numbers::pi;
  const auto a = lax_milgram_constants(MaterialBounds{1.0, 2.0, 0.1, 0.5}, c_p);
  EXPECT_NEAR(a.m_a, 2.05066, 1e-5);
  EXPECT_NEAR(a.c_a, 0.98696, 1e-5);
  EXPECT_EQ(a.c_a_gradient, 1.0);

  const auto b = lax_milgram_constants(MaterialBounds{0.5, 3.0, 0.0, 0.0}, c_p);
  EXPECT_EQ(b.m_a, 3.0);
  EXPECT_EQ(b.c_a, 0.0);

  const double pi2 = std::numbers::pi * std::numbers::pi;
  const auto c = lax_milgram_constants(MaterialBounds{1.0, 1.0, pi2, pi2}, c_p);
  EXPECT_NEAR(c.m_a, 2.0, 1e-14);
  EXPECT_NEAR(c.c_a, 1.0, 1e-14);
}

TEST(FunctionalBound, Examples) {
  const Grid g = build_grid(4, 1, 1.0, 1.0);
  const auto m = MaterialField::uniform(g, 1.0, 0.5);
  LiftingField lf;
  lf.w = Vector::Zero(4);
  lf.w_boundary = Vector::Zero(2);
  lf.grad_term = Vector::Zero(4);
  EXPECT_EQ(functional_bound(Vector::Zero(4), lf, m, g, 0.3), 0.0);

  // ||Q|| = 1, ||w|| = 1; the boundary half-faces carry ||grad w|| = 2
  lf.w = Vector::Ones(4);
  lf.w_boundary = (Vector(2) << 0.5, 1.5).finished();
  EXPECT_NEAR(lifting_gradient_norm(lf, g), 2.0, 1e-14);
  EXPECT_NEAR(functional_bound(Vector::Ones(4), lf, m, g, 0.3), 2.45, 1e-14);
}

TEST(FunctionalBound, RandomizedCheck) {
  const Grid g = build_grid(8, 7, 1.0, 1.0);
  const auto m = test::random_media(g, 6);
  const Vector q = test::random_vector(56, 1);
  const auto lf = build_lifting(test::random_vector(30, 2), g, m);
  const double c_p = poincare_constant(g).c_p;
  EXPECT_EQ(verify_functional_bound(assemble(g, m), q, lf, functional_bound(q, lf, m, g, c_p), 1000), 0);
}

TEST(BilinearBounds, HomogeneousAndTwoRegion) {
  const Grid g = build_grid(10, 10, 1.0, 1.0);
  const double c_p = poincare_constant(g).c_p;

  const auto plain = MaterialField::uniform(g, 1.0, 0.0);
  const auto lm = lax_milgram_constants(plain, c_p);
  EXPECT_EQ(lm.m_a, 1.0);
  EXPECT_EQ(lm.c_a, 0.0);
  const auto a = verify_bilinear_bounds(assemble(g, plain), lm.m_a, lm.c_a, 1000);
  EXPECT_EQ(a.continuity_violations, 0);
  EXPECT_EQ(a.coercivity_violations, 0);
  EXPECT_GE(a.min_coercivity_ratio, 0.0);

  MaterialRegion base, insert;
  base.diffusion = 1.0;
  base.sigma_a = 0.2;
  insert.rect = Rect{0.5, 1.0, 0.0, 1.0};
  insert.diffusion = 3.0;
  insert.sigma_a = 0.8;
  const auto two = MaterialField::from_regions(g, {base, insert});
  const auto lm2 = lax_milgram_constants(two, c_p);
  const auto b = verify_bilinear_bounds(assemble(g, two), lm2.m_a, lm2.c_a, 1000);
  EXPECT_EQ(b.continuity_violations, 0);
  EXPECT_EQ(b.coercivity_violations, 0);
  // gradient-norm coercivity D_min holds as well
  const auto c = verify_bilinear_bounds(assemble(g, two), lm2.m_a, lm2.c_a_gradient, 1000);
  EXPECT_EQ(c.coercivity_violations, 0);
}

namespace {

double trace_ratio(const KernelSpace& space, const DiscreteKernel& k) {
  double bnd = 0.0;
  for (Eigen::Index b = 0; b < k.n_bnd(); ++b) bnd += space.bnd_weight()[b] * k.g_bnd.col(b).squaredNorm();
  return std::sqrt((space.trace_norm_sq(k) + bnd) / space.x_norm_sq(k));
}

}  // namespace

TEST(TraceConstant, ScaleInvariantRatio) {
  const Grid g = build_grid(6, 5, 1.0, 1.0);
  const KernelSpace space(g);
  const auto k = test::random_kernel(g, 3);
  for (double c : {1e-3, 2.0, -7.5}) EXPECT_NEAR(trace_ratio(space, c * k), trace_ratio(space, k), 1e-13);
}

TEST(TraceConstant, UpperBoundsEveryTestKernel) {
  const Grid g = build_grid(7, 6, 1.0, 1.0);
  const KernelSpace space(g);
  const auto tc = trace_constant(g);
  EXPECT_GE(tc.c_trace, 1.0);
  EXPECT_GE(tc.c_trace, tc.volume_trace);
  for (unsigned s = 0; s < 50; ++s)
    EXPECT_LE(trace_ratio(space, test::random_kernel(g, s)), tc.c_trace * (1 + 1e-6));

  DiscreteKernel k = DiscreteKernel::zeros(g);
  k.g_vol.setOnes();
  EXPECT_LE(trace_ratio(space, k), tc.c_trace * (1 + 1e-6));
  // concentrate the source variable on cells touching the boundary
  k.g_vol.setZero();
  for (const auto& bp : g.boundary()) k.g_vol.col(static_cast<Eigen::Index>(bp.cell)).setOnes();
  EXPECT_LE(trace_ratio(space, k), tc.volume_trace * (1 + 1e-6));
  k.g_vol.setZero();
  k.g_bnd.setOnes();
  EXPECT_NEAR(trace_ratio(space, k), 1.0, 1e-14);
}

TEST(TraceConstant, RefinementTable) {
  double prev = 0.0;
  for (std::size_t n : {11u, 21u, 41u}) {
    const auto tc = trace_constant(build_grid(n, n, 1.0, 1.0));
    RecordProperty("volume_trace_" + std::to_string(n), std::to_string(tc.volume_trace));
    EXPECT_GE(tc.volume_trace, prev);
    prev = tc.volume_trace;
  }
}

TEST(Spectrum, RegularizedMinimumAboveAlphaOnRandomProblems) {
  const Grid g = build_grid(4, 4, 1.0, 1.0);
  const KernelSpace space(g);
  for (unsigned seed = 1; seed <= 10; ++seed) {
    const auto m = test::random_media(g, seed);
    const auto data = test::linear_training_data(g, m, test::random_vector(16, seed).cwiseAbs(),
                                                 test::random_vector(16, seed + 30).cwiseAbs());
    TikhonovConfig cfg;
    cfg.alpha = 1e-3;
    const auto s = hessian_spectrum(TrainingProblem(space, data, cfg));
    EXPECT_GE(s.lambda_min, cfg.alpha * (1 - 1e-6));
    EXPECT_LE(s.lambda_min, s.lambda_max);
  }
}

TEST(ConstantsReport, ReproducibleAndViolationFree) {
  const auto c = flux_case(6, 13);
  const KernelSpace space(c.grid);
  TrainingData td = c.data;
  td.q_eff = NonlinearSource(c.lifting, c.media, c.scenario, c.grid)(Vector::Zero(36));
  const TrainingProblem p(space, td, TikhonovConfig{});
  const Vector q = Vector::Zero(36);
  const auto a = compute_constants(p, c.media, c.lifting, q, 1000);
  const auto b = compute_constants(p, c.media, c.lifting, q, 1000);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(a.total_violations(), 0);
  EXPECT_GT(a.c_p, 0.0);
  EXPECT_GT(a.m_a, 0.0);
  EXPECT_GT(a.c_a, 0.0);
  EXPECT_GT(a.c_trace, 0.0);
  EXPECT_GT(a.condition, 1.0);
  EXPECT_NE(to_key_value(a).find("C_trace="), std::string::npos);
}
