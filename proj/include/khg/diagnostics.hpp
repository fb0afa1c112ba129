#ifndef KHG_DIAGNOSTICS_HPP
#define KHG_DIAGNOSTICS_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>
#include <khg/inverse.hpp>
#include <khg/kernel.hpp>
#include <khg/kernel_space.hpp>
#include <khg/lifting.hpp>
#include <khg/materials.hpp>
#include <khg/operator.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>

namespace khg {

/// Cell-integrated Dirichlet Laplacian (D = 1, sigma_a = 0): u^T A u = ||grad u||^2.
inline DiscreteOperator laplacian_operator(const Grid& g) {
  return assemble(g, MaterialField::uniform(g, 1.0, 0.0));
}

struct PoincareResult {
  double c_p;
  double lambda1;
  int iterations;
};

/// C_p = 1/sqrt(lambda_1) of the discrete Dirichlet Laplacian, by inverse power iteration.
inline PoincareResult poincare_constant(const Grid& g, double rel_tol = 1e-10, int max_iter = 10000) {
  const auto op = laplacian_operator(g);
  Vector y(static_cast<Eigen::Index>(g.n_cells()));
  for (std::size_t k = 0; k < g.n_cells(); ++k) {
    const auto [i, j] = g.cell_ij(k);
    y[static_cast<Eigen::Index>(k)] = 1.0 + 0.1 * std::sin(3.0 * static_cast<double>(i + 2 * j));
  }
  y.normalize();
  double mu = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Vector z = op.solve(y);
    z.normalize();
    const double next = z.dot(op.apply(z));
    y = z;
    if (it > 1 && std::abs(next - mu) <= rel_tol * next) {
      const double lambda1 = next / g.cell_area();
      return {1.0 / std::sqrt(lambda1), lambda1, it};
    }
    mu = next;
  }
  fail(ErrorKind::numerical, "poincare constant: inverse power iteration stagnated");
}

struct LaxMilgramConstants {
  double m_a;           // D_max + sigma_a,max C_p^2
  double c_a;           // min{D_min, sigma_a,min / C_p^2}
  double c_a_gradient;  // D_min, the coercivity constant under the gradient norm
};

inline LaxMilgramConstants lax_milgram_constants(const MaterialBounds& b, double c_p) {
  return {b.d_max + b.sigma_a_max * c_p * c_p, std::min(b.d_min, b.sigma_a_min / (c_p * c_p)), b.d_min};
}

inline LaxMilgramConstants lax_milgram_constants(const MaterialField& m, double c_p) {
  return lax_milgram_constants(m.bounds(), c_p);
}

/// C_F = ||Q|| C_p + D_max ||grad w|| + sigma_a,max ||w|| C_p.
inline double functional_bound(const Vector& q, const LiftingField& lf, const MaterialField& m,
                               const Grid& g, double c_p) {
  const auto b = m.bounds();
  return volume_norm(g, q) * c_p + b.d_max * lifting_gradient_norm(lf, g) +
         b.sigma_a_max * volume_norm(g, lf.w) * c_p;
}

struct BilinearCheck {
  int samples = 0;
  int continuity_violations = 0;
  int coercivity_violations = 0;
  double max_continuity_ratio = 0.0;  // |a(u,v)| / (||u|| ||v||)
  double min_coercivity_ratio = 0.0;  // a(u,u) / ||u||^2
};

/// Randomized check of |a(u,v)| <= (M_a + eps)|u||v| and a(u,u) >= (C_a - eps)|u|^2
/// with a(u,v) = v^T A u and |u| the discrete H1_0 seminorm.
inline BilinearCheck verify_bilinear_bounds(const DiscreteOperator& op, double m_a, double c_a,
                                            int n_samples, std::uint64_t seed = 42,
                                            double eps = 1e-9) {
  const Grid& g = op.grid();
  const auto lap = laplacian_operator(g);
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto draw = [&] {
    Vector v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = normal(rng);
    return v;
  };
  BilinearCheck c;
  c.samples = n_samples;
  c.min_coercivity_ratio = std::numeric_limits<double>::infinity();
  for (int s = 0; s < n_samples; ++s) {
    const Vector u = draw(), v = draw();
    const double nu = std::sqrt(u.dot(lap.apply(u))), nv = std::sqrt(v.dot(lap.apply(v)));
    const Vector au = op.apply(u);
    const double auv = v.dot(au), auu = u.dot(au);
    if (std::abs(auv) > (m_a + eps) * nu * nv) ++c.continuity_violations;
    if (auu < (c_a - eps) * nu * nu) ++c.coercivity_violations;
    c.max_continuity_ratio = std::max(c.max_continuity_ratio, std::abs(auv) / (nu * nv));
    c.min_coercivity_ratio = std::min(c.min_coercivity_ratio, auu / (nu * nu));
  }
  return c;
}

/// Randomized check of |F(v)| <= (C_F + eps)|v|_H1_0 for the lifted right-hand side
/// F(v) = (Q, v) - (D grad w, grad v) - (sigma_a w, v).
inline int verify_functional_bound(const DiscreteOperator& op, const Vector& q, const LiftingField& lf,
                                   double c_f, int n_samples, std::uint64_t seed = 43,
                                   double eps = 1e-9) {
  const Grid& g = op.grid();
  const auto lap = laplacian_operator(g);
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  const Vector load = g.cell_area() * (q - op.absorption().cwiseProduct(lf.w)) -
                      op.diffusion_term(lf.w, lf.w_boundary);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  int violations = 0;
  for (int s = 0; s < n_samples; ++s) {
    Vector v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = normal(rng);
    const double fv = load.dot(v);
    if (std::abs(fv) > (c_f + eps) * std::sqrt(v.dot(lap.apply(v)))) ++violations;
  }
  return violations;
}

/// Randomized check of ||F(K)||_L2(Omega) <= L_F ||K||_X over random kernels.
inline int verify_operator_bound(const KernelSpace& space, const Vector& g_obs, const Vector& q_eff,
                                 double c_trace, int n_samples, std::uint64_t seed = 44) {
  const Grid& g = space.grid();
  const double l_f = operator_bound(g, g_obs, q_eff, c_trace);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  int violations = 0;
  for (int s = 0; s < n_samples; ++s) {
    Vector x(space.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = normal(rng);
    const DiscreteKernel k = space.unflatten(x);
    const double lhs = volume_norm(g, kh_apply(k, g_obs, q_eff));
    if (lhs > l_f * space.x_norm(k) * (1.0 + 1e-12)) ++violations;
  }
  return violations;
}

struct ConstantsReport {
  double c_p = 0.0;
  double lambda1 = 0.0;
  double m_a = 0.0;
  double c_a = 0.0;
  double c_a_gradient = 0.0;
  double c_f = 0.0;
  double c_trace = 0.0;
  double volume_trace = 0.0;
  double lambda_min = 0.0;  // restricted misfit Hessian
  double lambda_min_regularized = 0.0;
  double lambda_max_regularized = 0.0;
  double condition = 0.0;
  int samples = 0;
  int continuity_violations = 0;
  int coercivity_violations = 0;
  int functional_violations = 0;
  int operator_bound_violations = 0;

  int total_violations() const {
    return continuity_violations + coercivity_violations + functional_violations +
           operator_bound_violations;
  }
};

inline nlohmann::json to_json(const ConstantsReport& r) {
  return {{"C_p", r.c_p},
          {"lambda1_laplacian", r.lambda1},
          {"M_a", r.m_a},
          {"C_a", r.c_a},
          {"C_a_gradient_norm", r.c_a_gradient},
          {"C_F", r.c_f},
          {"C_trace", r.c_trace},
          {"volume_trace", r.volume_trace},
          {"lambda_min", r.lambda_min},
          {"lambda_min_regularized", r.lambda_min_regularized},
          {"lambda_max_regularized", r.lambda_max_regularized},
          {"condition", r.condition},
          {"samples", r.samples},
          {"violations",
           {{"continuity", r.continuity_violations},
            {"coercivity", r.coercivity_violations},
            {"functional", r.functional_violations},
            {"operator_bound", r.operator_bound_violations}}}};
}

inline std::string to_key_value(const ConstantsReport& r) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "C_p=" << r.c_p << "\nlambda1_laplacian=" << r.lambda1 << "\nM_a=" << r.m_a
     << "\nC_a=" << r.c_a << "\nC_a_gradient_norm=" << r.c_a_gradient << "\nC_F=" << r.c_f
     << "\nC_trace=" << r.c_trace << "\nvolume_trace=" << r.volume_trace
     << "\nlambda_min=" << r.lambda_min << "\nlambda_min_regularized=" << r.lambda_min_regularized
     << "\nlambda_max_regularized=" << r.lambda_max_regularized << "\ncondition=" << r.condition
     << "\nsamples=" << r.samples << "\nviolations.continuity=" << r.continuity_violations
     << "\nviolations.coercivity=" << r.coercivity_violations
     << "\nviolations.functional=" << r.functional_violations
     << "\nviolations.operator_bound=" << r.operator_bound_violations << "\n";
  return os.str();
}

/// All constants for one scenario's training problem.
inline ConstantsReport compute_constants(const TrainingProblem& p, const MaterialField& m,
                                         const LiftingField& lf, const Vector& q, int n_samples,
                                         std::uint64_t seed = 42) {
  const Grid& g = p.space().grid();
  ConstantsReport r;
  const auto pc = poincare_constant(g);
  r.c_p = pc.c_p;
  r.lambda1 = pc.lambda1;
  const auto lm = lax_milgram_constants(m, r.c_p);
  r.m_a = lm.m_a;
  r.c_a = lm.c_a;
  r.c_a_gradient = lm.c_a_gradient;
  r.c_f = functional_bound(q, lf, m, g, r.c_p);
  const auto tc = trace_constant(g);
  r.c_trace = tc.c_trace;
  r.volume_trace = tc.volume_trace;
  r.lambda_min = p.restricted_misfit_eigenvalue();
  const Spectrum s = hessian_spectrum(p);
  r.lambda_min_regularized = s.lambda_min;
  r.lambda_max_regularized = s.lambda_max;
  r.condition = s.condition;

  const auto op = assemble(g, m);
  const auto bc = verify_bilinear_bounds(op, r.m_a, r.c_a, n_samples, seed);
  r.samples = n_samples;
  r.continuity_violations = bc.continuity_violations;
  r.coercivity_violations = bc.coercivity_violations;
  r.functional_violations = verify_functional_bound(op, q, lf, r.c_f, n_samples, seed + 1);
  r.operator_bound_violations =
      verify_operator_bound(p.space(), p.data().g, p.data().q_eff, r.c_trace,
                            std::min(n_samples, 100), seed + 2);
  return r;
}

}  // namespace khg

#endif  // KHG_DIAGNOSTICS_HPP
