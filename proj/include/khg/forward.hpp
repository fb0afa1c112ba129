#ifndef KHG_FORWARD_HPP
#define KHG_FORWARD_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>
#include <khg/lifting.hpp>
#include <khg/materials.hpp>
#include <khg/operator.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <vector>

namespace khg {

/*
 * Virtual sensor readings of one scenario. `current_obs` is the physical boundary
 * current D dphi/dn (outward normal); the lifting shift to f1 = D du/dn happens in
 * the training pipeline, where w is known.
 */
struct MeasurementSet {
  Vector psi_obs;      // per boundary point
  Vector current_obs;  // per boundary point
  std::vector<std::size_t> sensor_ids;
  Vector u_obs;  // flux at sensor cells
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

inline void check_sensor_ids(const std::vector<std::size_t>& ids, const Grid& g) {
  for (auto s : ids)
    if (s >= g.n_cells())
      fail(ErrorKind::validation, "sensor id " + std::to_string(s) + " is not an interior cell");
}

/// Samples a truth solve. With noise_sigma > 0 every value is multiplied by
/// (1 + sigma xi), xi ~ N(0,1), drawn from a generator seeded with `seed`.
inline MeasurementSet synthesize_measurements(const Vector& phi, const Vector& psi, const Grid& g,
                                              const MaterialField& m,
                                              const std::vector<std::size_t>& sensor_ids,
                                              double noise_sigma, std::uint64_t seed) {
  check_sensor_ids(sensor_ids, g);
  if (!(noise_sigma >= 0.0)) fail(ErrorKind::validation, "noise sigma must be >= 0");

  MeasurementSet ms;
  ms.noise_sigma = noise_sigma;
  ms.seed = seed;
  ms.sensor_ids = sensor_ids;
  ms.psi_obs = psi;
  ms.current_obs.resize(psi.size());
  for (std::size_t b = 0; b < g.n_boundary(); ++b) {
    const auto& bp = g.boundary_point(b);
    const auto c = static_cast<Eigen::Index>(bp.cell);
    ms.current_obs[static_cast<Eigen::Index>(b)] =
        m.diffusion()[c] * (psi[static_cast<Eigen::Index>(b)] - phi[c]) / bp.offset;
  }
  ms.u_obs.resize(static_cast<Eigen::Index>(sensor_ids.size()));
  for (std::size_t k = 0; k < sensor_ids.size(); ++k)
    ms.u_obs[static_cast<Eigen::Index>(k)] = phi[static_cast<Eigen::Index>(sensor_ids[k])];

  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto perturb = [&](Vector& v) {
      for (Eigen::Index k = 0; k < v.size(); ++k) v[k] *= 1.0 + noise_sigma * normal(rng);
    };
    perturb(ms.psi_obs);
    perturb(ms.current_obs);
    perturb(ms.u_obs);
  }
  return ms;
}

struct ForwardPicardResult {
  Vector phi;
  std::vector<double> steps;   // relative step ||u^n - u^{n-1}|| / ||u^n||
  std::vector<double> ratios;  // ||u^n - u^{n-1}|| / ||u^{n-1} - u^{n-2}||
  int iterations = 0;
  bool converged = false;
};

/*
 * Lagged-source iteration for the flux-proportional scenario, in lifted form:
 * L u^n = Q~(u^{n-1}) with u^0 = 0, phi = u + w. Stops when the relative step
 * drops below tol; three consecutive growing steps are reported as divergence.
 */
inline ForwardPicardResult forward_picard(const Grid& g, const MaterialField& m, const Scenario& s,
                                          double tol, int max_iter) {
  check_subcritical(s, g, m);
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  const auto op = assemble(g, m);
  const auto lf = build_lifting(s.psi, g, m);
  const Vector coupling = source_coupling(s, g, m);
  const Vector fixed = effective_source(Vector::Zero(n), lf, m) + coupling.cwiseProduct(lf.w);
  auto solve = [&](const Vector& u_prev) {
    const Vector q = fixed + coupling.cwiseProduct(u_prev);
    return q.norm() == 0.0 ? Vector(Vector::Zero(n)) : op.solve(q * g.cell_area());
  };

  ForwardPicardResult res;
  Vector u = Vector::Zero(n);
  if (coupling.cwiseAbs().maxCoeff() == 0.0) {
    u = solve(u);
    res.iterations = 1;
    res.converged = true;
    res.steps.push_back(0.0);
    res.phi = shift_to_physical(u, lf);
    return res;
  }

  int growing = 0;
  double prev_abs = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    const Vector next = solve(u);
    const double abs_step = (next - u).norm();
    const double denom = next.norm();
    const double step = denom > 0.0 ? abs_step / denom : 0.0;
    u = next;
    res.iterations = it;
    if (it > 1 && prev_abs > 0.0) {
      const double ratio = abs_step / prev_abs;
      res.ratios.push_back(ratio);
      growing = ratio > 1.0 ? growing + 1 : 0;
      if (growing >= 3) {
        std::ostringstream os;
        os << "forward Picard iteration diverges: step ratio " << ratio << " at iteration " << it;
        fail(ErrorKind::numerical, os.str());
      }
    }
    res.steps.push_back(step);
    prev_abs = abs_step;
    if (step <= tol) {
      res.converged = true;
      break;
    }
  }
  res.phi = shift_to_physical(u, lf);
  return res;
}

}  // namespace khg

#endif  // KHG_FORWARD_HPP
