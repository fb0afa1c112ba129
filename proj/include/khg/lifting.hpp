#ifndef KHG_LIFTING_HPP
#define KHG_LIFTING_HPP

#include <khg/grid.hpp>
#include <khg/materials.hpp>
#include <khg/operator.hpp>

#include <array>
#include <cmath>
#include <vector>

namespace khg {

enum class LiftingMethod { coons, harmonic };

/// Extension w of Dirichlet data into the cells, with the per-cell div(D grad w)
/// evaluated by the solver's own stencil.
struct LiftingField {
  Vector w;           // per cell
  Vector w_boundary;  // psi
  Vector grad_term;   // div(D grad w), cell-averaged
};

namespace detail {

// Extrapolates samples at ((k+1/2)h), k = 0..n-1, to the near end (t = 0) or the far
// end (t = n h). Quadratic when three samples exist, so degree <= 2 traces are exact.
inline double extrapolate_end(const std::vector<double>& s, bool far_end) {
  const std::size_t n = s.size();
  auto at = [&](std::size_t k) { return far_end ? s[n - 1 - k] : s[k]; };
  if (n >= 3) return 1.875 * at(0) - 1.25 * at(1) + 0.375 * at(2);
  if (n == 2) return 1.5 * at(0) - 0.5 * at(1);
  return at(0);
}

}  // namespace detail

inline Vector coons_patch(const Vector& psi, const Grid& g) {
  const std::size_t nx = g.nx(), ny = g.ny();
  Vector w(static_cast<Eigen::Index>(g.n_cells()));
  if (g.is_1d()) {
    const double left = psi[0], right = psi[1];
    for (std::size_t i = 0; i < nx; ++i)
      w[static_cast<Eigen::Index>(i)] = left + (right - left) * g.center_x(i) / g.lx();
    return w;
  }

  std::array<std::vector<double>, 4> edge;
  for (std::size_t b = 0; b < g.n_boundary(); ++b)
    edge[static_cast<std::size_t>(g.boundary_point(b).edge)].push_back(psi[static_cast<Eigen::Index>(b)]);
  const auto& left = edge[static_cast<std::size_t>(Edge::left)];
  const auto& right = edge[static_cast<std::size_t>(Edge::right)];
  const auto& bottom = edge[static_cast<std::size_t>(Edge::bottom)];
  const auto& top = edge[static_cast<std::size_t>(Edge::top)];

  // Corners: mean of the two edges' end extrapolations.
  const double c00 = 0.5 * (detail::extrapolate_end(left, false) + detail::extrapolate_end(bottom, false));
  const double c10 = 0.5 * (detail::extrapolate_end(right, false) + detail::extrapolate_end(bottom, true));
  const double c01 = 0.5 * (detail::extrapolate_end(left, true) + detail::extrapolate_end(top, false));
  const double c11 = 0.5 * (detail::extrapolate_end(right, true) + detail::extrapolate_end(top, true));

  for (std::size_t j = 0; j < ny; ++j) {
    const double eta = g.center_y(j) / g.ly();
    for (std::size_t i = 0; i < nx; ++i) {
      const double xi = g.center_x(i) / g.lx();
      const double ruled = (1 - xi) * left[j] + xi * right[j] + (1 - eta) * bottom[i] + eta * top[i];
      const double corner = (1 - xi) * (1 - eta) * c00 + xi * (1 - eta) * c10 +
                            (1 - xi) * eta * c01 + xi * eta * c11;
      w[static_cast<Eigen::Index>(g.cell_id(i, j))] = ruled - corner;
    }
  }
  return w;
}

inline LiftingField build_lifting(const Vector& psi, const Grid& g, const MaterialField& m,
                                  LiftingMethod method = LiftingMethod::coons) {
  if (psi.size() != static_cast<Eigen::Index>(g.n_boundary()))
    fail(ErrorKind::format, "build_lifting: psi must have one value per boundary point");
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  const MaterialField diffusion_only(m.diffusion(), Vector::Zero(n), Vector::Zero(n));
  const auto op = assemble(g, diffusion_only);

  LiftingField lf;
  lf.w_boundary = psi;
  if (method == LiftingMethod::coons)
    lf.w = coons_patch(psi, g);
  else
    lf.w = solve_dirichlet(op, Vector::Zero(n), psi);
  lf.grad_term = -op.diffusion_term(lf.w, psi) / g.cell_area();
  return lf;
}

/// Q~ = Q + div(D grad w) - sigma_a w.
inline Vector effective_source(const Vector& q, const LiftingField& lf, const MaterialField& m) {
  return q + lf.grad_term - m.sigma_a().cwiseProduct(lf.w);
}

inline Vector shift_to_homogeneous(const Vector& phi, const LiftingField& lf) { return phi - lf.w; }
inline Vector shift_to_physical(const Vector& u, const LiftingField& lf) { return u + lf.w; }

/// Discrete ||grad w||_L2 over all faces, boundary half-faces included.
inline double lifting_gradient_norm(const LiftingField& lf, const Grid& g) {
  const auto faces = build_faces(g, Vector::Ones(static_cast<Eigen::Index>(g.n_cells())));
  double s = 0.0;
  for (const auto& f : faces) {
    const double wa = lf.w[static_cast<Eigen::Index>(f.a)];
    const double wb = f.boundary ? lf.w_boundary[static_cast<Eigen::Index>(f.b)]
                                 : lf.w[static_cast<Eigen::Index>(f.b)];
    s += f.coefficient * (wa - wb) * (wa - wb);
  }
  return std::sqrt(s);
}

/*
 * Boundary normal current of u = phi - w: the measured current D dphi/dn minus the
 * lifting's current D (psi - w_adjacent)/(h/2), using the same one-sided stencil.
 */
inline Vector shift_boundary_current(const Vector& current, const LiftingField& lf, const Grid& g,
                                     const MaterialField& m) {
  Vector out(current.size());
  for (std::size_t b = 0; b < g.n_boundary(); ++b) {
    const auto& bp = g.boundary_point(b);
    const auto c = static_cast<Eigen::Index>(bp.cell);
    const auto e = static_cast<Eigen::Index>(b);
    out[e] = current[e] - m.diffusion()[c] * (lf.w_boundary[e] - lf.w[c]) / bp.offset;
  }
  return out;
}

}  // namespace khg

#endif  // KHG_LIFTING_HPP
