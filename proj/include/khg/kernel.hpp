#ifndef KHG_KERNEL_HPP
#define KHG_KERNEL_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>
#include <khg/operator.hpp>

#include <algorithm>
#include <cmath>

namespace khg {

/*
 * Discrete Green's kernel. Rows are interior field points; g_vol columns are
 * interior source cells, g_bnd columns are boundary points. Stored dense:
 * memory grows as n_cells * (n_cells + n_boundary), fine up to ~25x25 grids.
 */
struct DiscreteKernel {
  Matrix g_vol;
  Matrix g_bnd;
  double hx = 0.0, hy = 0.0;
  Vector bnd_weights;  // ds per boundary point

  double vol_weight() const { return hx * hy; }
  Eigen::Index n_int() const { return g_vol.rows(); }
  Eigen::Index n_bnd() const { return g_bnd.cols(); }

  static DiscreteKernel zeros(const Grid& g) {
    const auto n = static_cast<Eigen::Index>(g.n_cells());
    const auto m = static_cast<Eigen::Index>(g.n_boundary());
    return {Matrix::Zero(n, n), Matrix::Zero(n, m), g.hx(), g.hy(), g.boundary_weights()};
  }
};

/// Columns solve A g = e_j against the scenario-independent operator; G_bnd = 0.
inline DiscreteKernel oracle_kernel(const DiscreteOperator& op) {
  const Grid& g = op.grid();
  DiscreteKernel k = DiscreteKernel::zeros(g);
  const auto n = k.n_int();
  Vector e = Vector::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    k.g_vol.col(j) = op.solve(e);
    e[j] = 0.0;
  }
  return k;
}

/// Discrete K-H representation: u_i = sum_b G_bnd(i,b) g_b ds_b + sum_j G_vol(i,j) Q~_j hx hy.
inline Vector kh_apply(const DiscreteKernel& k, const Vector& g_obs, const Vector& q_eff) {
  if (g_obs.size() != k.n_bnd() || q_eff.size() != k.g_vol.cols() ||
      k.bnd_weights.size() != k.n_bnd())
    fail(ErrorKind::format, "kh_apply: data dimensions do not match the kernel");
  return k.g_bnd * g_obs.cwiseProduct(k.bnd_weights) + k.g_vol * (q_eff * k.vol_weight());
}

/// ||G - G^T||_F / max(||G||_F, 1e-30) over the volume block.
inline double symmetry_residual(const DiscreteKernel& k) {
  const double denom = std::max(k.g_vol.norm(), 1e-30);
  return (k.g_vol - k.g_vol.transpose()).norm() / denom;
}

/// L_F = ||f1||_L2(Gamma) C_trace + ||f2||_L2(Omega).
inline double operator_bound(const Grid& g, const Vector& g_obs, const Vector& q_eff, double c_trace) {
  return boundary_norm(g, g_obs) * c_trace + volume_norm(g, q_eff);
}

inline DiscreteKernel operator+(const DiscreteKernel& a, const DiscreteKernel& b) {
  DiscreteKernel r = a;
  r.g_vol += b.g_vol;
  r.g_bnd += b.g_bnd;
  return r;
}

inline DiscreteKernel operator-(const DiscreteKernel& a, const DiscreteKernel& b) {
  DiscreteKernel r = a;
  r.g_vol -= b.g_vol;
  r.g_bnd -= b.g_bnd;
  return r;
}

inline DiscreteKernel operator*(double s, const DiscreteKernel& a) {
  DiscreteKernel r = a;
  r.g_vol *= s;
  r.g_bnd *= s;
  return r;
}

}  // namespace khg

#endif  // KHG_KERNEL_HPP
