#ifndef KHG_KERNEL_SPACE_HPP
#define KHG_KERNEL_SPACE_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>
#include <khg/kernel.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <random>
#include <sstream>

namespace khg {

/// Forward-difference Gram matrix D^T D / h^2 for n samples; the last difference is
/// padded with zero, so constants lie in the kernel.
inline Matrix difference_gram(std::size_t n, double h) {
  const auto m = static_cast<Eigen::Index>(n);
  Matrix t = Matrix::Zero(m, m);
  for (Eigen::Index k = 0; k + 1 < m; ++k) {
    t(k, k) += 1.0;
    t(k + 1, k + 1) += 1.0;
    t(k, k + 1) -= 1.0;
    t(k + 1, k) -= 1.0;
  }
  return t / (h * h);
}

/// Gram matrix of the discrete cell gradient, sum over both axes (x only in 1D).
inline Matrix gradient_gram(const Grid& g) {
  const Matrix tx = difference_gram(g.nx(), g.hx());
  const auto nx = static_cast<Eigen::Index>(g.nx()), ny = static_cast<Eigen::Index>(g.ny());
  Matrix l = Matrix::Zero(nx * ny, nx * ny);
  for (Eigen::Index j = 0; j < ny; ++j) l.block(j * nx, j * nx, nx, nx) += tx;
  if (!g.is_1d()) {
    const Matrix ty = difference_gram(g.ny(), g.hy());
    for (Eigen::Index j = 0; j < ny; ++j)
      for (Eigen::Index k = 0; k < ny; ++k)
        if (ty(j, k) != 0.0) l.block(j * nx, k * nx, nx, nx).diagonal().array() += ty(j, k);
  }
  return l;
}

/*
 * The kernel space X with the quadrature-weighted norm
 *   ||G||_X^2 = w_vv (|G_vol|^2 + |grad_x G_vol|^2 + |grad_y G_vol|^2) + sum_b w_b |G_bnd(:,b)|^2
 * where w_vv = (hx hy)^2 and w_b = hx hy ds_b. Flattened coordinates hold G_vol
 * column-major followed by G_bnd column-major.
 */
class KernelSpace {
 public:
  explicit KernelSpace(const Grid& g)
      : grid_(g),
        n_(static_cast<Eigen::Index>(g.n_cells())),
        m_(static_cast<Eigen::Index>(g.n_boundary())),
        w_vol_(g.cell_area() * g.cell_area()),
        w_bnd_(g.cell_area() * g.boundary_weights()),
        laplacian_(gradient_gram(g)) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(laplacian_);
    if (es.info() != Eigen::Success)
      fail(ErrorKind::numerical, "kernel space: eigen-decomposition of the gradient Gram failed");
    basis_ = es.eigenvectors();
    eigenvalues_ = es.eigenvalues().cwiseMax(0.0);
  }

  const Grid& grid() const { return grid_; }
  Eigen::Index n_int() const { return n_; }
  Eigen::Index n_bnd() const { return m_; }
  Eigen::Index size() const { return n_ * n_ + n_ * m_; }
  double vol_weight() const { return w_vol_; }
  const Vector& bnd_weight() const { return w_bnd_; }
  const Matrix& laplacian() const { return laplacian_; }

  Vector flatten(const DiscreteKernel& k) const {
    Vector x(size());
    Eigen::Map<Matrix>(x.data(), n_, n_) = k.g_vol;
    Eigen::Map<Matrix>(x.data() + n_ * n_, n_, m_) = k.g_bnd;
    return x;
  }

  DiscreteKernel unflatten(const Vector& x) const {
    DiscreteKernel k = DiscreteKernel::zeros(grid_);
    k.g_vol = vol(x);
    k.g_bnd = bnd(x);
    return k;
  }

  Eigen::Map<const Matrix> vol(const Vector& x) const { return {x.data(), n_, n_}; }
  Eigen::Map<const Matrix> bnd(const Vector& x) const { return {x.data() + n_ * n_, n_, m_}; }
  Eigen::Map<Matrix> vol(Vector& x) const { return {x.data(), n_, n_}; }
  Eigen::Map<Matrix> bnd(Vector& x) const { return {x.data() + n_ * n_, n_, m_}; }

  /// Hessian of 1/2 (||G||_X^2 + gamma ||G - G^T||^2) applied to x.
  Vector apply_reg(const Vector& x, double gamma) const {
    Vector out(size());
    const auto g = vol(x);
    vol(out) = w_vol_ * (g + laplacian_ * g + g * laplacian_ + 2.0 * gamma * (g - g.transpose()));
    bnd(out) = bnd(x) * w_bnd_.asDiagonal();
    return out;
  }

  /// Exact inverse of apply_reg, diagonal in the eigenbasis of the gradient Gram.
  Vector solve_reg(const Vector& r, double gamma) const {
    Vector out(size());
    const Matrix rh = basis_.transpose() * vol(r) * basis_;
    const Matrix sym = 0.5 * (rh + rh.transpose());
    const Matrix anti = 0.5 * (rh - rh.transpose());
    Matrix sol(n_, n_);
    for (Eigen::Index b = 0; b < n_; ++b) {
      for (Eigen::Index a = 0; a < n_; ++a) {
        const double c = w_vol_ * (1.0 + eigenvalues_[a] + eigenvalues_[b]);
        sol(a, b) = sym(a, b) / c + anti(a, b) / (c + 4.0 * gamma * w_vol_);
      }
    }
    vol(out) = basis_ * sol * basis_.transpose();
    bnd(out) = bnd(r) * w_bnd_.cwiseInverse().asDiagonal();
    return out;
  }

  /// ||G||_X^2 evaluated from explicit forward differences.
  double x_norm_sq(const DiscreteKernel& k) const {
    const Matrix& gv = k.g_vol;
    double grad = 0.0;
    auto diffs = [&](const auto& line_value, std::size_t count, double h) {
      double s = 0.0;
      for (std::size_t t = 0; t + 1 < count; ++t) {
        const double d = (line_value(t + 1) - line_value(t)) / h;
        s += d * d;
      }
      return s;
    };
    const std::size_t nx = grid_.nx(), ny = grid_.ny();
    for (Eigen::Index other = 0; other < n_; ++other) {
      for (std::size_t j = 0; j < ny; ++j) {
        auto row_x = [&](std::size_t i) { return gv(static_cast<Eigen::Index>(grid_.cell_id(i, j)), other); };
        auto col_x = [&](std::size_t i) { return gv(other, static_cast<Eigen::Index>(grid_.cell_id(i, j))); };
        grad += diffs(row_x, nx, grid_.hx()) + diffs(col_x, nx, grid_.hx());
      }
      if (grid_.is_1d()) continue;
      for (std::size_t i = 0; i < nx; ++i) {
        auto row_y = [&](std::size_t j) { return gv(static_cast<Eigen::Index>(grid_.cell_id(i, j)), other); };
        auto col_y = [&](std::size_t j) { return gv(other, static_cast<Eigen::Index>(grid_.cell_id(i, j))); };
        grad += diffs(row_y, ny, grid_.hy()) + diffs(col_y, ny, grid_.hy());
      }
    }
    double bnd_sq = 0.0;
    for (Eigen::Index b = 0; b < m_; ++b) bnd_sq += w_bnd_[b] * k.g_bnd.col(b).squaredNorm();
    return w_vol_ * (gv.squaredNorm() + grad) + bnd_sq;
  }

  double x_norm(const DiscreteKernel& k) const { return std::sqrt(x_norm_sq(k)); }

  /// ||G_vol - G_vol^T||^2 in L2(Omega x Omega).
  double asymmetry_sq(const DiscreteKernel& k) const {
    return w_vol_ * (k.g_vol - k.g_vol.transpose()).squaredNorm();
  }

  /// ||G||_L2(Omega x Gamma)^2 of the trace: G_vol at the cell adjacent to each boundary point.
  double trace_norm_sq(const DiscreteKernel& k) const {
    double s = 0.0;
    for (Eigen::Index b = 0; b < m_; ++b) {
      const auto c = static_cast<Eigen::Index>(grid_.boundary_point(static_cast<std::size_t>(b)).cell);
      s += w_bnd_[b] * k.g_vol.col(c).squaredNorm();
    }
    return s;
  }

 private:
  Grid grid_;
  Eigen::Index n_, m_;
  double w_vol_;
  Vector w_bnd_;
  Matrix laplacian_, basis_;
  Vector eigenvalues_;
};

struct TraceConstant {
  double c_trace;       // max(volume_trace, 1): sup over the whole kernel space
  double volume_trace;  // sup ||trace G_vol||_L2(Omega x Gamma) / ||G_vol||_X
  int iterations;
};

/*
 * Operator norm of the restriction of a kernel to boundary source points. Rows
 * decouple in the gradient eigenbasis and the supremum sits on the constant row
 * mode, leaving the pencil (hx hy S, w_vv (I + L)) with S(c) = sum of ds over
 * boundary points adjacent to cell c; its top eigenvalue is found by power iteration.
 * The G_bnd block has ratio exactly one.
 */
inline TraceConstant trace_constant(const Grid& g, double rel_tol = 1e-6, int max_iter = 100000) {
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  Vector s = Vector::Zero(n);
  for (const auto& bp : g.boundary()) s[static_cast<Eigen::Index>(bp.cell)] += bp.ds;
  s *= g.cell_area();

  const Matrix l = gradient_gram(g);
  std::vector<Eigen::Triplet<double>> trip;
  const double w = g.cell_area() * g.cell_area();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (l(i, j) != 0.0 || i == j) trip.emplace_back(i, j, w * (l(i, j) + (i == j ? 1.0 : 0.0)));
  SparseMatrix mm(n, n);
  mm.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLLT<SparseMatrix> llt(mm);
  if (llt.info() != Eigen::Success) fail(ErrorKind::numerical, "trace constant: X Gram not SPD");

  Vector y = Vector::Ones(n);
  double lambda = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Vector z = llt.solve(s.cwiseProduct(y));
    const double next = z.dot(s.cwiseProduct(z)) / z.dot(mm * z);
    z /= z.norm();
    y = z;
    if (it > 1 && std::abs(next - lambda) <= rel_tol * std::abs(next)) {
      const double vt = std::sqrt(next);
      return {std::max(vt, 1.0), vt, it};
    }
    lambda = next;
  }
  std::ostringstream os;
  os << "trace constant: power iteration stagnated after " << max_iter << " iterations";
  fail(ErrorKind::numerical, os.str());
}

}  // namespace khg

#endif  // KHG_KERNEL_SPACE_HPP
