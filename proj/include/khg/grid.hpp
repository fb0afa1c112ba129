#ifndef KHG_GRID_HPP
#define KHG_GRID_HPP

#include <khg/error.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace khg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Edge { left, right, bottom, top };

inline const char* edge_name(Edge e) {
  switch (e) {
    case Edge::left: return "left";
    case Edge::right: return "right";
    case Edge::bottom: return "bottom";
    case Edge::top: return "top";
  }
  return "?";
}

/// A boundary sample located at the midpoint of an outer cell face.
struct BoundaryPoint {
  std::size_t id;    // n_cells + boundary index; disjoint from cell ids
  std::size_t cell;  // adjacent interior cell
  Edge edge;
  double x, y;
  double normal_x, normal_y;  // outward unit normal
  double ds;                  // segment measure
  double offset;              // distance from the adjacent cell center (h/2)
};

/*
 * Uniform cell-centered rectangular mesh on [0,lx] x [0,ly]. Cell (i,j) has
 * id i + nx*j and center ((i+1/2)hx, (j+1/2)hy). With ny == 1 the grid is a
 * slab of transverse width ly: only the x = 0 and x = lx faces are boundary,
 * each with measure ly.
 */
class Grid {
 public:
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  double lx() const { return lx_; }
  double ly() const { return ly_; }
  double hx() const { return hx_; }
  double hy() const { return hy_; }
  bool is_1d() const { return ny_ == 1; }

  std::size_t n_cells() const { return nx_ * ny_; }
  std::size_t n_boundary() const { return boundary_.size(); }
  double cell_area() const { return hx_ * hy_; }

  std::size_t cell_id(std::size_t i, std::size_t j) const { return i + nx_ * j; }
  std::pair<std::size_t, std::size_t> cell_ij(std::size_t id) const {
    return {id % nx_, id / nx_};
  }
  double center_x(std::size_t i) const { return (static_cast<double>(i) + 0.5) * hx_; }
  double center_y(std::size_t j) const { return (static_cast<double>(j) + 0.5) * hy_; }

  std::span<const std::size_t> interior_ids() const { return interior_; }
  std::span<const BoundaryPoint> boundary() const { return boundary_; }
  const BoundaryPoint& boundary_point(std::size_t b) const { return boundary_[b]; }

  /// Boundary measures as a vector (quadrature weights on the boundary).
  Vector boundary_weights() const {
    Vector w(boundary_.size());
    for (std::size_t b = 0; b < boundary_.size(); ++b) w[b] = boundary_[b].ds;
    return w;
  }

  friend Grid build_grid(std::size_t nx, std::size_t ny, double lx, double ly);

 private:
  Grid() = default;

  std::size_t nx_ = 0, ny_ = 0;
  double lx_ = 0, ly_ = 0, hx_ = 0, hy_ = 0;
  std::vector<std::size_t> interior_;
  std::vector<BoundaryPoint> boundary_;
};

inline Grid build_grid(std::size_t nx, std::size_t ny, double lx, double ly) {
  if (nx < 3) fail(ErrorKind::validation, "grid: nx must be >= 3, got " + std::to_string(nx));
  if (ny < 1) fail(ErrorKind::validation, "grid: ny must be >= 1");
  if (!(lx > 0.0) || !std::isfinite(lx) || !(ly > 0.0) || !std::isfinite(ly))
    fail(ErrorKind::validation, "grid: domain lengths must be positive and finite");

  Grid g;
  g.nx_ = nx;
  g.ny_ = ny;
  g.lx_ = lx;
  g.ly_ = ly;
  g.hx_ = lx / static_cast<double>(nx);
  g.hy_ = ly / static_cast<double>(ny);
  g.interior_.resize(nx * ny);
  for (std::size_t k = 0; k < nx * ny; ++k) g.interior_[k] = k;

  const std::size_t base = nx * ny;
  auto add = [&](std::size_t cell, Edge e, double x, double y, double nxv, double nyv,
                 double ds, double off) {
    g.boundary_.push_back(
        BoundaryPoint{base + g.boundary_.size(), cell, e, x, y, nxv, nyv, ds, off});
  };

  for (std::size_t j = 0; j < ny; ++j)
    add(g.cell_id(0, j), Edge::left, 0.0, g.center_y(j), -1.0, 0.0, g.hy_, 0.5 * g.hx_);
  for (std::size_t j = 0; j < ny; ++j)
    add(g.cell_id(nx - 1, j), Edge::right, lx, g.center_y(j), 1.0, 0.0, g.hy_, 0.5 * g.hx_);
  if (!g.is_1d()) {
    for (std::size_t i = 0; i < nx; ++i)
      add(g.cell_id(i, 0), Edge::bottom, g.center_x(i), 0.0, 0.0, -1.0, g.hx_, 0.5 * g.hy_);
    for (std::size_t i = 0; i < nx; ++i)
      add(g.cell_id(i, ny - 1), Edge::top, g.center_x(i), ly, 0.0, 1.0, g.hx_, 0.5 * g.hy_);
  }
  return g;
}

/// Discrete L2(Omega) norm of a per-cell field (midpoint rule).
inline double volume_norm(const Grid& g, const Vector& v) {
  return std::sqrt(g.cell_area() * v.squaredNorm());
}

/// Discrete L2(Gamma) norm of a per-boundary-point field.
inline double boundary_norm(const Grid& g, const Vector& v) {
  double s = 0.0;
  for (std::size_t b = 0; b < g.n_boundary(); ++b) s += g.boundary_point(b).ds * v[b] * v[b];
  return std::sqrt(s);
}

}  // namespace khg

#endif  // KHG_GRID_HPP
