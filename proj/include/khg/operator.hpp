#ifndef KHG_OPERATOR_HPP
#define KHG_OPERATOR_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>
#include <khg/materials.hpp>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <memory>
#include <span>
#include <sstream>
#include <vector>

namespace khg {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// One face of the finite-volume stencil. For boundary faces `b` is a boundary index.
struct Face {
  std::size_t a;
  std::size_t b;
  bool boundary;
  double d_face;       // harmonic-mean D (adjacent D on boundary faces)
  double coefficient;  // d_face * face length / center distance
};

/// Interior and boundary faces with harmonic-mean coefficients. Boundary faces use
/// the ghost distance h/2.
inline std::vector<Face> build_faces(const Grid& g, const Vector& d) {
  std::vector<Face> faces;
  auto harmonic = [](double a, double b) { return 2.0 * a * b / (a + b); };
  const std::size_t nx = g.nx(), ny = g.ny();
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i + 1 < nx; ++i) {
      const auto a = g.cell_id(i, j), b = g.cell_id(i + 1, j);
      const double df = harmonic(d[static_cast<Eigen::Index>(a)], d[static_cast<Eigen::Index>(b)]);
      faces.push_back({a, b, false, df, df * g.hy() / g.hx()});
    }
  }
  if (!g.is_1d()) {
    for (std::size_t j = 0; j + 1 < ny; ++j) {
      for (std::size_t i = 0; i < nx; ++i) {
        const auto a = g.cell_id(i, j), b = g.cell_id(i, j + 1);
        const double df =
            harmonic(d[static_cast<Eigen::Index>(a)], d[static_cast<Eigen::Index>(b)]);
        faces.push_back({a, b, false, df, df * g.hx() / g.hy()});
      }
    }
  }
  for (std::size_t bi = 0; bi < g.n_boundary(); ++bi) {
    const auto& bp = g.boundary_point(bi);
    const double df = d[static_cast<Eigen::Index>(bp.cell)];
    faces.push_back({bp.cell, bi, true, df, df * bp.ds / bp.offset});
  }
  return faces;
}

/*
 * Cell-integrated discretization of -div(D grad .) + (sigma_a + extra) over the
 * interior cells: A u = q * cell_area + B psi. A is symmetric by construction
 * and is factorized once (Cholesky), which also certifies positive definiteness.
 */
class DiscreteOperator {
 public:
  const Grid& grid() const { return grid_; }
  const SparseMatrix& matrix() const { return a_; }
  const SparseMatrix& boundary_coupling() const { return b_; }
  std::span<const Face> faces() const { return faces_; }
  const Vector& absorption() const { return absorption_; }

  Vector apply(const Vector& u) const { return a_ * u; }

  /// Solves A x = rhs with one step of iterative refinement when needed.
  Vector solve(const Vector& rhs) const {
    Vector x = factor_->solve(rhs);
    const double scale = rhs.norm();
    if (scale > 0.0) {
      for (int it = 0; it < 3; ++it) {
        const Vector r = rhs - a_ * x;
        if (r.norm() <= 1e-13 * scale) break;
        x += factor_->solve(r);
      }
    }
    return x;
  }

  /// Cell-integrated -div(D grad w) with boundary values psi (diffusion part only).
  Vector diffusion_term(const Vector& w, const Vector& psi) const {
    Vector out = Vector::Zero(w.size());
    for (const auto& f : faces_) {
      const auto a = static_cast<Eigen::Index>(f.a);
      if (f.boundary) {
        out[a] += f.coefficient * (w[a] - psi[static_cast<Eigen::Index>(f.b)]);
      } else {
        const auto b = static_cast<Eigen::Index>(f.b);
        const double flux = f.coefficient * (w[a] - w[b]);
        out[a] += flux;
        out[b] -= flux;
      }
    }
    return out;
  }

  friend DiscreteOperator assemble(const Grid&, const MaterialField&, const Vector&);

 private:
  explicit DiscreteOperator(Grid g) : grid_(std::move(g)) {}

  Grid grid_;
  SparseMatrix a_, b_;
  std::vector<Face> faces_;
  Vector absorption_;
  std::shared_ptr<const Eigen::SimplicialLLT<SparseMatrix>> factor_;
};

inline DiscreteOperator assemble(const Grid& g, const MaterialField& m, const Vector& extra_absorption) {
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  if (static_cast<std::size_t>(m.size()) != g.n_cells() || extra_absorption.size() != n)
    fail(ErrorKind::format, "assemble: field sizes do not match the grid");

  DiscreteOperator op(g);
  op.faces_ = build_faces(g, m.diffusion());
  op.absorption_ = m.sigma_a() + extra_absorption;

  std::vector<Eigen::Triplet<double>> ta, tb;
  ta.reserve(op.faces_.size() * 4 + static_cast<std::size_t>(n));
  for (const auto& f : op.faces_) {
    const auto a = static_cast<Eigen::Index>(f.a);
    const auto b = static_cast<Eigen::Index>(f.b);
    ta.emplace_back(a, a, f.coefficient);
    if (f.boundary) {
      tb.emplace_back(a, b, f.coefficient);
    } else {
      ta.emplace_back(b, b, f.coefficient);
      ta.emplace_back(a, b, -f.coefficient);
      ta.emplace_back(b, a, -f.coefficient);
    }
  }
  for (Eigen::Index k = 0; k < n; ++k) ta.emplace_back(k, k, op.absorption_[k] * g.cell_area());

  op.a_.resize(n, n);
  op.a_.setFromTriplets(ta.begin(), ta.end());
  op.b_.resize(n, static_cast<Eigen::Index>(g.n_boundary()));
  op.b_.setFromTriplets(tb.begin(), tb.end());

  auto factor = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>(op.a_);
  if (factor->info() != Eigen::Success) {
    fail(ErrorKind::numerical,
         "assembled operator is not positive definite (subcriticality violation: "
         "sigma_a + extra absorption too negative)");
  }
  op.factor_ = std::move(factor);
  return op;
}

/// Flux at the shared face of two adjacent cells, from current continuity across it.
inline double face_value(const Vector& phi, const Vector& d, std::size_t a, std::size_t b) {
  const auto ea = static_cast<Eigen::Index>(a), eb = static_cast<Eigen::Index>(b);
  return (d[ea] * phi[ea] + d[eb] * phi[eb]) / (d[ea] + d[eb]);
}

/// The kernel operator: materials only, no rod and no fission term.
inline DiscreteOperator assemble(const Grid& g, const MaterialField& m) {
  return assemble(g, m, Vector::Zero(static_cast<Eigen::Index>(g.n_cells())));
}

/// Solves L phi = q in the interior with phi = psi on the boundary.
inline Vector solve_dirichlet(const DiscreteOperator& op, const Vector& q, const Vector& psi) {
  const Grid& g = op.grid();
  if (q.size() != static_cast<Eigen::Index>(g.n_cells()) ||
      psi.size() != static_cast<Eigen::Index>(g.n_boundary()))
    fail(ErrorKind::format, "solve_dirichlet: source or boundary data has the wrong size");
  const Vector s = q * g.cell_area() + op.boundary_coupling() * psi;
  if (s.norm() == 0.0) return Vector::Zero(s.size());
  Vector phi = op.solve(s);
  const double rel = (op.apply(phi) - s).norm() / s.norm();
  if (!(rel <= 1e-12)) {
    std::ostringstream os;
    os << "solve_dirichlet: relative residual " << rel << " exceeds 1e-12";
    fail(ErrorKind::numerical, os.str());
  }
  return phi;
}

/// Ground-truth flux of a scenario. Linear mode solves L phi = q_ext; flux-proportional
/// mode solves (L + rod - nu_sigma_f) phi = 0. Both with phi = psi on the boundary.
inline Vector truth_flux(const Grid& g, const MaterialField& m, const Scenario& s) {
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  if (s.mode == SourceMode::linear) {
    const Vector q = s.q_ext.size() == n ? s.q_ext : Vector::Zero(n);
    return solve_dirichlet(assemble(g, m), q, s.psi);
  }
  check_subcritical(s, g, m);
  const auto op = assemble(g, m, -source_coupling(s, g, m));
  return solve_dirichlet(op, Vector::Zero(n), s.psi);
}

}  // namespace khg

#endif  // KHG_OPERATOR_HPP
