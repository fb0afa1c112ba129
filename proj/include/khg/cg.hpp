#ifndef KHG_CG_HPP
#define KHG_CG_HPP

#include <khg/grid.hpp>

#include <cmath>
#include <vector>

namespace khg {

struct CgResult {
  Vector x;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residuals;  // ||b - A x_k||, k = 0..iterations
  std::vector<double> objective;  // 1/2 x_k^T A x_k - b^T x_k
};

/// Preconditioned conjugate gradients from x0 = 0. Stops on ||r|| <= rel_tol ||b||.
template <class Apply, class Precondition>
CgResult pcg(const Apply& apply, const Precondition& precondition, const Vector& b, double rel_tol,
             int max_iter) {
  CgResult res;
  res.x = Vector::Zero(b.size());
  Vector r = b;
  const double target = rel_tol * b.norm();
  res.residuals.push_back(r.norm());
  res.objective.push_back(0.0);
  if (res.residuals.back() <= target) {
    res.converged = true;
    return res;
  }
  Vector z = precondition(r);
  Vector p = z;
  double rz = r.dot(z);
  for (int it = 1; it <= max_iter; ++it) {
    const Vector ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;
    const double step = rz / pap;
    res.x += step * p;
    r -= step * ap;
    res.iterations = it;
    res.residuals.push_back(r.norm());
    res.objective.push_back(-0.5 * (b.dot(res.x) + r.dot(res.x)));
    if (res.residuals.back() <= target) {
      res.converged = true;
      break;
    }
    z = precondition(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return res;
}

}  // namespace khg

#endif  // KHG_CG_HPP
