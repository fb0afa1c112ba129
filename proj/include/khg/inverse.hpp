#ifndef KHG_INVERSE_HPP
#define KHG_INVERSE_HPP

#include <khg/cg.hpp>
#include <khg/error.hpp>
#include <khg/forward.hpp>
#include <khg/grid.hpp>
#include <khg/kernel.hpp>
#include <khg/kernel_space.hpp>
#include <khg/lifting.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <future>
#include <random>
#include <sstream>
#include <vector>

namespace khg {

struct TikhonovConfig {
  double alpha = 1e-6;
  double gamma = 1.0;
  double cg_rel_tol = 1e-10;
  int cg_max_iter = 0;  // 0 selects 10 * number of unknowns

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha))
      fail(ErrorKind::validation, "tikhonov: alpha must be > 0");
    if (!(gamma > 0.0) || !std::isfinite(gamma))
      fail(ErrorKind::validation, "tikhonov: gamma must be > 0");
    if (!(cg_rel_tol > 0.0)) fail(ErrorKind::validation, "tikhonov: cg_tol must be > 0");
    if (cg_max_iter < 0) fail(ErrorKind::validation, "tikhonov: cg_max_iter must be >= 0");
  }
};

/// Inputs of one reconstruction, already in homogeneous (lifted) form.
struct TrainingData {
  std::vector<std::size_t> sensor_ids;
  Vector u;      // u = phi - w at the sensors
  Vector g;      // f1 = D grad u . n per boundary point
  Vector q_eff;  // f2 = Q~ per cell
};

inline TrainingData make_training_data(const MeasurementSet& ms, const LiftingField& lf,
                                       const Grid& g, const MaterialField& m, const Vector& q_eff) {
  TrainingData td;
  td.sensor_ids = ms.sensor_ids;
  td.u.resize(ms.u_obs.size());
  for (std::size_t k = 0; k < ms.sensor_ids.size(); ++k)
    td.u[static_cast<Eigen::Index>(k)] =
        ms.u_obs[static_cast<Eigen::Index>(k)] - lf.w[static_cast<Eigen::Index>(ms.sensor_ids[k])];
  td.g = shift_boundary_current(ms.current_obs, lf, g, m);
  td.q_eff = q_eff;
  return td;
}

struct ReconstructionReport {
  double misfit = 0.0;
  double reg_value = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double grad_norm_initial = 0.0;
  int iterations = 0;
  double symmetry_residual = 0.0;
  double lambda_min_estimate = 0.0;  // restricted misfit Hessian
  double lambda_min_regularized = 0.0;
  double lambda_max_regularized = 0.0;
  double condition_estimate = 0.0;
  double runtime_s = 0.0;
  std::vector<double> residual_history;
  std::vector<double> objective_history;
};

/*
 * The quadratic 1/2 J(G) = 1/2 sum_s w_s (F(G)_s - u_s)^2 + alpha/2 R(G), with
 * F(G)_s = G_vol(c_s,:) Q~ hx hy + G_bnd(c_s,:) (g ds) and sensor weight w_s = hx hy.
 */
class TrainingProblem {
 public:
  TrainingProblem(const KernelSpace& space, TrainingData data, TikhonovConfig cfg)
      : space_(&space), data_(std::move(data)), cfg_(cfg) {
    cfg_.validate();
    const Grid& g = space.grid();
    if (data_.sensor_ids.empty()) fail(ErrorKind::validation, "training needs at least one sensor");
    if (data_.u.size() != static_cast<Eigen::Index>(data_.sensor_ids.size()))
      fail(ErrorKind::format, "training: one u value per sensor required");
    if (data_.g.size() != space.n_bnd() || data_.q_eff.size() != space.n_int())
      fail(ErrorKind::format, "training: boundary current or source has the wrong size");
    check_sensor_ids(data_.sensor_ids, g);
    f_vol_ = data_.q_eff * g.cell_area();
    f_bnd_ = data_.g.cwiseProduct(g.boundary_weights());
    sensor_weight_ = g.cell_area();
  }

  const KernelSpace& space() const { return *space_; }
  const TrainingData& data() const { return data_; }
  const TikhonovConfig& config() const { return cfg_; }
  double sensor_weight() const { return sensor_weight_; }

  /// Predictions at every interior cell.
  Vector predict(const Vector& x) const {
    return space_->vol(x) * f_vol_ + space_->bnd(x) * f_bnd_;
  }

  Vector apply_misfit_hessian(const Vector& x) const {
    Vector out = Vector::Zero(space_->size());
    const Vector pred = predict(x);
    auto ov = space_->vol(out);
    auto ob = space_->bnd(out);
    for (std::size_t s : data_.sensor_ids) {
      const auto c = static_cast<Eigen::Index>(s);
      const double p = sensor_weight_ * pred[c];
      ov.row(c) += p * f_vol_.transpose();
      ob.row(c) += p * f_bnd_.transpose();
    }
    return out;
  }

  Vector apply_hessian(const Vector& x) const {
    return apply_misfit_hessian(x) + cfg_.alpha * space_->apply_reg(x, cfg_.gamma);
  }

  Vector precondition(const Vector& r) const {
    return space_->solve_reg(r, cfg_.gamma) / cfg_.alpha;
  }

  Vector rhs() const {
    Vector b = Vector::Zero(space_->size());
    auto bv = space_->vol(b);
    auto bb = space_->bnd(b);
    for (std::size_t k = 0; k < data_.sensor_ids.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(data_.sensor_ids[k]);
      const double p = sensor_weight_ * data_.u[static_cast<Eigen::Index>(k)];
      bv.row(c) += p * f_vol_.transpose();
      bb.row(c) += p * f_bnd_.transpose();
    }
    return b;
  }

  double misfit(const Vector& x) const {
    const Vector pred = predict(x);
    double s = 0.0;
    for (std::size_t k = 0; k < data_.sensor_ids.size(); ++k) {
      const double r = pred[static_cast<Eigen::Index>(data_.sensor_ids[k])] - data_.u[static_cast<Eigen::Index>(k)];
      s += sensor_weight_ * r * r;
    }
    return s;
  }

  double regularizer(const DiscreteKernel& k) const {
    return space_->x_norm_sq(k) + cfg_.gamma * space_->asymmetry_sq(k);
  }

  double objective(const Vector& x) const {
    return misfit(x) + cfg_.alpha * regularizer(space_->unflatten(x));
  }

  /// ||u||_Y at the sensors.
  double data_norm() const { return std::sqrt(sensor_weight_ * data_.u.squaredNorm()); }

  /// Eigenvalue of the misfit Hessian on its range in the X metric: each sensor row
  /// contributes ||Q~||^2_L2(Omega) + ||g||^2_L2(Gamma).
  double restricted_misfit_eigenvalue() const {
    const Grid& g = space_->grid();
    const double q = volume_norm(g, data_.q_eff), b = boundary_norm(g, data_.g);
    return q * q + b * b;
  }

 private:
  const KernelSpace* space_;
  TrainingData data_;
  TikhonovConfig cfg_;
  Vector f_vol_, f_bnd_;
  double sensor_weight_ = 0.0;
};

/// Misfit of an explicit kernel against sensor data (weights hx hy).
inline double misfit(const DiscreteKernel& k, const TrainingData& data, const Grid& g) {
  if (data.sensor_ids.empty()) fail(ErrorKind::validation, "misfit: empty sensor set");
  const Vector pred = kh_apply(k, data.g, data.q_eff);
  double s = 0.0;
  for (std::size_t j = 0; j < data.sensor_ids.size(); ++j) {
    const double r = pred[static_cast<Eigen::Index>(data.sensor_ids[j])] - data.u[static_cast<Eigen::Index>(j)];
    s += g.cell_area() * r * r;
  }
  return s;
}

inline double regularizer(const KernelSpace& space, const DiscreteKernel& k, double gamma) {
  return space.x_norm_sq(k) + gamma * space.asymmetry_sq(k);
}

struct Spectrum {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double condition = 0.0;
  int iterations_min = 0;
  int iterations_max = 0;
};

/*
 * Extreme eigenvalues of the regularized Hessian in the X-value metric,
 *   K = W^-1 H_mis + alpha (I + 4 gamma Pi_anti),
 * with W the value-norm weights and Pi_anti the antisymmetric part of G_vol.
 * Power iteration for lambda_max, inverse iteration (inner PCG) for lambda_min,
 * both capped at max_iter outer steps.
 */
inline Spectrum hessian_spectrum(const TrainingProblem& p, int max_iter = 200, double rel_tol = 1e-8,
                                 std::uint64_t seed = 7) {
  const KernelSpace& sp = p.space();
  const double alpha = p.config().alpha, gamma = p.config().gamma;
  Vector sqrt_w(sp.size());
  sqrt_w.head(sp.n_int() * sp.n_int()).setConstant(std::sqrt(sp.vol_weight()));
  for (Eigen::Index b = 0; b < sp.n_bnd(); ++b)
    sqrt_w.segment(sp.n_int() * sp.n_int() + b * sp.n_int(), sp.n_int())
        .setConstant(std::sqrt(sp.bnd_weight()[b]));

  auto reg_part = [&](const Vector& y, double scale) {
    Vector out = y;
    auto v = sp.vol(out);
    const Matrix g = sp.vol(y);
    v = scale * (g + 2.0 * gamma * (g - g.transpose()));
    sp.bnd(out) *= scale;
    return out;
  };
  auto op = [&](const Vector& y) {
    const Vector x = y.cwiseQuotient(sqrt_w);
    return Vector(p.apply_misfit_hessian(x).cwiseQuotient(sqrt_w) + reg_part(y, alpha));
  };
  auto reg_inverse = [&](const Vector& r) {
    Vector out = r;
    const Matrix g = sp.vol(r);
    const Matrix sym = 0.5 * (g + g.transpose()), anti = 0.5 * (g - g.transpose());
    sp.vol(out) = sym / alpha + anti / (alpha * (1.0 + 4.0 * gamma));
    sp.bnd(out) /= alpha;
    return out;
  };

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector start(sp.size());
  for (Eigen::Index k = 0; k < start.size(); ++k) start[k] = normal(rng);
  start.normalize();

  Spectrum s;
  Vector y = start;
  double lam = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    const Vector z = op(y);
    const double next = y.dot(z);
    s.iterations_max = it;
    y = z / z.norm();
    if (it > 1 && std::abs(next - lam) <= rel_tol * std::abs(next)) {
      lam = next;
      break;
    }
    lam = next;
  }
  s.lambda_max = lam;

  y = start;
  lam = 0.0;
  const int inner_max = static_cast<int>(std::min<Eigen::Index>(sp.size(), 5000));
  for (int it = 1; it <= max_iter; ++it) {
    const CgResult cg = pcg(op, reg_inverse, y, 1e-12, inner_max);
    const Vector& z = cg.x;
    const double next = 1.0 / y.dot(z);
    s.iterations_min = it;
    y = z / z.norm();
    if (it > 1 && std::abs(next - lam) <= rel_tol * std::abs(next)) {
      lam = next;
      break;
    }
    lam = next;
  }
  s.lambda_min = lam;
  s.condition = s.lambda_max / s.lambda_min;
  return s;
}

struct TrainResult {
  DiscreteKernel kernel;
  ReconstructionReport report;
};

struct TrainOptions {
  bool spectrum = true;  // estimate lambda_min/lambda_max of the regularized operator
};

/// Unique minimizer of J by preconditioned CG. The preconditioner is the exact
/// inverse of the scaled regularization Hessian.
inline TrainResult train(const TrainingProblem& p, TrainOptions opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const KernelSpace& sp = p.space();
  const auto& cfg = p.config();
  const int max_iter = cfg.cg_max_iter > 0 ? cfg.cg_max_iter : static_cast<int>(10 * sp.size());
  const Vector b = p.rhs();

  auto apply = [&](const Vector& x) { return p.apply_hessian(x); };
  auto precond = [&](const Vector& r) { return p.precondition(r); };
  CgResult cg = pcg(apply, precond, b, cfg.cg_rel_tol, max_iter);

  // The recursive residual can drift from the true one; restart on the true residual.
  Vector x = cg.x;
  std::vector<double> residuals = cg.residuals, objectives = cg.objective;
  int iterations = cg.iterations;
  double true_res = (b - apply(x)).norm();
  const double target = cfg.cg_rel_tol * b.norm();
  for (int restart = 0; restart < 3 && cg.converged && true_res > target; ++restart) {
    const Vector r = b - apply(x);
    CgResult more = pcg(apply, precond, r, target / r.norm(), max_iter - iterations);
    x += more.x;
    iterations += more.iterations;
    for (std::size_t k = 1; k < more.residuals.size(); ++k) {
      residuals.push_back(more.residuals[k]);
      objectives.push_back(objectives.back() + more.objective[k]);
    }
    cg.converged = more.converged;
    true_res = (b - apply(x)).norm();
  }
  if (!cg.converged || true_res > target) {
    std::ostringstream os;
    os << "training: CG did not converge in " << iterations << " iterations (residual "
       << true_res << ", target " << target << "); residual history:";
    const std::size_t stride = std::max<std::size_t>(1, residuals.size() / 20);
    for (std::size_t k = 0; k < residuals.size(); k += stride) os << ' ' << residuals[k];
    fail(ErrorKind::numerical, os.str());
  }

  TrainResult out;
  out.kernel = sp.unflatten(x);
  auto& rep = out.report;
  rep.misfit = p.misfit(x);
  rep.reg_value = p.regularizer(out.kernel);
  rep.objective = rep.misfit + cfg.alpha * rep.reg_value;
  rep.grad_norm = true_res;
  rep.grad_norm_initial = b.norm();
  rep.iterations = iterations;
  rep.symmetry_residual = symmetry_residual(out.kernel);
  rep.lambda_min_estimate = p.restricted_misfit_eigenvalue();
  rep.residual_history = std::move(residuals);
  rep.objective_history = std::move(objectives);
  if (opt.spectrum) {
    const Spectrum s = hessian_spectrum(p);
    rep.lambda_min_regularized = s.lambda_min;
    rep.lambda_max_regularized = s.lambda_max;
    rep.condition_estimate = s.condition;
  }
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline TrainResult train(const KernelSpace& space, const TrainingData& data, const TikhonovConfig& cfg,
                         TrainOptions opt = {}) {
  return train(TrainingProblem(space, data, cfg), opt);
}

struct StabilityRow {
  double sigma;
  std::vector<double> errors;  // per seed, ||G(u_n) - G(u)||_X
  double mean_error;
};

/*
 * Retrains on u_obs multiplied by (1 + sigma xi) for each sigma and seed and
 * measures the kernel deviation from the unperturbed minimizer. Seeds run
 * concurrently; each uses its own generator.
 */
inline std::vector<StabilityRow> stability_probe(const KernelSpace& space, const TrainingData& base,
                                                 const TikhonovConfig& cfg,
                                                 const std::vector<double>& sigmas, int n_seeds,
                                                 std::uint64_t seed0 = 1) {
  if (n_seeds < 1) fail(ErrorKind::validation, "stability probe: n_seeds must be >= 1");
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    if (!(sigmas[k] >= 0.0)) fail(ErrorKind::validation, "stability probe: sigmas must be >= 0");
    if (k > 0 && !(sigmas[k] < sigmas[k - 1]))
      fail(ErrorKind::validation, "stability probe: sigmas must be strictly decreasing");
  }
  const TrainOptions quiet{false};
  const DiscreteKernel ref = train(space, base, cfg, quiet).kernel;

  std::vector<StabilityRow> rows;
  for (double sigma : sigmas) {
    std::vector<std::future<double>> jobs;
    for (int s = 0; s < n_seeds; ++s) {
      jobs.push_back(std::async(std::launch::async, [&, sigma, s] {
        TrainingData data = base;
        std::mt19937_64 rng(seed0 + static_cast<std::uint64_t>(s));
        std::normal_distribution<double> normal;
        for (Eigen::Index k = 0; k < data.u.size(); ++k) data.u[k] *= 1.0 + sigma * normal(rng);
        const DiscreteKernel k = train(space, data, cfg, quiet).kernel;
        return space.x_norm(k - ref);
      }));
    }
    StabilityRow row{sigma, {}, 0.0};
    for (auto& j : jobs) row.errors.push_back(j.get());
    for (double e : row.errors) row.mean_error += e;
    row.mean_error /= static_cast<double>(row.errors.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace khg

#endif  // KHG_INVERSE_HPP
