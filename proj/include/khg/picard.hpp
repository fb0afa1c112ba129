#ifndef KHG_PICARD_HPP
#define KHG_PICARD_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>
#include <khg/inverse.hpp>
#include <khg/kernel.hpp>
#include <khg/kernel_space.hpp>
#include <khg/lifting.hpp>
#include <khg/materials.hpp>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace khg {

/*
 * Q~(u) = (nu_sigma_f - rod) (u + w) + div(D grad w) - sigma_a w in flux-proportional
 * mode. In linear mode the source does not depend on u: Q~ = Q + div(D grad w) - sigma_a w.
 */
class NonlinearSource {
 public:
  NonlinearSource(const LiftingField& lf, const MaterialField& m, const Scenario& s, const Grid& g) {
    const auto n = static_cast<Eigen::Index>(g.n_cells());
    if (s.mode == SourceMode::flux_proportional) {
      coupling_ = source_coupling(s, g, m);
      fixed_ = effective_source(Vector::Zero(n), lf, m) + coupling_.cwiseProduct(lf.w);
    } else {
      coupling_ = Vector::Zero(n);
      fixed_ = effective_source(s.q_ext.size() == n ? s.q_ext : Vector::Zero(n), lf, m);
    }
  }

  Vector operator()(const Vector& u) const { return fixed_ + coupling_.cwiseProduct(u); }
  const Vector& coupling() const { return coupling_; }
  double lipschitz() const { return coupling_.size() ? coupling_.cwiseAbs().maxCoeff() : 0.0; }

 private:
  Vector coupling_, fixed_;
};

inline Vector nonlinear_source(const Vector& u, const LiftingField& lf, const MaterialField& m,
                               const Scenario& s, const Grid& g) {
  return NonlinearSource(lf, m, s, g)(u);
}

struct LipschitzConstants {
  double l_f = 0.0;     // ||f1|| C_trace + ||f2||
  double l_s = 0.0;     // ||nu_sigma_f - rod||_inf
  double l_kinv = 0.0;  // 1 / (lambda_min + alpha + gamma)
  double l_t = 0.0;     // product
};

inline LipschitzConstants lipschitz_constants(const Grid& g, const Vector& g_obs, const Vector& q_eff,
                                              const MaterialField& m, const Scenario& s, double c_trace,
                                              double lambda_min, double alpha, double gamma) {
  LipschitzConstants c;
  c.l_f = operator_bound(g, g_obs, q_eff, c_trace);
  c.l_s = s.mode == SourceMode::flux_proportional
              ? source_coupling(s, g, m).cwiseAbs().maxCoeff()
              : 0.0;
  c.l_kinv = 1.0 / (lambda_min + alpha + gamma);
  c.l_t = c.l_kinv * c.l_s * c.l_f;
  return c;
}

struct PicardConfig {
  double tol = 1e-6;
  int max_iter = 100;
  bool keep_history = false;  // store every G^n (needed for a-priori bound checks)

  void validate() const {
    if (!(tol > 0.0)) fail(ErrorKind::validation, "picard: tol must be > 0");
    if (max_iter < 1) fail(ErrorKind::validation, "picard: max_iter must be >= 1");
  }
};

struct PicardTrace {
  std::vector<double> kernel_steps;   // ||G^n - G^{n-1}||_X, n = 1..
  std::vector<double> relative_steps; // ||G^n - G^{n-1}||_X / ||G^{n-1}||_X (inf for n = 1)
  std::vector<double> flux_steps;     // ||u^n - u^{n-1}||_L2
  std::vector<double> ratios;         // kernel_steps[n] / kernel_steps[n-1]
  LipschitzConstants constants;
  double c_trace = 0.0;
  double lambda_min = 0.0;
  bool converged = false;
  int n_iters = 0;
  std::vector<std::string> notes;
  std::vector<DiscreteKernel> history;  // G^0, G^1, ... when requested
};

class PicardDivergence : public Error {
 public:
  PicardDivergence(const std::string& what, PicardTrace trace)
      : Error(ErrorKind::numerical, what), trace_(std::move(trace)) {}
  const PicardTrace& trace() const { return trace_; }

 private:
  PicardTrace trace_;
};

struct PicardResult {
  DiscreteKernel kernel;
  ReconstructionReport report;  // of the final training
  PicardTrace trace;
  Vector u;  // final flux iterate (homogeneous)
};

/*
 * Kernel-level fixed-point loop: Q~(u^{n-1}) -> train G^n against the fixed data ->
 * u^n = F(G^n). Starts from u^0 = 0, G^0 = 0. `data.q_eff` is ignored; the source
 * is rebuilt from `source` each iteration.
 */
inline PicardResult iterate(const KernelSpace& space, const TrainingData& data,
                            const NonlinearSource& source, const MaterialField& m, const Scenario& s,
                            const TikhonovConfig& tik, const PicardConfig& pc) {
  pc.validate();
  const Grid& g = space.grid();
  const auto n = static_cast<Eigen::Index>(g.n_cells());

  PicardResult out;
  PicardTrace& tr = out.trace;
  tr.c_trace = trace_constant(g).c_trace;

  DiscreteKernel prev = DiscreteKernel::zeros(g);
  if (pc.keep_history) tr.history.push_back(prev);
  Vector u_prev = Vector::Zero(n);
  int growing = 0;
  Spectrum first_spectrum;

  for (int it = 1; it <= pc.max_iter; ++it) {
    TrainingData td = data;
    td.q_eff = source(u_prev);
    const TrainingProblem problem(space, td, tik);
    TrainResult tr_it = train(problem, {it == 1});
    if (it == 1) {
      tr.lambda_min = tr_it.report.lambda_min_estimate;
      first_spectrum = {tr_it.report.lambda_min_regularized, tr_it.report.lambda_max_regularized,
                        tr_it.report.condition_estimate, 0, 0};
      tr.constants = lipschitz_constants(g, td.g, td.q_eff, m, s, tr.c_trace, tr.lambda_min,
                                         tik.alpha, tik.gamma);
    }
    const Vector u = kh_apply(tr_it.kernel, td.g, td.q_eff);

    const double step = space.x_norm(tr_it.kernel - prev);
    const double prev_norm = space.x_norm(prev);
    const double rel = prev_norm > 0.0 ? step / prev_norm : std::numeric_limits<double>::infinity();
    tr.flux_steps.push_back(volume_norm(g, u - u_prev));
    if (!tr.kernel_steps.empty() && tr.kernel_steps.back() > 0.0) {
      const double ratio = step / tr.kernel_steps.back();
      tr.ratios.push_back(ratio);
      growing = ratio > 1.0 ? growing + 1 : 0;
    }
    tr.kernel_steps.push_back(step);
    tr.relative_steps.push_back(rel);
    tr.n_iters = it;
    if (pc.keep_history) tr.history.push_back(tr_it.kernel);

    out.kernel = std::move(tr_it.kernel);
    out.report = std::move(tr_it.report);
    out.report.lambda_min_regularized = first_spectrum.lambda_min;
    out.report.lambda_max_regularized = first_spectrum.lambda_max;
    out.report.condition_estimate = first_spectrum.condition;
    out.u = u;
    if (growing >= 3) {
      std::ostringstream os;
      os << "Picard iteration diverges: step ratio " << tr.ratios.back() << " at iteration " << it
         << " (analytic L_T = " << tr.constants.l_t << ")";
      throw PicardDivergence(os.str(), tr);
    }
    if (rel <= pc.tol) {
      tr.converged = true;
      break;
    }
    prev = out.kernel;
    u_prev = u;
  }

  // Asymptotic contraction against the analytic chain bound.
  if (tr.ratios.size() >= 2) {
    const double measured = tr.ratios[tr.ratios.size() - 2];
    const double analytic = tr.constants.l_t;
    if (analytic > 0.0 && std::abs(measured - analytic) > 0.25 * analytic) {
      std::ostringstream os;
      os << "measured contraction " << measured << " differs from analytic L_T " << analytic
         << " by more than 25%";
      tr.notes.push_back(os.str());
    }
  }
  return out;
}

struct FixedKernelFlux {
  Vector u;  // homogeneous
  std::vector<double> steps;
  int iterations = 0;
  bool converged = false;
};

/// Flux update with the kernel held fixed: u^n = F(G)(g, Q~(u^{n-1})), u^0 = 0.
inline FixedKernelFlux fixed_kernel_flux(const DiscreteKernel& k, const Vector& g_obs,
                                         const NonlinearSource& source, double tol, int max_iter) {
  FixedKernelFlux res;
  Vector u = Vector::Zero(k.n_int());
  int growing = 0;
  double prev_abs = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    const Vector next = kh_apply(k, g_obs, source(u));
    const double abs_step = (next - u).norm();
    const double denom = next.norm();
    const double step = denom > 0.0 ? abs_step / denom : 0.0;
    u = next;
    res.iterations = it;
    if (it > 1 && prev_abs > 0.0) {
      growing = abs_step > prev_abs ? growing + 1 : 0;
      if (growing >= 3) {
        std::ostringstream os;
        os << "fixed-kernel flux iteration diverges: step ratio " << abs_step / prev_abs
           << " at iteration " << it;
        fail(ErrorKind::numerical, os.str());
      }
    }
    prev_abs = abs_step;
    res.steps.push_back(step);
    if (step <= tol || source.lipschitz() == 0.0) {
      res.converged = true;
      break;
    }
  }
  res.u = u;
  return res;
}

}  // namespace khg

#endif  // KHG_PICARD_HPP
