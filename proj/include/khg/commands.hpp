#ifndef KHG_COMMANDS_HPP
#define KHG_COMMANDS_HPP

#include <khg/csv.hpp>
#include <khg/diagnostics.hpp>
#include <khg/error.hpp>
#include <khg/forward.hpp>
#include <khg/inverse.hpp>
#include <khg/kernel.hpp>
#include <khg/kernel_io.hpp>
#include <khg/kernel_space.hpp>
#include <khg/lifting.hpp>
#include <khg/manifest.hpp>
#include <khg/operator.hpp>
#include <khg/picard.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace khg {

struct CommandOptions {
  std::string manifest;
  std::optional<std::string> scenario;
  std::string out_dir = ".";
  std::optional<double> alpha, gamma;
  std::optional<std::uint64_t> seed;
  std::string kernel;     // predict
  bool simulate = false;  // generate missing measurements in-process
  std::vector<double> alphas, gammas;
};

/// Manifest plus the objects every command derives from it.
struct Context {
  Manifest man;
  Grid grid;
  MaterialField materials;
};

inline Context load_context(const CommandOptions& o) {
  Manifest man = load_manifest(o.manifest);
  if (o.alpha) man.tikhonov.alpha = *o.alpha;
  if (o.gamma) man.tikhonov.gamma = *o.gamma;
  if (o.seed) man.noise_seed = *o.seed;
  man.tikhonov.validate();
  Grid g = man.grid();
  MaterialField m = man.material_field(g);
  return {std::move(man), std::move(g), std::move(m)};
}

inline const ScenarioSpec& pick_scenario(const Context& ctx, const std::optional<std::string>& name) {
  return name ? ctx.man.scenario(*name) : ctx.man.scenarios.front();
}

struct Simulation {
  Scenario scenario;
  Vector phi;
  MeasurementSet ms;
};

inline Simulation simulate_scenario(const Context& ctx, const ScenarioSpec& spec) {
  Simulation s{build_scenario(spec, ctx.grid), {}, {}};
  s.phi = truth_flux(ctx.grid, ctx.materials, s.scenario);
  s.ms = synthesize_measurements(s.phi, s.scenario.psi, ctx.grid, ctx.materials,
                                 ctx.man.sensor_ids(ctx.grid), ctx.man.noise_sigma, ctx.man.noise_seed);
  return s;
}

/// Lifting, source map and homogeneous training data built from measured boundary flux.
struct Prepared {
  LiftingField lifting;
  NonlinearSource source;
  TrainingData data;
};

inline Prepared prepare(const Context& ctx, const Scenario& sc, const MeasurementSet& ms) {
  LiftingField lf = build_lifting(ms.psi_obs, ctx.grid, ctx.materials, ctx.man.lifting);
  NonlinearSource src(lf, ctx.materials, sc, ctx.grid);
  TrainingData td = make_training_data(ms, lf, ctx.grid, ctx.materials,
                                       src(Vector::Zero(static_cast<Eigen::Index>(ctx.grid.n_cells()))));
  return {std::move(lf), std::move(src), std::move(td)};
}

struct TrainingOutcome {
  DiscreteKernel kernel;
  ReconstructionReport report;
  std::optional<PicardTrace> trace;
};

/// Step 4: direct training in linear mode, kernel-level Picard iteration otherwise.
inline TrainingOutcome run_training(const Context& ctx, const KernelSpace& space, const Scenario& sc,
                                    const Prepared& p, TrainOptions opt = {}) {
  if (sc.mode == SourceMode::linear) {
    auto r = train(space, p.data, ctx.man.tikhonov, opt);
    return {std::move(r.kernel), std::move(r.report), std::nullopt};
  }
  auto r = iterate(space, p.data, p.source, ctx.materials, sc, ctx.man.tikhonov, ctx.man.picard);
  return {std::move(r.kernel), std::move(r.report), std::move(r.trace)};
}

struct Prediction {
  Vector phi;
  int iterations = 1;
  bool converged = true;
};

/// Testing phase: the target's lifting and boundary current drive the fixed kernel.
inline Prediction predict_flux(const Context& ctx, const DiscreteKernel& k, const Scenario& sc,
                               const MeasurementSet& ms) {
  const LiftingField lf = build_lifting(ms.psi_obs, ctx.grid, ctx.materials, ctx.man.lifting);
  const NonlinearSource src(lf, ctx.materials, sc, ctx.grid);
  const Vector g = shift_boundary_current(ms.current_obs, lf, ctx.grid, ctx.materials);
  const auto fk = fixed_kernel_flux(k, g, src, std::min(ctx.man.picard.tol, 1e-10),
                                    std::max(ctx.man.picard.max_iter, 200));
  return {shift_to_physical(fk.u, lf), fk.iterations, fk.converged};
}

inline double relative_l2(const Vector& a, const Vector& truth) {
  return (a - truth).norm() / std::max(truth.norm(), 1e-300);
}

inline double relative_l2_at(const Vector& a, const Vector& truth, const std::vector<std::size_t>& ids) {
  double num = 0.0, den = 0.0;
  for (auto c : ids) {
    const auto e = static_cast<Eigen::Index>(c);
    num += (a[e] - truth[e]) * (a[e] - truth[e]);
    den += truth[e] * truth[e];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

inline nlohmann::json to_json(const ReconstructionReport& r) {
  return {{"misfit", r.misfit},
          {"reg_value", r.reg_value},
          {"objective", r.objective},
          {"grad_norm", r.grad_norm},
          {"grad_norm_initial", r.grad_norm_initial},
          {"iterations", r.iterations},
          {"symmetry_residual", r.symmetry_residual},
          {"lambda_min_estimate", r.lambda_min_estimate},
          {"lambda_min_regularized", r.lambda_min_regularized},
          {"lambda_max_regularized", r.lambda_max_regularized},
          {"condition_estimate", r.condition_estimate},
          {"runtime_s", r.runtime_s}};
}

inline nlohmann::json to_json(const PicardTrace& t) {
  return {{"kernel_steps", t.kernel_steps},
          {"relative_steps", t.relative_steps},
          {"flux_steps", t.flux_steps},
          {"ratios", t.ratios},
          {"L_F", t.constants.l_f},
          {"L_S", t.constants.l_s},
          {"L_Kinv", t.constants.l_kinv},
          {"L_T", t.constants.l_t},
          {"C_trace", t.c_trace},
          {"lambda_min", t.lambda_min},
          {"converged", t.converged},
          {"n_iters", t.n_iters},
          {"notes", t.notes}};
}

namespace detail {

inline std::string out_path(const CommandOptions& o, const std::string& file) {
  std::filesystem::create_directories(o.out_dir);
  return (std::filesystem::path(o.out_dir) / file).string();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::missing_input, "cannot open " + path + " for writing");
  os << text;
}

inline void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Measurements of a scenario from <out>/<name>_*.csv, or simulated when allowed.
inline MeasurementSet measurements_for(const Context& ctx, const CommandOptions& o,
                                       const ScenarioSpec& spec, std::ostream& log) {
  const std::string stem = (std::filesystem::path(o.out_dir) / spec.name).string();
  const bool present = std::filesystem::exists(stem + "_boundary.csv") &&
                       std::filesystem::exists(stem + "_sensors.csv");
  if (present) {
    MeasurementSet ms = read_measurements(stem, ctx.grid);
    check_sensor_ids(ms.sensor_ids, ctx.grid);
    return ms;
  }
  if (!o.simulate)
    fail(ErrorKind::missing_input, "measurements for scenario '" + spec.name + "' not found in " +
                                       o.out_dir + " (run 'simulate' first or pass --simulate)");
  log << "simulating measurements for scenario " << spec.name << "\n";
  return simulate_scenario(ctx, spec).ms;
}

}  // namespace detail

inline int cmd_simulate(const CommandOptions& o, std::ostream& log = std::cout) {
  const Context ctx = load_context(o);
  const auto& spec = pick_scenario(ctx, o.scenario);
  const Simulation s = simulate_scenario(ctx, spec);
  write_field_csv(detail::out_path(o, spec.name + "_flux.csv"), ctx.grid, s.phi, ctx.man.hash);
  write_measurements((std::filesystem::path(o.out_dir) / spec.name).string(), ctx.grid, s.ms, ctx.man.hash);
  log << "simulate " << spec.name << " (" << mode_name(s.scenario.mode) << "): " << ctx.grid.n_cells()
      << " cells, " << s.ms.sensor_ids.size() << " sensors, noise sigma " << s.ms.noise_sigma << "\n";
  return 0;
}

inline int cmd_train(const CommandOptions& o, std::ostream& log = std::cout) {
  const Context ctx = load_context(o);
  const auto& spec = pick_scenario(ctx, o.scenario);
  const Scenario sc = build_scenario(spec, ctx.grid);
  const MeasurementSet ms = detail::measurements_for(ctx, o, spec, log);
  const Prepared p = prepare(ctx, sc, ms);
  const KernelSpace space(ctx.grid);
  const TrainingOutcome t = run_training(ctx, space, sc, p);

  write_kernel(detail::out_path(o, spec.name + ".khgk"), t.kernel);
  nlohmann::json j = {{"manifest", ctx.man.hash},
                      {"scenario", spec.name},
                      {"mode", mode_name(sc.mode)},
                      {"alpha", ctx.man.tikhonov.alpha},
                      {"gamma", ctx.man.tikhonov.gamma},
                      {"sensors", ms.sensor_ids.size()},
                      {"x_norm", space.x_norm(t.kernel)},
                      {"data_norm", std::sqrt(ctx.grid.cell_area() * p.data.u.squaredNorm())},
                      {"report", to_json(t.report)}};
  if (t.trace) j["picard"] = to_json(*t.trace);
  detail::write_json(detail::out_path(o, spec.name + "_train_report.json"), j);
  log << "train " << spec.name << ": misfit " << t.report.misfit << ", symmetry residual "
      << t.report.symmetry_residual << ", CG iterations " << t.report.iterations;
  if (t.trace) log << ", Picard iterations " << t.trace->n_iters << ", L_T " << t.trace->constants.l_t;
  log << "\n";
  return 0;
}

inline int cmd_predict(const CommandOptions& o, std::ostream& log = std::cout) {
  const Context ctx = load_context(o);
  if (o.kernel.empty()) fail(ErrorKind::missing_input, "predict needs --kernel <file>");
  const DiscreteKernel k = read_kernel(o.kernel, ctx.grid);
  const auto& spec = pick_scenario(ctx, o.scenario);
  const Scenario sc = build_scenario(spec, ctx.grid);
  const MeasurementSet ms = detail::measurements_for(ctx, o, spec, log);
  const Prediction pr = predict_flux(ctx, k, sc, ms);
  const Vector truth = truth_flux(ctx.grid, ctx.materials, sc);
  const auto sensors = ctx.man.sensor_ids(ctx.grid);

  write_field_csv(detail::out_path(o, spec.name + "_prediction.csv"), ctx.grid, pr.phi, ctx.man.hash);
  const nlohmann::json j = {{"manifest", ctx.man.hash},
                            {"kernel", o.kernel},
                            {"scenario", spec.name},
                            {"mode", mode_name(sc.mode)},
                            {"iterations", pr.iterations},
                            {"converged", pr.converged},
                            {"relative_l2_error", relative_l2(pr.phi, truth)},
                            {"relative_l2_error_sensors", relative_l2_at(pr.phi, truth, sensors)}};
  detail::write_json(detail::out_path(o, spec.name + "_predict_report.json"), j);
  log << "predict " << spec.name << ": relative L2 error " << relative_l2(pr.phi, truth) << "\n";
  return 0;
}

inline int cmd_diagnose(const CommandOptions& o, std::ostream& log = std::cout) {
  const Context ctx = load_context(o);
  const auto& spec = pick_scenario(ctx, o.scenario);
  const Simulation s = simulate_scenario(ctx, spec);
  const Prepared p = prepare(ctx, s.scenario, s.ms);
  const KernelSpace space(ctx.grid);
  const TrainingProblem problem(space, p.data, ctx.man.tikhonov);
  const auto n = static_cast<Eigen::Index>(ctx.grid.n_cells());
  const Vector q = s.scenario.mode == SourceMode::linear ? s.scenario.q_ext : Vector::Zero(n);
  const ConstantsReport r = compute_constants(problem, ctx.materials, p.lifting, q, 1000,
                                              ctx.man.noise_seed);
  nlohmann::json j = to_json(r);
  j["manifest"] = ctx.man.hash;
  j["scenario"] = spec.name;
  detail::write_json(detail::out_path(o, "constants.json"), j);
  detail::write_text(detail::out_path(o, "constants.txt"),
                     "manifest=" + ctx.man.hash + "\nscenario=" + spec.name + "\n" + to_key_value(r));
  log << to_key_value(r);
  return 0;
}

inline int cmd_sweep(const CommandOptions& o, std::ostream& log = std::cout) {
  Context ctx = load_context(o);
  const auto& spec = pick_scenario(ctx, o.scenario);
  const Simulation s = simulate_scenario(ctx, spec);
  const Prepared p = prepare(ctx, s.scenario, s.ms);
  const KernelSpace space(ctx.grid);
  const auto alphas = o.alphas.empty() ? std::vector<double>{1e-2, 1e-4, 1e-6} : o.alphas;
  const auto gammas = o.gammas.empty() ? std::vector<double>{0.1, 1.0, 10.0} : o.gammas;

  struct Row {
    double alpha, gamma;
    TrainingOutcome t;
  };
  std::vector<std::future<Row>> jobs;
  for (double a : alphas) {
    for (double gm : gammas) {
      jobs.push_back(std::async(std::launch::async, [&, a, gm] {
        Context local = ctx;
        local.man.tikhonov.alpha = a;
        local.man.tikhonov.gamma = gm;
        local.man.tikhonov.validate();
        return Row{a, gm, run_training(local, space, s.scenario, p, {false})};
      }));
    }
  }
  std::ostringstream csv;
  csv << "# manifest=" << ctx.man.hash << "\nalpha,gamma,misfit,regularizer,x_norm,symmetry_residual,iterations\n";
  nlohmann::json rows = nlohmann::json::array();
  for (auto& jb : jobs) {
    const Row r = jb.get();
    const double xn = space.x_norm(r.t.kernel);
    csv << fmt_double(r.alpha) << ',' << fmt_double(r.gamma) << ',' << fmt_double(r.t.report.misfit) << ','
        << fmt_double(r.t.report.reg_value) << ',' << fmt_double(xn) << ','
        << fmt_double(r.t.report.symmetry_residual) << ',' << r.t.report.iterations << '\n';
    rows.push_back({{"alpha", r.alpha}, {"gamma", r.gamma}, {"misfit", r.t.report.misfit},
                    {"regularizer", r.t.report.reg_value}, {"x_norm", xn},
                    {"symmetry_residual", r.t.report.symmetry_residual},
                    {"iterations", r.t.report.iterations}});
  }
  detail::write_text(detail::out_path(o, "sweep.csv"), csv.str());
  detail::write_json(detail::out_path(o, "sweep.json"),
                     {{"manifest", ctx.man.hash}, {"scenario", spec.name}, {"rows", rows}});
  log << csv.str();
  return 0;
}

struct ValidationCheck {
  std::string name;
  double value;
  double limit;
  bool pass;
};

/// Invariant suite over everything the manifest defines. Exit status 5 on any failure.
inline std::vector<ValidationCheck> validation_suite(const Context& ctx) {
  std::vector<ValidationCheck> checks;
  auto le = [&](const std::string& name, double v, double limit) {
    checks.push_back({name, v, limit, v <= limit});
  };
  const Grid& g = ctx.grid;
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  const auto op = assemble(g, ctx.materials);
  le("operator_symmetry", (Matrix(op.matrix()) - Matrix(op.matrix()).transpose()).cwiseAbs().maxCoeff(), 0.0);

  const DiscreteKernel oracle = oracle_kernel(op);
  le("oracle_reciprocity", symmetry_residual(oracle), 1e-12);

  const auto pc = poincare_constant(g);
  const auto lm = lax_milgram_constants(ctx.materials, pc.c_p);
  const auto bc = verify_bilinear_bounds(op, lm.m_a, lm.c_a, 1000, ctx.man.noise_seed);
  le("lax_milgram_continuity_violations", bc.continuity_violations, 0);
  le("lax_milgram_coercivity_violations", bc.coercivity_violations, 0);
  const auto tc = trace_constant(g);
  const KernelSpace space(g);

  for (const auto& spec : ctx.man.scenarios) {
    const Scenario sc = build_scenario(spec, g);
    const std::string tag = "[" + spec.name + "] ";
    const LiftingField lf = build_lifting(sc.psi, g, ctx.materials, ctx.man.lifting);
    const Vector q = sc.mode == SourceMode::linear ? sc.q_ext : Vector::Zero(n);
    const Vector qt = effective_source(q, lf, ctx.materials);
    const Vector hom = solve_dirichlet(op, qt, Vector::Zero(static_cast<Eigen::Index>(g.n_boundary())));
    const Vector full = solve_dirichlet(op, q, sc.psi);
    le(tag + "lifting_equivalence", relative_l2(shift_to_homogeneous(full, lf), hom), 1e-10);
    le(tag + "kh_consistency",
       relative_l2(kh_apply(oracle, Vector::Zero(static_cast<Eigen::Index>(g.n_boundary())), qt), hom), 1e-10);
    const double cf = functional_bound(q, lf, ctx.materials, g, pc.c_p);
    le(tag + "functional_bound_violations", verify_functional_bound(op, q, lf, cf, 1000, ctx.man.noise_seed), 0);

    if (sc.mode == SourceMode::flux_proportional) {
      const auto fp = forward_picard(g, ctx.materials, sc, 1e-11, 500);
      le(tag + "forward_picard_vs_direct", relative_l2(fp.phi, truth_flux(g, ctx.materials, sc)), 1e-9);
    }

    const Simulation sim = simulate_scenario(ctx, spec);
    const Prepared p = prepare(ctx, sc, sim.ms);
    le(tag + "operator_bound_violations",
       verify_operator_bound(space, p.data.g, p.data.q_eff, tc.c_trace, 100, ctx.man.noise_seed), 0);

    const TrainingProblem problem(space, p.data, ctx.man.tikhonov);
    const TrainResult tr = train(problem, {false});
    le(tag + "train_grad_norm", tr.report.grad_norm, ctx.man.tikhonov.cg_rel_tol * tr.report.grad_norm_initial);
    le(tag + "tikhonov_scaling_bound",
       space.x_norm(tr.kernel) - problem.data_norm() / std::sqrt(ctx.man.tikhonov.alpha), 0.0);
    const Vector x = space.flatten(tr.kernel);
    const double j0 = problem.objective(x);
    std::mt19937_64 rng(ctx.man.noise_seed);
    std::normal_distribution<double> normal;
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 20; ++k) {
      Vector d(x.size());
      for (Eigen::Index e = 0; e < d.size(); ++e) d[e] = normal(rng);
      d *= 1e-3 * std::max(x.norm(), 1.0) / d.norm();
      worst = std::max(worst, j0 - problem.objective(x + d));
    }
    le(tag + "minimum_certificate", worst, 1e-12 * std::max(1.0, std::abs(j0)));
  }
  return checks;
}

inline int cmd_validate(const CommandOptions& o, std::ostream& log = std::cout) {
  const Context ctx = load_context(o);
  const auto checks = validation_suite(ctx);
  bool ok = true;
  nlohmann::json arr = nlohmann::json::array();
  std::ostringstream kv;
  kv << std::setprecision(6) << "manifest=" << ctx.man.hash << "\n";
  for (const auto& c : checks) {
    ok = ok && c.pass;
    arr.push_back({{"name", c.name}, {"value", c.value}, {"limit", c.limit}, {"pass", c.pass}});
    kv << c.name << "=" << (c.pass ? "pass" : "FAIL") << " value=" << c.value << " limit=" << c.limit << "\n";
  }
  kv << "result=" << (ok ? "pass" : "FAIL") << "\n";
  detail::write_json(detail::out_path(o, "validate.json"),
                     {{"manifest", ctx.man.hash}, {"pass", ok}, {"checks", arr}});
  detail::write_text(detail::out_path(o, "validate.txt"), kv.str());
  log << kv.str();
  return ok ? 0 : 5;
}

}  // namespace khg

#endif  // KHG_COMMANDS_HPP
