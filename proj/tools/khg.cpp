#include <khg/commands.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"khg: Green's kernel reconstruction for heterogeneous diffusion"};
  app.require_subcommand(1);

  khg::CommandOptions opt;
  double alpha = 0.0, gamma = 0.0;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--manifest", opt.manifest, "Scenario manifest (key=value text or JSON)")->required();
    sub->add_option("--out", opt.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--alpha", alpha, "Override tikhonov.alpha");
    sub->add_option("--gamma", gamma, "Override tikhonov.gamma");
    sub->add_option("--seed", seed, "Override noise.seed");
  };
  auto with_scenario = [&](CLI::App* sub) {
    sub->add_option_function<std::string>("--scenario", [&](const std::string& s) { opt.scenario = s; },
                                          "Scenario name (default: first in the manifest)");
  };

  std::map<std::string, int (*)(const khg::CommandOptions&, std::ostream&)> handlers = {
      {"simulate", khg::cmd_simulate}, {"train", khg::cmd_train},   {"predict", khg::cmd_predict},
      {"diagnose", khg::cmd_diagnose}, {"sweep", khg::cmd_sweep},   {"validate", khg::cmd_validate}};

  auto* simulate = app.add_subcommand("simulate", "Forward solve and synthetic measurements");
  auto* train = app.add_subcommand("train", "Reconstruct the kernel from one scenario's measurements");
  auto* predict = app.add_subcommand("predict", "Predict interior flux with a trained kernel");
  auto* diagnose = app.add_subcommand("diagnose", "Well-posedness constants and randomized checks");
  auto* sweep = app.add_subcommand("sweep", "Grid over (alpha, gamma)");
  auto* validate = app.add_subcommand("validate", "Invariant suite; non-zero exit on any violation");
  for (auto* sub : {simulate, train, predict, diagnose, sweep, validate}) common(sub);
  for (auto* sub : {simulate, train, predict, diagnose, sweep}) with_scenario(sub);
  train->add_flag("--simulate", opt.simulate, "Generate missing measurements in-process");
  predict->add_flag("--simulate", opt.simulate, "Generate missing boundary data in-process");
  predict->add_option("--kernel", opt.kernel, "KHGK kernel file")->required();
  sweep->add_option("--alphas", opt.alphas, "alpha values")->delimiter(',');
  sweep->add_option("--gammas", opt.gammas, "gamma values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 4;
  }

  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--alpha")) opt.alpha = alpha;
    if (sub->count("--gamma")) opt.gamma = gamma;
    if (sub->count("--seed")) opt.seed = seed;
    try {
      return handlers.at(sub->get_name())(opt, std::cout);
    } catch (const khg::Error& e) {
      std::cerr << "khg " << sub->get_name() << ": " << e.what() << "\n";
      return khg::exit_code(e.kind());
    } catch (const std::exception& e) {
      std::cerr << "khg " << sub->get_name() << ": " << e.what() << "\n";
      return 5;
    }
  }
  return 0;
}
