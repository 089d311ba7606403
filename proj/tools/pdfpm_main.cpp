#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdfpm/pdfpm.hpp"

namespace {

pdfpm::ProblemSpec load_problem(const std::string& name) {
  if (name == "aas1") return pdfpm::make_aas1();
  if (name == "aas2") return pdfpm::make_aas2();
  std::ifstream in(name);
  if (!in)
    throw pdfpm::ConfigError("problem must be aas1, aas2, or a readable "
                             "config file; got: " + name);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw pdfpm::ConfigError(std::string("could not parse ") + name + ": " +
                             e.what());
  }
  return pdfpm::problem_from_json(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proximal solver for composite multiobjective problems"};
  app.require_subcommand(1);

  auto* cmd = app.add_subcommand(
      "run", "Solve a problem over a delta sweep of robust instances");

  std::string problem_arg;
  std::string out_dir;
  pdfpm::ExperimentSpec spec;
  std::string grad_mode = "central";
  std::string b_strategy = "bfgs";
  bool plot = false;
  int grid = 201;

  cmd->add_option("--problem", problem_arg,
                  "aas1, aas2, or a JSON problem config")->required();
  cmd->add_option("--delta", spec.deltas, "uncertainty radii to sweep")
      ->delimiter(',');
  cmd->add_option("--runs", spec.runs, "starts per setting");
  cmd->add_option("--seed", spec.master_seed, "master seed");
  cmd->add_option("--out", out_dir, "output directory")->required();
  cmd->add_option("--grad-mode", grad_mode,
                  "forward|backward|central|analytic");
  cmd->add_option("--lambda-floor", spec.config.lambda_policy.floor,
                  "lower bound on the sampling radius");
  cmd->add_option("--b-strategy", b_strategy, "bfgs|identity|zero");
  cmd->add_option("--b-bound", spec.config.b_bound,
                  "Frobenius cap on scaling matrices");
  cmd->add_option("--alpha", spec.config.alpha, "descent-test fraction");
  cmd->add_option("--eps", spec.config.eps, "stopping tolerance");
  cmd->add_option("--sigma0", spec.config.sigma0, "initial proximal weight");
  cmd->add_option("--max-iter", spec.config.max_iter, "accepted-step cap");
  cmd->add_flag("--plot", plot, "emit objective-space SVG scatter plots");
  cmd->add_option("--grid", grid, "plot cloud resolution per axis");

  CLI11_PARSE(app, argc, argv);

  try {
    spec.base = load_problem(problem_arg);
    spec.config.grad_mode = pdfpm::grad_mode_from_string(grad_mode);
    spec.config.b_strategy = pdfpm::b_strategy_from_string(b_strategy);
    spec.config.validate();

    pdfpm::ExperimentReport report = pdfpm::run_experiment(spec);

    std::filesystem::path dir(out_dir);
    pdfpm::write_config_echo(report, dir);
    pdfpm::emit_csv(report, dir);

    for (const auto& s : report.settings) {
      int failed = 0;
      for (const auto& r : s.records) if (!r.error.empty()) ++failed;
      std::string note =
          failed ? " (" + std::to_string(failed) + " errored)" : "";
      std::printf("%s delta=%g: success %d/%d, distinct %d, front %zu%s\n",
                  report.spec.base.name.c_str(), s.delta, s.success,
                  static_cast<int>(s.records.size()), s.distinct,
                  s.front.size(), note.c_str());
    }

    if (plot) {
      try {
        pdfpm::emit_svg(report, grid, dir);
      } catch (const std::exception& e) {
        std::cerr << "plot skipped: " << e.what() << "\n";
        std::cout << "results written to " << dir.string() << "\n";
        return 2;
      }
    }
    std::cout << "results written to " << dir.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
