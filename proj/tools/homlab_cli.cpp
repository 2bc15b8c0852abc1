// Command-line driver: homlab <cell|solve|eigs|gaps|rates|flux|run> --config PATH
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "homlab/pipeline.hpp"

using namespace homlab;
using namespace homlab::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Periodic homogenization experiments with a singular potential"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<double> eps;
  std::optional<int> k;
  std::optional<unsigned> seed;
  std::optional<std::string> out_dir;
  bool dump_fields = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "override output_dir");
    sub->add_option("--seed", seed, "override seed");
  };
  CLI::App* cell = app.add_subcommand("cell", "solve the periodic cell problems");
  CLI::App* solve = app.add_subcommand("solve", "solve u_eps, u_0 and the Dirichlet correctors");
  CLI::App* eig = app.add_subcommand("eigs", "Dirichlet spectra of the four operators");
  CLI::App* gaps = app.add_subcommand("gaps", "eigenvalue gap table from existing spectra");
  CLI::App* rates = app.add_subcommand("rates", "rate fits from existing solutions and spectra");
  CLI::App* flux = app.add_subcommand("flux", "boundary flux table");
  CLI::App* run = app.add_subcommand("run", "full pipeline");
  for (CLI::App* s : {cell, solve, eig, gaps, rates, flux, run}) add_common(s);
  for (CLI::App* s : {solve, eig})
    s->add_option("--eps", eps, "single epsilon (default: every configured epsilon)")->check(CLI::PositiveNumber);
  eig->add_option("--k", k, "number of eigenvalues (default k_eigen)")->check(CLI::Range(1, 64));
  for (CLI::App* s : {cell, solve, run}) s->add_flag("--dump-fields", dump_fields, "write nodal fields as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = in_stage(Stage::config, [&] { return load_config(config_path); });
    if (out_dir) cfg.output_dir = *out_dir;
    if (seed) cfg.seed = *seed;
    if (k) cfg.k_eigen = *k;
    Experiment ex(in_stage(Stage::config, [&] {
      make_preset(cfg.presets);
      return cfg;
    }));
    const std::vector<double> sweep = eps ? std::vector<double>{*eps} : cfg.epsilons;

    if (cell->parsed()) return cmd_cell(ex, dump_fields, std::cout);
    if (solve->parsed()) {
      for (double e : sweep) cmd_solve(ex, e, dump_fields, std::cout);
      return 0;
    }
    if (eig->parsed()) {
      for (double e : sweep) cmd_eigs(ex, e, cfg.k_eigen, std::cout);
      return 0;
    }
    if (gaps->parsed()) return cmd_gaps(ex, std::cout);
    if (rates->parsed()) return cmd_rates(ex, std::cout);
    if (flux->parsed()) return cmd_flux(ex, std::cout);
    return cmd_run(ex, dump_fields, std::cout);
  } catch (const StageError& e) {
    std::cerr << "error " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error [report] " << e.what() << "\n";
    return static_cast<int>(Stage::report);
  }
}
