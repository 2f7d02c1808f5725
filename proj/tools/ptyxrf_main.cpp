// ptyxrf: command-line runner for the reconstruction and Hessian experiments.
//
//   ptyxrf run CONFIG                   experiment named in [run] experiment
//   ptyxrf <experiment> CONFIG          simulate, reconstruct, hessian-spectrum,
//                                       rank-track, slice, perturb-probe, sweep
//   ptyxrf reconstruct CONFIG --mode M  override [solver] mode
//   ptyxrf validate CONFIG              print the resolved configuration
//   ptyxrf compare A.csv B.csv [--out DIR]
//
// Exit status: 0 success, 2 configuration error, 3 compute error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ptyxrf/experiments.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitCompute = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace ptyxrf;
  CLI::App app{"ptychography + fluorescence joint reconstruction and Hessian analysis"};
  app.require_subcommand(1);

  std::string config_path;
  std::string mode_override;

  auto* run = app.add_subcommand("run", "run the experiment named in the config");
  run->add_option("config", config_path, "config file")->required();

  std::vector<std::pair<CLI::App*, Experiment>> experiments;
  for (Experiment e : {Experiment::simulate, Experiment::reconstruct, Experiment::hessian_spectrum,
                       Experiment::rank_track, Experiment::slice, Experiment::perturb_probe, Experiment::sweep}) {
    auto* sub = app.add_subcommand(to_string(e), "run the " + to_string(e) + " experiment");
    sub->add_option("config", config_path, "config file")->required();
    if (e == Experiment::reconstruct) sub->add_option("--mode", mode_override, "ptyc, fluor or joint");
    experiments.emplace_back(sub, e);
  }

  auto* validate = app.add_subcommand("validate", "check a config and print it fully resolved");
  validate->add_option("config", config_path, "config file")->required();

  std::string traj_a, traj_b, compare_out;
  auto* cmp = app.add_subcommand("compare", "per-iteration deltas between two trajectory CSVs");
  cmp->add_option("a", traj_a, "first trajectory CSV")->required();
  cmp->add_option("b", traj_b, "second trajectory CSV")->required();
  cmp->add_option("--out", compare_out, "directory for compare.csv and verdict.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    apply_thread_env();
    if (cmp->parsed()) {
      const auto r = compare(read_trajectory_csv(traj_a), read_trajectory_csv(traj_b));
      if (r.truncated) std::cerr << "warning: " << r.warning << "\n";
      if (compare_out.empty()) {
        write_compare_csv(std::cout, r);
        write_verdict(std::cout, r);
      } else {
        std::filesystem::create_directories(compare_out);
        std::ofstream c(std::filesystem::path(compare_out) / "compare.csv");
        write_compare_csv(c, r);
        std::ofstream v(std::filesystem::path(compare_out) / "verdict.txt");
        write_verdict(v, r);
        std::cout << "lower mse_complex: " << r.lower_mse_complex << ", lower mse_imag: " << r.lower_mse_imag
                  << ", lower phi_ptyc: " << r.lower_phi_ptyc << "\n";
      }
      return 0;
    }

    RunConfig cfg = load_config(config_path);
    if (validate->parsed()) {
      write_config(std::cout, cfg);
      return 0;
    }
    for (const auto& [sub, e] : experiments)
      if (sub->parsed()) cfg.experiment = e;
    if (!mode_override.empty()) {
      try {
        cfg.solver.mode = parse_mode(mode_override);
      } catch (const std::exception& e) {
        throw ConfigError({std::string("--mode: ") + e.what()});
      }
    }
    std::cout << run_experiment(cfg) << std::endl;
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "ptyxrf: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "ptyxrf: error: " << e.what() << "\n";
    return kExitCompute;
  }
}
