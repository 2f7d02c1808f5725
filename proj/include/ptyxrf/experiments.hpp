#pragma once

// Experiment drivers behind the command-line tool. Each run writes its
// artifacts plus the resolved configuration into the output directory.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ptyxrf/config.hpp"

namespace ptyxrf {

/// Applies PTYXRF_THREADS to the OpenMP runtime when set. Returns the value used (0 = untouched).
int apply_thread_env();

/// Simulates the configured dataset at the given overlap.
Dataset simulate_dataset(const RunConfig& cfg, double overlap);
/// Loads cfg.dataset_dir when set, otherwise simulates.
Dataset obtain_dataset(const RunConfig& cfg);

/// Ground-truth states. ptyc: x = Re z*, single map w = Im z* with μ = 1.
/// joint: x = Re z*, w = w*, dataset μ, α as given.
ReconState truth_state(const Dataset& ds, Mode mode, double alpha = 0.0);

void save_state(const ReconState& s, const std::filesystem::path& dir);
ReconState load_state(const std::filesystem::path& dir);

/// Runs cfg.experiment and returns the one-line summary.
std::string run_experiment(const RunConfig& cfg);

struct TrajectoryRow {
  int iter = 0;
  double phi_ptyc = 0.0, phi_fluor = 0.0, phi_joint = 0.0;
  double mse_complex = 0.0, mse_imag = 0.0;
  double grad_norm = 0.0, step_size = 0.0;
  int clamp_count = 0;
};
std::vector<TrajectoryRow> read_trajectory_csv(const std::filesystem::path& path);

struct CompareRow {
  int iter = 0;
  double d_phi_ptyc = 0.0, d_phi_fluor = 0.0, d_phi_joint = 0.0;
  double d_mse_complex = 0.0, d_mse_imag = 0.0;
};

struct CompareResult {
  std::vector<CompareRow> rows;  // deltas b − a on the common prefix
  std::string lower_mse_complex;  // "a", "b" or "tie"
  std::string lower_mse_imag;
  std::string lower_phi_ptyc;
  bool truncated = false;         // lengths differed
  std::string warning;
};

CompareResult compare(const std::vector<TrajectoryRow>& a, const std::vector<TrajectoryRow>& b);
void write_compare_csv(std::ostream& out, const CompareResult& r);
void write_verdict(std::ostream& out, const CompareResult& r);

}  // namespace ptyxrf
