#pragma once

// Run configuration: one INI-style file per experiment. Every key is known
// up front; unknown or malformed keys are collected and reported together.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptyxrf/hesslab.hpp"
#include "ptyxrf/sim.hpp"
#include "ptyxrf/solver.hpp"

namespace ptyxrf {

inline constexpr const char* kRunFormat = "ptyxrf-run-1";

enum class Experiment { simulate, reconstruct, hessian_spectrum, rank_track, slice, perturb_probe, sweep };
Experiment parse_experiment(const std::string& s);
std::string to_string(Experiment e);

/// Where the dense Hessian analyses are evaluated.
enum class AnalysisPoint { truth, initial };

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct RunConfig {
  Experiment experiment = Experiment::reconstruct;
  std::filesystem::path output_dir = "out";
  std::filesystem::path dataset_dir;  // empty: simulate in memory

  // geometry
  int n = 72;
  int m = 16;
  double overlap = 0.5;
  ZonePlateParams probe;

  // phantom
  PhantomKind phantom_kind = PhantomKind::synthetic_blobs;
  int n_elements = 1;
  std::vector<double> mu;  // empty: default for n_elements
  std::uint64_t phantom_seed = 1;
  std::filesystem::path magnitude_image;
  std::filesystem::path phase_image;

  // noise
  NoiseConfig noise;
  std::uint64_t noise_seed = 11;

  SolverConfig solver;

  // analysis
  AnalysisPoint analysis_point = AnalysisPoint::truth;
  double tau = 1e-4;
  int bins = 100;
  std::vector<int> rank_iterations{25, 50, 150, 250, 375, 500};
  SliceSpec slice;
  Mode slice_objective = Mode::joint;
  std::vector<double> perturb_magnitudes;  // empty: default ±logspace
  std::vector<double> sweep_overlaps{0.83, 0.20};
  std::vector<Mode> sweep_modes{Mode::ptyc, Mode::joint};

  /// Full check of cross-field constraints; throws ConfigError listing all problems.
  void validate() const;
};

/// Parses INI text. Unknown sections/keys and bad values are all reported.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);

/// Resolved configuration with every key, in the same format the parser reads.
void write_config(std::ostream& out, const RunConfig& cfg);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

std::vector<double> default_perturb_magnitudes();

}  // namespace ptyxrf
