#pragma once

// Truncated-Newton reconstruction in the (x, w) parametrization with
// matrix-free Hessian-vector products and Armijo backtracking.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptyxrf/model.hpp"

namespace ptyxrf {

enum class Mode { ptyc, fluor, joint };

Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

/// Direction or result in (x, w) coordinates.
struct StateDirection {
  RealField dx;
  std::vector<RealField> dw;
};

/// H·(dx, dw) for the joint objective at the linearization point: ptychography
/// Hessian through the link plus α·(1/N_e)·P̂ᵀP̂ on each map.
StateDirection hvp_joint(const ReconState& state, const PtychoModel::Linearization& lin, const StateDirection& dir,
                         const Problem& problem);

/// Packs θ = [vec(x); vec(w_0); …; vec(w_{N_e−1})].
Eigen::VectorXd pack(const ReconState& s);
ReconState unpack(const Eigen::Ref<const Eigen::VectorXd>& theta, const ReconState& like);
Eigen::VectorXd pack(const StateDirection& d);
StateDirection unpack_direction(const Eigen::Ref<const Eigen::VectorXd>& v, int n, int n_elements);

/// Mode-specific objective over θ.
///   ptyc:  Φ^ptyc(x + i·link(w))
///   fluor: Φ^fluor(w), x held fixed
///   joint: Φ^ptyc(x + i·link(w)) + α·Φ^fluor(w)
class Objective {
 public:
  Objective(const Problem& problem, Mode mode) : problem_(&problem), mode_(mode) {}

  Mode mode() const { return mode_; }
  const Problem& problem() const { return *problem_; }

  double value(const ReconState& s) const;

  struct Eval {
    double value = 0.0;
    Eigen::VectorXd gradient;
    int clamp_count = 0;
  };
  Eval gradient(const ReconState& s) const;

  /// Caches what the Hessian needs at s; call apply() any number of times after.
  /// Keeps a pointer to this Objective, which must outlive it.
  class Curvature {
   public:
    Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& v) const;
    int clamp_count() const { return lin_.clamp_count; }

   private:
    friend class Objective;
    const Objective* owner_ = nullptr;
    ReconState state_;
    PtychoModel::Linearization lin_;
  };
  Curvature curvature(const ReconState& s) const;

 private:
  const Problem* problem_;
  Mode mode_;
};

struct SolverConfig {
  int max_iters = 100;
  int cg_max_iters = 20;
  double forcing_cap = 0.5;       // η_k = min(cap, ‖g‖^exponent)
  double forcing_exponent = 0.5;
  double ls_shrink = 0.5;
  double ls_c1 = 1e-4;
  int ls_max_backtracks = 40;
  double curvature_tol = 1e-12;   // dᵀHd ≤ tol·‖d‖² flags negative curvature
  double divergence_factor = 1e6;
  Mode mode = Mode::joint;
  std::uint64_t seed = 7;
  double init_x = 1.0;
  double init_w = 1e-2;
  double init_jitter = 1e-3;
  double alpha_scale = 1.0;
  std::optional<double> alpha_override;

  void validate() const;
};

struct IterationRecord {
  int iter = 0;
  LossReport loss;
  double objective = 0.0;
  double grad_norm = 0.0;
  double step_size = 0.0;
  int cg_iters = 0;
  bool negative_curvature = false;
  bool stalled = false;
  int clamp_count = 0;
  double wall_time = 0.0;  // seconds since the run started
};

struct StepResult {
  ReconState state;
  double objective_before = 0.0;
  double objective_after = 0.0;
  double grad_norm = 0.0;
  double step_size = 0.0;
  double direction_norm = 0.0;
  int cg_iters = 0;
  bool negative_curvature = false;
  bool stalled = false;
  int clamp_count = 0;
};

/// One outer iteration: CG on H p = −g truncated by the forcing rule, the CG
/// cap or negative curvature, then Armijo backtracking from a unit step.
StepResult truncated_newton_step(const ReconState& state, const Objective& objective, const SolverConfig& config);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Initial state: x = init_x, each w_e = init_w + uniform jitter in ±init_jitter.
/// In ptyc mode the state carries a single map with μ = 1, so y = w.
ReconState initial_state(const Problem& problem, Mode mode, const SolverConfig& config);

struct Reconstruction {
  ReconState state;
  std::vector<IterationRecord> records;  // records[0] is the initial state
  Mode mode = Mode::joint;
};

using IterateCallback = std::function<void(int iter, const ReconState& state)>;

Reconstruction reconstruct(const Problem& problem, const ComplexField& z_true, const SolverConfig& config,
                           const IterateCallback& on_iterate = {});
/// Same, starting from a caller-supplied state (alpha taken from the state).
Reconstruction reconstruct_from(const Problem& problem, const ComplexField& z_true, const SolverConfig& config,
                                ReconState start, const IterateCallback& on_iterate = {});

/// Trajectory CSV: iter,phi_ptyc,phi_fluor,phi_joint,mse_complex,mse_imag,grad_norm,step_size,clamp_count
void write_trajectory_csv(std::ostream& out, const std::vector<IterationRecord>& records);
std::string trajectory_csv_header();

}  // namespace ptyxrf
