#pragma once

// Dense Hessians at desk scale and the landscape analyses built on them:
// eigen-spectra, numerical rank over an optimization trajectory, gradient
// growth along the top eigenvector and two-direction loss slices.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptyxrf/model.hpp"
#include "ptyxrf/solver.hpp"

namespace ptyxrf {

/// Dense assembly guard on the Hessian dimension.
inline constexpr Eigen::Index kMaxDenseHessianDim = 20000;

enum class HessianKind { ptyc, joint };
std::string to_string(HessianKind k);

struct HessianBundle {
  HessianKind kind = HessianKind::ptyc;
  double alpha = 0.0;
  int n = 0;
  int n_elements = 1;
  Eigen::MatrixXd matrix;
  Eigen::VectorXd eigvals;          // descending, empty until computed
  Eigen::MatrixXd eigvecs;          // columns for ranks [first_rank, first_rank + cols)
  int first_rank = 0;               // 1-based rank of eigvecs.col(0)
};

/// Ptychography Hessian in (x, y) coordinates by probing the matrix-free
/// Hessian with every basis vector.
Eigen::MatrixXd ptyc_hessian_xy(const ComplexField& z, const PtychoModel& ptyc);

/// Dense (1/N_e)·P̂ᵀP̂ for one element map.
Eigen::MatrixXd fluor_hessian_block(const FluorModel& fluor);

/// kind = ptyc: Hessian of Φ^ptyc in (x, y) at state.z(), size 2n².
/// kind = joint: Hessian of Φ^ptyc(x + i·link(w)) + α·Φ^fluor(w) in (x, w),
/// size (1 + N_e)·n²; for one element with μ = 1 this is exactly the ptyc
/// matrix with α·H^fluor added to the lower-right block.
HessianBundle assemble_hessian(const ReconState& state, const Problem& problem, double alpha, HessianKind kind);

/// Dense Hessian of an arbitrary mode objective (column probing).
Eigen::MatrixXd assemble_objective_hessian(const Objective& objective, const ReconState& state);

/// All eigenvalues of a symmetric matrix, descending. Consumes the input.
Eigen::VectorXd symmetric_eigenvalues(Eigen::MatrixXd&& matrix);
Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& matrix);

struct EigenPairs {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // matching columns
  int first_rank = 0;
};
/// Eigenpairs with 1-based descending ranks first_rank..last_rank.
EigenPairs symmetric_eigenpairs(const Eigen::MatrixXd& matrix, int first_rank, int last_rank);

struct Spectrum {
  Eigen::VectorXd eigvals;     // descending
  Eigen::VectorXd normalized;  // λ / λ_max
  std::vector<double> bin_edges;
  std::vector<int> bin_counts;
};
Spectrum spectrum(HessianBundle& bundle, int bins = 100);
Spectrum spectrum_from_eigenvalues(const Eigen::VectorXd& eigvals_desc, int bins = 100);

/// Fraction of normalized eigenvalues at or below `threshold`.
double fraction_at_or_below(const Eigen::VectorXd& normalized, double threshold);

/// r_τ = #{|λ_i| ≥ τ}.
int numerical_rank(const Eigen::VectorXd& eigvals, double tau = 1e-4);

struct RankRow {
  int iter = 0;
  int r_ptyc = 0;
  int r_joint = 0;
  int delta = 0;
  double pct = 0.0;  // 100·delta / r_ptyc
};

/// Runs ptyc and joint reconstructions from the same seed, snapshots both at
/// the listed iterations and counts r_τ of the matching Hessians.
std::vector<RankRow> rank_tracking(const Problem& problem, const ComplexField& z_true, const SolverConfig& base,
                                   std::vector<int> iterations, double tau = 1e-4);

struct PerturbRow {
  double magnitude = 0.0;  // signed
  double grad_ptyc = 0.0;
  double pred_ptyc = 0.0;  // ‖H^ptyc Δ‖
  double grad_joint = 0.0;
  double pred_joint = 0.0;
};

/// Gradient norms at truth + s·v_top for the ptyc and joint objectives.
/// `ptyc_truth` uses the single-map (y = w) parametrization.
std::vector<PerturbRow> perturb_gradient_probe(const Problem& problem, const ReconState& ptyc_truth,
                                               const ReconState& joint_truth, const HessianBundle& ptyc_bundle,
                                               const HessianBundle& joint_bundle, const std::vector<double>& magnitudes);

struct SliceSpec {
  int v1_index = 200;  // 1-based rank by descending eigenvalue
  int v2_index = 201;
  double range = 5.0;
  int resolution = 41;
};

struct SliceResult {
  std::vector<double> coords;   // shared axis values for both directions
  Eigen::MatrixXd values;       // raw f(a, b), row = a, col = b
  Eigen::MatrixXd normalized;   // f / f_max
  double f_max = 0.0;
  bool flat = false;            // f_max == 0: normalized holds raw zeros
};

/// Eigenvectors of `hessian` at the spec's ranks.
std::pair<Eigen::VectorXd, Eigen::VectorXd> slice_directions(const Eigen::MatrixXd& hessian, const SliceSpec& spec);

/// Scales a direction to the norm of the center parameter vector.
Eigen::VectorXd scale_direction(const Eigen::VectorXd& v, const Eigen::VectorXd& center);

/// f(a, b) = Φ(θ* + a·v1 + b·v2) on a resolution² grid over [−range, range]²,
/// with v1, v2 rescaled by scale_direction.
SliceResult loss_slice(const Objective& objective, const ReconState& center, const Eigen::VectorXd& v1,
                       const Eigen::VectorXd& v2, const SliceSpec& spec);

// CSV writers.
void write_spectrum_csv(std::ostream& out, const Spectrum& s);
void write_histogram_csv(std::ostream& out, const Spectrum& s);
void write_rank_csv(std::ostream& out, const std::vector<RankRow>& rows);
void write_perturb_csv(std::ostream& out, const std::vector<PerturbRow>& rows);
void write_slice_csv(std::ostream& out, const SliceResult& s, const SliceSpec& spec, const std::string& label);

}  // namespace ptyxrf
