#pragma once

// Objective layer: residuals, losses, the link y = Σ μ_e w_e, analytic
// gradients, the α balancing rule and evaluation metrics.

#include <iosfwd>
#include <span>
#include <vector>

#include "ptyxrf/grid.hpp"
#include "ptyxrf/sim.hpp"

namespace ptyxrf {

/// Far-field amplitudes below this are clamped before division.
inline constexpr double kAmplitudeFloor = 1e-12;

/// Optimization variables. The object is always derived, never stored.
struct ReconState {
  RealField x;
  std::vector<RealField> w;
  std::vector<double> mu;
  double alpha = 0.0;

  int n() const { return x.n(); }
  int n_elements() const { return static_cast<int>(w.size()); }
  ComplexField z() const;
};

/// y = Σ_e mu[e]·w[e].
RealField link(const std::vector<RealField>& w, std::span<const double> mu);

/// Amplitude-based ptychography term Φ = (1/2N) Σ_j ‖|F(P ⊙ z_j)| − √d_j‖².
class PtychoModel {
 public:
  PtychoModel(Probe probe, ScanGeometry scan, std::span<const double> d);

  int n() const { return scan_.n; }
  int m() const { return probe_.m; }
  int positions() const { return scan_.positions(); }
  const Probe& probe() const { return probe_; }
  const ScanGeometry& scan() const { return scan_; }

  /// r_j = |F(P ⊙ z_j)| − √d_j, one m×m array per position.
  std::vector<std::vector<double>> residual(const ComplexField& z) const;
  double loss(const ComplexField& z) const;

  struct Gradient {
    RealField gx;  // ∂Φ/∂x
    RealField gy;  // ∂Φ/∂y
    double loss = 0.0;
    int clamp_count = 0;
  };
  Gradient gradient(const ComplexField& z) const;

  /// Far-field cache ẑ_j = F(P ⊙ z_j) at a fixed point, reused by every
  /// Hessian-vector product taken there.
  struct Linearization {
    std::vector<std::vector<cplx>> farfield;
    int clamp_count = 0;
  };
  Linearization linearize(const ComplexField& z) const;

  /// Exact Hessian action on a complex direction dz = dx + i·dy, returned as
  /// Hdx-block + i·Hdy-block of the real 2n²×2n² Hessian.
  ComplexField hessian_apply(const Linearization& lin, const ComplexField& dz) const;

 private:
  Probe probe_;
  ScanGeometry scan_;
  std::vector<double> amplitude_;  // √d, position-major
  Dft2d dft_;
};

/// Fluorescence term Φ = (1/2N_e) Σ_e ‖|P|² ∗ w_e − D_e‖² with circular convolution.
class FluorModel {
 public:
  FluorModel(const Probe& probe, int n, std::vector<RealField> D);

  int n() const { return psf_.n(); }
  int n_elements() const { return static_cast<int>(D_.size()); }
  const CircularConvolver& psf() const { return psf_; }
  const RealField& kernel() const { return kernel_; }

  std::vector<RealField> residual(const std::vector<RealField>& w) const;
  double loss(const std::vector<RealField>& w) const;
  /// (1/N_e) P̂ᵀ r_e per element.
  std::vector<RealField> gradient(const std::vector<RealField>& w) const;
  /// (1/N_e) P̂ᵀP̂ dw_e per element.
  std::vector<RealField> hessian_apply(const std::vector<RealField>& dw) const;

 private:
  RealField kernel_;
  CircularConvolver psf_;
  std::vector<RealField> D_;
};

/// Everything the objective needs from a dataset.
struct Problem {
  PtychoModel ptyc;
  FluorModel fluor;
  std::vector<double> mu;

  static Problem from_dataset(const Dataset& ds);
  int n() const { return ptyc.n(); }
  int n_elements() const { return fluor.n_elements(); }
};

// Free-function forms of the objective pieces.
std::vector<std::vector<double>> ptyc_residual(const ComplexField& z, const Probe& probe, const ScanGeometry& scan,
                                               std::span<const double> d);
std::vector<RealField> fluor_residual(const std::vector<RealField>& w, const Probe& probe,
                                      const std::vector<RealField>& D);
PtychoModel::Gradient grad_ptyc(const ComplexField& z, const Probe& probe, const ScanGeometry& scan,
                                std::span<const double> d);

struct JointGradient {
  RealField gx;
  std::vector<RealField> gw;
  double phi_ptyc = 0.0;
  double phi_fluor = 0.0;
  int clamp_count = 0;
};

/// Gradient of Φ^ptyc(x + i·link(w)) + α·Φ^fluor(w) with respect to x and each w_e.
JointGradient grad_joint(const ReconState& state, const Problem& problem);

/// GradNorm-style weight with β = 1: ‖∇_zΦ^ptyc(z₀)‖ / ‖∇_wΦ^fluor(w₀)‖, times `scale`.
double select_alpha(const ReconState& state0, const Problem& problem, double scale = 1.0);

struct LossReport {
  double phi_ptyc = 0.0;
  double phi_fluor = 0.0;
  double phi_joint = 0.0;  // phi_ptyc + alpha·phi_fluor
  double mse_complex = 0.0;
  double mse_imag = 0.0;
  double alpha = 0.0;
  bool gauge_aligned = false;
};

/// Global phase θ maximizing alignment: arg⟨z, z_ref⟩ (conjugate-linear in z).
double optimal_phase(const ComplexField& z, const ComplexField& z_ref);

/// Losses at the state plus MSEs against z_true. With `gauge_align` the
/// object is rotated by the optimal global phase before both MSEs.
LossReport evaluate(const ReconState& state, const Problem& problem, const ComplexField& z_true, bool gauge_align);

}  // namespace ptyxrf
