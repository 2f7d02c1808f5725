#pragma once

// Synthetic experiment generation: probe, scan grid, phantoms and
// Poisson-noised ptychography / fluorescence measurements.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ptyxrf/grid.hpp"

namespace ptyxrf {

struct ZonePlateParams {
  double aperture_radius_frac = 0.25;
  double defocus_phase_strength = 8.0;
};

struct Probe {
  int m = 0;
  std::vector<cplx> data;        // m×m, row-major
  std::vector<double> intensity; // |data|², cached

  static Probe from_values(int m, std::vector<cplx> values);
};

/// Pupil = circular aperture (radius frac·m frequency bins) × exp(i·strength·ρ²)
/// with ρ = |k|/(m/2), the radius relative to the grid Nyquist frequency.
/// Inverse DFT, shift the zero-offset sample to (m/2, m/2),
/// peak intensity normalized to 1.
Probe make_probe(int m, const ZonePlateParams& params = {});

struct ScanGeometry {
  int n = 0;
  int m = 0;
  int step = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  double overlap_ratio = 0.0;  // 1 − step/m from the rounded step
  std::vector<Window> windows;

  int positions() const { return static_cast<int>(windows.size()); }
};

/// Regular grid with step round((1 − overlap)·m), as many positions per axis
/// as fit in n, centered in the object.
ScanGeometry make_scan(int n, int m, double overlap_ratio);

/// Builds a geometry from explicit windows (used when loading from disk and in tests).
ScanGeometry scan_from_windows(int n, int m, int step, int grid_rows, int grid_cols, std::vector<Window> windows);

enum class PhantomKind { synthetic_blobs, image_pair };

struct Phantom {
  ComplexField z_true;
  std::vector<RealField> w_true;
  std::vector<double> mu;
  int clamp_count = 0;  // pixels where y² exceeded magnitude² and x was clamped to 0
};

/// Default link coefficients: {1} for one element, {1, 0.6, 0.3} for three.
std::vector<double> default_mu(int n_elements);

struct PhantomOptions {
  PhantomKind kind = PhantomKind::synthetic_blobs;
  int n = 64;
  int n_elements = 1;
  std::uint64_t seed = 1;
  std::vector<double> mu;  // empty → default_mu
  std::filesystem::path magnitude_image;
  std::filesystem::path phase_image;
};

Phantom make_phantom(const PhantomOptions& opts);

/// Image-pair phantom from two grayscale images already loaded (values in [0,255]).
Phantom make_image_pair_phantom(const std::vector<double>& magnitude, int mag_rows, int mag_cols,
                                const std::vector<double>& phase, int phase_rows, int phase_cols, int n, double mu);

struct GrayImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> pixels;  // raw 8-bit values, row-major
};

/// Reads a binary (P5) or ASCII (P2) 8-bit PGM file.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

struct NoisyData {
  std::vector<double> values;
  double eta = 0.0;
};

/// Applies d = η·Poisson(d̂/η) with η = (level/100)²·mean(d̂). `stream` keys
/// an independent counter-based random stream for each call site.
NoisyData add_poisson(std::span<const double> clean, double noise_level_pct, std::uint64_t seed,
                      std::uint64_t stream = 0);

/// Noise level implied by η for a given clean array: sqrt(η / mean(d̂)) × 100.
double noise_level_of(double eta, std::span<const double> clean);

struct Dataset {
  int n = 0;
  int m = 0;
  int n_elements = 0;
  ScanGeometry scan;
  Probe probe;
  ZonePlateParams probe_params;
  std::vector<double> mu;
  std::vector<double> d;  // N×m×m, position-major
  std::vector<double> D;  // N_e×n×n, element-major
  double eta_ptyc = 0.0;
  double eta_fluor = 0.0;
  double noise_level_ptyc_pct = 0.0;   // recomputed from η and d̂
  double noise_level_fluor_pct = 0.0;
  std::uint64_t seed = 0;
  int phantom_clamp_count = 0;
  // Ground truth, evaluation only.
  ComplexField z_true;
  std::vector<RealField> w_true;

  int positions() const { return scan.positions(); }
  std::span<const double> pattern(int j) const {
    return std::span<const double>(d).subspan(static_cast<std::size_t>(j) * m * m, static_cast<std::size_t>(m) * m);
  }
  RealField fluor_map(int e) const;
};

/// Noiseless diffraction intensities |F(P ⊙ z_j)|², position-major.
std::vector<double> simulate_diffraction(const ComplexField& z, const Probe& probe, const ScanGeometry& scan);
/// Noiseless fluorescence maps |P|² ∗ w_e, element-major.
std::vector<double> simulate_fluorescence(const std::vector<RealField>& w, const Probe& probe, int n);

struct NoiseConfig {
  double ptyc_level_pct = 3.0;
  double fluor_level_pct = 3.0;
};

Dataset generate_dataset(const Phantom& phantom, const Probe& probe, const ZonePlateParams& probe_params,
                         const ScanGeometry& scan, const NoiseConfig& noise, std::uint64_t seed);

/// Counter-based generator: every (seed, stream, index) triple owns an
/// independent SplitMix64 sequence, so results do not depend on visit order.
class CounterRng {
 public:
  using result_type = std::uint64_t;
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();
  double uniform();  // [0, 1)

 private:
  std::uint64_t state_;
};

}  // namespace ptyxrf
