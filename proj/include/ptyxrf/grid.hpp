#pragma once

// Shared numerical conventions: square fields stored row-major, scan
// windows, the 2-D DFT and circular convolution with a probe-derived kernel.

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace ptyxrf {

using cplx = std::complex<double>;

/// Square n×n field, row-major. vec(field) is simply the storage order.
template <typename T>
class Grid {
 public:
  Grid() = default;
  explicit Grid(int n, T fill = T{}) : n_(n), data_(static_cast<std::size_t>(n) * n, fill) {
    if (n <= 0) throw std::invalid_argument("Grid: side length must be positive");
  }
  Grid(int n, std::vector<T> data) : n_(n), data_(std::move(data)) {
    if (n <= 0 || data_.size() != static_cast<std::size_t>(n) * n)
      throw std::invalid_argument("Grid: data size does not match n*n");
  }

  int n() const { return n_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * n_ + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * n_ + c]; }
  T& operator[](std::size_t k) { return data_[k]; }
  const T& operator[](std::size_t k) const { return data_[k]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  int n_ = 0;
  std::vector<T> data_;
};

using ComplexField = Grid<cplx>;
using RealField = Grid<double>;

/// Row-major vectorization shared by every dense operator in the project.
Eigen::VectorXd vec(const RealField& f);
RealField unvec(const Eigen::Ref<const Eigen::VectorXd>& v, int n);

/// True when every entry is finite.
bool all_finite(const ComplexField& f);
bool all_finite(const RealField& f);

/// Placement of one m×m scan window inside an n×n object.
struct Window {
  int j = 0;
  int row_offset = 0;
  int col_offset = 0;
  int m = 0;
};

/// Throws std::out_of_range if the window leaves an n×n object.
void check_window(const Window& w, int n);

/// Copies the m×m block at the window into `out` (row-major, m*m entries).
void extract_window(const ComplexField& z, const Window& w, std::span<cplx> out);
std::vector<cplx> extract_window(const ComplexField& z, const Window& w);

/// Adds u (m×m, row-major) into `accum` at the window location.
void embed_window_add(std::span<const cplx> u, const Window& w, ComplexField& accum);
/// Adjoint of extract_window: a zero n×n field with u placed at the window.
ComplexField embed_window_adjoint(std::span<const cplx> u, const Window& w, int n);

/// Unnormalized forward 2-D DFT of side m; inverse carries the 1/m² factor and
/// the adjoint is the unnormalized backward transform (F* = m² F⁻¹).
/// Thread-safe: plans are shared, execution uses the new-array interface.
class Dft2d {
 public:
  explicit Dft2d(int m);
  int m() const { return m_; }
  void forward(std::span<const cplx> in, std::span<cplx> out) const;
  void adjoint(std::span<const cplx> in, std::span<cplx> out) const;
  void inverse(std::span<const cplx> in, std::span<cplx> out) const;

 private:
  int m_;
  void* fwd_;
  void* bwd_;
};

/// Zero-pads an m×m kernel to n×n and cyclically shifts it so the kernel's
/// center pixel (m/2, m/2) lands at index (0, 0).
RealField center_kernel(const RealField& small, int n);

/// Circular 2-D convolution through the DFT. The kernel origin is index (0,0).
RealField circ_convolve(const RealField& kernel, const RealField& map);
/// Adjoint of circ_convolve (circular correlation with the same kernel).
RealField circ_correlate(const RealField& kernel, const RealField& map);

/// Largest side for which dense n²×n² operators are built.
inline constexpr int kMaxDenseSide = 128;

/// Dense matrix P̂ with P̂·vec(map) = vec(circ_convolve(kernel, map)).
Eigen::MatrixXd psf_matrix(const RealField& kernel);

/// Convolution with a fixed kernel, spectrum cached.
class CircularConvolver {
 public:
  explicit CircularConvolver(const RealField& kernel);
  int n() const { return n_; }
  RealField apply(const RealField& map) const;
  RealField apply_adjoint(const RealField& map) const;
  /// Squared magnitude of the kernel spectrum: eigenvalues of P̂ᵀP̂.
  std::vector<double> gram_spectrum() const;

 private:
  RealField filter(const RealField& map, bool conjugate) const;
  int n_;
  Dft2d dft_;
  std::vector<cplx> spectrum_;
};

}  // namespace ptyxrf
