#include "ptyxrf/grid.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <string>

#include <fftw3.h>

namespace ptyxrf {

Eigen::VectorXd vec(const RealField& f) {
  return Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
}

RealField unvec(const Eigen::Ref<const Eigen::VectorXd>& v, int n) {
  if (v.size() != static_cast<Eigen::Index>(n) * n)
    throw std::invalid_argument("unvec: vector length is not n*n");
  return RealField(n, std::vector<double>(v.data(), v.data() + v.size()));
}

bool all_finite(const ComplexField& f) {
  for (const auto& v : f.values())
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  return true;
}

bool all_finite(const RealField& f) {
  for (double v : f.values())
    if (!std::isfinite(v)) return false;
  return true;
}

void check_window(const Window& w, int n) {
  if (w.m <= 0 || w.m > n || w.row_offset < 0 || w.col_offset < 0 || w.row_offset > n - w.m ||
      w.col_offset > n - w.m) {
    throw std::out_of_range("window " + std::to_string(w.j) + " at (" + std::to_string(w.row_offset) +
                            "," + std::to_string(w.col_offset) + ") with m=" + std::to_string(w.m) +
                            " does not fit inside n=" + std::to_string(n));
  }
}

void extract_window(const ComplexField& z, const Window& w, std::span<cplx> out) {
  check_window(w, z.n());
  if (out.size() != static_cast<std::size_t>(w.m) * w.m)
    throw std::invalid_argument("extract_window: output is not m*m");
  for (int r = 0; r < w.m; ++r)
    for (int c = 0; c < w.m; ++c) out[static_cast<std::size_t>(r) * w.m + c] = z(w.row_offset + r, w.col_offset + c);
}

std::vector<cplx> extract_window(const ComplexField& z, const Window& w) {
  std::vector<cplx> out(static_cast<std::size_t>(w.m) * w.m);
  extract_window(z, w, out);
  return out;
}

void embed_window_add(std::span<const cplx> u, const Window& w, ComplexField& accum) {
  check_window(w, accum.n());
  if (u.size() != static_cast<std::size_t>(w.m) * w.m)
    throw std::invalid_argument("embed_window: input is not m*m");
  for (int r = 0; r < w.m; ++r)
    for (int c = 0; c < w.m; ++c) accum(w.row_offset + r, w.col_offset + c) += u[static_cast<std::size_t>(r) * w.m + c];
}

ComplexField embed_window_adjoint(std::span<const cplx> u, const Window& w, int n) {
  ComplexField out(n);
  embed_window_add(u, w, out);
  return out;
}

// ---------------------------------------------------------------------------
// DFT

namespace {

struct PlanPair {
  fftw_plan fwd;
  fftw_plan bwd;
};

std::mutex& plan_mutex() {
  static std::mutex mu;
  return mu;
}

PlanPair plans_for(int m) {
  static std::map<int, PlanPair> cache;
  std::lock_guard<std::mutex> lock(plan_mutex());
  auto it = cache.find(m);
  if (it != cache.end()) return it->second;
  // ESTIMATE keeps plan selection (and therefore rounding) identical across runs.
  std::vector<cplx> a(static_cast<std::size_t>(m) * m), b(a.size());
  auto* in = reinterpret_cast<fftw_complex*>(a.data());
  auto* out = reinterpret_cast<fftw_complex*>(b.data());
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  PlanPair p{fftw_plan_dft_2d(m, m, in, out, FFTW_FORWARD, flags),
             fftw_plan_dft_2d(m, m, in, out, FFTW_BACKWARD, flags)};
  if (p.fwd == nullptr || p.bwd == nullptr) throw std::runtime_error("FFTW plan creation failed");
  cache.emplace(m, p);
  return p;
}

void execute(void* plan, int m, std::span<const cplx> in, std::span<cplx> out) {
  const auto len = static_cast<std::size_t>(m) * m;
  if (in.size() != len || out.size() != len) throw std::invalid_argument("Dft2d: buffer is not m*m");
  if (in.data() == out.data()) throw std::invalid_argument("Dft2d: in-place transform not supported");
  fftw_execute_dft(static_cast<fftw_plan>(plan),
                   reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in.data())),
                   reinterpret_cast<fftw_complex*>(out.data()));
}

}  // namespace

Dft2d::Dft2d(int m) : m_(m) {
  if (m <= 0) throw std::invalid_argument("Dft2d: size must be positive");
  PlanPair p = plans_for(m);
  fwd_ = p.fwd;
  bwd_ = p.bwd;
}

void Dft2d::forward(std::span<const cplx> in, std::span<cplx> out) const { execute(fwd_, m_, in, out); }

void Dft2d::adjoint(std::span<const cplx> in, std::span<cplx> out) const { execute(bwd_, m_, in, out); }

void Dft2d::inverse(std::span<const cplx> in, std::span<cplx> out) const {
  execute(bwd_, m_, in, out);
  const double scale = 1.0 / (static_cast<double>(m_) * m_);
  for (auto& v : out) v *= scale;
}

// ---------------------------------------------------------------------------
// Convolution

RealField center_kernel(const RealField& small, int n) {
  const int m = small.n();
  if (m > n) throw std::invalid_argument("center_kernel: kernel larger than field");
  RealField out(n);
  const int c = m / 2;
  for (int r = 0; r < m; ++r)
    for (int q = 0; q < m; ++q) out(((r - c) % n + n) % n, ((q - c) % n + n) % n) += small(r, q);
  return out;
}

CircularConvolver::CircularConvolver(const RealField& kernel)
    : n_(kernel.n()), dft_(kernel.n()), spectrum_(kernel.size()) {
  std::vector<cplx> k(kernel.values().begin(), kernel.values().end());
  dft_.forward(k, spectrum_);
}

RealField CircularConvolver::filter(const RealField& map, bool conjugate) const {
  if (map.n() != n_) throw std::invalid_argument("circular convolution: kernel and map sides differ");
  std::vector<cplx> a(map.values().begin(), map.values().end()), b(a.size());
  dft_.forward(a, b);
  for (std::size_t k = 0; k < b.size(); ++k) b[k] *= conjugate ? std::conj(spectrum_[k]) : spectrum_[k];
  dft_.inverse(b, a);
  RealField out(n_);
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k].real();
  return out;
}

RealField CircularConvolver::apply(const RealField& map) const { return filter(map, false); }

RealField CircularConvolver::apply_adjoint(const RealField& map) const { return filter(map, true); }

std::vector<double> CircularConvolver::gram_spectrum() const {
  std::vector<double> out(spectrum_.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::norm(spectrum_[k]);
  return out;
}

RealField circ_convolve(const RealField& kernel, const RealField& map) {
  if (kernel.n() != map.n()) throw std::invalid_argument("circ_convolve: kernel and map sides differ");
  return CircularConvolver(kernel).apply(map);
}

RealField circ_correlate(const RealField& kernel, const RealField& map) {
  if (kernel.n() != map.n()) throw std::invalid_argument("circ_correlate: kernel and map sides differ");
  return CircularConvolver(kernel).apply_adjoint(map);
}

Eigen::MatrixXd psf_matrix(const RealField& kernel) {
  const int n = kernel.n();
  if (n > kMaxDenseSide)
    throw std::length_error("psf_matrix: n=" + std::to_string(n) + " exceeds the analysis-scale limit of " +
                            std::to_string(kMaxDenseSide) + " (analysis-scale only)");
  const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
  Eigen::MatrixXd out(nn, nn);
  // Entry (p, q) = kernel[(p - q) mod n] in both axes; filled directly so the
  // matrix does not inherit FFT rounding.
  for (int pr = 0; pr < n; ++pr)
    for (int pc = 0; pc < n; ++pc)
      for (int qr = 0; qr < n; ++qr)
        for (int qc = 0; qc < n; ++qc)
          out(pr * n + pc, qr * n + qc) = kernel(((pr - qr) % n + n) % n, ((pc - qc) % n + n) % n);
  return out;
}

}  // namespace ptyxrf
