#include <algorithm>
#include <cmath>

#include "ptyxrf/model.hpp"
#include "ptyxrf/solver.hpp"

namespace ptyxrf {

PtychoModel::Linearization PtychoModel::linearize(const ComplexField& z) const {
  if (z.n() != n()) throw std::invalid_argument("linearize: object size mismatch");
  const auto mm = static_cast<std::size_t>(m()) * m();
  Linearization lin;
  lin.farfield.assign(scan_.windows.size(), std::vector<cplx>(mm));
  std::vector<int> clamps(scan_.windows.size(), 0);
  const auto count = static_cast<std::ptrdiff_t>(scan_.windows.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < count; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    std::vector<cplx> patch(mm);
    extract_window(z, scan_.windows[ju], patch);
    for (std::size_t k = 0; k < mm; ++k) patch[k] *= probe_.data[k];
    dft_.forward(patch, lin.farfield[ju]);
    for (const auto& v : lin.farfield[ju])
      if (std::abs(v) < kAmplitudeFloor) ++clamps[ju];
  }
  for (int c : clamps) lin.clamp_count += c;
  return lin;
}

// With u = F(P ⊙ z_j), s = √d_j and a = |u|, the gradient is
// P_j* F* (u − s·u/a); differentiating gives
//   dG = P_j* F* [ du·(1 − s/(2a)) + s·u²·conj(du)/(2a³) ].
ComplexField PtychoModel::hessian_apply(const Linearization& lin, const ComplexField& dz) const {
  if (dz.n() != n()) throw std::invalid_argument("hessian_apply: direction size mismatch");
  if (lin.farfield.size() != scan_.windows.size()) throw std::invalid_argument("hessian_apply: stale linearization");
  const auto mm = static_cast<std::size_t>(m()) * m();
  std::vector<std::vector<cplx>> local(scan_.windows.size(), std::vector<cplx>(mm));
  const auto count = static_cast<std::ptrdiff_t>(scan_.windows.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < count; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    std::vector<cplx> patch(mm), du(mm);
    extract_window(dz, scan_.windows[ju], patch);
    if (std::all_of(patch.begin(), patch.end(), [](cplx v) { return v == cplx(0.0, 0.0); })) continue;
    for (std::size_t k = 0; k < mm; ++k) patch[k] *= probe_.data[k];
    dft_.forward(patch, du);
    const auto& u = lin.farfield[ju];
    const double* s = amplitude_.data() + ju * mm;
    for (std::size_t k = 0; k < mm; ++k) {
      const double a = std::max(std::abs(u[k]), kAmplitudeFloor);
      const double sk = s[k];
      du[k] = du[k] * (1.0 - sk / (2.0 * a)) + (sk / (2.0 * a * a * a)) * (u[k] * u[k]) * std::conj(du[k]);
    }
    dft_.adjoint(du, patch);
    for (std::size_t k = 0; k < mm; ++k) local[ju][k] = std::conj(probe_.data[k]) * patch[k];
  }
  ComplexField out(n());
  for (std::size_t j = 0; j < local.size(); ++j) embed_window_add(local[j], scan_.windows[j], out);
  const double inv_n = 1.0 / positions();
  for (auto& v : out.values()) v *= inv_n;
  return out;
}

StateDirection hvp_joint(const ReconState& state, const PtychoModel::Linearization& lin, const StateDirection& dir,
                         const Problem& problem) {
  const int n = state.n();
  if (dir.dx.n() != n || dir.dw.size() != state.w.size())
    throw std::invalid_argument("hvp_joint: direction shape does not match state");
  const RealField dy = link(dir.dw, state.mu);
  ComplexField dz(n);
  for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = cplx(dir.dx[k], dy[k]);
  const ComplexField h = problem.ptyc.hessian_apply(lin, dz);

  StateDirection out;
  out.dx = RealField(n);
  for (std::size_t k = 0; k < h.size(); ++k) out.dx[k] = h[k].real();

  std::vector<RealField> fluor;
  if (state.alpha != 0.0) fluor = problem.fluor.hessian_apply(dir.dw);
  for (std::size_t e = 0; e < dir.dw.size(); ++e) {
    RealField he(n);
    const double mu = state.mu[e];
    if (state.alpha != 0.0) {
      for (std::size_t k = 0; k < he.size(); ++k) he[k] = mu * h[k].imag() + state.alpha * fluor[e][k];
    } else {
      for (std::size_t k = 0; k < he.size(); ++k) he[k] = mu * h[k].imag();
    }
    out.dw.push_back(std::move(he));
  }
  return out;
}

}  // namespace ptyxrf
