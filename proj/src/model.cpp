#include "ptyxrf/model.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace ptyxrf {

ComplexField ReconState::z() const {
  const RealField y = link(w, mu);
  ComplexField out(x.n());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = cplx(x[k], y[k]);
  return out;
}

RealField link(const std::vector<RealField>& w, std::span<const double> mu) {
  if (w.empty()) throw std::invalid_argument("link: no elemental maps");
  if (w.size() != mu.size()) throw std::invalid_argument("link: map count does not match coefficient count");
  RealField y(w.front().n());
  for (std::size_t e = 0; e < w.size(); ++e) {
    if (w[e].n() != y.n()) throw std::invalid_argument("link: elemental maps differ in size");
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += mu[e] * w[e][k];
  }
  return y;
}

// ---------------------------------------------------------------------------
// Ptychography

PtychoModel::PtychoModel(Probe probe, ScanGeometry scan, std::span<const double> d)
    : probe_(std::move(probe)), scan_(std::move(scan)), dft_(probe_.m) {
  if (scan_.m != probe_.m) throw std::invalid_argument("PtychoModel: scan window size differs from probe size");
  const auto mm = static_cast<std::size_t>(probe_.m) * probe_.m;
  if (d.size() != mm * scan_.windows.size()) throw std::invalid_argument("PtychoModel: data size is not m*m*N");
  amplitude_.resize(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (!(d[k] >= 0.0)) throw std::invalid_argument("PtychoModel: diffraction data must be nonnegative and finite");
    amplitude_[k] = std::sqrt(d[k]);
  }
}

std::vector<std::vector<double>> PtychoModel::residual(const ComplexField& z) const {
  if (z.n() != n()) throw std::invalid_argument("ptyc residual: object size mismatch");
  const auto mm = static_cast<std::size_t>(m()) * m();
  std::vector<std::vector<double>> out(scan_.windows.size(), std::vector<double>(mm));
  const auto count = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < count; ++j) {
    std::vector<cplx> patch(mm), spec(mm);
    extract_window(z, scan_.windows[static_cast<std::size_t>(j)], patch);
    for (std::size_t k = 0; k < mm; ++k) patch[k] *= probe_.data[k];
    dft_.forward(patch, spec);
    const double* s = amplitude_.data() + static_cast<std::size_t>(j) * mm;
    for (std::size_t k = 0; k < mm; ++k) out[static_cast<std::size_t>(j)][k] = std::abs(spec[k]) - s[k];
  }
  return out;
}

double PtychoModel::loss(const ComplexField& z) const {
  const auto r = residual(z);
  double total = 0.0;
  for (const auto& rj : r) total += std::inner_product(rj.begin(), rj.end(), rj.begin(), 0.0);
  return total / (2.0 * positions());
}

PtychoModel::Gradient PtychoModel::gradient(const ComplexField& z) const {
  if (z.n() != n()) throw std::invalid_argument("ptyc gradient: object size mismatch");
  const auto mm = static_cast<std::size_t>(m()) * m();
  const auto count = static_cast<std::ptrdiff_t>(scan_.windows.size());
  std::vector<std::vector<cplx>> local(scan_.windows.size(), std::vector<cplx>(mm));
  std::vector<double> partial_loss(scan_.windows.size(), 0.0);
  std::vector<int> partial_clamp(scan_.windows.size(), 0);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < count; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    std::vector<cplx> patch(mm), spec(mm);
    extract_window(z, scan_.windows[ju], patch);
    for (std::size_t k = 0; k < mm; ++k) patch[k] *= probe_.data[k];
    dft_.forward(patch, spec);
    const double* s = amplitude_.data() + ju * mm;
    double acc = 0.0;
    int clamps = 0;
    for (std::size_t k = 0; k < mm; ++k) {
      const double mag = std::abs(spec[k]);
      if (mag < kAmplitudeFloor) ++clamps;
      const double r = mag - s[k];
      acc += r * r;
      spec[k] *= r / std::max(mag, kAmplitudeFloor);
    }
    dft_.adjoint(spec, patch);
    for (std::size_t k = 0; k < mm; ++k) local[ju][k] = std::conj(probe_.data[k]) * patch[k];
    partial_loss[ju] = acc;
    partial_clamp[ju] = clamps;
  }

  // Fixed-order accumulation keeps results independent of the thread count.
  ComplexField g(n());
  for (std::size_t j = 0; j < local.size(); ++j) embed_window_add(local[j], scan_.windows[j], g);
  const double inv_n = 1.0 / positions();
  Gradient out{RealField(n()), RealField(n()), 0.0, 0};
  for (std::size_t k = 0; k < g.size(); ++k) {
    out.gx[k] = g[k].real() * inv_n;
    out.gy[k] = g[k].imag() * inv_n;
  }
  out.loss = std::accumulate(partial_loss.begin(), partial_loss.end(), 0.0) * 0.5 * inv_n;
  out.clamp_count = std::accumulate(partial_clamp.begin(), partial_clamp.end(), 0);
  return out;
}

// ---------------------------------------------------------------------------
// Fluorescence

FluorModel::FluorModel(const Probe& probe, int n, std::vector<RealField> D)
    : kernel_(center_kernel(RealField(probe.m, probe.intensity), n)), psf_(kernel_), D_(std::move(D)) {
  if (D_.empty()) throw std::invalid_argument("FluorModel: need at least one fluorescence map");
  for (const auto& De : D_)
    if (De.n() != n) throw std::invalid_argument("FluorModel: fluorescence map size mismatch");
}

std::vector<RealField> FluorModel::residual(const std::vector<RealField>& w) const {
  if (w.size() != D_.size()) throw std::invalid_argument("fluor residual: element count mismatch");
  std::vector<RealField> out;
  out.reserve(w.size());
  for (std::size_t e = 0; e < w.size(); ++e) {
    RealField r = psf_.apply(w[e]);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] -= D_[e][k];
    out.push_back(std::move(r));
  }
  return out;
}

double FluorModel::loss(const std::vector<RealField>& w) const {
  double total = 0.0;
  for (const auto& r : residual(w)) total += std::inner_product(r.values().begin(), r.values().end(), r.values().begin(), 0.0);
  return total / (2.0 * n_elements());
}

std::vector<RealField> FluorModel::gradient(const std::vector<RealField>& w) const {
  auto r = residual(w);
  const double inv = 1.0 / n_elements();
  for (auto& re : r) {
    re = psf_.apply_adjoint(re);
    for (auto& v : re.values()) v *= inv;
  }
  return r;
}

std::vector<RealField> FluorModel::hessian_apply(const std::vector<RealField>& dw) const {
  if (dw.size() != D_.size()) throw std::invalid_argument("fluor hessian: element count mismatch");
  const double inv = 1.0 / n_elements();
  std::vector<RealField> out;
  out.reserve(dw.size());
  for (const auto& d : dw) {
    RealField h = psf_.apply_adjoint(psf_.apply(d));
    for (auto& v : h.values()) v *= inv;
    out.push_back(std::move(h));
  }
  return out;
}

// ---------------------------------------------------------------------------

Problem Problem::from_dataset(const Dataset& ds) {
  std::vector<RealField> D;
  for (int e = 0; e < ds.n_elements; ++e) D.push_back(ds.fluor_map(e));
  return Problem{PtychoModel(ds.probe, ds.scan, ds.d), FluorModel(ds.probe, ds.n, std::move(D)), ds.mu};
}

std::vector<std::vector<double>> ptyc_residual(const ComplexField& z, const Probe& probe, const ScanGeometry& scan,
                                               std::span<const double> d) {
  return PtychoModel(probe, scan, d).residual(z);
}

std::vector<RealField> fluor_residual(const std::vector<RealField>& w, const Probe& probe,
                                      const std::vector<RealField>& D) {
  if (w.empty() || D.empty()) throw std::invalid_argument("fluor_residual: empty input");
  return FluorModel(probe, D.front().n(), D).residual(w);
}

PtychoModel::Gradient grad_ptyc(const ComplexField& z, const Probe& probe, const ScanGeometry& scan,
                                std::span<const double> d) {
  return PtychoModel(probe, scan, d).gradient(z);
}

JointGradient grad_joint(const ReconState& state, const Problem& problem) {
  if (state.n_elements() != problem.n_elements())
    throw std::invalid_argument("grad_joint: state and problem element counts differ");
  const auto pg = problem.ptyc.gradient(state.z());
  JointGradient out;
  out.gx = pg.gx;
  out.phi_ptyc = pg.loss;
  out.clamp_count = pg.clamp_count;

  const auto r = problem.fluor.residual(state.w);
  double total = 0.0;
  for (const auto& re : r) total += std::inner_product(re.values().begin(), re.values().end(), re.values().begin(), 0.0);
  const double inv_ne = 1.0 / problem.n_elements();
  out.phi_fluor = 0.5 * total * inv_ne;

  for (int e = 0; e < state.n_elements(); ++e) {
    const auto eu = static_cast<std::size_t>(e);
    RealField g(state.n());
    const double mu = state.mu[eu];
    if (state.alpha != 0.0) {
      const RealField back = problem.fluor.psf().apply_adjoint(r[eu]);
      const double weight = state.alpha * inv_ne;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = mu * pg.gy[k] + weight * back[k];
    } else {
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = mu * pg.gy[k];
    }
    out.gw.push_back(std::move(g));
  }
  return out;
}

namespace {

double sum_squares(const RealField& f) {
  return std::inner_product(f.values().begin(), f.values().end(), f.values().begin(), 0.0);
}

}  // namespace

double select_alpha(const ReconState& state0, const Problem& problem, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("select_alpha: scale must be positive");
  const auto pg = problem.ptyc.gradient(state0.z());
  const double ptyc_norm = std::sqrt(sum_squares(pg.gx) + sum_squares(pg.gy));
  double fluor_sq = 0.0;
  for (const auto& g : problem.fluor.gradient(state0.w)) fluor_sq += sum_squares(g);
  const double fluor_norm = std::sqrt(fluor_sq);
  if (!(fluor_norm > 0.0))
    throw std::runtime_error("select_alpha: fluorescence gradient vanishes at the initial point; "
                             "perturb w0 away from the data-consistent maps");
  return scale * ptyc_norm / fluor_norm;
}

double optimal_phase(const ComplexField& z, const ComplexField& z_ref) {
  cplx c{0.0, 0.0};
  for (std::size_t k = 0; k < z.size(); ++k) c += std::conj(z[k]) * z_ref[k];
  return std::arg(c);
}

LossReport evaluate(const ReconState& state, const Problem& problem, const ComplexField& z_true, bool gauge_align) {
  LossReport rep;
  ComplexField z = state.z();
  rep.phi_ptyc = problem.ptyc.loss(z);
  rep.alpha = state.alpha;
  // A ptychography-only state carries y directly as its single map; the
  // fluorescence loss is only defined when its maps match the data's elements.
  if (state.n_elements() == problem.n_elements() && state.mu == problem.mu) {
    rep.phi_fluor = problem.fluor.loss(state.w);
    rep.phi_joint = rep.phi_ptyc + state.alpha * rep.phi_fluor;
  } else {
    rep.phi_fluor = std::numeric_limits<double>::quiet_NaN();
    rep.phi_joint = rep.phi_ptyc;
  }
  if (gauge_align) {
    const cplx rot = std::polar(1.0, optimal_phase(z, z_true));
    for (auto& v : z.values()) v *= rot;
    rep.gauge_aligned = true;
  }
  double se = 0.0, se_imag = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    se += std::norm(z[k] - z_true[k]);
    const double di = z[k].imag() - z_true[k].imag();
    se_imag += di * di;
  }
  const double inv = 1.0 / static_cast<double>(z.size());
  rep.mse_complex = se * inv;
  rep.mse_imag = se_imag * inv;
  return rep;
}

}  // namespace ptyxrf
