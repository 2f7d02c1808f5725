#include "ptyxrf/hesslab.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>

#include <lapacke.h>

#include "ptyxrf/dataset_io.hpp"

namespace ptyxrf {

std::string to_string(HessianKind k) { return k == HessianKind::ptyc ? "ptyc" : "joint"; }

namespace {

void check_dim(Eigen::Index dim) {
  if (dim > kMaxDenseHessianDim)
    throw std::length_error("dense Hessian of dimension " + std::to_string(dim) + " exceeds the limit of " +
                            std::to_string(kMaxDenseHessianDim));
}

}  // namespace

Eigen::MatrixXd ptyc_hessian_xy(const ComplexField& z, const PtychoModel& ptyc) {
  const int n = ptyc.n();
  if (z.n() != n) throw std::invalid_argument("ptyc_hessian_xy: object size mismatch");
  const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
  check_dim(2 * nn);
  const auto lin = ptyc.linearize(z);
  Eigen::MatrixXd H(2 * nn, 2 * nn);
  const auto cols = static_cast<std::ptrdiff_t>(2 * nn);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t c = 0; c < cols; ++c) {
    ComplexField dz(n);
    const auto k = static_cast<std::size_t>(c % nn);
    dz[k] = c < nn ? cplx(1.0, 0.0) : cplx(0.0, 1.0);
    const ComplexField h = ptyc.hessian_apply(lin, dz);
    for (Eigen::Index i = 0; i < nn; ++i) {
      H(i, c) = h[static_cast<std::size_t>(i)].real();
      H(nn + i, c) = h[static_cast<std::size_t>(i)].imag();
    }
  }
  return H;
}

Eigen::MatrixXd fluor_hessian_block(const FluorModel& fluor) {
  const int n = fluor.n();
  const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
  check_dim(nn);
  const double inv = 1.0 / fluor.n_elements();
  Eigen::MatrixXd H(nn, nn);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(nn); ++c) {
    RealField e(n);
    e[static_cast<std::size_t>(c)] = 1.0;
    const RealField h = fluor.psf().apply_adjoint(fluor.psf().apply(e));
    for (Eigen::Index i = 0; i < nn; ++i) H(i, c) = inv * h[static_cast<std::size_t>(i)];
  }
  return H;
}

HessianBundle assemble_hessian(const ReconState& state, const Problem& problem, double alpha, HessianKind kind) {
  const int n = state.n();
  if (n != problem.n()) throw std::invalid_argument("assemble_hessian: state size does not match problem");
  const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
  HessianBundle b;
  b.kind = kind;
  b.alpha = alpha;
  b.n = n;
  if (kind == HessianKind::ptyc) {
    b.n_elements = 1;
    b.matrix = ptyc_hessian_xy(state.z(), problem.ptyc);
    return b;
  }

  const int ne = state.n_elements();
  if (ne != problem.n_elements()) throw std::invalid_argument("assemble_hessian: state element count does not match problem");
  check_dim(nn * (1 + ne));
  b.n_elements = ne;
  Eigen::MatrixXd hxy = ptyc_hessian_xy(state.z(), problem.ptyc);
  Eigen::MatrixXd fl;
  if (alpha != 0.0) fl = fluor_hessian_block(problem.fluor);
  const auto& mu = state.mu;

  auto add_fluor = [&](Eigen::Ref<Eigen::MatrixXd> block) {
    if (alpha != 0.0) block += alpha * fl;
  };

  if (ne == 1) {
    const double m0 = mu[0];
    if (m0 != 1.0) {
      hxy.block(0, nn, nn, nn) *= m0;
      hxy.block(nn, 0, nn, nn) *= m0;
      hxy.block(nn, nn, nn, nn) *= m0 * m0;
    }
    add_fluor(hxy.block(nn, nn, nn, nn));
    b.matrix = std::move(hxy);
    return b;
  }

  b.matrix.resize(nn * (1 + ne), nn * (1 + ne));
  b.matrix.topLeftCorner(nn, nn) = hxy.topLeftCorner(nn, nn);
  for (int e = 0; e < ne; ++e) {
    const Eigen::Index oe = nn * (1 + e);
    const double me = mu[static_cast<std::size_t>(e)];
    b.matrix.block(0, oe, nn, nn) = me * hxy.block(0, nn, nn, nn);
    b.matrix.block(oe, 0, nn, nn) = me * hxy.block(nn, 0, nn, nn);
    for (int f = 0; f < ne; ++f) {
      const Eigen::Index of = nn * (1 + f);
      b.matrix.block(oe, of, nn, nn) = (me * mu[static_cast<std::size_t>(f)]) * hxy.block(nn, nn, nn, nn);
    }
    add_fluor(b.matrix.block(oe, oe, nn, nn));
  }
  return b;
}

Eigen::MatrixXd assemble_objective_hessian(const Objective& objective, const ReconState& state) {
  const Eigen::Index dim = static_cast<Eigen::Index>(state.x.size()) * (1 + state.n_elements());
  check_dim(dim);
  const auto curv = objective.curvature(state);
  Eigen::MatrixXd H(dim, dim);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(dim); ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
    e[c] = 1.0;
    H.col(c) = curv.apply(e);
  }
  return H;
}

// ---------------------------------------------------------------------------
// Eigen-decomposition

Eigen::VectorXd symmetric_eigenvalues(Eigen::MatrixXd&& matrix) {
  if (matrix.rows() != matrix.cols()) throw std::invalid_argument("symmetric_eigenvalues: matrix is not square");
  const auto n = static_cast<lapack_int>(matrix.rows());
  Eigen::VectorXd w(n);
  if (n == 0) return w;
  const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'N', 'L', n, matrix.data(), n, w.data());
  if (info != 0) throw std::runtime_error("dsyevd failed to converge (info " + std::to_string(info) + ")");
  return w.reverse().eval();
}

Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& matrix) {
  Eigen::MatrixXd copy = matrix;
  return symmetric_eigenvalues(std::move(copy));
}

EigenPairs symmetric_eigenpairs(const Eigen::MatrixXd& matrix, int first_rank, int last_rank) {
  if (matrix.rows() != matrix.cols()) throw std::invalid_argument("symmetric_eigenpairs: matrix is not square");
  const auto n = static_cast<lapack_int>(matrix.rows());
  if (first_rank < 1 || last_rank < first_rank || last_rank > n)
    throw std::out_of_range("eigenpair ranks " + std::to_string(first_rank) + ".." + std::to_string(last_rank) +
                            " outside 1.." + std::to_string(n));
  // Descending rank r is ascending index n − r + 1.
  const lapack_int il = n - last_rank + 1;
  const lapack_int iu = n - first_rank + 1;
  Eigen::MatrixXd a = matrix;
  const lapack_int count = iu - il + 1;
  Eigen::VectorXd w(n);
  Eigen::MatrixXd z(n, count);
  std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(count));
  lapack_int found = 0;
  const lapack_int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', n, a.data(), n, 0.0, 0.0, il, iu, 0.0,
                                         &found, w.data(), z.data(), n, isuppz.data());
  if (info != 0) throw std::runtime_error("dsyevr failed to converge (info " + std::to_string(info) + ")");
  if (found != count) throw std::runtime_error("dsyevr returned an unexpected number of eigenpairs");
  EigenPairs out;
  out.first_rank = first_rank;
  out.values = w.head(count).reverse();
  out.vectors = z.rowwise().reverse();
  return out;
}

Spectrum spectrum_from_eigenvalues(const Eigen::VectorXd& eigvals_desc, int bins) {
  if (eigvals_desc.size() == 0) throw std::invalid_argument("spectrum: empty eigenvalue list");
  if (bins < 1) throw std::invalid_argument("spectrum: need at least one histogram bin");
  Spectrum s;
  s.eigvals = eigvals_desc;
  const double lmax = eigvals_desc.maxCoeff();
  if (!(lmax > 0.0)) throw std::runtime_error("spectrum: largest eigenvalue is not positive");
  s.normalized = eigvals_desc / lmax;
  double lo = s.normalized.minCoeff();
  const double hi = 1.0;
  if (lo >= hi) lo = hi - 1.0;
  s.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) s.bin_edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
  s.bin_counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : s.normalized) {
    auto b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    ++s.bin_counts[static_cast<std::size_t>(b)];
  }
  return s;
}

Spectrum spectrum(HessianBundle& bundle, int bins) {
  if (bundle.eigvals.size() == 0) bundle.eigvals = symmetric_eigenvalues(bundle.matrix);
  return spectrum_from_eigenvalues(bundle.eigvals, bins);
}

double fraction_at_or_below(const Eigen::VectorXd& normalized, double threshold) {
  if (normalized.size() == 0) return 0.0;
  const auto hits = (normalized.array() <= threshold).count();
  return static_cast<double>(hits) / static_cast<double>(normalized.size());
}

int numerical_rank(const Eigen::VectorXd& eigvals, double tau) {
  int r = 0;
  for (double v : eigvals)
    if (std::abs(v) >= tau) ++r;
  return r;
}

// ---------------------------------------------------------------------------
// Rank tracking

std::vector<RankRow> rank_tracking(const Problem& problem, const ComplexField& z_true, const SolverConfig& base,
                                   std::vector<int> iterations, double tau) {
  if (iterations.empty()) throw std::invalid_argument("rank_tracking: empty iteration list");
  std::sort(iterations.begin(), iterations.end());
  iterations.erase(std::unique(iterations.begin(), iterations.end()), iterations.end());
  if (iterations.front() < 0) throw std::invalid_argument("rank_tracking: negative snapshot iteration");

  auto snapshots = [&](Mode mode) {
    SolverConfig cfg = base;
    cfg.mode = mode;
    cfg.max_iters = iterations.back();
    std::map<int, ReconState> snaps;
    reconstruct(problem, z_true, cfg, [&](int it, const ReconState& s) {
      if (std::binary_search(iterations.begin(), iterations.end(), it)) snaps[it] = s;
    });
    return snaps;
  };
  const auto ptyc_snaps = snapshots(Mode::ptyc);
  const auto joint_snaps = snapshots(Mode::joint);

  std::vector<RankRow> rows;
  for (int it : iterations) {
    RankRow row;
    row.iter = it;
    {
      HessianBundle b = assemble_hessian(ptyc_snaps.at(it), problem, 0.0, HessianKind::ptyc);
      row.r_ptyc = numerical_rank(symmetric_eigenvalues(std::move(b.matrix)), tau);
    }
    {
      const ReconState& s = joint_snaps.at(it);
      HessianBundle b = assemble_hessian(s, problem, s.alpha, HessianKind::joint);
      row.r_joint = numerical_rank(symmetric_eigenvalues(std::move(b.matrix)), tau);
    }
    row.delta = row.r_joint - row.r_ptyc;
    row.pct = row.r_ptyc > 0 ? 100.0 * row.delta / row.r_ptyc : 0.0;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Gradient perturbation probe

namespace {

std::pair<double, Eigen::VectorXd> top_pair(const HessianBundle& b) {
  if (b.first_rank == 1 && b.eigvecs.cols() > 0) {
    const double lambda = b.eigvals.size() > 0 ? b.eigvals[0] : b.eigvecs.col(0).dot(b.matrix * b.eigvecs.col(0));
    return {lambda, b.eigvecs.col(0)};
  }
  const auto p = symmetric_eigenpairs(b.matrix, 1, 1);
  return {p.values[0], p.vectors.col(0)};
}

}  // namespace

std::vector<PerturbRow> perturb_gradient_probe(const Problem& problem, const ReconState& ptyc_truth,
                                               const ReconState& joint_truth, const HessianBundle& ptyc_bundle,
                                               const HessianBundle& joint_bundle, const std::vector<double>& magnitudes) {
  const Objective ptyc_obj(problem, Mode::ptyc);
  const Objective joint_obj(problem, Mode::joint);
  const Eigen::VectorXd vp = top_pair(ptyc_bundle).second;
  const Eigen::VectorXd vj = top_pair(joint_bundle).second;
  const Eigen::VectorXd thp = pack(ptyc_truth);
  const Eigen::VectorXd thj = pack(joint_truth);
  if (thp.size() != vp.size() || thj.size() != vj.size())
    throw std::invalid_argument("perturb_gradient_probe: truth state does not match Hessian dimension");
  const double hvp_p = (ptyc_bundle.matrix * vp).norm();
  const double hvp_j = (joint_bundle.matrix * vj).norm();

  std::vector<PerturbRow> rows;
  for (double s : magnitudes) {
    PerturbRow r;
    r.magnitude = s;
    r.grad_ptyc = ptyc_obj.gradient(unpack(thp + s * vp, ptyc_truth)).gradient.norm();
    r.grad_joint = joint_obj.gradient(unpack(thj + s * vj, joint_truth)).gradient.norm();
    r.pred_ptyc = std::abs(s) * hvp_p;
    r.pred_joint = std::abs(s) * hvp_j;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Loss slices

std::pair<Eigen::VectorXd, Eigen::VectorXd> slice_directions(const Eigen::MatrixXd& hessian, const SliceSpec& spec) {
  if (spec.v1_index == spec.v2_index) throw std::invalid_argument("slice: v1_index and v2_index must differ");
  const int lo = std::min(spec.v1_index, spec.v2_index);
  const int hi = std::max(spec.v1_index, spec.v2_index);
  const auto pairs = symmetric_eigenpairs(hessian, lo, hi);
  Eigen::VectorXd v1 = pairs.vectors.col(spec.v1_index - lo);
  Eigen::VectorXd v2 = pairs.vectors.col(spec.v2_index - lo);
  if (std::abs(v1.norm() - 1.0) > 1e-10 || std::abs(v2.norm() - 1.0) > 1e-10 || std::abs(v1.dot(v2)) > 1e-10)
    throw std::runtime_error("slice: selected eigenvectors are not orthonormal to 1e-10");
  return {std::move(v1), std::move(v2)};
}

Eigen::VectorXd scale_direction(const Eigen::VectorXd& v, const Eigen::VectorXd& center) {
  const double vn = v.norm();
  if (vn == 0.0) throw std::invalid_argument("slice: zero direction");
  const double cn = center.norm();
  return cn > 0.0 ? Eigen::VectorXd(v * (cn / vn)) : Eigen::VectorXd(v / vn);
}

SliceResult loss_slice(const Objective& objective, const ReconState& center, const Eigen::VectorXd& v1,
                       const Eigen::VectorXd& v2, const SliceSpec& spec) {
  if (spec.v1_index == spec.v2_index) throw std::invalid_argument("slice: v1_index and v2_index must differ");
  if (spec.resolution < 2) throw std::invalid_argument("slice: resolution must be at least 2");
  if (!(spec.range > 0.0)) throw std::invalid_argument("slice: range must be positive");
  const Eigen::VectorXd theta = pack(center);
  if (v1.size() != theta.size() || v2.size() != theta.size())
    throw std::invalid_argument("slice: direction length does not match the parameter vector");
  const Eigen::VectorXd d1 = scale_direction(v1, theta);
  const Eigen::VectorXd d2 = scale_direction(v2, theta);

  const int res = spec.resolution;
  SliceResult out;
  out.coords.resize(static_cast<std::size_t>(res));
  for (int i = 0; i < res; ++i) out.coords[static_cast<std::size_t>(i)] = -spec.range + 2.0 * spec.range * i / (res - 1);
  out.values.resize(res, res);
  const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(res) * res;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t idx = 0; idx < total; ++idx) {
    const int i = static_cast<int>(idx / res);
    const int j = static_cast<int>(idx % res);
    const Eigen::VectorXd th = theta + out.coords[static_cast<std::size_t>(i)] * d1 + out.coords[static_cast<std::size_t>(j)] * d2;
    out.values(i, j) = objective.value(unpack(th, center));
  }
  out.f_max = out.values.maxCoeff();
  out.flat = out.f_max == 0.0;
  out.normalized = out.flat ? out.values : Eigen::MatrixXd(out.values / out.f_max);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

void write_spectrum_csv(std::ostream& out, const Spectrum& s) {
  out << "rank,eigenvalue,normalized\n";
  for (Eigen::Index i = 0; i < s.eigvals.size(); ++i)
    out << (i + 1) << ',' << format_double(s.eigvals[i]) << ',' << format_double(s.normalized[i]) << '\n';
}

void write_histogram_csv(std::ostream& out, const Spectrum& s) {
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < s.bin_counts.size(); ++b)
    out << format_double(s.bin_edges[b]) << ',' << format_double(s.bin_edges[b + 1]) << ',' << s.bin_counts[b] << '\n';
}

void write_rank_csv(std::ostream& out, const std::vector<RankRow>& rows) {
  out << "iter,r_ptyc,r_joint,delta,pct\n";
  for (const auto& r : rows)
    out << r.iter << ',' << r.r_ptyc << ',' << r.r_joint << ',' << r.delta << ',' << format_double(r.pct) << '\n';
}

void write_perturb_csv(std::ostream& out, const std::vector<PerturbRow>& rows) {
  out << "magnitude,grad_ptyc,pred_ptyc,grad_joint,pred_joint\n";
  for (const auto& r : rows)
    out << format_double(r.magnitude) << ',' << format_double(r.grad_ptyc) << ',' << format_double(r.pred_ptyc) << ','
        << format_double(r.grad_joint) << ',' << format_double(r.pred_joint) << '\n';
}

void write_slice_csv(std::ostream& out, const SliceResult& s, const SliceSpec& spec, const std::string& label) {
  out << "# label=" << label << " v1_index=" << spec.v1_index << " v2_index=" << spec.v2_index
      << " range=" << format_double(spec.range) << " resolution=" << spec.resolution
      << " f_max=" << format_double(s.f_max) << " flat=" << (s.flat ? 1 : 0) << '\n';
  for (Eigen::Index i = 0; i < s.normalized.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.normalized.cols(); ++j) {
      if (j) out << ',';
      out << format_double(s.normalized(i, j));
    }
    out << '\n';
  }
}

}  // namespace ptyxrf
