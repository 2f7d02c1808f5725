#include "ptyxrf/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <omp.h>

#include "ptyxrf/dataset_io.hpp"

namespace ptyxrf {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

int apply_thread_env() {
  const char* v = std::getenv("PTYXRF_THREADS");
  if (!v || !*v) return 0;
  char* end = nullptr;
  const long t = std::strtol(v, &end, 10);
  if (*end != '\0' || t < 1) throw ConfigError({std::string("PTYXRF_THREADS must be a positive integer, got '") + v + "'"});
  omp_set_num_threads(static_cast<int>(t));
  return static_cast<int>(t);
}

Dataset simulate_dataset(const RunConfig& cfg, double overlap) {
  PhantomOptions po;
  po.kind = cfg.phantom_kind;
  po.n = cfg.n;
  po.n_elements = cfg.n_elements;
  po.seed = cfg.phantom_seed;
  po.mu = cfg.mu;
  po.magnitude_image = cfg.magnitude_image;
  po.phase_image = cfg.phase_image;
  const Phantom ph = make_phantom(po);
  const Probe probe = make_probe(cfg.m, cfg.probe);
  const ScanGeometry scan = make_scan(cfg.n, cfg.m, overlap);
  return generate_dataset(ph, probe, cfg.probe, scan, cfg.noise, cfg.noise_seed);
}

Dataset obtain_dataset(const RunConfig& cfg) {
  if (!cfg.dataset_dir.empty()) return load_dataset(cfg.dataset_dir);
  return simulate_dataset(cfg, cfg.overlap);
}

ReconState truth_state(const Dataset& ds, Mode mode, double alpha) {
  ReconState s;
  s.x = RealField(ds.n);
  RealField y(ds.n);
  for (std::size_t k = 0; k < s.x.size(); ++k) {
    s.x[k] = ds.z_true[k].real();
    y[k] = ds.z_true[k].imag();
  }
  if (mode == Mode::ptyc) {
    s.w = {y};
    s.mu = {1.0};
    s.alpha = 0.0;
  } else {
    s.w = ds.w_true;
    s.mu = ds.mu;
    s.alpha = alpha;
  }
  return s;
}

void save_state(const ReconState& s, const fs::path& dir) {
  fs::create_directories(dir);
  pt::ptree meta;
  meta.put("format.version", kStateFormat);
  meta.put("state.n", s.n());
  meta.put("state.elements", s.n_elements());
  meta.put("state.mu", format_list(s.mu));
  meta.put("state.alpha", format_double(s.alpha));
  write_meta(dir / "meta", meta);
  write_f64(dir / "x.bin", s.x.span());
  std::vector<double> w;
  for (const auto& we : s.w) w.insert(w.end(), we.values().begin(), we.values().end());
  write_f64(dir / "w.bin", w);
}

ReconState load_state(const fs::path& dir) {
  const auto meta = read_meta(dir / "meta");
  if (meta.get<std::string>("format.version", "") != kStateFormat)
    throw std::runtime_error(dir.string() + ": not a " + std::string(kStateFormat) + " directory");
  ReconState s;
  const int n = meta.get<int>("state.n");
  const int ne = meta.get<int>("state.elements");
  s.mu = parse_list(meta.get<std::string>("state.mu"));
  s.alpha = std::stod(meta.get<std::string>("state.alpha"));
  const auto nn = static_cast<std::size_t>(n) * n;
  s.x = RealField(n, read_f64(dir / "x.bin", nn));
  const auto w = read_f64(dir / "w.bin", nn * static_cast<std::size_t>(ne));
  for (int e = 0; e < ne; ++e)
    s.w.emplace_back(n, std::vector<double>(w.begin() + static_cast<std::ptrdiff_t>(e * nn),
                                            w.begin() + static_cast<std::ptrdiff_t>((e + 1) * nn)));
  return s;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double joint_alpha(const Problem& problem, const RunConfig& cfg) {
  if (cfg.solver.alpha_override) return *cfg.solver.alpha_override;
  return initial_state(problem, Mode::joint, cfg.solver).alpha;
}

/// States at which the dense analyses are evaluated.
std::pair<ReconState, ReconState> analysis_states(const Dataset& ds, const Problem& problem, const RunConfig& cfg) {
  const double alpha = joint_alpha(problem, cfg);
  if (cfg.analysis_point == AnalysisPoint::truth)
    return {truth_state(ds, Mode::ptyc), truth_state(ds, Mode::joint, alpha)};
  SolverConfig sc = cfg.solver;
  sc.alpha_override = alpha;
  return {initial_state(problem, Mode::ptyc, sc), initial_state(problem, Mode::joint, sc)};
}

Reconstruction run_mode(const Problem& problem, const Dataset& ds, const RunConfig& cfg, Mode mode,
                        const fs::path& dir) {
  SolverConfig sc = cfg.solver;
  sc.mode = mode;
  Reconstruction rec = reconstruct(problem, ds.z_true, sc);
  auto out = open_out(dir / ("trajectory_" + to_string(mode) + ".csv"));
  write_trajectory_csv(out, rec.records);
  save_state(rec.state, dir / ("state_" + to_string(mode)));
  return rec;
}

std::string final_summary(const Reconstruction& rec) {
  const auto& l = rec.records.back().loss;
  std::ostringstream s;
  s << to_string(rec.mode) << ": iters=" << rec.records.back().iter << " phi_ptyc=" << fmt("%.6e", l.phi_ptyc)
    << " phi_fluor=" << fmt("%.6e", l.phi_fluor) << " mse_complex=" << fmt("%.6e", l.mse_complex)
    << " mse_imag=" << fmt("%.6e", l.mse_imag);
  return s.str();
}

std::string run_simulate(const RunConfig& cfg) {
  const Dataset ds = simulate_dataset(cfg, cfg.overlap);
  save_dataset(ds, cfg.output_dir / "dataset");
  std::ostringstream s;
  s << "dataset: n=" << ds.n << " m=" << ds.m << " N=" << ds.positions() << " elements=" << ds.n_elements
    << " overlap=" << fmt("%.4f", ds.scan.overlap_ratio) << " noise_ptyc=" << fmt("%.3f", ds.noise_level_ptyc_pct)
    << "% noise_fluor=" << fmt("%.3f", ds.noise_level_fluor_pct) << "%";
  return s.str();
}

std::string run_reconstruct(const RunConfig& cfg) {
  const Dataset ds = obtain_dataset(cfg);
  if (cfg.dataset_dir.empty()) save_dataset(ds, cfg.output_dir / "dataset");
  const Problem problem = Problem::from_dataset(ds);
  return final_summary(run_mode(problem, ds, cfg, cfg.solver.mode, cfg.output_dir));
}

std::string run_spectrum(const RunConfig& cfg) {
  const Dataset ds = obtain_dataset(cfg);
  const Problem problem = Problem::from_dataset(ds);
  const auto [sp, sj] = analysis_states(ds, problem, cfg);
  std::ostringstream s;
  for (const auto& [state, kind] : {std::pair{sp, HessianKind::ptyc}, std::pair{sj, HessianKind::joint}}) {
    HessianBundle b = assemble_hessian(state, problem, state.alpha, kind);
    const Eigen::Index dim = b.matrix.rows();
    b.eigvals = symmetric_eigenvalues(std::move(b.matrix));
    const Spectrum sp_ = spectrum_from_eigenvalues(b.eigvals, cfg.bins);
    auto o1 = open_out(cfg.output_dir / ("spectrum_" + to_string(kind) + ".csv"));
    write_spectrum_csv(o1, sp_);
    auto o2 = open_out(cfg.output_dir / ("histogram_" + to_string(kind) + ".csv"));
    write_histogram_csv(o2, sp_);
    s << (kind == HessianKind::ptyc ? "" : " ") << to_string(kind) << ": dim=" << dim
      << " lambda_max=" << fmt("%.6e", sp_.eigvals[0])
      << " frac<=0.01=" << fmt("%.4f", fraction_at_or_below(sp_.normalized, 0.01))
      << " rank=" << numerical_rank(sp_.eigvals, cfg.tau);
  }
  return s.str();
}

std::string run_rank_track(const RunConfig& cfg) {
  const Dataset ds = obtain_dataset(cfg);
  const Problem problem = Problem::from_dataset(ds);
  const auto rows = rank_tracking(problem, ds.z_true, cfg.solver, cfg.rank_iterations, cfg.tau);
  auto out = open_out(cfg.output_dir / "rank.csv");
  write_rank_csv(out, rows);
  std::ostringstream s;
  s << "rank:";
  for (const auto& r : rows) s << " " << r.iter << ":" << r.r_ptyc << "/" << r.r_joint;
  return s.str();
}

std::string run_slice(const RunConfig& cfg) {
  const Dataset ds = obtain_dataset(cfg);
  const Problem problem = Problem::from_dataset(ds);
  const auto [sp, sj] = analysis_states(ds, problem, cfg);
  const Mode mode = cfg.slice_objective;
  const ReconState& center = mode == Mode::ptyc ? sp : sj;
  const Objective objective(problem, mode);
  Eigen::MatrixXd H;
  if (mode == Mode::ptyc) H = assemble_hessian(center, problem, 0.0, HessianKind::ptyc).matrix;
  else if (mode == Mode::joint) H = assemble_hessian(center, problem, center.alpha, HessianKind::joint).matrix;
  else H = assemble_objective_hessian(objective, center);
  const auto [v1, v2] = slice_directions(H, cfg.slice);
  H.resize(0, 0);
  const SliceResult r = loss_slice(objective, center, v1, v2, cfg.slice);
  auto out = open_out(cfg.output_dir / ("slice_" + to_string(mode) + ".csv"));
  write_slice_csv(out, r, cfg.slice, to_string(mode));
  const int c = cfg.slice.resolution / 2;
  std::ostringstream s;
  s << "slice " << to_string(mode) << " (" << cfg.slice.v1_index << "," << cfg.slice.v2_index
    << "): f_max=" << fmt("%.6e", r.f_max) << " f_center=" << fmt("%.6e", r.values(c, c))
    << (r.flat ? " flat" : "");
  return s.str();
}

std::string run_perturb(const RunConfig& cfg) {
  const Dataset ds = obtain_dataset(cfg);
  const Problem problem = Problem::from_dataset(ds);
  const double alpha = joint_alpha(problem, cfg);
  const ReconState sp = truth_state(ds, Mode::ptyc);
  const ReconState sj = truth_state(ds, Mode::joint, alpha);
  const HessianBundle bp = assemble_hessian(sp, problem, 0.0, HessianKind::ptyc);
  const HessianBundle bj = assemble_hessian(sj, problem, alpha, HessianKind::joint);
  const auto mags = cfg.perturb_magnitudes.empty() ? default_perturb_magnitudes() : cfg.perturb_magnitudes;
  const auto rows = perturb_gradient_probe(problem, sp, sj, bp, bj, mags);
  auto out = open_out(cfg.output_dir / "perturb.csv");
  write_perturb_csv(out, rows);
  std::ostringstream s;
  s << "perturb: " << rows.size() << " magnitudes, alpha=" << fmt("%.6e", alpha);
  return s.str();
}

std::string run_sweep(const RunConfig& cfg) {
  std::ostringstream s;
  for (double overlap : cfg.sweep_overlaps) {
    const Dataset ds = simulate_dataset(cfg, overlap);
    const fs::path dir = cfg.output_dir / ("overlap_" + fmt("%.2f", overlap));
    fs::create_directories(dir);
    save_dataset(ds, dir / "dataset");
    const Problem problem = Problem::from_dataset(ds);
    s << (s.tellp() > 0 ? " | " : "") << "overlap " << fmt("%.2f", overlap) << ":";
    std::vector<fs::path> trajs;
    for (Mode mode : cfg.sweep_modes) {
      const auto rec = run_mode(problem, ds, cfg, mode, dir);
      trajs.push_back(dir / ("trajectory_" + to_string(mode) + ".csv"));
      s << " " << to_string(mode) << " mse_complex=" << fmt("%.4e", rec.records.back().loss.mse_complex);
    }
    if (trajs.size() == 2) {
      const auto r = compare(read_trajectory_csv(trajs[0]), read_trajectory_csv(trajs[1]));
      auto o1 = open_out(dir / "compare.csv");
      write_compare_csv(o1, r);
      auto o2 = open_out(dir / "verdict.txt");
      write_verdict(o2, r);
    }
  }
  return s.str();
}

}  // namespace

std::string run_experiment(const RunConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.output_dir);
  save_config(cfg.output_dir / "config.resolved.ini", cfg);
  std::string line;
  switch (cfg.experiment) {
    case Experiment::simulate: line = run_simulate(cfg); break;
    case Experiment::reconstruct: line = run_reconstruct(cfg); break;
    case Experiment::hessian_spectrum: line = run_spectrum(cfg); break;
    case Experiment::rank_track: line = run_rank_track(cfg); break;
    case Experiment::slice: line = run_slice(cfg); break;
    case Experiment::perturb_probe: line = run_perturb(cfg); break;
    case Experiment::sweep: line = run_sweep(cfg); break;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return line + " wall=" + fmt("%.2f", secs) + "s";
}

// ---------------------------------------------------------------------------
// Trajectory comparison

std::vector<TrajectoryRow> read_trajectory_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != trajectory_csv_header())
    throw std::runtime_error(path.string() + ": not a trajectory CSV (header mismatch)");
  std::vector<TrajectoryRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 9) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
    TrajectoryRow r;
    r.iter = std::stoi(f[0]);
    r.phi_ptyc = std::stod(f[1]);
    r.phi_fluor = std::stod(f[2]);
    r.phi_joint = std::stod(f[3]);
    r.mse_complex = std::stod(f[4]);
    r.mse_imag = std::stod(f[5]);
    r.grad_norm = std::stod(f[6]);
    r.step_size = std::stod(f[7]);
    r.clamp_count = std::stoi(f[8]);
    rows.push_back(r);
  }
  return rows;
}

namespace {

double delta(double a, double b) {
  if (a == b || (std::isnan(a) && std::isnan(b))) return 0.0;
  return b - a;
}

std::string lower(double a, double b) {
  if (a < b) return "a";
  if (b < a) return "b";
  return "tie";
}

}  // namespace

CompareResult compare(const std::vector<TrajectoryRow>& a, const std::vector<TrajectoryRow>& b) {
  CompareResult r;
  const std::size_t len = std::min(a.size(), b.size());
  if (a.size() != b.size()) {
    r.truncated = true;
    r.warning = "trajectory lengths differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                "); comparing the first " + std::to_string(len) + " rows";
  }
  for (std::size_t k = 0; k < len; ++k) {
    if (a[k].iter != b[k].iter) {
      r.truncated = true;
      r.warning = "iteration grids diverge at row " + std::to_string(k) + "; comparing the common prefix";
      break;
    }
    CompareRow c;
    c.iter = a[k].iter;
    c.d_phi_ptyc = delta(a[k].phi_ptyc, b[k].phi_ptyc);
    c.d_phi_fluor = delta(a[k].phi_fluor, b[k].phi_fluor);
    c.d_phi_joint = delta(a[k].phi_joint, b[k].phi_joint);
    c.d_mse_complex = delta(a[k].mse_complex, b[k].mse_complex);
    c.d_mse_imag = delta(a[k].mse_imag, b[k].mse_imag);
    r.rows.push_back(c);
  }
  if (r.rows.empty()) throw std::runtime_error("compare: no common iterations");
  const auto& fa = a[r.rows.size() - 1];
  const auto& fb = b[r.rows.size() - 1];
  r.lower_mse_complex = lower(fa.mse_complex, fb.mse_complex);
  r.lower_mse_imag = lower(fa.mse_imag, fb.mse_imag);
  r.lower_phi_ptyc = lower(fa.phi_ptyc, fb.phi_ptyc);
  return r;
}

void write_compare_csv(std::ostream& out, const CompareResult& r) {
  out << "iter,d_phi_ptyc,d_phi_fluor,d_phi_joint,d_mse_complex,d_mse_imag\n";
  for (const auto& c : r.rows)
    out << c.iter << ',' << format_double(c.d_phi_ptyc) << ',' << format_double(c.d_phi_fluor) << ','
        << format_double(c.d_phi_joint) << ',' << format_double(c.d_mse_complex) << ',' << format_double(c.d_mse_imag)
        << '\n';
}

void write_verdict(std::ostream& out, const CompareResult& r) {
  out << "final_iter = " << r.rows.back().iter << "\n"
      << "lower_mse_complex = " << r.lower_mse_complex << "\n"
      << "lower_mse_imag = " << r.lower_mse_imag << "\n"
      << "lower_phi_ptyc = " << r.lower_phi_ptyc << "\n";
  if (r.truncated) out << "warning = " << r.warning << "\n";
}

}  // namespace ptyxrf
