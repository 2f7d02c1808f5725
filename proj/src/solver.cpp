#include "ptyxrf/solver.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "ptyxrf/dataset_io.hpp"

namespace ptyxrf {

Mode parse_mode(const std::string& s) {
  if (s == "ptyc") return Mode::ptyc;
  if (s == "fluor") return Mode::fluor;
  if (s == "joint") return Mode::joint;
  throw std::invalid_argument("unknown mode '" + s + "' (expected ptyc, fluor or joint)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::ptyc: return "ptyc";
    case Mode::fluor: return "fluor";
    case Mode::joint: return "joint";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Packing

Eigen::VectorXd pack(const ReconState& s) {
  const Eigen::Index nn = static_cast<Eigen::Index>(s.x.size());
  Eigen::VectorXd v(nn * (1 + s.n_elements()));
  v.head(nn) = vec(s.x);
  for (int e = 0; e < s.n_elements(); ++e) v.segment(nn * (1 + e), nn) = vec(s.w[static_cast<std::size_t>(e)]);
  return v;
}

ReconState unpack(const Eigen::Ref<const Eigen::VectorXd>& theta, const ReconState& like) {
  const int n = like.n();
  const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
  if (theta.size() != nn * (1 + like.n_elements())) throw std::invalid_argument("unpack: parameter length mismatch");
  ReconState s;
  s.mu = like.mu;
  s.alpha = like.alpha;
  s.x = unvec(theta.head(nn), n);
  for (int e = 0; e < like.n_elements(); ++e) s.w.push_back(unvec(theta.segment(nn * (1 + e), nn), n));
  return s;
}

Eigen::VectorXd pack(const StateDirection& d) {
  const Eigen::Index nn = static_cast<Eigen::Index>(d.dx.size());
  Eigen::VectorXd v(nn * (1 + static_cast<Eigen::Index>(d.dw.size())));
  v.head(nn) = vec(d.dx);
  for (std::size_t e = 0; e < d.dw.size(); ++e) v.segment(nn * (1 + static_cast<Eigen::Index>(e)), nn) = vec(d.dw[e]);
  return v;
}

StateDirection unpack_direction(const Eigen::Ref<const Eigen::VectorXd>& v, int n, int n_elements) {
  const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
  if (v.size() != nn * (1 + n_elements)) throw std::invalid_argument("unpack_direction: length mismatch");
  StateDirection d;
  d.dx = unvec(v.head(nn), n);
  for (int e = 0; e < n_elements; ++e) d.dw.push_back(unvec(v.segment(nn * (1 + e), nn), n));
  return d;
}

// ---------------------------------------------------------------------------
// Objective

double Objective::value(const ReconState& s) const {
  switch (mode_) {
    case Mode::ptyc: return problem_->ptyc.loss(s.z());
    case Mode::fluor: return problem_->fluor.loss(s.w);
    case Mode::joint: {
      const double p = problem_->ptyc.loss(s.z());
      return s.alpha != 0.0 ? p + s.alpha * problem_->fluor.loss(s.w) : p;
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

Objective::Eval Objective::gradient(const ReconState& s) const {
  Eval ev;
  const Eigen::Index nn = static_cast<Eigen::Index>(s.x.size());
  ev.gradient = Eigen::VectorXd::Zero(nn * (1 + s.n_elements()));
  if (mode_ == Mode::fluor) {
    const auto g = problem_->fluor.gradient(s.w);
    for (std::size_t e = 0; e < g.size(); ++e) ev.gradient.segment(nn * (1 + static_cast<Eigen::Index>(e)), nn) = vec(g[e]);
    ev.value = problem_->fluor.loss(s.w);
    return ev;
  }
  if (mode_ == Mode::ptyc) {
    const auto pg = problem_->ptyc.gradient(s.z());
    ev.gradient.head(nn) = vec(pg.gx);
    const Eigen::VectorXd gy = vec(pg.gy);
    for (int e = 0; e < s.n_elements(); ++e) ev.gradient.segment(nn * (1 + e), nn) = s.mu[static_cast<std::size_t>(e)] * gy;
    ev.value = pg.loss;
    ev.clamp_count = pg.clamp_count;
    return ev;
  }
  const auto jg = grad_joint(s, *problem_);
  ev.gradient.head(nn) = vec(jg.gx);
  for (std::size_t e = 0; e < jg.gw.size(); ++e) ev.gradient.segment(nn * (1 + static_cast<Eigen::Index>(e)), nn) = vec(jg.gw[e]);
  ev.value = s.alpha != 0.0 ? jg.phi_ptyc + s.alpha * jg.phi_fluor : jg.phi_ptyc;
  ev.clamp_count = jg.clamp_count;
  return ev;
}

Objective::Curvature Objective::curvature(const ReconState& s) const {
  Curvature c;
  c.owner_ = this;
  c.state_ = s;
  if (mode_ == Mode::ptyc) c.state_.alpha = 0.0;
  if (mode_ != Mode::fluor) c.lin_ = problem_->ptyc.linearize(s.z());
  return c;
}

Eigen::VectorXd Objective::Curvature::apply(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  const int n = state_.n();
  const StateDirection dir = unpack_direction(v, n, state_.n_elements());
  if (owner_->mode_ == Mode::fluor) {
    StateDirection out;
    out.dx = RealField(n);
    out.dw = owner_->problem_->fluor.hessian_apply(dir.dw);
    return pack(out);
  }
  return pack(hvp_joint(state_, lin_, dir, *owner_->problem_));
}

// ---------------------------------------------------------------------------
// Truncated Newton

void SolverConfig::validate() const {
  if (max_iters < 0) throw std::invalid_argument("solver: max_iters must be nonnegative");
  if (cg_max_iters < 1) throw std::invalid_argument("solver: cg_max_iters must be at least 1");
  if (!(ls_c1 > 0.0 && ls_c1 <= 0.5)) throw std::invalid_argument("solver: ls_c1 must lie in (0, 0.5]");
  if (!(ls_shrink > 0.0 && ls_shrink < 1.0)) throw std::invalid_argument("solver: ls_shrink must lie in (0, 1)");
  if (ls_max_backtracks < 1) throw std::invalid_argument("solver: ls_max_backtracks must be at least 1");
  if (!(forcing_cap > 0.0 && forcing_cap < 1.0)) throw std::invalid_argument("solver: forcing_cap must lie in (0, 1)");
  if (!(forcing_exponent > 0.0)) throw std::invalid_argument("solver: forcing_exponent must be positive");
  if (!(alpha_scale > 0.0)) throw std::invalid_argument("solver: alpha_scale must be positive");
  if (alpha_override && !(*alpha_override >= 0.0)) throw std::invalid_argument("solver: alpha must be nonnegative");
  if (!(divergence_factor > 1.0)) throw std::invalid_argument("solver: divergence_factor must exceed 1");
}

StepResult truncated_newton_step(const ReconState& state, const Objective& objective, const SolverConfig& config) {
  StepResult res;
  const auto ev = objective.gradient(state);
  const Eigen::VectorXd& g = ev.gradient;
  if (!g.allFinite()) throw std::runtime_error("truncated Newton: non-finite gradient");
  res.objective_before = ev.value;
  res.grad_norm = g.norm();
  res.clamp_count = ev.clamp_count;

  Eigen::VectorXd p = Eigen::VectorXd::Zero(g.size());
  if (res.grad_norm > 0.0) {
    const auto curv = objective.curvature(state);
    const double tol = std::min(config.forcing_cap, std::pow(res.grad_norm, config.forcing_exponent)) * res.grad_norm;
    Eigen::VectorXd r = -g;
    Eigen::VectorXd d = r;
    double rr = r.squaredNorm();
    for (int k = 0; k < config.cg_max_iters; ++k) {
      const Eigen::VectorXd Hd = curv.apply(d);
      const double dHd = d.dot(Hd);
      if (dHd <= config.curvature_tol * d.squaredNorm()) {
        res.negative_curvature = true;
        if (k == 0) p = -g;
        break;
      }
      const double a = rr / dHd;
      p += a * d;
      r -= a * Hd;
      res.cg_iters = k + 1;
      const double rr_next = r.squaredNorm();
      if (std::sqrt(rr_next) <= tol) break;
      d = r + (rr_next / rr) * d;
      rr = rr_next;
    }
  }

  double slope = g.dot(p);
  if (res.grad_norm > 0.0 && !(slope < 0.0)) {
    p = -g;
    slope = -res.grad_norm * res.grad_norm;
  }
  res.direction_norm = p.norm();

  if (res.direction_norm == 0.0) {
    res.state = state;
    res.step_size = 1.0;
    res.objective_after = res.objective_before;
    return res;
  }

  const Eigen::VectorXd theta = pack(state);
  double t = 1.0;
  for (int b = 0; b < config.ls_max_backtracks; ++b) {
    ReconState trial = unpack(theta + t * p, state);
    const double f = objective.value(trial);
    if (f <= res.objective_before + config.ls_c1 * t * slope) {
      res.state = std::move(trial);
      res.step_size = t;
      res.objective_after = f;
      return res;
    }
    t *= config.ls_shrink;
  }
  res.state = state;
  res.step_size = 0.0;
  res.stalled = true;
  res.objective_after = res.objective_before;
  return res;
}

// ---------------------------------------------------------------------------
// Driver

namespace {
constexpr std::uint64_t kStreamInit = 0x696e6974;
}

ReconState initial_state(const Problem& problem, Mode mode, const SolverConfig& config) {
  const int n = problem.n();
  const auto nn = static_cast<std::size_t>(n) * n;
  ReconState s;
  s.x = RealField(n, config.init_x);
  const int ne = mode == Mode::ptyc ? 1 : problem.n_elements();
  s.mu = mode == Mode::ptyc ? std::vector<double>{1.0} : problem.mu;
  for (int e = 0; e < ne; ++e) {
    RealField w(n);
    for (std::size_t k = 0; k < nn; ++k) {
      CounterRng rng(config.seed, kStreamInit, static_cast<std::uint64_t>(e) * nn + k);
      w[k] = config.init_w + config.init_jitter * (2.0 * rng.uniform() - 1.0);
    }
    s.w.push_back(std::move(w));
  }
  switch (mode) {
    case Mode::ptyc: s.alpha = 0.0; break;
    case Mode::fluor: s.alpha = 1.0; break;
    case Mode::joint:
      s.alpha = config.alpha_override ? *config.alpha_override : select_alpha(s, problem, config.alpha_scale);
      break;
  }
  return s;
}

Reconstruction reconstruct_from(const Problem& problem, const ComplexField& z_true, const SolverConfig& config,
                                ReconState start, const IterateCallback& on_iterate) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  const Objective objective(problem, config.mode);
  const bool align = config.mode == Mode::ptyc;

  Reconstruction out;
  out.mode = config.mode;
  out.state = std::move(start);

  IterationRecord first;
  first.iter = 0;
  first.loss = evaluate(out.state, problem, z_true, align);
  first.objective = objective.value(out.state);
  first.wall_time = elapsed();
  out.records.push_back(first);
  if (on_iterate) on_iterate(0, out.state);

  for (int it = 1; it <= config.max_iters; ++it) {
    StepResult step = truncated_newton_step(out.state, objective, config);
    out.records.back().grad_norm = step.grad_norm;
    out.records.back().clamp_count = step.clamp_count;
    if (!std::isfinite(step.objective_after) ||
        step.objective_after > config.divergence_factor * out.records.front().objective) {
      std::ostringstream msg;
      msg << "reconstruction diverged at iteration " << it << ": objective " << step.objective_after
          << " vs initial " << out.records.front().objective;
      throw DivergenceError(msg.str());
    }
    out.state = std::move(step.state);
    IterationRecord rec;
    rec.iter = it;
    rec.loss = evaluate(out.state, problem, z_true, align);
    rec.objective = step.objective_after;
    rec.step_size = step.step_size;
    rec.cg_iters = step.cg_iters;
    rec.negative_curvature = step.negative_curvature;
    rec.stalled = step.stalled;
    rec.wall_time = elapsed();
    out.records.push_back(rec);
    if (on_iterate) on_iterate(it, out.state);
  }
  const auto final_eval = objective.gradient(out.state);
  out.records.back().grad_norm = final_eval.gradient.norm();
  out.records.back().clamp_count = final_eval.clamp_count;
  return out;
}

Reconstruction reconstruct(const Problem& problem, const ComplexField& z_true, const SolverConfig& config,
                           const IterateCallback& on_iterate) {
  config.validate();
  return reconstruct_from(problem, z_true, config, initial_state(problem, config.mode, config), on_iterate);
}

std::string trajectory_csv_header() {
  return "iter,phi_ptyc,phi_fluor,phi_joint,mse_complex,mse_imag,grad_norm,step_size,clamp_count";
}

void write_trajectory_csv(std::ostream& out, const std::vector<IterationRecord>& records) {
  out << trajectory_csv_header() << '\n';
  for (const auto& r : records) {
    out << r.iter << ',' << format_double(r.loss.phi_ptyc) << ',' << format_double(r.loss.phi_fluor) << ','
        << format_double(r.loss.phi_joint) << ',' << format_double(r.loss.mse_complex) << ','
        << format_double(r.loss.mse_imag) << ',' << format_double(r.grad_norm) << ',' << format_double(r.step_size)
        << ',' << r.clamp_count << '\n';
  }
}

}  // namespace ptyxrf
