#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <omp.h>

#include "oracles.hpp"
#include "ptyxrf/solver.hpp"

using namespace ptyxrf;

namespace {

Eigen::VectorXd random_vector(Eigen::Index len, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(len);
  for (auto& x : v) x = g(rng);
  return v;
}

Dataset noiseless_dataset(int n, int m, double overlap, int n_elements, std::uint64_t seed, double noise = 0.0) {
  PhantomOptions o;
  o.n = n;
  o.n_elements = n_elements;
  o.seed = seed;
  return generate_dataset(make_phantom(o), make_probe(m), {}, make_scan(n, m, overlap), {noise, noise}, seed);
}

ReconState truth(const Dataset& ds, double alpha) {
  ReconState s;
  s.x = RealField(ds.n);
  for (std::size_t k = 0; k < s.x.size(); ++k) s.x[k] = ds.z_true[k].real();
  s.w = ds.w_true;
  s.mu = ds.mu;
  s.alpha = alpha;
  return s;
}

// State in single-map coordinates (μ = 1, y = w) as used by ptyc mode.
ReconState single_map(const ReconState& s) {
  ReconState out;
  out.x = s.x;
  out.w = {link(s.w, s.mu)};
  out.mu = {1.0};
  out.alpha = 0.0;
  return out;
}

double max_abs_diff(const ReconState& a, const ReconState& b) {
  return (pack(a) - pack(b)).cwiseAbs().maxCoeff();
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Hvp, MatchesFiniteDifferenceOfGradient) {
  std::mt19937_64 rng(1);
  for (Mode mode : {Mode::joint, Mode::ptyc, Mode::fluor}) {
    for (auto [n, ne, seed] : {std::tuple{8, 2, 101}, {12, 1, 102}, {6, 3, 103}}) {
      auto inst = oracle::random_instance(n, 4, ne, static_cast<std::uint64_t>(seed));
      const ReconState s = mode == Mode::ptyc ? single_map(inst.state) : inst.state;
      const Objective obj(inst.problem, mode);
      const auto curv = obj.curvature(s);
      const Eigen::VectorXd theta = pack(s);
      for (int t = 0; t < 3; ++t) {
        const Eigen::VectorXd v = random_vector(theta.size(), rng);
        const double h = 1e-5;
        const Eigen::VectorXd gp = obj.gradient(unpack(theta + h * v, s)).gradient;
        const Eigen::VectorXd gm = obj.gradient(unpack(theta - h * v, s)).gradient;
        const Eigen::VectorXd fd = (gp - gm) / (2.0 * h);
        EXPECT_LE(oracle::normwise_rel(curv.apply(v), fd), 1e-4) << to_string(mode) << " n=" << n;
      }
    }
  }
}

TEST(Hvp, IsSymmetric) {
  std::mt19937_64 rng(2);
  for (Mode mode : {Mode::joint, Mode::ptyc, Mode::fluor}) {
    auto inst = oracle::random_instance(12, 4, 2, 104);
    const ReconState s = mode == Mode::ptyc ? single_map(inst.state) : inst.state;
    const Objective obj(inst.problem, mode);
    const auto curv = obj.curvature(s);
    const Eigen::Index dim = pack(s).size();
    for (int t = 0; t < 10; ++t) {
      const Eigen::VectorXd u = random_vector(dim, rng), v = random_vector(dim, rng);
      const double a = curv.apply(u).dot(v), b = u.dot(curv.apply(v));
      const double scale = curv.apply(u).norm() * v.norm();
      EXPECT_LE(std::abs(a - b), 1e-10 * scale) << to_string(mode);
    }
  }
}

TEST(Hvp, MatchesSymbolicDenseHessian) {
  std::mt19937_64 rng(3);
  for (auto [ne, seed] : {std::pair{1, 105}, {2, 106}}) {
    auto inst = oracle::random_instance(10, 4, ne, static_cast<std::uint64_t>(seed));
    const Eigen::MatrixXd J = oracle::symbolic_joint_hessian(inst.state.z(), inst.probe, inst.scan, inst.d, inst.mu,
                                                             inst.state.alpha);
    const Objective obj(inst.problem, Mode::joint);
    const auto curv = obj.curvature(inst.state);
    for (int t = 0; t < 5; ++t) {
      const Eigen::VectorXd v = random_vector(J.cols(), rng);
      EXPECT_LE(oracle::normwise_rel(curv.apply(v), J * v), 1e-8) << "N_e=" << ne;
    }
    // Basis columns, so every entry of the operator is checked once.
    Eigen::MatrixXd probed(J.rows(), J.cols());
    for (Eigen::Index k = 0; k < J.cols(); ++k) probed.col(k) = curv.apply(Eigen::VectorXd::Unit(J.cols(), k));
    EXPECT_LE(oracle::normwise_rel(probed, J), 1e-8);
  }
}

TEST(Hvp, ZeroAlphaAndFrozenMapsGivesPtychographyAction) {
  std::mt19937_64 rng(4);
  auto inst = oracle::random_instance(8, 4, 2, 107);
  ReconState s = inst.state;
  s.alpha = 0.0;
  const auto lin = inst.problem.ptyc.linearize(s.z());
  StateDirection dir;
  dir.dx = oracle::random_real(8, rng);
  dir.dw = {RealField(8), RealField(8)};
  const StateDirection out = hvp_joint(s, lin, dir, inst.problem);
  ComplexField dz(8);
  for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = cplx(dir.dx[k], 0.0);
  const ComplexField ref = inst.problem.ptyc.hessian_apply(lin, dz);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    EXPECT_NEAR(out.dx[k], ref[k].real(), 1e-13);
    for (int e = 0; e < 2; ++e) EXPECT_NEAR(out.dw[e][k], s.mu[e] * ref[k].imag(), 1e-13);
  }
}

TEST(Hvp, FluorescenceModeIsScaledGramOperator) {
  std::mt19937_64 rng(5);
  auto inst = oracle::random_instance(10, 4, 3, 108);
  const Eigen::MatrixXd P = psf_matrix(inst.problem.fluor.kernel());
  const Objective obj(inst.problem, Mode::fluor);
  const auto curv = obj.curvature(inst.state);
  const Eigen::Index nn = 100;
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd v = random_vector(4 * nn, rng);
    const Eigen::VectorXd hv = curv.apply(v);
    EXPECT_EQ(hv.head(nn).cwiseAbs().maxCoeff(), 0.0);
    for (int e = 0; e < 3; ++e) {
      const Eigen::VectorXd ref = P.transpose() * (P * v.segment((1 + e) * nn, nn)) / 3.0;
      EXPECT_LE(oracle::normwise_rel(Eigen::VectorXd(hv.segment((1 + e) * nn, nn)), ref), 1e-12);
    }
    EXPECT_GE(v.dot(hv), 0.0);
  }
}

// ---------------------------------------------------------------------------

TEST(InitialState, FollowsConfiguredInitialization) {
  auto inst = oracle::random_instance(12, 4, 2, 111);
  SolverConfig c;
  const ReconState j = initial_state(inst.problem, Mode::joint, c);
  for (double v : j.x.values()) EXPECT_EQ(v, 1.0);
  ASSERT_EQ(j.n_elements(), 2);
  for (const auto& w : j.w)
    for (double v : w.values()) {
      EXPECT_GE(v, c.init_w - c.init_jitter);
      EXPECT_LE(v, c.init_w + c.init_jitter);
    }
  EXPECT_NE(j.w[0], j.w[1]);
  EXPECT_EQ(j.mu, inst.mu);
  EXPECT_DOUBLE_EQ(j.alpha, select_alpha(j, inst.problem));

  const ReconState p = initial_state(inst.problem, Mode::ptyc, c);
  EXPECT_EQ(p.n_elements(), 1);
  EXPECT_EQ(p.mu, std::vector<double>{1.0});
  EXPECT_EQ(p.alpha, 0.0);
  EXPECT_EQ(p.w[0], j.w[0]);
  EXPECT_EQ(initial_state(inst.problem, Mode::fluor, c).alpha, 1.0);

  c.alpha_scale = 4.0;
  EXPECT_DOUBLE_EQ(initial_state(inst.problem, Mode::joint, c).alpha, 4.0 * j.alpha);
  c.alpha_override = 0.25;
  EXPECT_EQ(initial_state(inst.problem, Mode::joint, c).alpha, 0.25);
}

TEST(SolverConfig, RejectsInvalidSettings) {
  auto bad = [](auto mutate) {
    SolverConfig c;
    mutate(c);
    return c;
  };
  EXPECT_NO_THROW(SolverConfig{}.validate());
  EXPECT_THROW(bad([](SolverConfig& c) { c.cg_max_iters = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SolverConfig& c) { c.ls_c1 = 0.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SolverConfig& c) { c.ls_c1 = 0.6; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SolverConfig& c) { c.ls_shrink = 1.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SolverConfig& c) { c.alpha_override = -1.0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SolverConfig& c) { c.alpha_scale = 0.0; }).validate(), std::invalid_argument);
  EXPECT_EQ(parse_mode("joint"), Mode::joint);
  EXPECT_THROW(parse_mode("both"), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(TruncatedNewton, StepNeverIncreasesObjective) {
  for (std::uint64_t seed : {121, 122, 123, 124}) {
    auto inst = oracle::random_instance(12, 4, 2, seed);
    for (Mode mode : {Mode::joint, Mode::ptyc, Mode::fluor}) {
      const ReconState s = mode == Mode::ptyc ? single_map(inst.state) : inst.state;
      const Objective obj(inst.problem, mode);
      const StepResult r = truncated_newton_step(s, obj, SolverConfig{});
      EXPECT_LE(r.objective_after, r.objective_before);
      EXPECT_NEAR(r.objective_after, obj.value(r.state), 1e-15 * r.objective_before);
      EXPECT_GE(r.cg_iters, r.negative_curvature ? 0 : 1);
    }
  }
}

TEST(TruncatedNewton, FluorescenceModeDescendsMonotonicallyToSolution) {
  const Dataset ds = noiseless_dataset(24, 8, 0.5, 2, 125);
  const Problem p = Problem::from_dataset(ds);
  SolverConfig c;
  c.mode = Mode::fluor;
  c.max_iters = 30;
  const auto rec = reconstruct(p, ds.z_true, c);
  ASSERT_EQ(rec.records.size(), 31u);
  for (std::size_t k = 1; k < rec.records.size(); ++k)
    EXPECT_LE(rec.records[k].loss.phi_fluor, rec.records[k - 1].loss.phi_fluor) << "iter " << k;
  EXPECT_LT(rec.records.back().loss.phi_fluor, 1e-6 * rec.records.front().loss.phi_fluor);
  for (double v : rec.state.x.values()) EXPECT_EQ(v, 1.0);
}

TEST(TruncatedNewton, ExactSolutionIsAFixedPoint) {
  const Dataset ds = noiseless_dataset(24, 8, 0.5, 2, 126);
  const Problem p = Problem::from_dataset(ds);
  for (Mode mode : {Mode::joint, Mode::fluor}) {
    const ReconState s = truth(ds, 0.5);
    const StepResult r = truncated_newton_step(s, Objective(p, mode), SolverConfig{});
    EXPECT_LE(max_abs_diff(r.state, s), 1e-10) << to_string(mode);
    EXPECT_LE(r.direction_norm, 1e-10);
  }
}

TEST(TruncatedNewton, PtychographyStaysAtNoiselessTruth) {
  const Dataset ds = noiseless_dataset(40, 16, 0.83, 1, 127);
  ASSERT_EQ(ds.scan.step, 3);
  const Problem p = Problem::from_dataset(ds);
  SolverConfig c;
  c.mode = Mode::ptyc;
  c.max_iters = 10;
  const auto rec = reconstruct_from(p, ds.z_true, c, single_map(truth(ds, 0.0)));
  for (const auto& r : rec.records) {
    EXPECT_LE(r.loss.phi_ptyc, 1e-20);
    EXPECT_LE(r.loss.mse_complex, 1e-20);
  }
}

TEST(TruncatedNewton, JointObjectiveDecreasesMonotonically) {
  const Dataset ds = noiseless_dataset(32, 16, 0.5, 1, 128);
  const Problem p = Problem::from_dataset(ds);
  SolverConfig c;
  c.mode = Mode::joint;
  c.max_iters = 100;
  const auto rec = reconstruct(p, ds.z_true, c);
  ASSERT_EQ(rec.records.size(), 101u);
  for (std::size_t k = 1; k < rec.records.size(); ++k) {
    EXPECT_LE(rec.records[k].objective, rec.records[k - 1].objective) << "iter " << k;
    EXPECT_EQ(rec.records[k].iter, static_cast<int>(k));
    EXPECT_NEAR(rec.records[k].loss.phi_joint, rec.records[k].objective, 1e-14 * rec.records[0].objective);
  }
  EXPECT_LT(rec.records.back().objective, 1e-2 * rec.records.front().objective);
}

TEST(TruncatedNewton, JointWithZeroAlphaReproducesPtychographyStepForStep) {
  const Dataset ds = noiseless_dataset(24, 8, 0.5, 1, 129, 3.0);
  const Problem p = Problem::from_dataset(ds);
  SolverConfig c;
  c.max_iters = 15;
  c.mode = Mode::ptyc;
  const ReconState start = initial_state(p, Mode::ptyc, c);
  const auto a = reconstruct_from(p, ds.z_true, c, start);
  c.mode = Mode::joint;
  c.alpha_override = 0.0;
  const auto b = reconstruct_from(p, ds.z_true, c, start);
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    EXPECT_EQ(a.records[k].objective, b.records[k].objective) << k;
    EXPECT_EQ(a.records[k].loss.phi_ptyc, b.records[k].loss.phi_ptyc) << k;
    EXPECT_EQ(a.records[k].grad_norm, b.records[k].grad_norm) << k;
    EXPECT_EQ(a.records[k].step_size, b.records[k].step_size) << k;
  }
  EXPECT_EQ(a.state.x, b.state.x);
  EXPECT_EQ(a.state.w, b.state.w);
}

TEST(TruncatedNewton, TrajectoriesAreBitIdenticalAcrossRunsAndThreadCounts) {
  const Dataset ds = noiseless_dataset(24, 8, 0.5, 3, 130, 3.0);
  const Problem p = Problem::from_dataset(ds);
  SolverConfig c;
  c.max_iters = 8;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto a = reconstruct(p, ds.z_true, c);
  omp_set_num_threads(4);
  const auto b = reconstruct(p, ds.z_true, c);
  const auto b2 = reconstruct(p, ds.z_true, c);
  omp_set_num_threads(saved);
  std::ostringstream sa, sb, sb2;
  write_trajectory_csv(sa, a.records);
  write_trajectory_csv(sb, b.records);
  write_trajectory_csv(sb2, b2.records);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sb.str(), sb2.str());
  EXPECT_EQ(pack(a.state), pack(b.state));
}

TEST(TruncatedNewton, NonFiniteStartIsRejected) {
  const Dataset ds = noiseless_dataset(24, 8, 0.5, 1, 131);
  const Problem p = Problem::from_dataset(ds);
  SolverConfig c;
  c.mode = Mode::joint;
  c.alpha_override = 1.0;
  ReconState s = truth(ds, 1.0);
  s.x[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(reconstruct_from(p, ds.z_true, c, s), std::runtime_error);
}

TEST(TruncatedNewton, CallbackSeesEveryIterateInOrder) {
  const Dataset ds = noiseless_dataset(24, 8, 0.5, 1, 132, 3.0);
  const Problem p = Problem::from_dataset(ds);
  SolverConfig c;
  c.max_iters = 5;
  std::vector<int> seen;
  const auto rec = reconstruct(p, ds.z_true, c, [&](int it, const ReconState&) { seen.push_back(it); });
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

TEST(Trajectory, CsvHasNineColumnsAndOneRowPerRecord) {
  const Dataset ds = noiseless_dataset(24, 8, 0.5, 1, 133, 3.0);
  const Problem p = Problem::from_dataset(ds);
  SolverConfig c;
  c.max_iters = 3;
  const auto rec = reconstruct(p, ds.z_true, c);
  std::ostringstream out;
  write_trajectory_csv(out, rec.records);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iter,phi_ptyc,phi_fluor,phi_joint,mse_complex,mse_imag,grad_norm,step_size,clamp_count");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 8);
    EXPECT_EQ(line.substr(0, line.find(',')), std::to_string(rows));
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}
