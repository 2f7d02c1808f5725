#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ptyxrf/dataset_io.hpp"
#include "ptyxrf/model.hpp"
#include "ptyxrf/sim.hpp"

using namespace ptyxrf;

namespace {

double border_ring_ratio(const Probe& p) {
  const int m = p.m;
  double s = 0.0;
  int count = 0;
  double peak = 0.0;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) {
      const double v = p.intensity[static_cast<std::size_t>(r) * m + c];
      peak = std::max(peak, v);
      if (r == 0 || c == 0 || r == m - 1 || c == m - 1) {
        s += v;
        ++count;
      }
    }
  return s / count / peak;
}

std::pair<int, int> argmax(const Probe& p) {
  const auto it = std::max_element(p.intensity.begin(), p.intensity.end());
  const int k = static_cast<int>(it - p.intensity.begin());
  return {k / p.m, k % p.m};
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ptyxrf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Probe, IntensityIsSquaredMagnitudeAndPeakIsOne) {
  for (int m : {4, 16, 64}) {
    const Probe p = make_probe(m);
    ASSERT_EQ(p.data.size(), static_cast<std::size_t>(m) * m);
    double peak = 0.0;
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      EXPECT_EQ(p.intensity[k], std::norm(p.data[k]));
      peak = std::max(peak, p.intensity[k]);
    }
    EXPECT_NEAR(peak, 1.0, 1e-14);
  }
}

TEST(Probe, ZeroPhaseFullAperturePeaksAtCenter) {
  for (int m : {8, 16, 32}) {
    const Probe p = make_probe(m, {0.5, 0.0});
    EXPECT_EQ(argmax(p), std::make_pair(m / 2, m / 2));
  }
}

TEST(Probe, DefaultProbeBorderRingRegression) {
  const Probe p16 = make_probe(16);
  const Probe p64 = make_probe(64);
  EXPECT_LT(border_ring_ratio(p16), 1e-2);
  EXPECT_LT(border_ring_ratio(p64), 1e-2);
  EXPECT_NEAR(border_ring_ratio(p16), 4.1792643637675007e-03, 1e-12);
  EXPECT_NEAR(border_ring_ratio(p64), 4.2867052832449612e-05, 1e-14);
  EXPECT_EQ(argmax(p16), std::make_pair(8, 8));
  EXPECT_EQ(argmax(p64), std::make_pair(32, 32));
}

TEST(Probe, DefaultIntensitySymmetricUnderHalfTurn) {
  const int m = 16;
  const Probe p = make_probe(m);
  double worst = 0.0;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c)
      worst = std::max(worst, std::abs(p.intensity[static_cast<std::size_t>(r) * m + c] -
                                       p.intensity[static_cast<std::size_t>((m - r) % m) * m + (m - c) % m]));
  EXPECT_LE(worst, 1e-10);
}

TEST(Probe, IsDeterministic) {
  const Probe a = make_probe(16), b = make_probe(16);
  EXPECT_EQ(a.data, b.data);
}

TEST(Probe, RejectsDegenerateParameters) {
  EXPECT_THROW(make_probe(3), std::invalid_argument);
  EXPECT_THROW(make_probe(16, {0.0, 8.0}), std::invalid_argument);
  EXPECT_THROW(make_probe(16, {0.6, 8.0}), std::invalid_argument);
  EXPECT_THROW(make_probe(16, {0.25, std::nan("")}), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(Scan, LargeObjectHighOverlap) {
  const auto s = make_scan(154, 64, 0.83);
  EXPECT_EQ(s.step, 11);
  EXPECT_EQ(s.grid_rows, 9);
  EXPECT_EQ(s.grid_cols, 9);
  EXPECT_EQ(s.positions(), 81);
  EXPECT_DOUBLE_EQ(s.overlap_ratio, 1.0 - 11.0 / 64.0);
}

TEST(Scan, HalfOverlapIsExact) {
  const auto s = make_scan(72, 16, 0.5);
  EXPECT_EQ(s.step, 8);
  EXPECT_EQ(s.overlap_ratio, 0.5);
}

TEST(Scan, DefaultGeometryHas64Positions) {
  const auto s = make_scan(72, 16, 0.5);
  EXPECT_EQ(s.positions(), 64);
}

TEST(Scan, WindowsInsideAndCentered) {
  for (auto [n, m, ov] : {std::tuple{154, 64, 0.83}, {72, 16, 0.5}, {514, 64, 0.2}, {13, 4, 0.3}, {40, 16, 0.1}}) {
    const auto s = make_scan(n, m, ov);
    EXPECT_LE((s.grid_rows - 1) * s.step + m, n);
    EXPECT_GT(s.grid_rows * s.step + m, n) << "grid is not the largest that fits";
    for (const auto& w : s.windows) EXPECT_NO_THROW(check_window(w, n));
    const int first = s.windows.front().row_offset;
    const int last_end = s.windows.back().row_offset + m;
    EXPECT_LE(std::abs(first - (n - last_end)), 1);
    EXPECT_LE(std::abs(s.overlap_ratio - ov), 0.5 / m + 1e-15);
    for (std::size_t j = 0; j < s.windows.size(); ++j) EXPECT_EQ(s.windows[j].j, static_cast<int>(j));
  }
}

TEST(Scan, RejectsInvalidGeometry) {
  EXPECT_THROW(make_scan(72, 16, 1.0), std::invalid_argument);
  EXPECT_THROW(make_scan(72, 16, -0.1), std::invalid_argument);
  EXPECT_THROW(make_scan(72, 16, 0.99), std::invalid_argument);
  EXPECT_THROW(make_scan(20, 16, 0.5), std::invalid_argument);
  EXPECT_THROW(make_scan(12, 16, 0.5), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(Phantom, LinkHoldsExactly) {
  for (int ne : {1, 2, 3}) {
    PhantomOptions o;
    o.n = 40;
    o.n_elements = ne;
    o.seed = 5;
    const Phantom p = make_phantom(o);
    ASSERT_EQ(static_cast<int>(p.w_true.size()), ne);
    for (std::size_t k = 0; k < p.z_true.size(); ++k) {
      double y = 0.0;
      for (int e = 0; e < ne; ++e) y += p.mu[static_cast<std::size_t>(e)] * p.w_true[static_cast<std::size_t>(e)][k];
      ASSERT_EQ(p.z_true[k].imag(), y);
    }
  }
}

TEST(Phantom, SingleUnitElementEqualsImaginaryPart) {
  PhantomOptions o;
  o.n = 32;
  const Phantom p = make_phantom(o);
  ASSERT_EQ(p.mu, std::vector<double>{1.0});
  for (std::size_t k = 0; k < p.z_true.size(); ++k) ASSERT_EQ(p.w_true[0][k], p.z_true[k].imag());
}

TEST(Phantom, DefaultCoefficients) {
  EXPECT_EQ(default_mu(1), std::vector<double>{1.0});
  EXPECT_EQ(default_mu(3), (std::vector<double>{1.0, 0.6, 0.3}));
  PhantomOptions o;
  o.n = 24;
  o.n_elements = 3;
  EXPECT_EQ(make_phantom(o).w_true.size(), 3u);
}

TEST(Phantom, SeededBlobsAreBitIdentical) {
  PhantomOptions o;
  o.n = 48;
  o.n_elements = 3;
  o.seed = 42;
  const Phantom a = make_phantom(o), b = make_phantom(o);
  EXPECT_EQ(a.z_true, b.z_true);
  EXPECT_EQ(a.w_true, b.w_true);
  o.seed = 43;
  EXPECT_NE(make_phantom(o).z_true, a.z_true);
}

TEST(Phantom, MapsAreScaledToUnitIntervalAndMagnitudeIsBounded) {
  PhantomOptions o;
  o.n = 64;
  o.n_elements = 1;
  const Phantom p = make_phantom(o);
  const auto& w = p.w_true[0].values();
  EXPECT_GE(*std::min_element(w.begin(), w.end()), 0.0);
  EXPECT_DOUBLE_EQ(*std::max_element(w.begin(), w.end()), 1.0);
  int clamped = 0;
  for (std::size_t k = 0; k < p.z_true.size(); ++k) {
    const double mag = std::abs(p.z_true[k]);
    EXPECT_LE(mag, 1.0 + 1e-12);
    if (p.z_true[k].real() == 0.0) ++clamped;
    else EXPECT_GE(mag, 0.5 - 1e-12);
  }
  EXPECT_EQ(clamped, p.clamp_count);
}

TEST(Phantom, ImagePairFromPgmFiles) {
  const auto dir = temp_dir("pgm");
  GrayImage mag{20, 22, {}}, ph{20, 22, {}};
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 22; ++c) {
      mag.pixels.push_back((r * 7 + c * 3) % 256);
      ph.pixels.push_back((r * 11 + c * 5 + 40) % 256);
    }
  write_pgm(dir / "mag.pgm", mag);
  write_pgm(dir / "ph.pgm", ph);
  EXPECT_EQ(read_pgm(dir / "mag.pgm").pixels, mag.pixels);

  PhantomOptions o;
  o.kind = PhantomKind::image_pair;
  o.n = 16;
  o.mu = {0.8};
  o.magnitude_image = dir / "mag.pgm";
  o.phase_image = dir / "ph.pgm";
  const Phantom p = make_phantom(o);
  const int r0 = (20 - 16) / 2, c0 = (22 - 16) / 2;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const double a = mag.pixels[static_cast<std::size_t>(r0 + r) * 22 + c0 + c] / 255.0;
      const double t = ph.pixels[static_cast<std::size_t>(r0 + r) * 22 + c0 + c] / 255.0;
      const cplx z = p.z_true(r, c);
      EXPECT_NEAR(z.real(), a * std::cos(t), 1e-15);
      EXPECT_NEAR(z.imag(), a * std::sin(t), 1e-15);
      EXPECT_EQ(z.imag(), 0.8 * p.w_true[0](r, c));
    }

  o.n = 21;
  EXPECT_THROW(make_phantom(o), std::invalid_argument);
  o.n = 16;
  o.n_elements = 3;
  EXPECT_THROW(make_phantom(o), std::invalid_argument);
}

TEST(Phantom, AsciiPgmIsAccepted) {
  const auto dir = temp_dir("pgm_ascii");
  {
    std::ofstream f(dir / "a.pgm");
    f << "P2\n# comment\n3 2\n255\n0 10 20\n30 40 255\n";
  }
  const GrayImage g = read_pgm(dir / "a.pgm");
  EXPECT_EQ(g.rows, 2);
  EXPECT_EQ(g.cols, 3);
  EXPECT_EQ(g.pixels, (std::vector<double>{0, 10, 20, 30, 40, 255}));
  {
    std::ofstream f(dir / "b.pgm");
    f << "P6\n1 1\n255\n";
  }
  EXPECT_THROW(read_pgm(dir / "b.pgm"), std::runtime_error);
}

// ---------------------------------------------------------------------------

TEST(Poisson, ZeroLevelIsIdentity) {
  const std::vector<double> clean{0.0, 1.5, 3.25, 100.0};
  const auto out = add_poisson(clean, 0.0, 9);
  EXPECT_EQ(out.values, clean);
  EXPECT_EQ(out.eta, 0.0);
}

TEST(Poisson, EtaFollowsNoiseLevelFormula) {
  const std::vector<double> clean{2.0, 4.0, 6.0};
  const auto out = add_poisson(clean, 3.0, 1);
  EXPECT_DOUBLE_EQ(out.eta, 0.03 * 0.03 * 4.0);
  EXPECT_NEAR(noise_level_of(out.eta, clean), 3.0, 1e-12);
  for (double v : out.values) {
    EXPECT_GE(v, 0.0);
    const double q = v / out.eta;
    EXPECT_NEAR(q, std::round(q), 1e-6);
  }
}

TEST(Poisson, RelativeStdMatchesLevelOverManySamples) {
  const std::vector<double> clean(100000, 100.0);
  const auto out = add_poisson(clean, 10.0, 2024);
  const double mean = std::accumulate(out.values.begin(), out.values.end(), 0.0) / clean.size();
  double var = 0.0;
  for (double v : out.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(clean.size() - 1);
  const double rel_std = std::sqrt(var) / 100.0;
  EXPECT_NEAR(rel_std, 0.10, 0.05 * 0.10);
}

TEST(Poisson, UnbiasedWithinThreeStandardErrors) {
  const std::vector<double> clean{0.3, 2.0, 17.0, 60.0, 250.0};
  const int draws = 10000;
  std::vector<double> sum(clean.size(), 0.0);
  double eta = 0.0;
  for (int s = 0; s < draws; ++s) {
    const auto out = add_poisson(clean, 5.0, static_cast<std::uint64_t>(s) + 1);
    eta = out.eta;
    for (std::size_t k = 0; k < clean.size(); ++k) sum[k] += out.values[k];
  }
  for (std::size_t k = 0; k < clean.size(); ++k) {
    const double se = std::sqrt(eta * clean[k] / draws);
    EXPECT_LE(std::abs(sum[k] / draws - clean[k]), 3.0 * se) << "entry " << k;
  }
}

TEST(Poisson, StreamsAreIndependentAndDeterministic) {
  const std::vector<double> clean(64, 50.0);
  EXPECT_EQ(add_poisson(clean, 3.0, 1, 0).values, add_poisson(clean, 3.0, 1, 0).values);
  EXPECT_NE(add_poisson(clean, 3.0, 1, 0).values, add_poisson(clean, 3.0, 1, 1).values);
  EXPECT_NE(add_poisson(clean, 3.0, 1, 0).values, add_poisson(clean, 3.0, 2, 0).values);
}

TEST(Poisson, RejectsUndefinedInputs) {
  EXPECT_THROW(add_poisson(std::vector<double>(5, 0.0), 3.0, 1), std::invalid_argument);
  EXPECT_THROW(add_poisson(std::vector<double>{1.0, -1.0}, 3.0, 1), std::invalid_argument);
  EXPECT_THROW(add_poisson(std::vector<double>{1.0}, -3.0, 1), std::invalid_argument);
  EXPECT_NO_THROW(add_poisson(std::vector<double>(5, 0.0), 0.0, 1));
}

TEST(CounterRng, SequenceDependsOnlyOnKey) {
  CounterRng a(3, 4, 5), b(3, 4, 5), c(3, 4, 6);
  for (int i = 0; i < 10; ++i) {
    const auto va = a();
    EXPECT_EQ(va, b());
    EXPECT_NE(va, c());
  }
  CounterRng u(1, 2, 3);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

// ---------------------------------------------------------------------------

namespace {

Dataset small_dataset(double noise_pct, std::uint64_t seed, int n_elements = 1) {
  PhantomOptions o;
  o.n = 24;
  o.n_elements = n_elements;
  o.seed = seed;
  const Phantom ph = make_phantom(o);
  const Probe probe = make_probe(8);
  return generate_dataset(ph, probe, {}, make_scan(24, 8, 0.5), {noise_pct, noise_pct}, seed);
}

}  // namespace

TEST(Dataset, NoiselessDiffractionMatchesDirectDft) {
  const Dataset ds = small_dataset(0.0, 3);
  EXPECT_EQ(ds.eta_ptyc, 0.0);
  const int m = ds.m;
  const std::size_t mm = static_cast<std::size_t>(m) * m;
  double worst = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < ds.scan.windows.size(); ++j) {
    const auto& w = ds.scan.windows[j];
    std::vector<cplx> patch(mm);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c)
        patch[static_cast<std::size_t>(r) * m + c] = ds.probe.data[static_cast<std::size_t>(r) * m + c] * ds.z_true(w.row_offset + r, w.col_offset + c);
    const auto u = oracle::direct_dft(patch, m);
    for (std::size_t k = 0; k < mm; ++k) {
      worst = std::max(worst, std::abs(ds.d[j * mm + k] - std::norm(u[k])));
      scale = std::max(scale, std::norm(u[k]));
    }
  }
  EXPECT_LE(worst / scale, 1e-12);
}

TEST(Dataset, NoiselessFluorescenceMatchesDirectConvolution) {
  const Dataset ds = small_dataset(0.0, 4, 2);
  const RealField kernel = center_kernel(RealField(ds.m, ds.probe.intensity), ds.n);
  for (int e = 0; e < 2; ++e) {
    const RealField ref = oracle::direct_circ_convolve(kernel, ds.w_true[static_cast<std::size_t>(e)]);
    const RealField got = ds.fluor_map(e);
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(got[k], std::max(ref[k], 0.0), 1e-12);
  }
}

TEST(Dataset, ZeroObjectGivesZeroDiffraction) {
  const auto scan = make_scan(24, 8, 0.5);
  const auto d = simulate_diffraction(ComplexField(24), make_probe(8), scan);
  for (double v : d) EXPECT_EQ(v, 0.0);
}

TEST(Dataset, NoiselessLossesVanishAtTruth) {
  const Dataset ds = small_dataset(0.0, 8, 3);
  const Problem p = Problem::from_dataset(ds);
  EXPECT_LE(p.ptyc.loss(ds.z_true), 1e-20);
  EXPECT_LE(p.fluor.loss(ds.w_true), 1e-20);
}

TEST(Dataset, GenerationIsDeterministic) {
  const Dataset a = small_dataset(3.0, 12, 3), b = small_dataset(3.0, 12, 3);
  EXPECT_EQ(a.d, b.d);
  EXPECT_EQ(a.D, b.D);
  EXPECT_EQ(a.eta_ptyc, b.eta_ptyc);
  EXPECT_NE(small_dataset(3.0, 13, 3).d, a.d);
}

TEST(Dataset, StoresRecomputedNoiseLevels) {
  const Dataset ds = small_dataset(3.0, 1);
  EXPECT_NEAR(ds.noise_level_ptyc_pct, 3.0, 1e-12);
  EXPECT_NEAR(ds.noise_level_fluor_pct, 3.0, 1e-12);
  EXPECT_GT(ds.eta_ptyc, 0.0);
  for (double v : ds.d) EXPECT_GE(v, 0.0);
}

TEST(Dataset, DirectoryRoundTripIsBitExact) {
  const Dataset ds = small_dataset(3.0, 21, 3);
  const auto dir = temp_dir("dataset");
  save_dataset(ds, dir);
  for (const char* f : {"meta", "d.bin", "D.bin", "z_true.bin"}) EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.n, ds.n);
  EXPECT_EQ(back.m, ds.m);
  EXPECT_EQ(back.n_elements, ds.n_elements);
  EXPECT_EQ(back.scan.step, ds.scan.step);
  EXPECT_EQ(back.scan.positions(), ds.scan.positions());
  EXPECT_EQ(back.probe.data, ds.probe.data);
  EXPECT_EQ(back.mu, ds.mu);
  EXPECT_EQ(back.d, ds.d);
  EXPECT_EQ(back.D, ds.D);
  EXPECT_EQ(back.eta_ptyc, ds.eta_ptyc);
  EXPECT_EQ(back.eta_fluor, ds.eta_fluor);
  EXPECT_EQ(back.noise_level_ptyc_pct, ds.noise_level_ptyc_pct);
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.z_true, ds.z_true);
  EXPECT_EQ(back.w_true, ds.w_true);
}

TEST(Dataset, RawFloatFilesAreLittleEndianFloat64) {
  const auto dir = temp_dir("raw");
  const std::vector<double> v{1.0, -2.5, 1e-300};
  write_f64(dir / "x.bin", v);
  EXPECT_EQ(std::filesystem::file_size(dir / "x.bin"), 24u);
  EXPECT_EQ(read_f64(dir / "x.bin", 3), v);
  EXPECT_THROW(read_f64(dir / "x.bin", 4), std::runtime_error);
  EXPECT_EQ(parse_list(format_list(v)), v);
}
