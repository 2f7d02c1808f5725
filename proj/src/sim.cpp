#include "ptyxrf/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace ptyxrf {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Stream tags for the different random consumers.
constexpr std::uint64_t kStreamPhantom = 0x70680001;
constexpr std::uint64_t kStreamPtycNoise = 0x6e6f0001;
constexpr std::uint64_t kStreamFluorNoise = 0x6e6f0002;

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
    : state_(splitmix(splitmix(splitmix(seed) ^ stream) ^ index)) {}

CounterRng::result_type CounterRng::operator()() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double CounterRng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

// ---------------------------------------------------------------------------
// Probe

Probe Probe::from_values(int m, std::vector<cplx> values) {
  if (m <= 0 || values.size() != static_cast<std::size_t>(m) * m)
    throw std::invalid_argument("Probe: data size does not match m*m");
  Probe p;
  p.m = m;
  p.data = std::move(values);
  p.intensity.resize(p.data.size());
  for (std::size_t k = 0; k < p.data.size(); ++k) p.intensity[k] = std::norm(p.data[k]);
  return p;
}

Probe make_probe(int m, const ZonePlateParams& params) {
  if (m < 4) throw std::invalid_argument("make_probe: m must be at least 4");
  if (!(params.aperture_radius_frac > 0.0) || params.aperture_radius_frac > 0.5)
    throw std::invalid_argument("make_probe: aperture_radius_frac must lie in (0, 0.5]");
  if (!std::isfinite(params.defocus_phase_strength))
    throw std::invalid_argument("make_probe: defocus_phase_strength must be finite");

  const double radius = params.aperture_radius_frac * m;
  // Pupil in DFT layout: index q ↔ frequency q for q < m/2, q − m otherwise.
  auto freq = [m](int q) { return q < (m + 1) / 2 ? q : q - m; };
  std::vector<cplx> pupil(static_cast<std::size_t>(m) * m);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      const double fr = freq(r), fc = freq(c);
      const double k = std::sqrt(fr * fr + fc * fc);
      const double rho = k / (0.5 * m);
      if (k <= radius) pupil[static_cast<std::size_t>(r) * m + c] = std::polar(1.0, params.defocus_phase_strength * rho * rho);
    }
  }
  std::vector<cplx> field(pupil.size());
  Dft2d(m).inverse(pupil, field);

  std::vector<cplx> centered(field.size());
  const int h = m / 2;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c)
      centered[static_cast<std::size_t>(r) * m + c] = field[static_cast<std::size_t>((r - h + m) % m) * m + (c - h + m) % m];

  double peak = 0.0;
  for (const auto& v : centered) peak = std::max(peak, std::norm(v));
  if (!(peak > 0.0)) throw std::invalid_argument("make_probe: degenerate pupil (zero field)");
  const double scale = 1.0 / std::sqrt(peak);
  for (auto& v : centered) v *= scale;
  return Probe::from_values(m, std::move(centered));
}

// ---------------------------------------------------------------------------
// Scan

ScanGeometry scan_from_windows(int n, int m, int step, int grid_rows, int grid_cols, std::vector<Window> windows) {
  ScanGeometry g;
  g.n = n;
  g.m = m;
  g.step = step;
  g.grid_rows = grid_rows;
  g.grid_cols = grid_cols;
  g.overlap_ratio = 1.0 - static_cast<double>(step) / m;
  for (const auto& w : windows) check_window(w, n);
  g.windows = std::move(windows);
  return g;
}

ScanGeometry make_scan(int n, int m, double overlap_ratio) {
  if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0))
    throw std::invalid_argument("make_scan: overlap ratio must lie in [0, 1)");
  if (m <= 0 || m > n) throw std::invalid_argument("make_scan: probe must fit inside the object");
  const int step = static_cast<int>(std::lround((1.0 - overlap_ratio) * m));
  if (step < 1) throw std::invalid_argument("make_scan: rounded scan step is below one pixel");
  const int per_axis = (n - m) / step + 1;
  if (per_axis < 2)
    throw std::invalid_argument("make_scan: fewer than 2 scan positions per axis (n=" + std::to_string(n) +
                                ", m=" + std::to_string(m) + ", step=" + std::to_string(step) + ")");
  const int margin = (n - ((per_axis - 1) * step + m)) / 2;
  std::vector<Window> windows;
  windows.reserve(static_cast<std::size_t>(per_axis) * per_axis);
  for (int r = 0; r < per_axis; ++r)
    for (int c = 0; c < per_axis; ++c)
      windows.push_back(Window{static_cast<int>(windows.size()), margin + r * step, margin + c * step, m});
  return scan_from_windows(n, m, step, per_axis, per_axis, std::move(windows));
}

// ---------------------------------------------------------------------------
// Phantoms

std::vector<double> default_mu(int n_elements) {
  if (n_elements <= 0) throw std::invalid_argument("default_mu: need at least one element");
  if (n_elements == 1) return {1.0};
  if (n_elements == 3) return {1.0, 0.6, 0.3};
  std::vector<double> mu(static_cast<std::size_t>(n_elements));
  for (int e = 0; e < n_elements; ++e) mu[static_cast<std::size_t>(e)] = 1.0 / (1.0 + 0.5 * e);
  return mu;
}

namespace {

// Sum of random Gaussian bumps scaled so the maximum is 1.
RealField random_bumps(int n, CounterRng& rng) {
  RealField f(n);
  const int count = 6 + n / 16;
  for (int b = 0; b < count; ++b) {
    const double cr = rng.uniform() * n;
    const double cc = rng.uniform() * n;
    const double sigma = n / 20.0 + rng.uniform() * (n / 8.0 - n / 20.0);
    const double amp = 0.3 + 0.7 * rng.uniform();
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const double dr = r - cr, dc = c - cc;
        f(r, c) += amp * std::exp(-(dr * dr + dc * dc) * inv);
      }
  }
  const double peak = *std::max_element(f.values().begin(), f.values().end());
  for (auto& v : f.values()) v /= peak;
  return f;
}

RealField link_fields(const std::vector<RealField>& w, const std::vector<double>& mu) {
  RealField y(w.front().n());
  for (std::size_t e = 0; e < w.size(); ++e)
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += mu[e] * w[e][k];
  return y;
}

std::vector<double> center_crop(const std::vector<double>& img, int rows, int cols, int n) {
  if (rows < n || cols < n) throw std::invalid_argument("image-pair phantom: image smaller than n×n");
  const int r0 = (rows - n) / 2, c0 = (cols - n) / 2;
  std::vector<double> out(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out[static_cast<std::size_t>(r) * n + c] = img[static_cast<std::size_t>(r0 + r) * cols + c0 + c];
  return out;
}

}  // namespace

Phantom make_image_pair_phantom(const std::vector<double>& magnitude, int mag_rows, int mag_cols,
                                const std::vector<double>& phase, int phase_rows, int phase_cols, int n, double mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("image-pair phantom: mu must be positive");
  const auto mag = center_crop(magnitude, mag_rows, mag_cols, n);
  const auto ph = center_crop(phase, phase_rows, phase_cols, n);
  Phantom p;
  p.mu = {mu};
  p.z_true = ComplexField(n);
  RealField y(n);
  for (std::size_t k = 0; k < mag.size(); ++k) {
    const cplx z = std::polar(mag[k] / 255.0, ph[k] / 255.0);
    y[k] = z.imag();
    p.z_true[k] = z;
  }
  RealField w(n);
  for (std::size_t k = 0; k < y.size(); ++k) w[k] = y[k] / mu;
  p.w_true = {w};
  // Re-derive imag from the link so imag(z) − μ·w is exactly zero.
  const RealField linked = link_fields(p.w_true, p.mu);
  for (std::size_t k = 0; k < linked.size(); ++k) p.z_true[k] = cplx(p.z_true[k].real(), linked[k]);
  return p;
}

Phantom make_phantom(const PhantomOptions& opts) {
  if (opts.n <= 0) throw std::invalid_argument("make_phantom: n must be positive");
  if (opts.kind == PhantomKind::image_pair) {
    if (opts.n_elements != 1) throw std::invalid_argument("image-pair phantom supports exactly one element");
    const GrayImage mag = read_pgm(opts.magnitude_image);
    const GrayImage ph = read_pgm(opts.phase_image);
    const double mu = opts.mu.empty() ? 1.0 : opts.mu.front();
    return make_image_pair_phantom(mag.pixels, mag.rows, mag.cols, ph.pixels, ph.rows, ph.cols, opts.n, mu);
  }

  Phantom p;
  p.mu = opts.mu.empty() ? default_mu(opts.n_elements) : opts.mu;
  if (static_cast<int>(p.mu.size()) != opts.n_elements)
    throw std::invalid_argument("make_phantom: mu list length must equal n_elements");
  for (double v : p.mu)
    if (!(v > 0.0)) throw std::invalid_argument("make_phantom: mu entries must be positive");

  for (int e = 0; e < opts.n_elements; ++e) {
    CounterRng rng(opts.seed, kStreamPhantom, static_cast<std::uint64_t>(e));
    p.w_true.push_back(random_bumps(opts.n, rng));
  }
  CounterRng mag_rng(opts.seed, kStreamPhantom, 0xFFFF);
  RealField magnitude = random_bumps(opts.n, mag_rng);
  for (auto& v : magnitude.values()) v = 1.0 - 0.5 * v;

  const RealField y = link_fields(p.w_true, p.mu);
  p.z_true = ComplexField(opts.n);
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double slack = magnitude[k] * magnitude[k] - y[k] * y[k];
    if (slack < 0.0) ++p.clamp_count;
    p.z_true[k] = cplx(std::sqrt(std::max(slack, 0.0)), y[k]);
  }
  return p;
}

// ---------------------------------------------------------------------------
// PGM

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok.front() == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw std::runtime_error("PGM: unexpected end of header");
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("PGM: cannot open " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P2") throw std::runtime_error("PGM: unsupported format " + magic + " in " + path.string());
  GrayImage img;
  img.cols = std::stoi(next_token(in));
  img.rows = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (img.rows <= 0 || img.cols <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("PGM: only 8-bit grayscale images are supported (" + path.string() + ")");
  img.pixels.resize(static_cast<std::size_t>(img.rows) * img.cols);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(img.pixels.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw std::runtime_error("PGM: truncated pixel data");
    std::copy(raw.begin(), raw.end(), img.pixels.begin());
  } else {
    for (auto& v : img.pixels) v = std::stod(next_token(in));
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("PGM: cannot write " + path.string());
  out << "P5\n" << img.cols << ' ' << img.rows << "\n255\n";
  for (double v : img.pixels) out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L))));
}

// ---------------------------------------------------------------------------
// Noise

double noise_level_of(double eta, std::span<const double> clean) {
  if (clean.empty()) return 0.0;
  const double mean = std::accumulate(clean.begin(), clean.end(), 0.0) / static_cast<double>(clean.size());
  if (!(mean > 0.0)) return 0.0;
  return std::sqrt(eta / mean) * 100.0;
}

NoisyData add_poisson(std::span<const double> clean, double noise_level_pct, std::uint64_t seed, std::uint64_t stream) {
  if (!(noise_level_pct >= 0.0)) throw std::invalid_argument("add_poisson: noise level must be nonnegative");
  for (double v : clean)
    if (!(v >= 0.0)) throw std::invalid_argument("add_poisson: clean data must be nonnegative and finite");
  NoisyData out;
  out.values.assign(clean.begin(), clean.end());
  if (noise_level_pct == 0.0) return out;

  const double mean = std::accumulate(clean.begin(), clean.end(), 0.0) / static_cast<double>(clean.size());
  if (!(mean > 0.0)) throw std::invalid_argument("add_poisson: clean data has zero mean, noise level is undefined");
  const double frac = noise_level_pct / 100.0;
  out.eta = frac * frac * mean;

  const auto count = static_cast<std::ptrdiff_t>(clean.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < count; ++k) {
    const double lambda = clean[static_cast<std::size_t>(k)] / out.eta;
    if (lambda == 0.0) {
      out.values[static_cast<std::size_t>(k)] = 0.0;
      continue;
    }
    CounterRng rng(seed, stream, static_cast<std::uint64_t>(k));
    std::poisson_distribution<long long> dist(lambda);
    out.values[static_cast<std::size_t>(k)] = out.eta * static_cast<double>(dist(rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

RealField Dataset::fluor_map(int e) const {
  const auto nn = static_cast<std::size_t>(n) * n;
  return RealField(n, std::vector<double>(D.begin() + static_cast<std::ptrdiff_t>(e * nn),
                                          D.begin() + static_cast<std::ptrdiff_t>((e + 1) * nn)));
}

std::vector<double> simulate_diffraction(const ComplexField& z, const Probe& probe, const ScanGeometry& scan) {
  if (scan.n != z.n() || scan.m != probe.m) throw std::invalid_argument("simulate_diffraction: geometry mismatch");
  const int m = probe.m;
  const auto mm = static_cast<std::size_t>(m) * m;
  const Dft2d dft(m);
  std::vector<double> d(mm * scan.windows.size());
  const auto count = static_cast<std::ptrdiff_t>(scan.windows.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < count; ++j) {
    std::vector<cplx> patch(mm), spec(mm);
    extract_window(z, scan.windows[static_cast<std::size_t>(j)], patch);
    for (std::size_t k = 0; k < mm; ++k) patch[k] *= probe.data[k];
    dft.forward(patch, spec);
    for (std::size_t k = 0; k < mm; ++k) d[static_cast<std::size_t>(j) * mm + k] = std::norm(spec[k]);
  }
  return d;
}

std::vector<double> simulate_fluorescence(const std::vector<RealField>& w, const Probe& probe, int n) {
  const CircularConvolver psf(center_kernel(RealField(probe.m, probe.intensity), n));
  std::vector<double> D;
  D.reserve(w.size() * static_cast<std::size_t>(n) * n);
  for (const auto& we : w) {
    const RealField blurred = psf.apply(we);
    // Nonnegative inputs; clip FFT rounding below zero.
    for (double v : blurred.values()) D.push_back(std::max(v, 0.0));
  }
  return D;
}

Dataset generate_dataset(const Phantom& phantom, const Probe& probe, const ZonePlateParams& probe_params,
                         const ScanGeometry& scan, const NoiseConfig& noise, std::uint64_t seed) {
  const int n = phantom.z_true.n();
  if (scan.n != n || scan.m != probe.m) throw std::invalid_argument("generate_dataset: scan does not match phantom/probe");
  Dataset ds;
  ds.n = n;
  ds.m = probe.m;
  ds.n_elements = static_cast<int>(phantom.w_true.size());
  ds.scan = scan;
  ds.probe = probe;
  ds.probe_params = probe_params;
  ds.mu = phantom.mu;
  ds.seed = seed;
  ds.phantom_clamp_count = phantom.clamp_count;
  ds.z_true = phantom.z_true;
  ds.w_true = phantom.w_true;

  const auto d_clean = simulate_diffraction(phantom.z_true, probe, scan);
  const auto D_clean = simulate_fluorescence(phantom.w_true, probe, n);

  auto d_noisy = add_poisson(d_clean, noise.ptyc_level_pct, seed, kStreamPtycNoise);
  auto D_noisy = add_poisson(D_clean, noise.fluor_level_pct, seed, kStreamFluorNoise);
  ds.d = std::move(d_noisy.values);
  ds.D = std::move(D_noisy.values);
  ds.eta_ptyc = d_noisy.eta;
  ds.eta_fluor = D_noisy.eta;
  ds.noise_level_ptyc_pct = noise_level_of(ds.eta_ptyc, d_clean);
  ds.noise_level_fluor_pct = noise_level_of(ds.eta_fluor, D_clean);
  return ds;
}

}  // namespace ptyxrf
