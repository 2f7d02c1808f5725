#include "ptyxrf/dataset_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

namespace ptyxrf {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

static_assert(std::endian::native == std::endian::little, "raw grid files are little-endian; port the byte swap first");

void write_f64(const fs::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<double> read_f64(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected_count * sizeof(double))
    throw std::runtime_error(path.string() + ": expected " + std::to_string(expected_count) + " float64 values, file has " +
                             std::to_string(bytes) + " bytes");
  in.seekg(0);
  std::vector<double> v(expected_count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  return v;
}

void write_c128(const fs::path& path, std::span<const cplx> values) {
  // std::complex<double> is layout-compatible with double[2].
  write_f64(path, std::span<const double>(reinterpret_cast<const double*>(values.data()), values.size() * 2));
}

std::vector<cplx> read_c128(const fs::path& path, std::size_t expected_count) {
  const auto flat = read_f64(path, expected_count * 2);
  std::vector<cplx> v(expected_count);
  for (std::size_t k = 0; k < expected_count; ++k) v[k] = cplx(flat[2 * k], flat[2 * k + 1]);
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_list(std::span<const double> v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) s += ',';
    s += format_double(v[k]);
  }
  return s;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    std::size_t used = 0;
    const double v = std::stod(item.substr(b), &used);
    if (item.find_first_not_of(" \t", b + used) != std::string::npos)
      throw std::invalid_argument("not a number: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void write_meta(const fs::path& path, const pt::ptree& meta) { pt::write_ini(path.string(), meta); }

pt::ptree read_meta(const fs::path& path) {
  pt::ptree t;
  pt::read_ini(path.string(), t);
  return t;
}

namespace {

std::string windows_to_string(const std::vector<Window>& ws) {
  std::string s;
  for (std::size_t k = 0; k < ws.size(); ++k) {
    if (k) s += ';';
    s += std::to_string(ws[k].row_offset) + ',' + std::to_string(ws[k].col_offset);
  }
  return s;
}

std::vector<Window> windows_from_string(const std::string& s, int m) {
  std::vector<Window> ws;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto comma = item.find(',');
    if (comma == std::string::npos) throw std::runtime_error("meta: malformed window list");
    ws.push_back(Window{static_cast<int>(ws.size()), std::stoi(item.substr(0, comma)), std::stoi(item.substr(comma + 1)), m});
  }
  return ws;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const auto nn = static_cast<std::size_t>(ds.n) * ds.n;
  pt::ptree meta;
  meta.put("format.version", kDatasetFormat);
  meta.put("format.layout", "row-major; d.bin [N][m][m]; D.bin [N_e][n][n]; complex grids interleaved re,im");
  meta.put("geometry.n", ds.n);
  meta.put("geometry.m", ds.m);
  meta.put("geometry.N", ds.positions());
  meta.put("geometry.step", ds.scan.step);
  meta.put("geometry.grid_rows", ds.scan.grid_rows);
  meta.put("geometry.grid_cols", ds.scan.grid_cols);
  meta.put("geometry.overlap_ratio", format_double(ds.scan.overlap_ratio));
  meta.put("geometry.windows", windows_to_string(ds.scan.windows));
  meta.put("probe.aperture_radius_frac", format_double(ds.probe_params.aperture_radius_frac));
  meta.put("probe.defocus_phase_strength", format_double(ds.probe_params.defocus_phase_strength));
  meta.put("elements.N_e", ds.n_elements);
  meta.put("elements.mu", format_list(ds.mu));
  meta.put("noise.eta_ptyc", format_double(ds.eta_ptyc));
  meta.put("noise.eta_fluor", format_double(ds.eta_fluor));
  meta.put("noise.noise_level_ptyc_pct", format_double(ds.noise_level_ptyc_pct));
  meta.put("noise.noise_level_fluor_pct", format_double(ds.noise_level_fluor_pct));
  meta.put("run.seed", ds.seed);
  meta.put("run.phantom_clamp_count", ds.phantom_clamp_count);
  meta.put("shapes.d", std::to_string(ds.positions()) + "x" + std::to_string(ds.m) + "x" + std::to_string(ds.m));
  meta.put("shapes.D", std::to_string(ds.n_elements) + "x" + std::to_string(ds.n) + "x" + std::to_string(ds.n));
  meta.put("shapes.z_true", std::to_string(ds.n) + "x" + std::to_string(ds.n) + " complex");
  meta.put("shapes.w_true", std::to_string(ds.n_elements) + "x" + std::to_string(ds.n) + "x" + std::to_string(ds.n));
  meta.put("shapes.probe", std::to_string(ds.m) + "x" + std::to_string(ds.m) + " complex");
  write_meta(dir / "meta", meta);

  write_f64(dir / "d.bin", ds.d);
  write_f64(dir / "D.bin", ds.D);
  write_c128(dir / "z_true.bin", ds.z_true.values());
  std::vector<double> w_flat;
  w_flat.reserve(nn * ds.w_true.size());
  for (const auto& w : ds.w_true) w_flat.insert(w_flat.end(), w.values().begin(), w.values().end());
  write_f64(dir / "w_true.bin", w_flat);
  write_c128(dir / "probe.bin", ds.probe.data);
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "meta")) throw std::runtime_error("not a dataset directory (no meta): " + dir.string());
  const pt::ptree meta = read_meta(dir / "meta");
  if (meta.get<std::string>("format.version", "") != kDatasetFormat)
    throw std::runtime_error("unsupported dataset format in " + dir.string());
  Dataset ds;
  ds.n = meta.get<int>("geometry.n");
  ds.m = meta.get<int>("geometry.m");
  const int N = meta.get<int>("geometry.N");
  auto windows = windows_from_string(meta.get<std::string>("geometry.windows"), ds.m);
  if (static_cast<int>(windows.size()) != N) throw std::runtime_error("meta: window count does not match N");
  ds.scan = scan_from_windows(ds.n, ds.m, meta.get<int>("geometry.step"), meta.get<int>("geometry.grid_rows"),
                              meta.get<int>("geometry.grid_cols"), std::move(windows));
  ds.probe_params.aperture_radius_frac = std::stod(meta.get<std::string>("probe.aperture_radius_frac"));
  ds.probe_params.defocus_phase_strength = std::stod(meta.get<std::string>("probe.defocus_phase_strength"));
  ds.n_elements = meta.get<int>("elements.N_e");
  ds.mu = parse_list(meta.get<std::string>("elements.mu"));
  ds.eta_ptyc = std::stod(meta.get<std::string>("noise.eta_ptyc"));
  ds.eta_fluor = std::stod(meta.get<std::string>("noise.eta_fluor"));
  ds.noise_level_ptyc_pct = std::stod(meta.get<std::string>("noise.noise_level_ptyc_pct"));
  ds.noise_level_fluor_pct = std::stod(meta.get<std::string>("noise.noise_level_fluor_pct"));
  ds.seed = meta.get<std::uint64_t>("run.seed");
  ds.phantom_clamp_count = meta.get<int>("run.phantom_clamp_count");

  const auto nn = static_cast<std::size_t>(ds.n) * ds.n;
  const auto mm = static_cast<std::size_t>(ds.m) * ds.m;
  ds.d = read_f64(dir / "d.bin", mm * static_cast<std::size_t>(N));
  for (double v : ds.d)
    if (!(v >= 0.0)) throw std::runtime_error("dataset: negative or non-finite diffraction intensity");
  ds.D = read_f64(dir / "D.bin", nn * static_cast<std::size_t>(ds.n_elements));
  ds.z_true = ComplexField(ds.n, read_c128(dir / "z_true.bin", nn));
  const auto w_flat = read_f64(dir / "w_true.bin", nn * static_cast<std::size_t>(ds.n_elements));
  for (int e = 0; e < ds.n_elements; ++e)
    ds.w_true.emplace_back(ds.n, std::vector<double>(w_flat.begin() + static_cast<std::ptrdiff_t>(e * nn),
                                                     w_flat.begin() + static_cast<std::ptrdiff_t>((e + 1) * nn)));
  ds.probe = Probe::from_values(ds.m, read_c128(dir / "probe.bin", mm));
  return ds;
}

}  // namespace ptyxrf
