#include "ptyxrf/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ptyxrf/dataset_io.hpp"

namespace ptyxrf {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

Experiment parse_experiment(const std::string& s) {
  if (s == "simulate") return Experiment::simulate;
  if (s == "reconstruct") return Experiment::reconstruct;
  if (s == "hessian-spectrum") return Experiment::hessian_spectrum;
  if (s == "rank-track") return Experiment::rank_track;
  if (s == "slice") return Experiment::slice;
  if (s == "perturb-probe") return Experiment::perturb_probe;
  if (s == "sweep") return Experiment::sweep;
  throw std::invalid_argument("unknown experiment '" + s + "'");
}

std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::simulate: return "simulate";
    case Experiment::reconstruct: return "reconstruct";
    case Experiment::hessian_spectrum: return "hessian-spectrum";
    case Experiment::rank_track: return "rank-track";
    case Experiment::slice: return "slice";
    case Experiment::perturb_probe: return "perturb-probe";
    case Experiment::sweep: return "sweep";
  }
  return "?";
}

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& p : v) s += "\n  " + p;
  return s;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration:" + join(problems)), problems_(std::move(problems)) {}

std::vector<double> default_perturb_magnitudes() {
  std::vector<double> out;
  for (int k = -6; k <= -1; ++k) {
    out.push_back(-std::pow(10.0, k));
    out.push_back(std::pow(10.0, k));
  }
  out.push_back(0.0);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

int parse_int(const std::string& s) {
  std::size_t used = 0;
  const long v = std::stol(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  if (!s.empty() && s[0] == '-') throw std::invalid_argument("must be non-negative");
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer");
  return v;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number");
  return v;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_list(s)) {
    if (v != std::floor(v)) throw std::invalid_argument("not an integer list");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string format_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

std::vector<Mode> parse_mode_list(const std::string& s) {
  std::vector<Mode> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse_mode(item.substr(b, e - b + 1)));
  }
  return out;
}

std::string format_mode_list(const std::vector<Mode>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + to_string(v[k]);
  return s;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::vector<Field> fields(RunConfig& c) {
  auto dbl = [](double& ref) {
    return std::pair{std::function<void(const std::string&)>([&ref](const std::string& s) { ref = parse_double(s); }),
                     std::function<std::string()>([&ref] { return format_double(ref); })};
  };
  auto integer = [](int& ref) {
    return std::pair{std::function<void(const std::string&)>([&ref](const std::string& s) { ref = parse_int(s); }),
                     std::function<std::string()>([&ref] { return std::to_string(ref); })};
  };
  auto u64 = [](std::uint64_t& ref) {
    return std::pair{std::function<void(const std::string&)>([&ref](const std::string& s) { ref = parse_u64(s); }),
                     std::function<std::string()>([&ref] { return std::to_string(ref); })};
  };
  auto path = [](fs::path& ref) {
    return std::pair{std::function<void(const std::string&)>([&ref](const std::string& s) { ref = s; }),
                     std::function<std::string()>([&ref] { return ref.string(); })};
  };
  std::vector<Field> f;
  auto add = [&f](std::string sec, std::string key, auto accessors) {
    f.push_back(Field{std::move(sec), std::move(key), std::move(accessors.first), std::move(accessors.second)});
  };

  add("run", "experiment",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& s) { c.experiment = parse_experiment(s); }),
                std::function<std::string()>([&c] { return to_string(c.experiment); })});
  add("run", "output", path(c.output_dir));
  add("run", "dataset", path(c.dataset_dir));

  add("geometry", "n", integer(c.n));
  add("geometry", "m", integer(c.m));
  add("geometry", "overlap", dbl(c.overlap));
  add("probe", "aperture_radius_frac", dbl(c.probe.aperture_radius_frac));
  add("probe", "defocus_phase_strength", dbl(c.probe.defocus_phase_strength));

  add("phantom", "kind",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& s) {
                  if (s == "blobs") c.phantom_kind = PhantomKind::synthetic_blobs;
                  else if (s == "image-pair") c.phantom_kind = PhantomKind::image_pair;
                  else throw std::invalid_argument("expected blobs or image-pair");
                }),
                std::function<std::string()>(
                    [&c] { return std::string(c.phantom_kind == PhantomKind::synthetic_blobs ? "blobs" : "image-pair"); })});
  add("phantom", "elements", integer(c.n_elements));
  add("phantom", "mu",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& s) { c.mu = parse_list(s); }),
                std::function<std::string()>([&c] { return format_list(c.mu); })});
  add("phantom", "seed", u64(c.phantom_seed));
  add("phantom", "magnitude_image", path(c.magnitude_image));
  add("phantom", "phase_image", path(c.phase_image));

  add("noise", "ptyc_level_pct", dbl(c.noise.ptyc_level_pct));
  add("noise", "fluor_level_pct", dbl(c.noise.fluor_level_pct));
  add("noise", "seed", u64(c.noise_seed));

  SolverConfig& s = c.solver;
  add("solver", "mode",
      std::pair{std::function<void(const std::string&)>([&s](const std::string& v) { s.mode = parse_mode(v); }),
                std::function<std::string()>([&s] { return to_string(s.mode); })});
  add("solver", "max_iters", integer(s.max_iters));
  add("solver", "cg_max_iters", integer(s.cg_max_iters));
  add("solver", "forcing_cap", dbl(s.forcing_cap));
  add("solver", "forcing_exponent", dbl(s.forcing_exponent));
  add("solver", "ls_shrink", dbl(s.ls_shrink));
  add("solver", "ls_c1", dbl(s.ls_c1));
  add("solver", "ls_max_backtracks", integer(s.ls_max_backtracks));
  add("solver", "curvature_tol", dbl(s.curvature_tol));
  add("solver", "divergence_factor", dbl(s.divergence_factor));
  add("solver", "seed", u64(s.seed));
  add("solver", "init_x", dbl(s.init_x));
  add("solver", "init_w", dbl(s.init_w));
  add("solver", "init_jitter", dbl(s.init_jitter));
  add("solver", "alpha_scale", dbl(s.alpha_scale));
  add("solver", "alpha",
      std::pair{std::function<void(const std::string&)>([&s](const std::string& v) {
                  if (v.empty() || v == "auto") s.alpha_override.reset();
                  else s.alpha_override = parse_double(v);
                }),
                std::function<std::string()>(
                    [&s] { return s.alpha_override ? format_double(*s.alpha_override) : std::string("auto"); })});

  add("analysis", "point",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& v) {
                  if (v == "truth") c.analysis_point = AnalysisPoint::truth;
                  else if (v == "initial") c.analysis_point = AnalysisPoint::initial;
                  else throw std::invalid_argument("expected truth or initial");
                }),
                std::function<std::string()>(
                    [&c] { return std::string(c.analysis_point == AnalysisPoint::truth ? "truth" : "initial"); })});
  add("analysis", "tau", dbl(c.tau));
  add("analysis", "bins", integer(c.bins));
  add("analysis", "rank_iterations",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& v) { c.rank_iterations = parse_int_list(v); }),
                std::function<std::string()>([&c] { return format_int_list(c.rank_iterations); })});

  add("slice", "objective",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& v) { c.slice_objective = parse_mode(v); }),
                std::function<std::string()>([&c] { return to_string(c.slice_objective); })});
  add("slice", "v1_index", integer(c.slice.v1_index));
  add("slice", "v2_index", integer(c.slice.v2_index));
  add("slice", "range", dbl(c.slice.range));
  add("slice", "resolution", integer(c.slice.resolution));

  add("perturb", "magnitudes",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& v) { c.perturb_magnitudes = parse_list(v); }),
                std::function<std::string()>([&c] { return format_list(c.perturb_magnitudes); })});

  add("sweep", "overlaps",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& v) { c.sweep_overlaps = parse_list(v); }),
                std::function<std::string()>([&c] { return format_list(c.sweep_overlaps); })});
  add("sweep", "modes",
      std::pair{std::function<void(const std::string&)>([&c](const std::string& v) { c.sweep_modes = parse_mode_list(v); }),
                std::function<std::string()>([&c] { return format_mode_list(c.sweep_modes); })});
  return f;
}

}  // namespace

void RunConfig::validate() const {
  std::vector<std::string> p;
  if (n < 2) p.push_back("geometry.n must be at least 2");
  if (m < 1 || m > n) p.push_back("geometry.m must be in [1, n]");
  if (!(overlap >= 0.0 && overlap < 1.0)) p.push_back("geometry.overlap must be in [0, 1)");
  if (p.empty()) {
    try {
      (void)make_scan(n, m, overlap);
    } catch (const std::exception& e) {
      p.push_back(std::string("geometry: ") + e.what());
    }
  }
  if (!(probe.aperture_radius_frac > 0.0 && probe.aperture_radius_frac <= 0.5))
    p.push_back("probe.aperture_radius_frac must be in (0, 0.5]");
  if (n_elements < 1) p.push_back("phantom.elements must be at least 1");
  if (!mu.empty() && static_cast<int>(mu.size()) != n_elements)
    p.push_back("phantom.mu must list one coefficient per element");
  for (double v : mu)
    if (!(v > 0.0)) p.push_back("phantom.mu entries must be positive");
  if (phantom_kind == PhantomKind::image_pair && (magnitude_image.empty() || phase_image.empty()))
    p.push_back("phantom.kind = image-pair needs magnitude_image and phase_image");
  if (!(noise.ptyc_level_pct >= 0.0)) p.push_back("noise.ptyc_level_pct must be non-negative");
  if (!(noise.fluor_level_pct >= 0.0)) p.push_back("noise.fluor_level_pct must be non-negative");
  try {
    solver.validate();
  } catch (const std::exception& e) {
    p.push_back(std::string("solver: ") + e.what());
  }
  if (!(tau > 0.0)) p.push_back("analysis.tau must be positive");
  if (bins < 1) p.push_back("analysis.bins must be at least 1");
  if (rank_iterations.empty()) p.push_back("analysis.rank_iterations must not be empty");
  for (int it : rank_iterations)
    if (it < 0) p.push_back("analysis.rank_iterations entries must be non-negative");
  if (slice.v1_index == slice.v2_index) p.push_back("slice.v1_index and slice.v2_index must differ");
  if (slice.v1_index < 1 || slice.v2_index < 1) p.push_back("slice indices are 1-based");
  if (!(slice.range > 0.0)) p.push_back("slice.range must be positive");
  if (slice.resolution < 2) p.push_back("slice.resolution must be at least 2");
  if (sweep_overlaps.empty()) p.push_back("sweep.overlaps must not be empty");
  for (double o : sweep_overlaps)
    if (!(o >= 0.0 && o < 1.0)) p.push_back("sweep.overlaps entries must be in [0, 1)");
  if (sweep_modes.empty()) p.push_back("sweep.modes must not be empty");
  if (output_dir.empty()) p.push_back("run.output must not be empty");
  if (!p.empty()) throw ConfigError(std::move(p));
}

RunConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError({std::string("syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")"});
  }
  RunConfig cfg;
  auto table = fields(cfg);
  std::map<std::string, const Field*> index;
  std::set<std::string> sections;
  for (const auto& f : table) {
    index[f.section + "." + f.key] = &f;
    sections.insert(f.section);
  }

  std::vector<std::string> problems;
  for (const auto& [sec, body] : tree) {
    if (body.empty()) {
      problems.push_back("key outside any section: " + sec);
      continue;
    }
    if (sec == "format") {
      for (const auto& [key, node] : body)
        if (key != "version" || node.get_value<std::string>() != kRunFormat)
          problems.push_back("format." + key + ": expected version = " + kRunFormat);
      continue;
    }
    if (!sections.count(sec)) {
      problems.push_back("unknown section [" + sec + "]");
      continue;
    }
    for (const auto& [key, node] : body) {
      const auto it = index.find(sec + "." + key);
      if (it == index.end()) {
        problems.push_back("unknown key " + sec + "." + key);
        continue;
      }
      try {
        it->second->set(node.get_value<std::string>());
      } catch (const std::exception& e) {
        problems.push_back(sec + "." + key + " = '" + node.get_value<std::string>() + "': " + e.what());
      }
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  cfg.validate();
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path.string()});
  return parse_config(in);
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  RunConfig copy = cfg;
  const auto table = fields(copy);
  out << "[format]\nversion = " << kRunFormat << "\n";
  std::string section;
  for (const auto& f : table) {
    if (f.section != section) {
      section = f.section;
      out << "\n[" << section << "]\n";
    }
    out << f.key << " = " << f.get() << "\n";
  }
}

void save_config(const fs::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_config(out, cfg);
}

}  // namespace ptyxrf
