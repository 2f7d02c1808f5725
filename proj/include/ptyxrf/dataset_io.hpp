#pragma once

// On-disk containers: a directory holding a `meta` INI file with every scalar
// and raw little-endian float64 grids whose shapes are recorded in `meta`.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "ptyxrf/sim.hpp"

namespace ptyxrf {

inline constexpr const char* kDatasetFormat = "ptyxrf-dataset-1";
inline constexpr const char* kStateFormat = "ptyxrf-state-1";

void write_f64(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected_count);

/// Interleaved re/im.
void write_c128(const std::filesystem::path& path, std::span<const cplx> values);
std::vector<cplx> read_c128(const std::filesystem::path& path, std::size_t expected_count);

/// Round-trippable decimal text for a double (17 significant digits).
std::string format_double(double v);
std::string format_list(std::span<const double> v);
std::vector<double> parse_list(const std::string& s);

void write_meta(const std::filesystem::path& path, const boost::property_tree::ptree& meta);
boost::property_tree::ptree read_meta(const std::filesystem::path& path);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ptyxrf
