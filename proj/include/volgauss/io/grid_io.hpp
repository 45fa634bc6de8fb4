#pragma once

#include "volgauss/errors.hpp"
#include "volgauss/tomo.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace volgauss::io {

/// Header lines of the sidecar text file. Values in the raw volume are
/// density / value_scale, x fastest, then y, then z.
inline std::string grid_header(const DensityGrid& g, const std::string& raw_name, double value_scale = 1.0) {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "volgauss-grid 1\n";
  s << "raw " << raw_name << "\n";
  s << "dims " << g.spec.n << " " << g.spec.n << " " << g.spec.n << "\n";
  s << "bbox_min " << g.spec.lo.x() << " " << g.spec.lo.y() << " " << g.spec.lo.z() << "\n";
  s << "bbox_max " << g.spec.hi.x() << " " << g.spec.hi.y() << " " << g.spec.hi.z() << "\n";
  s << "value_scale " << value_scale << "\n";
  s << "dtype float32 little-endian\n";
  s << "order x-fastest\n";
  return s.str();
}

inline void write_grid(const std::string& raw_path, const std::string& header_path, const DensityGrid& g,
                       double value_scale = 1.0) {
  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw) throw ValidationError(raw_path + ": cannot write file");
  for (double v : g.values) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(v / value_scale));
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    raw.write(reinterpret_cast<const char*>(&u), sizeof u);
  }
  if (!raw) throw ValidationError(raw_path + ": write failed");
  const std::string name = raw_path.substr(raw_path.find_last_of('/') + 1);
  std::ofstream hdr(header_path);
  hdr << grid_header(g, name, value_scale);
  if (!hdr) throw ValidationError(header_path + ": write failed");
}

/// Reads a grid written by write_grid; values come back multiplied by the
/// value scale.
inline DensityGrid read_grid(const std::string& raw_path, const std::string& header_path) {
  std::ifstream hdr(header_path);
  if (!hdr) throw ValidationError(header_path + ": cannot open file");
  DensityGrid g;
  double value_scale = 1.0;
  std::string line, magic;
  int version = 0;
  hdr >> magic >> version;
  if (magic != "volgauss-grid" || version != 1)
    throw ValidationError(header_path + ": not a volgauss-grid version 1 header");
  std::getline(hdr, line);
  int line_no = 1;
  while (std::getline(hdr, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dims") {
      int nx = 0, ny = 0, nz = 0;
      ls >> nx >> ny >> nz;
      if (nx != ny || ny != nz || nx <= 0)
        throw ValidationError(header_path + ":" + std::to_string(line_no) + ": only cubic grids are supported");
      g.spec.n = nx;
    } else if (key == "bbox_min") {
      ls >> g.spec.lo.x() >> g.spec.lo.y() >> g.spec.lo.z();
    } else if (key == "bbox_max") {
      ls >> g.spec.hi.x() >> g.spec.hi.y() >> g.spec.hi.z();
    } else if (key == "value_scale") {
      ls >> value_scale;
    } else if (key == "raw" || key == "dtype" || key == "order" || key.empty()) {
      continue;
    } else {
      throw ValidationError(header_path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!ls) throw ValidationError(header_path + ":" + std::to_string(line_no) + ": malformed '" + key + "' line");
  }
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw ValidationError(raw_path + ": cannot open file");
  const std::size_t count = static_cast<std::size_t>(g.spec.n) * g.spec.n * g.spec.n;
  g.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u = 0;
    raw.read(reinterpret_cast<char*>(&u), sizeof u);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    g.values[i] = static_cast<double>(std::bit_cast<float>(u)) * value_scale;
  }
  if (!raw) throw ValidationError(raw_path + ": volume is truncated");
  return g;
}

}  // namespace volgauss::io
