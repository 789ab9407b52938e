#pragma once

#include "sebnav/common.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace sebnav {

/// Row-major stack of named 2-D planes sharing one header.
struct LayeredGrid {
  int nx = 0;
  int ny = 0;
  int nyaw = 0;  // 0 for plain R^2 grids
  double resolution = 0.0;
  Vec2 origin = Vec2::Zero();
  std::vector<std::pair<std::string, std::vector<double>>> layers;

  void add(std::string name, std::vector<double> values) {
    require(static_cast<long>(values.size()) == static_cast<long>(nx) * ny, ErrorCode::kInvalidParameter,
            "layer size mismatch");
    layers.emplace_back(std::move(name), std::move(values));
  }

  const std::vector<double>& layer(const std::string& name) const {
    for (const auto& [n, v] : layers)
      if (n == name) return v;
    throw Error(ErrorCode::kInvalidParameter, "no layer " + name);
  }
};

namespace detail {
inline constexpr char kGridMagic[8] = {'S', 'N', 'G', 'R', 'I', 'D', '0', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(ErrorCode::kIo, "truncated grid file");
  return v;
}
}  // namespace detail

// Little-endian host layout; the files are meant for the same machine class.
inline void write_grid_binary(const std::string& path, const LayeredGrid& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path);
  os.write(detail::kGridMagic, sizeof(detail::kGridMagic));
  detail::put<std::int32_t>(os, g.nx);
  detail::put<std::int32_t>(os, g.ny);
  detail::put<std::int32_t>(os, g.nyaw);
  detail::put<double>(os, g.resolution);
  detail::put<double>(os, g.origin.x());
  detail::put<double>(os, g.origin.y());
  detail::put<std::int32_t>(os, static_cast<std::int32_t>(g.layers.size()));
  for (const auto& [name, values] : g.layers) {
    detail::put<std::int32_t>(os, static_cast<std::int32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path);
}

inline LayeredGrid read_grid_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kGridMagic, 8) != 0) throw Error(ErrorCode::kIo, "bad grid magic");
  LayeredGrid g;
  g.nx = detail::get<std::int32_t>(is);
  g.ny = detail::get<std::int32_t>(is);
  g.nyaw = detail::get<std::int32_t>(is);
  g.resolution = detail::get<double>(is);
  g.origin.x() = detail::get<double>(is);
  g.origin.y() = detail::get<double>(is);
  if (g.nx <= 0 || g.ny <= 0 || g.resolution <= 0.0) throw Error(ErrorCode::kIo, "bad grid header");
  const int nl = detail::get<std::int32_t>(is);
  for (int l = 0; l < nl; ++l) {
    const int len = detail::get<std::int32_t>(is);
    if (len < 0 || len > 4096) throw Error(ErrorCode::kIo, "bad layer name");
    std::string name(static_cast<std::size_t>(len), '\0');
    is.read(name.data(), len);
    std::vector<double> values(static_cast<std::size_t>(g.nx) * g.ny);
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw Error(ErrorCode::kIo, "truncated layer " + name);
    g.layers.emplace_back(std::move(name), std::move(values));
  }
  return g;
}

/// Debug variant: header comment lines, then one row per cell with all layers as columns.
inline void write_grid_csv(const std::string& path, const LayeredGrid& g) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path);
  os << std::setprecision(17);
  os << "# nx=" << g.nx << " ny=" << g.ny << " nyaw=" << g.nyaw << " resolution=" << g.resolution
     << " origin=" << g.origin.x() << "," << g.origin.y() << "\n";
  os << "i,j";
  for (const auto& l : g.layers) os << "," << l.first;
  os << "\n";
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      os << i << "," << j;
      for (const auto& l : g.layers) os << "," << l.second[static_cast<std::size_t>(j) * g.nx + i];
      os << "\n";
    }
}

inline void write_points_csv(const std::string& path, const std::vector<Vec3>& pts) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path);
  os << std::setprecision(17) << "x,y,z\n";
  for (const auto& p : pts) os << p.x() << "," << p.y() << "," << p.z() << "\n";
}

}  // namespace sebnav
