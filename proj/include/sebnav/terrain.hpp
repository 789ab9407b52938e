#pragma once

#include "sebnav/common.hpp"
#include "sebnav/grid_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace sebnav {

/// Heights sampled at nodes origin + (i, j) * resolution, row-major (j * nx + i).
struct HeightField {
  int nx = 0;
  int ny = 0;
  double resolution = 0.0;
  Vec2 origin = Vec2::Zero();
  std::vector<double> heights;

  HeightField() = default;
  HeightField(int nx_, int ny_, double res, Vec2 org, double fill = 0.0)
      : nx(nx_), ny(ny_), resolution(res), origin(std::move(org)),
        heights(static_cast<std::size_t>(nx_) * ny_, fill) {
    require(nx_ > 0 && ny_ > 0 && res > 0.0, ErrorCode::kInvalidParameter, "heightfield dimensions");
  }

  double width_m() const { return (nx - 1) * resolution; }
  double height_m() const { return (ny - 1) * resolution; }
  double& at(int i, int j) { return heights[static_cast<std::size_t>(j) * nx + i]; }
  double at(int i, int j) const { return heights[static_cast<std::size_t>(j) * nx + i]; }
  Vec2 node(int i, int j) const { return origin + Vec2(i * resolution, j * resolution); }
  double xmin() const { return origin.x(); }
  double ymin() const { return origin.y(); }
  double xmax() const { return origin.x() + width_m(); }
  double ymax() const { return origin.y() + height_m(); }

  bool contains(double x, double y) const {
    return x >= xmin() && x <= xmax() && y >= ymin() && y <= ymax();
  }

  /// Bilinear height. Throws out-of-bounds outside the node hull.
  double height(double x, double y) const { return eval(x, y, nullptr); }

  Vec2 gradient(double x, double y) const {
    Vec2 g;
    eval(x, y, &g);
    return g;
  }

  double eval(double x, double y, Vec2* grad) const {
    require(contains(x, y), ErrorCode::kOutOfBounds, "heightfield query outside extent");
    const double u = (x - origin.x()) / resolution;
    const double v = (y - origin.y()) / resolution;
    int i = std::min(static_cast<int>(std::floor(u)), nx - 2);
    int j = std::min(static_cast<int>(std::floor(v)), ny - 2);
    i = std::max(i, 0);
    j = std::max(j, 0);
    const double fu = nx > 1 ? u - i : 0.0;
    const double fv = ny > 1 ? v - j : 0.0;
    const int i1 = std::min(i + 1, nx - 1);
    const int j1 = std::min(j + 1, ny - 1);
    const double h00 = at(i, j), h10 = at(i1, j), h01 = at(i, j1), h11 = at(i1, j1);
    if (grad) {
      grad->x() = ((h10 - h00) * (1 - fv) + (h11 - h01) * fv) / resolution;
      grad->y() = ((h01 - h00) * (1 - fu) + (h11 - h10) * fu) / resolution;
    }
    return (h00 * (1 - fu) + h10 * fu) * (1 - fv) + (h01 * (1 - fu) + h11 * fu) * fv;
  }

  LayeredGrid to_layers() const {
    LayeredGrid g;
    g.nx = nx;
    g.ny = ny;
    g.resolution = resolution;
    g.origin = origin;
    g.add("height", heights);
    return g;
  }

  static HeightField from_layers(const LayeredGrid& g) {
    HeightField hf(g.nx, g.ny, g.resolution, g.origin);
    hf.heights = g.layer("height");
    return hf;
  }
};

enum class TerrainKind { kValueNoise, kSinusoidal };

struct TerrainParams {
  TerrainKind kind = TerrainKind::kValueNoise;
  double width_m = 20.0;
  double height_m = 20.0;
  double resolution = 0.1;
  Vec2 origin = Vec2(-10.0, -10.0);
  double amplitude = 0.5;   // first-octave amplitude, m
  double wavelength = 6.0;  // first-octave lattice spacing, m
  int octaves = 4;          // 3-5 for noise terrains
  double persistence = 0.45;
  double lacunarity = 2.0;
  // Steep Gaussian mounds that read as obstacles after assessment.
  int rocks = 0;
  double rock_height = 0.6;
  double rock_sigma = 0.25;
  double rock_clearance = 0.0;  // keep rocks this far from origin
};

namespace detail {

inline std::uint64_t hash3(std::uint64_t seed, std::int64_t a, std::int64_t b, std::int64_t c) {
  std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(a));
  h = mix_seed(h, static_cast<std::uint64_t>(b));
  return mix_seed(h, static_cast<std::uint64_t>(c));
}

inline double unit_from_hash(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

inline double lattice_value(std::uint64_t seed, int octave, std::int64_t i, std::int64_t j) {
  return 2.0 * unit_from_hash(hash3(seed, octave, i, j)) - 1.0;
}

struct Rock {
  Vec2 c;
  double h;
};

inline std::vector<Rock> rocks_for(std::uint64_t seed, const TerrainParams& p) {
  std::vector<Rock> out;
  int attempt = 0;
  while (static_cast<int>(out.size()) < p.rocks && attempt < 64 * (p.rocks + 1)) {
    const double ux = unit_from_hash(hash3(seed, 1000, attempt, 0));
    const double uy = unit_from_hash(hash3(seed, 1000, attempt, 1));
    const double uh = unit_from_hash(hash3(seed, 1000, attempt, 2));
    ++attempt;
    Vec2 c = p.origin + Vec2(ux * p.width_m, uy * p.height_m);
    if (c.norm() < p.rock_clearance) continue;
    out.push_back({c, p.rock_height * (0.6 + 0.4 * uh)});
  }
  return out;
}

}  // namespace detail

/// Closed-form generator surface. generate_terrain samples exactly this function at the nodes.
class TerrainFunction {
 public:
  TerrainFunction(std::uint64_t seed, const TerrainParams& p)
      : seed_(seed), p_(p), rocks_(detail::rocks_for(seed, p)) {}

  double operator()(double x, double y) const {
    double h = 0.0;
    if (p_.kind == TerrainKind::kSinusoidal) {
      const double k = 2.0 * kPi / p_.wavelength;
      h = p_.amplitude * std::sin(k * x) * std::sin(k * y);
    } else {
      double amp = p_.amplitude;
      double lam = p_.wavelength;
      for (int o = 0; o < p_.octaves; ++o) {
        const double u = x / lam, v = y / lam;
        const double fu = std::floor(u), fv = std::floor(v);
        const auto i = static_cast<std::int64_t>(fu);
        const auto j = static_cast<std::int64_t>(fv);
        const double su = detail::fade(u - fu), sv = detail::fade(v - fv);
        const double v00 = detail::lattice_value(seed_, o, i, j);
        const double v10 = detail::lattice_value(seed_, o, i + 1, j);
        const double v01 = detail::lattice_value(seed_, o, i, j + 1);
        const double v11 = detail::lattice_value(seed_, o, i + 1, j + 1);
        h += amp * ((v00 * (1 - su) + v10 * su) * (1 - sv) + (v01 * (1 - su) + v11 * su) * sv);
        amp *= p_.persistence;
        lam /= p_.lacunarity;
      }
    }
    const double inv2s2 = 1.0 / (2.0 * p_.rock_sigma * p_.rock_sigma);
    for (const auto& r : rocks_) {
      const double d2 = (Vec2(x, y) - r.c).squaredNorm();
      if (d2 < 36.0 * p_.rock_sigma * p_.rock_sigma) h += r.h * std::exp(-d2 * inv2s2);
    }
    return h;
  }

  /// Upper bound on |grad h| of the closed-form surface.
  double slope_bound() const {
    if (p_.kind == TerrainKind::kSinusoidal) return std::sqrt(2.0) * p_.amplitude * 2.0 * kPi / p_.wavelength;
    double b = 0.0, amp = std::abs(p_.amplitude), lam = p_.wavelength;
    // max fade' = 15/8; lattice differences are at most 2.
    for (int o = 0; o < p_.octaves; ++o) {
      b += amp * std::sqrt(2.0) * 2.0 * 1.875 / lam;
      amp *= std::abs(p_.persistence);
      lam /= p_.lacunarity;
    }
    double rock_max = 0.0;
    for (const auto& r : rocks_) rock_max += r.h / p_.rock_sigma * std::exp(-0.5);
    return b + rock_max;
  }

  const std::vector<detail::Rock>& rocks() const { return rocks_; }

 private:
  std::uint64_t seed_;
  TerrainParams p_;
  std::vector<detail::Rock> rocks_;
};

inline HeightField generate_terrain(std::uint64_t seed, const TerrainParams& p) {
  require(p.width_m > 0.0 && p.height_m > 0.0 && p.resolution > 0.0, ErrorCode::kInvalidParameter,
          "terrain size and resolution must be positive");
  require(p.wavelength > 0.0 && p.octaves >= 1 && p.lacunarity > 0.0, ErrorCode::kInvalidParameter,
          "terrain noise parameters");
  require(p.rocks == 0 || p.rock_sigma > 0.0, ErrorCode::kInvalidParameter, "rock sigma");
  const int nx = static_cast<int>(std::lround(p.width_m / p.resolution)) + 1;
  const int ny = static_cast<int>(std::lround(p.height_m / p.resolution)) + 1;
  HeightField hf(nx, ny, p.resolution, p.origin);
  const TerrainFunction f(seed, p);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const Vec2 q = hf.node(i, j);
      hf.at(i, j) = f(q.x(), q.y());
    }
  return hf;
}

/// Closed-form terrains used as oracles.
class AnalyticTerrain {
 public:
  enum class Kind { kFlat, kPlane, kSinusoid, kCap };

  static AnalyticTerrain flat(double z0 = 0.0) {
    AnalyticTerrain t;
    t.kind_ = Kind::kFlat;
    t.z0_ = z0;
    return t;
  }
  /// h = x tan(pitch) + y tan(roll).
  static AnalyticTerrain plane(double pitch, double roll = 0.0) {
    require(std::abs(pitch) < kPi / 2 && std::abs(roll) < kPi / 2, ErrorCode::kInvalidParameter, "plane angles");
    AnalyticTerrain t;
    t.kind_ = Kind::kPlane;
    t.gx_ = std::tan(pitch);
    t.gy_ = std::tan(roll);
    return t;
  }
  /// h = A sin(kx) sin(ky), k = 2 pi / wavelength.
  static AnalyticTerrain sinusoid(double amplitude, double wavelength) {
    require(wavelength > 0.0, ErrorCode::kInvalidParameter, "sinusoid wavelength");
    AnalyticTerrain t;
    t.kind_ = Kind::kSinusoid;
    t.amp_ = amplitude;
    t.k_ = 2.0 * kPi / wavelength;
    return t;
  }
  /// Sphere of radius R cut at base radius r0 < R, centered at c, zero outside.
  static AnalyticTerrain cap(double radius, double base_radius, Vec2 center = Vec2::Zero()) {
    require(radius > 0.0 && base_radius > 0.0 && base_radius < radius, ErrorCode::kInvalidParameter, "cap radii");
    AnalyticTerrain t;
    t.kind_ = Kind::kCap;
    t.R_ = radius;
    t.r0_ = base_radius;
    t.c_ = center;
    return t;
  }

  Kind kind() const { return kind_; }
  bool contains(double, double) const { return true; }

  double height(double x, double y) const {
    switch (kind_) {
      case Kind::kFlat: return z0_;
      case Kind::kPlane: return gx_ * x + gy_ * y;
      case Kind::kSinusoid: return amp_ * std::sin(k_ * x) * std::sin(k_ * y);
      case Kind::kCap: {
        const double r2 = (Vec2(x, y) - c_).squaredNorm();
        if (r2 >= r0_ * r0_) return 0.0;
        return std::sqrt(R_ * R_ - r2) - std::sqrt(R_ * R_ - r0_ * r0_);
      }
    }
    return 0.0;
  }

  Vec2 gradient(double x, double y) const {
    switch (kind_) {
      case Kind::kFlat: return Vec2::Zero();
      case Kind::kPlane: return Vec2(gx_, gy_);
      case Kind::kSinusoid:
        return amp_ * k_ * Vec2(std::cos(k_ * x) * std::sin(k_ * y), std::sin(k_ * x) * std::cos(k_ * y));
      case Kind::kCap: {
        const Vec2 d = Vec2(x, y) - c_;
        if (d.squaredNorm() >= r0_ * r0_) return Vec2::Zero();
        return -d / std::sqrt(R_ * R_ - d.squaredNorm());
      }
    }
    return Vec2::Zero();
  }

  Eigen::Matrix2d hessian(double x, double y) const {
    Eigen::Matrix2d H = Eigen::Matrix2d::Zero();
    if (kind_ == Kind::kSinusoid) {
      const double sx = std::sin(k_ * x), cx = std::cos(k_ * x), sy = std::sin(k_ * y), cy = std::cos(k_ * y);
      const double a = amp_ * k_ * k_;
      H << -a * sx * sy, a * cx * cy, a * cx * cy, -a * sx * sy;
    } else if (kind_ == Kind::kCap) {
      const Vec2 d = Vec2(x, y) - c_;
      const double q = R_ * R_ - d.squaredNorm();
      if (d.squaredNorm() < r0_ * r0_) H = -Eigen::Matrix2d::Identity() / std::sqrt(q) - d * d.transpose() / (q * std::sqrt(q));
    }
    return H;
  }

  /// Unit upward normal (-h_x, -h_y, 1) / norm.
  Vec3 normal(double x, double y) const {
    const Vec2 g = gradient(x, y);
    return Vec3(-g.x(), -g.y(), 1.0).normalized();
  }

  /// Normal and its Jacobian with respect to (x, y).
  Vec3 normal(double x, double y, Eigen::Matrix<double, 3, 2>* jac) const {
    const Vec2 g = gradient(x, y);
    const Vec3 m(-g.x(), -g.y(), 1.0);
    const double nm = m.norm();
    const Vec3 n = m / nm;
    if (jac) {
      const Eigen::Matrix2d H = hessian(x, y);
      Eigen::Matrix<double, 3, 2> dm = Eigen::Matrix<double, 3, 2>::Zero();
      dm.topRows<2>() = -H;
      *jac = (Mat3::Identity() - n * n.transpose()) * dm / nm;
    }
    return n;
  }

  /// Samples the surface onto a grid (for mapping and assessment fixtures).
  HeightField sample(int nx, int ny, double res, const Vec2& origin) const {
    HeightField hf(nx, ny, res, origin);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const Vec2 q = hf.node(i, j);
        hf.at(i, j) = height(q.x(), q.y());
      }
    return hf;
  }

 private:
  Kind kind_ = Kind::kFlat;
  double z0_ = 0.0;
  double gx_ = 0.0, gy_ = 0.0;
  double amp_ = 0.0, k_ = 1.0;
  double R_ = 1.0, r0_ = 0.5;
  Vec2 c_ = Vec2::Zero();
};

}  // namespace sebnav
