#pragma once

#include "sebnav/common.hpp"
#include "sebnav/grid_io.hpp"
#include "sebnav/sensor.hpp"
#include "sebnav/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace sebnav {

struct ElevationCell {
  double height = 0.0;
  double variance = 0.0;
  bool known = false;
};

struct MappingParams {
  double gate = 2.0;
  double body_z_min = -1.5;
  double body_z_max = 1.5;
  double ray_margin = 0.05;
};

/// sigma^2 of the measured height of one scan point (first-order propagation).
inline double point_height_variance(const Vec3& s_p, const Mat3& R_B, const Mat3& R_BS, const Vec3& p_BS,
                                    const Mat3& sigma_s, const Mat3& sigma_r, const Mat3& sigma_b) {
  const Vec3 b3 = Vec3::UnitZ();
  const Vec3 J_S = (R_B * R_BS).transpose() * b3;
  const Vec3 J_R = skew(R_BS * s_p + p_BS) * R_B.transpose() * b3;
  const Vec3 J_B = -b3;
  const double v = J_S.dot(sigma_s * J_S) + J_R.dot(sigma_r * J_R) + J_B.dot(sigma_b * J_B);
  return std::max(v, 0.0);
}

/// Fuses one measurement into a known cell without gating.
inline void kf_fuse(double& h, double& var, double z, double var_m) {
  const double s = var + var_m;
  h = (var_m * h + var * z) / s;
  var = var * var_m / s;
}

/// Sequential scalar Kalman update with Mahalanobis gating (higher height wins on gate failure).
inline ElevationCell kf_update(ElevationCell cell, const std::vector<std::pair<double, double>>& meas,
                               double gate = 2.0) {
  for (const auto& [z, var_m] : meas) {
    if (!(var_m > 0.0) || !std::isfinite(z)) throw Error(ErrorCode::kInvalidMeasurement, "measurement variance must be positive");
    if (!cell.known) {
      cell = {z, var_m, true};
      continue;
    }
    const double d = std::abs(z - cell.height) / std::sqrt(cell.variance + var_m);
    if (d <= gate) {
      kf_fuse(cell.height, cell.variance, z, var_m);
    } else if (z > cell.height) {
      cell.height = z;
      cell.variance = var_m;
    }
  }
  return cell;
}

/// Robot-centric grid. Cell (i, j) covers [g*res, (g+1)*res) with g = origin index + i - n/2.
class ElevationMap {
 public:
  ElevationMap(int nx, int ny, double resolution, MappingParams params = {})
      : nx_(nx), ny_(ny), res_(resolution), params_(params), cells_(static_cast<std::size_t>(nx) * ny) {
    require(nx > 0 && ny > 0 && resolution > 0.0, ErrorCode::kInvalidParameter, "map dimensions");
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double resolution() const { return res_; }
  const MappingParams& params() const { return params_; }
  MappingParams& params() { return params_; }
  Eigen::Vector2i origin_index() const { return org_; }
  Vec3 p_M() const { return Vec3(res_ * org_.x(), res_ * org_.y(), 0.0); }

  ElevationCell& cell(int i, int j) { return cells_[static_cast<std::size_t>(j) * nx_ + i]; }
  const ElevationCell& cell(int i, int j) const { return cells_[static_cast<std::size_t>(j) * nx_ + i]; }
  const std::vector<ElevationCell>& cells() const { return cells_; }
  std::vector<ElevationCell>& cells() { return cells_; }

  long global_x(int i) const { return static_cast<long>(org_.x()) + i - nx_ / 2; }
  long global_y(int j) const { return static_cast<long>(org_.y()) + j - ny_ / 2; }
  Vec2 center(int i, int j) const { return Vec2((global_x(i) + 0.5) * res_, (global_y(j) + 0.5) * res_); }
  double xmin() const { return global_x(0) * res_; }
  double ymin() const { return global_y(0) * res_; }

  /// Cell containing a world point; false if outside.
  bool index_of(double x, double y, int* i, int* j) const {
    const long gx = static_cast<long>(std::floor(x / res_));
    const long gy = static_cast<long>(std::floor(y / res_));
    const long ii = gx - org_.x() + nx_ / 2, jj = gy - org_.y() + ny_ / 2;
    if (ii < 0 || jj < 0 || ii >= nx_ || jj >= ny_) return false;
    *i = static_cast<int>(ii);
    *j = static_cast<int>(jj);
    return true;
  }

  void recenter(double x, double y) {
    const Eigen::Vector2i target(static_cast<int>(std::floor(x / res_)), static_cast<int>(std::floor(y / res_)));
    const Eigen::Vector2i shift = target - org_;
    if (shift.isZero()) return;
    std::vector<ElevationCell> next(cells_.size());
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i) {
        const int si = i + shift.x(), sj = j + shift.y();
        if (si >= 0 && sj >= 0 && si < nx_ && sj < ny_) next[static_cast<std::size_t>(j) * nx_ + i] = cell(si, sj);
      }
    cells_.swap(next);
    org_ = target;
  }

  /// Cells crossed by the segment a->b (endpoint cell excluded) with the highest ray height inside each.
  template <typename Visit>
  void traverse(const Vec3& a, const Vec3& b, Visit&& visit) const {
    const double x0 = (a.x() - xmin()) / res_, y0 = (a.y() - ymin()) / res_;
    const double x1 = (b.x() - xmin()) / res_, y1 = (b.y() - ymin()) / res_;
    const double dx = x1 - x0, dy = y1 - y0;
    int ie = static_cast<int>(std::floor(x1)), je = static_cast<int>(std::floor(y1));
    int i = static_cast<int>(std::floor(x0)), j = static_cast<int>(std::floor(y0));
    const int sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
    const double inf = std::numeric_limits<double>::infinity();
    auto next_t = [&](double p0, double d, int c, int s) {
      if (d == 0.0) return inf;
      return ((s > 0 ? c + 1 : c) - p0) / d;
    };
    double t = 0.0;
    const long max_steps = std::abs(ie - i) + std::abs(je - j) + 2;
    for (long step = 0; step <= max_steps && t < 1.0; ++step) {
      const double tx = next_t(x0, dx, i, sx), ty = next_t(y0, dy, j, sy);
      const double t_exit = std::min({tx, ty, 1.0});
      if (i == ie && j == je) break;
      if (t_exit - t > 1e-9 && i >= 0 && j >= 0 && i < nx_ && j < ny_) visit(i, j, std::max(a.z() + t * (b.z() - a.z()), a.z() + t_exit * (b.z() - a.z())));
      if (t_exit >= 1.0) break;
      if (tx <= ty) i += sx; else j += sy;
      t = t_exit;
    }
  }

  /// Marks cells unknown whose height is above the passing ray (plus margin).
  void raycast_reset(const Vec3& sensor, const std::vector<Vec3>& points) {
    const int nthreads = thread_count();
    std::vector<std::vector<std::size_t>> hits(static_cast<std::size_t>(nthreads));
#pragma omp parallel num_threads(nthreads)
    {
#ifdef _OPENMP
      auto& mine = hits[static_cast<std::size_t>(omp_get_thread_num())];
#else
      auto& mine = hits[0];
#endif
#pragma omp for schedule(static)
      for (long r = 0; r < static_cast<long>(points.size()); ++r) {
        traverse(sensor, points[r], [&](int i, int j, double z_ray) {
          const auto& c = cell(i, j);
          if (c.known && c.height > z_ray + params_.ray_margin) mine.push_back(static_cast<std::size_t>(j) * nx_ + i);
        });
      }
    }
    for (const auto& v : hits)
      for (auto idx : v) cells_[idx].known = false;
  }

  /// One frame: recenter, transform + filter, ray-cast reset, variance, per-cell fusion.
  void update(const NoisyPose& pose, const std::vector<Vec3>& scan, const SensorModel& sensor) {
    recenter(pose.p.x(), pose.p.y());
    const std::size_t n = scan.size();
    std::vector<Vec3> world(n);
    std::vector<double> var(n);
    std::vector<long> target(n, -1);
#pragma omp parallel for schedule(static)
    for (long k = 0; k < static_cast<long>(n); ++k) {
      const Vec3 body = sensor.R_BS * scan[k] + sensor.p_BS;
      world[k] = pose.R * body + pose.p;
      if (body.z() < params_.body_z_min || body.z() > params_.body_z_max) continue;
      int i, j;
      if (!index_of(world[k].x(), world[k].y(), &i, &j)) continue;
      var[k] = point_height_variance(scan[k], pose.R, sensor.R_BS, sensor.p_BS, sensor.sigma_s, pose.sigma_r,
                                     pose.sigma_b);
      if (!(var[k] > 0.0)) var[k] = 1e-12;
      target[k] = static_cast<long>(j) * nx_ + i;
    }
    std::vector<Vec3> kept;
    kept.reserve(n);
    for (std::size_t k = 0; k < n; ++k)
      if (target[k] >= 0) kept.push_back(world[k]);
    raycast_reset(pose.p + pose.R * sensor.p_BS, kept);

    // Counting sort by cell so each worker owns whole cells; order within a cell is scan order.
    std::vector<long> start(cells_.size() + 1, 0);
    for (std::size_t k = 0; k < n; ++k)
      if (target[k] >= 0) ++start[target[k] + 1];
    std::partial_sum(start.begin(), start.end(), start.begin());
    std::vector<long> order(static_cast<std::size_t>(start.back()));
    std::vector<long> fill(start.begin(), start.end() - 1);
    for (std::size_t k = 0; k < n; ++k)
      if (target[k] >= 0) order[fill[target[k]]++] = static_cast<long>(k);
#pragma omp parallel for schedule(static)
    for (long c = 0; c < static_cast<long>(cells_.size()); ++c) {
      if (start[c] == start[c + 1]) continue;
      ElevationCell cell = cells_[c];
      for (long q = start[c]; q < start[c + 1]; ++q) {
        const long k = order[q];
        const double z = world[k].z(), vm = var[k];
        if (!cell.known) {
          cell = {z, vm, true};
        } else if (std::abs(z - cell.height) / std::sqrt(cell.variance + vm) <= params_.gate) {
          kf_fuse(cell.height, cell.variance, z, vm);
        } else if (z > cell.height) {
          cell.height = z;
          cell.variance = vm;
        }
      }
      cells_[c] = cell;
    }
  }

  bool any_known() const {
    return std::any_of(cells_.begin(), cells_.end(), [](const ElevationCell& c) { return c.known; });
  }

  LayeredGrid to_layers() const {
    LayeredGrid g;
    g.nx = nx_;
    g.ny = ny_;
    g.resolution = res_;
    g.origin = center(0, 0);
    std::vector<double> h(cells_.size()), v(cells_.size()), u(cells_.size());
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      h[k] = cells_[k].height;
      v[k] = cells_[k].variance;
      u[k] = cells_[k].known ? 0.0 : 1.0;
    }
    g.add("height", std::move(h));
    g.add("variance", std::move(v));
    g.add("unknown", std::move(u));
    return g;
  }

 private:
  int nx_, ny_;
  double res_;
  MappingParams params_;
  Eigen::Vector2i org_ = Eigen::Vector2i::Zero();
  std::vector<ElevationCell> cells_;
};

namespace detail {

/// 1-D squared distance transform (lower envelope of parabolas). kFar marks "no seed".
inline constexpr double kFar = 1e30;

inline void edt_1d(const double* f, double* d, int n, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {  // k == 0: new parabola dominates everywhere
      v[0] = q;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double df = q - v[k];
    d[q] = f[v[k]] >= kFar ? kFar : df * df + f[v[k]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance (in cells) to the nearest seed, row-major nx*ny; >= kFar if none.
inline std::vector<double> squared_edt(const std::vector<char>& seed, int nx, int ny) {
  std::vector<double> g(seed.size());
  for (std::size_t k = 0; k < seed.size(); ++k) g[k] = seed[k] ? 0.0 : detail::kFar;
  const int n = std::max(nx, ny);
  std::vector<double> out(seed.size());
  // columns
  {
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < ny; ++j) f[j] = g[static_cast<std::size_t>(j) * nx + i];
      detail::edt_1d(f.data(), d.data(), ny, v.data(), z.data());
      for (int j = 0; j < ny; ++j) g[static_cast<std::size_t>(j) * nx + i] = d[j];
    }
    for (int j = 0; j < ny; ++j) {
      detail::edt_1d(&g[static_cast<std::size_t>(j) * nx], &out[static_cast<std::size_t>(j) * nx], nx, v.data(),
                     z.data());
    }
  }
  return out;
}

/// Nearest-known-cell fill; ties go to the lowest row-major index. Output nodes sit at cell centers.
inline HeightField inpaint(const ElevationMap& map) {
  const int nx = map.nx(), ny = map.ny();
  require(map.any_known(), ErrorCode::kEmptyMap, "cannot inpaint a map with no known cells");
  std::vector<char> known(static_cast<std::size_t>(nx) * ny);
  for (std::size_t k = 0; k < known.size(); ++k) known[k] = map.cells()[k].known ? 1 : 0;
  const std::vector<double> d2 = squared_edt(known, nx, ny);
  HeightField hf(nx, ny, map.resolution(), map.center(0, 0));
#pragma omp parallel for schedule(static)
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const std::size_t k = static_cast<std::size_t>(j) * nx + i;
      if (known[k]) {
        hf.heights[k] = map.cells()[k].height;
        continue;
      }
      const long r2 = std::lround(d2[k]);
      const int rmax = static_cast<int>(std::floor(std::sqrt(static_cast<double>(r2)) + 1e-9));
      long best = -1;
      for (int dy = -rmax; dy <= rmax; ++dy) {
        const int jj = j + dy;
        if (jj < 0 || jj >= ny) continue;
        const long rem = r2 - static_cast<long>(dy) * dy;
        const long dx = std::lround(std::sqrt(static_cast<double>(rem)));
        if (dx * dx != rem) continue;
        for (int sgn : {-1, 1}) {
          const long ii = i + sgn * dx;
          if (ii < 0 || ii >= nx) continue;
          const long idx = static_cast<long>(jj) * nx + ii;
          if (known[idx] && (best < 0 || idx < best)) best = idx;
          if (dx == 0) break;
        }
      }
      hf.heights[k] = map.cells()[best].height;
    }
  return hf;
}

}  // namespace sebnav
