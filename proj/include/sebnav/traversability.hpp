#pragma once

#include "sebnav/common.hpp"
#include "sebnav/elevation_map.hpp"
#include "sebnav/grid_io.hpp"
#include "sebnav/sym_eig3.hpp"
#include "sebnav/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace sebnav {

struct AssessmentParams {
  double ex = 0.8;  // semi-axis along the heading, m
  double ey = 0.5;
  Vec3 w = Vec3(0.4, 0.3, 0.3);
  double kappa_max = 0.1;
  double phi_x_max = 0.52;
  double phi_y_max = 0.52;

  void validate() const {
    require(ex > 0.0 && ey > 0.0, ErrorCode::kInvalidParameter, "ellipse semi-axes");
    require(w.minCoeff() >= 0.0 && std::abs(w.sum() - 1.0) < 1e-9, ErrorCode::kInvalidParameter,
            "risk weights must be nonnegative and sum to one");
    require(kappa_max > 0.0 && phi_x_max > 0.0 && phi_y_max > 0.0, ErrorCode::kInvalidParameter, "limits");
  }
};

struct Assessment {
  double risk = 1.0;
  Vec3 z_b = Vec3::UnitZ();
  double kappa = 0.0;
  double phi_x = 0.0;
  double phi_y = 0.0;
  bool unknown = true;
};

/// Body axes from a terrain normal and heading (cos, sin); throws when z_b is parallel to x_yaw.
inline void body_axes(const Vec3& z_b, double cth, double sth, Vec3* x_b, Vec3* y_b) {
  const Vec3 x_yaw(cth, sth, 0.0);
  const Vec3 c = z_b.cross(x_yaw);
  const double n = c.norm();
  require(n > 1e-9, ErrorCode::kDegenerateFrame, "terrain normal parallel to heading");
  *y_b = c / n;
  *x_b = y_b->cross(z_b);
}

inline void body_axes(const Vec3& z_b, double theta, Vec3* x_b, Vec3* y_b) {
  body_axes(z_b, std::cos(theta), std::sin(theta), x_b, y_b);
}

/// Risk and normal from the mean-centered point covariance (shared by all evaluation paths).
inline Assessment assess_covariance(const Mat3& cov, int count, double cth, double sth, const AssessmentParams& p) {
  Assessment a;
  if (count < 3) return a;
  const SymEig3 e = sym_eig3(cov);
  const double tr = e.values.sum();
  if (!(tr > 0.0) || e.values(1) - e.values(0) <= 1e-12 * tr) return a;  // collinear / repeated smallest
  a.unknown = false;
  a.z_b = e.min_vector.z() < 0.0 ? Vec3(-e.min_vector) : e.min_vector;
  if (a.z_b.z() <= 0.0) {  // vertical wall
    a.unknown = true;
    a.z_b = Vec3::UnitZ();
    return a;
  }
  a.kappa = std::max(e.values(0), 0.0) / tr;
  if (a.kappa > p.kappa_max) {
    a.risk = 1.0;
    return a;
  }
  Vec3 x_b, y_b;
  body_axes(a.z_b, cth, sth, &x_b, &y_b);
  a.phi_x = std::abs(std::asin(std::clamp(x_b.z(), -1.0, 1.0)));
  a.phi_y = std::abs(std::asin(std::clamp(y_b.z(), -1.0, 1.0)));
  if (a.phi_x > p.phi_x_max || a.phi_y > p.phi_y_max) {
    a.risk = 1.0;
    return a;
  }
  a.risk = p.w.dot(Vec3(a.kappa / p.kappa_max, a.phi_x / p.phi_x_max, a.phi_y / p.phi_y_max));
  a.risk = std::clamp(a.risk, 0.0, 1.0);
  return a;
}

inline Assessment assess_covariance(const Mat3& cov, int count, double theta, const AssessmentParams& p) {
  return assess_covariance(cov, count, std::cos(theta), std::sin(theta), p);
}

/// Risk assessment on an explicit point set (two-pass covariance).
inline Assessment assess_points(const std::vector<Vec3>& pts, double theta, const AssessmentParams& p) {
  if (pts.size() < 3) return Assessment{};
  Vec3 mean = Vec3::Zero();
  for (const auto& q : pts) mean += q;
  mean /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& q : pts) cov += (q - mean) * (q - mean).transpose();
  cov /= static_cast<double>(pts.size());
  return assess_covariance(cov, static_cast<int>(pts.size()), theta, p);
}

inline bool in_ellipse(double dx, double dy, double c, double s, const AssessmentParams& p) {
  const double u = (dx * c + dy * s) / p.ex, v = (-dx * s + dy * c) / p.ey;
  return u * u + v * v <= 1.0 + 1e-9;
}

/// Risk assessment at one continuous SE(2) state on a dense heightfield (nodes = cell centers).
inline Assessment assess_state(const HeightField& hf, const Se2& s, const AssessmentParams& p) {
  const double c = std::cos(s.theta), sn = std::sin(s.theta);
  const double r = std::max(p.ex, p.ey);
  const int i0 = std::max(0, static_cast<int>(std::floor((s.x - r - hf.origin.x()) / hf.resolution)));
  const int i1 = std::min(hf.nx - 1, static_cast<int>(std::ceil((s.x + r - hf.origin.x()) / hf.resolution)));
  const int j0 = std::max(0, static_cast<int>(std::floor((s.y - r - hf.origin.y()) / hf.resolution)));
  const int j1 = std::min(hf.ny - 1, static_cast<int>(std::ceil((s.y + r - hf.origin.y()) / hf.resolution)));
  std::vector<Vec3> pts;
  for (int j = j0; j <= j1; ++j)
    for (int i = i0; i <= i1; ++i) {
      const Vec2 q = hf.node(i, j);
      const double dx = q.x() - s.x, dy = q.y() - s.y;
      if (in_ellipse(dx, dy, c, sn, p)) pts.emplace_back(dx, dy, hf.at(i, j));
    }
  return assess_points(pts, s.theta, p);
}

/// Lattice over (x, y, yaw). Node (i, j, k) = (origin + (i, j) * res, -pi + k * 2pi / nyaw).
struct Se2GridSpec {
  int nx = 0;
  int ny = 0;
  int nyaw = 16;
  double resolution = 0.1;
  Vec2 origin = Vec2::Zero();

  void validate() const {
    require(nx > 0 && ny > 0 && nyaw >= 1 && resolution > 0.0, ErrorCode::kInvalidParameter, "grid spec");
  }
  long states() const { return static_cast<long>(nx) * ny * nyaw; }
  double yaw(int k) const { return -kPi + k * (2.0 * kPi / nyaw); }
  double yaw_step() const { return 2.0 * kPi / nyaw; }
  double xmax() const { return origin.x() + (nx - 1) * resolution; }
  double ymax() const { return origin.y() + (ny - 1) * resolution; }
  bool contains(double x, double y) const {
    return x >= origin.x() && x <= xmax() && y >= origin.y() && y <= ymax();
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }

  static Se2GridSpec covering(const HeightField& hf, int nyaw) {
    Se2GridSpec s;
    s.nx = hf.nx;
    s.ny = hf.ny;
    s.nyaw = nyaw;
    s.resolution = hf.resolution;
    s.origin = hf.origin;
    return s;
  }
};

enum class Field { kRisk, kSdf, kZbX, kZbY, kZbZ };

struct FieldSample {
  double value = 0.0;
  Vec3 grad = Vec3::Zero();  // d/d(x, y, theta)
};

class Se2RiskGrid {
 public:
  Se2RiskGrid() = default;
  explicit Se2RiskGrid(const Se2GridSpec& spec) : spec_(spec) {
    spec.validate();
    const auto n = static_cast<std::size_t>(spec.states());
    risk_.assign(n, 1.0);
    sdf_.assign(n, 0.0);
    zx_.assign(n, 0.0);
    zy_.assign(n, 0.0);
    zz_.assign(n, 1.0);
    unknown_.assign(n, 1);
  }

  const Se2GridSpec& spec() const { return spec_; }
  const std::vector<double>& risk() const { return risk_; }
  const std::vector<double>& sdf() const { return sdf_; }
  std::vector<double>& sdf() { return sdf_; }
  const std::vector<std::uint8_t>& unknown() const { return unknown_; }
  bool has_sdf() const { return has_sdf_; }
  void mark_sdf() { has_sdf_ = true; }

  void set(std::size_t idx, const Assessment& a) {
    risk_[idx] = a.unknown ? 1.0 : a.risk;
    zx_[idx] = a.z_b.x();
    zy_[idx] = a.z_b.y();
    zz_[idx] = a.z_b.z();
    unknown_[idx] = a.unknown ? 1 : 0;
  }
  void set_risk(std::size_t idx, double r) { risk_[idx] = r; }

  double risk_at(int i, int j, int k) const { return risk_[spec_.index(i, j, k)]; }
  double sdf_at(int i, int j, int k) const { return sdf_[spec_.index(i, j, k)]; }
  Vec3 zb_at(int i, int j, int k) const {
    const auto idx = spec_.index(i, j, k);
    return Vec3(zx_[idx], zy_[idx], zz_[idx]);
  }

  const std::vector<double>& layer(Field f) const {
    switch (f) {
      case Field::kRisk: return risk_;
      case Field::kSdf: return sdf_;
      case Field::kZbX: return zx_;
      case Field::kZbY: return zy_;
      case Field::kZbZ: return zz_;
    }
    return risk_;
  }

  /// Trilinear interpolation over (x, y, theta), theta cyclic; gradient of the interpolant.
  FieldSample query(double x, double y, double theta, Field f) const {
    Stencil st = stencil(x, y, theta);
    return interp(st, layer(f));
  }

  /// Normalized interpolated z_b and its Jacobian with respect to (x, y, theta).
  Vec3 normal(double x, double y, double theta, Mat3* jac = nullptr) const {
    const Stencil st = stencil(x, y, theta);
    const FieldSample a = interp(st, zx_), b = interp(st, zy_), c = interp(st, zz_);
    const Vec3 m(a.value, b.value, c.value);
    const double nm = m.norm();
    const Vec3 n = m / nm;
    if (jac) {
      Mat3 dm;
      dm.row(0) = a.grad.transpose();
      dm.row(1) = b.grad.transpose();
      dm.row(2) = c.grad.transpose();
      *jac = (Mat3::Identity() - n * n.transpose()) * dm / nm;
    }
    return n;
  }

  bool obstacle(std::size_t idx) const { return risk_[idx] >= 1.0; }

  LayeredGrid to_layers() const {
    LayeredGrid g;
    g.nx = spec_.nx;
    g.ny = spec_.ny;
    g.nyaw = spec_.nyaw;
    g.resolution = spec_.resolution;
    g.origin = spec_.origin;
    const std::size_t plane = static_cast<std::size_t>(spec_.nx) * spec_.ny;
    auto slice = [&](const std::vector<double>& v, int k) {
      return std::vector<double>(v.begin() + static_cast<long>(k * plane), v.begin() + static_cast<long>((k + 1) * plane));
    };
    for (int k = 0; k < spec_.nyaw; ++k) {
      const std::string s = std::to_string(k);
      g.add("risk_" + s, slice(risk_, k));
      g.add("sdf_" + s, slice(sdf_, k));
      g.add("zbx_" + s, slice(zx_, k));
      g.add("zby_" + s, slice(zy_, k));
      g.add("zbz_" + s, slice(zz_, k));
    }
    return g;
  }

 private:
  struct Stencil {
    int i0, i1, j0, j1, k0, k1;
    double fx, fy, ft;
  };

  static void axis(double u, int n, int* a, int* b, double* f) {
    const double r = std::round(u);
    if (std::abs(u - r) < 1e-12) u = r;  // exact node hits
    int i = static_cast<int>(std::floor(u));
    if (i >= n - 1) i = std::max(n - 2, 0);
    *a = i;
    *b = std::min(i + 1, n - 1);
    *f = n > 1 ? u - i : 0.0;
  }

  Stencil stencil(double x, double y, double theta) const {
    require(std::isfinite(x) && std::isfinite(y) && spec_.contains(x, y), ErrorCode::kOutOfBounds,
            "grid query outside x-y extent");
    Stencil s;
    axis((x - spec_.origin.x()) / spec_.resolution, spec_.nx, &s.i0, &s.i1, &s.fx);
    axis((y - spec_.origin.y()) / spec_.resolution, spec_.ny, &s.j0, &s.j1, &s.fy);
    double u = (wrap_angle(theta) + kPi) / spec_.yaw_step();
    const double r = std::round(u);
    if (std::abs(u - r) < 1e-12) u = r;
    int k = static_cast<int>(std::floor(u));
    s.ft = u - k;
    k %= spec_.nyaw;
    if (k < 0) k += spec_.nyaw;
    s.k0 = k;
    s.k1 = (k + 1) % spec_.nyaw;
    return s;
  }

  FieldSample interp(const Stencil& s, const std::vector<double>& v) const {
    auto at = [&](int i, int j, int k) { return v[spec_.index(i, j, k)]; };
    const double c000 = at(s.i0, s.j0, s.k0), c100 = at(s.i1, s.j0, s.k0);
    const double c010 = at(s.i0, s.j1, s.k0), c110 = at(s.i1, s.j1, s.k0);
    const double c001 = at(s.i0, s.j0, s.k1), c101 = at(s.i1, s.j0, s.k1);
    const double c011 = at(s.i0, s.j1, s.k1), c111 = at(s.i1, s.j1, s.k1);
    const double fx = s.fx, fy = s.fy, ft = s.ft;
    const double c00 = c000 * (1 - fx) + c100 * fx, c10 = c010 * (1 - fx) + c110 * fx;
    const double c01 = c001 * (1 - fx) + c101 * fx, c11 = c011 * (1 - fx) + c111 * fx;
    const double c0 = c00 * (1 - fy) + c10 * fy, c1 = c01 * (1 - fy) + c11 * fy;
    FieldSample out;
    out.value = c0 * (1 - ft) + c1 * ft;
    const double dx0 = (c100 - c000) * (1 - fy) + (c110 - c010) * fy;
    const double dx1 = (c101 - c001) * (1 - fy) + (c111 - c011) * fy;
    out.grad.x() = (dx0 * (1 - ft) + dx1 * ft) / spec_.resolution;
    out.grad.y() = ((c10 - c00) * (1 - ft) + (c11 - c01) * ft) / spec_.resolution;
    out.grad.z() = (c1 - c0) / spec_.yaw_step();
    return out;
  }

  Se2GridSpec spec_;
  std::vector<double> risk_, sdf_, zx_, zy_, zz_;
  std::vector<std::uint8_t> unknown_;
  bool has_sdf_ = false;
};

/// Per-state assessment through assess_state; the reference path.
inline Se2RiskGrid build_risk_grid_reference(const HeightField& hf, const Se2GridSpec& spec,
                                             const AssessmentParams& p) {
  p.validate();
  Se2RiskGrid g(spec);
#pragma omp parallel for schedule(static) collapse(2)
  for (int k = 0; k < spec.nyaw; ++k)
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i) {
        const Se2 s{spec.origin.x() + i * spec.resolution, spec.origin.y() + j * spec.resolution, spec.yaw(k)};
        g.set(spec.index(i, j, k), assess_state(hf, s, p));
      }
  return g;
}

namespace detail {

inline double sum_sq(long a, long b) {  // sum_{k=a}^{b} k^2
  auto F = [](long k) { return static_cast<double>(k) * (k + 1) * (2 * k + 1) / 6.0; };
  return F(b) - F(a - 1);
}

}  // namespace detail

/// Data-parallel risk grid on a heightfield whose nodes coincide with the lattice nodes.
/// Ellipse sums are gathered from per-row prefix sums, so cost per state scales with the
/// number of ellipse rows rather than points. Falls back to the reference path otherwise.
inline Se2RiskGrid build_risk_grid(const HeightField& hf, const Se2GridSpec& spec, const AssessmentParams& p) {
  p.validate();
  spec.validate();
  const double res = spec.resolution;
  const Vec2 off = (spec.origin - hf.origin) / res;
  const bool aligned = std::abs(hf.resolution - res) < 1e-12 * res && std::abs(off.x() - std::round(off.x())) < 1e-9 &&
                       std::abs(off.y() - std::round(off.y())) < 1e-9;
  if (!aligned) return build_risk_grid_reference(hf, spec, p);
  const int oi = static_cast<int>(std::lround(off.x())), oj = static_cast<int>(std::lround(off.y()));

  // Row prefix sums of h, i*h and h^2 with h relative to the field mean to limit cancellation.
  const int nx = hf.nx, ny = hf.ny;
  double href = 0.0;
  for (double h : hf.heights) href += h;
  href /= static_cast<double>(hf.heights.size());
  const std::size_t W = static_cast<std::size_t>(nx) + 1;
  std::vector<double> P0(W * ny), P1(W * ny), P2(W * ny);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < ny; ++j) {
    double a = 0, b = 0, c = 0;
    const std::size_t base = static_cast<std::size_t>(j) * W;
    P0[base] = P1[base] = P2[base] = 0.0;
    for (int i = 0; i < nx; ++i) {
      const double h = hf.at(i, j) - href;
      a += h;
      b += i * h;
      c += h * h;
      P0[base + i + 1] = a;
      P1[base + i + 1] = b;
      P2[base + i + 1] = c;
    }
  }

  // Ellipse row spans per yaw, in integer offsets.
  const int R = static_cast<int>(std::ceil(std::max(p.ex, p.ey) / res)) + 1;
  struct Span {
    int dy, a, b;
  };
  std::vector<std::vector<Span>> spans(static_cast<std::size_t>(spec.nyaw));
  for (int k = 0; k < spec.nyaw; ++k) {
    const double c = std::cos(spec.yaw(k)), s = std::sin(spec.yaw(k));
    for (int dy = -R; dy <= R; ++dy) {
      int a = R + 1, b = -R - 1;
      for (int dx = -R; dx <= R; ++dx)
        if (in_ellipse(dx * res, dy * res, c, s, p)) {
          a = std::min(a, dx);
          b = std::max(b, dx);
        }
      if (a <= b) spans[k].push_back({dy, a, b});
    }
  }

  // Pure-geometry moments of unclipped footprints, shared by all interior states of a yaw.
  struct Moments {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  };
  std::vector<Moments> full(static_cast<std::size_t>(spec.nyaw));
  std::vector<double> yc(static_cast<std::size_t>(spec.nyaw)), ys(static_cast<std::size_t>(spec.nyaw));
  for (int k = 0; k < spec.nyaw; ++k) {
    yc[k] = std::cos(spec.yaw(k));
    ys[k] = std::sin(spec.yaw(k));
    Moments& m = full[k];
    for (const Span& sp : spans[k]) {
      const double cnt = sp.b - sp.a + 1, s1 = 0.5 * (sp.a + sp.b) * cnt;
      m.n += cnt;
      m.sx += s1;
      m.sxx += detail::sum_sq(sp.a, sp.b);
      m.sy += sp.dy * cnt;
      m.syy += static_cast<double>(sp.dy) * sp.dy * cnt;
      m.sxy += sp.dy * s1;
    }
  }

  Se2RiskGrid g(spec);
#pragma omp parallel for schedule(static) collapse(2)
  for (int k = 0; k < spec.nyaw; ++k)
    for (int j = 0; j < spec.ny; ++j) {
      for (int i = 0; i < spec.nx; ++i) {
        const int ci = i + oi, cj = j + oj;
        double n = 0, sx = 0, sy = 0, sh = 0, sxx = 0, sxy = 0, syy = 0, sxh = 0, syh = 0, shh = 0;
        if (ci >= R && cj >= R && ci + R < nx && cj + R < ny) {
          const Moments& m = full[k];
          n = m.n;
          sx = m.sx;
          sy = m.sy;
          sxx = m.sxx;
          sxy = m.sxy;
          syy = m.syy;
          for (const Span& sp : spans[k]) {
            const std::size_t base = static_cast<std::size_t>(cj + sp.dy) * W + ci;
            const double h0 = P0[base + sp.b + 1] - P0[base + sp.a];
            sh += h0;
            sxh += P1[base + sp.b + 1] - P1[base + sp.a] - ci * h0;
            syh += sp.dy * h0;
            shh += P2[base + sp.b + 1] - P2[base + sp.a];
          }
        } else {
          for (const Span& sp : spans[k]) {
            const int jj = cj + sp.dy;
            if (jj < 0 || jj >= ny) continue;
            const int a = std::max(sp.a, -ci), b = std::min(sp.b, nx - 1 - ci);
            if (a > b) continue;
            const double cnt = b - a + 1;
            const double s1 = 0.5 * (a + b) * cnt;
            const double s2 = detail::sum_sq(a, b);
            const std::size_t base = static_cast<std::size_t>(jj) * W;
            const double h0 = P0[base + ci + b + 1] - P0[base + ci + a];
            const double h1 = P1[base + ci + b + 1] - P1[base + ci + a] - ci * h0;
            const double h2 = P2[base + ci + b + 1] - P2[base + ci + a];
            n += cnt;
            sx += s1;
            sxx += s2;
            sy += sp.dy * cnt;
            syy += static_cast<double>(sp.dy) * sp.dy * cnt;
            sxy += sp.dy * s1;
            sh += h0;
            sxh += h1;
            syh += sp.dy * h0;
            shh += h2;
          }
        }
        const std::size_t idx = spec.index(i, j, k);
        if (n < 3) {
          g.set(idx, Assessment{});
          continue;
        }
        const double mx = sx / n, my = sy / n, mh = sh / n;
        Mat3 cov;
        cov(0, 0) = (sxx / n - mx * mx) * res * res;
        cov(1, 1) = (syy / n - my * my) * res * res;
        cov(0, 1) = cov(1, 0) = (sxy / n - mx * my) * res * res;
        cov(2, 2) = std::max(shh / n - mh * mh, 0.0);
        cov(0, 2) = cov(2, 0) = (sxh / n - mx * mh) * res;
        cov(1, 2) = cov(2, 1) = (syh / n - my * mh) * res;
        g.set(idx, assess_covariance(cov, static_cast<int>(n), yc[k], ys[k], p));
      }
    }
  return g;
}

/// Per-yaw-layer signed distance (m): distance to the nearest obstacle cell center outside,
/// minus (distance to the nearest free cell - res) inside. Obstacles are Risk = 1 states.
inline void sdf_from_obstacles(Se2RiskGrid& g) {
  const auto& sp = g.spec();
  const std::size_t plane = static_cast<std::size_t>(sp.nx) * sp.ny;
  const double sentinel = std::hypot(sp.nx, sp.ny) * sp.resolution;
#pragma omp parallel for schedule(static)
  for (int k = 0; k < sp.nyaw; ++k) {
    std::vector<char> obst(plane), free_(plane);
    bool any_obst = false, any_free = false;
    for (std::size_t q = 0; q < plane; ++q) {
      obst[q] = g.obstacle(k * plane + q) ? 1 : 0;
      free_[q] = !obst[q];
      any_obst |= obst[q] != 0;
      any_free |= free_[q] != 0;
    }
    double* out = g.sdf().data() + k * plane;
    if (!any_obst) {
      std::fill(out, out + plane, sentinel);
      continue;
    }
    if (!any_free) {
      std::fill(out, out + plane, -sentinel);
      continue;
    }
    const auto d_obst = squared_edt(obst, sp.nx, sp.ny);
    const auto d_free = squared_edt(free_, sp.nx, sp.ny);
    for (std::size_t q = 0; q < plane; ++q)
      out[q] = obst[q] ? -(std::sqrt(d_free[q]) - 1.0) * sp.resolution : std::sqrt(d_obst[q]) * sp.resolution;
  }
  g.mark_sdf();
}

}  // namespace sebnav
