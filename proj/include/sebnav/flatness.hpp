#pragma once

#include "sebnav/common.hpp"
#include "sebnav/dual.hpp"
#include "sebnav/terrain_source.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace sebnav {

struct RobotParams {
  double wheelbase = 0.6;
  double gravity = kGravity;
  double delta_max = 0.785;
  double v_max = 1.0;     // longitudinal speed
  double a_lon_max = 5.0;
  double a_lat_max = 10.0;
  double phi_x_max = 0.52;
  double phi_y_max = 0.52;

  void validate() const {
    require(wheelbase > 0 && gravity > 0 && delta_max > 0 && v_max > 0 && a_lon_max > 0 && a_lat_max > 0 &&
                phi_x_max > 0 && phi_y_max > 0,
            ErrorCode::kInvalidParameter, "robot params must be positive");
  }
};

struct TerrainFrame {
  double z = 0.0;
  Vec3 z_b = Vec3::UnitZ(), x_b = Vec3::UnitX(), y_b = Vec3::UnitY();
  double theta = 0.0;

  Mat3 rotation() const {
    Mat3 R;
    R.col(0) = x_b;
    R.col(1) = y_b;
    R.col(2) = z_b;
    return R;
  }
  Vec3 x_yaw() const { return Vec3(std::cos(theta), std::sin(theta), 0.0); }
  Vec3 y_yaw() const { return Vec3(-std::sin(theta), std::cos(theta), 0.0); }
};

/// Derivatives of the path w.r.t. s, plus the time law s(t).
struct FlatState {
  double dx = 1.0, dy = 0.0;    // x'(s), y'(s)
  double ddx = 0.0, ddy = 0.0;  // x''(s), y''(s)
  double sd = 0.0, sdd = 0.0;   // s-dot, s-ddot
  int eta = 1;
};

struct ControlOutputs {
  double v_x = 0.0, omega_z = 0.0, delta = 0.0, a_x = 0.0, a_y = 0.0, theta = 0.0;
};

namespace flat {

template <class T>
struct V3 {
  T x, y, z;
};

template <class T>
V3<T> cross(const V3<T>& a, const V3<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

/// Body axes from z_b and the heading (c, s) = (cos θ, sin θ). Returns |z_b x x_yaw| for the caller to check.
template <class T>
T axes(const V3<T>& zb, const T& c, const T& s, V3<T>* xb, V3<T>* yb) {
  using std::sqrt;
  const V3<T> xyaw{c, s, T(0.0)};
  V3<T> y = cross(zb, xyaw);
  const T n = sqrt(y.x * y.x + y.y * y.y + y.z * y.z);
  y = {y.x / n, y.y / n, y.z / n};
  *yb = y;
  *xb = cross(y, zb);
  return n;
}

/// Everything the optimizer needs at one sample, generic over double / Dual.
template <class T>
struct Eval {
  T vx, omega, delta, ax, ay, phi_x, phi_y;
  T xb_dot_xyaw, yb_dot_yyaw, zb_z, speed2, frame_norm;
};

/// theta = atan2(eta y', eta x') is encoded through (c, s) = eta (x', y') / |v|.
/// The steering angle uses tan δ = L ω / v_x with ṡ cancelled, so it stays defined at rest
/// and is invariant under a joint sign flip of ω and v_x.
template <class T>
Eval<T> evaluate(const T& dx, const T& dy, const T& ddx, const T& ddy, const T& sd, const T& sdd, int eta,
                 const V3<T>& zb, double L, double g) {
  using std::asin;
  using std::atan;
  using std::sqrt;
  Eval<T> e;
  e.speed2 = dx * dx + dy * dy;
  const T norm = sqrt(e.speed2);
  const T c = dx * double(eta) / norm, s = dy * double(eta) / norm;
  V3<T> xb, yb;
  e.frame_norm = axes(zb, c, s, &xb, &yb);
  e.xb_dot_xyaw = xb.x * c + xb.y * s;
  e.yb_dot_yyaw = yb.y * c - yb.x * s;
  e.zb_z = zb.z;
  const T cr = dx * ddy - dy * ddx;
  const T va = dx * ddx + dy * ddy;
  e.vx = double(eta) * sd * norm / e.xb_dot_xyaw;
  e.omega = cr * sd / (e.speed2 * e.zb_z);
  e.delta = atan(L * cr * e.xb_dot_xyaw / (double(eta) * e.speed2 * norm * e.zb_z));
  e.ax = double(eta) * (sd * sd * va + sdd * e.speed2) / (norm * e.xb_dot_xyaw) + g * xb.z;
  e.ay = double(eta) * cr * sd * sd / (norm * e.yb_dot_yyaw) + g * yb.z;
  e.phi_x = asin(xb.z);
  e.phi_y = asin(yb.z);
  return e;
}

}  // namespace flat

/// Body frame from a terrain normal and heading.
inline TerrainFrame frame_from_normal(const Vec3& z_b, double theta) {
  TerrainFrame f;
  f.theta = theta;
  const Vec3 xyaw(std::cos(theta), std::sin(theta), 0.0);
  const Vec3 y = z_b.cross(xyaw);
  const double n = y.norm();
  require(n > 1e-9 && z_b.z() > 0.0, ErrorCode::kDegenerateFrame, "z_b parallel to heading");
  f.z_b = z_b.normalized();
  f.y_b = f.z_b.cross(xyaw).normalized();
  f.x_b = f.y_b.cross(f.z_b);
  return f;
}

inline TerrainFrame terrain_pose(const TerrainSource& src, const Se2& s) {
  require(src.contains(s.x, s.y), ErrorCode::kOutOfBounds, "pose outside terrain");
  TerrainFrame f = frame_from_normal(src.normal(s.x, s.y, s.theta, nullptr), s.theta);
  f.z = src.height(s.x, s.y);
  return f;
}

inline ControlOutputs flat_outputs(const FlatState& fs, const TerrainFrame& fr, const RobotParams& p) {
  require(fs.eta == 1 || fs.eta == -1, ErrorCode::kInvalidParameter, "gear must be +-1");
  const double sp2 = fs.dx * fs.dx + fs.dy * fs.dy;
  const double theta = std::atan2(fs.eta * fs.dy, fs.eta * fs.dx);
  const Vec3 xyaw(std::cos(theta), std::sin(theta), 0.0), yyaw(-std::sin(theta), std::cos(theta), 0.0);
  // Use the caller's frame but rebuilt at this heading, so a stale theta cannot leak in.
  const TerrainFrame f = frame_from_normal(fr.z_b, theta);
  const double xx = f.x_b.dot(xyaw), yy = f.y_b.dot(yyaw), zz = f.z_b.z();
  require(sp2 > 1e-9 && xx > 1e-9 && yy > 1e-9 && zz > 1e-9, ErrorCode::kDegenerateState, "degenerate flat state");
  const flat::V3<double> zb{f.z_b.x(), f.z_b.y(), f.z_b.z()};
  const auto e = flat::evaluate<double>(fs.dx, fs.dy, fs.ddx, fs.ddy, fs.sd, fs.sdd, fs.eta, zb, p.wheelbase, p.gravity);
  ControlOutputs o;
  o.v_x = e.vx;
  o.omega_z = e.omega;
  o.delta = e.delta;
  o.a_x = e.ax;
  o.a_y = e.ay;
  o.theta = theta;
  return o;
}

struct ControlSample {
  double v = 0.0;
  double delta = 0.0;
};

struct TracePoint {
  double t = 0.0;
  double x = 0.0, y = 0.0, z = 0.0, theta = 0.0;
  Mat3 R = Mat3::Identity();
  double phi_x = 0.0, phi_y = 0.0;
  double v_x = 0.0, delta = 0.0, a_x = 0.0, a_y = 0.0;
};

struct KinematicTrace {
  std::vector<TracePoint> points;
  bool truncated = false;
};

/// Integrates the terrain kinematics with RK4. Controls are sampled every dt_controls and
/// linearly interpolated. Position moves along the horizontal heading with speed v_x x_b.x_yaw
/// (lateral slip from the tilted x_b is dropped), yaw rate is (v_x tan δ / L) z_b.b3, and the
/// attitude is rebuilt on the terrain at every step.
inline KinematicTrace integrate_kinematics(const std::vector<ControlSample>& controls, double dt_controls,
                                           const TerrainSource& src, const Se2& start, double dt,
                                           const RobotParams& p) {
  require(dt > 0.0 && dt_controls > 0.0, ErrorCode::kInvalidParameter, "dt must be positive");
  require(!controls.empty(), ErrorCode::kInvalidParameter, "no controls");
  for (const auto& c : controls)
    require(std::isfinite(c.v) && std::isfinite(c.delta), ErrorCode::kInvalidParameter, "controls not finite");
  const double T = dt_controls * double(controls.size() - 1);
  auto control = [&](double t) {
    const double u = std::clamp(t / dt_controls, 0.0, double(controls.size() - 1));
    const std::size_t k = std::min<std::size_t>(std::size_t(u), controls.size() - 1);
    if (k + 1 >= controls.size()) return controls.back();
    const double a = u - double(k);
    return ControlSample{(1 - a) * controls[k].v + a * controls[k + 1].v,
                         (1 - a) * controls[k].delta + a * controls[k + 1].delta};
  };
  bool outside = false;
  auto rhs = [&](const Eigen::Vector3d& q, const ControlSample& u) {
    if (!src.contains(q.x(), q.y())) {
      outside = true;
      return Eigen::Vector3d(0, 0, 0);
    }
    const TerrainFrame f = frame_from_normal(src.normal(q.x(), q.y(), q.z(), nullptr), q.z());
    const double c = std::cos(q.z()), s = std::sin(q.z());
    const double along = u.v * f.x_b.dot(Vec3(c, s, 0.0));
    return Eigen::Vector3d(along * c, along * s, u.v * std::tan(u.delta) / p.wheelbase * f.z_b.z());
  };
  auto record = [&](double t, const Eigen::Vector3d& q, const ControlSample& u) {
    const TerrainFrame f = frame_from_normal(src.normal(q.x(), q.y(), q.z(), nullptr), q.z());
    TracePoint tp;
    tp.t = t;
    tp.x = q.x();
    tp.y = q.y();
    tp.z = src.height(q.x(), q.y());
    tp.theta = wrap_angle(q.z());
    tp.R = f.rotation();
    tp.phi_x = std::asin(std::clamp(f.x_b.z(), -1.0, 1.0));
    tp.phi_y = std::asin(std::clamp(f.y_b.z(), -1.0, 1.0));
    tp.v_x = u.v;
    tp.delta = u.delta;
    return tp;
  };

  KinematicTrace out;
  require(src.contains(start.x, start.y), ErrorCode::kOutOfBounds, "start outside terrain");
  Eigen::Vector3d q(start.x, start.y, start.theta);
  const std::size_t steps = std::size_t(std::ceil(T / dt - 1e-9));
  out.points.reserve(steps + 1);
  out.points.push_back(record(0.0, q, control(0.0)));
  for (std::size_t i = 0; i < steps; ++i) {
    const double t0 = double(i) * dt;
    const double h = std::min(dt, T - t0);
    const ControlSample u0 = control(t0), um = control(t0 + 0.5 * h), u1 = control(t0 + h);
    const Eigen::Vector3d k1 = rhs(q, u0);
    const Eigen::Vector3d k2 = rhs(q + 0.5 * h * k1, um);
    const Eigen::Vector3d k3 = rhs(q + 0.5 * h * k2, um);
    const Eigen::Vector3d k4 = rhs(q + h * k3, u1);
    const Eigen::Vector3d next = q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    if (outside || !src.contains(next.x(), next.y())) {
      out.truncated = true;
      break;
    }
    q = next;
    out.points.push_back(record(t0 + h, q, u1));
  }

  // Accelerations: a_x = d(v_x x_b.x_yaw)/dt / x_b.x_yaw + g x_b.b3, a_y = ω z_b.b3 v_x x_b.x_yaw / y_b.y_yaw + g y_b.b3.
  auto& pts = out.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto along = [&](const TracePoint& tp) {
      return tp.v_x * tp.R.col(0).dot(Vec3(std::cos(tp.theta), std::sin(tp.theta), 0.0));
    };
    const std::size_t a = i == 0 ? 0 : i - 1, b = std::min(i + 1, pts.size() - 1);
    auto& tp = pts[i];
    const double xx = tp.R.col(0).dot(Vec3(std::cos(tp.theta), std::sin(tp.theta), 0.0));
    const double yy = tp.R.col(1).dot(Vec3(-std::sin(tp.theta), std::cos(tp.theta), 0.0));
    const double dvdt = b > a ? (along(pts[b]) - along(pts[a])) / (pts[b].t - pts[a].t) : 0.0;
    const double omega = tp.v_x * std::tan(tp.delta) / p.wheelbase;
    tp.a_x = dvdt / xx + p.gravity * tp.R(2, 0);
    tp.a_y = omega * tp.R(2, 2) * tp.v_x * xx / yy + p.gravity * tp.R(2, 1);
  }
  return out;
}

inline void write_trace_csv(const std::string& path, const std::vector<TracePoint>& pts) {
  std::ofstream f(path);
  require(bool(f), ErrorCode::kIo, "cannot open trace file");
  f << "t,x,y,z,theta,phi_x,phi_y,v_x,delta,a_x,a_y\n";
  f.precision(10);
  for (const auto& p : pts)
    f << p.t << ',' << p.x << ',' << p.y << ',' << p.z << ',' << p.theta << ',' << p.phi_x << ',' << p.phi_y << ','
      << p.v_x << ',' << p.delta << ',' << p.a_x << ',' << p.a_y << '\n';
}

}  // namespace sebnav
