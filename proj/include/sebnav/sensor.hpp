#pragma once

#include "sebnav/common.hpp"
#include "sebnav/terrain.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace sebnav {

struct SensorModel {
  double max_range = 10.0;
  double azimuth_res = 2.0 * kPi / 360.0;
  double elevation_min = -0.6;
  double elevation_max = 0.1;
  double elevation_res = 0.05;
  Mat3 sigma_s = Mat3::Identity() * 1e-4;  // per-point noise, sensor frame, m^2
  Mat3 R_BS = Mat3::Identity();            // sensor -> body rotation
  Vec3 p_BS = Vec3(0.0, 0.0, 0.5);         // sensor origin in body frame

  void validate() const {
    require(max_range > 0.0, ErrorCode::kInvalidParameter, "max_range must be positive");
    require(azimuth_res > 0.0 && elevation_res > 0.0, ErrorCode::kInvalidParameter, "angular resolution");
    require(is_psd(sigma_s), ErrorCode::kInvalidParameter, "sensor covariance not PSD");
    require((R_BS.transpose() * R_BS - Mat3::Identity()).norm() < 1e-9 && R_BS.determinant() > 0.0,
            ErrorCode::kInvalidParameter, "extrinsic rotation not orthonormal");
  }
};

struct NoisyPose {
  Vec3 p = Vec3::Zero();
  Mat3 R = Mat3::Identity();
  Mat3 sigma_b = Mat3::Zero();  // position covariance, m^2
  Mat3 sigma_r = Mat3::Zero();  // attitude covariance in the right tangent space, rad^2
};

struct ScanResult {
  std::vector<Vec3> points;  // sensor frame
  bool sensor_below_terrain = false;
};

/// Unit ray directions in the sensor frame on an azimuth x elevation lattice.
inline std::vector<Vec3> sensor_rays(const SensorModel& m) {
  std::vector<Vec3> rays;
  const int na = std::max(1, static_cast<int>(std::lround(2.0 * kPi / m.azimuth_res)));
  const int ne = std::max(1, static_cast<int>(std::floor((m.elevation_max - m.elevation_min) / m.elevation_res + 1e-9)) + 1);
  rays.reserve(static_cast<std::size_t>(na) * ne);
  for (int e = 0; e < ne; ++e) {
    const double el = m.elevation_min + e * m.elevation_res;
    for (int a = 0; a < na; ++a) {
      const double az = -kPi + a * (2.0 * kPi / na);
      rays.emplace_back(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    }
  }
  return rays;
}

inline double march_step(const HeightField& hf) { return 0.5 * hf.resolution; }
inline double march_step(const AnalyticTerrain&) { return 0.02; }

/// First ray-terrain hit parameter in [0, max_range], or a negative value.
template <typename Terrain>
double intersect_ray(const Terrain& terrain, const Vec3& o, const Vec3& d, double max_range) {
  auto gap = [&](double t, bool* inside) {
    const Vec3 q = o + t * d;
    *inside = terrain.contains(q.x(), q.y());
    return *inside ? q.z() - terrain.height(q.x(), q.y()) : 1.0;
  };
  const double step = march_step(terrain);
  bool inside = true;
  double t_prev = 0.0;
  if (gap(0.0, &inside) <= 0.0 || !inside) return -1.0;
  for (double t = step;; t += step) {
    const double tc = std::min(t, max_range);
    const double g = gap(tc, &inside);
    if (!inside) return -1.0;
    if (g <= 0.0) {
      double lo = t_prev, hi = tc;
      for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        bool in2 = true;
        (gap(mid, &in2) > 0.0 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    if (tc >= max_range) return -1.0;
    t_prev = tc;
  }
}

/// Scans terrain from the given (true) pose. Noise is added when rng is non-null.
template <typename Terrain>
ScanResult simulate_scan(const Terrain& terrain, const NoisyPose& pose, const SensorModel& model,
                         std::mt19937_64* rng, const std::vector<Vec3>& rays) {
  model.validate();
  ScanResult out;
  const Mat3 R_WS = pose.R * model.R_BS;
  const Vec3 o = pose.p + pose.R * model.p_BS;
  if (!terrain.contains(o.x(), o.y()) || o.z() <= terrain.height(o.x(), o.y())) {
    out.sensor_below_terrain = true;
    return out;
  }
  std::vector<double> hit(rays.size(), -1.0);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < static_cast<long>(rays.size()); ++r)
    hit[r] = intersect_ray(terrain, o, R_WS * rays[r].normalized(), model.max_range);

  const Mat3 L = psd_sqrt(model.sigma_s);
  const bool noisy = rng != nullptr && model.sigma_s.cwiseAbs().maxCoeff() > 0.0;
  std::normal_distribution<double> n01;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    if (hit[r] < 0.0) continue;
    Vec3 s = hit[r] * rays[r].normalized();
    if (noisy) s += L * Vec3(n01(*rng), n01(*rng), n01(*rng));
    out.points.push_back(s);
  }
  return out;
}

template <typename Terrain>
ScanResult simulate_scan(const Terrain& terrain, const NoisyPose& pose, const SensorModel& model,
                         std::mt19937_64* rng = nullptr) {
  return simulate_scan(terrain, pose, model, rng, sensor_rays(model));
}

inline Vec3 sensor_to_world(const Vec3& s, const NoisyPose& pose, const SensorModel& m) {
  return pose.R * (m.R_BS * s + m.p_BS) + pose.p;
}

inline Mat3 orthonormalize(const Mat3& R) { return Eigen::Quaterniond(R).normalized().toRotationMatrix(); }

/// Perturbs a true pose: p + N(0, sigma_b), R exp(N(0, sigma_r)^).
inline NoisyPose sample_noisy_pose(const Vec3& p, const Mat3& R, const Mat3& sigma_b, const Mat3& sigma_r,
                                   std::mt19937_64& rng) {
  require(is_psd(sigma_b) && is_psd(sigma_r), ErrorCode::kInvalidParameter, "pose covariance not PSD");
  NoisyPose out;
  out.sigma_b = sigma_b;
  out.sigma_r = sigma_r;
  out.p = p;
  out.R = R;
  std::normal_distribution<double> n01;
  if (sigma_b.cwiseAbs().maxCoeff() > 0.0) out.p = p + psd_sqrt(sigma_b) * Vec3(n01(rng), n01(rng), n01(rng));
  if (sigma_r.cwiseAbs().maxCoeff() > 0.0)
    out.R = orthonormalize(R * so3_exp(psd_sqrt(sigma_r) * Vec3(n01(rng), n01(rng), n01(rng))));
  return out;
}

}  // namespace sebnav
