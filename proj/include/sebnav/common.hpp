#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sebnav {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kGravity = 9.81;

enum class ErrorCode {
  kInvalidParameter,
  kInvalidMeasurement,
  kDegenerateFrame,
  kDegenerateState,
  kOutOfBounds,
  kIllConditioned,
  kInvalidEndpoint,
  kNoPath,
  kNonconvergence,
  kEmptyMap,
  kIo,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParameter: return "invalid-parameter";
    case ErrorCode::kInvalidMeasurement: return "invalid-measurement";
    case ErrorCode::kDegenerateFrame: return "degenerate-frame";
    case ErrorCode::kDegenerateState: return "degenerate-state";
    case ErrorCode::kOutOfBounds: return "out-of-bounds";
    case ErrorCode::kIllConditioned: return "ill-conditioned";
    case ErrorCode::kInvalidEndpoint: return "invalid-endpoint";
    case ErrorCode::kNoPath: return "no-path";
    case ErrorCode::kNonconvergence: return "nonconvergence";
    case ErrorCode::kEmptyMap: return "empty-map";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const char* what) {
  if (!cond) throw Error(code, what);
}

/// Planar pose (x, y, yaw).
struct Se2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

/// Wraps an angle to [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Rodrigues exponential map so(3) -> SO(3).
inline Mat3 so3_exp(const Vec3& w) {
  const double th = w.norm();
  if (th < 1e-12) return Mat3::Identity() + skew(w);
  return Eigen::AngleAxisd(th, w / th).toRotationMatrix();
}

/// Symmetric and positive semidefinite up to a scale-relative tolerance.
inline bool is_psd(const Mat3& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  Eigen::SelfAdjointEigenSolver<Mat3> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -1e-12 * scale;
}

/// Matrix square root L with L*L^T = m, valid for PSD input.
inline Mat3 psd_sqrt(const Mat3& m) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(m);
  Vec3 ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

/// SplitMix64 finalizer, used to derive independent per-subsystem seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Scenario-level RNG that hands out reproducible child engines per subsystem.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed) : seed_(seed) {}
  std::mt19937_64 stream(std::uint64_t id) const { return std::mt19937_64(mix_seed(seed_, id)); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

enum class RngStream : std::uint64_t {
  kTerrain = 1,
  kSensor = 2,
  kPose = 3,
  kSampling = 4,
};

inline int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace sebnav
