#pragma once

#include "sebnav/common.hpp"

#include <algorithm>
#include <cmath>

namespace sebnav {

struct SymEig3 {
  Vec3 values;  // ascending
  Vec3 min_vector;
};

namespace detail {

inline void sort3(double& a, double& b, double& c) {
  if (a > b) std::swap(a, b);
  if (b > c) std::swap(b, c);
  if (a > b) std::swap(a, b);
}

inline Vec3 null_vector(const Mat3& A, double lambda) {
  Mat3 M = A - lambda * Mat3::Identity();
  const Vec3 c01 = M.row(0).transpose().cross(M.row(1).transpose());
  const Vec3 c02 = M.row(0).transpose().cross(M.row(2).transpose());
  const Vec3 c12 = M.row(1).transpose().cross(M.row(2).transpose());
  const double n01 = c01.squaredNorm(), n02 = c02.squaredNorm(), n12 = c12.squaredNorm();
  if (n01 >= n02 && n01 >= n12 && n01 > 0.0) return c01 / std::sqrt(n01);
  if (n02 >= n12 && n02 > 0.0) return c02 / std::sqrt(n02);
  if (n12 > 0.0) return c12 / std::sqrt(n12);
  // Rank <= 1: any vector orthogonal to the dominant row.
  Vec3 r = M.row(0).transpose();
  if (M.row(1).squaredNorm() > r.squaredNorm()) r = M.row(1).transpose();
  if (M.row(2).squaredNorm() > r.squaredNorm()) r = M.row(2).transpose();
  if (r.squaredNorm() == 0.0) return Vec3::UnitZ();
  Vec3 o = std::abs(r.x()) < std::abs(r.z()) ? Vec3(1, 0, 0).cross(r) : Vec3(0, 0, 1).cross(r);
  return o.normalized();
}

}  // namespace detail

/// Closed-form eigenvalues (trigonometric solution of the characteristic cubic) and the
/// eigenvector of the smallest one. A matrix decoupled in z is handled as a 2x2 block plus
/// an exact axis, so level ground yields exactly (0, 0, 1).
inline SymEig3 sym_eig3(const Mat3& A) {
  SymEig3 out;
  if (A(0, 2) == 0.0 && A(1, 2) == 0.0) {
    const double a = A(0, 0), b = A(1, 1), c = A(0, 1);
    const double m = 0.5 * (a + b), r = std::hypot(0.5 * (a - b), c);
    double l0 = m - r, l1 = m + r, l2 = A(2, 2);
    if (l2 <= l0) {
      out.values = Vec3(l2, l0, l1);
      out.min_vector = Vec3::UnitZ();
      return out;
    }
    Vec3 v;
    if (c == 0.0) {
      v = a <= b ? Vec3::UnitX() : Vec3::UnitY();
    } else {
      v = Vec3(l0 - b, c, 0.0);
      if (std::abs(a - l0) > std::abs(b - l0)) v = Vec3(c, l0 - a, 0.0);
      v.normalize();
    }
    detail::sort3(l0, l1, l2);
    out.values = Vec3(l0, l1, l2);
    out.min_vector = v;
    return out;
  }
  const double scale = std::max(A.cwiseAbs().maxCoeff(), 1e-300);
  const Mat3 B = A / scale;
  const double q = B.trace() / 3.0;
  const Mat3 C = B - q * Mat3::Identity();
  const double p2 = (C.cwiseProduct(C)).sum() / 6.0;
  const double p = std::sqrt(p2);
  double l0, l1, l2;
  if (p < 1e-300) {
    l0 = l1 = l2 = q;
  } else {
    const double r = std::clamp((C / p).determinant() / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double cp = std::cos(phi), sp = std::sin(phi);
    l2 = q + 2.0 * p * cp;
    l0 = q + p * (-cp - std::sqrt(3.0) * sp);  // 2 cos(phi + 2 pi / 3)
    l1 = 3.0 * q - l0 - l2;
  }
  detail::sort3(l0, l1, l2);
  out.values = Vec3(l0, l1, l2) * scale;
  out.min_vector = detail::null_vector(B, l0);
  return out;
}

}  // namespace sebnav
