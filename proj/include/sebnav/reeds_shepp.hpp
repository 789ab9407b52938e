#pragma once

#include "sebnav/common.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace sebnav {

enum class RsTurn : char { kLeft = 'L', kStraight = 'S', kRight = 'R' };

struct RsSegment {
  RsTurn turn;
  double length;  // signed metres; sign is the gear
};

struct RsWord {
  std::vector<RsSegment> segments;
  double length = 0.0;
};

namespace rs {

// The 48 Reeds-Shepp words are generated from nine base formulas through time-flip,
// reflection and backwards symmetries. Base formulas work on a unit turning radius.

constexpr double kZero = 1e-12;

inline double mod2pi(double x) {
  double v = std::fmod(x, 2 * kPi);
  if (v < -kPi) v += 2 * kPi;
  else if (v > kPi) v -= 2 * kPi;
  return v;
}

inline void polar(double x, double y, double& r, double& t) {
  r = std::hypot(x, y);
  t = std::atan2(y, x);
}

inline void tau_omega(double u, double v, double xi, double eta, double phi, double& tau, double& omega) {
  const double delta = mod2pi(u - v), A = std::sin(u) - std::sin(delta), B = std::cos(u) - std::cos(delta) - 1.0;
  const double t1 = std::atan2(eta * A - xi * B, xi * A + eta * B);
  const double t2 = 2.0 * (std::cos(delta) - std::cos(v) - std::cos(u)) + 3.0;
  tau = t2 < 0 ? mod2pi(t1 + kPi) : mod2pi(t1);
  omega = mod2pi(tau - u + v - phi);
}

inline bool LpSpLp(double x, double y, double phi, double& t, double& u, double& v) {
  polar(x - std::sin(phi), y - 1.0 + std::cos(phi), u, t);
  if (t >= -kZero) {
    v = mod2pi(phi - t);
    if (v >= -kZero) return true;
  }
  return false;
}

inline bool LpSpRp(double x, double y, double phi, double& t, double& u, double& v) {
  double t1, u1;
  polar(x + std::sin(phi), y - 1.0 - std::cos(phi), u1, t1);
  u1 = u1 * u1;
  if (u1 >= 4.0) {
    u = std::sqrt(u1 - 4.0);
    const double theta = std::atan2(2.0, u);
    t = mod2pi(t1 + theta);
    v = mod2pi(t - phi);
    return t >= -kZero && v >= -kZero;
  }
  return false;
}

inline bool LpRmL(double x, double y, double phi, double& t, double& u, double& v) {
  const double xi = x - std::sin(phi), eta = y - 1.0 + std::cos(phi);
  double u1, theta;
  polar(xi, eta, u1, theta);
  if (u1 <= 4.0) {
    u = -2.0 * std::asin(0.25 * u1);
    t = mod2pi(theta + 0.5 * u + kPi);
    v = mod2pi(phi - t + u);
    return t >= -kZero && u <= kZero;
  }
  return false;
}

inline bool LpRupLumRm(double x, double y, double phi, double& t, double& u, double& v) {
  const double xi = x + std::sin(phi), eta = y - 1.0 - std::cos(phi);
  const double rho = 0.25 * (2.0 + std::hypot(xi, eta));
  if (rho <= 1.0) {
    u = std::acos(rho);
    tau_omega(u, -u, xi, eta, phi, t, v);
    return t >= -kZero && v <= kZero;
  }
  return false;
}

inline bool LpRumLumRp(double x, double y, double phi, double& t, double& u, double& v) {
  const double xi = x + std::sin(phi), eta = y - 1.0 - std::cos(phi);
  const double rho = (20.0 - xi * xi - eta * eta) / 16.0;
  if (rho >= 0 && rho <= 1) {
    u = -std::acos(rho);
    if (u >= -0.5 * kPi) {
      tau_omega(u, u, xi, eta, phi, t, v);
      return t >= -kZero && v >= -kZero;
    }
  }
  return false;
}

inline bool LpRmSmLm(double x, double y, double phi, double& t, double& u, double& v) {
  const double xi = x - std::sin(phi), eta = y - 1.0 + std::cos(phi);
  double rho, theta;
  polar(xi, eta, rho, theta);
  if (rho >= 2.0) {
    const double r = std::sqrt(rho * rho - 4.0);
    u = 2.0 - r;
    t = mod2pi(theta + std::atan2(r, -2.0));
    v = mod2pi(phi - 0.5 * kPi - t);
    return t >= -kZero && u <= kZero && v <= kZero;
  }
  return false;
}

inline bool LpRmSmRm(double x, double y, double phi, double& t, double& u, double& v) {
  const double xi = x + std::sin(phi), eta = y - 1.0 - std::cos(phi);
  double rho, theta;
  polar(-eta, xi, rho, theta);
  if (rho >= 2.0) {
    t = theta;
    u = 2.0 - rho;
    v = mod2pi(t + 0.5 * kPi - phi);
    return t >= -kZero && u <= kZero && v <= kZero;
  }
  return false;
}

inline bool LpRmSLmRp(double x, double y, double phi, double& t, double& u, double& v) {
  const double xi = x + std::sin(phi), eta = y - 1.0 - std::cos(phi);
  double rho, theta;
  polar(xi, eta, rho, theta);
  if (rho >= 2.0) {
    u = 4.0 - std::sqrt(rho * rho - 4.0);
    if (u <= kZero) {
      t = mod2pi(std::atan2((4.0 - u) * xi - 2.0 * eta, -2.0 * xi + (u - 4.0) * eta));
      v = mod2pi(t - phi);
      return t >= -kZero && v >= -kZero;
    }
  }
  return false;
}

using T = RsTurn;
constexpr T L = T::kLeft, S = T::kStraight, R = T::kRight;

struct Best {
  std::array<T, 5> type{};
  std::array<double, 5> len{};
  int n = 0;
  double total = std::numeric_limits<double>::infinity();
};

// Swaps L and R: the reflected word.
inline T flip(T t) { return t == L ? R : t == R ? L : S; }

/// Tries a base formula under time flip and reflection. assemble(t, u, v, sign) returns the
/// signed segment lengths of the word for the given time-flip sign.
template <class F, class A>
void four_ways(F&& base, double x, double y, double phi, std::initializer_list<T> ty, Best& b, A&& assemble) {
  double t, u, v;
  std::vector<T> tys(ty), ref;
  for (T q : tys) ref.push_back(flip(q));
  auto offer = [&](const std::vector<T>& tt, double s) {
    const std::vector<double> ln = assemble(s * t, s * u, s * v, s);
    double sum = 0.0;
    for (double l : ln) sum += std::abs(l);
    if (sum >= b.total) return;
    b.total = sum;
    b.n = int(tt.size());
    for (int i = 0; i < b.n; ++i) {
      b.type[i] = tt[i];
      b.len[i] = ln[i];
    }
  };
  if (base(x, y, phi, t, u, v)) offer(tys, 1.0);
  if (base(-x, y, -phi, t, u, v)) offer(tys, -1.0);  // time flip
  if (base(x, -y, -phi, t, u, v)) offer(ref, 1.0);   // reflect
  if (base(-x, -y, phi, t, u, v)) offer(ref, -1.0);  // both
}

inline Best solve_unit(double x, double y, double phi) {
  Best b;
  const double h = 0.5 * kPi;
  auto tuv = [](double t, double u, double v, double) { return std::vector<double>{t, u, v}; };
  auto vut = [](double t, double u, double v, double) { return std::vector<double>{v, u, t}; };
  // backwards counterparts run the base formula on the inverted problem
  const double xb = x * std::cos(phi) + y * std::sin(phi), yb = x * std::sin(phi) - y * std::cos(phi);
  // CSC
  four_ways(LpSpLp, x, y, phi, {L, S, L}, b, tuv);
  four_ways(LpSpRp, x, y, phi, {L, S, R}, b, tuv);
  // CCC
  four_ways(LpRmL, x, y, phi, {L, R, L}, b, tuv);
  four_ways(LpRmL, xb, yb, phi, {L, R, L}, b, vut);
  // CCCC
  four_ways(LpRupLumRm, x, y, phi, {L, R, L, R}, b,
            [](double t, double u, double v, double) { return std::vector<double>{t, u, -u, v}; });
  four_ways(LpRumLumRp, x, y, phi, {L, R, L, R}, b,
            [](double t, double u, double v, double) { return std::vector<double>{t, u, u, v}; });
  // CCSC / CSCC
  auto ccsc = [h](double t, double u, double v, double s) { return std::vector<double>{t, -s * h, u, v}; };
  auto cscc = [h](double t, double u, double v, double s) { return std::vector<double>{v, u, -s * h, t}; };
  four_ways(LpRmSmLm, x, y, phi, {L, R, S, L}, b, ccsc);
  four_ways(LpRmSmRm, x, y, phi, {L, R, S, R}, b, ccsc);
  four_ways(LpRmSmLm, xb, yb, phi, {L, S, R, L}, b, cscc);
  four_ways(LpRmSmRm, xb, yb, phi, {R, S, R, L}, b, cscc);
  // CCSCC
  four_ways(LpRmSLmRp, x, y, phi, {L, R, S, L, R}, b,
            [h](double t, double u, double v, double s) { return std::vector<double>{t, -s * h, u, -s * h, v}; });
  return b;
}

}  // namespace rs

/// Advances a pose along one segment of a word with turning radius rho.
inline Se2 rs_advance(const Se2& p, const RsSegment& seg, double rho, double dist) {
  Se2 q = p;
  if (seg.turn == RsTurn::kStraight) {
    q.x += dist * std::cos(p.theta);
    q.y += dist * std::sin(p.theta);
    return q;
  }
  const double k = seg.turn == RsTurn::kLeft ? 1.0 : -1.0;
  const double dth = k * dist / rho;
  q.x += k * rho * (std::sin(p.theta + dth) - std::sin(p.theta));
  q.y += k * rho * (-std::cos(p.theta + dth) + std::cos(p.theta));
  q.theta = p.theta + dth;
  return q;
}

inline Se2 rs_endpoint(const Se2& from, const RsWord& w, double rho) {
  Se2 p = from;
  for (const auto& s : w.segments) p = rs_advance(p, s, rho, s.length);
  p.theta = wrap_angle(p.theta);
  return p;
}

/// Shortest Reeds-Shepp word from `from` to `to` with minimum turning radius rho.
inline RsWord reeds_shepp_shoot(const Se2& from, const Se2& to, double rho) {
  require(rho > 0.0, ErrorCode::kInvalidParameter, "turning radius must be positive");
  const double dx = to.x - from.x, dy = to.y - from.y, c = std::cos(from.theta), s = std::sin(from.theta);
  const double x = (c * dx + s * dy) / rho, y = (-s * dx + c * dy) / rho;
  const double phi = wrap_angle(to.theta - from.theta);
  const rs::Best b = rs::solve_unit(x, y, phi);
  RsWord w;
  for (int i = 0; i < b.n; ++i) {
    if (std::abs(b.len[i]) <= rs::kZero) continue;
    w.segments.push_back({b.type[i], b.len[i] * rho});
    w.length += std::abs(b.len[i]) * rho;
  }
  return w;
}

/// Unsigned length of the shortest word.
inline double reeds_shepp_distance(const Se2& from, const Se2& to, double rho) {
  return reeds_shepp_shoot(from, to, rho).length;
}

struct PathPose {
  Se2 pose;
  int eta = 1;
};

/// Samples a word at spacing <= step; the first pose is `from`, the last the endpoint.
inline std::vector<PathPose> rs_sample(const Se2& from, const RsWord& w, double rho, double step) {
  std::vector<PathPose> out;
  Se2 p = from;
  for (const auto& seg : w.segments) {
    const int eta = seg.length >= 0 ? 1 : -1;
    if (out.empty()) out.push_back({p, eta});
    const int n = std::max(1, int(std::ceil(std::abs(seg.length) / step)));
    for (int k = 1; k <= n; ++k) {
      Se2 q = rs_advance(p, seg, rho, seg.length * double(k) / n);
      out.push_back({q, eta});
    }
    p = rs_advance(p, seg, rho, seg.length);
  }
  if (out.empty()) out.push_back({from, 1});
  return out;
}

/// Shortest forward-only (Dubins) word; used when reversing is disabled.
inline RsWord dubins_shoot(const Se2& from, const Se2& to, double rho) {
  require(rho > 0.0, ErrorCode::kInvalidParameter, "turning radius must be positive");
  const double dx = (to.x - from.x) / rho, dy = (to.y - from.y) / rho;
  const double d = std::hypot(dx, dy), th = std::atan2(dy, dx);
  auto m = [](double a) {
    a = std::fmod(a, 2 * kPi);
    return a < 0 ? a + 2 * kPi : a;
  };
  const double a = m(from.theta - th), b = m(to.theta - th);
  const double sa = std::sin(a), sb = std::sin(b), ca = std::cos(a), cb = std::cos(b), cab = std::cos(a - b);
  using T = RsTurn;
  struct Cand {
    T t0, t1, t2;
    double l0, l1, l2;
  };
  std::vector<Cand> cands;
  double p2 = 2 + d * d - 2 * cab + 2 * d * (sa - sb);
  if (p2 >= 0) {
    const double tmp = std::atan2(cb - ca, d + sa - sb);
    cands.push_back({T::kLeft, T::kStraight, T::kLeft, m(-a + tmp), std::sqrt(p2), m(b - tmp)});
  }
  p2 = 2 + d * d - 2 * cab + 2 * d * (sb - sa);
  if (p2 >= 0) {
    const double tmp = std::atan2(ca - cb, d - sa + sb);
    cands.push_back({T::kRight, T::kStraight, T::kRight, m(a - tmp), std::sqrt(p2), m(-b + tmp)});
  }
  p2 = -2 + d * d + 2 * cab + 2 * d * (sa + sb);
  if (p2 >= 0) {
    const double p = std::sqrt(p2), tmp = std::atan2(-ca - cb, d + sa + sb) - std::atan2(-2.0, p);
    cands.push_back({T::kLeft, T::kStraight, T::kRight, m(-a + tmp), p, m(-b + tmp)});
  }
  p2 = -2 + d * d + 2 * cab - 2 * d * (sa + sb);
  if (p2 >= 0) {
    const double p = std::sqrt(p2), tmp = std::atan2(ca + cb, d - sa - sb) - std::atan2(2.0, p);
    cands.push_back({T::kRight, T::kStraight, T::kLeft, m(a - tmp), p, m(b - tmp)});
  }
  double q = (6 - d * d + 2 * cab + 2 * d * (sa - sb)) / 8;
  if (std::abs(q) <= 1) {
    const double p = m(2 * kPi - std::acos(q)), t = m(a - std::atan2(ca - cb, d - sa + sb) + p / 2);
    cands.push_back({T::kRight, T::kLeft, T::kRight, t, p, m(a - b - t + p)});
  }
  q = (6 - d * d + 2 * cab + 2 * d * (sb - sa)) / 8;
  if (std::abs(q) <= 1) {
    const double p = m(2 * kPi - std::acos(q)), t = m(-a - std::atan2(ca - cb, d + sa - sb) + p / 2);
    cands.push_back({T::kLeft, T::kRight, T::kLeft, t, p, m(b - a - t + p)});
  }
  RsWord best;
  best.length = std::numeric_limits<double>::infinity();
  for (const auto& c : cands) {
    RsWord w;
    for (auto [t, l] : {std::pair{c.t0, c.l0}, std::pair{c.t1, c.l1}, std::pair{c.t2, c.l2}}) {
      if (l * rho <= 1e-12) continue;
      w.segments.push_back({t, l * rho});
      w.length += l * rho;
    }
    if (w.length >= best.length) continue;
    // keep only candidates that actually land on the goal
    const Se2 e = rs_endpoint(from, w, rho);
    if (std::hypot(e.x - to.x, e.y - to.y) + std::abs(wrap_angle(e.theta - to.theta)) > 1e-8 * std::max(1.0, rho)) continue;
    best = w;
  }
  return best;
}

}  // namespace sebnav
