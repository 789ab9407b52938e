#pragma once

#include "sebnav/common.hpp"
#include "sebnav/dual.hpp"
#include "sebnav/flatness.hpp"
#include "sebnav/lbfgs.hpp"
#include "sebnav/minco.hpp"
#include "sebnav/search.hpp"
#include "sebnav/terrain_source.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace sebnav {

struct OptimizerParams {
  RobotParams robot;
  double rho_t = 20.0;  // weight on T_f
  double rho_r = 10.0;  // weight on the risk integral
  double r_max = 0.85;
  double d_min = 0.15;
  double delta_plus = 0.9;
  int K = 16;
  double eps_cons = 1e-4;
  double eps_grad = 1e-5;
  int max_outer = 30;
  int max_inner = 300;
  double rho_init = 1.0;
  double rho_growth = 10.0;
  double rho_cap = 1e6;
  double oob_weight = 1e4;
  double cost_tol = 1e-6;  // relative cost change that counts as settled between feasible outer steps
  // Limits are tightened by this fraction inside the problem; peaks between samples
  // near rest can overshoot the sampled ones by a few percent.
  double margin = 0.05;

  double tight(double limit) const { return limit * (1.0 - margin); }

  void validate() const {
    robot.validate();
    require(rho_t >= 0 && rho_r >= 0 && r_max > 0 && delta_plus > 0 && delta_plus <= 1 && K >= 4 && eps_cons > 0 &&
                eps_grad > 0 && max_outer >= 1 && max_inner >= 1 && rho_init > 0 && rho_growth > 1 && rho_cap >= rho_init &&
                margin >= 0 && margin < 0.5,
            ErrorCode::kInvalidParameter, "optimizer params");
  }
};

/// Constraint kinds, in the order they are emitted per sample.
enum ConstraintKind {
  kSteer = 0,
  kSpeed,
  kAccLon,
  kAccLat,
  kRoll,   // phi_x
  kPitch,  // phi_y
  kRisk,
  kClearance,
  kTangent,
  kConstraintKinds
};

inline const char* constraint_name(int k) {
  static const char* names[] = {"steer", "speed", "acc_lon", "acc_lat", "phi_x", "phi_y", "risk", "clearance", "tangent"};
  return names[k];
}

namespace detail {

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
inline double softplus_inv(double y) { return y > 30 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct GaussLegendre {
  std::vector<double> x, w;  // on [-1, 1]
  explicit GaussLegendre(int n) : x(n), w(n) {
    for (int i = 0; i < n; ++i) {
      double z = std::cos(kPi * (i + 0.75) / (n + 0.5)), dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = z;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (z * p1 - p0) / (z * z - 1);
        const double dz = p1 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
      x[i] = z;
      w[i] = 2.0 / ((1 - z * z) * dp * dp);
    }
  }
};

// j^2 of composed quintics has degree 44, so 23 nodes integrate it exactly.
inline const GaussLegendre& jerk_rule() {
  static const GaussLegendre r(23);
  return r;
}

// Derivatives 0..kmax of a quintic segment at t: out[k] = row vector (D).
template <int KMAX>
inline void derivs(const Eigen::MatrixXd& C, int seg, double t, std::array<Eigen::Vector2d, KMAX + 1>& out) {
  for (int k = 0; k <= KMAX; ++k) {
    const auto b = quintic_basis(t, k);
    Eigen::Vector2d v = Eigen::Vector2d::Zero();
    for (int i = k; i < 6; ++i) v += b[i] * C.row(6 * seg + i).transpose();
    out[k] = v;
  }
}
template <int KMAX>
inline void derivs1(const Eigen::MatrixXd& C, int seg, double t, std::array<double, KMAX + 1>& out) {
  for (int k = 0; k <= KMAX; ++k) {
    const auto b = quintic_basis(t, k);
    double v = 0.0;
    for (int i = k; i < 6; ++i) v += b[i] * C(6 * seg + i, 0);
    out[k] = v;
  }
}

template <int N>
Dual<N> lift(double v, const Vec3& g, const Dual<N>& X, const Dual<N>& Y, const Dual<N>& TH) {
  Dual<N> r(v);
  for (int i = 0; i < N; ++i) r.d[i] = g(0) * X.d[i] + g(1) * Y.d[i] + g(2) * TH.d[i];
  return r;
}

// Smallest |x'(sigma)|^2 on [0, len] of one geometry segment: coarse scan, then Newton on
// the stationarity condition inside the bracket around the best sample.
struct SpeedMin {
  double sigma = 0.0, value = 0.0;
  Eigen::Vector2d d1, d2;
  bool at_end = false;
};

inline SpeedMin min_speed2(const Eigen::MatrixXd& C, int seg, double len) {
  constexpr int kScan = 32;
  std::array<Eigen::Vector2d, 4> q;
  auto f = [&](double s) {
    derivs<3>(C, seg, s, q);
    return q[1].squaredNorm();
  };
  int best = 0;
  double fb = f(0.0);
  for (int j = 1; j <= kScan; ++j) {
    const double v = f(len * j / kScan);
    if (v < fb) {
      fb = v;
      best = j;
    }
  }
  double lo = len * std::max(0, best - 1) / kScan, hi = len * std::min(kScan, best + 1) / kScan;
  double s = len * best / kScan;
  for (int it = 0; it < 30; ++it) {
    derivs<3>(C, seg, s, q);
    const double g = 2.0 * q[1].dot(q[2]), h = 2.0 * (q[2].squaredNorm() + q[1].dot(q[3]));
    if (g > 0) hi = s;
    else lo = s;
    double next = h > 0 ? s - g / h : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - s) < 1e-15 * std::max(1.0, len)) break;
    s = next;
  }
  SpeedMin m;
  // the bracket may end on the segment boundary
  for (double c : {s, 0.0, len}) {
    const double v = f(c);
    if (c == s || v < m.value) {
      m.sigma = c;
      m.value = v;
      m.d1 = q[1];
      m.d2 = q[2];
    }
  }
  m.at_end = m.sigma >= len;
  return m;
}

}  // namespace detail

/// One gear section of a solved trajectory: geometry x(s), y(s) and time law s(t).
struct SectionTrajectory {
  int eta = 1;
  PiecewiseQuintic geom;  // D = 2, spans S
  PiecewiseQuintic time;  // D = 1, spans T_p
  std::vector<double> base;  // cumulative S at the start of each segment

  double duration() const { return time.total(); }
};

/// Integral of |d³/dt³ x(s(t))|² over one section.
inline double jerk_integral(const SectionTrajectory& sec) {
  const auto& gl = detail::jerk_rule();
  double J = 0.0;
  for (int i = 0; i < sec.time.segments(); ++i) {
    const double T = sec.time.spans[i];
    for (std::size_t q = 0; q < gl.x.size(); ++q) {
      const double t = 0.5 * (gl.x[q] + 1.0) * T;
      std::array<double, 4> s;
      detail::derivs1<3>(sec.time.coeffs, i, t, s);
      std::array<Eigen::Vector2d, 4> p;
      detail::derivs<3>(sec.geom.coeffs, i, s[0] - sec.base[i], p);
      const Eigen::Vector2d j = p[3] * s[1] * s[1] * s[1] + 3.0 * p[2] * s[1] * s[2] + p[1] * s[3];
      J += 0.5 * gl.w[q] * T * j.squaredNorm();
    }
  }
  return J;
}

struct TrajectorySample {
  double t = 0.0;
  Vec2 p, d1, d2;  // x(s), x'(s), x''(s)
  double sd = 0.0, sdd = 0.0;
  int eta = 1;
};

struct TrajectorySolution {
  std::vector<SectionTrajectory> sections;
  double T_f = 0.0;
  double T_p = 0.0;
  double cost = 0.0;
  double jerk_cost = 0.0, time_cost = 0.0, risk_cost = 0.0;
  Eigen::VectorXd vars;

  double duration() const {
    double d = 0;
    for (const auto& s : sections) d += s.duration();
    return d;
  }

  /// Flat state at a local time inside section g, segment i.
  TrajectorySample at(int g, int i, double t_local) const {
    const auto& sec = sections[g];
    std::array<double, 3> s;
    detail::derivs1<2>(sec.time.coeffs, i, t_local, s);
    std::array<Eigen::Vector2d, 3> p;
    detail::derivs<2>(sec.geom.coeffs, i, s[0] - sec.base[i], p);
    TrajectorySample o;
    o.p = p[0];
    o.d1 = p[1];
    o.d2 = p[2];
    o.sd = s[1];
    o.sdd = s[2];
    o.eta = sec.eta;
    return o;
  }

  /// Flat state at global time t in [0, duration()].
  TrajectorySample at_time(double t) const {
    double t0 = 0.0;
    for (std::size_t g = 0; g < sections.size(); ++g) {
      const double d = sections[g].duration();
      if (t <= t0 + d || g + 1 == sections.size()) {
        const double tl = std::clamp(t - t0, 0.0, d);
        const int n = sections[g].time.segments();
        const int i = std::min(n - 1, int(tl / T_p));
        TrajectorySample o = at(int(g), i, tl - i * T_p);
        o.t = t;
        return o;
      }
      t0 += d;
    }
    return {};
  }

  /// Samples every segment at `per_segment` uniform times plus each section end.
  std::vector<TrajectorySample> sample(int per_segment) const {
    std::vector<TrajectorySample> out;
    double t0 = 0.0;
    for (std::size_t g = 0; g < sections.size(); ++g) {
      const int n = sections[g].time.segments();
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < per_segment; ++p) {
          const double tl = T_p * p / per_segment;
          TrajectorySample o = at(int(g), i, tl);
          o.t = t0 + i * T_p + tl;
          out.push_back(o);
        }
      TrajectorySample e = at(int(g), n - 1, T_p);
      e.t = t0 + n * T_p;
      out.push_back(e);
      t0 += sections[g].duration();
    }
    return out;
  }

  double length(int per_segment = 64) const {
    const auto s = sample(per_segment);
    double l = 0.0;
    for (std::size_t i = 1; i < s.size(); ++i) l += (s[i].p - s[i - 1].p).norm();
    return l;
  }

  Se2 pose_at(const TrajectorySample& s) const {
    return {s.p.x(), s.p.y(), std::atan2(s.eta * s.d1.y(), s.eta * s.d1.x())};
  }
};

/// The optimization problem over {P, S (through softplus), e_m, tau = ln T_f} for a fixed gear structure.
class TrajectoryProblem {
 public:
  TrajectoryProblem(const TerrainSource& src, const Se2& start, const Se2& goal, std::vector<int> eta,
                    std::vector<int> segments, const OptimizerParams& params)
      : src_(&src), start_(start), goal_(goal), eta_(std::move(eta)), N_(std::move(segments)), prm_(params) {
    prm_.validate();
    require(!eta_.empty() && eta_.size() == N_.size(), ErrorCode::kInvalidParameter, "sections");
    for (int n : N_) require(n >= 1, ErrorCode::kInvalidParameter, "segments per section");
    for (int e : eta_) require(e == 1 || e == -1, ErrorCode::kInvalidParameter, "gear");
    int off = 0;
    for (int n : N_) {
      P_off_.push_back(off);
      off += 2 * (n - 1);
      S_off_.push_back(off);
      off += n;
      Ntot_ += n;
    }
    E_off_ = off;
    off += 4 * switches();
    tau_ = off;
    dim_ = off + 1;
    box_ = src.bounds();
  }

  static TrajectoryProblem from_init(const TerrainSource& src, const Se2& start, const Se2& goal,
                                     const InitGuess& init, const OptimizerParams& p) {
    std::vector<int> eta, n;
    for (const auto& s : init.sections) {
      eta.push_back(s.eta);
      n.push_back(int(s.spans.size()));
    }
    return TrajectoryProblem(src, start, goal, eta, n, p);
  }

  Eigen::VectorXd pack(const InitGuess& init) const {
    require(int(init.sections.size()) == sections() && init.gear_switches() == switches(), ErrorCode::kInvalidParameter,
            "init does not match problem");
    Eigen::VectorXd x(dim_);
    for (int g = 0; g < sections(); ++g) {
      const auto& s = init.sections[g];
      require(int(s.spans.size()) == N_[g], ErrorCode::kInvalidParameter, "init segments");
      for (int i = 0; i + 1 < N_[g]; ++i) {
        x(P_off_[g] + 2 * i) = s.points[i].x();
        x(P_off_[g] + 2 * i + 1) = s.points[i].y();
      }
      for (int i = 0; i < N_[g]; ++i) x(S_off_[g] + i) = detail::softplus_inv(std::max(s.spans[i], 1e-3));
    }
    for (int w = 0; w < switches(); ++w) x.segment<4>(E_off_ + 4 * w) = init.e_m[w];
    x(tau_) = std::log(init.T_f);
    return x;
  }

  int dim() const { return dim_; }
  int sections() const { return int(N_.size()); }
  int switches() const { return sections() - 1; }
  int total_segments() const { return Ntot_; }
  int constraint_count() const { return kConstraintKinds * prm_.K * Ntot_; }
  const OptimizerParams& params() const { return prm_; }
  OptimizerParams& params() { return prm_; }
  const TerrainSource& source() const { return *src_; }
  const Se2& start() const { return start_; }
  const Se2& goal() const { return goal_; }
  const std::vector<int>& gears() const { return eta_; }
  int tau_index() const { return tau_; }

  /// Non-rest start: the first section begins with unit tangent, curvature vector d2 and
  /// time law (s-dot, s-ddot), so a replan can continue a moving robot.
  struct StartMotion {
    Vec2 d2 = Vec2::Zero();
    double sd = 0.0, sdd = 0.0;
  };
  void set_start_motion(const StartMotion& m) {
    require(std::isfinite(m.sd) && m.sd >= 0.0 && std::isfinite(m.sdd) && m.d2.allFinite(), ErrorCode::kInvalidParameter,
            "start motion");
    motion_ = m;
  }
  const StartMotion& start_motion() const { return motion_; }

  struct Multipliers {
    std::vector<double> lambda;
    double rho = 1.0;
  };

  struct Evaluation {
    double value = 0.0;  // objective, plus the PHR terms when multipliers were given
    double objective = 0.0;
    double jerk = 0.0, time = 0.0, risk = 0.0, oob = 0.0;
    std::vector<double> cons;
    int degenerate = 0;
    int out_of_bounds = 0;
  };

  /// Objective (and augmented Lagrangian if `mult` is set) with gradient.
  Evaluation evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad, const Multipliers* mult = nullptr,
                      TrajectorySolution* sol = nullptr) const {
    require(x.size() == dim_, ErrorCode::kInvalidParameter, "variable size");
    const int G = sections();
    const double T_f = std::exp(x(tau_));
    const double T_p = T_f / Ntot_;
    const double Lw = prm_.robot.wheelbase, grav = prm_.robot.gravity;
    Evaluation ev;
    if (grad) grad->setZero(dim_);
    double gTp = 0.0, gTf = 0.0;
    ev.cons.reserve(constraint_count());

    std::vector<MincoQuintic> geo(G), tim(G);
    std::vector<std::vector<double>> S(G), base(G);
    std::vector<Eigen::MatrixXd> gCg(G), gCs(G);
    std::vector<std::vector<double>> gBase(G), gSpan(G);
    std::vector<Eigen::Vector2d> tan_unit(switches());
    std::vector<double> tan_norm(switches());
    for (int w = 0; w < switches(); ++w) {
      const Eigen::Vector2d h = x.segment<2>(E_off_ + 4 * w + 2);
      tan_norm[w] = h.norm();
      require(tan_norm[w] > 1e-12, ErrorCode::kDegenerateState, "zero switch tangent");
      tan_unit[w] = h / tan_norm[w];
    }

    for (int g = 0; g < G; ++g) {
      const int n = N_[g];
      Eigen::MatrixXd head = Eigen::MatrixXd::Zero(3, 2), tail = Eigen::MatrixXd::Zero(3, 2), wp(n - 1, 2);
      if (g == 0) {
        head.row(0) << start_.x, start_.y;
        head.row(1) << eta_[0] * std::cos(start_.theta), eta_[0] * std::sin(start_.theta);
        head.row(2) = motion_.d2.transpose();
      } else {
        head.row(0) = x.segment<2>(E_off_ + 4 * (g - 1)).transpose();
        head.row(1) = -tan_unit[g - 1].transpose();
      }
      if (g == G - 1) {
        tail.row(0) << goal_.x, goal_.y;
        tail.row(1) << eta_[g] * std::cos(goal_.theta), eta_[g] * std::sin(goal_.theta);
      } else {
        tail.row(0) = x.segment<2>(E_off_ + 4 * g).transpose();
        tail.row(1) = tan_unit[g].transpose();
      }
      for (int i = 0; i + 1 < n; ++i) wp.row(i) << x(P_off_[g] + 2 * i), x(P_off_[g] + 2 * i + 1);
      S[g].resize(n);
      base[g].resize(n);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        S[g][i] = detail::softplus(x(S_off_[g] + i));
        base[g][i] = acc;
        acc += S[g][i];
      }
      geo[g].setup(head, tail, wp, S[g]);
      Eigen::MatrixXd th = Eigen::MatrixXd::Zero(3, 1), tt = Eigen::MatrixXd::Zero(3, 1), tw(n - 1, 1);
      tt(0, 0) = acc;
      if (g == 0) {
        th(1, 0) = motion_.sd;
        th(2, 0) = motion_.sdd;
      }
      for (int i = 0; i + 1 < n; ++i) tw(i, 0) = base[g][i + 1];
      tim[g].setup(th, tt, tw, std::vector<double>(n, T_p));
      gCg[g] = Eigen::MatrixXd::Zero(6 * n, 2);
      gCs[g] = Eigen::MatrixXd::Zero(6 * n, 1);
      gBase[g].assign(n, 0.0);
      gSpan[g].assign(n, 0.0);
    }

    // Pushes the sample-level partials back to the coefficients, segment base and T_p.
    // gP[m]: d/d x^(m)(sigma); gS[m]: d/d s^(m)(t) for m >= 1; dtdTp: d(sample time)/dT_p.
    auto scatter = [&](int g, int i, double t, double sigma, const std::array<Eigen::Vector2d, 5>& p,
                       const std::array<double, 5>& s, const std::array<Eigen::Vector2d, 4>& gP,
                       std::array<double, 4> gS, double dtdTp) {
      gS[0] = 0.0;
      for (int m = 0; m < 4; ++m) gS[0] += gP[m].dot(p[m + 1]);
      for (int m = 0; m < 4; ++m) {
        if (gP[m].isZero(0.0)) continue;
        const auto b = quintic_basis(sigma, m);
        for (int k = m; k < 6; ++k) gCg[g].row(6 * i + k) += b[k] * gP[m].transpose();
      }
      for (int m = 0; m < 4; ++m) {
        if (gS[m] == 0.0) continue;
        const auto b = quintic_basis(t, m);
        for (int k = m; k < 6; ++k) gCs[g](6 * i + k, 0) += b[k] * gS[m];
      }
      gBase[g][i] -= gS[0];
      double ds = 0.0;
      for (int m = 0; m < 4; ++m) ds += gS[m] * s[m + 1];
      gTp += ds * dtdTp;
    };

    // jerk of x(s(t)), integrated exactly per segment
    const auto& gl = detail::jerk_rule();
    for (int g = 0; g < G; ++g) {
      const auto& Cg = geo[g].trajectory().coeffs;
      const auto& Cs = tim[g].trajectory().coeffs;
      for (int i = 0; i < N_[g]; ++i) {
        for (std::size_t q = 0; q < gl.x.size(); ++q) {
          const double a = 0.5 * (gl.x[q] + 1.0), t = a * T_p, w = 0.5 * gl.w[q] * T_p;
          std::array<double, 5> s;
          detail::derivs1<4>(Cs, i, t, s);
          const double sigma = s[0] - base[g][i];
          std::array<Eigen::Vector2d, 5> p;
          detail::derivs<4>(Cg, i, sigma, p);
          const Eigen::Vector2d j = p[3] * s[1] * s[1] * s[1] + 3.0 * p[2] * s[1] * s[2] + p[1] * s[3];
          const double F = w * j.squaredNorm();
          ev.jerk += F;
          if (!grad) continue;
          const Eigen::Vector2d dj = 2.0 * w * j;
          std::array<Eigen::Vector2d, 4> gP{Eigen::Vector2d::Zero(), dj * s[3], dj * (3.0 * s[1] * s[2]),
                                            dj * (s[1] * s[1] * s[1])};
          std::array<double, 4> gS{0.0, dj.dot(3.0 * p[3] * s[1] * s[1] + 3.0 * p[2] * s[2]), dj.dot(3.0 * p[2] * s[1]),
                                   dj.dot(p[1])};
          scatter(g, i, t, sigma, p, s, gP, gS, a);
          gTp += F / T_p;
        }
      }
    }

    ev.time = prm_.rho_t * T_f;
    gTf += prm_.rho_t;

    // sampled risk integral and constraints
    using D8 = Dual<8>;
    const int K = prm_.K;
    auto sq = [](double v) { return v * v; };
    const double dmax2 = sq(prm_.tight(prm_.robot.delta_max));
    const double v2 = sq(prm_.tight(prm_.robot.v_max));
    const double alon2 = sq(prm_.tight(prm_.robot.a_lon_max));
    const double alat2 = sq(prm_.tight(prm_.robot.a_lat_max));
    const double px2 = sq(prm_.tight(prm_.robot.phi_x_max));
    const double py2 = sq(prm_.tight(prm_.robot.phi_y_max));
    const double r_lim = prm_.tight(prm_.r_max), d_lim = prm_.d_min * (1.0 + prm_.margin);
    const double dplus = std::min(1.0, prm_.delta_plus * (1.0 + prm_.margin));
    double phr = 0.0;
    for (int g = 0; g < G; ++g) {
      const auto& Cg = geo[g].trajectory().coeffs;
      const auto& Cs = tim[g].trajectory().coeffs;
      const int eta = eta_[g];
      for (int i = 0; i < N_[g]; ++i) {
        // sampled tangents can miss a sharp dip; the first slot holds the segment minimum
        const detail::SpeedMin smin = detail::min_speed2(Cg, i, S[g][i]);
        for (int k = 0; k < K; ++k) {
          const double a = double(k) / K, t = a * T_p;
          std::array<double, 5> s{};
          {
            std::array<double, 3> s3;
            detail::derivs1<2>(Cs, i, t, s3);
            for (int m = 0; m < 3; ++m) s[m] = s3[m];
          }
          const double sigma = s[0] - base[g][i];
          std::array<Eigen::Vector2d, 5> p;
          p.fill(Eigen::Vector2d::Zero());
          {
            std::array<Eigen::Vector2d, 4> q;
            detail::derivs<3>(Cg, i, sigma, q);
            for (int m = 0; m < 4; ++m) p[m] = q[m];
          }
          const D8 X = D8::variable(p[0].x(), 0), Y = D8::variable(p[0].y(), 1);
          const D8 dx = D8::variable(p[1].x(), 2), dy = D8::variable(p[1].y(), 3);
          const D8 ddx = D8::variable(p[2].x(), 4), ddy = D8::variable(p[2].y(), 5);
          const D8 sd = D8::variable(s[1], 6), sdd = D8::variable(s[2], 7);
          const D8 TH = atan2(dy * double(eta), dx * double(eta));

          // terrain, clamped into the valid box with a quadratic exit penalty
          D8 acc(0.0);
          double xq = p[0].x(), yq = p[0].y();
          const double cx = std::clamp(xq, box_(0), box_(1)), cy = std::clamp(yq, box_(2), box_(3));
          if (cx != xq || cy != yq) {
            ++ev.out_of_bounds;
            const D8 ex = X - cx, ey = Y - cy;
            const D8 pen = prm_.oob_weight * (ex * ex + ey * ey);
            ev.oob += pen.v;
            acc += pen;
          }
          Mat3 J;
          const Vec3 n = src_->normal(cx, cy, TH.v, &J);
          const FieldSample rs = src_->risk(cx, cy, TH.v);
          const FieldSample sd_f = src_->sdf(cx, cy, TH.v);
          const D8 risk = detail::lift(rs.value, rs.grad, X, Y, TH);
          const D8 clear = detail::lift(sd_f.value, sd_f.grad, X, Y, TH);
          const flat::V3<D8> zb{detail::lift(n.x(), J.row(0).transpose(), X, Y, TH),
                                detail::lift(n.y(), J.row(1).transpose(), X, Y, TH),
                                detail::lift(n.z(), J.row(2).transpose(), X, Y, TH)};

          const D8 rterm = risk * risk * (prm_.rho_r * T_p / K);
          ev.risk += rterm.v;
          acc += rterm;
          if (grad) gTp += rterm.v / T_p;

          std::array<D8, kConstraintKinds> c;
          const D8 sp2 = dx * dx + dy * dy;
          c[kTangent] = k == 0 ? D8(dplus - smin.value) : dplus - sp2;
          c[kRisk] = risk - r_lim;
          c[kClearance] = d_lim - clear;
          bool degenerate = sp2.v < 1e-6;
          flat::Eval<D8> fe;
          if (!degenerate) {
            fe = flat::evaluate<D8>(dx, dy, ddx, ddy, sd, sdd, eta, zb, Lw, grav);
            degenerate = fe.frame_norm.v < 1e-6 || fe.xb_dot_xyaw.v < 1e-6 || fe.yb_dot_yyaw.v < 1e-6 ||
                         fe.zb_z.v < 1e-6;
          }
          if (degenerate) {
            ++ev.degenerate;
            for (int q : {kSteer, kSpeed, kAccLon, kAccLat, kRoll, kPitch}) c[q] = D8(1e3);
          } else {
            c[kSteer] = fe.delta * fe.delta - dmax2;
            c[kSpeed] = fe.vx * fe.vx - v2;
            c[kAccLon] = fe.ax * fe.ax - alon2;
            c[kAccLat] = fe.ay * fe.ay - alat2;
            c[kRoll] = fe.phi_x * fe.phi_x - px2;
            c[kPitch] = fe.phi_y * fe.phi_y - py2;
          }
          const std::size_t base_idx = ev.cons.size();
          for (int q = 0; q < kConstraintKinds; ++q) {
            ev.cons.push_back(c[q].v);
            if (!mult) continue;
            const double lam = mult->lambda[base_idx + q], rho = mult->rho;
            const double m = std::max(0.0, lam + rho * c[q].v);
            phr += (m * m - lam * lam) / (2.0 * rho);
            if (m > 0.0) acc += m * (c[q] - c[q].v);  // derivative part only
            if (m > 0.0 && grad && k == 0 && q == kTangent) {
              // envelope: the minimizer is stationary unless it sits on the far end
              const Eigen::Vector2d g1 = -2.0 * m * smin.d1;
              const auto b = quintic_basis(smin.sigma, 1);
              for (int r = 1; r < 6; ++r) gCg[g].row(6 * i + r) += b[r] * g1.transpose();
              if (smin.at_end) gSpan[g][i] += g1.dot(smin.d2);
            }
          }
          if (!grad) continue;
          std::array<Eigen::Vector2d, 4> gP{Eigen::Vector2d(acc.d[0], acc.d[1]), Eigen::Vector2d(acc.d[2], acc.d[3]),
                                            Eigen::Vector2d(acc.d[4], acc.d[5]), Eigen::Vector2d::Zero()};
          std::array<double, 4> gS{0.0, acc.d[6], acc.d[7], 0.0};
          scatter(g, i, t, sigma, p, s, gP, gS, a);
        }
      }
    }

    ev.objective = ev.jerk + ev.time + ev.risk + ev.oob;
    ev.value = ev.objective + phr;

    if (sol) {
      sol->sections.clear();
      for (int g = 0; g < G; ++g)
        sol->sections.push_back({eta_[g], geo[g].trajectory(), tim[g].trajectory(), base[g]});
      sol->T_f = T_f;
      sol->T_p = T_p;
      sol->cost = ev.objective;
      sol->jerk_cost = ev.jerk;
      sol->time_cost = ev.time;
      sol->risk_cost = ev.risk;
      sol->vars = x;
    }
    if (!grad) return ev;

    // back through the spline systems
    for (int g = 0; g < G; ++g) {
      const int n = N_[g];
      const auto gg = geo[g].propagate(gCg[g], std::vector<double>(n, 0.0));
      const auto gt = tim[g].propagate(gCs[g], std::vector<double>(n, 0.0));
      for (double v : gt.spans) gTp += v;
      std::vector<double> gS(gg.spans);
      for (int i = 0; i < n; ++i) gS[i] += gSpan[g][i];
      // base_i = sum_{j<i} S_j
      double run = 0.0;
      for (int i = n - 1; i >= 0; --i) {
        gS[i] += run;
        run += gBase[g][i];
      }
      // time waypoint i = sum_{j<=i} S_j, time tail = sum S
      run = gt.tail(0, 0);
      for (int i = n - 1; i >= 0; --i) {
        if (i < n - 1) run += gt.waypoints(i, 0);
        gS[i] += run;
      }
      for (int i = 0; i < n; ++i) (*grad)(S_off_[g] + i) += gS[i] * detail::sigmoid(x(S_off_[g] + i));
      for (int i = 0; i + 1 < n; ++i) {
        (*grad)(P_off_[g] + 2 * i) += gg.waypoints(i, 0);
        (*grad)(P_off_[g] + 2 * i + 1) += gg.waypoints(i, 1);
      }
      auto tangent_grad = [&](int w, const Eigen::Vector2d& gt_unit) {
        const Eigen::Vector2d u = tan_unit[w];
        const Eigen::Vector2d gh = (gt_unit - u * u.dot(gt_unit)) / tan_norm[w];
        (*grad)(E_off_ + 4 * w + 2) += gh.x();
        (*grad)(E_off_ + 4 * w + 3) += gh.y();
      };
      if (g > 0) {
        (*grad)(E_off_ + 4 * (g - 1)) += gg.head(0, 0);
        (*grad)(E_off_ + 4 * (g - 1) + 1) += gg.head(0, 1);
        tangent_grad(g - 1, -gg.head.row(1).transpose());
      }
      if (g < G - 1) {
        (*grad)(E_off_ + 4 * g) += gg.tail(0, 0);
        (*grad)(E_off_ + 4 * g + 1) += gg.tail(0, 1);
        tangent_grad(g, gg.tail.row(1).transpose());
      }
    }
    (*grad)(tau_) = gTp * T_p + gTf * T_f;
    return ev;
  }

 private:
  const TerrainSource* src_;
  Se2 start_, goal_;
  std::vector<int> eta_, N_;
  OptimizerParams prm_;
  std::vector<int> P_off_, S_off_;
  int E_off_ = 0, tau_ = 0, dim_ = 0, Ntot_ = 0;
  Eigen::Vector4d box_;
  StartMotion motion_;
};

/// Per-kind worst values of the constraint audit.
struct AuditReport {
  std::array<double, kConstraintKinds> max_value{};      // raw max of |q| (or risk, or min clearance...)
  std::array<double, kConstraintKinds> max_violation{};  // relative to the limit, >= 0
  int samples = 0;
  bool singular = false;  // tangent fell to zero somewhere

  double worst() const {
    double w = 0;
    for (double v : max_violation) w = std::max(w, v);
    return w;
  }
};

/// Re-evaluates every constraint quantity at `per_segment` samples per segment with the
/// plain (non-dual) flat-output path; violations are reported relative to each limit.
/// Samples before t_from are skipped.
inline AuditReport audit_trajectory(const TrajectorySolution& sol, const TerrainSource& src, const OptimizerParams& p,
                                    int per_segment, double t_from = 0.0) {
  AuditReport r;
  r.max_value.fill(0.0);
  r.max_value[kClearance] = std::numeric_limits<double>::infinity();
  r.max_value[kTangent] = std::numeric_limits<double>::infinity();
  r.max_violation.fill(0.0);
  const auto& rp = p.robot;
  auto bump = [&](int k, double v, double viol) {
    r.max_value[k] = (k == kClearance || k == kTangent) ? std::min(r.max_value[k], v) : std::max(r.max_value[k], v);
    r.max_violation[k] = std::max(r.max_violation[k], viol);
  };
  for (const auto& s : sol.sample(per_segment)) {
    if (s.t < t_from) continue;
    ++r.samples;
    const double sp2 = s.d1.squaredNorm();
    bump(kTangent, sp2, std::max(0.0, (p.delta_plus - sp2) / p.delta_plus));
    if (sp2 < 1e-9) {
      r.singular = true;
      continue;
    }
    const Se2 pose = sol.pose_at(s);
    if (!src.contains(pose.x, pose.y)) {
      bump(kRisk, 1e3, 1e3);
      continue;
    }
    const double risk = src.risk(pose.x, pose.y, pose.theta).value;
    const double clear = src.sdf(pose.x, pose.y, pose.theta).value;
    bump(kRisk, risk, std::max(0.0, risk / p.r_max - 1.0));
    bump(kClearance, clear, std::max(0.0, (p.d_min - clear) / std::max(p.d_min, 1e-9)));
    try {
      const TerrainFrame f = terrain_pose(src, pose);
      const ControlOutputs c = flat_outputs({s.d1.x(), s.d1.y(), s.d2.x(), s.d2.y(), s.sd, s.sdd, s.eta}, f, rp);
      const double phx = std::abs(std::asin(std::clamp(f.x_b.z(), -1.0, 1.0)));
      const double phy = std::abs(std::asin(std::clamp(f.y_b.z(), -1.0, 1.0)));
      bump(kSteer, std::abs(c.delta), std::max(0.0, std::abs(c.delta) / rp.delta_max - 1.0));
      bump(kSpeed, std::abs(c.v_x), std::max(0.0, std::abs(c.v_x) / rp.v_max - 1.0));
      bump(kAccLon, std::abs(c.a_x), std::max(0.0, std::abs(c.a_x) / rp.a_lon_max - 1.0));
      bump(kAccLat, std::abs(c.a_y), std::max(0.0, std::abs(c.a_y) / rp.a_lat_max - 1.0));
      bump(kRoll, phx, std::max(0.0, phx / rp.phi_x_max - 1.0));
      bump(kPitch, phy, std::max(0.0, phy / rp.phi_y_max - 1.0));
    } catch (const Error&) {
      r.singular = true;
    }
  }
  return r;
}

struct SolveReport {
  int outer = 0;
  int inner = 0;
  int evaluations = 0;
  double cost = 0.0;
  double max_violation = 0.0;
  std::array<double, kConstraintKinds> violation_by_kind{};
  std::vector<double> violation_history;  // at the end of every outer iteration
  double rho = 0.0;
  double wall_ms = 0.0;
  bool converged = false;
  int out_of_bounds = 0;

  std::string to_text() const {
    std::string s;
    char buf[160];
    std::snprintf(buf, sizeof buf, "converged %d\nouter %d\ninner %d\nevaluations %d\ncost %.9g\nmax_violation %.3e\n",
                  int(converged), outer, inner, evaluations, cost, max_violation);
    s += buf;
    for (int k = 0; k < kConstraintKinds; ++k) {
      std::snprintf(buf, sizeof buf, "violation.%s %.3e\n", constraint_name(k), violation_by_kind[k]);
      s += buf;
    }
    std::snprintf(buf, sizeof buf, "wall_ms %.3f\n", wall_ms);
    s += buf;
    return s;
  }
};

struct AlmResult {
  TrajectorySolution solution;
  SolveReport report;
  TrajectoryProblem::Multipliers multipliers;
};

class NonconvergenceError : public Error {
 public:
  NonconvergenceError(AlmResult best, const std::string& what)
      : Error(ErrorCode::kNonconvergence, what), best_(std::move(best)) {}
  const AlmResult& best() const { return best_; }

 private:
  AlmResult best_;
};

/// PHR augmented Lagrangian: inner L-BFGS on the augmented function, outer multiplier and
/// penalty updates. Pass `warm` to resume from previous multipliers.
inline AlmResult phr_alm_solve(const TrajectoryProblem& prob, Eigen::VectorXd x,
                               const TrajectoryProblem::Multipliers* warm = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& p = prob.params();
  TrajectoryProblem::Multipliers mu;
  if (warm && int(warm->lambda.size()) == prob.constraint_count()) {
    mu = *warm;
  } else {
    mu.lambda.assign(prob.constraint_count(), 0.0);
    mu.rho = p.rho_init;
  }
  LbfgsParams lp;
  lp.max_iter = p.max_inner;
  // inexact inner solves early on, tightened every outer step down to eps_grad
  const bool warm_start = warm && int(warm->lambda.size()) == prob.constraint_count();
  lp.g_tol = warm_start ? p.eps_grad : std::max(p.eps_grad, 1e-2);

  AlmResult best;
  double best_viol = std::numeric_limits<double>::infinity();
  SolveReport rep;
  double prev_viol = std::numeric_limits<double>::infinity();
  double prev_cost = std::numeric_limits<double>::infinity();
  auto violation = [&](const std::vector<double>& c, std::array<double, kConstraintKinds>* by_kind) {
    double v = 0.0;
    if (by_kind) by_kind->fill(0.0);
    for (std::size_t j = 0; j < c.size(); ++j) {
      const double e = std::max(0.0, c[j]);
      v = std::max(v, e);
      if (by_kind) (*by_kind)[j % kConstraintKinds] = std::max((*by_kind)[j % kConstraintKinds], e);
    }
    return v;
  };

  // A feasible starting point is kept as the incumbent, so re-solving a converged
  // answer can never return something costlier.
  AlmResult incumbent;
  bool have_incumbent = false;
  try {
    const auto ev0 = prob.evaluate(x, nullptr, nullptr, &incumbent.solution);
    have_incumbent = violation(ev0.cons, &incumbent.report.violation_by_kind) < p.eps_cons && ev0.out_of_bounds == 0;
    incumbent.report.cost = ev0.objective;
    incumbent.report.max_violation = violation(ev0.cons, nullptr);
    incumbent.multipliers = mu;
  } catch (const Error&) {
  }

  for (rep.outer = 1; rep.outer <= p.max_outer; ++rep.outer) {
    auto fg = [&](const Eigen::VectorXd& z, Eigen::VectorXd& g) {
      try {
        return prob.evaluate(z, &g, &mu).value;
      } catch (const Error&) {
        g.setZero(z.size());
        return std::numeric_limits<double>::infinity();
      }
    };
    const LbfgsResult lr = lbfgs_minimize(fg, x, lp);
    rep.inner += lr.iterations;
    rep.evaluations += lr.evaluations;

    AlmResult cur;
    const auto ev = prob.evaluate(x, nullptr, nullptr, &cur.solution);
    std::array<double, kConstraintKinds> by_kind;
    const double viol = violation(ev.cons, &by_kind);
    rep.violation_history.push_back(viol);
    rep.cost = ev.objective;
    rep.max_violation = viol;
    rep.violation_by_kind = by_kind;
    rep.rho = mu.rho;
    rep.out_of_bounds = ev.out_of_bounds;
    cur.multipliers = mu;
    if (viol < best_viol || (viol == best_viol && ev.objective < best.report.cost)) {
      best_viol = viol;
      best = cur;
      best.report = rep;
    }
    // Stationary at the working tolerance, or two feasible outer steps in a row that no
    // longer move the cost (the inner solver crawls once the penalty is stiff).
    const bool inner_ok = (lr.converged() || lr.status == LbfgsStatus::kLineSearch) && lp.g_tol <= p.eps_grad;
    const bool settled = prev_viol < p.eps_cons && std::abs(ev.objective - prev_cost) <= p.cost_tol * std::max(1.0, std::abs(ev.objective));
    if (viol < p.eps_cons && (inner_ok || settled) && ev.out_of_bounds == 0) {
      rep.converged = true;
      if (have_incumbent && incumbent.report.cost <= ev.objective) {
        rep.cost = incumbent.report.cost;
        rep.max_violation = incumbent.report.max_violation;
        rep.violation_by_kind = incumbent.report.violation_by_kind;
        cur = incumbent;
      }
      cur.report = rep;
      cur.report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      return cur;
    }
    for (std::size_t j = 0; j < mu.lambda.size(); ++j) mu.lambda[j] = std::max(0.0, mu.lambda[j] + mu.rho * ev.cons[j]);
    if (viol > 0.5 * prev_viol) mu.rho = std::min(mu.rho * p.rho_growth, p.rho_cap);
    prev_viol = viol;
    prev_cost = ev.objective;
    lp.g_tol = std::max(p.eps_grad, 0.1 * lp.g_tol);
  }
  rep.outer = p.max_outer;
  best.report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  best.report.outer = rep.outer;
  best.report.inner = rep.inner;
  best.report.evaluations = rep.evaluations;
  best.report.violation_history = rep.violation_history;
  if (best_viol > 10.0 * p.eps_cons) throw NonconvergenceError(best, "iteration cap with constraint violation");
  return best;
}

/// Search path -> initial guess -> optimized trajectory.
inline AlmResult optimize_path(const TerrainSource& src, const Se2Path& path, const OptimizerParams& p,
                               const InitConfig& ic = {}, const TrajectoryProblem::StartMotion& motion = {}) {
  InitConfig c = ic;
  c.v_max = p.robot.v_max;
  const InitGuess init = extract_init(path, c);
  auto prob = TrajectoryProblem::from_init(src, path.poses.front(), path.poses.back(), init, p);
  prob.set_start_motion(motion);
  return phr_alm_solve(prob, prob.pack(init));
}

/// Controls along a solution at spacing dt (for the kinematic integrator).
inline std::vector<ControlSample> solution_controls(const TrajectorySolution& sol, const TerrainSource& src,
                                                    const RobotParams& rp, double dt) {
  std::vector<ControlSample> out;
  const double T = sol.duration();
  const int n = int(std::ceil(T / dt - 1e-9));
  for (int k = 0; k <= n; ++k) {
    const auto s = sol.at_time(std::min(T, k * dt));
    const Se2 pose = sol.pose_at(s);
    const auto c = flat_outputs({s.d1.x(), s.d1.y(), s.d2.x(), s.d2.y(), s.sd, s.sdd, s.eta}, terrain_pose(src, pose), rp);
    out.push_back({c.v_x, c.delta});
  }
  return out;
}

/// Trajectory trace rows (t, x, y, z, theta, phi_x, phi_y, v_x, delta, a_x, a_y).
inline std::vector<TracePoint> solution_trace(const TrajectorySolution& sol, const TerrainSource& src,
                                              const RobotParams& rp, int per_segment) {
  std::vector<TracePoint> out;
  for (const auto& s : sol.sample(per_segment)) {
    const Se2 pose = sol.pose_at(s);
    if (!src.contains(pose.x, pose.y)) continue;
    const TerrainFrame f = terrain_pose(src, pose);
    TracePoint tp;
    tp.t = s.t;
    tp.x = pose.x;
    tp.y = pose.y;
    tp.z = f.z;
    tp.theta = pose.theta;
    tp.R = f.rotation();
    tp.phi_x = std::asin(std::clamp(f.x_b.z(), -1.0, 1.0));
    tp.phi_y = std::asin(std::clamp(f.y_b.z(), -1.0, 1.0));
    try {
      const auto c = flat_outputs({s.d1.x(), s.d1.y(), s.d2.x(), s.d2.y(), s.sd, s.sdd, s.eta}, f, rp);
      tp.v_x = c.v_x;
      tp.delta = c.delta;
      tp.a_x = c.a_x;
      tp.a_y = c.a_y;
    } catch (const Error&) {
    }
    out.push_back(tp);
  }
  return out;
}

}  // namespace sebnav
