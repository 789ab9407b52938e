#pragma once

#include "sebnav/common.hpp"
#include "sebnav/reeds_shepp.hpp"
#include "sebnav/terrain_source.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <string>
#include <vector>

namespace sebnav {

struct SearchConfig {
  double xy_res = 0.2;
  int yaw_bins = 72;
  double step = 0.5;       // primitive arc length
  int n_steer = 5;         // odd, symmetric in [-delta_max, delta_max]
  double wheelbase = 0.6;
  double delta_max = 0.785;
  double risk_weight = 1.0;
  double r_max = 0.85;
  double d_min = 0.15;
  double gear_penalty = 2.0;
  int shoot_period = 32;
  double shoot_radius = 3.0;
  double check_step = 0.05;
  int max_expansions = 200000;
  bool allow_reverse = true;

  double rho_min() const { return wheelbase / std::tan(delta_max); }
  void validate() const {
    require(xy_res > 0 && yaw_bins >= 4 && step > 0 && n_steer >= 1 && n_steer % 2 == 1 && wheelbase > 0 &&
                delta_max > 0 && delta_max < kPi / 2 && check_step > 0 && shoot_period >= 1 && max_expansions > 0,
            ErrorCode::kInvalidParameter, "search config");
  }
};

struct Se2Path {
  std::vector<Se2> poses;
  std::vector<int> eta;       // gear of the motion through each pose
  std::vector<int> switches;  // pose indices where the gear flips (cusps)
  double length = 0.0;
  int expansions = 0;

  int gear_switches() const { return int(switches.size()); }
};

/// Pose after travelling signed distance ds along an arc of curvature kappa.
inline Se2 arc_advance(const Se2& p, double kappa, double ds) {
  Se2 q = p;
  if (std::abs(kappa) < 1e-12) {
    q.x += ds * std::cos(p.theta);
    q.y += ds * std::sin(p.theta);
    return q;
  }
  const double dth = kappa * ds;
  q.x += (std::sin(p.theta + dth) - std::sin(p.theta)) / kappa;
  q.y += (std::cos(p.theta) - std::cos(p.theta + dth)) / kappa;
  q.theta = wrap_angle(p.theta + dth);
  return q;
}

inline bool state_free(const TerrainSource& src, const Se2& s, const SearchConfig& c, double* risk = nullptr) {
  if (!src.contains(s.x, s.y)) return false;
  const double r = src.risk(s.x, s.y, s.theta).value;
  if (risk) *risk = r;
  return r < c.r_max && src.sdf(s.x, s.y, s.theta).value >= c.d_min;
}

namespace detail {

inline RsWord shoot(const Se2& a, const Se2& b, const SearchConfig& c) {
  return c.allow_reverse ? reeds_shepp_shoot(a, b, c.rho_min()) : dubins_shoot(a, b, c.rho_min());
}

inline Se2Path finalize(std::vector<Se2> poses, std::vector<int> eta, double length) {
  Se2Path p;
  p.poses = std::move(poses);
  p.eta = std::move(eta);
  p.length = length;
  if (!p.eta.empty()) p.eta[0] = p.eta.size() > 1 ? p.eta[1] : 1;
  for (std::size_t i = 1; i + 1 < p.eta.size(); ++i)
    if (p.eta[i] != p.eta[i + 1]) p.switches.push_back(int(i));
  return p;
}

}  // namespace detail

/// Hybrid A* over (x, y, yaw) cells with constant-steering primitives and periodic
/// Reeds-Shepp (or Dubins when reversing is off) shots to the goal.
inline Se2Path hybrid_astar(const TerrainSource& src, const Se2& start, const Se2& goal, const SearchConfig& c) {
  c.validate();
  require(state_free(src, start, c), ErrorCode::kInvalidEndpoint, "start not traversable");
  require(state_free(src, goal, c), ErrorCode::kInvalidEndpoint, "goal not traversable");

  const Eigen::Vector4d box = src.bounds();
  const int nx = int(std::floor((box(1) - box(0)) / c.xy_res)) + 1;
  const int ny = int(std::floor((box(3) - box(2)) / c.xy_res)) + 1;
  auto cell = [&](const Se2& s) -> long {
    const int i = std::clamp(int(std::floor((s.x - box(0)) / c.xy_res)), 0, nx - 1);
    const int j = std::clamp(int(std::floor((s.y - box(2)) / c.xy_res)), 0, ny - 1);
    int k = int(std::floor((wrap_angle(s.theta) + kPi) / (2 * kPi) * c.yaw_bins));
    k = std::clamp(k, 0, c.yaw_bins - 1);
    return (long(k) * ny + j) * nx + i;
  };

  struct Node {
    Se2 s;
    double g;
    double h;
    int parent;
    int eta;
  };
  std::vector<Node> nodes;
  struct Entry {
    double f, h;
    long order;
    int node;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.f != b.f) return a.f > b.f;
    if (a.h != b.h) return a.h > b.h;
    return a.order > b.order;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);
  const std::size_t ncell = std::size_t(nx) * ny * c.yaw_bins;
  std::vector<double> best_g(ncell, std::numeric_limits<double>::infinity());
  std::vector<char> closed(ncell, 0);
  long order = 0;

  const double rho = c.rho_min();
  auto heuristic = [&](const Se2& s) {
    return std::max(std::hypot(goal.x - s.x, goal.y - s.y), detail::shoot(s, goal, c).length);
  };

  // feasibility of a sampled word, returning its samples
  auto try_shot = [&](const Se2& from, std::vector<PathPose>* out) {
    const RsWord w = detail::shoot(from, goal, c);
    if (!std::isfinite(w.length)) return -1.0;
    auto samples = rs_sample(from, w, rho, c.check_step);
    for (const auto& p : samples)
      if (!state_free(src, p.pose, c)) return -1.0;
    *out = std::move(samples);
    return w.length;
  };

  auto build = [&](int leaf, const std::vector<PathPose>& tail, double tail_len, int expansions) {
    std::vector<int> chain;
    for (int n = leaf; n >= 0; n = nodes[n].parent) chain.push_back(n);
    std::reverse(chain.begin(), chain.end());
    std::vector<Se2> poses;
    std::vector<int> eta;
    double len = 0.0;
    for (std::size_t i = 0; i < chain.size(); ++i) {
      poses.push_back(nodes[chain[i]].s);
      eta.push_back(nodes[chain[i]].eta);
      if (i > 0) len += c.step;
    }
    for (std::size_t i = 1; i < tail.size(); ++i) {
      poses.push_back(tail[i].pose);
      eta.push_back(tail[i].eta);
    }
    poses.back() = goal;
    Se2Path p = detail::finalize(std::move(poses), std::move(eta), len + tail_len);
    p.expansions = expansions;
    return p;
  };

  nodes.push_back({start, 0.0, heuristic(start), -1, 0});
  open.push({nodes[0].h, nodes[0].h, order++, 0});
  best_g[cell(start)] = 0.0;

  std::vector<double> steer;
  for (int k = 0; k < c.n_steer; ++k)
    steer.push_back(c.n_steer == 1 ? 0.0 : -c.delta_max + 2.0 * c.delta_max * k / (c.n_steer - 1));
  const int nsub = std::max(1, int(std::ceil(c.step / c.check_step)));

  int expansions = 0;
  while (!open.empty()) {
    const Entry e = open.top();
    open.pop();
    const int ni = e.node;
    const long ci = cell(nodes[ni].s);
    if (closed[ci]) continue;
    closed[ci] = 1;
    ++expansions;
    if (expansions > c.max_expansions) break;

    const Node cur = nodes[ni];
    const double dist = std::hypot(goal.x - cur.s.x, goal.y - cur.s.y);
    if (expansions % c.shoot_period == 1 || dist < c.shoot_radius) {
      std::vector<PathPose> tail;
      const double l = try_shot(cur.s, &tail);
      if (l >= 0.0) return build(ni, tail, l, expansions);
    }

    for (int gear : {1, -1}) {
      if (gear < 0 && !c.allow_reverse) continue;
      for (double d : steer) {
        const double kappa = std::tan(d) / c.wheelbase;
        bool ok = true;
        double rsum = 0.0;
        Se2 s = cur.s;
        for (int k = 1; k <= nsub; ++k) {
          s = arc_advance(cur.s, kappa, gear * c.step * k / nsub);
          double r = 0.0;
          if (!state_free(src, s, c, &r)) {
            ok = false;
            break;
          }
          rsum += r;
        }
        if (!ok) continue;
        const double g = cur.g + c.step * (1.0 + c.risk_weight * rsum / nsub) +
                         (cur.eta != 0 && cur.eta != gear ? c.gear_penalty : 0.0);
        const long cs = cell(s);
        if (closed[cs] || g >= best_g[cs] - 1e-12) continue;
        best_g[cs] = g;
        const double h = heuristic(s);
        nodes.push_back({s, g, h, ni, gear});
        open.push({g + h, h, order++, int(nodes.size()) - 1});
      }
    }
  }
  throw Error(ErrorCode::kNoPath, "search exhausted");
}

/// Initial guess for the optimizer: one entry per gear section.
struct GearSectionInit {
  int eta = 1;
  Se2 start, end;
  std::vector<Vec2> points;  // interior segment points, N - 1 of them
  std::vector<double> spans;  // N per-segment s-spans
  double length = 0.0;
};

struct InitGuess {
  std::vector<GearSectionInit> sections;
  std::vector<Eigen::Vector4d> e_m;  // (x, y, x', y') at each switch, tangent of the incoming section
  double T_f = 1.0;

  int gear_switches() const { return int(e_m.size()); }
};

struct InitConfig {
  double segment_length = 1.5;  // N = ceil(L / segment_length), at least 2
  int fixed_segments = 0;       // overrides the rule when > 0
  double v_max = 1.0;
  double speed_fraction = 0.5;
};

namespace detail {

// Point at arc length t along a polyline with cumulative lengths cum.
inline Vec2 polyline_at(const std::vector<Vec2>& pts, const std::vector<double>& cum, double t) {
  const auto it = std::upper_bound(cum.begin(), cum.end(), t);
  std::size_t i = std::size_t(std::max<long>(1, it - cum.begin()));
  i = std::min(i, pts.size() - 1);
  const double seg = cum[i] - cum[i - 1];
  const double a = seg > 0 ? (t - cum[i - 1]) / seg : 0.0;
  return pts[i - 1] + std::clamp(a, 0.0, 1.0) * (pts[i] - pts[i - 1]);
}

}  // namespace detail

inline InitGuess extract_init(const Se2Path& path, const InitConfig& cfg = {}) {
  require(!path.poses.empty(), ErrorCode::kInvalidParameter, "empty path");
  InitGuess g;
  std::vector<int> cuts{0};
  for (int s : path.switches) cuts.push_back(s);
  cuts.push_back(int(path.poses.size()) - 1);
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const int a = cuts[k], b = cuts[k + 1];
    GearSectionInit sec;
    sec.eta = path.eta[std::min<std::size_t>(std::size_t(a) + 1, path.eta.size() - 1)];
    sec.start = path.poses[a];
    sec.end = path.poses[b];
    std::vector<Vec2> pts;
    std::vector<double> cum{0.0};
    for (int i = a; i <= b; ++i) {
      pts.emplace_back(path.poses[i].x, path.poses[i].y);
      if (i > a) cum.push_back(cum.back() + (pts.back() - pts[pts.size() - 2]).norm());
    }
    sec.length = cum.back();
    const int n = cfg.fixed_segments > 0 ? cfg.fixed_segments
                                         : std::max(2, int(std::ceil(sec.length / cfg.segment_length - 1e-9)));
    for (int j = 1; j < n; ++j) sec.points.push_back(detail::polyline_at(pts, cum, sec.length * j / n));
    sec.spans.assign(n, std::max(sec.length, 1e-3) / n);
    total += sec.length;
    g.sections.push_back(std::move(sec));
  }
  for (std::size_t k = 0; k + 1 < g.sections.size(); ++k) {
    const auto& s = g.sections[k];
    g.e_m.emplace_back(s.end.x, s.end.y, s.eta * std::cos(s.end.theta), s.eta * std::sin(s.end.theta));
  }
  g.T_f = std::max(total, 0.1) / (cfg.speed_fraction * cfg.v_max);
  return g;
}

inline void write_path_csv(const std::string& file, const Se2Path& p) {
  std::ofstream f(file);
  require(bool(f), ErrorCode::kIo, "cannot open path file");
  f.precision(10);
  f << "x,y,theta,eta\n";
  for (std::size_t i = 0; i < p.poses.size(); ++i)
    f << p.poses[i].x << ',' << p.poses[i].y << ',' << p.poses[i].theta << ',' << p.eta[i] << '\n';
}

/// Structured text dump of an initial guess.
inline std::string describe(const InitGuess& g) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "T_f %.9g\nswitches %d\n", g.T_f, g.gear_switches());
  out += buf;
  for (std::size_t k = 0; k < g.sections.size(); ++k) {
    const auto& s = g.sections[k];
    std::snprintf(buf, sizeof buf, "section %zu eta %d N %zu length %.9g\n", k, s.eta, s.spans.size(), s.length);
    out += buf;
    for (const auto& p : s.points) {
      std::snprintf(buf, sizeof buf, "  P %.9g %.9g\n", p.x(), p.y());
      out += buf;
    }
    for (double v : s.spans) {
      std::snprintf(buf, sizeof buf, "  S %.9g\n", v);
      out += buf;
    }
  }
  for (const auto& e : g.e_m) {
    std::snprintf(buf, sizeof buf, "e_m %.9g %.9g %.9g %.9g\n", e(0), e(1), e(2), e(3));
    out += buf;
  }
  return out;
}

}  // namespace sebnav
