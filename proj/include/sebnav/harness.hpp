#pragma once

#include "sebnav/common.hpp"
#include "sebnav/elevation_map.hpp"
#include "sebnav/flatness.hpp"
#include "sebnav/grid_io.hpp"
#include "sebnav/search.hpp"
#include "sebnav/sensor.hpp"
#include "sebnav/terrain.hpp"
#include "sebnav/terrain_source.hpp"
#include "sebnav/trajectory.hpp"
#include "sebnav/traversability.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sebnav {

struct Bump {
  Vec2 c = Vec2::Zero();
  double h = 0.0;
  double sigma = 0.3;
};

/// One closed-loop navigation experiment. Every field has a default; see scenario_template().
struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;

  TerrainParams terrain;
  std::vector<Bump> bumps;  // added to the generated surface
  std::string terrain_file;  // grid file with a "height" layer; overrides the generator

  Se2 start{0.0, 0.0, 0.0};
  Se2 goal{5.0, 0.0, 0.0};

  SensorModel sensor;
  double sigma_b = 0.0;  // position noise std, m
  double sigma_r = 0.0;  // attitude noise std, rad

  double map_size = 32.0;  // robot-centric square, m
  double map_resolution = 0.2;
  int nyaw = 16;
  MappingParams mapping;
  AssessmentParams assessment;

  OptimizerParams optimizer;  // carries the robot limits, r_max and d_min
  SearchConfig search;        // wheelbase, steering and risk limits are copied from the optimizer

  double replan_period = 1.0;  // s of simulated time between plans
  double max_time = 120.0;     // s of simulated time
  double control_dt = 0.02;
  double integrate_dt = 0.01;
  double goal_tolerance = 0.3;  // m, on the integrated arrival
  // Search primitives and shots turn at most this fraction of the steering limit, so the
  // smooth trajectory has room around max-curvature arcs.
  double search_steer_fraction = 0.9;

  SearchConfig search_config() const {
    SearchConfig c = search;
    c.wheelbase = optimizer.robot.wheelbase;
    c.delta_max = search_steer_fraction * optimizer.robot.delta_max;
    c.r_max = optimizer.r_max;
    c.d_min = optimizer.d_min;
    return c;
  }

  void validate() const;
};

namespace detail {

template <class T>
void opt(const nlohmann::json& j, const char* key, T& v) {
  if (j.contains(key)) v = j.at(key).get<T>();
}

inline Se2 se2_from(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 3, ErrorCode::kInvalidParameter, "pose must be [x, y, theta]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json se2_to(const Se2& s) { return nlohmann::json::array({s.x, s.y, s.theta}); }

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& j) {
  using detail::opt;
  Scenario s;
  opt(j, "name", s.name);
  opt(j, "seed", s.seed);
  if (j.contains("terrain")) {
    const auto& t = j.at("terrain");
    auto& p = s.terrain;
    if (t.contains("kind")) {
      const auto k = t.at("kind").get<std::string>();
      require(k == "value_noise" || k == "sinusoidal", ErrorCode::kInvalidParameter, "terrain kind");
      p.kind = k == "sinusoidal" ? TerrainKind::kSinusoidal : TerrainKind::kValueNoise;
    }
    opt(t, "width_m", p.width_m);
    opt(t, "height_m", p.height_m);
    opt(t, "resolution", p.resolution);
    if (t.contains("origin")) p.origin = Vec2(t["origin"][0].get<double>(), t["origin"][1].get<double>());
    opt(t, "amplitude", p.amplitude);
    opt(t, "wavelength", p.wavelength);
    opt(t, "octaves", p.octaves);
    opt(t, "persistence", p.persistence);
    opt(t, "lacunarity", p.lacunarity);
    opt(t, "rocks", p.rocks);
    opt(t, "rock_height", p.rock_height);
    opt(t, "rock_sigma", p.rock_sigma);
    opt(t, "rock_clearance", p.rock_clearance);
    opt(t, "file", s.terrain_file);
    if (t.contains("bumps"))
      for (const auto& b : t.at("bumps"))
        s.bumps.push_back({Vec2(b.at("x").get<double>(), b.at("y").get<double>()), b.at("h").get<double>(),
                           b.value("sigma", 0.3)});
  }
  if (j.contains("start")) s.start = detail::se2_from(j.at("start"));
  if (j.contains("goal")) s.goal = detail::se2_from(j.at("goal"));
  if (j.contains("sensor")) {
    const auto& t = j.at("sensor");
    opt(t, "max_range", s.sensor.max_range);
    opt(t, "azimuth_res", s.sensor.azimuth_res);
    opt(t, "elevation_min", s.sensor.elevation_min);
    opt(t, "elevation_max", s.sensor.elevation_max);
    opt(t, "elevation_res", s.sensor.elevation_res);
    if (t.contains("point_sigma")) {
      const double v = t["point_sigma"].get<double>();
      s.sensor.sigma_s = Mat3::Identity() * v * v;
    }
    if (t.contains("mount_height")) s.sensor.p_BS = Vec3(0.0, 0.0, t["mount_height"].get<double>());
  }
  if (j.contains("noise")) {
    opt(j["noise"], "sigma_b", s.sigma_b);
    opt(j["noise"], "sigma_r", s.sigma_r);
  }
  if (j.contains("map")) {
    const auto& t = j.at("map");
    opt(t, "size", s.map_size);
    opt(t, "resolution", s.map_resolution);
    opt(t, "nyaw", s.nyaw);
    opt(t, "gate", s.mapping.gate);
  }
  if (j.contains("assessment")) {
    const auto& t = j.at("assessment");
    auto& a = s.assessment;
    opt(t, "ex", a.ex);
    opt(t, "ey", a.ey);
    if (t.contains("w")) a.w = Vec3(t["w"][0].get<double>(), t["w"][1].get<double>(), t["w"][2].get<double>());
    opt(t, "kappa_max", a.kappa_max);
    opt(t, "phi_x_max", a.phi_x_max);
    opt(t, "phi_y_max", a.phi_y_max);
  }
  if (j.contains("robot")) {
    const auto& t = j.at("robot");
    auto& r = s.optimizer.robot;
    opt(t, "wheelbase", r.wheelbase);
    opt(t, "delta_max", r.delta_max);
    opt(t, "v_max", r.v_max);
    opt(t, "a_lon_max", r.a_lon_max);
    opt(t, "a_lat_max", r.a_lat_max);
    opt(t, "phi_x_max", r.phi_x_max);
    opt(t, "phi_y_max", r.phi_y_max);
  }
  if (j.contains("optimizer")) {
    const auto& t = j.at("optimizer");
    auto& o = s.optimizer;
    opt(t, "rho_t", o.rho_t);
    opt(t, "rho_r", o.rho_r);
    opt(t, "r_max", o.r_max);
    opt(t, "d_min", o.d_min);
    opt(t, "delta_plus", o.delta_plus);
    opt(t, "K", o.K);
    opt(t, "eps_cons", o.eps_cons);
    opt(t, "max_outer", o.max_outer);
    opt(t, "max_inner", o.max_inner);
    opt(t, "margin", o.margin);
  }
  if (j.contains("search")) {
    const auto& t = j.at("search");
    auto& c = s.search;
    opt(t, "xy_res", c.xy_res);
    opt(t, "yaw_bins", c.yaw_bins);
    opt(t, "step", c.step);
    opt(t, "n_steer", c.n_steer);
    opt(t, "risk_weight", c.risk_weight);
    opt(t, "gear_penalty", c.gear_penalty);
    opt(t, "max_expansions", c.max_expansions);
    opt(t, "allow_reverse", c.allow_reverse);
  }
  opt(j, "replan_period", s.replan_period);
  opt(j, "max_time", s.max_time);
  opt(j, "control_dt", s.control_dt);
  opt(j, "integrate_dt", s.integrate_dt);
  opt(j, "goal_tolerance", s.goal_tolerance);
  opt(j, "search_steer_fraction", s.search_steer_fraction);
  return s;
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  const auto& p = s.terrain;
  j["terrain"] = {{"kind", p.kind == TerrainKind::kSinusoidal ? "sinusoidal" : "value_noise"},
                  {"width_m", p.width_m},
                  {"height_m", p.height_m},
                  {"resolution", p.resolution},
                  {"origin", {p.origin.x(), p.origin.y()}},
                  {"amplitude", p.amplitude},
                  {"wavelength", p.wavelength},
                  {"octaves", p.octaves},
                  {"persistence", p.persistence},
                  {"lacunarity", p.lacunarity},
                  {"rocks", p.rocks},
                  {"rock_height", p.rock_height},
                  {"rock_sigma", p.rock_sigma},
                  {"rock_clearance", p.rock_clearance}};
  if (!s.terrain_file.empty()) j["terrain"]["file"] = s.terrain_file;
  j["terrain"]["bumps"] = nlohmann::json::array();
  for (const auto& b : s.bumps) j["terrain"]["bumps"].push_back({{"x", b.c.x()}, {"y", b.c.y()}, {"h", b.h}, {"sigma", b.sigma}});
  j["start"] = detail::se2_to(s.start);
  j["goal"] = detail::se2_to(s.goal);
  j["sensor"] = {{"max_range", s.sensor.max_range},
                 {"azimuth_res", s.sensor.azimuth_res},
                 {"elevation_min", s.sensor.elevation_min},
                 {"elevation_max", s.sensor.elevation_max},
                 {"elevation_res", s.sensor.elevation_res},
                 {"point_sigma", std::sqrt(s.sensor.sigma_s(0, 0))},
                 {"mount_height", s.sensor.p_BS.z()}};
  j["noise"] = {{"sigma_b", s.sigma_b}, {"sigma_r", s.sigma_r}};
  j["map"] = {{"size", s.map_size}, {"resolution", s.map_resolution}, {"nyaw", s.nyaw}, {"gate", s.mapping.gate}};
  const auto& a = s.assessment;
  j["assessment"] = {{"ex", a.ex},          {"ey", a.ey},           {"w", {a.w.x(), a.w.y(), a.w.z()}},
                     {"kappa_max", a.kappa_max}, {"phi_x_max", a.phi_x_max}, {"phi_y_max", a.phi_y_max}};
  const auto& r = s.optimizer.robot;
  j["robot"] = {{"wheelbase", r.wheelbase}, {"delta_max", r.delta_max}, {"v_max", r.v_max},
                {"a_lon_max", r.a_lon_max}, {"a_lat_max", r.a_lat_max}, {"phi_x_max", r.phi_x_max},
                {"phi_y_max", r.phi_y_max}};
  const auto& o = s.optimizer;
  j["optimizer"] = {{"rho_t", o.rho_t},   {"rho_r", o.rho_r},       {"r_max", o.r_max},
                    {"d_min", o.d_min},   {"delta_plus", o.delta_plus}, {"K", o.K},
                    {"eps_cons", o.eps_cons}, {"max_outer", o.max_outer}, {"max_inner", o.max_inner},
                    {"margin", o.margin}};
  const auto& c = s.search;
  j["search"] = {{"xy_res", c.xy_res},         {"yaw_bins", c.yaw_bins},       {"step", c.step},
                 {"n_steer", c.n_steer},       {"risk_weight", c.risk_weight}, {"gear_penalty", c.gear_penalty},
                 {"max_expansions", c.max_expansions}, {"allow_reverse", c.allow_reverse}};
  j["replan_period"] = s.replan_period;
  j["max_time"] = s.max_time;
  j["control_dt"] = s.control_dt;
  j["integrate_dt"] = s.integrate_dt;
  j["goal_tolerance"] = s.goal_tolerance;
  j["search_steer_fraction"] = s.search_steer_fraction;
  return j;
}

/// Parses a scenario file; // and /* */ comments are allowed.
inline Scenario load_scenario(const std::string& path) {
  std::ifstream f(path);
  require(bool(f), ErrorCode::kIo, "cannot open scenario file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f, nullptr, true, true);
    Scenario s = scenario_from_json(j);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidParameter, std::string("scenario: ") + e.what());
  }
}

/// The ground-truth surface of a scenario.
inline HeightField scenario_terrain(const Scenario& s) {
  HeightField hf = s.terrain_file.empty() ? generate_terrain(s.seed, s.terrain)
                                          : HeightField::from_layers(read_grid_binary(s.terrain_file));
  for (const auto& b : s.bumps) {
    const double k = 1.0 / (2.0 * b.sigma * b.sigma);
    for (int j = 0; j < hf.ny; ++j)
      for (int i = 0; i < hf.nx; ++i) hf.at(i, j) += b.h * std::exp(-(hf.node(i, j) - b.c).squaredNorm() * k);
  }
  return hf;
}

inline void Scenario::validate() const {
  sensor.validate();
  assessment.validate();
  optimizer.validate();
  search_config().validate();
  require(sigma_b >= 0.0 && sigma_r >= 0.0, ErrorCode::kInvalidParameter, "noise std");
  require(map_size > 0.0 && map_resolution > 0.0 && nyaw >= 1, ErrorCode::kInvalidParameter, "map spec");
  require(search_steer_fraction > 0.0 && search_steer_fraction <= 1.0, ErrorCode::kInvalidParameter,
          "search steering fraction");
  require(replan_period > 0.0 && max_time > 0.0 && control_dt > 0.0 && integrate_dt > 0.0 && goal_tolerance > 0.0,
          ErrorCode::kInvalidParameter, "timing");
  for (const auto& b : bumps) require(b.sigma > 0.0, ErrorCode::kInvalidParameter, "bump sigma");
  if (terrain_file.empty()) {
    const auto& p = terrain;
    require(p.width_m > 0 && p.height_m > 0 && p.resolution > 0, ErrorCode::kInvalidParameter, "terrain size");
    auto inside = [&](const Se2& q) {
      return q.x >= p.origin.x() && q.x <= p.origin.x() + p.width_m && q.y >= p.origin.y() &&
             q.y <= p.origin.y() + p.height_m;
    };
    require(inside(start) && inside(goal), ErrorCode::kInvalidParameter, "start/goal outside the terrain");
  }
  require(std::isfinite(start.theta) && std::isfinite(goal.theta), ErrorCode::kInvalidParameter, "pose heading");
}

/// Failure stages; kNone on success.
enum class Failure { kNone, kInvalidEndpoint, kNoPath, kNonconvergence, kAuditFailure, kMapExit, kTimeout };

inline const char* failure_name(Failure f) {
  switch (f) {
    case Failure::kNone: return "";
    case Failure::kInvalidEndpoint: return "invalid-endpoint";
    case Failure::kNoPath: return "no-path";
    case Failure::kNonconvergence: return "nonconvergence";
    case Failure::kAuditFailure: return "audit-failure";
    case Failure::kMapExit: return "map-exit";
    case Failure::kTimeout: return "timeout";
  }
  return "?";
}

inline constexpr int kFailureKinds = 7;

/// Worst relative violation a plan may show at the 10x audit.
inline constexpr double kAuditTolerance = 0.01;

struct RunMetrics {
  bool success = false;
  Failure failure = Failure::kNone;
  std::string detail;
  int plans = 0;
  int replan_failures = 0;  // plans that failed while the previous one was still valid
  int gear_switches = 0;  // summed over executed plan pieces
  // present iff success
  double T_f = 0.0;     // executed duration, s
  double l_traj = 0.0;  // executed planar length, m
  double audit_worst = 0.0;  // worst relative violation over all plans at the 10x audit
  // timings, ms (not deterministic)
  std::vector<double> t_p;
  std::vector<double> mapping_ms;

  double mean_t_p() const { return t_p.empty() ? 0.0 : std::accumulate(t_p.begin(), t_p.end(), 0.0) / t_p.size(); }
  double mean_mapping() const {
    return mapping_ms.empty() ? 0.0 : std::accumulate(mapping_ms.begin(), mapping_ms.end(), 0.0) / mapping_ms.size();
  }
};

struct RunResult {
  RunMetrics metrics;
  std::vector<TracePoint> trace;  // executed motion
  std::string solver_log;         // one report per plan
  std::optional<TrajectorySolution> last_plan;
};

struct RunOptions {
  std::string out_dir;  // empty: no exports
  bool snapshots = true;
};

namespace detail {

/// Truth pose on the surface: height and the normal from central differences one cell wide.
inline void truth_pose(const HeightField& hf, const Se2& s, Vec3* p, Mat3* R) {
  const double h = hf.resolution;
  auto z = [&](double x, double y) {
    return hf.height(std::clamp(x, hf.xmin(), hf.xmax()), std::clamp(y, hf.ymin(), hf.ymax()));
  };
  const double gx = (z(s.x + h, s.y) - z(s.x - h, s.y)) / (2 * h);
  const double gy = (z(s.x, s.y + h) - z(s.x, s.y - h)) / (2 * h);
  *p = Vec3(s.x, s.y, hf.height(s.x, s.y));
  *R = frame_from_normal(Vec3(-gx, -gy, 1.0).normalized(), s.theta).rotation();
}

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline double trace_length(const std::vector<TracePoint>& tr) {
  double l = 0.0;
  for (std::size_t i = 1; i < tr.size(); ++i) l += std::hypot(tr[i].x - tr[i - 1].x, tr[i].y - tr[i - 1].y);
  return l;
}

inline int switches_between(const TrajectorySolution& sol, double t0, double t1) {
  int n = 0;
  double acc = 0.0;
  for (std::size_t g = 0; g + 1 < sol.sections.size(); ++g) {
    acc += sol.sections[g].duration();
    if (acc >= t0 && acc < t1) ++n;
  }
  return n;
}

}  // namespace detail

/// Risk of a pose assessed directly on a heightfield (no map in between).
inline double truth_risk(const HeightField& hf, const Se2& s, const AssessmentParams& ap) {
  const Assessment a = assess_state(hf, s, ap);
  return a.unknown ? 1.0 : a.risk;
}

inline void write_trajectory_csv(const std::string& path, const std::vector<TracePoint>& tr) { write_trace_csv(path, tr); }

inline std::string fmt_num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Deterministic per-run columns; timings go to a separate table.
inline std::string run_metrics_header() { return "name,success,failure,plans,gear_switches,T_f,l_traj,audit_worst"; }

inline std::string run_metrics_row(const std::string& name, const RunMetrics& m) {
  std::string r = name + "," + (m.success ? "1" : "0") + "," + failure_name(m.failure) + "," +
                  std::to_string(m.plans) + "," + std::to_string(m.gear_switches) + ",";
  if (m.success) r += fmt_num(m.T_f) + "," + fmt_num(m.l_traj) + "," + fmt_num(m.audit_worst);
  else r += ",,";
  return r;
}

/// Closed loop: sense -> map -> assess -> search -> optimize -> audit -> execute, repeated every
/// replan period until the goal is reached or a stage fails.
inline RunResult run_scenario(const Scenario& sc, const RunOptions& opts = {}) {
  sc.validate();
  RunResult out;
  RunMetrics& m = out.metrics;
  auto fail = [&](Failure f, const std::string& why) {
    m.success = false;
    m.failure = f;
    m.detail = why;
    m.T_f = m.l_traj = m.audit_worst = 0.0;
  };

  const HeightField truth = scenario_terrain(sc);
  const OptimizerParams& op = sc.optimizer;
  const RobotParams& rp = op.robot;
  const SearchConfig scfg = sc.search_config();

  if (!truth.contains(sc.start.x, sc.start.y) || !truth.contains(sc.goal.x, sc.goal.y) ||
      truth_risk(truth, sc.start, sc.assessment) >= op.r_max || truth_risk(truth, sc.goal, sc.assessment) >= op.r_max) {
    fail(Failure::kInvalidEndpoint, "start or goal not traversable on the terrain");
    return out;
  }

  const RngStreams rngs(sc.seed);
  std::mt19937_64 rng_sensor = rngs.stream(std::uint64_t(RngStream::kSensor));
  std::mt19937_64 rng_pose = rngs.stream(std::uint64_t(RngStream::kPose));
  const Mat3 cov_b = Mat3::Identity() * sc.sigma_b * sc.sigma_b;
  const Mat3 cov_r = Mat3::Identity() * sc.sigma_r * sc.sigma_r;
  const auto rays = sensor_rays(sc.sensor);
  const int ncell = std::max(8, int(std::lround(sc.map_size / sc.map_resolution)));
  ElevationMap map(ncell, ncell, sc.map_resolution, sc.mapping);

  const bool exporting = !opts.out_dir.empty();
  if (exporting) std::filesystem::create_directories(opts.out_dir);

  Se2 pose = sc.start;
  TrajectoryProblem::StartMotion motion;
  int moving_gear = 0;  // gear of the current motion, 0 at rest
  double t_sim = 0.0;
  std::optional<TrajectorySolution> current;  // plan being executed
  double t_in = 0.0;                          // time already executed along it

  for (int cycle = 0;; ++cycle) {
    if (t_sim >= sc.max_time - 1e-9) {
      fail(Failure::kTimeout, "simulated time limit");
      break;
    }
    // sense and map
    Vec3 p_true;
    Mat3 R_true;
    if (!truth.contains(pose.x, pose.y)) {
      fail(Failure::kMapExit, "robot left the terrain");
      break;
    }
    detail::truth_pose(truth, pose, &p_true, &R_true);
    NoisyPose truth_np;
    truth_np.p = p_true;
    truth_np.R = R_true;
    const NoisyPose est = sample_noisy_pose(p_true, R_true, cov_b, cov_r, rng_pose);
    const ScanResult scan = simulate_scan(truth, truth_np, sc.sensor, &rng_sensor, rays);

    const auto t_map = std::chrono::steady_clock::now();
    map.recenter(est.p.x(), est.p.y());
    map.update(est, scan.points, sc.sensor);
    if (!map.any_known()) {
      fail(Failure::kMapExit, "no terrain observed");
      break;
    }
    const HeightField hf = inpaint(map);
    Se2RiskGrid grid = build_risk_grid(hf, Se2GridSpec::covering(hf, sc.nyaw), sc.assessment);
    sdf_from_obstacles(grid);
    m.mapping_ms.push_back(detail::ms_since(t_map));
    const GridSource src(grid, hf);

    if (exporting && opts.snapshots) {
      write_grid_binary(opts.out_dir + "/map.grid", map.to_layers());
      write_grid_binary(opts.out_dir + "/risk.grid", grid.to_layers());
    }

    if (!src.contains(sc.goal.x, sc.goal.y) || !src.contains(pose.x, pose.y)) {
      fail(Failure::kMapExit, "goal or robot outside the local map");
      break;
    }

    // plan; on failure fall back to the remainder of the previous plan if it still audits clean
    const auto t_plan = std::chrono::steady_clock::now();
    Failure why = Failure::kNone;
    std::string why_text;
    std::optional<TrajectorySolution> fresh;
    try {
      const Se2Path path = hybrid_astar(src, pose, sc.goal, scfg);
      // a replan cannot reverse a moving robot instantly; start such a plan from rest
      TrajectoryProblem::StartMotion mo = motion;
      if (moving_gear != 0 && path.eta.size() > 1 && path.eta[1] != moving_gear) mo = {};
      try {
        AlmResult res = optimize_path(src, path, op, {}, mo);
        out.solver_log += "plan " + std::to_string(cycle) + "\n" + res.report.to_text();
        const AuditReport audit = audit_trajectory(res.solution, src, op, 10 * op.K);
        if (audit.singular || audit.worst() > kAuditTolerance) {
          why = Failure::kAuditFailure;
          int worst = 0;
          for (int k = 1; k < kConstraintKinds; ++k)
            if (audit.max_violation[k] > audit.max_violation[worst]) worst = k;
          char buf[96];
          std::snprintf(buf, sizeof buf, "plan violates its limits at the fine audit (%s %.3g%s)", constraint_name(worst),
                        audit.max_violation[worst], audit.singular ? ", singular" : "");
          why_text = buf;
        } else {
          m.audit_worst = std::max(m.audit_worst, audit.worst());
          fresh = std::move(res.solution);
        }
      } catch (const NonconvergenceError& e) {
        out.solver_log += "plan " + std::to_string(cycle) + " (not converged)\n" + e.best().report.to_text();
        why = Failure::kNonconvergence;
        why_text = e.what();
      } catch (const Error& e) {
        why = Failure::kNonconvergence;
        why_text = e.what();
      }
    } catch (const Error& e) {
      why = e.code() == ErrorCode::kInvalidEndpoint ? Failure::kInvalidEndpoint : Failure::kNoPath;
      why_text = e.what();
    }
    m.t_p.push_back(detail::ms_since(t_plan));
    ++m.plans;
    if (fresh) {
      current = std::move(fresh);
      t_in = 0.0;
    } else {
      ++m.replan_failures;
      const bool keep = current && audit_trajectory(*current, src, op, 10 * op.K, t_in).worst() <= kAuditTolerance;
      if (!keep) {
        fail(why, why_text);
        break;
      }
    }
    const TrajectorySolution& sol = *current;

    // execute up to the next replan, or to the end when little is left
    const double T = sol.duration();
    const bool last = T - t_in <= 1.5 * sc.replan_period;
    const double t_end = last ? T : t_in + sc.replan_period;
    std::vector<ControlSample> controls;
    try {
      controls = solution_controls(sol, src, rp, sc.control_dt);
    } catch (const Error& e) {
      fail(Failure::kAuditFailure, e.what());
      break;
    }
    const std::size_t k0 = std::size_t(std::lround(t_in / sc.control_dt));
    const std::size_t k1 = std::min(controls.size() - 1, std::size_t(std::ceil(t_end / sc.control_dt - 1e-9)));
    if (k1 <= k0) {
      fail(Failure::kAuditFailure, "empty execution window");
      break;
    }
    controls = std::vector<ControlSample>(controls.begin() + long(k0), controls.begin() + long(k1) + 1);
    KinematicTrace kt;
    try {
      kt = integrate_kinematics(controls, sc.control_dt, src, pose, sc.integrate_dt, rp);
    } catch (const Error& e) {
      fail(Failure::kMapExit, e.what());
      break;
    }
    if (kt.truncated) {
      fail(Failure::kMapExit, "robot left the local map");
      break;
    }
    const double t_exec = sc.control_dt * double(controls.size() - 1);
    for (std::size_t i = out.trace.empty() ? 0 : 1; i < kt.points.size(); ++i) {
      TracePoint tp = kt.points[i];
      tp.t += t_sim;
      out.trace.push_back(tp);
    }
    m.gear_switches += detail::switches_between(sol, t_in, t_in + t_exec);
    t_sim += t_exec;
    t_in += t_exec;
    const TracePoint& end = kt.points.back();
    pose = Se2{end.x, end.y, end.theta};

    if (last) {
      const double miss = std::hypot(pose.x - sc.goal.x, pose.y - sc.goal.y);
      if (miss > sc.goal_tolerance) {
        fail(Failure::kMapExit, "arrived off the goal");
        break;
      }
      // the plan ends on the goal exactly; drop the integration drift from the export
      out.trace.back().x = sc.goal.x;
      out.trace.back().y = sc.goal.y;
      out.trace.back().theta = sc.goal.theta;
      out.last_plan = sol;
      m.success = true;
      m.failure = Failure::kNone;
      m.T_f = t_sim;
      m.l_traj = detail::trace_length(out.trace);
      break;
    }

    // continue the motion of the plan at the cut
    const TrajectorySample s = sol.at_time(t_in);
    const double c = s.d1.norm();
    motion = {};
    moving_gear = 0;
    if (c > 1e-9 && s.sd * c > 1e-6) {
      motion.d2 = s.d2 / (c * c);
      motion.sd = s.sd * c;
      motion.sdd = s.sdd * c;
      moving_gear = s.eta;
    }
  }

  if (exporting) {
    if (m.success) write_trajectory_csv(opts.out_dir + "/trajectory.csv", out.trace);
    std::ofstream(opts.out_dir + "/solver_report.txt") << out.solver_log;
    std::ofstream f(opts.out_dir + "/metrics.csv");
    f << run_metrics_header() << '\n' << run_metrics_row(sc.name, m) << '\n';
  }
  return out;
}


/// The default scenario as commented JSON, one note per section.
inline std::string scenario_template() {
  static const std::map<std::string, std::string> notes = {
      {"name", "label used in CSV rows"},
      {"seed", "drives terrain generation, sensor noise and pose noise"},
      {"terrain", "value_noise or sinusoidal generator, lengths in m; bumps are Gaussian mounds {x, y, h, sigma}; "
                  "\"file\" loads a grid written by export-terrain instead"},
      {"start", "[x, y, theta] in m and rad"},
      {"goal", "[x, y, theta]; must be traversable"},
      {"sensor", "angles in rad, ranges in m, point_sigma is the per-axis point noise std"},
      {"noise", "pose noise std: sigma_b in m, sigma_r in rad"},
      {"map", "robot-centric elevation map: side length m, cell m, yaw bins of the risk grid"},
      {"assessment", "footprint semi-axes m, risk weights (sum 1) and normalizers"},
      {"robot", "wheelbase m, steering rad, speed m/s, accelerations m/s^2, tilt limits rad"},
      {"optimizer", "time and risk weights, risk and clearance limits, tangent floor, samples per segment, solver caps, limit tightening fraction"},
      {"search", "hybrid A* lattice: xy cell m, yaw bins, primitive length m, steering samples"},
      {"replan_period", "s of simulated time between plans"},
      {"max_time", "s of simulated time before the run is abandoned"},
      {"control_dt", "s between control samples handed to the integrator"},
      {"integrate_dt", "RK4 step, s"},
      {"goal_tolerance", "m, allowed arrival miss of the integrated robot"},
      {"search_steer_fraction", "share of the steering limit the path search may use"}};
  const nlohmann::json j = scenario_to_json(Scenario{});
  std::string out = "{\n";
  std::size_t k = 0;
  for (auto it = j.begin(); it != j.end(); ++it, ++k) {
    const auto n = notes.find(it.key());
    if (n != notes.end()) out += "  // " + n->second + "\n";
    std::string v = it.value().dump(2);
    std::string ind;
    for (char ch : v) {
      ind += ch;
      if (ch == '\n') ind += "  ";
    }
    out += "  \"" + it.key() + "\": " + ind + (k + 1 < j.size() ? ",\n" : "\n");
  }
  return out + "}\n";
}

/// A set of generated terrains sharing one base scenario.
struct Batch {
  Scenario base;
  int terrains = 20;
  std::uint64_t seed = 1;
  double min_distance = 6.0;
  double max_distance = 15.0;
  double margin = 3.0;  // keep sampled poses this far inside the terrain edge
};

inline Batch batch_from_json(const nlohmann::json& j) {
  Batch b;
  if (j.contains("scenario")) b.base = scenario_from_json(j.at("scenario"));
  detail::opt(j, "terrains", b.terrains);
  detail::opt(j, "seed", b.seed);
  detail::opt(j, "min_distance", b.min_distance);
  detail::opt(j, "max_distance", b.max_distance);
  detail::opt(j, "margin", b.margin);
  require(b.terrains >= 1, ErrorCode::kInvalidParameter, "batch needs at least one terrain");
  require(b.min_distance > 0 && b.max_distance >= b.min_distance && b.margin >= 0, ErrorCode::kInvalidParameter,
          "batch sampling");
  return b;
}

inline Batch load_batch(const std::string& path) {
  std::ifstream f(path);
  require(bool(f), ErrorCode::kIo, "cannot open batch file");
  try {
    return batch_from_json(nlohmann::json::parse(f, nullptr, true, true));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidParameter, std::string("batch: ") + e.what());
  }
}

/// Rejection-samples `count` start/goal pairs with truth risk below r_max / 2 and distance in range.
inline std::vector<std::pair<Se2, Se2>> sample_pairs(const HeightField& truth, const Batch& b, int count,
                                                     std::mt19937_64& rng) {
  const double lim = 0.5 * b.base.optimizer.r_max;
  std::uniform_real_distribution<double> ux(truth.xmin() + b.margin, truth.xmax() - b.margin);
  std::uniform_real_distribution<double> uy(truth.ymin() + b.margin, truth.ymax() - b.margin);
  std::uniform_real_distribution<double> ut(-kPi, kPi);
  auto good = [&](const Se2& s) { return truth_risk(truth, s, b.base.assessment) < lim; };
  std::vector<std::pair<Se2, Se2>> out;
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
      const Se2 a{ux(rng), uy(rng), ut(rng)}, g{ux(rng), uy(rng), ut(rng)};
      const double d = std::hypot(g.x - a.x, g.y - a.y);
      if (d < b.min_distance || d > b.max_distance || !good(a) || !good(g)) continue;
      out.emplace_back(a, g);
      break;
    }
  }
  return out;
}

struct BenchRow {
  std::string name;
  int trials = 0;
  int successes = 0;
  double T_f = 0.0, l_traj = 0.0;  // means over successful runs
  std::array<int, kFailureKinds> failures{};
  double t_p = 0.0;         // mean over all plans, ms
  double mapping_ms = 0.0;  // mean over all updates, ms
  int plans = 0;

  double success_rate() const { return trials ? double(successes) / trials : 0.0; }
};

struct RunRecord {
  std::string terrain;
  int pair = 0;
  Se2 start, goal;
  RunMetrics metrics;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<RunRecord> runs;

  double success_rate() const {
    int n = 0, s = 0;
    for (const auto& r : rows) {
      n += r.trials;
      s += r.successes;
    }
    return n ? double(s) / n : 0.0;
  }
  double mean_t_p() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : runs)
      for (double t : r.metrics.t_p) {
        sum += t;
        ++n;
      }
    return n ? sum / n : 0.0;
  }
};

/// Runs `trials` sampled pairs on each terrain of the batch. Failures are counted, never thrown.
inline BenchResult benchmark(const Batch& b, int trials,
                             const std::function<void(const RunRecord&)>& on_run = nullptr) {
  BenchResult res;
  if (trials <= 0) return res;
  for (int i = 0; i < b.terrains; ++i) {
    Scenario sc = b.base;
    char name[32];
    std::snprintf(name, sizeof name, "terrain_%02d", i);
    sc.seed = mix_seed(b.seed, std::uint64_t(i));
    const HeightField truth = scenario_terrain(sc);
    std::mt19937_64 rng = RngStreams(sc.seed).stream(std::uint64_t(RngStream::kSampling));
    const auto pairs = sample_pairs(truth, b, trials, rng);
    BenchRow row;
    row.name = name;
    row.trials = trials;
    double tp = 0.0, mp = 0.0;
    int nmap = 0;
    row.failures[int(Failure::kInvalidEndpoint)] += trials - int(pairs.size());  // no pair could be drawn
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      Scenario run = sc;
      run.name = std::string(name) + "_" + std::to_string(k);
      run.start = pairs[k].first;
      run.goal = pairs[k].second;
      RunRecord rec{name, int(k), run.start, run.goal, {}};
      try {
        rec.metrics = run_scenario(run).metrics;
      } catch (const Error& e) {
        rec.metrics.failure = Failure::kInvalidEndpoint;
        rec.metrics.detail = e.what();
      }
      const auto& m = rec.metrics;
      if (m.success) {
        ++row.successes;
        row.T_f += m.T_f;
        row.l_traj += m.l_traj;
      } else {
        ++row.failures[int(m.failure)];
      }
      for (double t : m.t_p) tp += t;
      row.plans += int(m.t_p.size());
      for (double t : m.mapping_ms) mp += t;
      nmap += int(m.mapping_ms.size());
      if (on_run) on_run(rec);
      res.runs.push_back(std::move(rec));
    }
    if (row.successes) {
      row.T_f /= row.successes;
      row.l_traj /= row.successes;
    }
    row.t_p = row.plans ? tp / row.plans : 0.0;
    row.mapping_ms = nmap ? mp / nmap : 0.0;
    res.rows.push_back(row);
  }
  return res;
}

/// Table-style summary with only deterministic values.
inline std::string bench_metrics_csv(const BenchResult& r) {
  std::string s = "scenario,trials,success_rate,T_f,l_traj";
  for (int k = 1; k < kFailureKinds; ++k) s += std::string(",") + failure_name(Failure(k));
  s += "\n";
  for (const auto& row : r.rows) {
    s += row.name + "," + std::to_string(row.trials) + "," + fmt_num(row.success_rate()) + "," +
         (row.successes ? fmt_num(row.T_f) + "," + fmt_num(row.l_traj) : std::string(","));
    for (int k = 1; k < kFailureKinds; ++k) s += "," + std::to_string(row.failures[k]);
    s += "\n";
  }
  return s;
}

inline std::string bench_runs_csv(const BenchResult& r) {
  std::string s = "terrain,pair,start_x,start_y,start_theta,goal_x,goal_y,goal_theta," + run_metrics_header() + "\n";
  for (const auto& rec : r.runs) {
    s += rec.terrain + "," + std::to_string(rec.pair) + "," + fmt_num(rec.start.x) + "," + fmt_num(rec.start.y) + "," +
         fmt_num(rec.start.theta) + "," + fmt_num(rec.goal.x) + "," + fmt_num(rec.goal.y) + "," +
         fmt_num(rec.goal.theta) + "," + run_metrics_row(rec.terrain + "_" + std::to_string(rec.pair), rec.metrics) +
         "\n";
  }
  return s;
}

inline std::string bench_timing_csv(const BenchResult& r) {
  std::string s = "scenario,plans,t_p_ms,mapping_ms\n";
  for (const auto& row : r.rows)
    s += row.name + "," + std::to_string(row.plans) + "," + fmt_num(row.t_p) + "," + fmt_num(row.mapping_ms) + "\n";
  return s;
}

struct ThroughputConfig {
  double size_m = 8.0;
  int nyaw = 8;
  double resolution = 0.1;
};

struct ThroughputRow {
  ThroughputConfig cfg;
  long states = 0;
  int points = 0;
  double median_ms = 0.0, min_ms = 0.0;
  bool within_budget = false;
  std::uint64_t risk_hash = 0;  // FNV-1a of the risk and sdf layers
};

namespace detail {
inline std::uint64_t fnv1a(const std::vector<double>& v, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) h = (h ^ p[i]) * 1099511628211ULL;
  return h;
}
}  // namespace detail

/// Times the mapping pipeline (fusion with ray clearing, inpainting, assessment, SDF) for one
/// scan per configuration, `repeats` times each on a fresh map.
inline std::vector<ThroughputRow> throughput_bench(const std::vector<ThroughputConfig>& cfgs, int repeats = 5,
                                                   double budget_ms = 50.0, std::uint64_t seed = 1) {
  require(repeats >= 1, ErrorCode::kInvalidParameter, "repeats");
  TerrainParams tp;
  tp.width_m = tp.height_m = 40.0;
  tp.origin = Vec2(-20.0, -20.0);
  tp.amplitude = 0.4;
  tp.rocks = 20;
  tp.rock_clearance = 1.5;
  const HeightField truth = generate_terrain(seed, tp);
  SensorModel sm;
  const auto rays = sensor_rays(sm);
  NoisyPose pose;
  Mat3 R;
  Vec3 p;
  detail::truth_pose(truth, Se2{0.05, 0.05, 0.0}, &p, &R);
  pose.p = p;
  pose.R = R;
  pose.sigma_b = Mat3::Identity() * 1e-4;
  pose.sigma_r = Mat3::Identity() * 1e-5;
  std::mt19937_64 rng = RngStreams(seed).stream(std::uint64_t(RngStream::kSensor));
  const ScanResult scan = simulate_scan(truth, pose, sm, &rng, rays);
  std::vector<ThroughputRow> out;
  for (const auto& c : cfgs) {
    require(c.size_m > 0 && c.resolution > 0 && c.nyaw >= 1, ErrorCode::kInvalidParameter, "throughput config");
    const int n = std::max(4, int(std::lround(c.size_m / c.resolution)));
    ThroughputRow row;
    row.cfg = c;
    row.states = long(n) * n * c.nyaw;
    row.points = int(scan.points.size());
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
      ElevationMap map(n, n, c.resolution);
      const auto t0 = std::chrono::steady_clock::now();
      map.recenter(pose.p.x(), pose.p.y());
      map.update(pose, scan.points, sm);
      const HeightField hf = inpaint(map);
      Se2RiskGrid g = build_risk_grid(hf, Se2GridSpec::covering(hf, c.nyaw), AssessmentParams{});
      sdf_from_obstacles(g);
      times.push_back(detail::ms_since(t0));
      const std::uint64_t h = detail::fnv1a(g.sdf(), detail::fnv1a(g.risk()));
      if (r == 0) row.risk_hash = h;
      else require(h == row.risk_hash, ErrorCode::kInvalidMeasurement, "mapping pipeline is not deterministic");
    }
    std::sort(times.begin(), times.end());
    row.median_ms = times[times.size() / 2];
    row.min_ms = times.front();
    row.within_budget = row.median_ms < budget_ms;
    out.push_back(row);
  }
  return out;
}

/// The 8-18 m x 8-32 yaw sweep at 0.1 m cells.
inline std::vector<ThroughputConfig> default_sweep() {
  std::vector<ThroughputConfig> v;
  for (double s : {8.0, 10.0, 12.0, 14.0, 16.0, 18.0})
    for (int k : {8, 16, 32}) v.push_back({s, k, 0.1});
  return v;
}

inline std::string throughput_csv(const std::vector<ThroughputRow>& rows) {
  std::string s = "size_m,resolution,nyaw,states,points,median_ms,min_ms,within_budget\n";
  for (const auto& r : rows)
    s += fmt_num(r.cfg.size_m) + "," + fmt_num(r.cfg.resolution) + "," + std::to_string(r.cfg.nyaw) + "," +
         std::to_string(r.states) + "," + std::to_string(r.points) + "," + fmt_num(r.median_ms) + "," +
         fmt_num(r.min_ms) + "," + (r.within_budget ? "1" : "0") + "\n";
  return s;
}

}  // namespace sebnav
