// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion numbers...]   (all twelve by default)
// CSVs from the benchmark criteria go to $SEBNAV_OUT_DIR, or ./acceptance_out.
#include "sebnav/harness.hpp"

#include "rs_oracle.hpp"

#include <cstdarg>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <set>

#ifndef SEBNAV_DESK_BATCH
#define SEBNAV_DESK_BATCH "benchmarks/desk.json"
#endif

using namespace sebnav;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string strf(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string out_dir() {
  const char* e = std::getenv("SEBNAV_OUT_DIR");
  return e && *e ? e : "acceptance_out";
}

double seconds_since(std::chrono::steady_clock::time_point t0) { return detail::ms_since(t0) / 1000.0; }

// ---- 1: height variance of a scan point against Monte-Carlo ----

Mat3 random_psd(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n;
  Mat3 A;
  for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = n(rng);
  return scale * A * A.transpose() / 3.0;
}

double mc_height_variance(const Vec3& s, const Mat3& R_B, const Vec3& p_B, const Mat3& R_BS, const Vec3& p_BS,
                          const Mat3& Ss, const Mat3& Sr, const Mat3& Sb, int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  const Mat3 Ls = psd_sqrt(Ss), Lr = psd_sqrt(Sr), Lb = psd_sqrt(Sb);
  double m = 0.0, m2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const Vec3 ds = Ls * Vec3(g(rng), g(rng), g(rng));
    const Vec3 dr = Lr * Vec3(g(rng), g(rng), g(rng));
    const Vec3 db = Lb * Vec3(g(rng), g(rng), g(rng));
    const double z = (R_B * so3_exp(dr) * (R_BS * (s + ds) + p_BS) + p_B + db).z();
    const double d = z - m;
    m += d / (k + 1);
    m2 += d * (z - m);
  }
  return m2 / (n - 1);
}

Verdict c1_variance() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 s(3 * u(rng), 3 * u(rng), u(rng));
    const Mat3 RB = so3_exp(Vec3(0.3 * u(rng), 0.3 * u(rng), 3 * u(rng)));
    const Mat3 RBS = so3_exp(Vec3(0.2 * u(rng), 0.2 * u(rng), u(rng)));
    const Vec3 pB(5 * u(rng), 5 * u(rng), u(rng)), pBS(0.1 * u(rng), 0.1 * u(rng), 0.5);
    const Mat3 Ss = random_psd(rng, 1e-4), Sr = random_psd(rng, 1e-5), Sb = random_psd(rng, 1e-4);
    const double v = point_height_variance(s, RB, RBS, pBS, Ss, Sr, Sb);
    const double mc = mc_height_variance(s, RB, pB, RBS, pBS, Ss, Sr, Sb, 100000, rng);
    worst = std::max(worst, std::abs(mc - v) / v);
  }
  const double secs = seconds_since(t0);
  return {worst < 0.05 && secs < 30.0, strf("50 tuples x 1e5 samples, worst relative error %.4f, %.1f s", worst, secs)};
}

// ---- 2: Kalman fusion ----

Verdict c2_fusion() {
  std::mt19937_64 rng(1002);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double fuse_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double h0 = 4 * u(rng) - 2, h1 = 4 * u(rng) - 2, v = 1e-4 + u(rng);
    const auto a = kf_update({h0, v, true}, {{h1, v}}, 1e300);
    const auto b = kf_update({}, {{h0, v}, {h1, v}}, 1e300);
    for (const auto& c : {a, b})
      fuse_err = std::max({fuse_err, std::abs(c.variance - 0.5 * v), std::abs(c.height - 0.5 * (h0 + h1))});
  }
  double order_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::pair<double, double>> m(2 + t % 9);
    for (auto& x : m) x = {4 * u(rng) - 2, 1e-3 + u(rng)};
    const ElevationCell prior{u(rng), 1e-3 + u(rng), t % 4 != 0};
    const auto a = kf_update(prior, m, 1e300);
    std::shuffle(m.begin(), m.end(), rng);
    const auto b = kf_update(prior, m, 1e300);
    order_err = std::max({order_err, std::abs(a.height - b.height), std::abs(a.variance - b.variance)});
  }
  return {fuse_err <= 1e-12 && order_err <= 1e-12,
          strf("equal-variance fusion error %.2e, order sensitivity %.2e over 1000 sequences", fuse_err, order_err)};
}

// ---- 3: eigen-solver, plane pitch, risk hand check ----

Vec3 charpoly_roots(const Mat3& A) {
  const double c2 = A.trace();
  const double c1 = A(0, 0) * A(1, 1) + A(0, 0) * A(2, 2) + A(1, 1) * A(2, 2) - A(0, 1) * A(0, 1) -
                    A(0, 2) * A(0, 2) - A(1, 2) * A(1, 2);
  const double c0 = A.determinant();
  auto f = [&](double l) { return ((l - c2) * l + c1) * l - c0; };
  const double bound = A.cwiseAbs().rowwise().sum().maxCoeff() + 1.0;
  std::vector<double> roots;
  const int n = 20000;
  double a = -bound, fa = f(a);
  for (int s = 1; s <= n && roots.size() < 3; ++s) {
    const double b = -bound + 2.0 * bound * s / n, fb = f(b);
    if (fa == 0.0) roots.push_back(a);
    else if (fa * fb < 0.0) {
      double lo = a, hi = b, flo = fa;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi), fm = f(mid);
        if ((fm < 0) == (flo < 0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      roots.push_back(0.5 * (lo + hi));
    }
    a = b;
    fa = fb;
  }
  while (roots.size() < 3) roots.push_back(roots.back());
  std::sort(roots.begin(), roots.end());
  return Vec3(roots[0], roots[1], roots[2]);
}

HeightField plane_field(double alpha) { return AnalyticTerrain::plane(alpha).sample(81, 81, 0.05, Vec2(-2.0, -2.0)); }

Verdict c3_assessment() {
  std::mt19937_64 rng(1003);
  std::normal_distribution<double> n;
  double eig_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    Mat3 B;
    for (int i = 0; i < 9; ++i) B(i / 3, i % 3) = n(rng);
    const Mat3 A = B * B.transpose();
    const SymEig3 e = sym_eig3(A);
    const Vec3 ref = charpoly_roots(A);
    Eigen::JacobiSVD<Mat3> svd(A - ref(0) * Mat3::Identity(), Eigen::ComputeFullV);
    const Vec3 v = svd.matrixV().col(2);
    eig_err = std::max({eig_err, (e.values - ref).cwiseAbs().maxCoeff(),
                        std::min((e.min_vector - v).norm(), (e.min_vector + v).norm())});
  }
  double pitch_err = 0.0;
  for (int k = 1; k <= 5; ++k) {
    const double alpha = 0.1 * k;
    pitch_err = std::max(pitch_err, std::abs(assess_state(plane_field(alpha), {0.1, -0.2, 0.0}, {}).phi_x - alpha));
  }
  AssessmentParams hp;
  hp.w = Vec3(1.0 / 3, 1.0 / 3, 1.0 / 3);
  hp.kappa_max = 0.1;
  hp.phi_x_max = hp.phi_y_max = 0.52;
  const double risk = assess_state(plane_field(0.3), {0.0, 0.0, 0.0}, hp).risk;
  const double risk_err = std::abs(risk - (1.0 / 3.0) * (0.3 / 0.52));
  return {eig_err <= 1e-9 && pitch_err <= 1e-3 && risk_err <= 1e-9,
          strf("eigen error %.2e on 1000 matrices, plane pitch error %.2e rad, risk %.6f (error %.2e)", eig_err,
               pitch_err, risk, risk_err)};
}

// ---- 4: signed distance field ----

Verdict c4_sdf() {
  std::mt19937_64 rng(1004);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  long mismatches = 0, lipschitz = 0;
  const double res = 0.1;
  for (int t = 0; t < 100; ++t) {
    Se2GridSpec spec;
    spec.nx = spec.ny = 64;
    spec.nyaw = 1;
    spec.resolution = res;
    Se2RiskGrid g(spec);
    const double density = 0.01 + 0.4 * u(rng);
    for (std::size_t q = 0; q < g.risk().size(); ++q) g.set_risk(q, u(rng) < density ? 1.0 : 0.99 * u(rng));
    sdf_from_obstacles(g);
    std::vector<Vec2> obst, free;
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) (g.risk_at(i, j, 0) >= 1.0 ? obst : free).push_back(Vec2(i, j));
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) {
        const bool ob = g.risk_at(i, j, 0) >= 1.0;
        double best = -1;
        for (const Vec2& c : ob ? free : obst) {
          const double d = (c.x() - i) * (c.x() - i) + (c.y() - j) * (c.y() - j);
          if (best < 0 || d < best) best = d;
        }
        // cell-centre convention: free cells measure to the nearest obstacle centre, obstacle
        // cells to the nearest free centre minus one cell
        double expect;
        if (best < 0) expect = ob ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
        else expect = ob ? -(std::sqrt(best) - 1.0) * res : std::sqrt(best) * res;
        if (g.sdf_at(i, j, 0) != expect) ++mismatches;
        if (i + 1 < 64 && std::abs(g.sdf_at(i + 1, j, 0) - g.sdf_at(i, j, 0)) > res + 1e-12) ++lipschitz;
        if (j + 1 < 64 && std::abs(g.sdf_at(i, j + 1, 0) - g.sdf_at(i, j, 0)) > res + 1e-12) ++lipschitz;
      }
  }
  return {mismatches == 0 && lipschitz == 0,
          strf("100 layers 64x64: %ld cells differ from brute force, %ld adjacent pairs break 1-Lipschitz", mismatches,
               lipschitz)};
}

// ---- 5: trilinear query ----

Verdict c5_trilinear() {
  Se2GridSpec spec;
  spec.nx = 12;
  spec.ny = 10;
  spec.nyaw = 8;
  spec.resolution = 0.25;
  spec.origin = Vec2(-1.0, 0.5);
  const double a = 0.3, b = -0.7, c = 0.2, d = 1.0;
  Se2RiskGrid g(spec);
  for (int k = 0; k < spec.nyaw; ++k)
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i)
        g.sdf()[spec.index(i, j, k)] =
            a * (spec.origin.x() + i * spec.resolution) + b * (spec.origin.y() + j * spec.resolution) + c * spec.yaw(k) + d;
  // Unwrapped oracle: the yaw axis continued past the last layer with layer 0 at +pi.
  const double seam = spec.yaw(spec.nyaw - 1);
  std::mt19937_64 rng(1005);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double err = 0.0, gerr = 0.0;
  int across = 0;
  for (int t = 0; t < 1000; ++t) {
    const double x = spec.origin.x() + u(rng) * (spec.nx - 1) * spec.resolution;
    const double y = spec.origin.y() + u(rng) * (spec.ny - 1) * spec.resolution;
    // every fourth point inside the seam cell
    const double th = t % 4 == 0 ? seam + u(rng) * spec.yaw_step() - (u(rng) < 0.5 ? 0.0 : 2 * kPi) : -kPi + u(rng) * 2 * kPi;
    const double thw = th < -kPi ? th + 2 * kPi : th;
    double value, dth;
    if (thw < seam) {
      value = a * x + b * y + c * thw + d;
      dth = c;
    } else {
      ++across;
      const double f = (thw - seam) / spec.yaw_step();
      const double v0 = a * x + b * y + c * seam + d, v1 = a * x + b * y + c * (-kPi) + d;
      value = (1 - f) * v0 + f * v1;
      dth = (v1 - v0) / spec.yaw_step();
    }
    const auto s = g.query(x, y, th, Field::kSdf);
    err = std::max(err, std::abs(s.value - value));
    gerr = std::max({gerr, std::abs(s.grad.x() - a), std::abs(s.grad.y() - b), std::abs(s.grad.z() - dth)});
  }
  // the yaw slope across the seam is a difference quotient, so it gets a looser bound
  return {err <= 1e-12 && gerr <= 1e-9,
          strf("1000 points (%d across the seam), worst value error %.2e, gradient error %.2e", across, err, gerr)};
}

// ---- 6: flatness round trip and gravity term ----

Verdict c6_flatness() {
  RobotParams rp;
  AnalyticSource src(AnalyticTerrain::sinusoid(0.3, 6.0));
  const double dt = 1e-4, T = 11.0;
  double ep = 0.0, eth = 0.0, dist = 1e9;
  for (int eta : {1, -1}) {
    auto p = [](double s) { return Vec2(s, 0.5 * std::sin(0.4 * s)); };
    auto d1 = [](double s) { return Vec2(1.0, 0.2 * std::cos(0.4 * s)); };
    auto d2 = [](double s) { return Vec2(0.0, -0.08 * std::sin(0.4 * s)); };
    auto sl = [](double t) { return t + 0.3 * std::sin(0.5 * t); };
    auto sd = [](double t) { return 1.0 + 0.15 * std::cos(0.5 * t); };
    auto sdd = [](double t) { return -0.075 * std::sin(0.5 * t); };
    std::vector<ControlSample> u;
    const int n = int(std::lround(T / dt));
    for (int k = 0; k <= n; ++k) {
      const double t = k * dt, s = sl(t);
      const Vec2 q = p(s), d = d1(s), dd = d2(s);
      const double th = std::atan2(eta * d.y(), eta * d.x());
      const auto c = flat_outputs({d.x(), d.y(), dd.x(), dd.y(), sd(t), sdd(t), eta}, terrain_pose(src, {q.x(), q.y(), th}), rp);
      u.push_back({c.v_x, c.delta});
    }
    const Vec2 d0 = d1(0);
    const auto tr = integrate_kinematics(u, dt, src, {0.0, 0.0, std::atan2(eta * d0.y(), eta * d0.x())}, dt, rp);
    if (tr.truncated) return {false, "integration left the terrain"};
    double len = 0.0;
    for (std::size_t i = 0; i < tr.points.size(); ++i) {
      const auto& q = tr.points[i];
      const double s = sl(q.t);
      const Vec2 r = p(s), d = d1(s);
      ep = std::max(ep, std::hypot(q.x - r.x(), q.y - r.y()));
      eth = std::max(eth, std::abs(wrap_angle(q.theta - std::atan2(eta * d.y(), eta * d.x()))));
      if (i) len += std::hypot(q.x - tr.points[i - 1].x, q.y - tr.points[i - 1].y);
    }
    dist = std::min(dist, len);
  }

  // a_x - dv_x/dt = g x_b.b3 on constant-speed climbs of planes, from the flat outputs and
  // from the integrated path (whose v_x is constant, so its finite difference vanishes)
  double grav = 0.0;
  for (double alpha : {0.1, 0.2, 0.3})
    for (double sdot : {0.4, 0.7}) {
      const AnalyticSource plane(AnalyticTerrain::plane(alpha));
      const TerrainFrame f = terrain_pose(plane, {0.0, 0.0, 0.0});
      const auto c = flat_outputs({1, 0, 0, 0, sdot, 0, 1}, f, rp);
      const std::vector<ControlSample> u(201, ControlSample{c.v_x, 0.0});
      const auto tr = integrate_kinematics(u, 0.01, plane, {0.0, 0.0, 0.0}, 1e-3, rp);
      if (tr.truncated) return {false, "climb left the terrain"};
      for (std::size_t i = 1; i + 1 < tr.points.size(); i += 10) {
        const auto& a = tr.points[i - 1];
        const auto& b = tr.points[i + 1];
        const double dv = (b.v_x - a.v_x) / (b.t - a.t);
        const double gz = rp.gravity * tr.points[i].R.col(0).z();
        grav = std::max({grav, std::abs(tr.points[i].a_x - dv - gz), std::abs(c.a_x - dv - gz)});
      }
    }
  return {ep <= 1e-3 && eth <= 1e-3 && dist >= 10.0 && grav <= 1e-4,
          strf("both gears over %.2f m at dt 1e-4: position %.2e m, heading %.2e rad; gravity term error %.2e m/s^2",
               dist, ep, eth, grav)};
}

// ---- 7: gradient audit ----

struct Instance {
  Se2 start, goal;
  std::vector<int> eta, n;
  Eigen::VectorXd x;
};

Instance random_instance(std::mt19937_64& rng, int gears) {
  std::uniform_real_distribution<double> u(-1, 1);
  Instance r;
  r.start = {0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng)};
  InitGuess ig;
  if (gears == 1) {
    r.goal = {5 + u(rng), 0.5 * u(rng), 0.3 * u(rng)};
    GearSectionInit s;
    s.eta = 1;
    const int n = 2 + int(2.5 + 2.5 * u(rng)) % 3;
    for (int i = 1; i < n; ++i) s.points.push_back(Vec2(5.0 * i / n + 0.2 * u(rng), 0.3 * u(rng)));
    for (int i = 0; i < n; ++i) s.spans.push_back(5.0 / n * (1 + 0.2 * u(rng)));
    ig.sections.push_back(s);
  } else {
    r.goal = {2 + 0.2 * u(rng), 1.0 + 0.2 * u(rng), 0.4 + 0.1 * u(rng)};
    GearSectionInit a, b;
    a.eta = 1;
    b.eta = -1;
    a.points = {Vec2(1.5 + 0.1 * u(rng), 0.1 * u(rng)), Vec2(3 + 0.1 * u(rng), 0.2 + 0.1 * u(rng))};
    a.spans = {1.5, 1.5, 1.2};
    b.points = {Vec2(3.0 + 0.1 * u(rng), 0.8 + 0.1 * u(rng))};
    b.spans = {1.1, 1.1};
    ig.sections = {a, b};
    ig.e_m.push_back(Eigen::Vector4d(4 + 0.1 * u(rng), 0.5 + 0.1 * u(rng), 0.9 + 0.1 * u(rng), 0.3 + 0.1 * u(rng)));
  }
  ig.T_f = 8.0 + u(rng);
  for (const auto& s : ig.sections) {
    r.eta.push_back(s.eta);
    r.n.push_back(int(s.spans.size()));
  }
  const AnalyticSource flat(AnalyticTerrain::flat());
  r.x = TrajectoryProblem(flat, r.start, r.goal, r.eta, r.n, OptimizerParams{}).pack(ig);
  return r;
}

Verdict c7_gradients() {
  AnalyticSource src(AnalyticTerrain::sinusoid(0.2, 5.0));
  src.add_disc(Vec2(2.5, 2.5), 0.5);
  src.add_disc(Vec2(3.0, -2.0), 0.4);
  double worst = 0.0;
  int coords = 0;
  for (int inst_id = 0; inst_id < 20; ++inst_id) {
    std::mt19937_64 rng(2000 + inst_id);
    const Instance inst = random_instance(rng, 1 + inst_id % 2);
    OptimizerParams prm;
    prm.rho_r = 5.0;
    TrajectoryProblem prob(src, inst.start, inst.goal, inst.eta, inst.n, prm);
    std::uniform_real_distribution<double> u(0, 1);
    if (inst_id % 3 == 2) prob.set_start_motion({Vec2(u(rng) - 0.5, u(rng) - 0.5), 0.2 + u(rng), u(rng) - 0.5});
    TrajectoryProblem::Multipliers mu;
    mu.lambda.resize(prob.constraint_count());
    for (double& l : mu.lambda) l = u(rng) < 0.5 ? 0.0 : u(rng);
    mu.rho = 10.0;
    const TrajectoryProblem::Multipliers* modes[] = {nullptr, &mu};
    for (const auto* m : modes) {
      Eigen::VectorXd g;
      prob.evaluate(inst.x, &g, m);
      const double h = 1e-6;
      for (int i = 0; i < prob.dim(); ++i) {
        Eigen::VectorXd a = inst.x, b = inst.x;
        a(i) += h;
        b(i) -= h;
        const double fd = (prob.evaluate(a, nullptr, m).value - prob.evaluate(b, nullptr, m).value) / (2 * h);
        worst = std::max(worst, std::abs(g(i) - fd) / std::max(1.0, std::abs(fd)));
        ++coords;
      }
    }
  }
  return {worst < 1e-4, strf("20 instances, %d coordinates (objective and augmented Lagrangian), worst relative error %.2e",
                             coords, worst)};
}

// ---- 8: converged benchmark plans audited at 10x sampling ----

Batch desk_batch() { return load_batch(SEBNAV_DESK_BATCH); }

Verdict c8_constraints() {
  const Batch b = desk_batch();
  const OptimizerParams& op = b.base.optimizer;
  const SearchConfig scfg = b.base.search_config();
  int converged = 0, failed = 0, bad = 0, singular = 0;
  double worst = 0.0, tangent = 0.0;
  for (int i = 0; converged < 50 && i < b.terrains; ++i) {
    Scenario sc = b.base;
    sc.seed = mix_seed(b.seed, std::uint64_t(i));
    const HeightField truth = scenario_terrain(sc);
    Se2GridSpec spec;
    spec.resolution = sc.map_resolution;
    spec.nx = int(std::floor((truth.xmax() - truth.xmin()) / spec.resolution)) + 1;
    spec.ny = int(std::floor((truth.ymax() - truth.ymin()) / spec.resolution)) + 1;
    spec.nyaw = sc.nyaw;
    spec.origin = truth.origin;
    Se2RiskGrid grid = build_risk_grid(truth, spec, sc.assessment);
    sdf_from_obstacles(grid);
    const GridSource src(grid, truth);
    std::mt19937_64 rng = RngStreams(sc.seed).stream(std::uint64_t(RngStream::kSampling));
    for (const auto& [s, g] : sample_pairs(truth, b, 10, rng)) {
      if (converged == 50) break;
      try {
        const AlmResult res = optimize_path(src, hybrid_astar(src, s, g, scfg), op);
        ++converged;
        const AuditReport a = audit_trajectory(res.solution, src, op, 10 * op.K);
        worst = std::max(worst, a.worst());
        tangent = std::max(tangent, a.max_violation[kTangent]);
        if (a.worst() > kAuditTolerance) ++bad;
        if (a.singular) ++singular;
      } catch (const Error&) {
        ++failed;  // no path or no converged plan: not part of this criterion
      }
    }
  }
  return {converged == 50 && bad == 0 && singular == 0,
          strf("%d converged plans (%d instances without one), worst relative violation %.4f, tangent floor %.4f, "
               "%d over 1%%, %d singular",
               converged, failed, worst, tangent, bad, singular)};
}

// ---- 9: Reeds-Shepp against exhaustive enumeration ----

Verdict c9_reeds_shepp() {
  std::mt19937_64 rng(1009);
  std::uniform_real_distribution<double> u(-1, 1);
  double err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Se2 a{5 * u(rng), 5 * u(rng), kPi * u(rng)}, b{5 * u(rng), 5 * u(rng), kPi * u(rng)};
    const double rho = 0.5 + std::abs(u(rng));
    const double dx = b.x - a.x, dy = b.y - a.y, c = std::cos(a.theta), s = std::sin(a.theta);
    const double ref = rho * rs_oracle::shortest((c * dx + s * dy) / rho, (-s * dx + c * dy) / rho, wrap_angle(b.theta - a.theta));
    err = std::max(err, std::abs(reeds_shepp_distance(a, b, rho) - ref));
  }
  double degenerate = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Se2 a{5 * u(rng), 5 * u(rng), kPi * u(rng)};
    const double rho = 0.5 + std::abs(u(rng)), d = 0.1 + 5 * std::abs(u(rng));
    degenerate = std::max(degenerate, std::abs(reeds_shepp_distance(a, a, rho)));
    const Se2 ahead{a.x + d * std::cos(a.theta), a.y + d * std::sin(a.theta), a.theta};
    degenerate = std::max(degenerate, std::abs(reeds_shepp_distance(a, ahead, rho) - d) / d);
  }
  return {err <= 1e-9 && degenerate <= 1e-12,
          strf("1000 pairs, worst length error %.2e; same-pose and straight-ahead error %.2e", err, degenerate)};
}

// ---- 10: reversing benefit ----

Verdict c10_reversing() {
  // Parallel parking: shift 1.2 m sideways into a gap between two parked obstacles.
  AnalyticSource src(AnalyticTerrain::flat(), 0.52, Eigen::Vector4d(-8, 8, -8, 8));
  src.add_disc(Vec2(1.8, 1.2), 0.4);
  src.add_disc(Vec2(-1.8, 1.2), 0.4);
  const Se2 start{0.0, 0.0, 0.0}, goal{0.0, 1.2, 0.0};
  Scenario sc;
  const OptimizerParams& op = sc.optimizer;
  struct Plan {
    bool ok = false;
    double T_f = 0.0;
    int switches = 0;
    std::string why;
  };
  auto plan = [&](bool reverse) {
    Plan p;
    sc.search.allow_reverse = reverse;
    try {
      const Se2Path path = hybrid_astar(src, start, goal, sc.search_config());
      const AlmResult res = optimize_path(src, path, op);
      const AuditReport a = audit_trajectory(res.solution, src, op, 10 * op.K);
      if (a.singular || a.worst() > kAuditTolerance) {
        p.why = "audit";
        return p;
      }
      p.ok = true;
      p.T_f = res.solution.duration();
      p.switches = int(res.solution.sections.size()) - 1;
    } catch (const Error& e) {
      p.why = e.what();
    }
    return p;
  };
  const Plan full = plan(true), fwd = plan(false);
  const bool pass = full.ok && full.switches >= 1 && (!fwd.ok || fwd.T_f >= 1.2 * full.T_f);
  std::string d = full.ok ? strf("full planner T_f %.2f s with %d gear switches", full.T_f, full.switches)
                          : "full planner failed: " + full.why;
  d += fwd.ok ? strf("; forward only T_f %.2f s (ratio %.2f)", fwd.T_f, full.ok ? fwd.T_f / full.T_f : 0.0)
              : "; forward only failed: " + fwd.why;
  return {pass, d};
}

// ---- 11: desk-scale benchmark and mapping throughput ----

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

Verdict c11_benchmark() {
  const Batch b = desk_batch();
  const auto t0 = std::chrono::steady_clock::now();
  const BenchResult r = benchmark(b, 10, [](const RunRecord& rec) {
    std::fprintf(stderr, "  %s pair %d: %s\n", rec.terrain.c_str(), rec.pair,
                 rec.metrics.success ? "ok" : failure_name(rec.metrics.failure));
  });
  const double wall = seconds_since(t0);
  const std::string dir = out_dir();
  std::filesystem::create_directories(dir);
  write_file(dir + "/bench_metrics.csv", bench_metrics_csv(r));
  write_file(dir + "/bench_runs.csv", bench_runs_csv(r));
  write_file(dir + "/bench_timing.csv", bench_timing_csv(r));

  // 120 x 120 x 16 at 0.1 m, then the size/yaw sweep
  const auto big = throughput_bench({{12.0, 16, 0.1}}, 7);
  const auto sweep = throughput_bench(default_sweep(), 5);
  write_file(dir + "/mapbench.csv", throughput_csv(sweep));
  std::vector<double> sizes;
  std::vector<int> yaws;
  for (const auto& row : sweep) {
    if (std::find(sizes.begin(), sizes.end(), row.cfg.size_m) == sizes.end()) sizes.push_back(row.cfg.size_m);
    if (std::find(yaws.begin(), yaws.end(), row.cfg.nyaw) == yaws.end()) yaws.push_back(row.cfg.nyaw);
  }
  auto median = [&](double s, int y) {
    for (const auto& row : sweep)
      if (row.cfg.size_m == s && row.cfg.nyaw == y) return row.median_ms;
    return 0.0;
  };
  // monotone along both axes of the sweep
  int breaks = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i)
    for (std::size_t k = 0; k < yaws.size(); ++k) {
      if (i + 1 < sizes.size() && median(sizes[i + 1], yaws[k]) < median(sizes[i], yaws[k])) ++breaks;
      if (k + 1 < yaws.size() && median(sizes[i], yaws[k + 1]) < median(sizes[i], yaws[k])) ++breaks;
    }
  const double map_ms = big.front().median_ms;
  const bool pass = r.success_rate() >= 0.9 && r.mean_t_p() < 500.0 && map_ms < 100.0 && breaks == 0;
  return {pass, strf("success %.3f over %zu runs, mean t_p %.1f ms, 120x120x16 mapping %.1f ms (median), "
                     "%d monotonicity breaks over %zu sweep points, %.0f s",
                     r.success_rate(), r.runs.size(), r.mean_t_p(), map_ms, breaks, sweep.size(), wall)};
}

// ---- 12: determinism ----

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Verdict c12_determinism() {
  Batch b = desk_batch();
  b.terrains = 2;
  b.seed = 77;
  std::vector<std::string> files;
  for (const char* run : {"a", "b"}) {
    const std::string dir = out_dir() + "/determinism_" + run;
    std::filesystem::create_directories(dir);
    const BenchResult r = benchmark(b, 3);
    write_file(dir + "/bench_metrics.csv", bench_metrics_csv(r));
    write_file(dir + "/bench_runs.csv", bench_runs_csv(r));
    files.push_back(slurp(dir + "/bench_metrics.csv") + slurp(dir + "/bench_runs.csv"));
  }
  return {!files[0].empty() && files[0] == files[1],
          strf("two runs of 2 terrains x 3 pairs, %zu bytes of metric CSV, %s", files[0].size(),
               files[0] == files[1] ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria{
      {"variance propagation", c1_variance},      {"Kalman fusion", c2_fusion},
      {"assessment oracles", c3_assessment},      {"signed distance field", c4_sdf},
      {"trilinear query", c5_trilinear},          {"flatness consistency", c6_flatness},
      {"gradient audit", c7_gradients},           {"constraint satisfaction", c8_constraints},
      {"Reeds-Shepp optimality", c9_reeds_shepp}, {"reversing benefit", c10_reversing},
      {"desk benchmark", c11_benchmark},          {"determinism", c12_determinism}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s  %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
