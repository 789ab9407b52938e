#include "sebnav/flatness.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sebnav;

namespace {

double ang_diff(double a, double b) { return std::abs(wrap_angle(a - b)); }

// Flat path given in s with its time law; samples the controls the flat formulas produce.
struct FlatPath {
  std::function<Vec2(double)> p, d1, d2;
  std::function<double(double)> s, sd, sdd;
  int eta = 1;
};

std::vector<ControlSample> controls_of(const FlatPath& fp, const TerrainSource& src, const RobotParams& rp, double T,
                                       double dtc) {
  std::vector<ControlSample> out;
  const int n = int(std::lround(T / dtc));
  for (int k = 0; k <= n; ++k) {
    const double t = k * dtc, s = fp.s(t);
    const Vec2 q = fp.p(s), d = fp.d1(s), dd = fp.d2(s);
    FlatState fs{d.x(), d.y(), dd.x(), dd.y(), fp.sd(t), fp.sdd(t), fp.eta};
    const double th = std::atan2(fp.eta * d.y(), fp.eta * d.x());
    const auto c = flat_outputs(fs, terrain_pose(src, {q.x(), q.y(), th}), rp);
    out.push_back({c.v_x, c.delta});
  }
  return out;
}

}  // namespace

TEST(TerrainPose, FlatIsIdentity) {
  AnalyticSource src(AnalyticTerrain::flat(0.3));
  const auto f = terrain_pose(src, {1, 2, 0});
  EXPECT_NEAR((f.rotation() - Mat3::Identity()).norm(), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(f.z, 0.3);
}

TEST(TerrainPose, PitchedPlane) {
  const double a = 0.3;
  AnalyticSource src(AnalyticTerrain::plane(a));
  const auto f = terrain_pose(src, {0.5, 0.5, 0});
  EXPECT_NEAR((f.x_b - Vec3(std::cos(a), 0, std::sin(a))).norm(), 0.0, 1e-14);
  EXPECT_NEAR((f.y_b - Vec3(0, 1, 0)).norm(), 0.0, 1e-14);
  EXPECT_NEAR((f.z_b - Vec3(-std::sin(a), 0, std::cos(a))).norm(), 0.0, 1e-14);
}

TEST(TerrainPose, OrthonormalFrames) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 2000; ++i) {
    Vec3 n(u(rng), u(rng), std::abs(u(rng)) + 0.05);
    n.normalize();
    const auto f = frame_from_normal(n, 4 * u(rng));
    const Mat3 R = f.rotation();
    EXPECT_LT((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
    EXPECT_NEAR(f.y_b.dot(f.x_yaw()), 0.0, 1e-12);
  }
}

TEST(TerrainPose, VerticalWallThrows) {
  try {
    frame_from_normal(Vec3(1, 0, 0), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateFrame);
  }
}

TEST(FlatOutputs, StraightLine) {
  RobotParams rp;
  const auto c = flat_outputs({1, 0, 0, 0, 1, 0, 1}, TerrainFrame{}, rp);
  EXPECT_DOUBLE_EQ(c.v_x, 1.0);
  EXPECT_DOUBLE_EQ(c.omega_z, 0.0);
  EXPECT_DOUBLE_EQ(c.delta, 0.0);
  EXPECT_DOUBLE_EQ(c.a_x, 0.0);
  EXPECT_DOUBLE_EQ(c.a_y, 0.0);
}

TEST(FlatOutputs, Circle) {
  RobotParams rp;
  const double R = 2.5, v = 0.8;
  for (double s : {0.0, 0.7, 2.0, 5.0}) {
    // unit-speed parameterisation
    FlatState fs{-std::sin(s / R), std::cos(s / R), -std::cos(s / R) / R, -std::sin(s / R) / R, v, 0.0, 1};
    const auto c = flat_outputs(fs, frame_from_normal(Vec3::UnitZ(), s / R + kPi / 2), rp);
    EXPECT_NEAR(c.v_x, v, 1e-14);
    EXPECT_NEAR(c.omega_z, v / R, 1e-14);
    EXPECT_NEAR(c.delta, std::atan(rp.wheelbase / R), 1e-14);
    EXPECT_NEAR(c.a_y, v * v / R, 1e-14);
    EXPECT_NEAR(c.a_x, 0.0, 1e-14);
  }
}

TEST(FlatOutputs, UphillGravityOffset) {
  RobotParams rp;
  const double a = 0.2;
  AnalyticSource src(AnalyticTerrain::plane(a));
  const auto c = flat_outputs({1, 0, 0, 0, 0.7, 0, 1}, terrain_pose(src, {0, 0, 0}), rp);
  EXPECT_NEAR(c.a_x, kGravity * std::sin(a), 1e-12);
  EXPECT_NEAR(c.a_x, 1.949, 5e-4);
  EXPECT_NEAR(c.v_x, 0.7 / std::cos(a), 1e-12);

  // The integrated path keeps v_x constant, so the whole a_x is the gravity term.
  std::vector<ControlSample> u(101, ControlSample{c.v_x, 0.0});
  const auto tr = integrate_kinematics(u, 0.01, src, {0, 0, 0}, 1e-3, rp);
  ASSERT_FALSE(tr.truncated);
  for (std::size_t i = 1; i < tr.points.size(); ++i) {
    const auto& p0 = tr.points[i - 1];
    const auto& p1 = tr.points[i];
    const double speed3 = std::hypot(p1.x - p0.x, p1.z - p0.z) / (p1.t - p0.t);
    EXPECT_NEAR(speed3, c.v_x, 1e-9);
    EXPECT_NEAR(p1.a_x, kGravity * std::sin(a), 1e-9);
  }
}

TEST(FlatOutputs, GearSymmetry) {
  RobotParams rp;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  AnalyticSource src(AnalyticTerrain::sinusoid(0.3, 5.0));
  for (int i = 0; i < 500; ++i) {
    FlatState fs{u(rng), u(rng), u(rng), u(rng), 0.2 + std::abs(u(rng)), u(rng), 1};
    if (fs.dx * fs.dx + fs.dy * fs.dy < 0.1) continue;
    const double x = 3 * u(rng), y = 3 * u(rng);
    const auto f = [&](const FlatState& s) {
      const double th = std::atan2(s.eta * s.dy, s.eta * s.dx);
      return flat_outputs(s, terrain_pose(src, {x, y, th}), rp);
    };
    const auto a = f(fs);
    FlatState r = fs;
    r.eta = -1;
    const auto b = f(r);
    EXPECT_NEAR(a.v_x, -b.v_x, 1e-12);
    EXPECT_NEAR(ang_diff(a.theta + kPi, b.theta), 0.0, 1e-12);
    // tan δ = L ω / v_x, which is invariant under (ω, v) -> (-ω, -v)
    EXPECT_NEAR(std::tan(a.delta) * a.v_x, rp.wheelbase * a.omega_z, 1e-10);
    EXPECT_NEAR(std::tan(b.delta) * b.v_x, rp.wheelbase * b.omega_z, 1e-10);
  }
}

TEST(FlatOutputs, DegenerateState) {
  RobotParams rp;
  try {
    flat_outputs({0, 0, 1, 0, 1, 0, 1}, TerrainFrame{}, rp);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateState);
  }
}

TEST(Kinematics, ZeroSpeedConstant) {
  RobotParams rp;
  AnalyticSource src(AnalyticTerrain::sinusoid(0.3, 5.0));
  std::vector<ControlSample> u(11, ControlSample{0.0, 0.3});
  const auto tr = integrate_kinematics(u, 0.1, src, {0.3, -0.2, 0.5}, 1e-3, rp);
  for (const auto& p : tr.points) {
    EXPECT_EQ(p.x, 0.3);
    EXPECT_EQ(p.y, -0.2);
    EXPECT_EQ(p.theta, 0.5);
  }
}

TEST(Kinematics, StraightOneMetre) {
  RobotParams rp;
  AnalyticSource src(AnalyticTerrain::flat());
  const double th = 0.4;
  std::vector<ControlSample> u(2, ControlSample{1.0, 0.0});
  const auto tr = integrate_kinematics(u, 1.0, src, {0, 0, th}, 1e-4, rp);
  const auto& e = tr.points.back();
  EXPECT_NEAR(e.t, 1.0, 1e-12);
  EXPECT_NEAR(e.x, std::cos(th), 1e-9);
  EXPECT_NEAR(e.y, std::sin(th), 1e-9);
}

TEST(Kinematics, CircleCloses) {
  RobotParams rp;
  AnalyticSource src(AnalyticTerrain::flat());
  const double R = 3.0, L = 2 * kPi * R;
  std::vector<ControlSample> u(2, ControlSample{1.0, std::atan(rp.wheelbase / R)});
  const auto tr = integrate_kinematics(u, L, src, {0, 0, 0}, 1e-4, rp);
  const auto& e = tr.points.back();
  EXPECT_LT(std::hypot(e.x, e.y), 1e-3 * L);
  // Stays on the circle centred at (0, R).
  for (std::size_t i = 0; i < tr.points.size(); i += 1000)
    EXPECT_NEAR(std::hypot(tr.points[i].x, tr.points[i].y - R), R, 1e-6);
}

TEST(Kinematics, TruncatesAtBoundary) {
  RobotParams rp;
  AnalyticSource src(AnalyticTerrain::flat(), 0.52, Eigen::Vector4d(-1, 1, -1, 1));
  std::vector<ControlSample> u(2, ControlSample{1.0, 0.0});
  const auto tr = integrate_kinematics(u, 5.0, src, {0, 0, 0}, 1e-3, rp);
  EXPECT_TRUE(tr.truncated);
  EXPECT_LE(tr.points.back().x, 1.0);
  EXPECT_GT(tr.points.back().x, 0.99);
}

// Core check: the controls derived from a flat trajectory drive the kinematic model
// back along that trajectory on curved terrain.
class FlatConsistency : public ::testing::TestWithParam<int> {};

TEST_P(FlatConsistency, ReproducesTrajectory) {
  RobotParams rp;
  AnalyticSource src(AnalyticTerrain::sinusoid(0.3, 6.0));
  const int eta = GetParam();
  FlatPath fp;
  fp.eta = eta;
  fp.p = [](double s) { return Vec2(s, 0.5 * std::sin(0.4 * s)); };
  fp.d1 = [](double s) { return Vec2(1.0, 0.2 * std::cos(0.4 * s)); };
  fp.d2 = [](double s) { return Vec2(0.0, -0.08 * std::sin(0.4 * s)); };
  fp.s = [](double t) { return t + 0.3 * std::sin(0.5 * t); };
  fp.sd = [](double t) { return 1.0 + 0.15 * std::cos(0.5 * t); };
  fp.sdd = [](double t) { return -0.075 * std::sin(0.5 * t); };
  const double T = 11.0, dtc = 1e-3;
  const auto u = controls_of(fp, src, rp, T, dtc);
  const Vec2 p0 = fp.p(0), d0 = fp.d1(0);
  const Se2 start{p0.x(), p0.y(), std::atan2(eta * d0.y(), eta * d0.x())};
  const auto tr = integrate_kinematics(u, dtc, src, start, 1e-4, rp);
  ASSERT_FALSE(tr.truncated);
  EXPECT_GT(fp.s(T), 10.0);
  double ep = 0, eth = 0;
  for (std::size_t i = 0; i < tr.points.size(); i += 50) {
    const auto& q = tr.points[i];
    const double s = fp.s(q.t);
    const Vec2 p = fp.p(s), d = fp.d1(s);
    ep = std::max(ep, std::hypot(q.x - p.x(), q.y - p.y()));
    eth = std::max(eth, ang_diff(q.theta, std::atan2(eta * d.y(), eta * d.x())));
  }
  EXPECT_LT(ep, 1e-3);
  EXPECT_LT(eth, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(Gears, FlatConsistency, ::testing::Values(1, -1));

TEST(Trace, CsvExport) {
  RobotParams rp;
  AnalyticSource src(AnalyticTerrain::flat());
  std::vector<ControlSample> u(2, ControlSample{1.0, 0.1});
  const auto tr = integrate_kinematics(u, 0.1, src, {0, 0, 0}, 0.01, rp);
  const std::string path = ::testing::TempDir() + "trace.csv";
  write_trace_csv(path, tr.points);
  std::ifstream f(path);
  std::string header, line;
  std::getline(f, header);
  EXPECT_EQ(header, "t,x,y,z,theta,phi_x,phi_y,v_x,delta,a_x,a_y");
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  EXPECT_EQ(rows, int(tr.points.size()));
}
