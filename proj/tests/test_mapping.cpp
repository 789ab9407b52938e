#include "sebnav/elevation_map.hpp"
#include "sebnav/sensor.hpp"
#include "sebnav/terrain.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace sebnav;

namespace {

Mat3 random_psd(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n;
  Mat3 A;
  for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = n(rng);
  return scale * A * A.transpose() / 3.0;
}

// Monte-Carlo variance of the world height of a scan point under right-perturbed attitude.
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

// Liang-Barsky clip of segment a->b against the cell box [x0,x1]x[y0,y1]; returns entry/exit parameters.
bool clip(const Vec3& a, const Vec3& b, double x0, double x1, double y0, double y1, double* t0, double* t1) {
  double lo = 0.0, hi = 1.0;
  const double p[4] = {-(b.x() - a.x()), b.x() - a.x(), -(b.y() - a.y()), b.y() - a.y()};
  const double q[4] = {a.x() - x0, x1 - a.x(), a.y() - y0, y1 - a.y()};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return false;
      continue;
    }
    const double r = q[k] / p[k];
    if (p[k] < 0.0) lo = std::max(lo, r);
    else hi = std::min(hi, r);
  }
  *t0 = lo;
  *t1 = hi;
  return hi > lo;
}

}  // namespace

TEST(Recenter, FloorArithmetic) {
  ElevationMap map(20, 20, 0.1);
  map.recenter(1.23, -0.07);
  EXPECT_NEAR(map.p_M().x(), 1.2, 1e-12);
  EXPECT_NEAR(map.p_M().y(), -0.1, 1e-12);
  EXPECT_EQ(map.p_M().z(), 0.0);
  EXPECT_EQ(map.origin_index(), Eigen::Vector2i(12, -1));
}

TEST(Recenter, ZeroDisplacementAndIdempotence) {
  ElevationMap map(16, 12, 0.1);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  map.recenter(0.55, 0.31);
  for (auto& c : map.cells()) c = {u(rng), 0.01 + std::abs(u(rng)), u(rng) > -0.5};
  const auto before = map.cells();
  map.recenter(0.55, 0.31);
  map.recenter(0.58, 0.39);  // same cell
  for (std::size_t k = 0; k < before.size(); ++k) {
    EXPECT_EQ(map.cells()[k].height, before[k].height);
    EXPECT_EQ(map.cells()[k].variance, before[k].variance);
    EXPECT_EQ(map.cells()[k].known, before[k].known);
  }
}

TEST(Recenter, RetainedCellsKeepValuesAndWorldPosition) {
  ElevationMap map(16, 12, 0.25);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& c : map.cells()) c = {u(rng), 0.5, true};
  const ElevationMap old = map;
  map.recenter(0.8, -0.6);
  int retained = 0;
  for (int j = 0; j < map.ny(); ++j)
    for (int i = 0; i < map.nx(); ++i) {
      const Vec2 c = map.center(i, j);
      int oi, oj;
      if (old.index_of(c.x(), c.y(), &oi, &oj)) {
        ++retained;
        EXPECT_EQ(map.cell(i, j).height, old.cell(oi, oj).height);
        EXPECT_TRUE(map.cell(i, j).known);
      } else {
        EXPECT_FALSE(map.cell(i, j).known);
      }
    }
  EXPECT_EQ(retained, (16 - 3) * (12 - 3));
}

TEST(Recenter, LargeDisplacementClearsMap) {
  ElevationMap map(10, 10, 0.1);
  for (auto& c : map.cells()) c = {1.0, 1.0, true};
  map.recenter(1.0, 0.0);
  for (const auto& c : map.cells()) EXPECT_FALSE(c.known);
}

TEST(PointVariance, IdentityRotationsGiveSensorVariance) {
  const double s2 = 0.0025;
  const double v = point_height_variance(Vec3(1, 2, -0.5), Mat3::Identity(), Mat3::Identity(), Vec3(0.1, 0, 0.4),
                                         s2 * Mat3::Identity(), Mat3::Zero(), Mat3::Zero());
  EXPECT_NEAR(v, s2, 1e-15);
}

TEST(PointVariance, PositionCovarianceProjectsOnVertical) {
  const Mat3 sb = Vec3(0.3, 0.2, 0.07).asDiagonal();
  const double v = point_height_variance(Vec3(1, 2, -0.5), so3_exp(Vec3(0.2, 0.1, 0.3)), Mat3::Identity(),
                                         Vec3::Zero(), Mat3::Zero(), Mat3::Zero(), sb);
  EXPECT_NEAR(v, 0.07, 1e-15);
}

TEST(PointVariance, MatchesMonteCarlo) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 s(3 * u(rng), 3 * u(rng), u(rng));
    const Mat3 RB = so3_exp(Vec3(0.3 * u(rng), 0.3 * u(rng), 3 * u(rng)));
    const Mat3 RBS = so3_exp(Vec3(0.2 * u(rng), 0.2 * u(rng), u(rng)));
    const Vec3 pBS(0.1 * u(rng), 0.1 * u(rng), 0.5);
    const Mat3 Ss = random_psd(rng, 1e-4), Sr = random_psd(rng, 1e-5), Sb = random_psd(rng, 1e-4);
    const double v = point_height_variance(s, RB, RBS, pBS, Ss, Sr, Sb);
    const double mc = mc_height_variance(s, RB, Vec3(1, 2, 0.3), RBS, pBS, Ss, Sr, Sb, 100000, rng);
    EXPECT_NEAR(mc / v, 1.0, 0.05) << "trial " << trial;
  }
}

TEST(PointVariance, ZeroOnlyWhenAllProjectionsVanish) {
  EXPECT_EQ(point_height_variance(Vec3(1, 0, 0), Mat3::Identity(), Mat3::Identity(), Vec3::Zero(), Mat3::Zero(),
                                  Mat3::Zero(), Mat3::Zero()),
            0.0);
  // Horizontal-only covariances project to zero along b3.
  const Mat3 horiz = Vec3(1.0, 1.0, 0.0).asDiagonal();
  EXPECT_NEAR(point_height_variance(Vec3(1, 0, 0), Mat3::Identity(), Mat3::Identity(), Vec3::Zero(), horiz,
                                    Mat3::Zero(), horiz),
              0.0, 1e-18);
  EXPECT_GT(point_height_variance(Vec3(1, 0, 0), Mat3::Identity(), Mat3::Identity(), Vec3::Zero(), Mat3::Zero(),
                                  Vec3(0, 1e-4, 0).asDiagonal(), Mat3::Zero()),
            0.0);
}

TEST(KfUpdate, EqualVarianceFusion) {
  const auto c = kf_update({0.0, 1.0, true}, {{1.0, 1.0}});
  EXPECT_DOUBLE_EQ(c.height, 0.5);
  EXPECT_DOUBLE_EQ(c.variance, 0.5);
}

TEST(KfUpdate, UnknownCellInitializes) {
  const auto c = kf_update({}, {{2.0, 0.04}});
  EXPECT_TRUE(c.known);
  EXPECT_EQ(c.height, 2.0);
  EXPECT_EQ(c.variance, 0.04);
}

TEST(KfUpdate, GateFailureHigherWins) {
  const double d = 0.5 / std::sqrt(2e-4);
  EXPECT_NEAR(d, 35.355339, 1e-5);
  auto c = kf_update({0.0, 1e-4, true}, {{0.5, 1e-4}}, 2.0);
  EXPECT_EQ(c.height, 0.5);
  EXPECT_EQ(c.variance, 1e-4);
  c = kf_update({0.5, 1e-4, true}, {{0.0, 1e-4}}, 2.0);
  EXPECT_EQ(c.height, 0.5);
}

TEST(KfUpdate, RejectsNonPositiveVariance) {
  try {
    kf_update({0.0, 1.0, true}, {{1.0, 0.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidMeasurement);
  }
  EXPECT_THROW(kf_update({}, {{1.0, -1.0}}), Error);
}

TEST(KfUpdate, UngatedFusionIsOrderInsensitiveAndVarianceNonIncreasing) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<double, double>> m(2 + trial % 7);
    for (auto& x : m) x = {u(rng) * 2 - 1, 0.01 + u(rng)};
    ElevationCell prior{u(rng), 0.01 + u(rng), true};
    const auto a = kf_update(prior, m, 1e300);
    std::shuffle(m.begin(), m.end(), rng);
    const auto b = kf_update(prior, m, 1e300);
    EXPECT_NEAR(a.height, b.height, 1e-12);
    EXPECT_NEAR(a.variance, b.variance, 1e-12);
    double var = prior.variance;
    ElevationCell c = prior;
    for (const auto& x : m) {
      c = kf_update(c, {x}, 1e300);
      EXPECT_LE(c.variance, var);
      var = c.variance;
    }
  }
}

TEST(RaycastReset, GhostCellUnderRayIsCleared) {
  ElevationMap map(40, 40, 0.1);
  int gi, gj;
  ASSERT_TRUE(map.index_of(0.55, 0.05, &gi, &gj));
  map.cell(gi, gj) = {1.0, 0.01, true};
  int ki, kj;
  ASSERT_TRUE(map.index_of(0.25, 0.05, &ki, &kj));
  map.cell(ki, kj) = {0.0, 0.01, true};
  // Ray from (0,0.05,0.2) to (1.5, 0.05, 0.2): passes at 0.2 m over both cells.
  map.raycast_reset(Vec3(0.0, 0.05, 0.2), {Vec3(1.5, 0.05, 0.2)});
  EXPECT_FALSE(map.cell(gi, gj).known);
  EXPECT_TRUE(map.cell(ki, kj).known);
}

TEST(RaycastReset, EndpointCellIsNotReset) {
  ElevationMap map(40, 40, 0.1);
  int i, j;
  ASSERT_TRUE(map.index_of(1.05, 0.05, &i, &j));
  map.cell(i, j) = {5.0, 0.01, true};
  map.raycast_reset(Vec3(0.0, 0.05, 1.0), {Vec3(1.05, 0.05, 0.0)});
  EXPECT_TRUE(map.cell(i, j).known);
}

TEST(RaycastReset, MatchesBruteForceClipping) {
  ElevationMap map(48, 48, 0.1);
  map.recenter(0.33, -0.21);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& c : map.cells()) c = {1.2 * u(rng) - 0.2, 0.01, u(rng) < 0.8};
  const ElevationMap before = map;
  const Vec3 sensor(0.4, -0.1, 1.0);
  std::vector<Vec3> pts;
  for (int r = 0; r < 100; ++r)
    pts.emplace_back(map.xmin() + 0.05 + 4.7 * u(rng), map.ymin() + 0.05 + 4.7 * u(rng), 0.4 * u(rng) - 0.2);
  map.raycast_reset(sensor, pts);

  std::set<std::size_t> expect;
  const double res = map.resolution();
  for (const auto& p : pts) {
    int ei, ej;
    ASSERT_TRUE(before.index_of(p.x(), p.y(), &ei, &ej));
    for (int j = 0; j < map.ny(); ++j)
      for (int i = 0; i < map.nx(); ++i) {
        if (i == ei && j == ej) continue;
        const double x0 = map.xmin() + i * res, y0 = map.ymin() + j * res;
        double t0, t1;
        if (!clip(sensor, p, x0, x0 + res, y0, y0 + res, &t0, &t1) || t1 - t0 <= 1e-9) continue;
        const double zr = std::max(sensor.z() + t0 * (p.z() - sensor.z()), sensor.z() + t1 * (p.z() - sensor.z()));
        const auto& c = before.cell(i, j);
        if (c.known && c.height > zr + 0.05) expect.insert(static_cast<std::size_t>(j) * map.nx() + i);
      }
  }
  std::set<std::size_t> got;
  for (std::size_t k = 0; k < map.cells().size(); ++k)
    if (before.cells()[k].known && !map.cells()[k].known) got.insert(k);
  EXPECT_FALSE(expect.empty());
  EXPECT_EQ(got, expect);
}

TEST(Inpaint, SingleKnownCellGivesUniformField) {
  ElevationMap map(9, 7, 0.1);
  map.cell(3, 2) = {0.75, 0.01, true};
  const auto hf = inpaint(map);
  for (double h : hf.heights) EXPECT_EQ(h, 0.75);
}

TEST(Inpaint, FullyKnownIsIdentity) {
  ElevationMap map(9, 7, 0.1);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& c : map.cells()) c = {u(rng), 0.01, true};
  const auto hf = inpaint(map);
  for (std::size_t k = 0; k < hf.heights.size(); ++k) EXPECT_EQ(hf.heights[k], map.cells()[k].height);
}

TEST(Inpaint, AllUnknownIsAnError) {
  ElevationMap map(5, 5, 0.1);
  try {
    inpaint(map);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyMap);
  }
}

TEST(Inpaint, MatchesBruteForceNearestNeighbour) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    ElevationMap map(32, 32, 0.1);
    for (auto& c : map.cells()) c = {u(rng), 0.01, u(rng) < (trial == 0 ? 0.02 : 0.5)};
    if (!map.any_known()) map.cell(4, 4).known = true;
    const auto hf = inpaint(map);
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i) {
        long best = -1, bd = 0;
        for (int jj = 0; jj < 32; ++jj)
          for (int ii = 0; ii < 32; ++ii) {
            if (!map.cell(ii, jj).known) continue;
            const long d = static_cast<long>(ii - i) * (ii - i) + static_cast<long>(jj - j) * (jj - j);
            if (best < 0 || d < bd) {
              best = jj * 32 + ii;
              bd = d;
            }
          }
        EXPECT_EQ(hf.at(i, j), map.cells()[best].height) << i << "," << j;
      }
  }
}

TEST(MapUpdate, ZeroNoiseScanOnAnalyticTerrainBoundsError) {
  const double res = 0.1;
  for (const auto& terrain : {AnalyticTerrain::plane(0.25, 0.1), AnalyticTerrain::sinusoid(0.2, 4.0)}) {
    ElevationMap map(60, 60, res);
    SensorModel sensor;
    sensor.sigma_s.setZero();
    sensor.max_range = 6.0;
    sensor.elevation_res = 0.02;
    sensor.azimuth_res = 0.005;
    NoisyPose pose;
    pose.p = Vec3(0.3, -0.2, terrain.height(0.3, -0.2) + 0.2);
    pose.sigma_b = 1e-6 * Mat3::Identity();
    const auto scan = simulate_scan(terrain, pose, sensor);
    map.update(pose, scan.points, sensor);
    double max_slope = 0.0;
    for (double x = -4; x <= 4; x += 0.05)
      for (double y = -4; y <= 4; y += 0.05) max_slope = std::max(max_slope, terrain.gradient(x, y).norm());
    int known = 0;
    for (int j = 0; j < map.ny(); ++j)
      for (int i = 0; i < map.nx(); ++i) {
        const auto& c = map.cell(i, j);
        if (!c.known) continue;
        ++known;
        const Vec2 q = map.center(i, j);
        EXPECT_LT(std::abs(c.height - terrain.height(q.x(), q.y())), res * max_slope + 1e-6);
        EXPECT_GT(c.variance, 0.0);
      }
    EXPECT_GT(known, 500);
  }
}

TEST(MapUpdate, ParallelMatchesSerial) {
  const auto hf = generate_terrain(3, TerrainParams{});
  SensorModel sensor;
  NoisyPose pose;
  pose.p = Vec3(0.0, 0.0, hf.height(0.0, 0.0) + 0.3);
  pose.sigma_b = 1e-4 * Mat3::Identity();
  pose.sigma_r = 1e-5 * Mat3::Identity();
  std::mt19937_64 rng(3);
  const auto scan = simulate_scan(hf, pose, sensor, &rng);
  ElevationMap a(80, 80, 0.1), b(80, 80, 0.1);
  const int t0 = thread_count();
  set_thread_count(1);
  a.update(pose, scan.points, sensor);
  set_thread_count(std::max(2, t0));
  b.update(pose, scan.points, sensor);
  set_thread_count(t0);
  for (std::size_t k = 0; k < a.cells().size(); ++k) {
    EXPECT_EQ(a.cells()[k].known, b.cells()[k].known);
    EXPECT_EQ(a.cells()[k].height, b.cells()[k].height);
  }
}
