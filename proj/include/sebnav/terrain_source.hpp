#pragma once

#include "sebnav/common.hpp"
#include "sebnav/terrain.hpp"
#include "sebnav/traversability.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace sebnav {

/// What the planner needs from the world at an SE(2) state: height, normal, risk and clearance.
class TerrainSource {
 public:
  virtual ~TerrainSource() = default;
  virtual bool contains(double x, double y) const = 0;
  virtual double height(double x, double y) const = 0;
  /// Unit normal; jac columns are d/dx, d/dy, d/dtheta.
  virtual Vec3 normal(double x, double y, double theta, Mat3* jac) const = 0;
  virtual FieldSample risk(double x, double y, double theta) const = 0;
  virtual FieldSample sdf(double x, double y, double theta) const = 0;
  /// Axis-aligned x-y box of valid queries.
  virtual Eigen::Vector4d bounds() const = 0;  // xmin, xmax, ymin, ymax
};

/// Risk grid + dense heightfield, both queried by interpolation.
class GridSource : public TerrainSource {
 public:
  GridSource(const Se2RiskGrid& grid, const HeightField& hf) : grid_(&grid), hf_(&hf) {}

  bool contains(double x, double y) const override { return grid_->spec().contains(x, y) && hf_->contains(x, y); }
  double height(double x, double y) const override { return hf_->height(x, y); }
  Vec3 normal(double x, double y, double theta, Mat3* jac) const override { return grid_->normal(x, y, theta, jac); }
  FieldSample risk(double x, double y, double theta) const override { return grid_->query(x, y, theta, Field::kRisk); }
  FieldSample sdf(double x, double y, double theta) const override { return grid_->query(x, y, theta, Field::kSdf); }
  Eigen::Vector4d bounds() const override {
    const auto& s = grid_->spec();
    return Eigen::Vector4d(std::max(s.origin.x(), hf_->xmin()), std::min(s.xmax(), hf_->xmax()),
                           std::max(s.origin.y(), hf_->ymin()), std::min(s.ymax(), hf_->ymax()));
  }
  const Se2RiskGrid& grid() const { return *grid_; }

 private:
  const Se2RiskGrid* grid_;
  const HeightField* hf_;
};

/// Smooth closed-form world: analytic terrain, disc obstacles, and a slope-based risk
/// r = (1 - n_z) / (1 - cos(phi_ref)). Used where gradients must be exact.
class AnalyticSource : public TerrainSource {
 public:
  struct Disc {
    Vec2 c;
    double r;
  };

  explicit AnalyticSource(AnalyticTerrain t, double phi_ref = 0.52, Eigen::Vector4d box = Eigen::Vector4d(-1e3, 1e3, -1e3, 1e3))
      : t_(std::move(t)), phi_ref_(phi_ref), box_(box) {}

  void add_disc(const Vec2& c, double r) { discs_.push_back({c, r}); }
  const AnalyticTerrain& terrain() const { return t_; }

  bool contains(double x, double y) const override {
    return x >= box_(0) && x <= box_(1) && y >= box_(2) && y <= box_(3);
  }
  double height(double x, double y) const override { return t_.height(x, y); }
  Vec3 normal(double x, double y, double, Mat3* jac) const override {
    Eigen::Matrix<double, 3, 2> J;
    const Vec3 n = t_.normal(x, y, jac ? &J : nullptr);
    if (jac) {
      jac->leftCols<2>() = J;
      jac->col(2).setZero();
    }
    return n;
  }
  FieldSample risk(double x, double y, double theta) const override {
    Mat3 J;
    const Vec3 n = normal(x, y, theta, &J);
    const double k = 1.0 / (1.0 - std::cos(phi_ref_));
    FieldSample s;
    s.value = (1.0 - n.z()) * k;
    s.grad = -J.row(2).transpose() * k;
    return s;
  }
  FieldSample sdf(double x, double y, double) const override {
    FieldSample s;
    s.value = 1e3;
    for (const auto& d : discs_) {
      const Vec2 q = Vec2(x, y) - d.c;
      const double n = q.norm();
      const double v = n - d.r;
      if (v < s.value) {
        s.value = v;
        s.grad = Vec3(q.x() / n, q.y() / n, 0.0);
      }
    }
    return s;
  }
  Eigen::Vector4d bounds() const override { return box_; }

 private:
  AnalyticTerrain t_;
  double phi_ref_;
  Eigen::Vector4d box_;
  std::vector<Disc> discs_;
};

}  // namespace sebnav
