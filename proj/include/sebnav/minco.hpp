#pragma once

#include "sebnav/banded.hpp"
#include "sebnav/common.hpp"

#include <Eigen/Dense>

#include <array>
#include <vector>

namespace sebnav {

/// d^k/dt^k of [1, t, ..., t^5] at t.
inline std::array<double, 6> quintic_basis(double t, int k) {
  // falling factorials i!/(i-k)!, k = 0..5
  static constexpr double kF[6][6] = {{1, 1, 1, 1, 1, 1},      {0, 1, 2, 3, 4, 5},       {0, 0, 2, 6, 12, 20},
                                      {0, 0, 0, 6, 24, 60},    {0, 0, 0, 0, 24, 120},    {0, 0, 0, 0, 0, 120}};
  std::array<double, 6> b{};
  if (k > 5) return b;
  double pw = 1.0;
  for (int i = k; i < 6; ++i, pw *= t) b[i] = kF[k][i] * pw;
  return b;
}

/// Piecewise quintic with D channels; segment i owns coefficient rows 6i..6i+5.
struct PiecewiseQuintic {
  std::vector<double> spans;
  Eigen::MatrixXd coeffs;  // 6N x D

  int segments() const { return int(spans.size()); }
  int dims() const { return int(coeffs.cols()); }

  Eigen::VectorXd eval(int seg, double t, int k) const {
    const auto b = quintic_basis(t, k);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dims());
    for (int i = 0; i < 6; ++i) v += b[i] * coeffs.row(6 * seg + i).transpose();
    return v;
  }
  double total() const {
    double s = 0;
    for (double t : spans) s += t;
    return s;
  }
  /// Locates global parameter u; returns segment and local parameter.
  std::pair<int, double> locate(double u) const {
    int i = 0;
    while (i + 1 < segments() && u > spans[i]) {
      u -= spans[i];
      ++i;
    }
    return {i, u};
  }
};

/// C4 piecewise quintic through waypoints: given head/tail (p, p', p''), interior waypoints and
/// segment spans, the coefficients solve one banded system. Also back-propagates a gradient on
/// the coefficients to the inputs.
class MincoQuintic {
 public:
  void setup(const Eigen::MatrixXd& head, const Eigen::MatrixXd& tail, const Eigen::MatrixXd& waypoints,
             const std::vector<double>& spans) {
    N_ = int(spans.size());
    D_ = int(head.cols());
    require(N_ >= 1 && head.rows() == 3 && tail.rows() == 3 && waypoints.rows() == N_ - 1 &&
                (N_ == 1 || waypoints.cols() == D_),
            ErrorCode::kInvalidParameter, "minco shapes");
    for (double t : spans) require(t > 0.0 && std::isfinite(t), ErrorCode::kIllConditioned, "non-positive span");
    spans_ = spans;
    A_.reset(6 * N_, 6, 6);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(6 * N_, D_);
    A_(0, 0) = 1.0;
    A_(1, 1) = 1.0;
    A_(2, 2) = 2.0;
    b.topRows<3>() = head;
    for (int i = 0; i + 1 < N_; ++i) {
      const double T = spans[i];
      const int r = 6 * i + 3, c0 = 6 * i, c1 = 6 * (i + 1);
      put(r, c0, T, 3);
      A_(r, c1 + 3) = -6.0;
      put(r + 1, c0, T, 4);
      A_(r + 1, c1 + 4) = -24.0;
      put(r + 2, c0, T, 0);
      b.row(r + 2) = waypoints.row(i);
      put(r + 3, c0, T, 0);
      A_(r + 3, c1) = -1.0;
      put(r + 4, c0, T, 1);
      A_(r + 4, c1 + 1) = -1.0;
      put(r + 5, c0, T, 2);
      A_(r + 5, c1 + 2) = -2.0;
    }
    const int r = 6 * N_ - 3, c0 = 6 * (N_ - 1);
    for (int k = 0; k < 3; ++k) put(r + k, c0, spans.back(), k);
    b.bottomRows<3>() = tail;
    rhs_ = b;
    system_ = A_;
    A_.factorize();
    A_.solve(b);
    traj_.spans = spans;
    traj_.coeffs = std::move(b);
  }

  const PiecewiseQuintic& trajectory() const { return traj_; }

  struct Grad {
    Eigen::MatrixXd head, tail, waypoints;  // same shapes as the inputs
    std::vector<double> spans;
  };

  /// Given df/dc (with explicit df/dT already in `explicit_spans`), returns the total gradient.
  Grad propagate(const Eigen::MatrixXd& grad_c, const std::vector<double>& explicit_spans) const {
    Eigen::MatrixXd lam = grad_c;
    A_.solve_adjoint(lam);
    Grad g;
    g.head = lam.topRows<3>();
    g.tail = lam.bottomRows<3>();
    g.waypoints.resize(N_ - 1, D_);
    g.spans = explicit_spans;
    g.spans.resize(N_, 0.0);
    for (int i = 0; i + 1 < N_; ++i) {
      const int r = 6 * i + 3;
      g.waypoints.row(i) = lam.row(r + 2);
      // d(row r)/dT = p_i^{(k+1)}(T) for the rows that evaluate segment i at its end
      static constexpr int kOrder[6] = {3, 4, 0, 0, 1, 2};
      double s = 0.0;
      for (int q = 0; q < 6; ++q) s += lam.row(r + q).dot(traj_.eval(i, spans_[i], kOrder[q] + 1).transpose());
      g.spans[i] -= s;
    }
    const int r = 6 * N_ - 3;
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += lam.row(r + k).dot(traj_.eval(N_ - 1, spans_.back(), k + 1).transpose());
    g.spans[N_ - 1] -= s;
    return g;
  }

  // unfactored system, for checking
  const BandedMatrix& system() const { return system_; }
  const Eigen::MatrixXd& rhs() const { return rhs_; }

 private:
  void put(int row, int col0, double T, int k) {
    const auto b = quintic_basis(T, k);
    for (int i = k; i < 6; ++i) A_(row, col0 + i) = b[i];
  }

  int N_ = 0, D_ = 0;
  std::vector<double> spans_;
  BandedMatrix A_, system_;
  Eigen::MatrixXd rhs_;
  PiecewiseQuintic traj_;
};

}  // namespace sebnav
