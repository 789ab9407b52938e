#pragma once

#include "sebnav/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace sebnav {

/// Square banded matrix with lower/upper bandwidths (p, q); LU without pivoting,
/// which is stable for the diagonally structured spline systems used here.
class BandedMatrix {
 public:
  BandedMatrix() = default;
  BandedMatrix(int n, int p, int q) { reset(n, p, q); }

  void reset(int n, int p, int q) {
    n_ = n;
    p_ = p;
    q_ = q;
    data_.assign(std::size_t(n) * (p + q + 1), 0.0);
    factored_ = false;
  }

  int size() const { return n_; }

  double& operator()(int i, int j) { return data_[std::size_t(i - j + q_) * n_ + j]; }
  double operator()(int i, int j) const { return data_[std::size_t(i - j + q_) * n_ + j]; }
  bool in_band(int i, int j) const { return i - j <= p_ && j - i <= q_; }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_, n_);
    for (int i = 0; i < n_; ++i)
      for (int j = std::max(0, i - p_); j <= std::min(n_ - 1, i + q_); ++j) m(i, j) = (*this)(i, j);
    return m;
  }

  void factorize() {
    for (int k = 0; k < n_; ++k) {
      const double piv = (*this)(k, k);
      require(std::abs(piv) > 1e-300 && std::isfinite(piv), ErrorCode::kIllConditioned, "singular banded system");
      const int iM = std::min(k + p_, n_ - 1), jM = std::min(k + q_, n_ - 1);
      for (int i = k + 1; i <= iM; ++i) {
        double& l = (*this)(i, k);
        if (l == 0.0) continue;
        l /= piv;
        for (int j = k + 1; j <= jM; ++j) (*this)(i, j) -= l * (*this)(k, j);
      }
    }
    factored_ = true;
  }

  /// Solves A X = B in place.
  template <class M>
  void solve(M& b) const {
    require(factored_, ErrorCode::kInvalidParameter, "factorize first");
    for (int j = 0; j < n_; ++j) {
      const int iM = std::min(j + p_, n_ - 1);
      for (int i = j + 1; i <= iM; ++i)
        if ((*this)(i, j) != 0.0) b.row(i) -= (*this)(i, j) * b.row(j);
    }
    for (int j = n_ - 1; j >= 0; --j) {
      b.row(j) /= (*this)(j, j);
      const int iM = std::max(0, j - q_);
      for (int i = iM; i < j; ++i)
        if ((*this)(i, j) != 0.0) b.row(i) -= (*this)(i, j) * b.row(j);
    }
  }

  /// Solves A^T X = B in place.
  template <class M>
  void solve_adjoint(M& b) const {
    require(factored_, ErrorCode::kInvalidParameter, "factorize first");
    for (int j = 0; j < n_; ++j) {
      const int iM = std::max(0, j - q_);
      for (int i = iM; i < j; ++i) b.row(j) -= (*this)(i, j) * b.row(i);
      b.row(j) /= (*this)(j, j);
    }
    for (int j = n_ - 1; j >= 0; --j) {
      const int iM = std::min(j + p_, n_ - 1);
      for (int i = j + 1; i <= iM; ++i) b.row(j) -= (*this)(i, j) * b.row(i);
    }
  }

 private:
  int n_ = 0, p_ = 0, q_ = 0;
  std::vector<double> data_;
  bool factored_ = false;
};

}  // namespace sebnav
