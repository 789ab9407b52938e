#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <limits>
#include <vector>

namespace sebnav {

struct LbfgsParams {
  int memory = 8;
  int max_iter = 300;
  double g_tol = 1e-5;    // stop when |g|_inf <= g_tol * max(1, |f|)
  double f_tol = 1e-12;   // or when the relative decrease stalls for `stall` iterations
  int stall = 3;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_linesearch = 60;
};

enum class LbfgsStatus { kGradient, kStalled, kIterations, kLineSearch };

struct LbfgsResult {
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::kIterations;
  bool converged() const { return status == LbfgsStatus::kGradient || status == LbfgsStatus::kStalled; }
};

/// L-BFGS with a weak-Wolfe bracketing line search (bisection / doubling), which copes with
/// the kinks of piecewise-linear interpolated fields. fg(x, g) returns f and writes g.
template <class F>
LbfgsResult lbfgs_minimize(F&& fg, Eigen::VectorXd& x, const LbfgsParams& p = {}) {
  const Eigen::Index n = x.size();
  LbfgsResult res;
  Eigen::VectorXd g(n), gn(n), xn(n), d(n);
  double f = fg(x, g);
  ++res.evaluations;
  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  int stalled = 0;
  auto small_grad = [&](double fv, const Eigen::VectorXd& gv) {
    return gv.size() == 0 || gv.cwiseAbs().maxCoeff() <= p.g_tol * std::max(1.0, std::abs(fv));
  };
  if (!std::isfinite(f)) {
    res.f = f;
    res.status = LbfgsStatus::kLineSearch;
    return res;
  }
  for (res.iterations = 0; res.iterations < p.max_iter; ++res.iterations) {
    if (small_grad(f, g)) {
      res.status = LbfgsStatus::kGradient;
      res.f = f;
      return res;
    }
    // two-loop recursion
    d = -g;
    const int m = int(S.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho[i] * S[i].dot(d);
      d -= alpha[i] * Y[i];
    }
    if (m > 0) d *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (int i = 0; i < m; ++i) {
      const double beta = rho[i] * Y[i].dot(d);
      d += (alpha[i] - beta) * S[i];
    }
    double dg = g.dot(d);
    if (!(dg < 0.0)) {  // lost descent: restart from steepest descent
      S.clear();
      Y.clear();
      rho.clear();
      d = -g;
      dg = g.dot(d);
    }
    double t = m == 0 ? std::min(1.0, 1.0 / std::max(1e-12, d.cwiseAbs().maxCoeff())) : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    bool ok = false;
    double fnew = f;
    for (int ls = 0; ls < p.max_linesearch; ++ls) {
      xn = x + t * d;
      fnew = fg(xn, gn);
      ++res.evaluations;
      if (!std::isfinite(fnew) || fnew > f + p.c1 * t * dg) {
        hi = t;
      } else if (gn.dot(d) < p.c2 * dg) {
        lo = t;
      } else {
        ok = true;
        break;
      }
      t = std::isinf(hi) ? 2.0 * t : 0.5 * (lo + hi);
    }
    if (!ok) {
      // keep the best Armijo point if the bracket found one
      if (lo > 0.0) {
        xn = x + lo * d;
        fnew = fg(xn, gn);
        ++res.evaluations;
        if (std::isfinite(fnew) && fnew < f) ok = true;
      }
      if (!ok) {
        res.status = LbfgsStatus::kLineSearch;
        res.f = f;
        return res;
      }
    }
    Eigen::VectorXd s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm() && sy > 0.0) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (int(S.size()) > p.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    const double df = f - fnew;
    x = xn;
    g = gn;
    f = fnew;
    stalled = df <= p.f_tol * std::max(1.0, std::abs(f)) ? stalled + 1 : 0;
    if (stalled >= p.stall) {
      res.status = LbfgsStatus::kStalled;
      res.f = f;
      ++res.iterations;
      return res;
    }
  }
  res.status = small_grad(f, g) ? LbfgsStatus::kGradient : LbfgsStatus::kIterations;
  res.f = f;
  return res;
}

}  // namespace sebnav
