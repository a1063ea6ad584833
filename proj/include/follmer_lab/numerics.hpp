#pragma once

// Scalar numerics shared by every module: normal distribution helpers in
// log space, adaptive quadrature over piecewise windows, Gauss-Hermite
// nodes and a bracketed Newton solver.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <queue>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "follmer_lab/error.hpp"

namespace flab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178032973640562;

namespace normal {

inline double log_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }
inline double pdf(double x) { return std::exp(log_pdf(x)); }

inline double cdf(double x) { return 0.5 * boost::math::erfc(-x / std::numbers::sqrt2); }

/// ln Phi(x), accurate deep into the lower tail where Phi underflows.
inline double log_cdf(double x) {
  if (x > -30.0) {
    if (x > 5.0) return std::log1p(-0.5 * boost::math::erfc(x / std::numbers::sqrt2));
    return std::log(cdf(x));
  }
  // Mills-ratio asymptotic series.
  const double r = 1.0 / (x * x);
  const double series = 1.0 - r + 3.0 * r * r - 15.0 * r * r * r + 105.0 * r * r * r * r;
  return log_pdf(x) - std::log(-x) + std::log(series);
}

/// ln(1 - Phi(x)).
inline double log_sf(double x) { return log_cdf(-x); }

inline double quantile(double u) {
  require(u > 0.0 && u < 1.0, ErrorKind::domain_error, "normal quantile needs u in (0,1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
}

}  // namespace normal

inline double log_sum_exp(std::span<const double> v) {
  double m = -kInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (a == -kInf) return a;
  return a + std::log1p(std::exp(b - a));
}

/// Process-wide quadrature controls; set once before any parallel work.
struct QuadratureSettings {
  double rel_tol = 1e-13;
  double window_sigmas = 12.0;
};

inline QuadratureSettings& quadrature_settings() {
  static QuadratureSettings settings;
  return settings;
}

struct Integral {
  double value = 0.0;
  double error = 0.0;
};

/// Globally adaptive 61-point Gauss-Kronrod integration of f over [a, b],
/// split at the given interior breakpoints. The interval with the largest
/// error estimate is bisected until the summed error is below rel_tol times
/// the L1 norm over the whole range, or `max_intervals` is reached.
template <class F>
Integral integrate(F&& f, double a, double b, std::vector<double> breaks = {},
                   double rel_tol = 1e-13, std::size_t max_intervals = 4000) {
  using boost::math::quadrature::gauss_kronrod;
  struct Piece {
    double lo, hi, value, error, l1;
    bool operator<(const Piece& o) const { return error < o.error; }
  };
  auto eval = [&](double lo, double hi) {
    Piece p{lo, hi, 0.0, 0.0, 0.0};
    p.value = gauss_kronrod<double, 61>::integrate(f, lo, hi, 0, 0.0, &p.error, &p.l1);
    return p;
  };
  std::vector<double> pts{a};
  std::sort(breaks.begin(), breaks.end());
  for (double p : breaks)
    if (p > a && p < b) pts.push_back(p);
  pts.push_back(b);
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  std::priority_queue<Piece> queue;
  double err = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Piece p = eval(pts[i], pts[i + 1]);
    err += p.error;
    l1 += p.l1;
    queue.push(p);
  }
  while (err > rel_tol * l1 && queue.size() < max_intervals) {
    const Piece worst = queue.top();
    const double mid = 0.5 * (worst.lo + worst.hi);
    if (!(mid > worst.lo && mid < worst.hi)) break;
    queue.pop();
    const Piece left = eval(worst.lo, mid), right = eval(mid, worst.hi);
    err += left.error + right.error - worst.error;
    l1 += left.l1 + right.l1 - worst.l1;
    queue.push(left);
    queue.push(right);
  }
  // Re-sum from scratch so the running updates leave no drift.
  Integral total;
  for (; !queue.empty(); queue.pop()) {
    total.value += queue.top().value;
    total.error += queue.top().error;
  }
  return total;
}

/// Fixed composite Gauss-Legendre rule (10 nodes per panel) over [a, b].
template <class F>
double integrate_panels(F&& f, double a, double b, int panels) {
  using boost::math::quadrature::gauss;
  const double h = (b - a) / panels;
  double s = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * h;
    s += gauss<double, 10>::integrate(f, lo, lo + h);
  }
  return s;
}

/// Gauss-Hermite rule for the weight e^{-u^2} (Golub-Welsch).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> log_weights;

  explicit GaussHermite(int n) {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(n - 1);
    for (int i = 1; i < n; ++i) sub[i - 1] = std::sqrt(0.5 * i);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    nodes.resize(n);
    log_weights.resize(n);
    const double log_sqrt_pi = 0.5 * std::log(std::numbers::pi);
    for (int i = 0; i < n; ++i) {
      nodes[i] = es.eigenvalues()[i];
      const double v0 = es.eigenvectors()(0, i);
      log_weights[i] = log_sqrt_pi + 2.0 * std::log(std::abs(v0));
    }
  }

  static const GaussHermite& n64() {
    static const GaussHermite rule(64);
    return rule;
  }
};

/// Root of a monotone increasing g on [lo, hi] by Newton steps safeguarded
/// with bisection. `g` returns {value, derivative}.
template <class G>
double solve_increasing(G&& g, double lo, double hi, double guess, double abs_tol = 1e-13) {
  auto [glo, dlo] = g(lo);
  auto [ghi, dhi] = g(hi);
  require(glo <= 0.0 && ghi >= 0.0, ErrorKind::domain_error, "root not bracketed");
  double x = std::clamp(guess, lo, hi);
  for (int it = 0; it < 300; ++it) {
    auto [gx, dx] = g(x);
    if (gx == 0.0) return x;
    if (gx < 0.0)
      lo = x;
    else
      hi = x;
    double next = (dx > 0.0 && std::isfinite(dx) && std::isfinite(gx)) ? x - gx / dx : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - x);
    x = next;
    if (step <= abs_tol * (1.0 + std::abs(x)) || hi - lo <= abs_tol * (1.0 + std::abs(x))) return x;
  }
  return x;
}

}  // namespace flab
