#pragma once

// Föllmer process engine. Every mixture component's heat-semigroup
// transform is Gaussian, so ln P_tau f, its gradient (the drift) and its
// Hessian (hence Gamma) are evaluated in closed form per component and
// combined with posterior weights. Expectations over X_t use the bridge
// representation t X_1 + sqrt(t(1 - t)) G.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "follmer_lab/error.hpp"
#include "follmer_lab/functionals.hpp"
#include "follmer_lab/measures.hpp"
#include "follmer_lab/numerics.hpp"
#include "follmer_lab/rng.hpp"

namespace flab {

/// Worker count from FOLLMER_LAB_THREADS, else the hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("FOLLMER_LAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(std::min(v, 256L));
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n) on up to worker_count() threads.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Closed-form log semigroup at a fixed time.

/// ln P_tau f and its derivatives for all x at one tau, with t = 1 - tau.
/// Per component (w, m, C), with A = I + t(C - I):
///   ln P_tau f_i(x) = ln w - ln det(A)/2 + x'Bx/2 + (A^{-1}m)'x - t m'A^{-1}m/2,
///   B = A^{-1}(C - I).
class SemigroupSlice {
 public:
  SemigroupSlice(const Measure& m, double tau) : tau_(tau), d_(m.dim()) {
    require(tau >= 0.0 && tau <= 1.0, ErrorKind::domain_error, "tau must lie in [0, 1]");
    const double t = 1.0 - tau;
    for (const auto& b : m.blocks()) {
      BlockSlice s;
      s.offset = b.offset;
      s.dim = b.dim;
      for (const auto& c : b.comps) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.cov);
        const Eigen::VectorXd a = (1.0 + t * (es.eigenvalues().array() - 1.0)).matrix();
        if (a.minCoeff() <= 1e-300)
          throw Error(ErrorKind::closed_form_unavailable, "semigroup transform of a singular component at tau = 0");
        const Eigen::MatrixXd& q = es.eigenvectors();
        const Eigen::VectorXd ainv_m = q * (q.transpose() * c.mean).cwiseQuotient(a);
        Term term;
        term.c = std::log(c.weight) - 0.5 * a.array().log().sum() - 0.5 * t * c.mean.dot(ainv_m);
        term.hess = q * ((es.eigenvalues().array() - 1.0).matrix().cwiseQuotient(a)).asDiagonal() * q.transpose();
        term.lin = ainv_m;
        s.terms.push_back(std::move(term));
      }
      if (b.dim == 1)
        for (const auto& term : s.terms) {
          s.c.push_back(term.c);
          s.b.push_back(term.hess(0, 0));
          s.l.push_back(term.lin[0]);
        }
      blocks_.push_back(std::move(s));
    }
  }

  double tau() const { return tau_; }
  std::size_t dim() const { return d_; }

  /// Returns ln P_tau f(x); fills grad (length d) and hess (d x d, column
  /// major) when non-null. Cross-block Hessian entries are zero.
  double eval(const double* x, double* grad, double* hess) const {
    if (hess) std::fill(hess, hess + d_ * d_, 0.0);
    double total = 0.0;
    for (const auto& s : blocks_) {
      if (s.dim == 1) {
        total += eval_scalar(s, x[s.offset], grad ? grad + s.offset : nullptr,
                             hess ? hess + s.offset * d_ + s.offset : nullptr);
      } else {
        total += eval_block(s, x, grad, hess);
      }
    }
    return total;
  }

 private:
  struct Term {
    double c = 0.0;
    Eigen::MatrixXd hess;
    Eigen::VectorXd lin;
  };
  struct BlockSlice {
    std::size_t offset = 0, dim = 1;
    std::vector<Term> terms;
    std::vector<double> c, b, l;  // scalar copies when dim == 1
  };

  static double eval_scalar(const BlockSlice& s, double x, double* grad, double* hess) {
    const std::size_t k = s.c.size();
    if (k == 1) {
      const double g = s.b[0] * x + s.l[0];
      if (grad) *grad = g;
      if (hess) *hess = s.b[0];
      return s.c[0] + (0.5 * s.b[0] * x + s.l[0]) * x;
    }
    double ell[16];
    std::vector<double> big;
    double* e = ell;
    if (k > 16) {
      big.resize(k);
      e = big.data();
    }
    double top = -kInf;
    for (std::size_t i = 0; i < k; ++i) {
      e[i] = s.c[i] + (0.5 * s.b[i] * x + s.l[i]) * x;
      top = std::max(top, e[i]);
    }
    double z = 0.0, g1 = 0.0, g2 = 0.0, bsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double p = std::exp(e[i] - top);
      const double gi = s.b[i] * x + s.l[i];
      z += p;
      g1 += p * gi;
      g2 += p * gi * gi;
      bsum += p * s.b[i];
    }
    const double mean = g1 / z;
    if (grad) *grad = mean;
    if (hess) *hess = bsum / z + std::max(g2 / z - mean * mean, 0.0);
    return top + std::log(z);
  }

  double eval_block(const BlockSlice& s, const double* x, double* grad, double* hess) const {
    const auto n = static_cast<Eigen::Index>(s.dim);
    const Eigen::Map<const Eigen::VectorXd> xb(x + s.offset, n);
    std::vector<double> ell(s.terms.size());
    std::vector<Eigen::VectorXd> g(s.terms.size());
    for (std::size_t i = 0; i < s.terms.size(); ++i) {
      const auto& t = s.terms[i];
      g[i] = t.hess * xb + t.lin;
      ell[i] = t.c + 0.5 * xb.dot(t.hess * xb) + t.lin.dot(xb);
    }
    const double lp = log_sum_exp(ell);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < s.terms.size(); ++i) {
      const double p = std::exp(ell[i] - lp);
      mean += p * g[i];
      h += p * (s.terms[i].hess + g[i] * g[i].transpose());
    }
    h -= mean * mean.transpose();
    if (grad) Eigen::Map<Eigen::VectorXd>(grad + s.offset, n) = mean;
    if (hess) {
      Eigen::Map<Eigen::MatrixXd> full(hess, static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(d_));
      const auto o = static_cast<Eigen::Index>(s.offset);
      full.block(o, o, n, n) = 0.5 * (h + h.transpose());
    }
    return lp;
  }

  double tau_;
  std::size_t d_;
  std::vector<BlockSlice> blocks_;
};

// ---------------------------------------------------------------------------
// Gauss-Hermite oracle for one-dimensional blocks.

namespace oracle {

/// ln P_tau f_b(x) and its x-derivative by 64-node Gauss-Hermite quadrature
/// per component. Each integrand z -> f_i(x + sqrt(tau) z) phi(z) is
/// recentred at a numerically located mode and rescaled by its curvature.
inline std::pair<double, double> block_log_and_grad(const Block& b, double tau, double x) {
  const auto& rule = GaussHermite::n64();
  const double st = std::sqrt(tau);
  std::vector<double> terms;
  std::vector<double> scores;
  terms.reserve(rule.nodes.size() * b.var.size());
  for (std::size_t i = 0; i < b.var.size(); ++i) {
    const double m = b.mu[i], v = b.var[i];
    auto ell = [&](double z) {
      const double y = x + st * z;
      return b.log_w[i] - 0.5 * (y - m) * (y - m) / v - 0.5 * std::log(v) + 0.5 * y * y - 0.5 * z * z -
             kLogSqrt2Pi;
    };
    double z0 = 0.0, curv = -1.0;
    for (int it = 0; it < 4; ++it) {
      const double lp = ell(z0 + 1.0), l0 = ell(z0), lm = ell(z0 - 1.0);
      curv = lp - 2.0 * l0 + lm;
      require(curv < 0.0, ErrorKind::domain_error, "oracle integrand is not log-concave");
      const double step = 0.5 * (lp - lm) / curv;
      z0 -= step;
      if (std::abs(step) < 1e-15 * (1.0 + std::abs(z0))) break;
    }
    const double scale = 1.0 / std::sqrt(-curv);
    const double log_jac = std::log(std::numbers::sqrt2 * scale);
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      const double u = rule.nodes[k];
      const double z = z0 + std::numbers::sqrt2 * scale * u;
      const double y = x + st * z;
      terms.push_back(log_jac + rule.log_weights[k] + u * u + ell(z));
      scores.push_back(-(y - m) / v + y);
    }
  }
  const double lp = log_sum_exp(terms);
  double grad = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) grad += std::exp(terms[k] - lp) * scores[k];
  return {lp, grad};
}

template <class F>
double five_point(F&& f, double x, double h) {
  return (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h);
}

inline double step_for(double x) { return 1e-5 * (1.0 + std::abs(x)); }

}  // namespace oracle

// ---------------------------------------------------------------------------

/// v_t(x) = grad ln P_{1-t} f(x) and Gamma_t(x) = I + (1 - t) Hess ln P_{1-t} f(x).
class DriftField {
 public:
  enum class Mode { closed_form, quadrature_oracle };

  explicit DriftField(Measure m, Mode mode = Mode::closed_form) : m_(std::move(m)), mode_(mode) {}

  const Measure& measure() const { return m_; }
  Mode mode() const { return mode_; }

  double heat_semigroup_log(double tau, const Eigen::VectorXd& x) const {
    check_point(x);
    if (mode_ == Mode::closed_form) {
      try {
        return SemigroupSlice(m_, tau).eval(x.data(), nullptr, nullptr);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::closed_form_unavailable) throw;
        std::cerr << "warning: " << e.what() << "; using the quadrature oracle\n";
      }
    }
    double total = 0.0;
    for (const auto& b : oracle_blocks()) total += oracle::block_log_and_grad(b, tau, x[static_cast<Eigen::Index>(b.offset)]).first;
    return total;
  }

  Eigen::VectorXd drift(double t, const Eigen::VectorXd& x) const {
    check_time(t);
    check_point(x);
    Eigen::VectorXd g(x.size());
    if (mode_ == Mode::closed_form) {
      SemigroupSlice(m_, 1.0 - t).eval(x.data(), g.data(), nullptr);
      return g;
    }
    for (const auto& b : oracle_blocks()) {
      const double xi = x[static_cast<Eigen::Index>(b.offset)];
      g[static_cast<Eigen::Index>(b.offset)] = oracle::five_point(
          [&](double y) { return oracle::block_log_and_grad(b, 1.0 - t, y).first; }, xi, oracle::step_for(xi));
    }
    return g;
  }

  Eigen::MatrixXd hessian_log(double t, const Eigen::VectorXd& x) const {
    check_time(t);
    check_point(x);
    const auto d = x.size();
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
    if (mode_ == Mode::closed_form) {
      SemigroupSlice(m_, 1.0 - t).eval(x.data(), nullptr, h.data());
      return h;
    }
    for (const auto& b : oracle_blocks()) {
      const auto o = static_cast<Eigen::Index>(b.offset);
      h(o, o) = oracle::five_point([&](double y) { return oracle::block_log_and_grad(b, 1.0 - t, y).second; }, x[o],
                                   oracle::step_for(x[o]));
    }
    return h;
  }

  Eigen::MatrixXd gamma(double t, const Eigen::VectorXd& x) const {
    const auto d = x.size();
    return Eigen::MatrixXd::Identity(d, d) + (1.0 - t) * hessian_log(t, x);
  }

 private:
  void check_time(double t) const {
    require(t >= 0.0 && t <= 1.0, ErrorKind::domain_error, "t must lie in [0, 1]");
  }
  void check_point(const Eigen::VectorXd& x) const {
    require(static_cast<std::size_t>(x.size()) == m_.dim(), ErrorKind::domain_error, "point dimension mismatch");
  }
  const std::vector<Block>& oracle_blocks() const {
    for (const auto& b : m_.blocks())
      require(b.dim == 1, ErrorKind::unsupported, "the quadrature oracle handles one-dimensional factors only");
    return m_.blocks();
  }

  Measure m_;
  Mode mode_;
};

// ---------------------------------------------------------------------------
// Time grid.

/// Nodes uniform in s = -ln(1 - t) on [0, ln 2] and [ln 2, ln(1/eps_end)],
/// so t = 1/2 is a node and node density grows like 1/(1 - t). Weights are
/// composite Simpson in s (3/8 rule closing an odd panel count) times dt/ds.
struct TimeGrid {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> coarse;  // same rule on every other node, for the error estimate
  double eps_end = 1e-4;
  std::size_t half_index = 0;

  double t_max() const { return nodes.back(); }
  std::size_t size() const { return nodes.size(); }
};

namespace detail {

/// Adds composite Simpson weights over nodes s[idx[0]], s[idx[1]], ... (uniformly spaced).
inline void add_simpson(const std::vector<double>& s, const std::vector<std::size_t>& idx, std::vector<double>& w) {
  const std::size_t panels = idx.size() - 1;
  const double h = (s[idx.back()] - s[idx.front()]) / static_cast<double>(panels);
  if (panels == 1) {
    w[idx[0]] += 0.5 * h;
    w[idx[1]] += 0.5 * h;
    return;
  }
  const std::size_t even = panels % 2 == 0 ? panels : panels - 3;
  for (std::size_t i = 0; i < even; i += 2) {
    w[idx[i]] += h / 3.0;
    w[idx[i + 1]] += 4.0 * h / 3.0;
    w[idx[i + 2]] += h / 3.0;
  }
  if (even != panels) {
    w[idx[even]] += 3.0 * h / 8.0;
    w[idx[even + 1]] += 9.0 * h / 8.0;
    w[idx[even + 2]] += 9.0 * h / 8.0;
    w[idx[even + 3]] += 3.0 * h / 8.0;
  }
}

/// Fine and half-resolution rules on nodes [first, last]. An odd panel
/// count keeps its closing 3/8 block at full resolution in both.
inline void piece_rules(const std::vector<double>& s, std::size_t first, std::size_t last, std::vector<double>& fine,
                        std::vector<double>& coarse) {
  std::vector<std::size_t> all;
  for (std::size_t i = first; i <= last; ++i) all.push_back(i);
  add_simpson(s, all, fine);
  const std::size_t panels = last - first;
  const std::size_t even = panels % 2 == 0 ? panels : (panels >= 3 ? panels - 3 : 0);
  if (even >= 2) {
    std::vector<std::size_t> half;
    for (std::size_t i = first; i <= first + even; i += 2) half.push_back(i);
    add_simpson(s, half, coarse);
  }
  if (even != panels) {
    std::vector<std::size_t> tail;
    for (std::size_t i = first + even; i <= last; ++i) tail.push_back(i);
    add_simpson(s, tail, coarse);
  }
}

}  // namespace detail

inline TimeGrid make_time_grid(std::size_t n_points = 96, double eps_end = 1e-4) {
  require(n_points >= 8, ErrorKind::domain_error, "time grid needs at least 8 nodes");
  require(eps_end >= 1e-6 && eps_end <= 1e-2, ErrorKind::domain_error, "eps_end must lie in [1e-6, 1e-2]");
  const double s_half = std::log(2.0);
  const double s_end = -std::log(eps_end);
  const std::size_t panels = n_points - 1;
  // A quarter of the panels cover [0, 1/2].
  const std::size_t first = std::clamp<std::size_t>((panels + 2) / 4, 4, panels - 4);
  std::vector<double> s(n_points);
  for (std::size_t i = 0; i <= first; ++i) s[i] = s_half * static_cast<double>(i) / static_cast<double>(first);
  for (std::size_t i = first; i < n_points; ++i)
    s[i] = s_half + (s_end - s_half) * static_cast<double>(i - first) / static_cast<double>(panels - first);

  TimeGrid g;
  g.eps_end = eps_end;
  g.half_index = first;
  g.nodes.resize(n_points);
  for (std::size_t i = 0; i < n_points; ++i) g.nodes[i] = -std::expm1(-s[i]);
  g.nodes[first] = 0.5;
  g.nodes.back() = 1.0 - eps_end;
  g.weights.assign(n_points, 0.0);
  g.coarse.assign(n_points, 0.0);
  detail::piece_rules(s, 0, first, g.weights, g.coarse);
  detail::piece_rules(s, first, panels, g.weights, g.coarse);
  for (std::size_t i = 0; i < n_points; ++i) {
    g.weights[i] *= 1.0 - g.nodes[i];
    g.coarse[i] *= 1.0 - g.nodes[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Bridge sampling and path statistics.

/// n draws of X_t = t X_1 + sqrt(t(1 - t)) G.
inline Eigen::MatrixXd bridge_sample(const Measure& m, double t, std::size_t n, std::uint64_t seed) {
  require(t >= 0.0 && t <= 1.0, ErrorKind::domain_error, "t must lie in [0, 1]");
  require(n >= 1, ErrorKind::domain_error, "sample size must be positive");
  const CounterRng rng(seed, streams::bridge);
  const auto d = static_cast<Eigen::Index>(m.dim());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), d);
  Eigen::VectorXd x1(d);
  const double s = std::sqrt(t * (1.0 - t));
  for (std::size_t j = 0; j < n; ++j) {
    std::uint32_t slot = draw_into(m, rng, j, 0, x1);
    for (Eigen::Index i = 0; i < d; ++i) out(static_cast<Eigen::Index>(j), i) = t * x1[i] + s * rng.normal(j, slot++);
  }
  return out;
}

/// Running mean and standard error for a fixed-length vector of statistics.
class Welford {
 public:
  explicit Welford(std::size_t k) : mean_(k, 0.0), m2_(k, 0.0) {}
  void add(const std::vector<double>& x) {
    ++n_;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double delta = x[i] - mean_[i];
      mean_[i] += delta / static_cast<double>(n_);
      m2_[i] += delta * (x[i] - mean_[i]);
    }
  }
  double mean(std::size_t i) const { return mean_[i]; }
  double se(std::size_t i) const {
    if (n_ < 2) return 0.0;
    return std::sqrt(std::max(m2_[i], 0.0) / static_cast<double>(n_ - 1) / static_cast<double>(n_));
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> mean_, m2_;
};

struct NodeStats {
  double t = 0.0;
  double v_norm_sq = 0.0, v_norm_sq_se = 0.0;
  Eigen::VectorXd v_mean, v_se;
  Eigen::MatrixXd gamma_mean, gamma_se;
  Eigen::MatrixXd gamma_sq_dev, gamma_sq_dev_se;  // E[(Gamma - I)^2]
  double dev_trace = 0.0, dev_trace_se = 0.0;       // tr E[(Gamma - I)^2]
  Eigen::MatrixXd ibp_mean, ibp_se;                 // E[v v' + Hess ln P f]
};

struct PathStats {
  TimeGrid grid;
  std::vector<NodeStats> nodes;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::size_t dim = 0;

  const NodeStats& half() const { return nodes[grid.half_index]; }
};

inline PathStats path_stats(const Measure& m, const TimeGrid& grid, std::size_t n, std::uint64_t seed) {
  require(n >= 2, ErrorKind::sample_too_small, "path statistics need at least two samples");
  PathStats out;
  out.grid = grid;
  out.samples = n;
  out.seed = seed;
  out.dim = m.dim();
  out.nodes.resize(grid.size());
  const auto d = static_cast<Eigen::Index>(m.dim());
  const std::size_t dd = static_cast<std::size_t>(d * d);
  // Layout: |v|^2, v (d), Gamma (dd), (Gamma-I)^2 (dd), trace, vv'+H (dd).
  const std::size_t k_v = 1, k_g = k_v + static_cast<std::size_t>(d), k_dev = k_g + dd, k_tr = k_dev + dd,
                    k_ibp = k_tr + 1, width = k_ibp + dd;

  parallel_for(grid.size(), [&](std::size_t node) {
    const double t = grid.nodes[node];
    const SemigroupSlice slice(m, 1.0 - t);
    const CounterRng rng(seed, streams::path_node + static_cast<std::uint32_t>(node));
    const double s = std::sqrt(t * (1.0 - t));
    Eigen::VectorXd x1(d), x(d), v(d);
    Eigen::MatrixXd h(d, d), dev(d, d);
    std::vector<double> row(width);
    Welford acc(width);
    for (std::size_t j = 0; j < n; ++j) {
      std::uint32_t slot = draw_into(m, rng, j, 0, x1);
      for (Eigen::Index i = 0; i < d; ++i) x[i] = t * x1[i] + s * rng.normal(j, slot++);
      slice.eval(x.data(), v.data(), h.data());
      const Eigen::MatrixXd gm = (1.0 - t) * h;  // Gamma - I
      dev.noalias() = gm * gm;
      row[0] = v.squaredNorm();
      for (Eigen::Index i = 0; i < d; ++i) row[k_v + static_cast<std::size_t>(i)] = v[i];
      for (Eigen::Index c = 0; c < d; ++c)
        for (Eigen::Index r = 0; r < d; ++r) {
          const auto e = static_cast<std::size_t>(c * d + r);
          row[k_g + e] = gm(r, c) + (r == c ? 1.0 : 0.0);
          row[k_dev + e] = dev(r, c);
          row[k_ibp + e] = v[r] * v[c] + h(r, c);
        }
      row[k_tr] = dev.trace();
      acc.add(row);
    }
    NodeStats& ns = out.nodes[node];
    ns.t = t;
    ns.v_norm_sq = acc.mean(0);
    ns.v_norm_sq_se = acc.se(0);
    ns.v_mean.resize(d);
    ns.v_se.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      ns.v_mean[i] = acc.mean(k_v + static_cast<std::size_t>(i));
      ns.v_se[i] = acc.se(k_v + static_cast<std::size_t>(i));
    }
    auto fill = [&](std::size_t base, Eigen::MatrixXd& mean, Eigen::MatrixXd& se) {
      mean.resize(d, d);
      se.resize(d, d);
      for (Eigen::Index c = 0; c < d; ++c)
        for (Eigen::Index r = 0; r < d; ++r) {
          mean(r, c) = acc.mean(base + static_cast<std::size_t>(c * d + r));
          se(r, c) = acc.se(base + static_cast<std::size_t>(c * d + r));
        }
    };
    fill(k_g, ns.gamma_mean, ns.gamma_se);
    fill(k_dev, ns.gamma_sq_dev, ns.gamma_sq_dev_se);
    fill(k_ibp, ns.ibp_mean, ns.ibp_se);
    ns.dev_trace = acc.mean(k_tr);
    ns.dev_trace_se = acc.se(k_tr);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Representations of D, W_2^2, I and the deficits as time integrals.

namespace detail {

struct GridIntegral {
  double value = 0.0;
  double mc_se = 0.0;
  double quad_err = 0.0;
};

/// Simpson integral of per-node (value, se) with independent node noise.
template <class F>
GridIntegral integrate_nodes(const PathStats& st, F&& f) {
  GridIntegral r;
  double coarse = 0.0, var = 0.0;
  for (std::size_t i = 0; i < st.nodes.size(); ++i) {
    const auto [val, se] = f(st.nodes[i]);
    r.value += st.grid.weights[i] * val;
    coarse += st.grid.coarse[i] * val;
    var += st.grid.weights[i] * st.grid.weights[i] * se * se;
  }
  r.mc_se = std::sqrt(var);
  r.quad_err = std::abs(r.value - coarse);
  return r;
}

inline FunctionalValue with_tail(const GridIntegral& g, double tail, double tail_se) {
  return {g.value + tail, g.mc_se + g.quad_err + std::abs(tail) + tail_se, FunctionalValue::Method::monte_carlo};
}

inline void check_tail(const char* name, const GridIntegral& g, double tail) {
  if (std::abs(tail) > 1e-14 && std::abs(tail) > 0.2 * std::abs(g.value))
    throw Error(ErrorKind::tail_dominates,
                std::string(name) + ": the part beyond t_max exceeds 20% of the integral; decrease eps_end");
}

}  // namespace detail

/// (1/2) int E|v_t|^2 dt against D(mu || gamma).
inline std::pair<FunctionalValue, FunctionalValue> energy_identity(const Measure& m, const PathStats& st) {
  const auto g = detail::integrate_nodes(st, [](const NodeStats& n) { return std::pair{n.v_norm_sq, n.v_norm_sq_se}; });
  const NodeStats& last = st.nodes.back();
  const double e = st.grid.eps_end;
  const double rate = last.dev_trace / (e * e);
  // Beyond t_max: E|v_t|^2 = E|v_tmax|^2 + int tr E(Gamma - I)^2 / (1 - s)^2 ds, frozen rate.
  const double tail = e * last.v_norm_sq + rate * e * e / 2.0;
  const double tail_se = e * last.v_norm_sq_se + last.dev_trace_se / 2.0;
  detail::check_tail("energy", g, tail);
  FunctionalValue lhs = detail::with_tail(g, tail, tail_se);
  lhs.value *= 0.5;
  lhs.error_bound *= 0.5;
  return {lhs, relative_entropy_to_standard(m)};
}

struct DeficitRepresentations {
  FunctionalValue rep_entropy;         // = 2D
  FunctionalValue rep_wasserstein_ub;  // >= W_2^2
  FunctionalValue rep_fisher;          // = I
  FunctionalValue rep_delta_ls;        // = delta_LS
  FunctionalValue rep_delta_tal_lb;    // <= delta_Tal
  FunctionalValue truncation_lb;       // <= delta_Tal, at t0
  FunctionalValue halving_lb;          // <= delta_Tal
  double t0 = 0.5;
};

inline DeficitRepresentations deficit_representations(const Measure& m, const PathStats& st) {
  const NodeStats& last = st.nodes.back();
  const double e = st.grid.eps_end;
  // tr E(Gamma - I)^2 / (1 - t)^2 is frozen at its t_max value R beyond t_max.
  const double r = last.dev_trace / (e * e);
  const double r_se = last.dev_trace_se / (e * e);
  auto weighted = [&](const char* name, auto weight, double tail_factor) {
    const auto g = detail::integrate_nodes(st, [&](const NodeStats& n) {
      const double w = weight(n.t);
      return std::pair{w * n.dev_trace, w * n.dev_trace_se};
    });
    detail::check_tail(name, g, r * tail_factor);
    return detail::with_tail(g, r * tail_factor, r_se * tail_factor);
  };
  DeficitRepresentations out;
  out.rep_entropy = weighted("entropy", [](double t) { return 1.0 / (1.0 - t); }, e * e / 2.0);
  out.rep_wasserstein_ub = weighted("wasserstein", [](double) { return 1.0; }, e * e * e / 3.0);
  out.rep_fisher = weighted("fisher", [](double t) { return 1.0 / ((1.0 - t) * (1.0 - t)); }, e);
  out.rep_delta_ls = weighted("delta_ls", [](double t) { return t / ((1.0 - t) * (1.0 - t)); }, e - e * e / 2.0);
  out.rep_delta_tal_lb =
      weighted("delta_tal", [](double t) { return t / (1.0 - t); }, e * e / 2.0 - e * e * e / 3.0);

  const FunctionalValue d = relative_entropy_to_standard(m);
  const NodeStats& h = st.half();
  out.t0 = h.t;
  const double c0 = h.t * (1.0 - h.t);
  out.truncation_lb = {c0 * (2.0 * d.value - h.v_norm_sq), c0 * (2.0 * d.error_bound + h.v_norm_sq_se),
                       FunctionalValue::Method::monte_carlo};

  const auto hv = detail::integrate_nodes(
      st, [](const NodeStats& n) { return std::pair{(2.0 * n.t - 1.0) * n.v_norm_sq, std::abs(2.0 * n.t - 1.0) * n.v_norm_sq_se}; });
  const double htail = e * (1.0 - e) * last.v_norm_sq;
  detail::check_tail("halving", hv, htail);
  out.halving_lb = detail::with_tail(hv, htail, e * last.v_norm_sq_se);
  return out;
}

// ---------------------------------------------------------------------------
// Process identities.

struct ResidualNode {
  double t = 0.0;
  double max_abs = 0.0;    // largest entry of |residual|
  double max_ratio = 0.0;  // largest |residual| / SE over entries
  bool within = true;      // every entry within the tolerance band
};

struct ResidualReport {
  double max_residual = 0.0;
  double max_ratio = 0.0;
  bool passed = true;
  std::vector<ResidualNode> nodes;
};

/// d/dt E[Gamma_t] against (E[Gamma_t] - E[Gamma_t^2]) / (1 - t) at interior
/// nodes. The time derivative is a central difference whose two ends reuse
/// the same (X_1, G) draws; each sample contributes one residual.
inline ResidualReport dgamma_check(const Measure& m, const PathStats& st, double sigmas = 4.0) {
  const auto d = static_cast<Eigen::Index>(m.dim());
  const std::size_t dd = static_cast<std::size_t>(d * d);
  ResidualReport rep;
  std::vector<std::size_t> interior;
  for (std::size_t i = 1; i + 1 < st.grid.size(); ++i) interior.push_back(i);
  rep.nodes.resize(interior.size());
  parallel_for(interior.size(), [&](std::size_t k) {
    const std::size_t node = interior[k];
    const double t = st.grid.nodes[node];
    const double h = 1e-4 * std::min(t, 1.0 - t);
    const SemigroupSlice s0(m, 1.0 - t), sp(m, 1.0 - (t + h)), sm(m, 1.0 - (t - h));
    const CounterRng rng(st.seed, streams::dgamma + static_cast<std::uint32_t>(node));
    Eigen::VectorXd x1(d), g(d), x(d), xp(d), xm(d);
    Eigen::MatrixXd h0(d, d), hp(d, d), hm(d, d);
    Welford acc(dd);
    std::vector<double> row(dd);
    for (std::size_t j = 0; j < st.samples; ++j) {
      std::uint32_t slot = draw_into(m, rng, j, 0, x1);
      for (Eigen::Index i = 0; i < d; ++i) g[i] = rng.normal(j, slot++);
      x = t * x1 + std::sqrt(t * (1.0 - t)) * g;
      xp = (t + h) * x1 + std::sqrt((t + h) * (1.0 - t - h)) * g;
      xm = (t - h) * x1 + std::sqrt((t - h) * (1.0 - t + h)) * g;
      s0.eval(x.data(), nullptr, h0.data());
      sp.eval(xp.data(), nullptr, hp.data());
      sm.eval(xm.data(), nullptr, hm.data());
      const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
      const Eigen::MatrixXd gam = id + (1.0 - t) * h0;
      const Eigen::MatrixXd gp = id + (1.0 - t - h) * hp;
      const Eigen::MatrixXd gmm = id + (1.0 - t + h) * hm;
      const Eigen::MatrixXd res = (gp - gmm) / (2.0 * h) - (gam - gam * gam) / (1.0 - t);
      for (std::size_t e = 0; e < dd; ++e) row[e] = res.data()[e];
      acc.add(row);
    }
    ResidualNode& rn = rep.nodes[k];
    rn.t = t;
    for (std::size_t e = 0; e < dd; ++e) {
      const double r = std::abs(acc.mean(e));
      const double se = acc.se(e);
      rn.max_abs = std::max(rn.max_abs, r);
      if (se > 0.0) rn.max_ratio = std::max(rn.max_ratio, r / se);
      if (r > sigmas * se + 1e-6) rn.within = false;
    }
  });
  for (const auto& n : rep.nodes) {
    rep.max_residual = std::max(rep.max_residual, n.max_abs);
    rep.max_ratio = std::max(rep.max_ratio, n.max_ratio);
    rep.passed = rep.passed && n.within;
  }
  return rep;
}

/// E[v v'] = E[I - Gamma_t] / (1 - t) + Cov(mu) - I, per node.
inline ResidualReport intbyparts_check(const Measure& m, const PathStats& st, double sigmas = 4.0) {
  const auto [mean, cov] = mean_cov(m);
  const auto d = static_cast<Eigen::Index>(m.dim());
  const Eigen::MatrixXd target = cov - Eigen::MatrixXd::Identity(d, d);
  ResidualReport rep;
  for (const auto& n : st.nodes) {
    ResidualNode rn;
    rn.t = n.t;
    const Eigen::MatrixXd res = n.ibp_mean - target;
    for (Eigen::Index c = 0; c < d; ++c)
      for (Eigen::Index r = 0; r < d; ++r) {
        const double a = std::abs(res(r, c));
        const double se = n.ibp_se(r, c);
        rn.max_abs = std::max(rn.max_abs, a);
        if (se > 0.0) rn.max_ratio = std::max(rn.max_ratio, a / se);
        if (a > sigmas * se + 1e-10 * (1.0 + std::abs(target(r, c)))) rn.within = false;
      }
    rep.max_residual = std::max(rep.max_residual, rn.max_abs);
    rep.max_ratio = std::max(rep.max_ratio, rn.max_ratio);
    rep.passed = rep.passed && rn.within;
    rep.nodes.push_back(rn);
  }
  return rep;
}

struct ComparisonViolation {
  std::string lemma;  // "dimension" or "poincare"
  double t = 0.0;
  double value = 0.0;
  double bound = 0.0;
  double excess = 0.0;  // in units of the combined SE
};

struct ComparisonReport {
  double c_mu = 0.0;
  bool dimension_applicable = false;
  bool poincare_applicable = false;
  std::string reason;
  std::vector<ComparisonViolation> violations;
  std::size_t checks = 0;
};

/// Both comparison lemmas node by node: E|v_t|^2 below the comparison curve
/// for t <= 1/2 and above it for t >= 1/2.
inline ComparisonReport comparison_bounds(const Measure& m, const PathStats& st, const PoincareEstimate& cp,
                                          double sigmas = 3.0) {
  const auto [mean, cov] = mean_cov(m);
  const double d = static_cast<double>(m.dim());
  ComparisonReport rep;
  rep.dimension_applicable = cov.trace() <= d;
  rep.poincare_applicable = std::isfinite(cp.upper) && cp.upper > 0.0;
  if (!rep.dimension_applicable) rep.reason += "trace_le_d:false;";
  if (!rep.poincare_applicable) rep.reason += "poincare_finite:false;";
  require(rep.dimension_applicable || rep.poincare_applicable, ErrorKind::precondition_unmet,
          "neither comparison lemma applies");
  const NodeStats& half = st.half();
  const double c = half.v_norm_sq;
  rep.c_mu = c;
  auto check = [&](const char* lemma, double t, const NodeStats& n, double curve, double dcurve_dc) {
    ++rep.checks;
    const double se = n.v_norm_sq_se + std::abs(dcurve_dc) * half.v_norm_sq_se + 1e-12 * (1.0 + std::abs(curve));
    const double gap = t <= 0.5 ? n.v_norm_sq - curve : curve - n.v_norm_sq;
    if (gap > sigmas * se) rep.violations.push_back({lemma, t, n.v_norm_sq, curve, gap / se});
  };
  for (const auto& n : st.nodes) {
    const double t = n.t;
    if (rep.dimension_applicable) {
      const double den = c * (1.0 - 2.0 * t) + 2.0 * d;
      if (den > 0.0) check("dimension", t, n, c * 2.0 * d / den, 4.0 * d * d / (den * den));
    }
    if (rep.poincare_applicable) {
      const double cpu = cp.upper;
      const double f = (cpu + 1.0) * t / ((cpu - 1.0) * t + 1.0);
      check("poincare", t, n, c * f, f);
    }
  }
  return rep;
}

/// Draws of E[X_1 | X_t0] = X_t0 + (1 - t0) v_t0(X_t0).
inline Eigen::MatrixXd conditional_mean_samples(const Measure& m, double t0, std::size_t n, std::uint64_t seed) {
  require(t0 > 0.0 && t0 < 1.0, ErrorKind::domain_error, "t0 must lie in (0, 1)");
  const CounterRng rng(seed, streams::conditional);
  const SemigroupSlice slice(m, 1.0 - t0);
  const auto d = static_cast<Eigen::Index>(m.dim());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), d);
  Eigen::VectorXd x1(d), x(d), v(d);
  const double s = std::sqrt(t0 * (1.0 - t0));
  for (std::size_t j = 0; j < n; ++j) {
    std::uint32_t slot = draw_into(m, rng, j, 0, x1);
    for (Eigen::Index i = 0; i < d; ++i) x[i] = t0 * x1[i] + s * rng.normal(j, slot++);
    slice.eval(x.data(), v.data(), nullptr);
    out.row(static_cast<Eigen::Index>(j)) = (x + (1.0 - t0) * v).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Euler-Maruyama.

struct EmResult {
  Eigen::MatrixXd terminal;  // n_paths x d
  std::size_t steps = 0;
  double max_abs = 0.0;
};

/// dX = v_t(X) dt + dB from X_0 = 0 over a time grid of n_steps nodes,
/// with a final step from t_max to 1.
inline EmResult simulate_em(const Measure& m, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed,
                            double eps_end = 1e-4) {
  require(n_steps >= 100, ErrorKind::domain_error, "Euler-Maruyama needs n_steps >= 100");
  require(n_paths >= 1, ErrorKind::domain_error, "n_paths must be positive");
  const TimeGrid grid = make_time_grid(n_steps, eps_end);
  std::vector<double> times = grid.nodes;
  times.push_back(1.0);
  std::vector<SemigroupSlice> slices;
  slices.reserve(times.size() - 1);
  for (std::size_t k = 0; k + 1 < times.size(); ++k) slices.emplace_back(m, 1.0 - times[k]);
  const auto d = static_cast<Eigen::Index>(m.dim());
  const double limit = 50.0 * m.sigma_max();
  EmResult res;
  res.steps = times.size() - 1;
  res.terminal = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_paths), d);
  const CounterRng rng(seed, streams::euler);
  std::vector<double> max_abs(n_paths, 0.0);
  parallel_for(n_paths, [&](std::size_t j) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d), v(d);
    std::uint32_t slot = 0;
    for (std::size_t k = 0; k + 1 < times.size(); ++k) {
      const double dt = times[k + 1] - times[k];
      slices[k].eval(x.data(), v.data(), nullptr);
      const double sq = std::sqrt(dt);
      for (Eigen::Index i = 0; i < d; ++i) x[i] += v[i] * dt + sq * rng.normal(j, slot++);
      const double a = x.cwiseAbs().maxCoeff();
      max_abs[j] = std::max(max_abs[j], a);
      if (!(a <= limit))
        throw Error(ErrorKind::step_explosion, "a path left 50 sigma_max; refine the time grid near t = 1");
    }
    res.terminal.row(static_cast<Eigen::Index>(j)) = x.transpose();
  });
  res.max_abs = *std::max_element(max_abs.begin(), max_abs.end());
  return res;
}

// ---------------------------------------------------------------------------
// Empirical comparisons in one dimension.

/// W_2^2 between two empirical laws of equal size (sorted coupling).
inline double w2_empirical_1d(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && a.size() == b.size(), ErrorKind::empty_sample, "samples must be non-empty and of equal size");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// W_2^2 between an empirical law and a 1D model, midpoint rule in u.
inline double w2_empirical_vs_model(std::vector<double> a, const Measure& m) {
  require(!a.empty(), ErrorKind::empty_sample, "empty sample");
  std::sort(a.begin(), a.end());
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double q = quantile(m, (static_cast<double>(i) + 0.5) / n);
    s += (a[i] - q) * (a[i] - q);
  }
  return s / n;
}

struct ChiSquare {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t bins = 0;
};

/// Pearson goodness of fit with equiprobable bins under the model.
inline ChiSquare chi_square_gof(const std::vector<double>& x, const Measure& m, std::size_t bins = 50) {
  require(x.size() >= 5 * bins, ErrorKind::sample_too_small, "chi-square test needs >= 5 expected counts per bin");
  std::vector<double> edges;
  for (std::size_t i = 1; i < bins; ++i) edges.push_back(quantile(m, static_cast<double>(i) / static_cast<double>(bins)));
  std::vector<double> counts(bins, 0.0);
  for (double v : x) counts[static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin())] += 1.0;
  const double expected = static_cast<double>(x.size()) / static_cast<double>(bins);
  ChiSquare r;
  r.bins = bins;
  for (double c : counts) r.statistic += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(bins - 1));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

}  // namespace flab
