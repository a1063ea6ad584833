#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include "follmer_lab/error.hpp"
#include "follmer_lab/measures.hpp"
#include "follmer_lab/numerics.hpp"

namespace flab {

struct FunctionalValue {
  enum class Method { closed_form, quadrature, quantile_quadrature, monte_carlo, dual_witness };
  double value = 0.0;
  double error_bound = 0.0;
  Method method = Method::closed_form;
};

inline std::string_view to_string(FunctionalValue::Method m) {
  switch (m) {
    case FunctionalValue::Method::closed_form: return "closed_form";
    case FunctionalValue::Method::quadrature: return "quadrature";
    case FunctionalValue::Method::quantile_quadrature: return "quantile_quadrature";
    case FunctionalValue::Method::monte_carlo: return "monte_carlo";
    case FunctionalValue::Method::dual_witness: return "dual_witness";
  }
  return "unknown";
}

namespace detail {

/// The weakest method wins when values are combined.
inline FunctionalValue::Method combine(FunctionalValue::Method a, FunctionalValue::Method b) {
  return static_cast<int>(a) > static_cast<int>(b) ? a : b;
}

inline FunctionalValue sum(const std::vector<FunctionalValue>& parts) {
  FunctionalValue out;
  for (const auto& p : parts) {
    out.value += p.value;
    out.error_bound += p.error_bound;
    out.method = detail::combine(out.method, p.method);
  }
  return out;
}

inline Measure as_measure(const Block& b) {
  if (b.comps.size() == 1) return Measure::gaussian(b.comps[0].mean, b.comps[0].cov);
  std::vector<double> w;
  std::vector<Eigen::MatrixXd> covs;
  for (const auto& c : b.comps) {
    w.push_back(c.weight);
    covs.push_back(c.cov);
  }
  return Measure::mixture(w, covs);
}

inline Integral integrate_over_block(const Block& b, const std::function<double(double)>& f,
                                     std::vector<double> extra_breaks = {}) {
  auto [lo, hi] = scalar::support_window(b, quadrature_settings().window_sigmas);
  auto breaks = scalar::breakpoints(b);
  breaks.insert(breaks.end(), extra_breaks.begin(), extra_breaks.end());
  return integrate(f, lo, hi, breaks, quadrature_settings().rel_tol);
}

/// Mass of the block outside its quadrature window; used as a truncation error scale.
inline double outside_mass(const Block& b) {
  auto [lo, hi] = scalar::support_window(b, quadrature_settings().window_sigmas);
  return std::exp(scalar::log_cdf(b, lo)) + std::exp(scalar::log_sf(b, hi));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Relative entropy.

/// D(N(m1, C1) || N(m2, C2)).
inline double gaussian_relative_entropy(const Eigen::VectorXd& m1, const Eigen::MatrixXd& c1,
                                        const Eigen::VectorXd& m2, const Eigen::MatrixXd& c2) {
  const Eigen::LDLT<Eigen::MatrixXd> l2(c2);
  const Eigen::LDLT<Eigen::MatrixXd> l1(c1);
  require(l2.info() == Eigen::Success && l2.vectorD().minCoeff() > 0.0, ErrorKind::singular_model,
          "reference covariance singular");
  require(l1.vectorD().minCoeff() > 0.0, ErrorKind::singular_model, "covariance singular");
  const Eigen::VectorXd dm = m2 - m1;
  const double tr = l2.solve(c1).trace();
  const double quad = dm.dot(l2.solve(dm));
  const double logdet2 = l2.vectorD().array().log().sum();
  const double logdet1 = l1.vectorD().array().log().sum();
  return 0.5 * (tr + quad - static_cast<double>(m1.size()) + logdet2 - logdet1);
}

/// D(mu || rho) for a one-dimensional mu against an arbitrary log-density.
template <class LogDensity>
FunctionalValue relative_entropy_1d(const Measure& mu, const LogDensity& log_rho) {
  const Block& b = mu.scalar_block();
  require(!b.singular(), ErrorKind::singular_model, "mu has no density");
  auto f = [&](double x) {
    const double lp = scalar::log_pdf(b, x);
    const double lr = log_rho(x);
    const double v = std::exp(lp) * (lp - lr);
    if (!std::isfinite(v) && std::exp(lp) > 0.0)
      throw Error(ErrorKind::support_mismatch, "log-ratio diverges inside the quadrature window");
    return std::isfinite(v) ? v : 0.0;
  };
  const Integral r = detail::integrate_over_block(b, f);
  auto [lo, hi] = scalar::support_window(b, quadrature_settings().window_sigmas);
  const double edge = std::max(std::abs(scalar::log_pdf(b, lo) - log_rho(lo)),
                               std::abs(scalar::log_pdf(b, hi) - log_rho(hi)));
  return {r.value, r.error + detail::outside_mass(b) * (1.0 + edge), FunctionalValue::Method::quadrature};
}

/// D(mu || rho) between models: closed form for Gaussian pairs, per-factor for
/// products with matching block structure, quadrature in one dimension.
inline FunctionalValue relative_entropy(const Measure& mu, const Measure& rho) {
  require(mu.dim() == rho.dim(), ErrorKind::domain_error, "dimension mismatch");
  if (mu.blocks().size() == 1 && rho.blocks().size() == 1 && mu.all_blocks_gaussian() && rho.all_blocks_gaussian()) {
    const auto& a = mu.blocks()[0].comps[0];
    const auto& b = rho.blocks()[0].comps[0];
    return {gaussian_relative_entropy(a.mean, a.cov, b.mean, b.cov), 0.0, FunctionalValue::Method::closed_form};
  }
  if (mu.blocks().size() > 1 || rho.blocks().size() > 1) {
    require(mu.blocks().size() == rho.blocks().size(), ErrorKind::unsupported,
            "relative entropy between products needs matching factor structure");
    std::vector<FunctionalValue> parts;
    for (std::size_t i = 0; i < mu.blocks().size(); ++i) {
      require(mu.blocks()[i].dim == rho.blocks()[i].dim, ErrorKind::unsupported, "factor dimension mismatch");
      parts.push_back(relative_entropy(detail::as_measure(mu.blocks()[i]), detail::as_measure(rho.blocks()[i])));
    }
    return detail::sum(parts);
  }
  require(mu.dim() == 1, ErrorKind::unsupported, "relative entropy quadrature is one-dimensional");
  const Block& rb = rho.scalar_block();
  require(!rb.singular(), ErrorKind::singular_model, "rho has no density");
  return relative_entropy_1d(mu, [&](double x) { return scalar::log_pdf(rb, x); });
}

/// D(mu || gamma_d), block by block.
inline FunctionalValue relative_entropy_to_standard(const Measure& mu) {
  std::vector<FunctionalValue> parts;
  for (const auto& b : mu.blocks()) {
    if (b.comps.size() == 1) {
      const auto& c = b.comps[0];
      const auto n = c.mean.size();
      parts.push_back({gaussian_relative_entropy(c.mean, c.cov, Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Identity(n, n)),
                       0.0, FunctionalValue::Method::closed_form});
      continue;
    }
    require(b.dim == 1, ErrorKind::unsupported, "entropy of a multivariate mixture block is not supported");
    parts.push_back(relative_entropy_1d(detail::as_measure(b), [](double x) { return normal::log_pdf(x); }));
  }
  return detail::sum(parts);
}

// ---------------------------------------------------------------------------
// Fisher information relative to gamma.

inline FunctionalValue fisher_information(const Measure& mu) {
  std::vector<FunctionalValue> parts;
  for (const auto& b : mu.blocks()) {
    require(!b.singular(), ErrorKind::singular_model, "Fisher information needs a density");
    if (b.comps.size() == 1) {
      // grad ln f = (I - C^{-1}) x + C^{-1} m  with x ~ N(m, C).
      const auto& c = b.comps[0];
      const auto n = c.mean.size();
      const Eigen::MatrixXd k = Eigen::MatrixXd::Identity(n, n) - c.precision;
      const Eigen::VectorXd shift = k * c.mean + c.precision * c.mean;
      parts.push_back({(k * c.cov * k.transpose()).trace() + shift.squaredNorm(), 0.0,
                       FunctionalValue::Method::closed_form});
      continue;
    }
    require(b.dim == 1, ErrorKind::unsupported, "Fisher information of a multivariate mixture block");
    auto f = [&](double x) {
      const double s = scalar::score(b, x) + x;
      return std::exp(scalar::log_pdf(b, x)) * s * s;
    };
    const Integral r = detail::integrate_over_block(b, f);
    auto [lo, hi] = scalar::support_window(b, quadrature_settings().window_sigmas);
    const double edge = std::max(std::pow(scalar::score(b, lo) + lo, 2), std::pow(scalar::score(b, hi) + hi, 2));
    parts.push_back({r.value, r.error + detail::outside_mass(b) * (1.0 + edge), FunctionalValue::Method::quadrature});
  }
  return detail::sum(parts);
}

// ---------------------------------------------------------------------------
// Wasserstein distances.

/// Bures closed form for W_2^2 between Gaussians.
inline FunctionalValue w2_gaussian(const Eigen::VectorXd& m1, const Eigen::MatrixXd& c1, const Eigen::VectorXd& m2,
                                   const Eigen::MatrixXd& c2) {
  auto psd_sqrt = [](const Eigen::MatrixXd& c) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (c + c.transpose()));
    require(es.eigenvalues().minCoeff() >= -kPsdTolerance, ErrorKind::non_psd, "covariance not PSD");
    return Eigen::MatrixXd(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                           es.eigenvectors().transpose());
  };
  const Eigen::MatrixXd r2 = psd_sqrt(c2);
  const Eigen::MatrixXd cross = psd_sqrt(r2 * c1 * r2);
  const double v = (m1 - m2).squaredNorm() + (c1 + c2 - 2.0 * cross).trace();
  return {std::max(v, 0.0), 0.0, FunctionalValue::Method::closed_form};
}

namespace detail {

/// int_{-12}^{12} |T_mu(z) - T_nu(z)|^p phi(z) dz with T the monotone
/// transport from gamma_1; this is the quantile integral after u = Phi(z).
inline FunctionalValue quantile_integral(const Measure& mu, const Measure& nu, int p) {
  require(mu.dim() == 1 && nu.dim() == 1, ErrorKind::unsupported, "quantile coupling is one-dimensional");
  const double kZ = quadrature_settings().window_sigmas;
  auto diff = [&](double z) { return transport_from_normal(mu, z) - transport_from_normal(nu, z); };
  auto f = [&](double z) {
    const double d = std::abs(diff(z));
    return (p == 2 ? d * d : d) * normal::pdf(z);
  };
  std::vector<double> breaks{-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0};
  if (p == 1) {
    // Kinks of |diff| where the two maps cross.
    constexpr int kScan = 480;
    double za = -kZ, da = diff(za);
    for (int i = 1; i <= kScan; ++i) {
      const double zb = -kZ + 2.0 * kZ * i / kScan, db = diff(zb);
      if (da != 0.0 && db != 0.0 && (da < 0.0) != (db < 0.0)) {
        std::uintmax_t iters = 200;
        const auto [lo, hi] = boost::math::tools::toms748_solve(diff, za, zb, da, db,
                                                                boost::math::tools::eps_tolerance<double>(50), iters);
        const double root = 0.5 * (lo + hi);
        if (std::none_of(breaks.begin(), breaks.end(), [&](double b) { return std::abs(b - root) < 1e-6; }))
          breaks.push_back(root);
      }
      za = zb;
      da = db;
    }
  }
  // |diff| near a crossing sits at root-solver noise, so W1 runs at a looser tolerance.
  const double tol = p == 1 ? std::max(quadrature_settings().rel_tol, 1e-10) : quadrature_settings().rel_tol;
  const Integral r = integrate(f, -kZ, kZ, breaks, tol);
  // Tail beyond |z| = 12 with the map extrapolated linearly.
  const double slope = std::max(std::abs(diff(kZ)), std::abs(diff(-kZ))) / kZ;
  const double tail = p == 2 ? 2.0 * slope * slope * (kZ * normal::pdf(kZ) + std::exp(normal::log_sf(kZ)))
                             : 2.0 * slope * normal::pdf(kZ);
  // Each quantile is solved to ~1e-14 relative.
  const double scale = std::max(mu.sigma_max(), nu.sigma_max());
  const double root = p == 2 ? 2.0 * std::sqrt(std::max(r.value, 0.0)) * 1e-13 * scale : 1e-13 * scale;
  return {r.value, r.error + tail + root, FunctionalValue::Method::quantile_quadrature};
}

}  // namespace detail

/// W_2^2 between one-dimensional models through the quantile coupling.
inline FunctionalValue w2_1d(const Measure& mu, const Measure& nu) {
  require(mu.dim() == 1 && nu.dim() == 1, ErrorKind::unsupported,
          "w2_1d needs d = 1; use w2_gaussian or a product decomposition");
  return detail::quantile_integral(mu, nu, 2);
}

inline FunctionalValue w1_1d(const Measure& mu, const Measure& nu) {
  require(mu.dim() == 1 && nu.dim() == 1, ErrorKind::unsupported, "w1_1d needs d = 1");
  return detail::quantile_integral(mu, nu, 1);
}

/// W_2^2(mu, gamma_d): tensorizes over blocks; 1D blocks by quantile
/// quadrature, multivariate Gaussian blocks by the Bures formula.
inline FunctionalValue w2_squared_to_standard(const Measure& mu) {
  std::vector<FunctionalValue> parts;
  const Measure g1 = Measure::standard(1);
  for (const auto& b : mu.blocks()) {
    if (b.dim == 1) {
      parts.push_back(w2_1d(detail::as_measure(b), g1));
      continue;
    }
    require(b.comps.size() == 1, ErrorKind::unsupported, "exact W2 for multivariate non-Gaussian blocks");
    const auto n = static_cast<Eigen::Index>(b.dim);
    parts.push_back(w2_gaussian(b.comps[0].mean, b.comps[0].cov, Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Identity(n, n)));
  }
  return detail::sum(parts);
}

/// W_{1,1} (L1 cost) between products of 1D factors: the sum of factor W_1.
inline FunctionalValue w11_product(const Measure& mu, const Measure& nu) {
  require(mu.dim() == nu.dim() && mu.blocks().size() == mu.dim() && nu.blocks().size() == nu.dim(),
          ErrorKind::unsupported, "w11_product needs products of 1D factors");
  std::vector<FunctionalValue> parts;
  for (std::size_t i = 0; i < mu.blocks().size(); ++i)
    parts.push_back(w1_1d(detail::as_measure(mu.blocks()[i]), detail::as_measure(nu.blocks()[i])));
  return detail::sum(parts);
}

inline FunctionalValue w11_to_standard(const Measure& mu) {
  std::vector<Measure> ones(mu.dim(), Measure::standard(1));
  return w11_product(mu, mu.dim() == 1 ? Measure::standard(1) : Measure::product(std::move(ones)));
}

// ---------------------------------------------------------------------------
// Kantorovich duality.

/// Qg(x) = max over grid points y of g(y) - (x - y)^2, at every grid point.
/// Upper envelope of the lines y -> (g(y) - y^2) + 2xy, scanned in O(N).
inline std::vector<double> sup_convolution(std::span<const double> grid, std::span<const double> g) {
  require(grid.size() == g.size() && grid.size() >= 2, ErrorKind::domain_error, "grid/value size mismatch");
  const double reach = std::max(std::abs(grid.front()), std::abs(grid.back()));
  double max_gap = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    require(grid[i] > grid[i - 1], ErrorKind::domain_error, "grid must be strictly increasing");
    max_gap = std::max(max_gap, grid[i] - grid[i - 1]);
  }
  require(max_gap <= 1e-3 * reach, ErrorKind::grid_too_coarse, "grid spacing exceeds 1e-3 of the window");

  // Lines indexed by grid point; slopes 2y are increasing.
  std::vector<std::size_t> hull;
  auto intercept = [&](std::size_t j) { return g[j] - grid[j] * grid[j]; };
  auto redundant = [&](std::size_t a, std::size_t b, std::size_t c) {
    // b is dominated when the a/c crossing lies left of the a/b crossing.
    const long double mab = 2.0L * (grid[b] - grid[a]);
    const long double mac = 2.0L * (grid[c] - grid[a]);
    return static_cast<long double>(intercept(c) - intercept(a)) * mab >=
           static_cast<long double>(intercept(b) - intercept(a)) * mac;
  };
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (!std::isfinite(g[j])) continue;
    while (hull.size() >= 2 && redundant(hull[hull.size() - 2], hull.back(), j)) hull.pop_back();
    hull.push_back(j);
  }
  require(!hull.empty(), ErrorKind::domain_error, "g is not finite anywhere on the grid");

  std::vector<double> out(grid.size());
  std::size_t k = 0;
  auto value = [&](std::size_t j, double x) { return g[j] - (x - grid[j]) * (x - grid[j]); };
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double x = grid[i];
    while (k + 1 < hull.size() && value(hull[k + 1], x) >= value(hull[k], x)) ++k;
    out[i] = value(hull[k], x);
  }
  return out;
}

/// A test function for the dual problem together with the facts needed to
/// bound the grid error: its jump points and a bound on |g''| between them.
struct Witness {
  std::function<double(double)> g;
  std::vector<double> breakpoints;
  double curvature = 0.0;
};

inline Witness zero_witness() { return {[](double) { return 0.0; }, {}, 0.0}; }

inline Witness quadratic_witness(double a) { return {[a](double x) { return a * x * x; }, {}, 2.0 * std::abs(a)}; }

inline Witness linear_witness(double slope) { return {[slope](double x) { return slope * x; }, {}, 0.0}; }

/// g_k: zero on |x| < sqrt(k)/ln k, (1 - 1/ln k) x^2 outside.
inline Witness counterexample_witness(double k) {
  const double lk = std::log(k);
  const double r = std::sqrt(k) / lk;
  const double a = 1.0 - 1.0 / lk;
  return {[r, a](double x) { return std::abs(x) < r ? 0.0 : a * x * x; }, {-r, r}, 2.0 * a};
}

/// Uniform grid over [-reach, reach] with spacing at most h, plus the given breakpoints.
inline std::vector<double> make_dual_grid(double reach, double h, const std::vector<double>& breaks = {}) {
  const auto n = static_cast<std::size_t>(std::ceil(2.0 * reach / h));
  std::vector<double> grid(n + 1);
  for (std::size_t i = 0; i <= n; ++i) grid[i] = -reach + 2.0 * reach * static_cast<double>(i) / static_cast<double>(n);
  for (double b : breaks)
    if (b > -reach && b < reach) grid.push_back(b);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             grid.end());
  return grid;
}

/// int g dmu - int Qg dnu, a lower bound on W_2^2(mu, nu).
inline FunctionalValue dual_lower_bound(const Measure& mu, const Measure& nu, const Witness& w,
                                        std::span<const double> grid) {
  require(mu.dim() == 1 && nu.dim() == 1, ErrorKind::unsupported, "dual bound is one-dimensional");
  std::vector<double> gv(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) gv[i] = w.g(grid[i]);
  const std::vector<double> qg = sup_convolution(grid, gv);

  const Block& mb = mu.scalar_block();
  const Integral gmu = detail::integrate_over_block(
      mb, [&](double x) { return w.g(x) * std::exp(scalar::log_pdf(mb, x)); }, w.breakpoints);

  const Block& nb = nu.scalar_block();
  auto [lo, hi] = scalar::support_window(nb, quadrature_settings().window_sigmas);
  require(grid.front() <= lo && grid.back() >= hi, ErrorKind::domain_error, "grid does not cover nu's window");
  double qnu = 0.0;
  double h = 0.0;
  using boost::math::quadrature::gauss;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    if (grid[i + 1] < lo || grid[i] > hi) continue;
    const double a = grid[i], b = grid[i + 1];
    h = std::max(h, b - a);
    const double qa = qg[i], qb = qg[i + 1];
    auto interp = [&](double x) { return (qa + (qb - qa) * (x - a) / (b - a)) * std::exp(scalar::log_pdf(nb, x)); };
    qnu += gauss<double, 7>::integrate(interp, a, b);
  }
  // Grid max vs. continuous sup, plus linear interpolation in x.
  const double grid_err = (2.0 + w.curvature) * h * h / 8.0 + h * h / 4.0;
  return {gmu.value - qnu, gmu.error + grid_err + 1e-12 * std::abs(qnu), FunctionalValue::Method::dual_witness};
}

// ---------------------------------------------------------------------------
// Deficits.

struct BoundVerdict {
  std::string name;
  bool applicable = false;
  std::string reason;  // machine-readable precondition, e.g. "trace_le_d:false"
  double value = 0.0;
  double deficit = 0.0;
  double error = 0.0;  // combined error of deficit and bound
  double margin = 0.0; // deficit - value
  bool satisfied = true;
  std::map<std::string, double> inputs;
};

struct DeficitReport {
  std::string measure_id;
  FunctionalValue entropy;
  FunctionalValue w2_squared;
  FunctionalValue fisher;
  FunctionalValue delta_tal;
  FunctionalValue delta_ls;
  std::vector<BoundVerdict> bounds;
  std::map<std::string, double> comparison;  // informational quantities, no verdict
};

/// D, W_2^2, I and both deficits; bounds are attached by `verify`.
inline DeficitReport deficits(const Measure& mu) {
  DeficitReport r;
  r.measure_id = mu.id();
  r.entropy = relative_entropy_to_standard(mu);
  r.w2_squared = w2_squared_to_standard(mu);
  r.fisher = fisher_information(mu);
  r.delta_tal = {2.0 * r.entropy.value - r.w2_squared.value, 2.0 * r.entropy.error_bound + r.w2_squared.error_bound,
                 detail::combine(r.entropy.method, r.w2_squared.method)};
  r.delta_ls = {r.fisher.value - 2.0 * r.entropy.value, r.fisher.error_bound + 2.0 * r.entropy.error_bound,
                detail::combine(r.entropy.method, r.fisher.method)};
  if (mu.blocks().size() == mu.dim()) {
    const FunctionalValue w11 = w11_to_standard(mu);
    const double d = static_cast<double>(mu.dim());
    r.comparison["w11"] = w11.value;
    r.comparison["w11_sq_over_d"] = w11.value * w11.value / d;
    // The earlier stability estimate's right-hand side without its unknown constant.
    r.comparison["fathi_rhs_over_c"] = std::min(w11.value * w11.value / d, w11.value / std::sqrt(d));
  }
  return r;
}

}  // namespace flab
