#pragma once

// Analytic measure models on R^d: Gaussians, centered Gaussian mixtures and
// products of those. Every model is a product of "blocks", each block a
// finite Gaussian mixture on its own coordinates; all downstream modules work
// block by block.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "follmer_lab/error.hpp"
#include "follmer_lab/numerics.hpp"
#include "follmer_lab/rng.hpp"

namespace flab {

inline constexpr double kPsdTolerance = 1e-10;
inline constexpr double kWeightSumTolerance = 1e-12;

struct Component {
  double weight = 1.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  // Derived at construction.
  Eigen::MatrixXd sqrt_cov;  // symmetric square root, used for sampling
  Eigen::MatrixXd precision; // empty when cov is singular
  double log_det = 0.0;
  bool singular = false;
};

/// A Gaussian mixture on coordinates [offset, offset + dim).
struct Block {
  std::size_t offset = 0;
  std::size_t dim = 1;
  std::vector<Component> comps;
  // Scalar caches, filled only when dim == 1.
  std::vector<double> log_w, mu, var, sd;

  bool singular() const {
    return std::any_of(comps.begin(), comps.end(), [](const Component& c) { return c.singular; });
  }
  double sigma_max() const {
    double s = 0.0;
    for (const auto& c : comps)
      s = std::max(s, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c.cov).eigenvalues().maxCoeff());
    return std::sqrt(s);
  }
};

namespace detail {

inline Component make_component(double weight, Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  const auto d = mean.size();
  require(cov.rows() == d && cov.cols() == d, ErrorKind::invalid_model, "covariance shape mismatch");
  require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= kPsdTolerance * (1.0 + cov.cwiseAbs().maxCoeff()),
          ErrorKind::invalid_model, "covariance not symmetric");
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues();
  require(ev.minCoeff() >= -kPsdTolerance, ErrorKind::invalid_model, "covariance not PSD");
  Component c;
  c.weight = weight;
  c.mean = std::move(mean);
  c.cov = cov;
  c.sqrt_cov = es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  c.singular = ev.minCoeff() <= kPsdTolerance;
  if (!c.singular) {
    c.precision = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    c.log_det = ev.array().log().sum();
  }
  return c;
}

inline void fill_scalar_cache(Block& b) {
  if (b.dim != 1) return;
  for (const auto& c : b.comps) {
    b.log_w.push_back(std::log(c.weight));
    b.mu.push_back(c.mean[0]);
    b.var.push_back(c.cov(0, 0));
    b.sd.push_back(std::sqrt(std::max(c.cov(0, 0), 0.0)));
  }
}

inline void check_weights(const std::vector<double>& w) {
  require(!w.empty(), ErrorKind::invalid_model, "mixture needs at least one component");
  double s = 0.0;
  for (double x : w) {
    require(x > 0.0, ErrorKind::invalid_model, "mixture weights must be strictly positive");
    s += x;
  }
  require(std::abs(s - 1.0) <= kWeightSumTolerance, ErrorKind::invalid_model, "mixture weights must sum to 1");
}

}  // namespace detail

class Measure {
 public:
  enum class Kind { gaussian, mixture, product };

  static Measure gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    Measure m(Kind::gaussian, static_cast<std::size_t>(mean.size()));
    Block b;
    b.dim = m.dim_;
    b.comps.push_back(detail::make_component(1.0, std::move(mean), std::move(cov)));
    detail::fill_scalar_cache(b);
    m.blocks_.push_back(std::move(b));
    return m;
  }

  /// Centered one-dimensional Gaussian with the given variance.
  static Measure gaussian(double var) {
    return gaussian(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, var));
  }

  static Measure standard(std::size_t d) {
    return gaussian(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)),
                    Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
  }

  /// Mixture of centered Gaussians.
  static Measure mixture(std::vector<double> weights, const std::vector<Eigen::MatrixXd>& covs) {
    detail::check_weights(weights);
    require(weights.size() == covs.size(), ErrorKind::invalid_model, "weights/components size mismatch");
    const auto d = static_cast<std::size_t>(covs.front().rows());
    Measure m(Kind::mixture, d);
    Block b;
    b.dim = d;
    for (std::size_t i = 0; i < covs.size(); ++i) {
      require(static_cast<std::size_t>(covs[i].rows()) == d, ErrorKind::invalid_model,
              "mixture components must share the dimension");
      b.comps.push_back(detail::make_component(weights[i], Eigen::VectorXd::Zero(covs[i].rows()), covs[i]));
    }
    detail::fill_scalar_cache(b);
    m.blocks_.push_back(std::move(b));
    return m;
  }

  static Measure mixture(std::vector<double> weights, const std::vector<double>& vars) {
    std::vector<Eigen::MatrixXd> covs;
    for (double v : vars) covs.push_back(Eigen::MatrixXd::Constant(1, 1, v));
    return mixture(std::move(weights), covs);
  }

  /// The two-component family (1 - 1/k) gamma_1 + (1/k) gamma_{k(xi - 1)}.
  static Measure counterexample(double xi, double k) {
    require(xi > 1.0 && k > 1.0, ErrorKind::invalid_model, "counterexample needs xi > 1 and k > 1");
    return mixture({1.0 - 1.0 / k, 1.0 / k}, std::vector<double>{1.0, k * (xi - 1.0)});
  }

  static Measure product(std::vector<Measure> factors) {
    require(!factors.empty(), ErrorKind::invalid_model, "product needs at least one factor");
    std::size_t d = 0;
    for (const auto& f : factors) d += f.dim();
    Measure m(Kind::product, d);
    std::size_t offset = 0;
    for (const auto& f : factors) {
      for (Block b : f.blocks_) {
        b.offset += offset;
        m.blocks_.push_back(std::move(b));
      }
      offset += f.dim();
    }
    m.factors_ = std::make_shared<const std::vector<Measure>>(std::move(factors));
    return m;
  }

  Kind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<Measure>& factors() const {
    require(kind_ == Kind::product, ErrorKind::unsupported, "factors() on a non-product model");
    return *factors_;
  }

  /// Single block of dimension one (a 1D Gaussian or 1D mixture).
  bool is_scalar() const { return blocks_.size() == 1 && dim_ == 1; }
  const Block& scalar_block() const {
    require(is_scalar(), ErrorKind::unsupported, "operation requires a one-dimensional model");
    return blocks_.front();
  }

  bool is_centered() const {
    for (const auto& b : blocks_)
      for (const auto& c : b.comps)
        if (c.mean.cwiseAbs().maxCoeff() > 0.0) return false;
    return true;
  }

  bool all_blocks_gaussian() const {
    return std::all_of(blocks_.begin(), blocks_.end(), [](const Block& b) { return b.comps.size() == 1; });
  }

  double sigma_max() const {
    double s = 0.0;
    for (const auto& b : blocks_) s = std::max(s, b.sigma_max());
    return s;
  }

  /// Identifier in the measure-spec grammar, used as measure_id in reports.
  std::string id() const {
    std::ostringstream os;
    os.precision(12);
    if (kind_ == Kind::product) {
      os << "product:(";
      for (std::size_t i = 0; i < factors_->size(); ++i) os << (i ? ";" : "") << (*factors_)[i].id();
      os << ")";
      return os.str();
    }
    const Block& b = blocks_.front();
    if (kind_ == Kind::gaussian) {
      os << "gaussian:var=";
      for (std::size_t i = 0; i < b.dim; ++i) os << (i ? "," : "") << b.comps[0].cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
      return os.str();
    }
    os << "mixture:w=";
    for (std::size_t i = 0; i < b.comps.size(); ++i) os << (i ? "," : "") << b.comps[i].weight;
    os << ",var=";
    for (std::size_t i = 0; i < b.comps.size(); ++i) os << (i ? "," : "") << b.comps[i].cov(0, 0);
    return os.str();
  }

 private:
  Measure(Kind kind, std::size_t dim) : kind_(kind), dim_(dim) {
    require(dim >= 1, ErrorKind::invalid_model, "dimension must be positive");
  }

  Kind kind_;
  std::size_t dim_;
  std::vector<Block> blocks_;
  std::shared_ptr<const std::vector<Measure>> factors_;
};

// ---------------------------------------------------------------------------
// Scalar block helpers (dim == 1).

namespace scalar {

inline double log_pdf(const Block& b, double x) {
  double acc = -kInf;
  for (std::size_t i = 0; i < b.var.size(); ++i) {
    const double z = (x - b.mu[i]) / b.sd[i];
    acc = log_add_exp(acc, b.log_w[i] + normal::log_pdf(z) - std::log(b.sd[i]));
  }
  return acc;
}

/// d/dx ln rho(x).
inline double score(const Block& b, double x) {
  const double lp = log_pdf(b, x);
  double s = 0.0;
  for (std::size_t i = 0; i < b.var.size(); ++i) {
    const double z = (x - b.mu[i]) / b.sd[i];
    const double post = std::exp(b.log_w[i] + normal::log_pdf(z) - std::log(b.sd[i]) - lp);
    s -= post * (x - b.mu[i]) / b.var[i];
  }
  return s;
}

inline double log_cdf(const Block& b, double x) {
  double acc = -kInf;
  for (std::size_t i = 0; i < b.var.size(); ++i)
    acc = log_add_exp(acc, b.log_w[i] + normal::log_cdf((x - b.mu[i]) / b.sd[i]));
  return acc;
}

inline double log_sf(const Block& b, double x) {
  double acc = -kInf;
  for (std::size_t i = 0; i < b.var.size(); ++i)
    acc = log_add_exp(acc, b.log_w[i] + normal::log_sf((x - b.mu[i]) / b.sd[i]));
  return acc;
}

inline double sd_max(const Block& b) { return *std::max_element(b.sd.begin(), b.sd.end()); }

inline std::pair<double, double> support_window(const Block& b, double sigmas) {
  double lo = kInf, hi = -kInf;
  for (std::size_t i = 0; i < b.sd.size(); ++i) {
    lo = std::min(lo, b.mu[i] - sigmas * b.sd[i]);
    hi = std::max(hi, b.mu[i] + sigmas * b.sd[i]);
  }
  return {lo, hi};
}

/// Points where the integrand of a mixture changes scale; used to split quadrature.
inline std::vector<double> breakpoints(const Block& b) {
  std::vector<double> pts;
  for (std::size_t i = 0; i < b.sd.size(); ++i)
    for (double k : {-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0}) pts.push_back(b.mu[i] + k * b.sd[i]);
  return pts;
}

/// Solves F(x) = u given ln u (lower tail) or 1 - F(x) = u given ln u (upper tail).
inline double invert_cdf(const Block& b, double log_target, bool upper_tail) {
  auto [lo, hi] = support_window(b, 40.0);
  auto g = [&](double x) -> std::pair<double, double> {
    const double lp = log_pdf(b, x);
    if (!upper_tail) {
      const double lc = log_cdf(b, x);
      return {lc - log_target, std::exp(lp - lc)};
    }
    const double ls = log_sf(b, x);
    return {log_target - ls, std::exp(lp - ls)};
  };
  double guess = 0.0;
  {
    // Start from the widest component's quantile.
    const std::size_t i = static_cast<std::size_t>(std::max_element(b.sd.begin(), b.sd.end()) - b.sd.begin());
    const double u = std::exp(log_target);
    if (u > 0.0 && u < 1.0) {
      const double z = normal::quantile(u);
      guess = b.mu[i] + (upper_tail ? -z : z) * b.sd[i];
    }
  }
  return solve_increasing(g, lo, hi, guess, 1e-14);
}

}  // namespace scalar

// ---------------------------------------------------------------------------
// Operations.

/// ln (d mu / d gamma)(x).
inline double log_density_rel_gaussian(const Measure& m, const Eigen::Ref<const Eigen::VectorXd>& x) {
  require(static_cast<std::size_t>(x.size()) == m.dim(), ErrorKind::domain_error, "point dimension mismatch");
  double total = 0.0;
  for (const auto& b : m.blocks()) {
    require(!b.singular(), ErrorKind::singular_model, "model has a singular covariance, no density");
    if (b.dim == 1) {
      const double xi = x[static_cast<Eigen::Index>(b.offset)];
      total += scalar::log_pdf(b, xi) - normal::log_pdf(xi);
      continue;
    }
    const auto xb = x.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.dim));
    double acc = -kInf;
    for (const auto& c : b.comps) {
      const Eigen::VectorXd r = xb - c.mean;
      acc = log_add_exp(acc, std::log(c.weight) - 0.5 * r.dot(c.precision * r) - 0.5 * c.log_det);
    }
    total += acc + 0.5 * xb.squaredNorm();
  }
  return total;
}

inline double density_rel_gaussian(const Measure& m, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return std::exp(log_density_rel_gaussian(m, x));
}

/// Draws sample `index` of the model into `out` using slots starting at `slot`.
/// Returns the next unused slot.
inline std::uint32_t draw_into(const Measure& m, const CounterRng& rng, std::uint64_t index,
                               std::uint32_t slot, Eigen::Ref<Eigen::VectorXd> out) {
  for (const auto& b : m.blocks()) {
    std::size_t k = 0;
    if (b.comps.size() > 1) {
      const double u = rng.uniform(index, slot++);
      double acc = 0.0;
      for (k = 0; k + 1 < b.comps.size(); ++k) {
        acc += b.comps[k].weight;
        if (u < acc) break;
      }
    }
    const Component& c = b.comps[k];
    if (b.dim == 1) {
      out[static_cast<Eigen::Index>(b.offset)] = c.mean[0] + std::sqrt(c.cov(0, 0)) * rng.normal(index, slot++);
      continue;
    }
    Eigen::VectorXd z(static_cast<Eigen::Index>(b.dim));
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal(index, slot++);
    out.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.dim)) = c.mean + c.sqrt_cov * z;
  }
  return slot;
}

/// n i.i.d. draws, one per row. Row i depends only on (seed, i).
inline Eigen::MatrixXd sample(const Measure& m, std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::domain_error, "sample size must be positive");
  const CounterRng rng(seed, streams::sample);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m.dim()));
  Eigen::VectorXd row(static_cast<Eigen::Index>(m.dim()));
  for (std::size_t i = 0; i < n; ++i) {
    draw_into(m, rng, i, 0, row);
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

/// Exact mean and covariance.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> mean_cov(const Measure& m) {
  const auto d = static_cast<Eigen::Index>(m.dim());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& b : m.blocks()) {
    const auto o = static_cast<Eigen::Index>(b.offset);
    const auto n = static_cast<Eigen::Index>(b.dim);
    Eigen::VectorXd mb = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(n, n);
    for (const auto& c : b.comps) {
      mb += c.weight * c.mean;
      second += c.weight * (c.cov + c.mean * c.mean.transpose());
    }
    mean.segment(o, n) = mb;
    cov.block(o, o, n, n) = second - mb * mb.transpose();
  }
  return {mean, cov};
}

inline double cdf(const Measure& m, double x) { return std::exp(scalar::log_cdf(m.scalar_block(), x)); }

/// F^{-1}(u) for a one-dimensional model.
inline double quantile(const Measure& m, double u) {
  require(m.dim() == 1, ErrorKind::unsupported, "quantile requires d = 1");
  require(u > 0.0 && u < 1.0, ErrorKind::domain_error, "quantile needs u in (0,1)");
  const Block& b = m.scalar_block();
  return u <= 0.5 ? scalar::invert_cdf(b, std::log(u), false) : scalar::invert_cdf(b, std::log1p(-u), true);
}

/// x with F(x) = Phi(z): the monotone map pushing gamma_1 onto the model.
/// Works in the tail where Phi(z) rounds to 0 or 1.
inline double transport_from_normal(const Measure& m, double z) {
  const Block& b = m.scalar_block();
  return z <= 0.0 ? scalar::invert_cdf(b, normal::log_cdf(z), false)
                  : scalar::invert_cdf(b, normal::log_cdf(-z), true);
}

// ---------------------------------------------------------------------------
// Poincare constant.

struct PoincareEstimate {
  enum class Method { closed_form, muckenhoupt, spectral };
  double lower = 0.0;
  double upper = kInf;
  Method method = Method::closed_form;
};

inline std::string_view to_string(PoincareEstimate::Method m) {
  switch (m) {
    case PoincareEstimate::Method::closed_form: return "closed_form";
    case PoincareEstimate::Method::muckenhoupt: return "muckenhoupt";
    case PoincareEstimate::Method::spectral: return "spectral";
  }
  return "unknown";
}

/// Muckenhoupt quantity B = max(B+, B-) around the median, where
/// B+ = sup_{x > m} mu([x, inf)) * int_m^x 1/rho.
inline double muckenhoupt_b(const Block& b) {
  const double median = scalar::invert_cdf(b, std::log(0.5), false);
  const double reach = 12.0 * scalar::sd_max(b);
  constexpr int kSteps = 200000;
  double best = 0.0;
  for (int side : {+1, -1}) {
    const double h = reach / kSteps;
    double log_int = -kInf;  // ln int_median^x 1/rho
    double prev = -scalar::log_pdf(b, median);
    for (int j = 1; j <= kSteps; ++j) {
      const double x = median + side * j * h;
      const double cur = -scalar::log_pdf(b, x);
      // Exact integral of exp(linear interpolation of ln(1/rho)) over the cell.
      const double slope = cur - prev;
      const double cell = std::abs(slope) < 1e-12
                              ? std::log(h) + prev
                              : prev + std::log(h) + std::log(std::expm1(slope) / slope);
      log_int = log_add_exp(log_int, cell);
      prev = cur;
      const double log_tail = side > 0 ? scalar::log_sf(b, x) : scalar::log_cdf(b, x);
      best = std::max(best, std::exp(log_tail + log_int));
    }
  }
  return best;
}

/// Smallest nonzero eigenvalue of -(rho g')'/rho by a finite-volume
/// discretization on n cells (Richardson-extrapolated with 2n); returns 1/lambda.
inline double poincare_spectral(const Measure& m, int n = 4000) {
  const Block& b = m.scalar_block();
  auto [lo, hi] = scalar::support_window(b, 10.0);
  auto lambda1 = [&](int cells) {
    const double h = (hi - lo) / cells;
    Eigen::VectorXd lp(cells), lface(cells + 1);
    for (int i = 0; i < cells; ++i) lp[i] = scalar::log_pdf(b, lo + (i + 0.5) * h);
    for (int i = 0; i <= cells; ++i) lface[i] = scalar::log_pdf(b, lo + i * h);
    Eigen::VectorXd diag(cells), sub(cells - 1);
    for (int i = 0; i < cells; ++i) {
      double s = 0.0;
      if (i > 0) s += std::exp(lface[i] - lp[i]);
      if (i + 1 < cells) s += std::exp(lface[i + 1] - lp[i]);
      diag[i] = s / (h * h);
    }
    for (int i = 0; i + 1 < cells; ++i) sub[i] = -std::exp(lface[i + 1] - 0.5 * (lp[i] + lp[i + 1])) / (h * h);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    return es.eigenvalues()[1];
  };
  const double coarse = lambda1(n);
  const double fine = lambda1(2 * n);
  return 1.0 / ((4.0 * fine - coarse) / 3.0);
}

inline PoincareEstimate poincare_constant(const Measure& m) {
  PoincareEstimate out{0.0, 0.0, PoincareEstimate::Method::closed_form};
  for (const auto& b : m.blocks()) {
    PoincareEstimate e;
    if (b.comps.size() == 1) {
      // Gaussian: the largest covariance eigenvalue.
      const double lam = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(b.comps[0].cov).eigenvalues().maxCoeff();
      e = {lam, lam, PoincareEstimate::Method::closed_form};
    } else {
      require(b.dim == 1, ErrorKind::unsupported, "Poincare constant needs 1D factors for mixtures");
      const double bm = muckenhoupt_b(b);
      e = {0.5 * bm, 4.0 * bm, PoincareEstimate::Method::muckenhoupt};
    }
    // Tensorization: the constant of a product is the max over factors.
    out.lower = std::max(out.lower, e.lower);
    out.upper = std::max(out.upper, e.upper);
    if (e.method != PoincareEstimate::Method::closed_form) out.method = e.method;
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Density of nu_hat * gamma for an empirical measure nu_hat on R.
class SmoothedEmpirical {
 public:
  explicit SmoothedEmpirical(std::vector<double> samples) : y_(std::move(samples)) {
    require(!y_.empty(), ErrorKind::empty_sample, "convolution needs at least one sample");
    std::sort(y_.begin(), y_.end());
    log_n_ = std::log(static_cast<double>(y_.size()));
  }

  /// ln (1/n) sum_i phi(x - y_i). Samples more than 10 units farther than
  /// the nearest one contribute under e^{-50} each and are skipped.
  double log_density(double x) const {
    auto it = std::lower_bound(y_.begin(), y_.end(), x);
    double dmin = kInf;
    if (it != y_.end()) dmin = std::min(dmin, *it - x);
    if (it != y_.begin()) dmin = std::min(dmin, x - *std::prev(it));
    const double reach = dmin + 10.0;
    auto first = std::lower_bound(y_.begin(), y_.end(), x - reach);
    auto last = std::upper_bound(y_.begin(), y_.end(), x + reach);
    const double top = normal::log_pdf(dmin);
    double s = 0.0;
    for (auto p = first; p != last; ++p) s += std::exp(normal::log_pdf(x - *p) - top);
    return top + std::log(s) - log_n_;
  }

  double operator()(double x) const { return std::exp(log_density(x)); }
  const std::vector<double>& samples() const { return y_; }

 private:
  std::vector<double> y_;
  double log_n_ = 0.0;
};

inline SmoothedEmpirical convolve_with_gaussian(std::vector<double> samples) {
  return SmoothedEmpirical(std::move(samples));
}

}  // namespace flab
