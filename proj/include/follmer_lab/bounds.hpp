#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "follmer_lab/error.hpp"
#include "follmer_lab/follmer.hpp"
#include "follmer_lab/functionals.hpp"
#include "follmer_lab/measures.hpp"

namespace flab {

/// Slack, in combined error units, allowed before a verdict fails.
inline constexpr double kVerdictSigmas = 3.0;

/// Below this distance from 1 the rate functions switch to their Taylor series.
inline constexpr double kSeriesBand = 1e-3;

struct Thm1Rate {
  double rate = 0.0;        // min(1/4, r(C))
  double raw = 0.0;         // r(C)
  double simplified = 0.0;  // ln(C + 1) / (4C)
};

inline Thm1Rate thm1_rate(double cp) {
  require(cp > 0.0 && std::isfinite(cp), ErrorKind::domain_error, "Poincare constant must be positive and finite");
  const double e = cp - 1.0;
  double r;
  if (std::abs(e) < kSeriesBand) {
    r = 1.0 / 3.0 + e * (-1.0 / 6.0 + e * (2.0 / 15.0 + e * (-7.0 / 60.0 + e * (11.0 / 105.0 - e * 2.0 / 21.0))));
  } else {
    // 2 - 2C + (C + 1) ln C with ln C = log1p(e).
    const double num = -2.0 * e + (cp + 1.0) * std::log1p(e);
    r = (cp + 1.0) * num / (e * e * e);
  }
  Thm1Rate out{std::min(0.25, r), r, std::log1p(cp) / (4.0 * cp)};
  require(out.rate >= out.simplified * (1.0 - 1e-12), ErrorKind::domain_error, "rate below its simplified form");
  return out;
}

/// g(lambda) = (2(1 - lambda) + (lambda + 1) ln lambda) / (lambda - 1).
inline double thm2_g(double lambda) {
  lambda = std::max(lambda, 1e-12);
  const double e = lambda - 1.0;
  if (std::abs(e) < kSeriesBand) {
    const double e2 = e * e;
    return e2 * (1.0 / 6.0 +
                 e * (-1.0 / 6.0 + e * (3.0 / 20.0 + e * (-2.0 / 15.0 + e * (5.0 / 42.0 - e * 3.0 / 28.0)))));
  }
  return (-2.0 * e + (lambda + 1.0) * std::log1p(e)) / e;
}

struct Thm2Value {
  double value = 0.0;
  bool hs_applicable = false;  // Cov <= I
  double hs_value = 0.0;       // |I - Cov|_HS^2 / 6
};

inline Thm2Value thm2_bound(const std::vector<double>& eigenvalues) {
  Thm2Value out;
  out.hs_applicable = true;
  for (double l : eigenvalues) {
    require(l >= -kPsdTolerance, ErrorKind::negative_eigenvalue, "covariance eigenvalue is negative");
    if (l < 1.0) {
      const double g = thm2_g(l);
      require(g >= (l - 1.0) * (l - 1.0) / 6.0 * (1.0 - 1e-12), ErrorKind::domain_error, "g below (l-1)^2/6");
      out.value += g;
    }
    if (l > 1.0) out.hs_applicable = false;
    out.hs_value += (l - 1.0) * (l - 1.0) / 6.0;
  }
  if (!out.hs_applicable) out.hs_value = 0.0;
  return out;
}

inline double thm3_bound(double entropy, std::size_t d) {
  require(entropy >= 0.0, ErrorKind::domain_error, "entropy must be nonnegative");
  require(d >= 1, ErrorKind::domain_error, "dimension must be positive");
  return std::min(entropy * entropy / (6.0 * static_cast<double>(d)), entropy / 4.0);
}

/// d/dD of min(D^2/(6d), D/4).
inline double thm3_slope(double entropy, std::size_t d) {
  const double dd = static_cast<double>(d);
  return entropy * entropy / (6.0 * dd) <= entropy / 4.0 ? entropy / (3.0 * dd) : 0.25;
}

inline double concentration_bound(double grad_sq_mean, double t) {
  require(t >= 0.0, ErrorKind::domain_error, "t must be nonnegative");
  require(grad_sq_mean > 0.0, ErrorKind::domain_error, "E|grad f|^2 must be positive");
  return std::exp(-4.0 * t * t / (7.0 * grad_sq_mean));
}

/// min(D^{3/2} / (3 sqrt(3 d)), D / 6) and its D-derivative.
inline std::pair<double, double> mixture_rate(double divergence, std::size_t d) {
  const double dd = static_cast<double>(d);
  const double dv = std::max(divergence, 0.0);
  const double a = std::pow(dv, 1.5) / (3.0 * std::sqrt(3.0 * dd));
  const double b = dv / 6.0;
  return a <= b ? std::pair{a, std::sqrt(dv) / (2.0 * std::sqrt(3.0 * dd))} : std::pair{b, 1.0 / 6.0};
}

// ---------------------------------------------------------------------------

struct Thm5Result {
  double t0 = 0.0;
  bool large_regime = false;  // delta_Tal >= d
  std::vector<double> nu_samples;
  FunctionalValue divergence;  // D(mu || nu_hat * gamma), mean over two seeds
  double divergence_seed_a = 0.0;
  double divergence_seed_b = 0.0;
  double bound = 0.0;
  double bound_error = 0.0;
  bool satisfied = false;
};

namespace detail {

inline std::vector<double> nu_draws(const Measure& m, double t0, std::size_t n, std::uint64_t seed) {
  if (t0 <= 0.0) return std::vector<double>(n, mean_cov(m).first[0]);
  const Eigen::MatrixXd y = conditional_mean_samples(m, t0, n, seed);
  return {y.data(), y.data() + y.size()};
}

inline std::uint64_t second_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ull; }

}  // namespace detail

/// Builds nu_{t0} from the conditional means of the Föllmer process and
/// compares delta_Tal with the regime's rate of D(mu || nu_hat * gamma).
inline Thm5Result thm5_bound_and_construct(const Measure& m, const FunctionalValue& delta_tal, std::size_t d,
                                           std::size_t n, std::uint64_t seed) {
  require(d == 1 && m.dim() == 1, ErrorKind::unsupported, "the mixture construction is implemented for d = 1");
  require(n >= 1000, ErrorKind::sample_too_small, "need at least 1000 samples for nu_hat");
  const double delta = std::max(delta_tal.value, 0.0);
  Thm5Result r;
  r.large_regime = delta >= static_cast<double>(d);
  r.t0 = r.large_regime ? 0.5 : std::cbrt(delta / static_cast<double>(d));
  r.nu_samples = detail::nu_draws(m, r.t0, n, seed);
  auto divergence = [&](std::vector<double> ys) {
    const SmoothedEmpirical smooth(std::move(ys));
    return relative_entropy_1d(m, [&](double x) { return smooth.log_density(x); });
  };
  const FunctionalValue a = divergence(r.nu_samples);
  const FunctionalValue b = divergence(detail::nu_draws(m, r.t0, n, detail::second_seed(seed)));
  r.divergence_seed_a = a.value;
  r.divergence_seed_b = b.value;
  r.divergence = {0.5 * (a.value + b.value), 0.5 * std::abs(a.value - b.value) + std::max(a.error_bound, b.error_bound),
                  FunctionalValue::Method::monte_carlo};
  const double dv = std::max(r.divergence.value, 0.0);
  const double dd = static_cast<double>(d);
  if (r.large_regime) {
    r.bound = dv / 6.0;
    r.bound_error = r.divergence.error_bound / 6.0;
  } else {
    r.bound = std::pow(dv, 1.5) / (3.0 * std::sqrt(3.0 * dd));
    r.bound_error = std::sqrt(dv) / (2.0 * std::sqrt(3.0 * dd)) * r.divergence.error_bound;
  }
  r.satisfied = delta_tal.value >= r.bound - kVerdictSigmas * (delta_tal.error_bound + r.bound_error);
  return r;
}

inline Thm5Result thm5_bound_and_construct(const Measure& m, double delta_tal, std::size_t d, std::size_t n,
                                           std::uint64_t seed) {
  return thm5_bound_and_construct(m, FunctionalValue{delta_tal, 0.0, FunctionalValue::Method::closed_form}, d, n, seed);
}

// ---------------------------------------------------------------------------
// Verdicts.

inline BoundVerdict make_verdict(std::string name, const FunctionalValue& deficit, double value, double value_error,
                                 std::map<std::string, double> inputs) {
  BoundVerdict v;
  v.name = std::move(name);
  v.applicable = true;
  v.value = value;
  v.deficit = deficit.value;
  v.error = deficit.error_bound + value_error;
  v.margin = v.deficit - v.value;
  v.satisfied = v.deficit >= v.value - kVerdictSigmas * v.error;
  v.inputs = std::move(inputs);
  return v;
}

inline BoundVerdict not_applicable(std::string name, std::string reason, const FunctionalValue& deficit) {
  BoundVerdict v;
  v.name = std::move(name);
  v.applicable = false;
  v.reason = std::move(reason);
  v.deficit = deficit.value;
  v.satisfied = true;
  return v;
}

inline std::vector<BoundVerdict> cor_ls_bounds(const Measure& m, const DeficitReport& report,
                                               const std::optional<Thm5Result>& thm5) {
  std::vector<BoundVerdict> out;
  const std::size_t d = m.dim();
  const bool centered = m.is_centered();
  if (!centered) {
    out.push_back(not_applicable("cor_ls_mixture", "centered:false", report.delta_ls));
  } else if (!thm5) {
    out.push_back(not_applicable("cor_ls_mixture", "mixture_construction:unavailable", report.delta_ls));
  } else {
    const auto [value, slope] = mixture_rate(thm5->divergence.value, d);
    out.push_back(make_verdict("cor_ls_mixture", report.delta_ls, value, slope * thm5->divergence.error_bound,
                               {{"divergence_nu", thm5->divergence.value}, {"t0", thm5->t0}, {"d", double(d)}}));
  }
  const double trace = mean_cov(m).second.trace();
  if (!centered) {
    out.push_back(not_applicable("cor_ls_trace", "centered:false", report.delta_ls));
  } else if (trace > static_cast<double>(d)) {
    out.push_back(not_applicable("cor_ls_trace", "trace_le_d:false", report.delta_ls));
  } else {
    const double dv = report.entropy.value;
    out.push_back(make_verdict("cor_ls_trace", report.delta_ls, thm3_bound(std::max(dv, 0.0), d),
                               thm3_slope(dv, d) * report.entropy.error_bound,
                               {{"entropy", dv}, {"trace", trace}, {"d", double(d)}}));
  }
  return out;
}

struct VerifyOptions {
  bool mixture_construction = true;  // run the nu_{t0} construction when d = 1
  std::size_t samples = 100000;
  std::uint64_t seed = 1;
  // Test hook: replace the deficit seen by one bound.
  std::optional<std::string> force_bound;
  double fake_deficit = 0.0;
};

/// Deficits plus every bound verdict.
inline DeficitReport verify(const Measure& m, const VerifyOptions& opt = {}) {
  DeficitReport r = deficits(m);
  const std::size_t d = m.dim();
  const bool centered = m.is_centered();
  const auto [mean, cov] = mean_cov(m);
  const double trace = cov.trace();

  auto deficit_for = [&](const std::string& name, const FunctionalValue& real) {
    if (opt.force_bound && *opt.force_bound == name)
      return FunctionalValue{opt.fake_deficit, 0.0, FunctionalValue::Method::closed_form};
    return real;
  };
  auto forced = [&](const std::string& name) { return opt.force_bound && *opt.force_bound == name; };

  // Poincare-based rate.
  std::optional<PoincareEstimate> cp;
  try {
    cp = poincare_constant(m);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::unsupported) throw;
  }
  for (const char* name : {"thm1_poincare", "thm1_simplified"}) {
    const FunctionalValue def = deficit_for(name, r.delta_tal);
    if (!centered && !forced(name)) {
      r.bounds.push_back(not_applicable(name, "centered:false", def));
      continue;
    }
    if (!cp) {
      r.bounds.push_back(not_applicable(name, "poincare_available:false", def));
      continue;
    }
    const Thm1Rate rate = thm1_rate(cp->upper);
    const double k = std::string(name) == "thm1_poincare" ? rate.rate : rate.simplified;
    r.bounds.push_back(make_verdict(name, def, k * r.entropy.value, k * r.entropy.error_bound,
                                    {{"cp_lower", cp->lower}, {"cp_upper", cp->upper}, {"rate", k},
                                     {"entropy", r.entropy.value}}));
  }

  {
    const FunctionalValue def = deficit_for("thm2_covariance", r.delta_tal);
    if (!centered && !forced("thm2_covariance")) {
      r.bounds.push_back(not_applicable("thm2_covariance", "centered:false", def));
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
      std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
      const Thm2Value t2 = thm2_bound(ev);
      std::map<std::string, double> in{{"hs_value", t2.hs_value}, {"hs_applicable", t2.hs_applicable ? 1.0 : 0.0}};
      for (std::size_t i = 0; i < ev.size(); ++i) in["lambda_" + std::to_string(i)] = ev[i];
      r.bounds.push_back(make_verdict("thm2_covariance", def, t2.value, 0.0, std::move(in)));
    }
  }

  {
    const FunctionalValue def = deficit_for("thm3_trace", r.delta_tal);
    if (!centered && !forced("thm3_trace")) {
      r.bounds.push_back(not_applicable("thm3_trace", "centered:false", def));
    } else if (trace > static_cast<double>(d) && !forced("thm3_trace")) {
      r.bounds.push_back(not_applicable("thm3_trace", "trace_le_d:false", def));
    } else {
      const double dv = std::max(r.entropy.value, 0.0);
      r.bounds.push_back(make_verdict("thm3_trace", def, thm3_bound(dv, d), thm3_slope(dv, d) * r.entropy.error_bound,
                                      {{"entropy", dv}, {"trace", trace}, {"d", double(d)}}));
    }
  }

  std::optional<Thm5Result> t5;
  {
    const FunctionalValue def = deficit_for("thm5_mixture", r.delta_tal);
    if (!centered) {
      r.bounds.push_back(not_applicable("thm5_mixture", "centered:false", def));
    } else if (d != 1 || !opt.mixture_construction) {
      r.bounds.push_back(not_applicable("thm5_mixture", d != 1 ? "d_eq_1:false" : "construction:disabled", def));
    } else {
      t5 = thm5_bound_and_construct(m, r.delta_tal, d, opt.samples, opt.seed);
      auto v = make_verdict("thm5_mixture", def, t5->bound, t5->bound_error,
                            {{"t0", t5->t0},
                             {"divergence_nu", t5->divergence.value},
                             {"divergence_seed_a", t5->divergence_seed_a},
                             {"divergence_seed_b", t5->divergence_seed_b},
                             {"large_regime", t5->large_regime ? 1.0 : 0.0}});
      r.bounds.push_back(std::move(v));
    }
  }

  for (BoundVerdict v : cor_ls_bounds(m, r, t5)) {
    if (forced(v.name)) {
      const FunctionalValue fake{opt.fake_deficit, 0.0, FunctionalValue::Method::closed_form};
      v.deficit = fake.value;
      v.margin = v.deficit - v.value;
      v.satisfied = !v.applicable || v.deficit >= v.value - kVerdictSigmas * (v.error);
    }
    r.bounds.push_back(std::move(v));
  }
  return r;
}

inline bool all_satisfied(const DeficitReport& r) {
  return std::all_of(r.bounds.begin(), r.bounds.end(), [](const BoundVerdict& b) { return !b.applicable || b.satisfied; });
}

}  // namespace flab
