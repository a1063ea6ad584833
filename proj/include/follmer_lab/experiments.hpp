#pragma once

#include <cmath>
#include <vector>

#include "follmer_lab/bounds.hpp"
#include "follmer_lab/error.hpp"
#include "follmer_lab/follmer.hpp"
#include "follmer_lab/functionals.hpp"
#include "follmer_lab/measures.hpp"

namespace flab {

struct CounterexampleRow {
  double k = 0.0;
  double trace = 0.0;
  FunctionalValue entropy;
  double entropy_cap = 0.0;  // (1/k) D(gamma_{k(xi-1)} || gamma), from convexity
  FunctionalValue w2sq_exact;
  FunctionalValue w1;
  FunctionalValue delta_tal;
  FunctionalValue dual_lb;
};

struct CounterexampleOptions {
  double dual_spacing = 0.01;  // grid spacing for the sup-convolution
};

inline CounterexampleRow counterexample_row(double xi, double k, const CounterexampleOptions& opt = {}) {
  const Measure mu = Measure::counterexample(xi, k);
  const Measure g1 = Measure::standard(1);
  CounterexampleRow row;
  row.k = k;
  row.trace = 1.0 - 1.0 / k + (xi - 1.0);
  row.entropy = relative_entropy_to_standard(mu);
  const double wide = k * (xi - 1.0);
  row.entropy_cap = 0.5 * (wide - 1.0 - std::log(wide)) / k;
  require(row.entropy.value <= row.entropy_cap + row.entropy.error_bound, ErrorKind::domain_error,
          "entropy exceeds its convexity cap");
  row.w2sq_exact = w2_1d(mu, g1);
  row.w1 = w1_1d(mu, g1);
  row.delta_tal = {2.0 * row.entropy.value - row.w2sq_exact.value,
                   2.0 * row.entropy.error_bound + row.w2sq_exact.error_bound,
                   FunctionalValue::Method::quantile_quadrature};
  const Witness w = counterexample_witness(k);
  const double reach = quadrature_settings().window_sigmas * mu.sigma_max();
  const std::vector<double> grid = make_dual_grid(reach, std::min(opt.dual_spacing, 1e-3 * reach), w.breakpoints);
  row.dual_lb = dual_lower_bound(mu, g1, w, grid);
  return row;
}

/// One row per k, in the order given; rows are computed in parallel.
inline std::vector<CounterexampleRow> counterexample_table(double xi, const std::vector<double>& ks,
                                                           const CounterexampleOptions& opt = {}) {
  require(xi > 1.0, ErrorKind::domain_error, "xi must exceed 1");
  std::vector<CounterexampleRow> rows(ks.size());
  parallel_for(ks.size(), [&](std::size_t i) { rows[i] = counterexample_row(xi, ks[i], opt); });
  return rows;
}

struct WitnessValues {
  std::vector<double> g;
  std::vector<double> qg;
  double outer_radius = 0.0;  // sqrt(k) / ln k, where g_k switches on
  double inner_radius = 0.0;  // Qg_k vanishes for |x| <= this radius
  bool vanishing_ok = true;
  bool growth_ok = true;  // Qg_k(x) <= ln(k) x^2
};

inline WitnessValues witness_values(double k, double xi, const std::vector<double>& grid) {
  require(k > 1.0 && xi > 1.0, ErrorKind::domain_error, "need k > 1 and xi > 1");
  const double reach = quadrature_settings().window_sigmas * std::sqrt(k * (xi - 1.0));
  require(grid.front() <= -reach && grid.back() >= reach, ErrorKind::domain_error,
          "grid must cover 12 sqrt(k (xi - 1)) on both sides");
  const Witness w = counterexample_witness(k);
  WitnessValues out;
  out.g.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) out.g[i] = w.g(grid[i]);
  out.qg = sup_convolution(grid, out.g);
  const double lk = std::log(k);
  out.outer_radius = std::sqrt(k) / lk;
  out.inner_radius = out.outer_radius * (1.0 - std::sqrt(1.0 - 1.0 / lk));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double x = grid[i];
    const double tol = 1e-12 * (1.0 + x * x);
    if (std::abs(x) <= out.inner_radius && std::abs(out.qg[i]) > tol) out.vanishing_ok = false;
    if (out.qg[i] > lk * x * x + tol) out.growth_ok = false;
  }
  return out;
}

struct ConcentrationRow {
  double t = 0.0;
  double tail = 0.0;   // P(1 - G^2 >= t)
  double bound = 0.0;  // exp(-t^2 / 7)
  bool ok = true;
};

/// f(x) = 1 - x^2, for which E|f'(G)|^2 = 4.
inline std::vector<ConcentrationRow> concentration_experiment(const std::vector<double>& ts) {
  std::vector<ConcentrationRow> rows;
  for (double t : ts) {
    ConcentrationRow r;
    r.t = t;
    r.tail = t > 1.0 ? 0.0 : 2.0 * normal::cdf(std::sqrt(1.0 - t)) - 1.0;
    r.bound = concentration_bound(4.0, t);
    r.ok = r.tail <= r.bound;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace flab
