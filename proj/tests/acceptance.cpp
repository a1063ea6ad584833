// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "follmer_lab/cli.hpp"
#include "oracle_values.hpp"

using namespace flab;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (detail.size() < 600) detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<double> kVarGrid{0.25, 0.5, 0.8, 2.0, 4.0};

Measure mix_wide() { return Measure::mixture({0.9, 0.1}, std::vector<double>{1.0, 10.0}); }
Measure mix_two() { return Measure::mixture({0.5, 0.5}, std::vector<double>{0.25, 4.0}); }
Measure mix_small() { return Measure::mixture({0.9, 0.1}, std::vector<double>{0.5, 0.8}); }

struct Simulated {
  std::string name;
  Measure m;
  PathStats st;
  double seconds = 0.0;
};

std::vector<Simulated> simulate_suite() {
  std::vector<Simulated> out;
  const TimeGrid grid = make_time_grid(96, 1e-4);
  for (auto [name, m] : {std::pair{std::string("gaussian var 2"), Measure::gaussian(2.0)},
                         std::pair{std::string("mixture 0.9/0.1 var 1/10"), mix_wide()},
                         std::pair{std::string("mixture 0.5/0.5 var 0.25/4"), mix_two()}}) {
    const auto t0 = std::chrono::steady_clock::now();
    PathStats st = path_stats(m, grid, 200000, 1);
    out.push_back({name, m, std::move(st), seconds_since(t0)});
  }
  return out;
}

Check ac1() {
  Check c;
  const std::vector<Measure> ms{Measure::standard(1),
                                Measure::product({Measure::standard(1), Measure::standard(1), Measure::standard(1)})};
  for (const Measure& m : ms) {
    const DeficitReport r = deficits(m);
    for (auto [name, v] : {std::pair{"D", r.entropy.value}, std::pair{"W2^2", r.w2_squared.value},
                           std::pair{"I", r.fisher.value}, std::pair{"dTal", r.delta_tal.value},
                           std::pair{"dLS", r.delta_ls.value}})
      c.require(std::abs(v) <= 1e-12, m.id() + " " + name + "=" + fmt(v));
    const DriftField f(m);
    const auto d = static_cast<Eigen::Index>(m.dim());
    for (double t : {0.0, 0.25, 0.5, 0.9, 1.0 - 1e-6})
      for (int i = -8; i <= 8; ++i) {
        const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(d, i, -0.5 * i);
        const double n = f.drift(t, x).cwiseAbs().maxCoeff();
        c.require(n == 0.0, m.id() + " drift " + fmt(n));
      }
  }
  return c;
}

Check ac2() {
  Check c;
  const Measure g1 = Measure::standard(1);
  for (double s2 : kVarGrid) {
    const Measure m = Measure::gaussian(s2);
    const double d_exact = 0.5 * (s2 - 1.0 - std::log(s2));
    const double w_exact = (std::sqrt(s2) - 1.0) * (std::sqrt(s2) - 1.0);
    const double d_quad = relative_entropy_1d(m, [](double x) { return normal::log_pdf(x); }).value;
    const double w_quad = w2_1d(m, g1).value;
    const double d_closed = relative_entropy_to_standard(m).value;
    c.require(std::abs(d_quad - d_exact) <= 1e-8 * d_exact, "D quadrature var " + fmt(s2));
    c.require(std::abs(d_closed - d_exact) <= 1e-8 * d_exact, "D closed var " + fmt(s2));
    c.require(std::abs(w_quad - w_exact) <= 1e-8 * w_exact, "W2^2 var " + fmt(s2) + " got " + fmt(w_quad));
  }
  const double tal = deficits(Measure::gaussian(0.5)).delta_tal.value;
  c.require(std::abs(tal - 0.107361) <= 1e-6, "dTal(var 0.5) = " + fmt(tal));
  c.detail += c.ok ? "dTal(var 0.5) = " + fmt(tal) : "";
  return c;
}

Check ac3() {
  Check c;
  VerifyOptions opt;
  opt.mixture_construction = false;
  std::vector<Measure> ms;
  for (double s2 : kVarGrid) ms.push_back(Measure::gaussian(s2));
  ms.push_back(Measure::product({Measure::gaussian(0.5), Measure::gaussian(0.5)}));
  ms.push_back(mix_small());
  for (const Measure& m : ms) {
    const DeficitReport r = verify(m, opt);
    for (const auto& b : r.bounds) {
      const bool main = b.name == "thm1_poincare" || b.name == "thm1_simplified" || b.name == "thm2_covariance" ||
                        b.name == "thm3_trace";
      if (main && b.applicable) c.require(b.satisfied, m.id() + " " + b.name + " margin " + fmt(b.margin));
    }
  }
  const DeficitReport p = verify(ms[5], opt);
  for (const auto& b : p.bounds)
    if (b.name == "thm2_covariance")
      c.require(std::abs(b.value - 2.0 * thm2_g(0.5)) <= 1e-8, "product doubling " + fmt(b.value));
  return c;
}

Check ac4(const std::vector<Simulated>& sims) {
  Check c;
  for (const auto& s : sims) {
    const auto [lhs, rhs] = energy_identity(s.m, s.st);
    const double gap = std::abs(lhs.value - rhs.value);
    c.require(gap <= 3.0 * (lhs.error_bound + rhs.error_bound),
              s.name + " gap " + fmt(gap) + " vs 3x" + fmt(lhs.error_bound + rhs.error_bound));
    c.require(s.seconds <= 60.0, s.name + " took " + fmt(s.seconds) + " s");
    if (c.ok) c.detail += (c.detail.empty() ? "" : "; ") + s.name + " " + fmt(lhs.value) + " vs " + fmt(rhs.value) + " (" + fmt(s.seconds) + " s)";
  }
  return c;
}

Check ac5(const std::vector<Simulated>& sims) {
  Check c;
  for (const auto& s : sims) {
    const DeficitRepresentations r = deficit_representations(s.m, s.st);
    const double e1 = r.rep_fisher.error_bound + r.rep_entropy.error_bound;
    const double e2 = r.rep_entropy.error_bound + r.rep_wasserstein_ub.error_bound;
    c.require(r.rep_fisher.value >= r.rep_entropy.value - e1, s.name + " I < 2D");
    c.require(r.rep_entropy.value >= r.rep_wasserstein_ub.value - e2, s.name + " 2D < W-upper");
    const DeficitReport d = deficits(s.m);
    const double gap = std::abs(r.rep_delta_ls.value - d.delta_ls.value);
    c.require(gap <= 3.0 * (r.rep_delta_ls.error_bound + d.delta_ls.error_bound),
              s.name + " dLS gap " + fmt(gap) + " vs 3x" + fmt(r.rep_delta_ls.error_bound));
  }
  return c;
}

Check ac6(const std::vector<Simulated>& sims) {
  Check c;
  for (const auto& s : sims) {
    const auto& n0 = s.st.nodes.front();
    const double cov = mean_cov(s.m).second(0, 0);
    c.require(std::abs(n0.gamma_mean(0, 0) - cov) <= 3.0 * n0.gamma_se(0, 0) + 1e-12,
              s.name + " E Gamma_0 " + fmt(n0.gamma_mean(0, 0)) + " vs " + fmt(cov));
    const ResidualReport dg = dgamma_check(s.m, s.st, 4.0);
    c.require(dg.passed, s.name + " dGamma ratio " + fmt(dg.max_ratio));
    const ResidualReport ibp = intbyparts_check(s.m, s.st, 4.0);
    c.require(ibp.passed, s.name + " int-by-parts ratio " + fmt(ibp.max_ratio));
  }
  const DriftField g2(Measure::gaussian(2.0));
  for (double t = 0.0; t <= 1.0; t += 0.01)
    for (double x : {-4.0, 0.0, 1.5}) {
      const double v = g2.gamma(t, Eigen::VectorXd::Constant(1, x))(0, 0);
      c.require(std::abs(v - 2.0 / (1.0 + t)) <= 1e-8, "Gamma curve at t=" + fmt(t));
    }
  return c;
}

Check ac7() {
  Check c;
  for (const Measure& m : {Measure::gaussian(0.5), mix_small()}) {
    const PathStats st = path_stats(m, make_time_grid(96, 1e-4), 100000, 2);
    const ComparisonReport r = comparison_bounds(m, st, poincare_constant(m), 3.0);
    c.require(r.dimension_applicable && r.poincare_applicable, m.id() + " preconditions " + r.reason);
    for (const auto& v : r.violations) c.require(false, m.id() + " " + v.lemma + " t=" + fmt(v.t) + " excess " + fmt(v.excess));
  }
  return c;
}

Check ac8() {
  Check c;
  const std::vector<double> ks{10.0, 100.0, 1000.0, 10000.0, 100000.0};
  const auto rows = counterexample_table(2.0, ks);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string k = "k=" + fmt(r.k);
    c.require(r.trace == 1.0 - 1.0 / ks[i] + 1.0, k + " trace");
    c.require(r.entropy.value <= 0.5 && r.entropy.value <= r.entropy_cap, k + " entropy " + fmt(r.entropy.value));
    c.require(r.dual_lb.value <= r.w2sq_exact.value, k + " dual " + fmt(r.dual_lb.value) + " > W2^2");
    if (i > 0) {
      c.require(r.delta_tal.value < rows[i - 1].delta_tal.value, k + " dTal not decreasing");
      c.require(r.w2sq_exact.value > rows[i - 1].w2sq_exact.value, k + " W2^2 not increasing");
    }
  }
  if (c.ok) c.detail = "dTal " + fmt(rows.front().delta_tal.value) + " -> " + fmt(rows.back().delta_tal.value);
  return c;
}

Check ac9() {
  Check c;
  for (const Measure& m : {Measure::gaussian(0.5), Measure::counterexample(2.0, 100.0)}) {
    const FunctionalValue tal = deficits(m).delta_tal;
    std::vector<double> bounds;
    for (std::uint64_t seed : {1ull, 2ull}) {
      const Thm5Result r = thm5_bound_and_construct(m, tal, 1, 100000, seed);
      c.require(r.satisfied, m.id() + " seed " + std::to_string(seed) + " bound " + fmt(r.bound) + " > " + fmt(tal.value));
      const Thm5Result again = thm5_bound_and_construct(m, tal, 1, 100000, seed);
      c.require(again.bound == r.bound, m.id() + " not reproducible");
      bounds.push_back(r.bound);
    }
    if (c.ok) c.detail += (c.detail.empty() ? "" : "; ") + m.id() + " bounds " + fmt(bounds[0]) + ", " + fmt(bounds[1]) + " <= " + fmt(tal.value);
  }
  return c;
}

Check ac10() {
  Check c;
  std::vector<double> ts;
  for (int i = 0; i <= 100; ++i) ts.push_back(2.0 * i / 100.0);
  const auto rows = concentration_experiment(ts);
  for (const auto& r : rows) c.require(r.tail <= std::exp(-r.t * r.t / 7.0), "t=" + fmt(r.t));
  c.require(std::abs(rows[25].tail - 0.520500) <= 1e-6, "tail(0.5) = " + fmt(rows[25].tail));
  c.require(std::abs(rows[25].bound - ref::concentration_bound_05) <= 1e-6, "bound(0.5) = " + fmt(rows[25].bound));
  if (c.ok) c.detail = "tail(0.5) = " + fmt(rows[25].tail) + ", bound(0.5) = " + fmt(rows[25].bound);
  return c;
}

Check ac11() {
  Check c;
  std::vector<Measure> ms{Measure::standard(1), mix_wide(), mix_two(), mix_small(),
                          Measure::product({Measure::gaussian(0.5), Measure::gaussian(0.5)})};
  for (double s2 : kVarGrid) ms.push_back(Measure::gaussian(s2));
  double worst = 0.0;
  for (const Measure& m : ms) {
    const DriftField closed(m), quad(m, DriftField::Mode::quadrature_oracle);
    const double s = m.sigma_max();
    const auto d = static_cast<Eigen::Index>(m.dim());
    double sup = 0.0;
    for (double t : {0.0, 0.25, 0.5, 0.9, 1.0 - 1e-6})
      for (int i = -16; i <= 16; ++i) {
        const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(d, 0.5 * i * s, -0.25 * i * s);
        sup = std::max(sup, (closed.drift(t, x) - quad.drift(t, x)).cwiseAbs().maxCoeff());
      }
    c.require(sup <= 1e-8, m.id() + " sup " + fmt(sup));
    worst = std::max(worst, sup);
  }
  if (c.ok) c.detail = "sup " + fmt(worst);
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Check ac12() {
  Check c;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "follmer_lab_acceptance";
  fs::create_directories(dir);
  const std::vector<std::vector<std::string>> cmds{
      {"verify", "--measure", "mixture:w=0.9,0.1,var=0.5,0.8", "--samples", "20000", "--seed", "3"},
      {"follmer", "--measure", "mixture:w=0.5,0.5,var=0.25,4", "--samples", "5000", "--grid-points", "24", "--seed", "3"},
      {"counterexample", "--ks", "10,100"},
      {"concentration"}};
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    std::string first_json, first_csv;
    for (int rep = 0; rep < 2; ++rep) {
      const std::string stem = (dir / (cmds[i][0] + std::to_string(rep))).string();
      std::vector<std::string> args{"follmer_lab"};
      args.insert(args.end(), cmds[i].begin(), cmds[i].end());
      for (const std::string& s : {std::string("--json"), stem + ".json", std::string("--csv"), stem + ".csv"})
        args.push_back(s);
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream out, err;
      const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
      quadrature_settings() = {};
      c.require(code == cli::ok || code == cli::violation, cmds[i][0] + " exit " + std::to_string(code) + " " + err.str());
      const std::string json = slurp(stem + ".json"), csv = slurp(stem + ".csv");
      c.require(!json.empty() && !csv.empty(), cmds[i][0] + " produced no output");
      if (rep == 0) {
        first_json = json;
        first_csv = csv;
      } else {
        c.require(json == first_json, cmds[i][0] + " JSON differs");
        c.require(csv == first_csv, cmds[i][0] + " CSV differs");
      }
    }
  }
  fs::remove_all(dir);
  return c;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* title, const std::function<Check()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Check c;
    try {
      c = body();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    if (!c.ok) ++failures;
    std::printf("AC%-2d %s  %s  [%.1f s]%s%s\n", id, c.ok ? "PASS" : "FAIL", title, seconds_since(t0),
                c.detail.empty() ? "" : "  ", c.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "Gaussian identity suite", ac1);
  report(2, "scaled-Gaussian closed forms", ac2);
  report(3, "bound verification grid", ac3);
  std::vector<Simulated> sims;
  report(4, "energy identity at n = 2e5, 96 nodes", [&] {
    sims = simulate_suite();
    return ac4(sims);
  });
  report(5, "Fisher and deficit representations", [&] { return ac5(sims); });
  report(6, "process identities", [&] { return ac6(sims); });
  report(7, "comparison lemmas", ac7);
  report(8, "counterexample family", ac8);
  report(9, "mixture-construction pipeline", ac9);
  report(10, "concentration", ac10);
  report(11, "drift closed form vs quadrature oracle", ac11);
  report(12, "determinism of CLI outputs", ac12);
  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
