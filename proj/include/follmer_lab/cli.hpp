#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "follmer_lab/bounds.hpp"
#include "follmer_lab/config.hpp"
#include "follmer_lab/error.hpp"
#include "follmer_lab/experiments.hpp"
#include "follmer_lab/follmer.hpp"
#include "follmer_lab/functionals.hpp"
#include "follmer_lab/io.hpp"

namespace flab::cli {

inline constexpr const char* kVersion = "follmer_lab 0.1.0";

enum ExitCode : int { ok = 0, violation = 2, input_error = 3, numerical_failure = 4 };

namespace detail {

using nlohmann::ordered_json;

inline ordered_json provenance(const config::ExperimentConfig& c) {
  ordered_json ks = ordered_json::array();
  for (double k : c.ks) ks.push_back(k);
  return {{"tool", kVersion},
          {"command", c.command},
          {"measure", c.measure},
          {"seed", c.sim.seed},
          {"samples", c.sim.samples},
          {"grid", {{"points", c.sim.grid_points}, {"eps_end", c.sim.eps_end}}},
          {"quadrature", {{"tolerance", c.quad.tolerance}, {"window_sigmas", c.quad.window_sigmas}}},
          {"verdict_sigmas", kVerdictSigmas},
          {"counterexample", {{"xi", c.xi}, {"ks", ks}}},
          {"concentration", {{"t_points", c.t_points}, {"t_max", c.t_max}}}};
}

inline void emit(const config::ExperimentConfig& c, const ordered_json& body, const std::string& csv,
                 const std::string& svg, std::ostream& out) {
  ordered_json doc = body;
  doc["provenance"] = provenance(c);
  const std::string text = doc.dump(2) + "\n";
  if (!c.out.json_path.empty())
    io::write_atomic(c.out.json_path, text);
  else
    out << text;
  if (!c.out.csv_path.empty()) io::write_atomic(c.out.csv_path, csv);
  if (!c.out.svg_path.empty()) io::write_atomic(c.out.svg_path, svg);
}

inline int cmd_verify(const config::ExperimentConfig& c, std::ostream& out, std::ostream& err) {
  require(c.out.svg_path.empty(), ErrorKind::config_error, "verify has no chart output; drop --svg");
  const Measure m = config::parse_measure(c.measure);
  VerifyOptions opt;
  opt.samples = c.sim.samples;
  opt.seed = c.sim.seed;
  opt.force_bound = c.force_bound;
  opt.fake_deficit = c.fake_deficit;
  const DeficitReport r = verify(m, opt);
  ordered_json body{{"report", io::to_json(r)}, {"all_satisfied", all_satisfied(r)}};
  emit(c, body, io::to_csv(r), "", out);
  for (const auto& b : r.bounds)
    if (b.applicable && !b.satisfied)
      err << "violated: " << b.name << " bound " << b.value << " exceeds deficit " << b.deficit << "\n";
  return all_satisfied(r) ? ok : violation;
}

inline int cmd_follmer(const config::ExperimentConfig& c, std::ostream& out) {
  const Measure m = config::parse_measure(c.measure);
  const TimeGrid grid = make_time_grid(c.sim.grid_points, c.sim.eps_end);
  const PathStats st = path_stats(m, grid, c.sim.samples, c.sim.seed);
  const auto [lhs, rhs] = energy_identity(m, st);
  const DeficitRepresentations reps = deficit_representations(m, st);
  const ResidualReport dg = dgamma_check(m, st);
  const ResidualReport ibp = intbyparts_check(m, st);

  PoincareEstimate cp{0.0, kInf, PoincareEstimate::Method::closed_form};
  try {
    cp = poincare_constant(m);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::unsupported) throw;
  }
  ordered_json comparison;
  bool comparison_ok = true;
  try {
    const ComparisonReport cr = comparison_bounds(m, st, cp);
    comparison_ok = cr.violations.empty();
    ordered_json viol = ordered_json::array();
    for (const auto& v : cr.violations)
      viol.push_back({{"lemma", v.lemma}, {"t", v.t}, {"value", v.value}, {"bound", v.bound}, {"excess_se", v.excess}});
    comparison = {{"c_mu", cr.c_mu},
                  {"dimension_applicable", cr.dimension_applicable},
                  {"poincare_applicable", cr.poincare_applicable},
                  {"reason", cr.reason},
                  {"checks", cr.checks},
                  {"violations", viol}};
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::precondition_unmet) throw;
    comparison = {{"applicable", false}, {"reason", e.what()}};
  }

  const double energy_gap = std::abs(lhs.value - rhs.value);
  const bool energy_ok = energy_gap <= kVerdictSigmas * (lhs.error_bound + rhs.error_bound);
  ordered_json identities{
      {"energy", {{"lhs", io::to_json(lhs)}, {"rhs", io::to_json(rhs)}, {"passed", energy_ok}}},
      {"representations",
       {{"rep_entropy", io::to_json(reps.rep_entropy)},
        {"rep_wasserstein_ub", io::to_json(reps.rep_wasserstein_ub)},
        {"rep_fisher", io::to_json(reps.rep_fisher)},
        {"rep_delta_ls", io::to_json(reps.rep_delta_ls)},
        {"rep_delta_tal_lb", io::to_json(reps.rep_delta_tal_lb)},
        {"truncation_lb", io::to_json(reps.truncation_lb)},
        {"halving_lb", io::to_json(reps.halving_lb)},
        {"t0", reps.t0}}},
      {"dgamma", io::to_json(dg)},
      {"intbyparts", io::to_json(ibp)},
      {"comparison", comparison}};
  ordered_json body{{"path_stats", io::to_json(st)}, {"identities", identities}};

  io::Series v{"E|v_t|^2", {}, {}};
  for (const auto& n : st.nodes) {
    v.x.push_back(n.t);
    v.y.push_back(n.v_norm_sq);
  }
  const std::string svg = io::svg_line_chart("Foellmer drift energy", "t", "E|v_t|^2", {v});
  emit(c, body, io::to_csv(st), svg, out);
  const bool all_ok = energy_ok && dg.passed && ibp.passed && comparison_ok;
  return all_ok ? ok : violation;
}

inline int cmd_counterexample(const config::ExperimentConfig& c, std::ostream& out) {
  const auto rows = counterexample_table(c.xi, c.ks);
  ordered_json arr = ordered_json::array();
  bool sandwich = true;
  for (const auto& r : rows) {
    arr.push_back(io::to_json(r));
    const double err = r.dual_lb.error_bound + r.w2sq_exact.error_bound + r.entropy.error_bound;
    sandwich = sandwich && r.dual_lb.value <= r.w2sq_exact.value + kVerdictSigmas * err &&
               r.w2sq_exact.value <= 2.0 * r.entropy.value + kVerdictSigmas * err;
  }
  io::Series tal{"delta_Tal", {}, {}}, w2{"W2^2", {}, {}};
  for (const auto& r : rows) {
    tal.x.push_back(r.k);
    tal.y.push_back(r.delta_tal.value);
    w2.x.push_back(r.k);
    w2.y.push_back(r.w2sq_exact.value);
  }
  const std::string svg = io::svg_line_chart("Counterexample family", "k", "value", {tal, w2}, true);
  emit(c, {{"xi", c.xi}, {"rows", arr}, {"sandwich_ok", sandwich}}, io::to_csv(rows), svg, out);
  return sandwich ? ok : violation;
}

inline int cmd_concentration(const config::ExperimentConfig& c, std::ostream& out) {
  std::vector<double> ts(c.t_points);
  for (std::size_t i = 0; i < c.t_points; ++i) ts[i] = c.t_max * static_cast<double>(i) / static_cast<double>(c.t_points - 1);
  const auto rows = concentration_experiment(ts);
  ordered_json arr = ordered_json::array();
  bool all_ok = true;
  io::Series tail{"tail", {}, {}}, bound{"bound", {}, {}};
  for (const auto& r : rows) {
    arr.push_back({{"t", r.t}, {"tail", r.tail}, {"bound", r.bound}, {"ok", r.ok}});
    all_ok = all_ok && r.ok;
    tail.x.push_back(r.t);
    tail.y.push_back(r.tail);
    bound.x.push_back(r.t);
    bound.y.push_back(r.bound);
  }
  const std::string svg = io::svg_line_chart("Concentration of 1 - G^2", "t", "probability", {tail, bound});
  emit(c, {{"rows", arr}, {"all_ok", all_ok}}, io::to_csv(rows), svg, out);
  return all_ok ? ok : violation;
}

}  // namespace detail

/// Parses argv, runs one subcommand and maps failures to exit codes:
/// 0 all verdicts hold, 2 a verdict failed, 3 bad input, 4 numerical failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Numerical laboratory for Talagrand-deficit stability bounds via the Foellmer process"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, measure, csv, json, svg, force_bound, ks;
  std::optional<std::size_t> samples, grid_points, t_points;
  std::optional<std::uint64_t> seed;
  std::optional<double> eps_end, xi, fake_deficit, t_max, tolerance, window;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file (key = value, [section] headers)");
    sub->add_option("--measure", measure, "Measure spec, e.g. mixture:w=0.5,0.5,var=0.25,4");
    sub->add_option("--samples", samples, "Monte Carlo sample count");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--grid-points", grid_points, "Time-grid node count");
    sub->add_option("--eps-end", eps_end, "Terminal gap 1 - t_max");
    sub->add_option("--tolerance", tolerance, "Relative quadrature tolerance");
    sub->add_option("--window-sigmas", window, "Quadrature half-window in standard deviations");
    sub->add_option("--csv", csv, "CSV output path");
    sub->add_option("--json", json, "JSON output path (default: standard output)");
    sub->add_option("--svg", svg, "SVG chart output path");
  };
  CLI::App* verify_cmd = app.add_subcommand("verify", "Deficits and every stability bound for one measure");
  CLI::App* follmer_cmd = app.add_subcommand("follmer", "Path statistics and process identities");
  CLI::App* counter_cmd = app.add_subcommand("counterexample", "Table for the two-component counterexample family");
  CLI::App* conc_cmd = app.add_subcommand("concentration", "Tail of 1 - G^2 against the concentration bound");
  for (CLI::App* s : {verify_cmd, follmer_cmd, counter_cmd, conc_cmd}) common(s);
  verify_cmd->add_option("--force-bound", force_bound, "Test hook: bound whose deficit is replaced");
  verify_cmd->add_option("--fake-deficit", fake_deficit, "Test hook: replacement deficit value");
  counter_cmd->add_option("--xi", xi, "Limit trace xi > 1");
  counter_cmd->add_option("--ks", ks, "Comma-separated k values");
  conc_cmd->add_option("--t-points", t_points, "Number of t values");
  conc_cmd->add_option("--t-max", t_max, "Largest t");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : input_error;
  }

  try {
    config::ExperimentConfig cfg;
    if (!config_path.empty()) config::apply(cfg, config::read_config_file(config_path));
    cfg.command = app.get_subcommands().front()->get_name();
    if (!measure.empty()) cfg.measure = measure;
    if (samples) cfg.sim.samples = *samples;
    if (seed) cfg.sim.seed = *seed;
    if (grid_points) cfg.sim.grid_points = *grid_points;
    if (eps_end) cfg.sim.eps_end = *eps_end;
    if (tolerance) cfg.quad.tolerance = *tolerance;
    if (window) cfg.quad.window_sigmas = *window;
    if (!csv.empty()) cfg.out.csv_path = csv;
    if (!json.empty()) cfg.out.json_path = json;
    if (!svg.empty()) cfg.out.svg_path = svg;
    if (xi) cfg.xi = *xi;
    if (!ks.empty()) cfg.ks = config::parse_list(ks, "--ks");
    if (t_points) cfg.t_points = *t_points;
    if (t_max) cfg.t_max = *t_max;
    if (!force_bound.empty()) cfg.force_bound = force_bound;
    if (fake_deficit) cfg.fake_deficit = *fake_deficit;
    require(!cfg.force_bound || fake_deficit.has_value(), ErrorKind::config_error, "--force-bound needs --fake-deficit");
    cfg.validate();
    quadrature_settings() = {cfg.quad.tolerance, cfg.quad.window_sigmas};

    if (cfg.command == "verify") return detail::cmd_verify(cfg, out, err);
    if (cfg.command == "follmer") return detail::cmd_follmer(cfg, out);
    if (cfg.command == "counterexample") return detail::cmd_counterexample(cfg, out);
    return detail::cmd_concentration(cfg, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.is_numerical() ? numerical_failure : input_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return numerical_failure;
  }
}

}  // namespace flab::cli
