#pragma once

// Measure-spec grammar and experiment configuration.
//
//   spec    := gaussian | mixture | product
//   gaussian:= "gaussian:var=" V ("," V)*          diagonal covariance
//   mixture := "mixture:w=" W ("," W)* ",var=" V ("," V)*
//   product := "product:(" spec (";" spec)* ")"
//
// Config files hold "key = value" lines, optionally grouped under [section]
// headers, which prefix keys as "section.key". '#' starts a comment.

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "follmer_lab/error.hpp"
#include "follmer_lab/measures.hpp"

namespace flab::config {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double parse_number(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw Error(ErrorKind::config_error, "not a number for " + what + ": '" + text + "'");
  }
  require(used == t.size() && std::isfinite(v), ErrorKind::config_error, "not a number for " + what + ": '" + text + "'");
  return v;
}

inline std::vector<std::string> split_top_level(const std::string& s, char sep) {
  std::vector<std::string> parts;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    require(depth >= 0, ErrorKind::config_error, "unbalanced parentheses in measure spec");
    if (c == sep && depth == 0) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  require(depth == 0, ErrorKind::config_error, "unbalanced parentheses in measure spec");
  parts.push_back(cur);
  return parts;
}

/// "w=a,b,var=c,d" -> {"w": [a, b], "var": [c, d]}.
inline std::map<std::string, std::vector<double>> parse_lists(const std::string& body, const std::string& spec) {
  std::map<std::string, std::vector<double>> out;
  std::string key;
  for (const std::string& raw : split_top_level(body, ',')) {
    const std::string tok = trim(raw);
    const auto eq = tok.find('=');
    std::string value = tok;
    if (eq != std::string::npos) {
      key = trim(tok.substr(0, eq));
      value = tok.substr(eq + 1);
      require(!out.count(key), ErrorKind::config_error, "repeated key '" + key + "' in " + spec);
    }
    require(!key.empty(), ErrorKind::config_error, "value without a key in " + spec);
    out[key].push_back(parse_number(value, spec));
  }
  return out;
}

}  // namespace detail

inline Measure parse_measure(const std::string& text) {
  const std::string spec = detail::trim(text);
  const auto colon = spec.find(':');
  require(colon != std::string::npos, ErrorKind::config_error, "measure spec needs a kind prefix: '" + spec + "'");
  const std::string kind = spec.substr(0, colon);
  const std::string body = spec.substr(colon + 1);
  if (kind == "product") {
    require(body.size() >= 2 && body.front() == '(' && body.back() == ')', ErrorKind::config_error,
            "product spec must be product:(spec;spec)");
    std::vector<Measure> factors;
    for (const auto& part : detail::split_top_level(body.substr(1, body.size() - 2), ';'))
      factors.push_back(parse_measure(part));
    return Measure::product(std::move(factors));
  }
  const auto lists = detail::parse_lists(body, spec);
  auto get = [&](const std::string& key) -> const std::vector<double>& {
    auto it = lists.find(key);
    require(it != lists.end(), ErrorKind::config_error, "missing '" + key + "=' in " + spec);
    return it->second;
  };
  if (kind == "gaussian") {
    require(lists.size() == 1, ErrorKind::config_error, "gaussian spec takes only var=");
    const auto& var = get("var");
    const auto d = static_cast<Eigen::Index>(var.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) cov(i, i) = var[static_cast<std::size_t>(i)];
    return Measure::gaussian(Eigen::VectorXd::Zero(d), cov);
  }
  if (kind == "mixture") {
    require(lists.size() == 2, ErrorKind::config_error, "mixture spec takes w= and var=");
    const auto& w = get("w");
    const auto& var = get("var");
    require(w.size() == var.size(), ErrorKind::config_error, "mixture needs as many weights as variances");
    return Measure::mixture(w, var);
  }
  throw Error(ErrorKind::config_error, "unknown measure kind '" + kind + "'");
}

struct ExperimentConfig {
  std::string command;
  std::string measure = "gaussian:var=0.5";
  struct {
    std::size_t samples = 200000;
    std::uint64_t seed = 1;
    std::size_t grid_points = 96;
    double eps_end = 1e-4;
  } sim;
  struct {
    double tolerance = 1e-13;
    double window_sigmas = 12.0;
  } quad;
  struct {
    std::string csv_path, json_path, svg_path;
  } out;
  // counterexample
  double xi = 2.0;
  std::vector<double> ks{10, 100, 1000, 10000, 100000};
  // concentration
  std::size_t t_points = 101;
  double t_max = 2.0;
  // verify test hooks
  std::optional<std::string> force_bound;
  double fake_deficit = 0.0;

  void validate() const {
    require(sim.samples >= 1000, ErrorKind::config_error, "samples must be at least 1000");
    require(sim.eps_end >= 1e-6 && sim.eps_end <= 1e-2, ErrorKind::config_error, "eps_end must lie in [1e-6, 1e-2]");
    require(sim.grid_points >= 8, ErrorKind::config_error, "grid_points must be at least 8");
    require(quad.tolerance > 0.0 && quad.tolerance < 1e-3, ErrorKind::config_error, "quadrature tolerance out of range");
    require(quad.window_sigmas >= 6.0, ErrorKind::config_error, "window_sigmas must be at least 6");
    require(xi > 1.0, ErrorKind::config_error, "xi must exceed 1");
    for (double k : ks) require(k > 1.0, ErrorKind::config_error, "every k must exceed 1");
    require(t_points >= 2 && t_max > 0.0, ErrorKind::config_error, "concentration grid needs >= 2 points and t_max > 0");
  }
};

inline std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& part : detail::split_top_level(text, ',')) out.push_back(detail::parse_number(part, what));
  return out;
}

/// Flattened "section.key" -> value map of a config file.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::config_error, "cannot read config file " + path);
  std::map<std::string, std::string> kv;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', ErrorKind::config_error, path + ":" + std::to_string(lineno) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::config_error, path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    kv[section.empty() ? key : section + "." + key] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

/// Applies config-file keys onto cfg; unknown keys are rejected.
inline void apply(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    auto count = [&] { return static_cast<std::size_t>(detail::parse_number(value, key)); };
    if (key == "command") cfg.command = value;
    else if (key == "measure") cfg.measure = value;
    else if (key == "sim.samples") cfg.sim.samples = count();
    else if (key == "sim.seed") cfg.sim.seed = std::stoull(value);
    else if (key == "sim.grid_points") cfg.sim.grid_points = count();
    else if (key == "sim.eps_end") cfg.sim.eps_end = detail::parse_number(value, key);
    else if (key == "quad.tolerance") cfg.quad.tolerance = detail::parse_number(value, key);
    else if (key == "quad.window_sigmas") cfg.quad.window_sigmas = detail::parse_number(value, key);
    else if (key == "out.csv") cfg.out.csv_path = value;
    else if (key == "out.json") cfg.out.json_path = value;
    else if (key == "out.svg") cfg.out.svg_path = value;
    else if (key == "counterexample.xi") cfg.xi = detail::parse_number(value, key);
    else if (key == "counterexample.ks") cfg.ks = parse_list(value, key);
    else if (key == "concentration.t_points") cfg.t_points = count();
    else if (key == "concentration.t_max") cfg.t_max = detail::parse_number(value, key);
    else throw Error(ErrorKind::config_error, "unknown config key '" + key + "'");
  }
}

}  // namespace flab::config
