#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "follmer_lab/bounds.hpp"
#include "follmer_lab/error.hpp"
#include "follmer_lab/experiments.hpp"
#include "follmer_lab/follmer.hpp"
#include "follmer_lab/functionals.hpp"

namespace flab::io {

using nlohmann::ordered_json;

/// Shortest text that reads back to the same double.
inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

/// Writes via a sibling temporary file and a rename, so readers never see a partial file.
inline void write_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::config_error, "cannot write " + tmp.string());
    out << content;
    out.flush();
    require(static_cast<bool>(out), ErrorKind::config_error, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(ErrorKind::config_error, "cannot move output into place at " + path + ": " + ec.message());
  }
}

inline ordered_json to_json(const FunctionalValue& v) {
  return {{"value", v.value}, {"error_bound", v.error_bound}, {"method", std::string(to_string(v.method))}};
}

inline ordered_json to_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline ordered_json to_json(const BoundVerdict& b) {
  ordered_json j{{"name", b.name},   {"applicable", b.applicable}, {"reason", b.reason},
                 {"value", b.value}, {"deficit", b.deficit},       {"margin", b.margin},
                 {"error", b.error}, {"satisfied", b.satisfied}};
  ordered_json in = ordered_json::object();
  for (const auto& [k, v] : b.inputs) in[k] = v;
  j["inputs"] = in;
  return j;
}

inline ordered_json to_json(const DeficitReport& r) {
  ordered_json j{{"measure_id", r.measure_id},      {"entropy", to_json(r.entropy)},
                 {"w2_squared", to_json(r.w2_squared)}, {"fisher", to_json(r.fisher)},
                 {"delta_tal", to_json(r.delta_tal)},   {"delta_ls", to_json(r.delta_ls)}};
  ordered_json bounds = ordered_json::array();
  for (const auto& b : r.bounds) bounds.push_back(to_json(b));
  j["bounds"] = bounds;
  ordered_json cmp = ordered_json::object();
  for (const auto& [k, v] : r.comparison) cmp[k] = v;
  j["comparison"] = cmp;
  return j;
}

/// Flat one-row CSV: scalar functionals, then five columns per bound.
inline std::string to_csv(const DeficitReport& r) {
  std::ostringstream head, row;
  head << "measure_id,entropy,entropy_err,w2_squared,w2_squared_err,fisher,fisher_err,delta_tal,delta_tal_err,"
          "delta_ls,delta_ls_err";
  row << '"' << r.measure_id << '"';
  for (const FunctionalValue* v : {&r.entropy, &r.w2_squared, &r.fisher, &r.delta_tal, &r.delta_ls})
    row << ',' << num(v->value) << ',' << num(v->error_bound);
  for (const auto& b : r.bounds) {
    head << ',' << b.name << "_applicable," << b.name << "_value," << b.name << "_deficit," << b.name << "_margin,"
         << b.name << "_satisfied";
    row << ',' << (b.applicable ? 1 : 0) << ',' << num(b.value) << ',' << num(b.deficit) << ',' << num(b.margin) << ','
        << (b.satisfied ? 1 : 0);
  }
  return head.str() + "\n" + row.str() + "\n";
}

inline ordered_json to_json(const TimeGrid& g) {
  return {{"points", g.size()}, {"eps_end", g.eps_end}, {"t_max", g.t_max()}, {"half_index", g.half_index}};
}

inline ordered_json to_json(const PathStats& s) {
  ordered_json nodes = ordered_json::array();
  for (const auto& n : s.nodes)
    nodes.push_back({{"t", n.t},
                     {"v_norm_sq_mean", n.v_norm_sq},
                     {"v_norm_sq_se", n.v_norm_sq_se},
                     {"gamma_mean", to_json(n.gamma_mean)},
                     {"gamma_sq_dev", to_json(n.gamma_sq_dev)}});
  return {{"grid", to_json(s.grid)}, {"samples", s.samples}, {"seed", s.seed}, {"dim", s.dim}, {"nodes", nodes}};
}

/// Columns t, v_norm_sq_mean, v_norm_sq_se, gamma_mean_ij..., gamma_sq_dev_ij... (row-major).
inline std::string to_csv(const PathStats& s) {
  std::ostringstream os;
  const auto d = static_cast<Eigen::Index>(s.dim);
  os << "t,v_norm_sq_mean,v_norm_sq_se";
  for (const char* name : {"gamma_mean", "gamma_sq_dev"})
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) os << ',' << name << '_' << i << j;
  os << '\n';
  for (const auto& n : s.nodes) {
    os << num(n.t) << ',' << num(n.v_norm_sq) << ',' << num(n.v_norm_sq_se);
    for (const Eigen::MatrixXd* m : {&n.gamma_mean, &n.gamma_sq_dev})
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) os << ',' << num((*m)(i, j));
    os << '\n';
  }
  return os.str();
}

inline ordered_json to_json(const ResidualReport& r) {
  return {{"max_residual", r.max_residual}, {"max_ratio", r.max_ratio}, {"passed", r.passed}};
}

inline ordered_json to_json(const CounterexampleRow& r) {
  return {{"k", r.k},
          {"trace", r.trace},
          {"entropy", to_json(r.entropy)},
          {"entropy_cap", r.entropy_cap},
          {"w2sq_exact", to_json(r.w2sq_exact)},
          {"w1", to_json(r.w1)},
          {"delta_tal", to_json(r.delta_tal)},
          {"dual_lb", to_json(r.dual_lb)}};
}

inline std::string to_csv(const std::vector<CounterexampleRow>& rows) {
  std::ostringstream os;
  os << "k,trace,entropy,w2sq_exact,w1,delta_tal,dual_lb\n";
  for (const auto& r : rows)
    os << num(r.k) << ',' << num(r.trace) << ',' << num(r.entropy.value) << ',' << num(r.w2sq_exact.value) << ','
       << num(r.w1.value) << ',' << num(r.delta_tal.value) << ',' << num(r.dual_lb.value) << '\n';
  return os.str();
}

inline std::string to_csv(const std::vector<ConcentrationRow>& rows) {
  std::ostringstream os;
  os << "t,tail,bound,ok\n";
  for (const auto& r : rows) os << num(r.t) << ',' << num(r.tail) << ',' << num(r.bound) << ',' << (r.ok ? 1 : 0) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// SVG line charts.

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Self-contained SVG with axes, tick labels and a legend.
inline std::string svg_line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                  const std::vector<Series>& series, bool log_x = false) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 60;
  auto tx = [&](double x) { return log_x ? std::log10(x) : x; };
  double xmin = kInf, xmax = -kInf, ymin = kInf, ymax = -kInf;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, tx(s.x[i]));
      xmax = std::max(xmax, tx(s.x[i]));
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return L + (tx(x) - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    const double sx = L + (W - L - R) * i / 4.0;
    const double sy = H - B - (H - T - B) * i / 4.0;
    os << "<text x=\"" << sx << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
       << num(std::round((log_x ? std::pow(10.0, fx) : fx) * 1e4) / 1e4) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">" << num(std::round(fy * 1e4) / 1e4)
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  os << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    os << "<polyline fill=\"none\" stroke=\"" << colors[k % 5] << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
    os << "\"/>\n";
    os << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 16 * (k + 1) << "\" fill=\"" << colors[k % 5] << "\">"
       << s.name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace flab::io
