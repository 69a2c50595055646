#pragma once

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdsmall/bandwidth.hpp"
#include "rdsmall/core.hpp"
#include "rdsmall/diss.hpp"
#include "rdsmall/error.hpp"
#include "rdsmall/local_randomization.hpp"
#include "rdsmall/simulation.hpp"

namespace rdsmall::cli {

enum class OutputFormat { Json, Csv };

struct AnalysisConfig {
  std::string input;
  std::string x_col = "x";
  std::string y_col = "y";
  double cutoff = 0.0;
  double alpha = 0.10;
  std::vector<std::string> methods = default_methods();
  int lr_min = 5;
  std::optional<double> m_bound;
  OutputFormat format = OutputFormat::Json;
  std::uint64_t seed = 1;
  bool strict = false;
};

inline void validate(const AnalysisConfig& c) {
  if (!std::isfinite(c.cutoff)) throw Error(ErrorCode::InvalidArgument, "cutoff must be finite");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  if (c.methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods selected");
  for (const auto& m : c.methods) {
    if (!parse_method(m)) throw Error(ErrorCode::InvalidArgument, "unknown method '" + m + "'");
  }
  if (c.lr_min < 1) throw Error(ErrorCode::InvalidArgument, "LR minimum must be at least 1");
  if (c.m_bound && !(*c.m_bound > 0.0 && std::isfinite(*c.m_bound))) {
    throw Error(ErrorCode::InvalidArgument, "curvature bound must be positive");
  }
}

inline nlohmann::ordered_json to_json(const AnalysisConfig& c) {
  nlohmann::ordered_json j;
  j["input"] = c.input;
  j["x_col"] = c.x_col;
  j["y_col"] = c.y_col;
  j["cutoff"] = c.cutoff;
  j["alpha"] = c.alpha;
  j["methods"] = c.methods;
  j["lr_min"] = c.lr_min;
  j["m_bound"] = c.m_bound ? nlohmann::ordered_json(*c.m_bound) : nlohmann::ordered_json(nullptr);
  j["format"] = c.format == OutputFormat::Json ? "json" : "csv";
  j["seed"] = c.seed;
  j["strict"] = c.strict;
  return j;
}

// ---------------------------------------------------------------------------
// CSV input

struct LoadedSample {
  RDSample sample;
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads two numeric columns from a comma-separated file with a header row.
/// Rows whose x or y is missing or non-numeric are dropped and counted, or
/// rejected with their line number when `strict` is set.
inline LoadedSample read_csv(const std::string& path, const std::string& x_col, const std::string& y_col,
                             double cutoff, bool strict) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) {
    throw Error(ErrorCode::ParseError, "line 1: missing header row");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_row(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
  };
  const auto xi = column(x_col);
  const auto yi = column(y_col);
  std::vector<double> x;
  std::vector<double> y;
  LoadedSample out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++out.rows_read;
    const auto row = detail::split_row(line);
    std::optional<double> xv;
    std::optional<double> yv;
    if (row.size() > std::max(xi, yi)) {
      xv = detail::parse_number(row[xi]);
      yv = detail::parse_number(row[yi]);
    }
    if (!xv || !yv) {
      if (strict) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": missing or non-numeric value");
      }
      ++out.rows_dropped;
      continue;
    }
    x.push_back(*xv);
    y.push_back(*yv);
  }
  if (x.empty()) throw Error(ErrorCode::ParseError, "no data rows");
  out.sample = RDSample(std::move(x), std::move(y), cutoff);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

inline nlohmann::ordered_json report_header(const char* command) {
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  j["command"] = command;
  return j;
}

/// n, n below the cutoff, h_ROT and m for a data file.
inline nlohmann::ordered_json cmd_diss(const AnalysisConfig& config) {
  validate(config);
  const auto loaded = read_csv(config.input, config.x_col, config.y_col, config.cutoff, config.strict);
  const auto split = rdsmall::validate(loaded.sample);
  const auto d = diss_m(loaded.sample);
  auto j = report_header("diss");
  j["config"] = to_json(config);
  j["rows_read"] = loaded.rows_read;
  j["rows_dropped"] = loaded.rows_dropped;
  j["n"] = loaded.sample.size();
  j["n_below"] = split.below.size();
  j["h_rot"] = d.h_rot;
  j["m"] = d.m;
  return j;
}

/// Every selected method on one data file; per-method failures are rows with
/// a reason, not errors.
inline nlohmann::ordered_json cmd_analyze(const AnalysisConfig& config) {
  validate(config);
  const auto loaded = read_csv(config.input, config.x_col, config.y_col, config.cutoff, config.strict);
  const auto& sample = loaded.sample;
  MethodSettings settings;
  settings.alpha = config.alpha;
  settings.lr_rule = WindowRule::Strict;
  settings.user_bound = config.m_bound.value_or(0.0);
  settings.user_bound_for_all = config.m_bound.has_value();
  rdsmall::detail::ReplicationContext ctx(settings, sample, config.seed);
  auto j = report_header("analyze");
  j["config"] = to_json(config);
  j["rows_read"] = loaded.rows_read;
  j["rows_dropped"] = loaded.rows_dropped;
  j["n"] = sample.size();
  if (auto m = ctx.m_hat()) {
    j["m_hat"] = m->value;
  } else {
    j["m_hat"] = nullptr;
  }
  auto& rows = j["results"] = nlohmann::ordered_json::array();
  using rdsmall::detail::number_or_null;
  for (const auto& name : config.methods) {
    auto id = *parse_method(name);
    if (id.local_randomization) id.lr_min = config.lr_min;
    // A user bound turns the data-driven AK selector into its fixed-M variant.
    if (config.m_bound && id.bandwidth == BandwidthAlgorithm::AK) id.bandwidth = BandwidthAlgorithm::AKM;
    ReplicationRecord rec;
    rec.method = name;
    rdsmall::detail::run_method(ctx, settings, id, rec);
    nlohmann::ordered_json r;
    r["method"] = id.local_randomization ? id.name() : name;
    r["bandwidth_algorithm"] = id.local_randomization ? "LR" + std::to_string(id.lr_min)
                                                      : std::string(to_string(id.bandwidth));
    r["bandwidth"] = number_or_null(rec.bw);
    r["tau_hat"] = number_or_null(rec.tau_hat);
    r["se"] = number_or_null(rec.se);
    r["ci_lower"] = number_or_null(rec.ci_lo);
    r["ci_upper"] = number_or_null(rec.ci_hi);
    r["success"] = rec.success;
    r["reason"] = rec.reason;
    rows.push_back(std::move(r));
  }
  return j;
}

/// Long-format CSV of an analyze report.
inline void write_analysis_csv(std::ostream& os, const nlohmann::ordered_json& report) {
  os << "method,bandwidth_algorithm,bandwidth,tau_hat,se,ci_lower,ci_upper,success,reason\n";
  auto num = [](const nlohmann::ordered_json& v) {
    return v.is_null() ? std::string("NA") : rdsmall::detail::format_double(v.get<double>());
  };
  for (const auto& r : report.at("results")) {
    std::string reason = r.at("reason").get<std::string>();
    for (auto& ch : reason) {
      if (ch == '"') ch = '\'';
    }
    os << r.at("method").get<std::string>() << ',' << r.at("bandwidth_algorithm").get<std::string>() << ','
       << num(r.at("bandwidth")) << ',' << num(r.at("tau_hat")) << ',' << num(r.at("se")) << ','
       << num(r.at("ci_lower")) << ',' << num(r.at("ci_upper")) << ',' << (r.at("success").get<bool>() ? 1 : 0)
       << ",\"" << reason << "\"\n";
  }
}

inline CellSpec load_cell_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("cell spec: ") + e.what());
  }
  return parse_cell_spec(j);
}

struct SimulateOutputs {
  std::string result_json;
  std::string replications_csv;
};

/// Runs a cell and renders its result files. The text depends only on the
/// spec, never on the worker count.
inline SimulateOutputs cmd_simulate(const CellSpec& spec, unsigned workers) {
  const auto result = run_cell(spec, workers);
  SimulateOutputs out;
  out.result_json = to_json(result).dump(2) + "\n";
  if (spec.keep_replications) {
    std::ostringstream csv;
    write_replications_csv(csv, result);
    out.replications_csv = csv.str();
  }
  return out;
}

/// n and population h_ROT for every design and study size of the reference grid.
inline nlohmann::ordered_json table1_report() {
  auto j = report_header("table1");
  auto& rows = j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : table1()) {
    nlohmann::ordered_json r;
    r["rv"] = to_string(c.rv);
    r["m_bar"] = c.m_bar;
    r["n"] = c.n;
    r["h_rot"] = c.h_rot;
    r["m_bar_exact"] = c.m_bar_exact;
    rows.push_back(std::move(r));
  }
  return j;
}

}  // namespace rdsmall::cli
