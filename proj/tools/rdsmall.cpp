#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "rdsmall/cli.hpp"

namespace {

using rdsmall::cli::AnalysisConfig;
using rdsmall::cli::OutputFormat;

void add_data_options(CLI::App& cmd, AnalysisConfig& cfg) {
  cmd.add_option("--input", cfg.input, "CSV file with a header row")->required();
  cmd.add_option("--x-col", cfg.x_col, "running variable column")->capture_default_str();
  cmd.add_option("--y-col", cfg.y_col, "response column")->capture_default_str();
  cmd.add_option("--cutoff", cfg.cutoff, "cutoff on the running variable")->required();
  cmd.add_flag("--strict", cfg.strict, "fail on missing or non-numeric rows instead of dropping them");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw rdsmall::Error(rdsmall::ErrorCode::FileNotFound, "cannot write '" + path + "'");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regression discontinuity estimation for small studies"};
  app.set_version_flag("--version", std::string(rdsmall::kVersion));
  app.require_subcommand(1);

  AnalysisConfig cfg;
  std::string out_path;
  std::string format = "json";

  auto* diss = app.add_subcommand("diss", "n, n below the cutoff, h_ROT and m for a data file");
  add_data_options(*diss, cfg);
  diss->add_option("--out", out_path, "output file (default stdout)");

  auto* analyze = app.add_subcommand("analyze", "estimate the effect at the cutoff with every selected method");
  add_data_options(*analyze, cfg);
  analyze->add_option("--alpha", cfg.alpha, "1 - confidence level")->capture_default_str();
  analyze->add_option("--methods", cfg.methods, "methods, e.g. IK/CV AK/FLCI LR5")->delimiter(',');
  analyze->add_option("--lr-min", cfg.lr_min, "minimum observations per side in the LR window")
      ->capture_default_str();
  double m_bound = 0.0;
  auto* m_opt = analyze->add_option("--m-bound", m_bound, "bound on |mu''|; replaces the data-driven estimate");
  analyze->add_option("--seed", cfg.seed, "seed for Monte Carlo permutation p-values")->capture_default_str();
  analyze->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  analyze->add_option("--out", out_path, "output file (default stdout)");

  auto* simulate = app.add_subcommand("simulate", "run one simulation cell from a JSON spec");
  std::string spec_path;
  std::string out_prefix;
  unsigned workers = 1;
  std::uint64_t seed_override = 0;
  std::size_t reps_override = 0;
  bool table1 = false;
  simulate->add_option("spec", spec_path, "cell spec (JSON)");
  auto* seed_opt = simulate->add_option("--seed", seed_override, "override the spec's master seed");
  auto* reps_opt = simulate->add_option("--replications", reps_override, "override the spec's replication count")
                       ->check(CLI::PositiveNumber);
  simulate->add_option("--out", out_prefix, "write <prefix>.json and <prefix>.csv (default stdout, JSON only)");
  simulate->add_option("--workers", workers, "worker threads; results do not depend on this")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  simulate->add_flag("--table1", table1, "print n and population h_ROT for the reference design grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (diss->parsed()) {
      write_text(out_path, rdsmall::cli::cmd_diss(cfg).dump(2) + "\n");
    } else if (analyze->parsed()) {
      if (m_opt->count() > 0) cfg.m_bound = m_bound;
      cfg.format = format == "csv" ? OutputFormat::Csv : OutputFormat::Json;
      const auto report = rdsmall::cli::cmd_analyze(cfg);
      if (cfg.format == OutputFormat::Csv) {
        std::ostringstream csv;
        rdsmall::cli::write_analysis_csv(csv, report);
        write_text(out_path, csv.str());
      } else {
        write_text(out_path, report.dump(2) + "\n");
      }
    } else if (simulate->parsed()) {
      if (table1) {
        std::cout << rdsmall::cli::table1_report().dump(2) << "\n";
        return 0;
      }
      if (spec_path.empty()) throw rdsmall::Error(rdsmall::ErrorCode::InvalidArgument, "a cell spec path is required");
      auto spec = rdsmall::cli::load_cell_spec(spec_path);
      if (seed_opt->count() > 0) spec.seed = seed_override;
      if (reps_opt->count() > 0) spec.replications = reps_override;
      const auto outputs = rdsmall::cli::cmd_simulate(spec, workers);
      if (out_prefix.empty()) {
        std::cout << outputs.result_json;
      } else {
        write_text(out_prefix + ".json", outputs.result_json);
        if (spec.keep_replications) write_text(out_prefix + ".csv", outputs.replications_csv);
      }
    }
  } catch (const rdsmall::Error& e) {
    std::cerr << "error [" << rdsmall::to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
