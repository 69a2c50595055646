// Acceptance checks: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--known-red 5,...] [--workers N] [--verbose]
//
// The exit status is 0 when the set of failing criteria equals --known-red
// (empty by default), so an expected red stays visible without hiding a new one.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "rdsmall/cli.hpp"
#include "rdsmall/rdsmall.hpp"

using namespace rdsmall;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Report {
 public:
  explicit Report(bool verbose) : verbose_(verbose) {}

  void check(bool ok, const std::string& what) {
    out_.pass = out_.pass && ok;
    if (!ok || verbose_) notes_.push_back((ok ? "ok: " : "MISS: ") + what);
    else notes_.push_back(what);
  }
  void note(const std::string& what) { notes_.push_back(what); }

  Outcome finish() {
    std::string d;
    for (std::size_t i = 0; i < notes_.size(); ++i) d += (i ? "; " : "") + notes_[i];
    out_.detail = d;
    return out_;
  }

 private:
  bool verbose_;
  Outcome out_;
  std::vector<std::string> notes_;
};

std::string fmt(const char* f, auto... v) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Lower binomial tolerance for a success-rate threshold at R replications.
double binomial_floor(double p, double r) { return p - 3.0 * std::sqrt(p * (1.0 - p) / r); }

// ---------------------------------------------------------------------------
// 1. Table 1

Outcome table1_check(bool verbose) {
  struct Row {
    RunningVariable rv;
    std::array<std::size_t, 5> n;
    std::array<double, 5> h;
  };
  const std::array<Row, 3> table{{
      {RunningVariable::RV1, {40, 101, 140, 256, 354}, {0.124, 0.103, 0.097, 0.086, 0.080}},
      {RunningVariable::RV2, {56, 140, 194, 354, 490}, {0.072, 0.060, 0.056, 0.050, 0.046}},
      {RunningVariable::RV3, {140, 354, 494, 905, 1254}, {0.034, 0.028, 0.026, 0.023, 0.022}},
  }};
  const std::array<int, 5> m_bars{10, 21, 27, 44, 57};
  Report rep(verbose);
  const auto t0 = std::chrono::steady_clock::now();
  const auto cells = table1();
  const double elapsed = seconds_since(t0);
  int n_ok = 0;
  int h_ok = 0;
  for (const auto& row : table) {
    for (std::size_t k = 0; k < 5; ++k) {
      const auto it = std::find_if(cells.begin(), cells.end(),
                                   [&](const Table1Cell& c) { return c.rv == row.rv && c.m_bar == m_bars[k]; });
      const bool n_match = it != cells.end() && it->n == row.n[k];
      const double rounded = it != cells.end() ? std::round(it->h_rot * 1000.0) / 1000.0 : NAN;
      const bool h_match = std::abs(rounded - row.h[k]) <= 0.0005;
      n_ok += n_match;
      h_ok += h_match;
      if (!n_match || !h_match) {
        rep.check(false, fmt("%s m=%d: n %zu vs %zu, h %.3f vs %.3f", std::string(to_string(row.rv)).c_str(),
                             m_bars[k], it != cells.end() ? it->n : 0, row.n[k], rounded, row.h[k]));
      }
    }
  }
  rep.check(n_ok == 15, fmt("n exact %d/15", n_ok));
  rep.check(h_ok == 15, fmt("h_ROT within 0.0005 %d/15", h_ok));
  rep.check(elapsed < 1.0, fmt("%.3f s", elapsed));
  return rep.finish();
}

// ---------------------------------------------------------------------------
// 2. Mean functions

Outcome mean_function_check(bool verbose) {
  Report rep(verbose);
  for (auto tag : {MeanTag::Mu1, MeanTag::Mu2, MeanTag::Mu3}) {
    // Limits from either side: the pieces are polynomials, so x -> 0- is the
    // left piece evaluated at -0.0 and x -> 0+ is eval_mu at 0.
    const double left = eval_mu(tag, -std::numeric_limits<double>::denorm_min());
    const double jump = eval_mu(tag, 0.0) - left;
    rep.check(std::abs(jump - 0.1) <= 1e-12, fmt("%s jump %.15f", std::string(to_string(tag)).c_str(), jump));
  }
  const double m1 = max_abs_second_derivative(MeanTag::Mu1);
  const double m2 = max_abs_second_derivative(MeanTag::Mu2);
  const double m3 = max_abs_second_derivative(MeanTag::Mu3);
  rep.check(std::abs(m1 - 2.0) <= 1e-12, fmt("max|mu1''| %.4f (reference 2)", m1));
  rep.check(std::abs(m2 - 233.26) <= 0.01, fmt("max|mu2''| %.4f (reference 233.26)", m2));
  rep.check(std::abs(m3 - 9.8) <= 1e-12,
            fmt("max|mu3''| %.4f analytic; reference bound %.1f differs", m3, curvature_bound_paper(MeanTag::Mu3)));
  // Central differences with step 1e-4 at every point of a 1e-4 grid, skipping
  // two steps around each knot; relative error with a floor of 1 where mu'' ~ 0.
  const double step = 1e-4;
  const std::vector<double> knots{-0.2, 0.0, 0.2, 0.4, 0.7};
  double worst = 0.0;
  std::size_t points = 0;
  for (auto tag : {MeanTag::Mu1, MeanTag::Mu2, MeanTag::Mu3}) {
    for (int i = -9998; i <= 9998; ++i) {
      const double x = i * step;
      bool skip = false;
      for (double k : knots) skip = skip || std::abs(x - k) < 2.5 * step;
      if (skip) continue;
      const double fd = (eval_mu(tag, x + step) - 2.0 * eval_mu(tag, x) + eval_mu(tag, x - step)) / (step * step);
      const double exact = mu_second_derivative(tag, x);
      worst = std::max(worst, std::abs(fd - exact) / std::max(1.0, std::abs(exact)));
      ++points;
    }
  }
  rep.check(worst <= 1e-4, fmt("finite differences: worst rel. error %.2e over %zu points", worst, points));
  return rep.finish();
}

// ---------------------------------------------------------------------------
// 3-5. The RV2 mu2 sweep

constexpr std::size_t kReps = 2000;
constexpr std::uint64_t kSweepSeed = 7;
const std::vector<std::string> kReferenceMethods{"IK/CV", "IK/RBC", "IK/FLCI", "AK/CV", "AK/RBC", "AK/FLCI", "LR5"};
const std::vector<std::string> kAllMethods{"IK/CV",  "IK/RBC",  "IK/FLCI",  "AK/CV", "AK/RBC", "AK/FLCI",
                                           "AKM/CV", "AKM/RBC", "AKM/FLCI", "LR5"};

struct SweepCell {
  int m_bar = 0;
  SimCellResult all;                  // every method; success rates
  std::vector<MethodSummary> reference;  // coverage and widths on the reference method set
  std::size_t reference_common = 0;
  double seconds = 0.0;

  const MethodSummary& p(const std::string& name) const {
    for (const auto& m : reference) {
      if (m.method == name) return m;
    }
    throw std::runtime_error("no method " + name);
  }
};

std::vector<SweepCell> run_sweep(unsigned workers) {
  std::vector<SweepCell> out;
  for (int m_bar : {10, 21, 27, 44, 57}) {
    CellSpec spec;
    spec.rv = RunningVariable::RV2;
    spec.mu = MeanTag::Mu2;
    spec.m_bar = m_bar;
    spec.replications = kReps;
    spec.seed = kSweepSeed;
    spec.methods = kAllMethods;
    SweepCell cell;
    cell.m_bar = m_bar;
    const auto t0 = std::chrono::steady_clock::now();
    cell.all = run_cell(spec, workers);
    cell.seconds = seconds_since(t0);
    std::vector<std::vector<ReplicationRecord>> subset;
    subset.reserve(cell.all.replications.size());
    for (const auto& r : cell.all.replications) {
      std::vector<ReplicationRecord> keep;
      for (const auto& rec : r) {
        if (std::find(kReferenceMethods.begin(), kReferenceMethods.end(), rec.method) != kReferenceMethods.end()) {
          keep.push_back(rec);
        }
      }
      subset.push_back(std::move(keep));
    }
    cell.reference = summarize(subset, kReferenceMethods, kTrueTau, &cell.reference_common);
    std::fprintf(stderr, "  sweep m=%d n=%zu: %.1f s, common %zu/%zu\n", m_bar, cell.all.n, cell.seconds,
                 cell.reference_common, kReps);
    out.push_back(std::move(cell));
  }
  return out;
}

Outcome success_rate_check(const std::vector<SweepCell>& sweep, bool verbose) {
  Report rep(verbose);
  double total = 0.0;
  for (const auto& cell : sweep) {
    total += cell.seconds;
    if (cell.m_bar == 10) {
      const double floor = binomial_floor(0.96, kReps);
      for (const char* m : {"IK/CV", "IK/RBC"}) {
        const double r = cell.all.method(m).interval_success_rate;
        rep.check(r >= floor, fmt("m=10 %s %.4f (>= %.4f)", m, r, floor));
      }
    }
    if (cell.m_bar >= 27) {
      const double floor = binomial_floor(0.99, kReps);
      double worst = 1.0;
      std::string worst_name;
      for (const auto& m : cell.all.methods) {
        if (m.method.rfind("LR", 0) == 0) continue;
        if (m.interval_success_rate < worst) {
          worst = m.interval_success_rate;
          worst_name = m.method;
        }
      }
      rep.check(worst >= floor, fmt("m=%d lowest continuity %s %.4f (>= %.4f)", cell.m_bar, worst_name.c_str(),
                                    worst, floor));
    }
    const double lr = cell.all.method("LR5").interval_success_rate;
    rep.check(lr == 1.0, fmt("m=%d LR5 %.4f", cell.m_bar, lr));
  }
  rep.check(total < 600.0, fmt("sweep %.0f s", total));
  return rep.finish();
}

Outcome bandwidth_order_check(const std::vector<SweepCell>& sweep, bool verbose) {
  Report rep(verbose);
  for (const auto& cell : sweep) {
    const double ik = cell.all.method("IK/CV").median_bw;
    const double ak = cell.all.method("AK/CV").median_bw;
    const double lr = cell.all.method("LR5").median_bw;
    rep.check(ik > ak, fmt("m=%d IK %.4f > AK %.4f", cell.m_bar, ik, ak));
    if (cell.m_bar == 10) rep.check(lr > ak, fmt("m=10 LR5 %.4f > AK %.4f", lr, ak));
    if (cell.m_bar == 57) rep.check(lr < ik, fmt("m=57 LR5 %.4f < IK %.4f", lr, ik));
  }
  return rep.finish();
}

Outcome operating_check(const std::vector<SweepCell>& sweep, bool verbose) {
  Report rep(verbose);
  const auto& c27 = *std::find_if(sweep.begin(), sweep.end(), [](const SweepCell& c) { return c.m_bar == 27; });
  const auto& c10 = *std::find_if(sweep.begin(), sweep.end(), [](const SweepCell& c) { return c.m_bar == 10; });
  const auto& ikcv = c27.p("IK/CV");
  const auto& akflci = c27.p("AK/FLCI");
  rep.check(ikcv.coverage < 0.95, fmt("m=27 IK/CV coverage %.4f < 0.95", ikcv.coverage));
  rep.check(akflci.coverage >= 0.93, fmt("AK/FLCI coverage %.4f >= 0.93", akflci.coverage));
  rep.check(akflci.median_width > ikcv.median_width,
            fmt("AK/FLCI width %.4f > IK/CV %.4f", akflci.median_width, ikcv.median_width));
  for (const char* bw : {"IK", "AK"}) {
    const double rbc = c27.p(std::string(bw) + "/RBC").median_width;
    const double cv = c27.p(std::string(bw) + "/CV").median_width;
    rep.check(rbc > cv, fmt("%s RBC width %.4f > CV %.4f", bw, rbc, cv));
  }
  const double akm_rbc = c27.all.method("AKM/RBC").median_width;
  const double akm_cv = c27.all.method("AKM/CV").median_width;
  rep.check(akm_rbc > akm_cv, fmt("AKM RBC width %.4f > CV %.4f", akm_rbc, akm_cv));
  const auto& lr = c10.p("LR5");
  rep.check(std::abs(lr.coverage - 0.53) <= 0.07, fmt("m=10 LR5 coverage %.4f (0.53 +- 0.07)", lr.coverage));
  rep.check(std::abs(lr.median_width - 0.33) <= 0.05, fmt("LR5 median width %.4f (0.33 +- 0.05)", lr.median_width));
  const auto& lr_all = c10.all.method("LR5");
  rep.note(fmt("all-replication LR5 coverage %.4f, width %.4f", lr_all.coverage, lr_all.median_width));
  return rep.finish();
}

// ---------------------------------------------------------------------------
// 6. Large-sample consistency

Outcome consistency_check(unsigned workers, bool verbose) {
  CellSpec spec;
  spec.rv = RunningVariable::RV1;
  spec.mu = MeanTag::Mu1;
  spec.n = 20000;
  spec.replications = 200;
  spec.seed = 11;
  spec.methods = {"IK/CV"};
  const auto r = run_cell(spec, workers);
  const auto& m = r.method("IK/CV");
  Report rep(verbose);
  rep.check(std::abs(m.bias) <= 0.005, fmt("|bias| %.5f <= 0.005", std::abs(m.bias)));
  const double mcse = std::sqrt(0.95 * 0.05 / 200.0);
  rep.check(std::abs(m.coverage - 0.95) <= 3.0 * mcse, fmt("coverage %.3f within %.4f of 0.95", m.coverage, 3 * mcse));
  return rep.finish();
}

// ---------------------------------------------------------------------------
// 7. Oracle equivalences

double brute_p(const WindowData& d, double tau0) {
  std::vector<double> y0(d.treated);
  for (auto& v : y0) v -= tau0;
  y0.insert(y0.end(), d.control.begin(), d.control.end());
  const std::size_t nw = y0.size();
  const std::size_t n1 = d.treated.size();
  auto stat = [&](std::uint32_t mask) {
    double s1 = 0, s0 = 0;
    for (std::size_t i = 0; i < nw; ++i) ((mask >> i) & 1u ? s1 : s0) += y0[i];
    return s1 / static_cast<double>(n1) - s0 / static_cast<double>(nw - n1);
  };
  const double obs = std::abs(stat((1u << n1) - 1u));
  std::size_t total = 0;
  std::size_t extreme = 0;
  for (std::uint32_t mask = 0; mask < (1u << nw); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != n1) continue;
    ++total;
    extreme += std::abs(stat(mask)) >= obs - 1e-9 ? 1 : 0;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

Outcome oracle_check(bool verbose) {
  Report rep(verbose);
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> size(4, 8);

  // Exact against Monte Carlo on 100 random windows under the null. The MC
  // p-value counts the observed assignment among its 1000, hence the 1/1000.
  int agree = 0;
  int exact_ok = 0;
  double worst_excess = 0.0;
  for (int w = 0; w < 100; ++w) {
    WindowData d;
    const int n0 = size(gen);
    const int n1 = size(gen);
    for (int i = 0; i < n0; ++i) d.control.push_back(z(gen));
    for (int i = 0; i < n1; ++i) d.treated.push_back(z(gen));
    const PermutationDistribution exact(d, {});
    PermutationConfig mc_cfg;
    mc_cfg.max_exact = 0;
    mc_cfg.seed = detail::derive_seed(99, 1, static_cast<std::uint64_t>(w));
    const PermutationDistribution mc(d, mc_cfg);
    const double p = exact.p_value(0.0);
    const double q = mc.p_value(0.0);
    const double tol = 3.0 * std::sqrt(p * (1.0 - p) / 999.0) + 1.0 / 1000.0;
    agree += std::abs(q - p) <= tol ? 1 : 0;
    worst_excess = std::max(worst_excess, std::abs(q - p) - tol);
    exact_ok += std::abs(p - brute_p(d, 0.0)) <= 1e-15 ? 1 : 0;
  }
  rep.check(exact_ok == 100, fmt("exact = enumeration %d/100", exact_ok));
  rep.check(agree == 100, fmt("MC within 3 sd + 1/1000 of exact %d/100 (worst excess %.4f)", agree,
                              std::max(0.0, worst_excess)));

  // Local polynomial fitted values against dense normal equations.
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_fit = 0.0;
  double worst_se = 0.0;
  for (int rep_i = 0; rep_i < 100; ++rep_i) {
    const std::size_t n = 30 + static_cast<std::size_t>(rep_i);
    std::vector<double> x(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = u(gen);
      y[i] = std::cos(2.0 * x[i]) + 0.3 * z(gen);
    }
    const RDSample s(x, y, 0.0);
    const double h = 0.5 + 0.5 * u(gen) * u(gen);
    const int degree = 1 + rep_i % 2;
    for (auto side : {Side::Below, Side::Above}) {
      LinearFit fit;
      try {
        fit = local_poly_fit(s, side, degree, h);
      } catch (const Error&) {
        continue;
      }
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(degree + 1, degree + 1);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(degree + 1);
      for (std::size_t i = 0; i < n; ++i) {
        if ((x[i] >= 0.0) != (side == Side::Above)) continue;
        const double k = kernel_weight(Kernel::Triangular, x[i] / h);
        Eigen::VectorXd r(degree + 1);
        for (int j = 0; j <= degree; ++j) r(j) = std::pow(x[i], j);
        a += k * r * r.transpose();
        b += k * y[i] * r;
      }
      const double ref = a.ldlt().solve(b)(0);
      worst_fit = std::max(worst_fit, std::abs(fit.fitted_at_cutoff - ref) / std::max(1.0, std::abs(ref)));
      std::vector<double> s2(n);
      for (auto& v : s2) v = 0.01 + std::abs(z(gen));
      long double brute = 0.0L;
      for (std::size_t i = 0; i < n; ++i) brute += static_cast<long double>(fit.weights[i]) * fit.weights[i] * s2[i];
      const double se = se_of_linear_functional(fit.weights, s2);
      worst_se = std::max(worst_se, std::abs(se - std::sqrt(static_cast<double>(brute))) / se);
    }
  }
  rep.check(worst_fit <= 1e-9, fmt("fitted values worst rel. error %.1e", worst_fit));
  rep.check(worst_se <= 1e-12, fmt("SE worst rel. error %.1e", worst_se));
  return rep.finish();
}

// ---------------------------------------------------------------------------
// 8. Determinism

Outcome determinism_check(bool verbose) {
  CellSpec spec;
  spec.rv = RunningVariable::RV3;
  spec.mu = MeanTag::Mu3;
  spec.m_bar = 21;
  spec.replications = 200;
  spec.seed = 4242;
  spec.methods = kAllMethods;
  const auto a = cli::cmd_simulate(spec, 1);
  const auto b = cli::cmd_simulate(spec, 4);
  const auto c = cli::cmd_simulate(spec, 3);
  Report rep(verbose);
  rep.check(a.result_json == b.result_json && a.result_json == c.result_json,
            fmt("result JSON identical for 1, 3, 4 workers (%zu bytes)", a.result_json.size()));
  rep.check(a.replications_csv == b.replications_csv && a.replications_csv == c.replications_csv,
            fmt("replication CSV identical (%zu bytes)", a.replications_csv.size()));
  return rep.finish();
}

// ---------------------------------------------------------------------------
// 9. Invariances

Outcome invariance_check(bool verbose) {
  Report rep(verbose);
  const auto golden = cli::read_csv(std::string(RDSMALL_FIXTURE_DIR) + "/golden_n200.csv", "x", "y", 0.0, true).sample;
  const auto school =
      cli::read_csv(std::string(RDSMALL_DATA_DIR) + "/indiana_shaped.csv", "score", "change", 60.0, true).sample;
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> log_a(-3.0, 3.0);
  std::uniform_real_distribution<double> shift(-100.0, 100.0);
  int same = 0;
  for (int k = 0; k < 50; ++k) {
    const double a = std::exp(log_a(gen));
    const double b = shift(gen);
    const auto& s = k % 2 ? school : golden;
    same += diss_m(affine_transform(s, a, b)).m == diss_m(s).m ? 1 : 0;
  }
  rep.check(same == 50, fmt("diss_m unchanged under %d/50 affine maps", same));

  int fits = 0;
  int contained = 0;
  for (const auto* s : {&golden, &school}) {
    const auto sigma2 = nn_variance_checked(*s, 3);
    std::vector<double> hs;
    if (auto ik = ik_bandwidth(*s); ik.ok()) hs.push_back(ik.value());
    hs.push_back(silverman_rot(s->x()));
    std::vector<double> ms{0.0, 1.0, 10.0, 233.26};
    try {
      ms.push_back(estimate_m_hat(*s).value);
    } catch (const Error&) {
    }
    for (double h : hs) {
      for (double m : ms) {
        try {
          const auto cv = cv_interval(*s, h, Kernel::Triangular, 0.05, sigma2);
          const auto fl = flci_interval(*s, h, Kernel::Triangular, 0.05, {m, CurvatureBound::Source::UserSupplied}, sigma2);
          ++fits;
          contained += fl.ci_lower <= cv.ci_lower && fl.ci_upper >= cv.ci_upper ? 1 : 0;
        } catch (const Error&) {
        }
      }
    }
  }
  rep.check(fits > 0 && contained == fits, fmt("FLCI contains CV on %d/%d fixture fits", contained, fits));
  const double z = folded_normal_cv(0.0, 0.05).cv;
  rep.check(std::abs(z - 1.959964) <= 1e-6, fmt("folded_normal_cv(0, 0.05) = %.7f", z));
  return rep.finish();
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only;
  std::string known_red;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  bool verbose = false;
  app.add_option("--only", only, "comma-separated criteria to run (default all)");
  app.add_option("--known-red", known_red, "criteria expected to fail");
  app.add_option("--workers", workers, "threads for simulation cells")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", verbose, "print every sub-check");
  CLI11_PARSE(app, argc, argv);

  const auto selected = parse_list(only);
  const auto expected_red = parse_list(known_red);
  auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };

  const std::map<int, std::string> titles{
      {1, "Table 1 study sizes and rule-of-thumb bandwidths"},
      {2, "mean functions: jumps, curvature bounds, finite differences"},
      {3, "interval success rates, RV2 mu2, R=2000"},
      {4, "median bandwidth ordering, RV2 mu2, R=2000"},
      {5, "operating characteristics, RV2 mu2, R=2000"},
      {6, "large-sample consistency, RV1 mu1, n=20000, R=200"},
      {7, "oracle equivalences"},
      {8, "determinism across worker counts"},
      {9, "invariances"},
  };

  std::map<int, Outcome> results;
  auto run = [&](int id, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
    const auto& r = results[id];
    std::printf("%s  criterion %d: %s -- %s\n", r.pass ? "PASS" : "FAIL", id, titles.at(id).c_str(), r.detail.c_str());
    std::fflush(stdout);
  };

  run(1, [&] { return table1_check(verbose); });
  run(2, [&] { return mean_function_check(verbose); });
  if (wanted(3) || wanted(4) || wanted(5)) {
    std::vector<SweepCell> sweep;
    try {
      sweep = run_sweep(workers);
    } catch (const std::exception& e) {
      for (int id : {3, 4, 5}) {
        if (wanted(id)) std::printf("FAIL  criterion %d: %s -- sweep failed: %s\n", id, titles.at(id).c_str(), e.what());
        results[id] = {false, e.what()};
      }
    }
    if (!sweep.empty()) {
      run(3, [&] { return success_rate_check(sweep, verbose); });
      run(4, [&] { return bandwidth_order_check(sweep, verbose); });
      run(5, [&] { return operating_check(sweep, verbose); });
    }
  }
  run(6, [&] { return consistency_check(workers, verbose); });
  run(7, [&] { return oracle_check(verbose); });
  run(8, [&] { return determinism_check(verbose); });
  run(9, [&] { return invariance_check(verbose); });

  std::set<int> red;
  for (const auto& [id, r] : results) {
    if (!r.pass) red.insert(id);
  }
  std::set<int> expected_in_run;
  for (int id : expected_red) {
    if (results.count(id)) expected_in_run.insert(id);
  }
  std::printf("%zu/%zu criteria pass", results.size() - red.size(), results.size());
  if (!expected_in_run.empty()) {
    std::printf("; expected red:");
    for (int id : expected_in_run) std::printf(" %d", id);
  }
  std::printf("\n");
  for (int id : red) {
    if (!expected_in_run.count(id)) std::printf("unexpected FAIL: criterion %d\n", id);
  }
  for (int id : expected_in_run) {
    if (!red.count(id)) std::printf("criterion %d was expected to fail but passed; update --known-red\n", id);
  }
  return red == expected_in_run ? 0 : 1;
}
