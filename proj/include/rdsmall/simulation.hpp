#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdsmall/bandwidth.hpp"
#include "rdsmall/core.hpp"
#include "rdsmall/detail/numeric.hpp"
#include "rdsmall/detail/rng.hpp"
#include "rdsmall/diss.hpp"
#include "rdsmall/error.hpp"
#include "rdsmall/inference.hpp"
#include "rdsmall/kernel_regression.hpp"
#include "rdsmall/local_randomization.hpp"

namespace rdsmall {

// ---------------------------------------------------------------------------
// Mean functions

enum class MeanTag { Mu1, Mu2, Mu3 };

constexpr std::string_view to_string(MeanTag t) noexcept {
  switch (t) {
    case MeanTag::Mu1: return "mu1";
    case MeanTag::Mu2: return "mu2";
    case MeanTag::Mu3: return "mu3";
  }
  return "unknown";
}

inline MeanTag mean_tag_from_string(std::string_view s) {
  if (s == "mu1") return MeanTag::Mu1;
  if (s == "mu2") return MeanTag::Mu2;
  if (s == "mu3") return MeanTag::Mu3;
  throw Error(ErrorCode::InvalidArgument, "unknown mean function '" + std::string(s) + "'");
}

inline constexpr double kTrueTau = 0.1;
inline constexpr double kNoiseSd = 0.1295;

namespace detail {

inline double plus_sq(double x) noexcept { return x > 0.0 ? x * x : 0.0; }

inline double poly(std::span<const double> c, double x) noexcept {
  double r = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) r = r * x + *it;
  return r;
}

/// A piece of mu'' on [lo, hi], as a cubic c0 + c1 x + c2 x^2 + c3 x^3.
struct CurvaturePiece {
  double lo;
  double hi;
  std::array<double, 4> c;
};

inline std::vector<CurvaturePiece> curvature_pieces(MeanTag tag) {
  switch (tag) {
    case MeanTag::Mu1:
      return {{-1.0, -0.2, {2, 0, 0, 0}},
              {-0.2, 0.2, {-2, 0, 0, 0}},
              {0.2, 0.4, {2, 0, 0, 0}},
              {0.4, 0.7, {-2, 0, 0, 0}},
              {0.7, 1.0, {2, 0, 0, 0}}};
    case MeanTag::Mu2:
      return {{-1.0, 1.0, {-6.0, 47.94, -108.12, 71.2}}};
    case MeanTag::Mu3:
      return {{-1.0, 0.0, {6.4, 16.2, 0, 0}}, {0.0, 1.0, {5.0, -9.0, 0, 0}}};
  }
  return {};
}

inline void check_support(double x) {
  if (!(x >= -1.0 && x <= 1.0)) {
    throw Error(ErrorCode::OutOfSupport, "x = " + std::to_string(x) + " lies outside [-1, 1]");
  }
}

}  // namespace detail

/// Mean function value; the jump of 0.1 sits at x = 0 with x = 0 treated.
inline double eval_mu(MeanTag tag, double x) {
  detail::check_support(x);
  using detail::plus_sq;
  const double jump = x >= 0.0 ? kTrueTau : 0.0;
  switch (tag) {
    case MeanTag::Mu1:
      return (x + 1.0) * (x + 1.0) - 2.0 * plus_sq(x + 0.2) + 2.0 * plus_sq(x - 0.2) - 2.0 * plus_sq(x - 0.4) +
             2.0 * plus_sq(x - 0.7) - 0.92 + jump;
    case MeanTag::Mu2: {
      static constexpr std::array<double, 6> c{0.42, 0.84, -3.0, 7.99, -9.01, 3.56};
      return detail::poly(c, x) + jump;
    }
    case MeanTag::Mu3: {
      static constexpr std::array<double, 4> below{0.05, 1.5, 3.2, 2.7};
      static constexpr std::array<double, 4> above{0.15, -0.15, 2.5, -1.5};
      return x < 0.0 ? detail::poly(below, x) : detail::poly(above, x);
    }
  }
  return 0.0;
}

/// Analytic mu''(x); at a knot the piece to the right is used.
inline double mu_second_derivative(MeanTag tag, double x) {
  detail::check_support(x);
  const auto pieces = detail::curvature_pieces(tag);
  for (const auto& p : pieces) {
    if (x >= p.lo && (x < p.hi || p.hi == 1.0)) return detail::poly(p.c, x);
  }
  return detail::poly(pieces.back().c, x);
}

/// max |mu''| over [-1, 1]: endpoints and interior critical points of each
/// cubic piece.
inline double max_abs_second_derivative(MeanTag tag) {
  double best = 0.0;
  for (const auto& p : detail::curvature_pieces(tag)) {
    std::vector<double> cand{p.lo, p.hi};
    // (c1 + 2 c2 x + 3 c3 x^2)' roots
    const double a = 3.0 * p.c[3];
    const double b = 2.0 * p.c[2];
    const double c = p.c[1];
    if (a != 0.0) {
      const double disc = b * b - 4.0 * a * c;
      if (disc >= 0.0) {
        cand.push_back((-b + std::sqrt(disc)) / (2.0 * a));
        cand.push_back((-b - std::sqrt(disc)) / (2.0 * a));
      }
    } else if (b != 0.0) {
      cand.push_back(-c / b);
    }
    for (double x : cand) {
      if (x >= p.lo && x <= p.hi) best = std::max(best, std::abs(detail::poly(p.c, x)));
    }
  }
  return best;
}

/// Reference bounds on |mu''| for the designs (mu3's differs from the
/// analytic maximum; both are kept).
inline double curvature_bound_paper(MeanTag tag) noexcept {
  switch (tag) {
    case MeanTag::Mu1: return 2.0;
    case MeanTag::Mu2: return 233.26;
    case MeanTag::Mu3: return 16.2;
  }
  return 0.0;
}

struct MeanFunction {
  MeanTag tag = MeanTag::Mu1;
  double true_tau = kTrueTau;
  double curvature_bound_paper = 2.0;

  explicit MeanFunction(MeanTag t) : tag(t), curvature_bound_paper(rdsmall::curvature_bound_paper(t)) {}
  double operator()(double x) const { return eval_mu(tag, x); }
};

// ---------------------------------------------------------------------------
// Designs

struct DGP {
  RunningVariable rv = RunningVariable::RV1;
  MeanTag mu = MeanTag::Mu1;
  double noise_sd = kNoiseSd;
  double cutoff = 0.0;

  std::string id() const { return std::string(to_string(rv)) + std::string(to_string(mu)); }
};

/// x = 2 Z - 1 with Z ~ Beta by inverse CDF, then y = mu(x) + N(0, noise_sd^2).
inline RDSample generate_dataset(const DGP& dgp, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "sample size must be at least 1");
  const BetaDistribution dist(unit_beta_spec(dgp.rv));
  detail::Stream rng(seed);
  std::vector<double> x(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = dist.quantile_unit(rng.uniform());
    x[i] = std::clamp(2.0 * z - 1.0, -1.0, 1.0);
    y[i] = eval_mu(dgp.mu, x[i]) + dgp.noise_sd * rng.normal();
  }
  return RDSample(std::move(x), std::move(y), dgp.cutoff);
}

/// sigma* of the running variable on the unit (Z) scale.
inline double population_sigma_star(RunningVariable rv) { return BetaDistribution(unit_beta_spec(rv)).sigma_star(); }

/// Population rule-of-thumb bandwidth on the Z scale.
inline double population_h_rot(RunningVariable rv, std::size_t n) {
  return 0.9 * population_sigma_star(rv) * std::pow(static_cast<double>(n), -0.2);
}

inline double population_diss(RunningVariable rv, std::size_t n) {
  return population_diss(unit_beta_spec(rv), 0.5, n, population_sigma_star(rv));
}

/// The five study sizes of the reference grid. Each nominal value is pinned
/// to the exact m-bar of one reference design; the other designs take the
/// smallest n reaching it.
struct StudySizeAnchor {
  int nominal;
  RunningVariable rv;
  std::size_t n;
};

inline constexpr std::array<StudySizeAnchor, 5> kStudySizeAnchors{{
    {10, RunningVariable::RV1, 40},
    {21, RunningVariable::RV3, 354},
    {27, RunningVariable::RV1, 140},
    {44, RunningVariable::RV2, 354},
    {57, RunningVariable::RV1, 354},
}};

/// Exact m-bar target for a nominal study size: the anchored value for the
/// reference grid, the number itself otherwise.
inline double study_size_target(double m_bar) {
  for (const auto& a : kStudySizeAnchors) {
    if (m_bar == a.nominal) return population_diss(a.rv, a.n);
  }
  return m_bar;
}

inline std::size_t n_for_study_size(RunningVariable rv, double m_bar) {
  return n_for_target_diss(unit_beta_spec(rv), 0.5, population_sigma_star(rv), study_size_target(m_bar));
}

struct Table1Cell {
  RunningVariable rv;
  int m_bar;
  std::size_t n;
  double h_rot;
  double m_bar_exact;
};

inline std::vector<Table1Cell> table1() {
  std::vector<Table1Cell> out;
  for (auto rv : {RunningVariable::RV1, RunningVariable::RV2, RunningVariable::RV3}) {
    for (const auto& a : kStudySizeAnchors) {
      const auto n = n_for_study_size(rv, a.nominal);
      out.push_back({rv, a.nominal, n, population_h_rot(rv, n), population_diss(rv, n)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Methods

/// A bandwidth algorithm paired with an interval construction, or a local
/// randomization window rule ("LR<k>").
struct MethodId {
  bool local_randomization = false;
  BandwidthAlgorithm bandwidth = BandwidthAlgorithm::IK;
  InferenceMethod inference = InferenceMethod::CV;
  int lr_min = 5;

  std::string name() const {
    if (local_randomization) return "LR" + std::to_string(lr_min);
    return std::string(to_string(bandwidth)) + "/" + std::string(to_string(inference));
  }
};

inline std::optional<MethodId> parse_method(std::string_view s) {
  MethodId m;
  if (s.size() > 2 && s.substr(0, 2) == "LR") {
    int k = 0;
    for (char ch : s.substr(2)) {
      if (ch < '0' || ch > '9' || k > 100000) return std::nullopt;
      k = k * 10 + (ch - '0');
    }
    if (k < 1) return std::nullopt;
    m.local_randomization = true;
    m.inference = InferenceMethod::LR;
    m.lr_min = k;
    return m;
  }
  const auto slash = s.find('/');
  if (slash == std::string_view::npos) return std::nullopt;
  const auto bw = s.substr(0, slash);
  const auto inf = s.substr(slash + 1);
  if (bw == "IK") m.bandwidth = BandwidthAlgorithm::IK;
  else if (bw == "AK") m.bandwidth = BandwidthAlgorithm::AK;
  else if (bw == "AKM") m.bandwidth = BandwidthAlgorithm::AKM;
  else return std::nullopt;
  if (inf == "CV") m.inference = InferenceMethod::CV;
  else if (inf == "RBC") m.inference = InferenceMethod::RBC;
  else if (inf == "FLCI") m.inference = InferenceMethod::FLCI;
  else return std::nullopt;
  return m;
}

inline std::vector<std::string> default_methods() {
  return {"IK/CV", "IK/RBC", "IK/FLCI", "AK/CV", "AK/RBC", "AK/FLCI", "LR5"};
}

// ---------------------------------------------------------------------------
// Cell specification

struct CellSpec {
  RunningVariable rv = RunningVariable::RV2;
  MeanTag mu = MeanTag::Mu2;
  std::optional<double> m_bar;
  std::optional<std::size_t> n;
  std::size_t replications = 2000;
  std::uint64_t seed = 1;
  std::vector<std::string> methods = default_methods();
  double alpha = 0.05;
  Kernel kernel = Kernel::Triangular;
  WindowRule lr_rule = WindowRule::Saturating;
  std::optional<double> m_bound;  // for AKM; defaults to the reference bound
  bool keep_replications = true;

  DGP dgp() const { return {rv, mu, kNoiseSd, 0.0}; }

  std::size_t resolved_n() const {
    if (n) return *n;
    return n_for_study_size(rv, *m_bar);
  }

  double resolved_m_bound() const { return m_bound ? *m_bound : curvature_bound_paper(mu); }

  std::string cell_id() const { return dgp().id() + "/n" + std::to_string(resolved_n()); }
};

namespace detail {

[[noreturn]] inline void spec_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::SpecValidation, path + ": " + what);
}

}  // namespace detail

/// Parses and validates a cell spec. Unknown fields are rejected so typos do
/// not silently fall back to defaults.
inline CellSpec parse_cell_spec(const nlohmann::json& j) {
  using detail::spec_error;
  if (!j.is_object()) spec_error("$", "cell spec must be an object");
  static const std::vector<std::string> known{"rv",    "mu",     "m_bar",   "n",       "replications",     "seed",
                                              "methods", "alpha", "kernel", "lr_rule", "m_bound", "keep_replications"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) spec_error("$." + k, "unknown field");
  }
  CellSpec s;
  auto get_string = [&](const char* key) -> std::string {
    const auto& v = j.at(key);
    if (!v.is_string()) spec_error(std::string("$.") + key, "must be a string");
    return v.get<std::string>();
  };
  auto get_number = [&](const char* key) -> double {
    const auto& v = j.at(key);
    if (!v.is_number()) spec_error(std::string("$.") + key, "must be a number");
    return v.get<double>();
  };
  auto get_count = [&](const char* key) -> std::uint64_t {
    const auto& v = j.at(key);
    if (!v.is_number_unsigned()) spec_error(std::string("$.") + key, "must be a nonnegative integer");
    return v.get<std::uint64_t>();
  };

  if (!j.contains("rv")) spec_error("$.rv", "required");
  try {
    s.rv = running_variable_from_string(get_string("rv"));
  } catch (const Error& e) {
    spec_error("$.rv", e.what());
  }
  if (!j.contains("mu")) spec_error("$.mu", "required");
  try {
    s.mu = mean_tag_from_string(get_string("mu"));
  } catch (const Error& e) {
    spec_error("$.mu", e.what());
  }
  if (j.contains("m_bar")) {
    const double m = get_number("m_bar");
    if (!(m >= 1.0) || !std::isfinite(m)) spec_error("$.m_bar", "must be at least 1");
    s.m_bar = m;
  }
  if (j.contains("n")) {
    const auto n = get_count("n");
    if (n < 2) spec_error("$.n", "must be at least 2");
    s.n = static_cast<std::size_t>(n);
  }
  if (!s.m_bar && !s.n) spec_error("$.m_bar", "one of m_bar or n is required");
  if (j.contains("replications")) {
    s.replications = static_cast<std::size_t>(get_count("replications"));
    if (s.replications < 1) spec_error("$.replications", "must be at least 1");
  }
  if (j.contains("seed")) s.seed = get_count("seed");
  if (j.contains("methods")) {
    const auto& m = j.at("methods");
    if (!m.is_array() || m.empty()) spec_error("$.methods", "must be a nonempty array");
    s.methods.clear();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto path = "$.methods[" + std::to_string(i) + "]";
      if (!m[i].is_string()) spec_error(path, "must be a string");
      const auto name = m[i].get<std::string>();
      if (!parse_method(name)) spec_error(path, "unknown method '" + name + "'");
      if (std::find(s.methods.begin(), s.methods.end(), name) != s.methods.end()) {
        spec_error(path, "duplicate method '" + name + "'");
      }
      s.methods.push_back(name);
    }
  }
  if (j.contains("alpha")) {
    s.alpha = get_number("alpha");
    if (!(s.alpha > 0.0 && s.alpha < 1.0)) spec_error("$.alpha", "must lie in (0,1)");
  }
  if (j.contains("kernel")) {
    try {
      s.kernel = kernel_from_string(get_string("kernel"));
    } catch (const Error& e) {
      spec_error("$.kernel", e.what());
    }
  }
  if (j.contains("lr_rule")) {
    const auto r = get_string("lr_rule");
    if (r == "strict") s.lr_rule = WindowRule::Strict;
    else if (r == "saturating") s.lr_rule = WindowRule::Saturating;
    else spec_error("$.lr_rule", "must be 'strict' or 'saturating'");
  }
  if (j.contains("m_bound") && !j.at("m_bound").is_null()) {
    const double m = get_number("m_bound");
    if (!(m > 0.0) || !std::isfinite(m)) spec_error("$.m_bound", "must be positive");
    s.m_bound = m;
  }
  if (j.contains("keep_replications")) {
    if (!j.at("keep_replications").is_boolean()) spec_error("$.keep_replications", "must be a boolean");
    s.keep_replications = j.at("keep_replications").get<bool>();
  }
  return s;
}

/// The fully resolved spec, as echoed into result files.
inline nlohmann::ordered_json to_json(const CellSpec& s) {
  nlohmann::ordered_json j;
  j["rv"] = to_string(s.rv);
  j["mu"] = to_string(s.mu);
  j["m_bar"] = s.m_bar ? nlohmann::ordered_json(*s.m_bar) : nlohmann::ordered_json(nullptr);
  if (s.m_bar) j["m_bar_exact"] = study_size_target(*s.m_bar);
  j["n"] = s.resolved_n();
  j["replications"] = s.replications;
  j["seed"] = s.seed;
  j["methods"] = s.methods;
  j["alpha"] = s.alpha;
  j["kernel"] = to_string(s.kernel);
  j["lr_rule"] = s.lr_rule == WindowRule::Strict ? "strict" : "saturating";
  j["m_bound"] = s.resolved_m_bound();
  j["noise_sd"] = kNoiseSd;
  j["true_tau"] = kTrueTau;
  j["keep_replications"] = s.keep_replications;
  return j;
}

// ---------------------------------------------------------------------------
// Replications

struct ReplicationRecord {
  std::size_t rep = 0;
  std::string method;
  double bw = NAN;
  bool bw_success = false;
  bool success = false;
  double tau_hat = NAN;
  double se = NAN;
  double ci_lo = NAN;
  double ci_hi = NAN;
  std::string reason;

  double width() const { return ci_hi - ci_lo; }
  bool covered(double tau) const { return success && ci_lo <= tau && tau <= ci_hi; }
};

/// Settings shared by every method applied to one sample.
struct MethodSettings {
  Kernel kernel = Kernel::Triangular;
  double alpha = 0.05;
  WindowRule lr_rule = WindowRule::Saturating;
  double user_bound = 0.0;  // M for AKM and its FLCI
  bool user_bound_for_all = false;  // FLCI uses user_bound whatever the bandwidth
};

inline MethodSettings method_settings(const CellSpec& spec) {
  return {spec.kernel, spec.alpha, spec.lr_rule, spec.resolved_m_bound()};
}

namespace detail {

inline std::string describe(const Error& e) { return e.what(); }

/// Everything shared by the methods of one replication, computed on demand.
class ReplicationContext {
 public:
  ReplicationContext(const MethodSettings& settings, const RDSample& sample, std::uint64_t seed)
      : settings_(settings), sample_(sample), seed_(seed) {}

  const RDSample& sample() const { return sample_; }

  const std::vector<double>* sigma2() {
    if (!sigma2_done_) {
      sigma2_done_ = true;
      try {
        const auto split = validate(sample_);
        if (split.empty_side()) throw Error(ErrorCode::EmptySide, "a side of the cutoff is empty");
        sigma2_ = nn_variance(sample_, split, 3);
        variances_ = side_variances(split, *sigma2_);
      } catch (const Error& e) {
        sigma2_error_ = describe(e);
      }
    }
    return sigma2_ ? &*sigma2_ : nullptr;
  }
  const std::string& sigma2_error() const { return sigma2_error_; }

  std::optional<CurvatureBound> m_hat() {
    if (!m_hat_done_) {
      m_hat_done_ = true;
      try {
        m_hat_ = estimate_m_hat(sample_);
      } catch (const Error& e) {
        m_hat_error_ = describe(e);
      }
    }
    return m_hat_;
  }
  const std::string& m_hat_error() const { return m_hat_error_; }

  const BandwidthResult& bandwidth(BandwidthAlgorithm algo) {
    auto it = bandwidths_.find(algo);
    if (it != bandwidths_.end()) return it->second;
    BandwidthResult r;
    switch (algo) {
      case BandwidthAlgorithm::IK:
        r = ik_bandwidth(sample_, settings_.kernel);
        break;
      case BandwidthAlgorithm::AK:
        if (auto m = m_hat()) {
          sigma2();
          r = ak_bandwidth(sample_, settings_.kernel, *m, variances_);
        } else {
          r = BandwidthResult::fail(algo, BandwidthFailure::CurvatureEstimate, m_hat_error_);
        }
        break;
      case BandwidthAlgorithm::AKM:
        sigma2();
        r = ak_bandwidth(sample_, settings_.kernel, {settings_.user_bound, CurvatureBound::Source::UserSupplied},
                         variances_);
        break;
      case BandwidthAlgorithm::ROT:
        r.algorithm = algo;
        r.h = silverman_rot(sample_.x());
        break;
    }
    return bandwidths_.emplace(algo, std::move(r)).first->second;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  const MethodSettings& settings_;
  const RDSample& sample_;
  std::uint64_t seed_;
  bool sigma2_done_ = false;
  std::optional<std::vector<double>> sigma2_;
  std::optional<SideVariances> variances_;
  std::string sigma2_error_;
  bool m_hat_done_ = false;
  std::optional<CurvatureBound> m_hat_;
  std::string m_hat_error_;
  std::map<BandwidthAlgorithm, BandwidthResult> bandwidths_;
};

inline void run_method(ReplicationContext& ctx, const MethodSettings& spec, const MethodId& m, ReplicationRecord& rec) {
  if (m.local_randomization) {
    try {
      PermutationConfig cfg;
      cfg.seed = derive_seed(ctx.seed(), 0x4c52);
      const auto lr = lr_estimate(ctx.sample(), m.lr_min, spec.alpha, spec.lr_rule, {}, cfg);
      rec.bw = lr.estimate.bandwidth;
      rec.bw_success = true;
      rec.tau_hat = lr.estimate.tau_hat;
      rec.ci_lo = lr.estimate.ci_lower;
      rec.ci_hi = lr.estimate.ci_upper;
      rec.success = true;
    } catch (const Error& e) {
      rec.reason = describe(e);
    }
    return;
  }
  const auto& bw = ctx.bandwidth(m.bandwidth);
  if (!bw.ok()) {
    rec.reason = "bandwidth " + std::string(to_string(bw.failure)) + ": " + bw.reason;
    return;
  }
  rec.bw = *bw.h;
  rec.bw_success = true;
  const auto* sigma2 = ctx.sigma2();
  if (!sigma2) {
    rec.reason = ctx.sigma2_error();
    return;
  }
  try {
    EffectEstimate e;
    switch (m.inference) {
      case InferenceMethod::CV:
        e = cv_interval(ctx.sample(), rec.bw, spec.kernel, spec.alpha, *sigma2);
        break;
      case InferenceMethod::RBC:
        e = rbc_interval(ctx.sample(), rec.bw, spec.kernel, spec.alpha, *sigma2);
        break;
      case InferenceMethod::FLCI: {
        std::optional<CurvatureBound> bound;
        if (m.bandwidth == BandwidthAlgorithm::AKM || spec.user_bound_for_all) {
          bound = CurvatureBound{spec.user_bound, CurvatureBound::Source::UserSupplied};
        } else {
          bound = ctx.m_hat();
        }
        if (!bound) {
          rec.reason = ctx.m_hat_error();
          return;
        }
        e = flci_interval(ctx.sample(), rec.bw, spec.kernel, spec.alpha, *bound, *sigma2);
        break;
      }
      case InferenceMethod::LR:
        break;
    }
    if (!std::isfinite(e.tau_hat) || !std::isfinite(e.ci_lower) || !std::isfinite(e.ci_upper)) {
      rec.reason = "non-finite interval";
      return;
    }
    rec.tau_hat = e.tau_hat;
    rec.se = e.se;
    rec.ci_lo = e.ci_lower;
    rec.ci_hi = e.ci_upper;
    rec.success = true;
  } catch (const Error& e) {
    rec.reason = describe(e);
  }
}

}  // namespace detail

/// Seed of replication `rep`: a function of the master seed, the cell and the
/// replication index only, never of scheduling.
inline std::uint64_t replication_seed(const CellSpec& spec, std::size_t rep) {
  return detail::derive_seed(spec.seed, detail::fnv1a(spec.cell_id()), rep);
}

/// One replication: a fresh dataset and one record per method, in spec order.
inline std::vector<ReplicationRecord> run_replication(const CellSpec& spec, std::size_t rep) {
  const auto seed = replication_seed(spec, rep);
  const auto sample = generate_dataset(spec.dgp(), spec.resolved_n(), seed);
  const auto settings = method_settings(spec);
  detail::ReplicationContext ctx(settings, sample, seed);
  std::vector<ReplicationRecord> out;
  out.reserve(spec.methods.size());
  for (const auto& name : spec.methods) {
    ReplicationRecord rec;
    rec.rep = rep;
    rec.method = name;
    detail::run_method(ctx, settings, *parse_method(name), rec);
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct MethodSummary {
  std::string method;
  double bw_success_rate = 0.0;
  double interval_success_rate = 0.0;
  double median_bw = NAN;  // over replications with a bandwidth
  bool point_reported = true;
  double bias = NAN;
  double emp_se = NAN;
  double mse = NAN;
  double coverage = NAN;
  double median_width = NAN;
  double mcse_bias = NAN;
  double mcse_coverage = NAN;
  double mcse_mse = NAN;
};

struct SimCellResult {
  CellSpec spec;
  std::string dgp_id;
  std::optional<double> m_bar;
  std::size_t n = 0;
  std::size_t r_total = 0;
  std::size_t r_common = 0;
  std::vector<MethodSummary> methods;
  std::vector<std::vector<ReplicationRecord>> replications;  // [rep][method]

  const MethodSummary& method(std::string_view name) const {
    for (const auto& m : methods) {
      if (m.method == name) return m;
    }
    throw Error(ErrorCode::InvalidArgument, "method '" + std::string(name) + "' not in cell");
  }
};

/// Summaries over all replications (success rates, median bandwidth) and over
/// the replications where every method succeeded (everything else).
inline std::vector<MethodSummary> summarize(const std::vector<std::vector<ReplicationRecord>>& reps,
                                            const std::vector<std::string>& methods, double tau,
                                            std::size_t* r_common_out = nullptr) {
  const std::size_t r_total = reps.size();
  std::vector<char> common(r_total, 1);
  std::size_t r_common = 0;
  for (std::size_t r = 0; r < r_total; ++r) {
    for (const auto& rec : reps[r]) common[r] = common[r] && rec.success;
    r_common += common[r] ? 1 : 0;
  }
  if (r_common_out) *r_common_out = r_common;
  std::vector<MethodSummary> out;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    MethodSummary s;
    s.method = methods[k];
    const auto id = parse_method(methods[k]);
    s.point_reported = !(id && id->inference == InferenceMethod::FLCI);
    std::size_t bw_ok = 0;
    std::size_t ok = 0;
    std::vector<double> bws;
    std::vector<double> est;
    std::vector<double> widths;
    std::size_t covered = 0;
    for (std::size_t r = 0; r < r_total; ++r) {
      const auto& rec = reps[r][k];
      if (rec.bw_success) {
        ++bw_ok;
        bws.push_back(rec.bw);
      }
      ok += rec.success ? 1 : 0;
      if (!common[r]) continue;
      est.push_back(rec.tau_hat);
      widths.push_back(rec.width());
      covered += rec.covered(tau) ? 1 : 0;
    }
    const double rt = static_cast<double>(r_total);
    s.bw_success_rate = r_total ? static_cast<double>(bw_ok) / rt : NAN;
    s.interval_success_rate = r_total ? static_cast<double>(ok) / rt : NAN;
    s.median_bw = detail::median(bws);
    if (r_common > 0) {
      const double rc = static_cast<double>(r_common);
      s.coverage = static_cast<double>(covered) / rc;
      s.mcse_coverage = std::sqrt(s.coverage * (1.0 - s.coverage) / rc);
      s.median_width = detail::median(widths);
      if (s.point_reported) {
        s.bias = detail::mean(est) - tau;
        std::vector<double> sq(est.size());
        for (std::size_t i = 0; i < est.size(); ++i) sq[i] = (est[i] - tau) * (est[i] - tau);
        s.mse = detail::mean(sq);
        if (r_common > 1) {
          s.emp_se = std::sqrt(detail::sample_variance(est));
          s.mcse_bias = s.emp_se / std::sqrt(rc);
          s.mcse_mse = std::sqrt(detail::sample_variance(sq)) / std::sqrt(rc);
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Runs every replication of a cell. Replications are handed to `workers`
/// threads but written by index and aggregated in index order, so the result
/// does not depend on the worker count.
inline SimCellResult run_cell(const CellSpec& spec, unsigned workers = 1) {
  for (const auto& m : spec.methods) {
    if (!parse_method(m)) throw Error(ErrorCode::SpecValidation, "$.methods: unknown method '" + m + "'");
  }
  SimCellResult out;
  out.spec = spec;
  out.dgp_id = spec.dgp().id();
  out.m_bar = spec.m_bar;
  out.n = spec.resolved_n();
  out.r_total = spec.replications;
  std::vector<std::vector<ReplicationRecord>> reps(spec.replications);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    try {
      for (std::size_t r = next++; r < spec.replications; r = next++) reps[r] = run_replication(spec, r);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = spec.replications;
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  out.methods = summarize(reps, spec.methods, kTrueTau, &out.r_common);
  if (spec.keep_replications) out.replications = std::move(reps);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline std::string format_double(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const SimCellResult& r) {
  using detail::number_or_null;
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  j["config"] = to_json(r.spec);
  j["dgp"] = r.dgp_id;
  j["m_bar"] = r.m_bar ? nlohmann::ordered_json(*r.m_bar) : nlohmann::ordered_json(nullptr);
  j["n"] = r.n;
  j["r_total"] = r.r_total;
  j["r_common"] = r.r_common;
  auto& ms = j["methods"] = nlohmann::ordered_json::array();
  for (const auto& m : r.methods) {
    nlohmann::ordered_json e;
    e["method"] = m.method;
    e["bw_success_rate"] = number_or_null(m.bw_success_rate);
    e["interval_success_rate"] = number_or_null(m.interval_success_rate);
    e["median_bw"] = number_or_null(m.median_bw);
    e["point_reported"] = m.point_reported;
    e["bias"] = number_or_null(m.bias);
    e["emp_se"] = number_or_null(m.emp_se);
    e["mse"] = number_or_null(m.mse);
    e["coverage"] = number_or_null(m.coverage);
    e["median_width"] = number_or_null(m.median_width);
    e["mcse"] = {{"bias", number_or_null(m.mcse_bias)},
                 {"coverage", number_or_null(m.mcse_coverage)},
                 {"mse", number_or_null(m.mcse_mse)}};
    ms.push_back(std::move(e));
  }
  return j;
}

/// Long-format per-replication table, one row per (replication, method).
inline void write_replications_csv(std::ostream& os, const SimCellResult& r) {
  using detail::format_double;
  os << "rep,method,bw,success,tau_hat,ci_lo,ci_hi,width,covered\n";
  for (const auto& rep : r.replications) {
    for (const auto& rec : rep) {
      os << rec.rep << ',' << rec.method << ',' << format_double(rec.bw) << ',' << (rec.success ? 1 : 0) << ','
         << format_double(rec.tau_hat) << ',' << format_double(rec.ci_lo) << ',' << format_double(rec.ci_hi) << ','
         << format_double(rec.success ? rec.width() : NAN) << ',' << (rec.covered(kTrueTau) ? 1 : 0) << '\n';
    }
  }
}

}  // namespace rdsmall
