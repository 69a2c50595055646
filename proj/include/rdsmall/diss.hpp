#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>

#include "rdsmall/bandwidth.hpp"
#include "rdsmall/core.hpp"
#include "rdsmall/error.hpp"

namespace rdsmall {

/// Beta(alpha, beta) variable Z mapped to X = scale * Z + shift.
struct BetaSpec {
  double alpha = 1.0;
  double beta = 1.0;
  double scale = 1.0;
  double shift = 0.0;
};

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

inline double log_beta_function(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

/// Regularized incomplete beta I_z(a, b), using the symmetry
/// I_z(a, b) = 1 - I_{1-z}(b, a) to stay in the fast-converging region.
inline double regularized_incomplete_beta(double a, double b, double z, double log_beta) {
  if (z <= 0.0) return 0.0;
  if (z >= 1.0) return 1.0;
  const double front = std::exp(a * std::log(z) + b * std::log1p(-z) - log_beta);
  if (z < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, z) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - z) / b;
}

}  // namespace detail

/// Beta distribution on the transformed scale, with the log-beta constant
/// computed once.
class BetaDistribution {
 public:
  explicit BetaDistribution(BetaSpec spec) : spec_(spec) {
    if (!(spec.alpha > 0.0) || !(spec.beta > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "beta shape parameters must be positive");
    }
    if (spec.scale == 0.0) throw Error(ErrorCode::ZeroScale, "beta transform scale must be nonzero");
    log_beta_ = detail::log_beta_function(spec.alpha, spec.beta);
  }

  const BetaSpec& spec() const noexcept { return spec_; }

  double lower() const noexcept { return std::min(spec_.shift, spec_.scale + spec_.shift); }
  double upper() const noexcept { return std::max(spec_.shift, spec_.scale + spec_.shift); }

  /// P(Z <= z) on the untransformed unit interval.
  double cdf_unit(double z) const { return detail::regularized_incomplete_beta(spec_.alpha, spec_.beta, z, log_beta_); }

  double pdf_unit(double z) const {
    if (z <= 0.0 || z >= 1.0) return 0.0;
    return std::exp((spec_.alpha - 1.0) * std::log(z) + (spec_.beta - 1.0) * std::log1p(-z) - log_beta_);
  }

  /// P(X <= x).
  double cdf(double x) const {
    const double z = (x - spec_.shift) / spec_.scale;
    return spec_.scale > 0.0 ? cdf_unit(z) : 1.0 - cdf_unit(z);
  }

  /// Inverse of cdf_unit by safeguarded Newton iteration.
  double quantile_unit(double p) const {
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return 1.0;
    double lo = 0.0;
    double hi = 1.0;
    double z = spec_.alpha / (spec_.alpha + spec_.beta);
    for (int it = 0; it < 200; ++it) {
      const double g = cdf_unit(z) - p;
      if (g == 0.0) return z;
      (g < 0.0 ? lo : hi) = z;
      const double dens = pdf_unit(z);
      double next = dens > 0.0 ? z - g / dens : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - z) <= 1e-15 * std::max(1.0, z)) return next;
      z = next;
    }
    return z;
  }

  double quantile(double p) const {
    const double z = quantile_unit(spec_.scale > 0.0 ? p : 1.0 - p);
    return spec_.scale * z + spec_.shift;
  }

  double sd() const {
    const double a = spec_.alpha;
    const double b = spec_.beta;
    return std::abs(spec_.scale) * std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1.0)));
  }

  double iqr() const { return std::abs(spec_.scale) * (quantile_unit(0.75) - quantile_unit(0.25)); }

  PopulationSpread spread() const { return {iqr(), sd()}; }

  /// sigma* = min(population IQR / 1.34, population sd).
  double sigma_star() const { return spread_scale(iqr(), sd()); }

 private:
  BetaSpec spec_;
  double log_beta_ = 0.0;
};

/// P(X <= x); clamps to 0 / 1 outside the support.
inline double beta_cdf(const BetaSpec& spec, double x) { return BetaDistribution(spec).cdf(x); }

struct DissResult {
  std::size_t m = 0;
  double h_rot = 0.0;
};

/// Sample DISS: observations with c - h_ROT <= x <= c + h_ROT, both ends closed.
inline DissResult diss_m(const RDSample& sample) {
  validate(sample);
  DissResult out;
  out.h_rot = silverman_rot(sample.x());
  const double c = sample.cutoff();
  for (double v : sample.x()) {
    if (c - out.h_rot <= v && v <= c + out.h_rot) ++out.m;
  }
  return out;
}

/// Expected number of observations within one population rule-of-thumb
/// bandwidth of the cutoff, m-bar(n) = n P(c - h < X < c + h). Not rounded.
inline double population_diss(const BetaDistribution& dist, double cutoff, std::size_t n, double sigma_star) {
  if (!(sigma_star > 0.0)) throw Error(ErrorCode::DegenerateSample, "sigma* must be positive");
  const double h = 0.9 * sigma_star * std::pow(static_cast<double>(n), -0.2);
  return static_cast<double>(n) * (dist.cdf(cutoff + h) - dist.cdf(cutoff - h));
}

inline double population_diss(const BetaSpec& spec, double cutoff, std::size_t n, double sigma_star) {
  return population_diss(BetaDistribution(spec), cutoff, n, sigma_star);
}

/// Smallest n with m-bar(n) >= target. m-bar grows like n^(4/5), so a
/// doubling bracket followed by bisection is exact.
inline std::size_t n_for_target_diss(const BetaDistribution& dist, double cutoff, double sigma_star, double target) {
  if (!(target >= 1.0) || !std::isfinite(target)) {
    throw Error(ErrorCode::InvalidArgument, "target study size must be at least 1");
  }
  auto reaches = [&](std::size_t n) { return population_diss(dist, cutoff, n, sigma_star) >= target; };
  std::size_t hi = 1;
  while (!reaches(hi)) {
    if (hi > (std::size_t{1} << 40)) throw Error(ErrorCode::InvalidArgument, "target study size is unreachable");
    hi *= 2;
  }
  std::size_t lo = hi / 2;  // !reaches(lo) unless lo == 0
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (reaches(mid) ? hi : lo) = mid;
  }
  return hi;
}

inline std::size_t n_for_target_diss(const BetaSpec& spec, double cutoff, double sigma_star, double target) {
  return n_for_target_diss(BetaDistribution(spec), cutoff, sigma_star, target);
}

/// Running-variable designs: Beta(1,1), Beta(2,4) and Beta(14,7), each
/// mapped to [-1, 1] by X = 2Z - 1 with the cutoff at X = 0 (Z = 0.5).
enum class RunningVariable { RV1, RV2, RV3 };

constexpr std::string_view to_string(RunningVariable rv) noexcept {
  switch (rv) {
    case RunningVariable::RV1: return "RV1";
    case RunningVariable::RV2: return "RV2";
    case RunningVariable::RV3: return "RV3";
  }
  return "unknown";
}

inline RunningVariable running_variable_from_string(std::string_view s) {
  if (s == "RV1") return RunningVariable::RV1;
  if (s == "RV2") return RunningVariable::RV2;
  if (s == "RV3") return RunningVariable::RV3;
  throw Error(ErrorCode::InvalidArgument, "unknown running variable '" + std::string(s) + "'");
}

/// Beta spec on the unit (Z) scale.
inline BetaSpec unit_beta_spec(RunningVariable rv) {
  switch (rv) {
    case RunningVariable::RV1: return {1.0, 1.0, 1.0, 0.0};
    case RunningVariable::RV2: return {2.0, 4.0, 1.0, 0.0};
    case RunningVariable::RV3: return {14.0, 7.0, 1.0, 0.0};
  }
  return {};
}

/// Beta spec on the running-variable (X = 2Z - 1) scale.
inline BetaSpec running_beta_spec(RunningVariable rv) {
  auto spec = unit_beta_spec(rv);
  spec.scale = 2.0;
  spec.shift = -1.0;
  return spec;
}

}  // namespace rdsmall
