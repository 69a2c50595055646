#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdsmall/bandwidth.hpp"
#include "rdsmall/core.hpp"
#include "rdsmall/detail/numeric.hpp"
#include "rdsmall/error.hpp"
#include "rdsmall/kernel_regression.hpp"

namespace rdsmall {

enum class InferenceMethod { CV, RBC, FLCI, LR };

constexpr std::string_view to_string(InferenceMethod m) noexcept {
  switch (m) {
    case InferenceMethod::CV: return "CV";
    case InferenceMethod::RBC: return "RBC";
    case InferenceMethod::FLCI: return "FLCI";
    case InferenceMethod::LR: return "LR";
  }
  return "unknown";
}

/// Critical value cv solving P(|N(t, 1)| <= cv) = 1 - alpha.
struct FoldedNormalCV {
  double t = 0.0;
  double alpha = 0.05;
  double cv = 0.0;
};

inline FoldedNormalCV folded_normal_cv(double t, double alpha) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw Error(ErrorCode::InvalidArgument, "folded normal shape must be >= 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  const double target = 1.0 - alpha;
  // Phi(cv - t) - Phi(-cv - t) falls in t, so the root is never below
  // z_{1-alpha/2}; t + z + 1 already has at least 1 - alpha mass inside.
  const double z = detail::normal_quantile(1.0 - alpha / 2.0);
  auto coverage = [&](double cv) { return detail::normal_cdf(cv - t) - detail::normal_cdf(-cv - t) - target; };
  // For t near 0 the shortfall at z is O(t^2) and rounds away.
  if (t == 0.0 || coverage(z) >= 0.0) return {t, alpha, z};
  const double cv = std::max(z, detail::bisect(coverage, z, t + z + 1.0, 1e-13));
  return {t, alpha, cv};
}

/// Two-sided standard normal critical value z_{alpha/2}.
inline double normal_critical_value(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  return detail::normal_quantile(1.0 - alpha / 2.0);
}

/// Estimated bias and the linear estimator it induces.
///
/// With the bias bandwidth equal to the main bandwidth the corrected
/// estimator is a single linear functional; `combined_weights` are its
/// weights and c_term = SE_RBC^2 - SE_CV^2.
struct BiasCorrection {
  double b_hat = 0.0;
  std::vector<double> combined_weights;
  double c_term = 0.0;
};

/// Local linear fits on both sides plus per-observation variances: the shared
/// ingredients of every continuity interval.
struct ContinuityFit {
  double tau_hat = 0.0;
  LinearFit below;
  LinearFit above;
  std::vector<double> weights;  // above - below
  double se = 0.0;
};

inline ContinuityFit continuity_fit(const RDSample& sample, double h, Kernel kernel, std::span<const double> sigma2) {
  if (sigma2.size() != sample.size()) throw Error(ErrorCode::LengthMismatch, "variance vector length differs from sample");
  ContinuityFit out;
  auto late = late_point_estimate(sample, 1, h, kernel);
  out.tau_hat = late.tau_hat;
  out.below = std::move(late.below);
  out.above = std::move(late.above);
  out.weights = contrast_weights(out.below, out.above);
  out.se = se_of_linear_functional(out.weights, sigma2);
  return out;
}

inline std::vector<double> nn_variance_checked(const RDSample& sample, int neighbours) {
  const auto split = validate(sample);
  if (split.empty_side()) throw Error(ErrorCode::InsufficientData, "a side of the cutoff is empty");
  return nn_variance(sample, split, neighbours);
}

/// Conventional interval tau_hat +/- z_{alpha/2} SE.
inline EffectEstimate cv_interval(const RDSample& sample, double h, Kernel kernel, double alpha,
                                  std::span<const double> sigma2) {
  const auto fit = continuity_fit(sample, h, kernel, sigma2);
  const double z = normal_critical_value(alpha);
  EffectEstimate e;
  e.tau_hat = fit.tau_hat;
  e.se = fit.se;
  e.ci_lower = fit.tau_hat - z * fit.se;
  e.ci_upper = fit.tau_hat + z * fit.se;
  e.alpha = alpha;
  e.bandwidth = h;
  e.inference_label = "CV";
  return e;
}

inline EffectEstimate cv_interval(const RDSample& sample, double h, Kernel kernel = Kernel::Triangular,
                                  double alpha = 0.05, int neighbours = 3) {
  const auto sigma2 = nn_variance_checked(sample, neighbours);
  return cv_interval(sample, h, kernel, alpha, sigma2);
}

/// Bias correction from local quadratic fits on the same window.
///
/// B-hat = (1/2)(mu''_+ kappa_+ - mu''_- kappa_-), kappa = sum_i w_i (x_i - c)^2
/// over the local linear weights of that side.
inline BiasCorrection bias_correction(const RDSample& sample, const ContinuityFit& fit, Kernel kernel,
                                      std::span<const double> sigma2) {
  const double h = fit.below.bandwidth;
  const double c = sample.cutoff();
  const auto& x = sample.x();
  BiasCorrection out;
  out.combined_weights = fit.weights;
  for (const auto* lin : {&fit.below, &fit.above}) {
    const auto quad = detail::side_poly_fit(sample, lin->side, 2, h, kernel);
    double kappa = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) kappa += lin->weights[i] * (x[i] - c) * (x[i] - c);
    // Row 2 holds the weights of the quadratic coefficient, mu'' / 2.
    double half_curv = 0.0;
    for (std::size_t k = 0; k < quad.index.size(); ++k) {
      half_curv += quad.coef(2, static_cast<Eigen::Index>(k)) * sample.y()[quad.index[k]];
    }
    const double sign = lin->side == Side::Above ? 1.0 : -1.0;
    out.b_hat += sign * half_curv * kappa;
    for (std::size_t k = 0; k < quad.index.size(); ++k) {
      out.combined_weights[quad.index[k]] -= sign * kappa * quad.coef(2, static_cast<Eigen::Index>(k));
    }
  }
  const double se_rbc = se_of_linear_functional(out.combined_weights, sigma2);
  out.c_term = se_rbc * se_rbc - fit.se * fit.se;
  return out;
}

struct RbcResult {
  EffectEstimate estimate;
  BiasCorrection correction;
  double tau_conventional = 0.0;
  double se_conventional = 0.0;
};

/// Robust bias-corrected interval (tau_CV - B) +/- z sqrt(SE_CV^2 + C).
inline RbcResult rbc_interval_detail(const RDSample& sample, double h, Kernel kernel, double alpha,
                                     std::span<const double> sigma2) {
  const auto fit = continuity_fit(sample, h, kernel, sigma2);
  RbcResult out;
  out.correction = bias_correction(sample, fit, kernel, sigma2);
  out.tau_conventional = fit.tau_hat;
  out.se_conventional = fit.se;
  const double z = normal_critical_value(alpha);
  const double center = fit.tau_hat - out.correction.b_hat;
  const double se = std::sqrt(std::max(0.0, fit.se * fit.se + out.correction.c_term));
  auto& e = out.estimate;
  e.tau_hat = center;
  e.se = se;
  e.ci_lower = center - z * se;
  e.ci_upper = center + z * se;
  e.alpha = alpha;
  e.bandwidth = h;
  e.inference_label = "RBC";
  return out;
}

inline EffectEstimate rbc_interval(const RDSample& sample, double h, Kernel kernel, double alpha,
                                   std::span<const double> sigma2) {
  return rbc_interval_detail(sample, h, kernel, alpha, sigma2).estimate;
}

inline EffectEstimate rbc_interval(const RDSample& sample, double h, Kernel kernel = Kernel::Triangular,
                                   double alpha = 0.05, int neighbours = 3) {
  const auto sigma2 = nn_variance_checked(sample, neighbours);
  return rbc_interval(sample, h, kernel, alpha, sigma2);
}

/// Worst-case bias of tau_hat over {|mu''| <= M}: (M/2) sum |w_i| (x_i - c)^2
/// over both sides. Exact when w_i keeps one sign on each side, an upper
/// bound otherwise.
inline double worst_case_bias(const LinearFit& below, const LinearFit& above, double cutoff,
                              std::span<const double> x, double m) {
  double s = 0.0;
  for (const auto* fit : {&below, &above}) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - cutoff;
      s += std::abs(fit->weights[i]) * d * d;
    }
  }
  return 0.5 * m * s;
}

/// True when some side's local linear weights change sign, i.e. the worst-case
/// bias above is a bound rather than the supremum.
inline bool worst_case_bias_is_bound(const LinearFit& below, const LinearFit& above) {
  for (const auto* fit : {&below, &above}) {
    bool pos = false;
    bool neg = false;
    for (double w : fit->weights) {
      pos = pos || w > 0.0;
      neg = neg || w < 0.0;
    }
    if (pos && neg) return true;
  }
  return false;
}

struct FlciResult {
  EffectEstimate estimate;
  double worst_case_bias = 0.0;
  FoldedNormalCV critical;
  bool bias_is_bound = false;
};

/// Fixed-length interval tau_CV +/- cv_{1-alpha}(B / SE) SE.
inline FlciResult flci_interval_detail(const RDSample& sample, double h, Kernel kernel, double alpha,
                                       CurvatureBound bound, std::span<const double> sigma2) {
  if (!(bound.value >= 0.0) || !std::isfinite(bound.value)) {
    throw Error(ErrorCode::InvalidArgument, "curvature bound must be finite and nonnegative");
  }
  const auto fit = continuity_fit(sample, h, kernel, sigma2);
  if (!(fit.se > 0.0)) throw Error(ErrorCode::ZeroSE, "standard error is zero; worst-case bias ratio undefined");
  FlciResult out;
  out.worst_case_bias = worst_case_bias(fit.below, fit.above, sample.cutoff(), sample.x(), bound.value);
  out.bias_is_bound = worst_case_bias_is_bound(fit.below, fit.above);
  out.critical = folded_normal_cv(out.worst_case_bias / fit.se, alpha);
  auto& e = out.estimate;
  e.tau_hat = fit.tau_hat;
  e.se = fit.se;
  e.ci_lower = fit.tau_hat - out.critical.cv * fit.se;
  e.ci_upper = fit.tau_hat + out.critical.cv * fit.se;
  e.alpha = alpha;
  e.bandwidth = h;
  e.inference_label = "FLCI";
  return out;
}

inline EffectEstimate flci_interval(const RDSample& sample, double h, Kernel kernel, double alpha,
                                    CurvatureBound bound, std::span<const double> sigma2) {
  return flci_interval_detail(sample, h, kernel, alpha, bound, sigma2).estimate;
}

inline EffectEstimate flci_interval(const RDSample& sample, double h, Kernel kernel, double alpha,
                                    CurvatureBound bound, int neighbours = 3) {
  const auto sigma2 = nn_variance_checked(sample, neighbours);
  return flci_interval(sample, h, kernel, alpha, bound, sigma2);
}

}  // namespace rdsmall
