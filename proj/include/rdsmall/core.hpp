#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rdsmall/error.hpp"

namespace rdsmall {

inline constexpr const char* kVersion = "0.1.0";

/// Paired running-variable / response observations with a cutoff.
///
/// Treatment is never stored: an observation is treated iff x >= cutoff
/// (sharp design). Observations sitting exactly on the cutoff are therefore
/// treated, which matters for score data with ties at the threshold.
class RDSample {
 public:
  RDSample() = default;
  RDSample(std::vector<double> x, std::vector<double> y, double cutoff)
      : x_(std::move(x)), y_(std::move(y)), cutoff_(cutoff) {}

  const std::vector<double>& x() const noexcept { return x_; }
  const std::vector<double>& y() const noexcept { return y_; }
  double cutoff() const noexcept { return cutoff_; }
  std::size_t size() const noexcept { return x_.size(); }

  bool treated(std::size_t i) const { return x_[i] >= cutoff_; }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  double cutoff_ = 0.0;
};

/// Partition of sample indices by side of the cutoff.
struct SideSplit {
  std::vector<std::size_t> below;  // x < c
  std::vector<std::size_t> above;  // x >= c

  bool empty_side() const noexcept { return below.empty() || above.empty(); }
};

/// Checks lengths and finiteness and splits the sample by side.
///
/// An empty side is not an error here; it is reported through
/// SideSplit::empty_side() and rejected by the estimators that need both sides.
inline SideSplit validate(const RDSample& sample) {
  const auto& x = sample.x();
  const auto& y = sample.y();
  if (x.size() != y.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "x has " + std::to_string(x.size()) + " values, y has " + std::to_string(y.size()));
  }
  if (!std::isfinite(sample.cutoff())) {
    throw Error(ErrorCode::NonFinite, "cutoff is not finite");
  }
  SideSplit split;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw Error(ErrorCode::NonFinite, "observation " + std::to_string(i) + " is not finite");
    }
    (x[i] >= sample.cutoff() ? split.above : split.below).push_back(i);
  }
  return split;
}

/// x' = a x + b and c' = a c + b; y is untouched.
inline RDSample affine_transform(const RDSample& sample, double a, double b) {
  if (a == 0.0 || !std::isfinite(a) || !std::isfinite(b)) {
    throw Error(ErrorCode::ZeroScale, "affine scale must be finite and nonzero");
  }
  std::vector<double> x(sample.x());
  for (auto& v : x) v = a * v + b;
  return RDSample(std::move(x), sample.y(), a * sample.cutoff() + b);
}

/// Point estimate and interval for the local average treatment effect.
///
/// `tau_hat` is the method's own point estimate and the center of its interval:
/// the conventional estimate for CV and FLCI, the bias-corrected estimate for
/// RBC, and the window difference in means for local randomization.
struct EffectEstimate {
  double tau_hat = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double alpha = 0.05;
  double bandwidth = 0.0;  // bandwidth, or window half-width for local randomization
  std::string bandwidth_label;
  std::string inference_label;

  double width() const noexcept { return ci_upper - ci_lower; }
  bool covers(double value) const noexcept { return ci_lower <= value && value <= ci_upper; }
};

}  // namespace rdsmall
