#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "rdsmall/core.hpp"
#include "rdsmall/detail/numeric.hpp"
#include "rdsmall/detail/rng.hpp"
#include "rdsmall/error.hpp"

namespace rdsmall {

/// How select_window treats a side with fewer observations than requested.
enum class WindowRule {
  Strict,      // InsufficientData
  Saturating,  // take the whole side; at least one observation still required
};

/// Symmetric window |x - c| <= half_width, split by side.
struct LRWindow {
  double half_width = 0.0;
  std::vector<std::size_t> indices_below;
  std::vector<std::size_t> indices_above;
  int min_per_side = 5;
};

/// Smallest symmetric window holding at least `min_per_side` observations on
/// each side: the larger of the two per-side order statistics of |x - c|.
inline LRWindow select_window(const RDSample& sample, int min_per_side, WindowRule rule = WindowRule::Strict) {
  if (min_per_side < 1) throw Error(ErrorCode::InvalidArgument, "window minimum must be at least 1");
  const auto split = validate(sample);
  const double c = sample.cutoff();
  const auto& x = sample.x();
  const auto need = static_cast<std::size_t>(min_per_side);
  double w = 0.0;
  for (const auto* side : {&split.below, &split.above}) {
    std::size_t k = need;
    if (side->size() < need) {
      if (rule == WindowRule::Strict || side->empty()) {
        throw Error(ErrorCode::InsufficientData, std::string(side == &split.below ? "below" : "above") +
                                                     " side has " + std::to_string(side->size()) +
                                                     " observations; window needs " + std::to_string(need));
      }
      k = side->size();
    }
    std::vector<double> d;
    d.reserve(side->size());
    for (auto i : *side) d.push_back(std::abs(x[i] - c));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    w = std::max(w, d[k - 1]);
  }
  LRWindow out;
  out.half_width = w;
  out.min_per_side = min_per_side;
  for (auto i : split.below) {
    if (std::abs(x[i] - c) <= w) out.indices_below.push_back(i);
  }
  for (auto i : split.above) {
    if (std::abs(x[i] - c) <= w) out.indices_above.push_back(i);
  }
  return out;
}

/// Responses inside a window, by assignment.
struct WindowData {
  std::vector<double> control;  // below the cutoff
  std::vector<double> treated;  // at or above the cutoff
};

inline WindowData window_data(const RDSample& sample, const LRWindow& window) {
  WindowData out;
  for (auto i : window.indices_below) out.control.push_back(sample.y()[i]);
  for (auto i : window.indices_above) out.treated.push_back(sample.y()[i]);
  return out;
}

inline double difference_in_means(const WindowData& data) {
  if (data.control.empty() || data.treated.empty()) {
    throw Error(ErrorCode::EmptyWindowSide, "window has no observations on one side");
  }
  return detail::mean(data.treated) - detail::mean(data.control);
}

struct PermutationConfig {
  std::uint64_t max_exact = 20000;
  std::size_t n_mc = 999;
  std::uint64_t seed = 0;
};

enum class PermutationMode { Exact, MonteCarlo };

constexpr std::string_view to_string(PermutationMode m) noexcept {
  return m == PermutationMode::Exact ? "Exact" : "MonteCarlo";
}

struct PermutationResult {
  double observed_stat = 0.0;
  double p_value = 1.0;
  std::size_t n_assignments_evaluated = 0;
  PermutationMode mode = PermutationMode::Exact;
};

namespace detail {

/// C(n, k), saturating at `cap + 1` so large windows do not overflow.
inline std::uint64_t binomial_capped(std::size_t n, std::size_t k, std::uint64_t cap) {
  k = std::min(k, n - k);
  long double r = 1.0L;
  for (std::size_t i = 1; i <= k; ++i) {
    r = r * static_cast<long double>(n - k + i) / static_cast<long double>(i);
    if (r > static_cast<long double>(cap)) return cap + 1;
  }
  return static_cast<std::uint64_t>(std::llround(r));
}

}  // namespace detail

/// Randomization distribution of the difference in means under fixed margins.
///
/// For an assignment T of n1 units to treatment, the statistic computed on
/// y_i - tau0 * D_i is A_T - tau0 * B_T, where B_T depends only on how many
/// originally treated units T contains. Assignments are grouped by that count
/// with A_T sorted, so each p-value costs a few binary searches.
class PermutationDistribution {
 public:
  PermutationDistribution(const WindowData& data, const PermutationConfig& config) {
    if (data.control.empty() || data.treated.empty()) {
      throw Error(ErrorCode::EmptyWindowSide, "window has no observations on one side");
    }
    n0_ = data.control.size();
    n1_ = data.treated.size();
    const std::size_t nw = n0_ + n1_;
    pooled_.reserve(nw);
    pooled_.insert(pooled_.end(), data.treated.begin(), data.treated.end());
    pooled_.insert(pooled_.end(), data.control.begin(), data.control.end());
    for (double v : pooled_) {
      total_ += v;
      scale_ = std::max(scale_, std::abs(v));
    }
    groups_.assign(n1_ + 1, {});
    const auto count = detail::binomial_capped(nw, n1_, config.max_exact);
    if (count <= config.max_exact) {
      mode_ = PermutationMode::Exact;
      enumerate();
    } else {
      mode_ = PermutationMode::MonteCarlo;
      sample(config);
    }
    for (auto& g : groups_) std::sort(g.begin(), g.end());
  }

  PermutationMode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return evaluated_; }
  std::size_t n_control() const noexcept { return n0_; }
  std::size_t n_treated() const noexcept { return n1_; }

  /// Observed statistic after removing tau0 from the treated responses.
  double observed(double tau0) const { return observed_a_ - tau0; }

  /// Share of assignments with |stat| >= |observed|; ties count as extreme.
  double p_value(double tau0) const {
    const double t = std::abs(observed(tau0));
    const double tol = 1e-9 * (scale_ + std::abs(tau0) + 1.0);
    const double cut = t - tol;
    std::size_t extreme = 0;
    for (std::size_t k = 0; k <= n1_; ++k) {
      const auto& g = groups_[k];
      if (g.empty()) continue;
      if (cut <= 0.0) {
        extreme += g.size();
        continue;
      }
      const double shift = tau0 * b_of(k);
      // A - shift >= cut  or  A - shift <= -cut
      extreme += static_cast<std::size_t>(g.end() - std::lower_bound(g.begin(), g.end(), shift + cut));
      extreme += static_cast<std::size_t>(std::upper_bound(g.begin(), g.end(), shift - cut) - g.begin());
    }
    return static_cast<double>(extreme) / static_cast<double>(evaluated_);
  }

  PermutationResult test(double tau0) const {
    return {observed(tau0), p_value(tau0), evaluated_, mode_};
  }

 private:
  double b_of(std::size_t k) const {
    const double n1 = static_cast<double>(n1_);
    const double n0 = static_cast<double>(n0_);
    return static_cast<double>(k) / n1 - static_cast<double>(n1_ - k) / n0;
  }

  // Positions [0, n1) of pooled_ hold the observed treated units.
  void record(const std::vector<std::size_t>& chosen) {
    double s = 0.0;
    std::size_t k = 0;
    for (auto p : chosen) {
      s += pooled_[p];
      k += p < n1_ ? 1 : 0;
    }
    const double a = s / static_cast<double>(n1_) - (total_ - s) / static_cast<double>(n0_);
    groups_[k].push_back(a);
    ++evaluated_;
  }

  void enumerate() {
    const std::size_t nw = pooled_.size();
    std::vector<std::size_t> chosen(n1_);
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    observed_a_ = assignment_stat(chosen);
    while (true) {
      record(chosen);
      std::size_t i = n1_;
      while (i > 0 && chosen[i - 1] == nw - n1_ + i - 1) --i;
      if (i == 0) break;
      ++chosen[i - 1];
      for (std::size_t j = i; j < n1_; ++j) chosen[j] = chosen[j - 1] + 1;
    }
  }

  void sample(const PermutationConfig& config) {
    const std::size_t nw = pooled_.size();
    std::vector<std::size_t> chosen(n1_);
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    observed_a_ = assignment_stat(chosen);
    record(chosen);
    detail::Stream rng(config.seed);
    std::vector<std::size_t> perm(nw);
    for (std::size_t r = 0; r < config.n_mc; ++r) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t j = 0; j < n1_; ++j) {
        const auto pick = j + static_cast<std::size_t>(rng.below(nw - j));
        std::swap(perm[j], perm[pick]);
      }
      chosen.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n1_));
      record(chosen);
    }
  }

  double assignment_stat(const std::vector<std::size_t>& chosen) const {
    double s = 0.0;
    for (auto p : chosen) s += pooled_[p];
    return s / static_cast<double>(n1_) - (total_ - s) / static_cast<double>(n0_);
  }

  std::vector<double> pooled_;
  std::vector<std::vector<double>> groups_;
  std::size_t n0_ = 0;
  std::size_t n1_ = 0;
  std::size_t evaluated_ = 0;
  double total_ = 0.0;
  double scale_ = 0.0;
  double observed_a_ = 0.0;
  PermutationMode mode_ = PermutationMode::Exact;
};

/// Sharp-null test of Y_i(1) - Y_i(0) = tau0 for every unit in the window.
inline PermutationResult permutation_test(const WindowData& data, double tau0, const PermutationConfig& config = {}) {
  return PermutationDistribution(data, config).test(tau0);
}

struct GridSpec {
  double half_width_sd = 6.0;
  std::size_t points = 401;
};

struct LRResult {
  EffectEstimate estimate;
  PermutationMode mode = PermutationMode::Exact;
  std::size_t n_assignments = 0;
  double grid_step = 0.0;
  bool disconnected = false;  // non-rejected grid points do not form one run
  bool truncated = false;     // a grid endpoint was not rejected
};

namespace detail {

inline double pooled_sd(const WindowData& data) {
  const std::size_t n0 = data.control.size();
  const std::size_t n1 = data.treated.size();
  if (n0 + n1 <= 2) return 0.0;
  double ss = 0.0;
  if (n0 > 1) ss += sample_variance(data.control) * static_cast<double>(n0 - 1);
  if (n1 > 1) ss += sample_variance(data.treated) * static_cast<double>(n1 - 1);
  return std::sqrt(ss / static_cast<double>(n0 + n1 - 2));
}

}  // namespace detail

/// Difference-in-means estimate with the interval obtained by inverting the
/// permutation test over a grid centered on the estimate. The reported
/// interval is the hull of the grid points with p > alpha.
inline LRResult lr_interval(const WindowData& data, double alpha, const GridSpec& grid = {},
                            const PermutationConfig& config = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  if (grid.points < 1) throw Error(ErrorCode::InvalidArgument, "grid needs at least one point");
  const PermutationDistribution dist(data, config);
  const double center = difference_in_means(data);
  const double half = grid.half_width_sd * detail::pooled_sd(data);
  LRResult out;
  out.mode = dist.mode();
  out.n_assignments = dist.size();
  const std::size_t g = half > 0.0 ? grid.points : 1;
  out.grid_step = g > 1 ? 2.0 * half / static_cast<double>(g - 1) : 0.0;
  double lo = INFINITY;
  double hi = -INFINITY;
  int runs = 0;
  bool prev = false;
  for (std::size_t k = 0; k < g; ++k) {
    const double tau0 = g > 1 ? center - half + out.grid_step * static_cast<double>(k) : center;
    const bool keep = dist.p_value(tau0) > alpha;
    if (keep) {
      lo = std::min(lo, tau0);
      hi = std::max(hi, tau0);
      if (!prev) ++runs;
      if (g > 1 && (k == 0 || k + 1 == g)) out.truncated = true;
    }
    prev = keep;
  }
  if (runs == 0) {
    // Every grid point rejected, which needs alpha >= p at the estimate.
    lo = hi = center;
  }
  out.disconnected = runs > 1;
  auto& e = out.estimate;
  e.tau_hat = center;
  e.ci_lower = lo;
  e.ci_upper = hi;
  e.alpha = alpha;
  e.inference_label = "LR";
  return out;
}

/// Window selection plus interval for a sample.
inline LRResult lr_estimate(const RDSample& sample, int min_per_side, double alpha, WindowRule rule = WindowRule::Strict,
                            const GridSpec& grid = {}, const PermutationConfig& config = {}) {
  const auto window = select_window(sample, min_per_side, rule);
  auto out = lr_interval(window_data(sample, window), alpha, grid, config);
  out.estimate.bandwidth = window.half_width;
  out.estimate.bandwidth_label = "LR" + std::to_string(min_per_side);
  return out;
}

}  // namespace rdsmall
