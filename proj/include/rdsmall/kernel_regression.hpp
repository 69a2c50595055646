#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rdsmall/core.hpp"
#include "rdsmall/error.hpp"

namespace rdsmall {

enum class Kernel { Triangular, Uniform, Epanechnikov };

constexpr std::string_view to_string(Kernel k) noexcept {
  switch (k) {
    case Kernel::Triangular: return "triangular";
    case Kernel::Uniform: return "uniform";
    case Kernel::Epanechnikov: return "epanechnikov";
  }
  return "unknown";
}

inline Kernel kernel_from_string(std::string_view name) {
  if (name == "triangular") return Kernel::Triangular;
  if (name == "uniform") return Kernel::Uniform;
  if (name == "epanechnikov") return Kernel::Epanechnikov;
  throw Error(ErrorCode::InvalidArgument, "unknown kernel '" + std::string(name) + "'");
}

/// Kernel density on [-1, 1]; each integrates to one.
inline double kernel_weight(Kernel k, double u) noexcept {
  const double a = std::abs(u);
  switch (k) {
    case Kernel::Triangular: return a < 1.0 ? 1.0 - a : 0.0;
    case Kernel::Uniform: return a <= 1.0 ? 0.5 : 0.0;
    case Kernel::Epanechnikov: return a < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
  }
  return 0.0;
}

enum class Side { Below, Above };

/// A boundary local-polynomial fit expressed as weights on the responses.
///
/// `weights` spans the full sample and is zero off the fitted side and
/// outside the bandwidth; fitted_at_cutoff == sum_i weights[i] * y[i].
struct LinearFit {
  std::vector<double> weights;
  double fitted_at_cutoff = 0.0;
  Side side = Side::Below;
  int degree = 1;
  double bandwidth = 0.0;
  std::size_t n_effective = 0;
};

namespace detail {

inline bool on_side(double x, double c, Side side) noexcept {
  return side == Side::Above ? x >= c : x < c;
}

/// Weighted least squares through a column-pivoted QR of the weighted design.
/// Returns the p x m matrix L with beta = L y, or nullopt when the design is
/// rank deficient at relative tolerance 1e-10.
inline std::optional<Eigen::MatrixXd> coefficient_weights(const Eigen::MatrixXd& design,
                                                          const Eigen::VectorXd& obs_weights) {
  const auto m = design.rows();
  const auto p = design.cols();
  if (m < p) return std::nullopt;
  const Eigen::VectorXd root_w = obs_weights.array().sqrt();
  const Eigen::MatrixXd a = root_w.asDiagonal() * design;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  qr.setThreshold(1e-10);
  qr.compute(a);
  if (qr.rank() < p) return std::nullopt;
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd q_thin = qr.householderQ() * Eigen::MatrixXd::Identity(m, p);
  const Eigen::MatrixXd rinv_qt = r.template triangularView<Eigen::Upper>().solve(q_thin.transpose());
  Eigen::MatrixXd l = qr.colsPermutation() * rinv_qt;
  return l * root_w.asDiagonal();
}

inline std::optional<Eigen::VectorXd> least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  auto l = coefficient_weights(design, Eigen::VectorXd::Ones(design.rows()));
  if (!l) return std::nullopt;
  return Eigen::VectorXd(*l * y);
}

inline std::size_t count_distinct(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

/// One side's local polynomial fit: the in-window indices and the weight
/// rows for each coefficient of sum_j beta_j (x - c)^j.
struct SidePolyFit {
  std::vector<std::size_t> index;
  Eigen::MatrixXd coef;  // (degree + 1) x index.size()
};

inline SidePolyFit side_poly_fit(const RDSample& sample, Side side, int degree, double h, Kernel kernel) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw Error(ErrorCode::BadBandwidth, "bandwidth must be positive and finite");
  }
  if (degree < 1) throw Error(ErrorCode::InvalidArgument, "degree must be at least 1");
  const double c = sample.cutoff();
  const auto& x = sample.x();
  SidePolyFit fit;
  std::vector<double> u;
  std::vector<double> kw;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!on_side(x[i], c, side)) continue;
    const double ui = (x[i] - c) / h;
    const double k = kernel_weight(kernel, ui);
    if (k <= 0.0) continue;
    fit.index.push_back(i);
    u.push_back(ui);
    kw.push_back(k);
  }
  const auto p = static_cast<std::size_t>(degree) + 1;
  if (count_distinct(u) < p) {
    throw Error(ErrorCode::InsufficientData,
                std::string(side == Side::Above ? "above" : "below") + " side has fewer than " +
                    std::to_string(p) + " distinct points inside the bandwidth");
  }
  const auto m = static_cast<Eigen::Index>(u.size());
  Eigen::MatrixXd design(m, static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < m; ++i) {
    double pw = 1.0;
    for (std::size_t j = 0; j < p; ++j) {
      design(i, static_cast<Eigen::Index>(j)) = pw;
      pw *= u[static_cast<std::size_t>(i)];
    }
  }
  auto l = coefficient_weights(design, Eigen::Map<const Eigen::VectorXd>(kw.data(), m));
  if (!l) throw Error(ErrorCode::InsufficientData, "local polynomial design is rank deficient");
  // Undo the 1/h scaling of the design columns.
  double scale = 1.0;
  for (std::size_t j = 0; j < p; ++j) {
    l->row(static_cast<Eigen::Index>(j)) /= scale;
    scale *= h;
  }
  fit.coef = std::move(*l);
  return fit;
}

inline std::vector<double> scatter_row(const SidePolyFit& fit, Eigen::Index row, std::size_t n) {
  std::vector<double> w(n, 0.0);
  for (std::size_t k = 0; k < fit.index.size(); ++k) {
    w[fit.index[k]] = fit.coef(row, static_cast<Eigen::Index>(k));
  }
  return w;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Local polynomial regression of the given degree on one side of the
/// cutoff, centered at c. Throws InsufficientData when the side has too few
/// distinct in-window points or the weighted design is rank deficient.
inline LinearFit local_poly_fit(const RDSample& sample, Side side, int degree, double h,
                                Kernel kernel = Kernel::Triangular) {
  const auto fit = detail::side_poly_fit(sample, side, degree, h, kernel);
  LinearFit out;
  out.weights = detail::scatter_row(fit, 0, sample.size());
  out.fitted_at_cutoff = detail::dot(out.weights, sample.y());
  out.side = side;
  out.degree = degree;
  out.bandwidth = h;
  out.n_effective = fit.index.size();
  return out;
}

struct LatePoint {
  double tau_hat = 0.0;
  LinearFit below;
  LinearFit above;
};

inline LatePoint late_point_estimate(const RDSample& sample, int degree, double h,
                                     Kernel kernel = Kernel::Triangular) {
  LatePoint out;
  out.below = local_poly_fit(sample, Side::Below, degree, h, kernel);
  out.above = local_poly_fit(sample, Side::Above, degree, h, kernel);
  out.tau_hat = out.above.fitted_at_cutoff - out.below.fitted_at_cutoff;
  return out;
}

/// Weights of the contrast above - below.
inline std::vector<double> contrast_weights(const LinearFit& below, const LinearFit& above) {
  std::vector<double> w(above.weights);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= below.weights[i];
  return w;
}

/// Nearest-neighbour residual variances, one per observation.
///
/// sigma2_i = J/(J+1) * (y_i - mean of y over the J nearest same-side
/// neighbours)^2, distance |x_j - x_i|, ties broken toward the lower index.
inline std::vector<double> nn_variance(const RDSample& sample, const SideSplit& split, int neighbours = 3) {
  if (neighbours < 1) throw Error(ErrorCode::InvalidArgument, "neighbour count must be at least 1");
  const auto j = static_cast<std::size_t>(neighbours);
  const auto& x = sample.x();
  const auto& y = sample.y();
  std::vector<double> sigma2(sample.size(), 0.0);
  for (const auto* side : {&split.below, &split.above}) {
    if (side->size() <= j) {
      throw Error(ErrorCode::InsufficientData, "a side has " + std::to_string(side->size()) +
                                                   " observations; nearest-neighbour variance needs more than " +
                                                   std::to_string(j));
    }
    std::vector<std::size_t> order(*side);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    const auto m = order.size();
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t p = 0; p < m; ++p) {
      const double xi = x[order[p]];
      cand.clear();
      std::ptrdiff_t l = static_cast<std::ptrdiff_t>(p) - 1;
      std::size_t r = p + 1;
      auto dist_l = [&] { return l >= 0 ? xi - x[order[static_cast<std::size_t>(l)]] : INFINITY; };
      auto dist_r = [&] { return r < m ? x[order[r]] - xi : INFINITY; };
      while (cand.size() < j) {
        if (dist_l() <= dist_r()) {
          cand.emplace_back(dist_l(), order[static_cast<std::size_t>(l)]);
          --l;
        } else {
          cand.emplace_back(dist_r(), order[r]);
          ++r;
        }
      }
      // Pull in everything tied with the J-th distance before resolving ties.
      const double dj = cand.back().first;
      while (l >= 0 && dist_l() == dj) {
        cand.emplace_back(dj, order[static_cast<std::size_t>(l)]);
        --l;
      }
      while (r < m && dist_r() == dj) {
        cand.emplace_back(dj, order[r]);
        ++r;
      }
      std::sort(cand.begin(), cand.end());
      double s = 0.0;
      for (std::size_t k = 0; k < j; ++k) s += y[cand[k].second];
      const double resid = y[order[p]] - s / static_cast<double>(j);
      sigma2[order[p]] = static_cast<double>(j) / static_cast<double>(j + 1) * resid * resid;
    }
  }
  return sigma2;
}

/// sqrt(sum_i w_i^2 sigma2_i): the standard error of any estimator linear in y.
inline double se_of_linear_functional(std::span<const double> weights, std::span<const double> sigma2) {
  if (weights.size() != sigma2.size()) {
    throw Error(ErrorCode::LengthMismatch, "weights and variances differ in length");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * weights[i] * sigma2[i];
  return std::sqrt(s);
}

}  // namespace rdsmall
