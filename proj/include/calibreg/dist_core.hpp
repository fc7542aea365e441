#pragma once

// Predictive distributions produced by the regression models: Gaussian
// mixtures (MIX-* heads) and quantile grids (SQR head), with their CDF,
// quantile function, proper scores and sharpness.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace calibreg {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double log_normal_pdf(double z) {
  return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Derivative of the logistic sigmoid, i.e. the logistic density.
inline double sigmoid_prime(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

// ceil(x) that ignores representation error of a few ulps above an integer,
// so that e.g. ceil(100 * 0.3) is 30 and not 31.
inline std::size_t robust_ceil(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<std::size_t>(std::max(r, 0.0));
  return static_cast<std::size_t>(std::max(std::ceil(x), 0.0));
}

class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<double> means, std::vector<double> stds)
      : weights_(std::move(weights)), means_(std::move(means)), stds_(std::move(stds)) {
    if (weights_.empty()) throw std::invalid_argument("GaussianMixture: at least one component required");
    if (weights_.size() != means_.size() || weights_.size() != stds_.size())
      throw std::invalid_argument("GaussianMixture: weights, means and stds must have equal length");
    double total = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      if (!(weights_[k] >= 0.0)) throw std::invalid_argument("GaussianMixture: negative weight");
      if (!(stds_[k] > 0.0) || !std::isfinite(stds_[k]))
        throw std::invalid_argument("GaussianMixture: standard deviations must be positive");
      if (!std::isfinite(means_[k])) throw std::invalid_argument("GaussianMixture: non-finite mean");
      total += weights_[k];
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  }

  static GaussianMixture normal(double mean, double std) { return GaussianMixture({1.0}, {mean}, {std}); }

  std::size_t size() const { return weights_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& stds() const { return stds_; }

 private:
  std::vector<double> weights_;
  std::vector<double> means_;
  std::vector<double> stds_;
};

// Quantile levels with their predicted quantiles. Values are sorted at
// construction, which repairs quantile crossing without changing the set of
// predicted quantiles.
class QuantileGrid {
 public:
  QuantileGrid(std::vector<double> levels, std::vector<double> values)
      : levels_(std::move(levels)), values_(std::move(values)) {
    if (levels_.empty()) throw std::invalid_argument("QuantileGrid: at least one level required");
    if (levels_.size() != values_.size())
      throw std::invalid_argument("QuantileGrid: levels and values must have equal length");
    for (std::size_t j = 0; j < levels_.size(); ++j) {
      if (!(levels_[j] > 0.0 && levels_[j] < 1.0)) throw std::invalid_argument("QuantileGrid: levels must lie in (0,1)");
      if (j > 0 && !(levels_[j] > levels_[j - 1]))
        throw std::invalid_argument("QuantileGrid: levels must be strictly increasing");
      if (!std::isfinite(values_[j])) throw std::invalid_argument("QuantileGrid: non-finite quantile value");
    }
    std::sort(values_.begin(), values_.end());
  }

  std::size_t size() const { return levels_.size(); }
  const std::vector<double>& levels() const { return levels_; }
  const std::vector<double>& values() const { return values_; }

  // End points of the linearly extrapolated support (CDF 0 and 1).
  double support_low() const {
    if (size() == 1) return values_.front();
    const double slope = (values_.back() - values_.front()) / (levels_.back() - levels_.front());
    return values_.front() - slope * levels_.front();
  }
  double support_high() const {
    if (size() == 1) return values_.back();
    const double slope = (values_.back() - values_.front()) / (levels_.back() - levels_.front());
    return values_.back() + slope * (1.0 - levels_.back());
  }

 private:
  std::vector<double> levels_;
  std::vector<double> values_;
};

using PredictiveDistribution = std::variant<GaussianMixture, QuantileGrid>;

// Equidistant midpoint levels (j - 1/2) / M used by quantile heads.
inline std::vector<double> midpoint_levels(std::size_t m) {
  std::vector<double> levels(m);
  for (std::size_t j = 0; j < m; ++j) levels[j] = (static_cast<double>(j) + 0.5) / static_cast<double>(m);
  return levels;
}

// ---------------------------------------------------------------- mixtures

inline double mixture_cdf(const GaussianMixture& gm, double y) {
  if (std::isinf(y)) return y > 0 ? 1.0 : 0.0;
  double f = 0.0;
  for (std::size_t k = 0; k < gm.size(); ++k)
    f += gm.weights()[k] * normal_cdf((y - gm.means()[k]) / gm.stds()[k]);
  return std::clamp(f, 0.0, 1.0);
}

inline double mixture_pdf(const GaussianMixture& gm, double y) {
  double f = 0.0;
  for (std::size_t k = 0; k < gm.size(); ++k)
    f += gm.weights()[k] * normal_pdf((y - gm.means()[k]) / gm.stds()[k]) / gm.stds()[k];
  return f;
}

namespace detail {

// Bisection on the mixture CDF. Accepts alpha in [0,1]; the end points map to
// the infinite support bounds.
inline double mixture_quantile_closed(const GaussianMixture& gm, double alpha) {
  if (alpha <= 0.0) return -kInf;
  if (alpha >= 1.0) return kInf;
  const auto [mn, mx] = std::minmax_element(gm.means().begin(), gm.means().end());
  const double smax = *std::max_element(gm.stds().begin(), gm.stds().end());
  double lo = *mn - 10.0 * smax;
  double hi = *mx + 10.0 * smax;
  const double width = hi - lo;
  while (mixture_cdf(gm, lo) > alpha) lo -= width;
  while (mixture_cdf(gm, hi) < alpha) hi += width;
  // Bisect to machine resolution; this keeps the result monotone in alpha.
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = mixture_cdf(gm, mid);
    if (f < alpha)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(mid))) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline double mixture_quantile(const GaussianMixture& gm, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("mixture_quantile: alpha must lie in (0,1)");
  return detail::mixture_quantile_closed(gm, alpha);
}

inline double mixture_mean(const GaussianMixture& gm) {
  double m = 0.0;
  for (std::size_t k = 0; k < gm.size(); ++k) m += gm.weights()[k] * gm.means()[k];
  return m;
}

// ------------------------------------------------------------ quantile grids

inline double grid_cdf(const QuantileGrid& qg, double y) {
  const auto& v = qg.values();
  const auto& l = qg.levels();
  const std::size_t m = qg.size();
  if (m == 1) return y >= v.front() ? 1.0 : 0.0;
  const double lo = qg.support_low();
  const double hi = qg.support_high();
  if (y < lo) return 0.0;
  if (y >= hi) return 1.0;
  if (y < v.front()) {
    if (v.front() <= lo) return l.front();
    return std::clamp(l.front() * (y - lo) / (v.front() - lo), 0.0, 1.0);
  }
  if (y >= v.back()) {
    if (hi <= v.back()) return 1.0;
    return std::clamp(l.back() + (1.0 - l.back()) * (y - v.back()) / (hi - v.back()), 0.0, 1.0);
  }
  // last knot with value <= y
  const auto it = std::upper_bound(v.begin(), v.end(), y);
  const std::size_t i = static_cast<std::size_t>(it - v.begin()) - 1;
  const double t = (y - v[i]) / (v[i + 1] - v[i]);
  return l[i] + t * (l[i + 1] - l[i]);
}

namespace detail {

inline double grid_quantile_closed(const QuantileGrid& qg, double alpha) {
  const auto& v = qg.values();
  const auto& l = qg.levels();
  const std::size_t m = qg.size();
  if (m == 1) return v.front();
  if (alpha <= 0.0) return qg.support_low();
  if (alpha >= 1.0) return qg.support_high();
  if (alpha < l.front()) {
    const double lo = qg.support_low();
    return lo + (v.front() - lo) * alpha / l.front();
  }
  if (alpha >= l.back()) {
    const double hi = qg.support_high();
    return v.back() + (hi - v.back()) * (alpha - l.back()) / (1.0 - l.back());
  }
  const auto it = std::upper_bound(l.begin(), l.end(), alpha);
  const std::size_t i = static_cast<std::size_t>(it - l.begin()) - 1;
  const double t = (alpha - l[i]) / (l[i + 1] - l[i]);
  return v[i] + t * (v[i + 1] - v[i]);
}

}  // namespace detail

inline double grid_quantile(const QuantileGrid& qg, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("grid_quantile: alpha must lie in (0,1)");
  return detail::grid_quantile_closed(qg, alpha);
}

// ----------------------------------------------------- generic distribution

inline double pit(const PredictiveDistribution& dist, double y) {
  return std::visit(
      [y](const auto& d) {
        if constexpr (std::is_same_v<std::decay_t<decltype(d)>, GaussianMixture>)
          return mixture_cdf(d, y);
        else
          return grid_cdf(d, y);
      },
      dist);
}

inline double quantile(const PredictiveDistribution& dist, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("quantile: alpha must lie in (0,1)");
  return std::visit(
      [alpha](const auto& d) {
        if constexpr (std::is_same_v<std::decay_t<decltype(d)>, GaussianMixture>)
          return detail::mixture_quantile_closed(d, alpha);
        else
          return detail::grid_quantile_closed(d, alpha);
      },
      dist);
}

namespace detail {

// Quantile on the closed interval [0,1]; 0 and 1 give the support end points
// (infinite for mixtures).
inline double quantile_closed(const PredictiveDistribution& dist, double alpha) {
  return std::visit(
      [alpha](const auto& d) {
        if constexpr (std::is_same_v<std::decay_t<decltype(d)>, GaussianMixture>)
          return mixture_quantile_closed(d, alpha);
        else
          return grid_quantile_closed(d, alpha);
      },
      dist);
}

// E|X - m| for X ~ N(m0, s^2) shifted so that the argument is m = m0: the
// A(m, s^2) term of the mixture CRPS, taking the standard deviation directly.
inline double crps_a_term(double m, double s) {
  if (s <= 0.0) return std::abs(m);
  const double z = m / s;
  return m * (2.0 * normal_cdf(z) - 1.0) + 2.0 * s * normal_pdf(z);
}

}  // namespace detail

inline double crps_mixture(const GaussianMixture& gm, double y) {
  const auto& w = gm.weights();
  const auto& mu = gm.means();
  const auto& sd = gm.stds();
  const std::size_t k_count = gm.size();
  double first = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) first += w[k] * detail::crps_a_term(y - mu[k], sd[k]);
  double second = 0.0;
  for (std::size_t k = 0; k < k_count; ++k)
    for (std::size_t l = 0; l < k_count; ++l)
      second += w[k] * w[l] * detail::crps_a_term(mu[k] - mu[l], std::sqrt(sd[k] * sd[k] + sd[l] * sd[l]));
  return std::max(0.0, first - 0.5 * second);
}

// Quantile (pinball) score with factor 2, so that averaging over dense levels
// estimates the CRPS.
inline double quantile_score(double alpha, double q, double y) {
  return 2.0 * ((y <= q ? 1.0 : 0.0) - alpha) * (q - y);
}

inline double crps_grid(const QuantileGrid& qg, double y) {
  double s = 0.0;
  for (std::size_t j = 0; j < qg.size(); ++j) s += quantile_score(qg.levels()[j], qg.values()[j], y);
  return s / static_cast<double>(qg.size());
}

// Negative log-likelihood via log-sum-exp; +infinity when the density is 0.
inline double nll(const GaussianMixture& gm, double y) {
  double best = -kInf;
  std::vector<double> terms(gm.size());
  for (std::size_t k = 0; k < gm.size(); ++k) {
    const double w = gm.weights()[k];
    terms[k] = w > 0.0 ? std::log(w) + log_normal_pdf((y - gm.means()[k]) / gm.stds()[k]) - std::log(gm.stds()[k])
                       : -kInf;
    best = std::max(best, terms[k]);
  }
  if (!std::isfinite(best)) return kInf;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return -(best + std::log(s));
}

inline double sharpness_std(const PredictiveDistribution& dist) {
  if (const auto* gm = std::get_if<GaussianMixture>(&dist)) {
    double second = 0.0;
    for (std::size_t k = 0; k < gm->size(); ++k)
      second += gm->weights()[k] * (gm->stds()[k] * gm->stds()[k] + gm->means()[k] * gm->means()[k]);
    const double mean = mixture_mean(*gm);
    return std::sqrt(std::max(0.0, second - mean * mean));
  }
  const auto& qg = std::get<QuantileGrid>(dist);
  constexpr std::size_t kPoints = 10000;
  std::vector<double> q(kPoints);
  for (std::size_t i = 0; i < kPoints; ++i)
    q[i] = detail::grid_quantile_closed(qg, (static_cast<double>(i) + 0.5) / kPoints);
  const double mean = std::accumulate(q.begin(), q.end(), 0.0) / kPoints;
  double var = 0.0;
  for (double v : q) var += (v - mean) * (v - mean);
  return std::sqrt(var / kPoints);
}

// Affine change of scale y -> shift + scale * y applied to a distribution.
inline PredictiveDistribution rescale(const PredictiveDistribution& dist, double shift, double scale) {
  if (const auto* gm = std::get_if<GaussianMixture>(&dist)) {
    std::vector<double> mu = gm->means();
    std::vector<double> sd = gm->stds();
    for (std::size_t k = 0; k < mu.size(); ++k) {
      mu[k] = shift + scale * mu[k];
      sd[k] *= scale;
    }
    return GaussianMixture(gm->weights(), std::move(mu), std::move(sd));
  }
  const auto& qg = std::get<QuantileGrid>(dist);
  std::vector<double> v = qg.values();
  for (double& x : v) x = shift + scale * x;
  return QuantileGrid(qg.levels(), std::move(v));
}

}  // namespace calibreg
