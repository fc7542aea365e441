#pragma once

// Output heads mapping raw network outputs to predictive distributions, with
// gradients of losses, PIT values and quantiles with respect to the raw
// outputs.
//
// Mixture head layout for K components: [logits(K) | means(K) | raw stds(K)],
// weights = softmax(logits), std = softplus(raw) + kMinStd.
// Quantile head: M raw values paired, after sorting, with midpoint levels.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "calibreg/dist_core.hpp"

namespace calibreg {

inline constexpr double kMinStd = 1e-3;

enum class HeadKind { Mixture, Quantile };

struct HeadSpec {
  HeadKind kind = HeadKind::Mixture;
  std::size_t size = 3;  // K components or M quantiles

  std::size_t output_dim() const { return kind == HeadKind::Mixture ? 3 * size : size; }
};

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

inline std::vector<double> softmax(std::span<const double> a) {
  const double mx = *std::max_element(a.begin(), a.end());
  std::vector<double> w(a.size());
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (w[k] = std::exp(a[k] - mx));
  for (double& x : w) x /= s;
  return w;
}

inline GaussianMixture mixture_from_raw(std::span<const double> raw, std::size_t k_count) {
  if (raw.size() != 3 * k_count) throw std::invalid_argument("mixture_from_raw: expected 3K outputs");
  std::vector<double> mu(raw.begin() + static_cast<std::ptrdiff_t>(k_count),
                         raw.begin() + static_cast<std::ptrdiff_t>(2 * k_count));
  std::vector<double> sd(k_count);
  for (std::size_t k = 0; k < k_count; ++k) sd[k] = softplus(raw[2 * k_count + k]) + kMinStd;
  return GaussianMixture(softmax(raw.first(k_count)), std::move(mu), std::move(sd));
}

inline PredictiveDistribution distribution_from_raw(const HeadSpec& head, std::span<const double> raw) {
  if (raw.size() != head.output_dim()) throw std::invalid_argument("distribution_from_raw: output size mismatch");
  if (head.kind == HeadKind::Mixture) return mixture_from_raw(raw, head.size);
  return QuantileGrid(midpoint_levels(head.size), std::vector<double>(raw.begin(), raw.end()));
}

namespace detail {

// Index of the raw output holding each sorted quantile.
inline std::vector<std::size_t> sort_permutation(std::span<const double> raw) {
  std::vector<std::size_t> perm(raw.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return raw[a] < raw[b]; });
  return perm;
}

// Converts gradients w.r.t. (weights, means, stds) into gradients w.r.t. raw
// outputs in place.
inline void mixture_chain(std::span<const double> raw, const GaussianMixture& gm, std::span<double> g) {
  const std::size_t k_count = gm.size();
  double dot = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) dot += gm.weights()[k] * g[k];
  for (std::size_t k = 0; k < k_count; ++k) {
    g[k] = gm.weights()[k] * (g[k] - dot);
    g[2 * k_count + k] *= sigmoid(raw[2 * k_count + k]);
  }
}

}  // namespace detail

// NLL of a mixture head; gradient written to grad (size 3K).
inline double nll_raw(std::span<const double> raw, std::size_t k_count, double y, std::span<double> grad) {
  const GaussianMixture gm = mixture_from_raw(raw, k_count);
  std::vector<double> t(k_count), z(k_count);
  double best = -kInf;
  for (std::size_t k = 0; k < k_count; ++k) {
    z[k] = (y - gm.means()[k]) / gm.stds()[k];
    t[k] = std::log(gm.weights()[k]) + log_normal_pdf(z[k]) - std::log(gm.stds()[k]);
    best = std::max(best, t[k]);
  }
  double s = 0.0;
  for (double v : t) s += std::exp(v - best);
  const double value = -(best + std::log(s));
  // d/da_k of -logsumexp(t) is w_k - r_k for responsibilities r.
  for (std::size_t k = 0; k < k_count; ++k) {
    const double r = std::exp(t[k] - best) / s;
    const double sd = gm.stds()[k];
    grad[k] = gm.weights()[k] - r;
    grad[k_count + k] = -r * z[k] / sd;
    grad[2 * k_count + k] = -r * (z[k] * z[k] - 1.0) / sd * sigmoid(raw[2 * k_count + k]);
  }
  return value;
}

// Closed-form CRPS of a mixture head; gradient written to grad (size 3K).
inline double crps_mixture_raw(std::span<const double> raw, std::size_t k_count, double y, std::span<double> grad) {
  const GaussianMixture gm = mixture_from_raw(raw, k_count);
  const auto& w = gm.weights();
  const auto& mu = gm.means();
  const auto& sd = gm.stds();
  const auto a_m = [](double m, double s) { return 2.0 * normal_cdf(m / s) - 1.0; };
  const auto a_s = [](double m, double s) { return 2.0 * normal_pdf(m / s); };
  std::fill(grad.begin(), grad.end(), 0.0);
  for (std::size_t k = 0; k < k_count; ++k) {
    grad[k] += detail::crps_a_term(y - mu[k], sd[k]);
    grad[k_count + k] -= w[k] * a_m(y - mu[k], sd[k]);
    grad[2 * k_count + k] += w[k] * a_s(y - mu[k], sd[k]);
    for (std::size_t l = 0; l < k_count; ++l) {
      const double s = std::sqrt(sd[k] * sd[k] + sd[l] * sd[l]);
      const double d = mu[k] - mu[l];
      grad[k] -= w[l] * detail::crps_a_term(d, s);
      grad[k_count + k] -= w[k] * w[l] * a_m(d, s);
      grad[2 * k_count + k] -= w[k] * w[l] * a_s(d, s) * sd[k] / s;
    }
  }
  detail::mixture_chain(raw, gm, grad);
  return crps_mixture(gm, y);
}

// CRPS of the sorted quantile grid (mean quantile score); gradient w.r.t. the
// unsorted raw outputs.
inline double crps_grid_raw(std::span<const double> raw, double y, std::span<double> grad) {
  const std::size_t m = raw.size();
  const auto levels = midpoint_levels(m);
  const auto perm = detail::sort_permutation(raw);
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double q = raw[perm[j]];
    s += quantile_score(levels[j], q, y);
    grad[perm[j]] = 2.0 * ((y <= q ? 1.0 : 0.0) - levels[j]) / static_cast<double>(m);
  }
  return s / static_cast<double>(m);
}

// PIT of y under the head output, with its gradient.
inline double pit_raw(const HeadSpec& head, std::span<const double> raw, double y, std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  if (head.kind == HeadKind::Mixture) {
    const std::size_t k_count = head.size;
    const GaussianMixture gm = mixture_from_raw(raw, k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      const double sd = gm.stds()[k];
      const double z = (y - gm.means()[k]) / sd;
      grad[k] = normal_cdf(z);
      grad[k_count + k] = -gm.weights()[k] * normal_pdf(z) / sd;
      grad[2 * k_count + k] = -gm.weights()[k] * normal_pdf(z) * z / sd;
    }
    detail::mixture_chain(raw, gm, grad);
    return mixture_cdf(gm, y);
  }
  const std::size_t m = head.size;
  const auto perm = detail::sort_permutation(raw);
  const QuantileGrid qg(midpoint_levels(m), std::vector<double>(raw.begin(), raw.end()));
  const double value = grid_cdf(qg, y);
  const auto& v = qg.values();
  const auto& l = qg.levels();
  if (m == 1) return value;
  const double lo = qg.support_low();
  const double hi = qg.support_high();
  const double span_v = v.back() - v.front();
  const double span_l = l.back() - l.front();
  if (y < lo || y >= hi || !(span_v > 0.0)) return value;
  if (y < v.front()) {
    grad[perm.front()] = span_l * (y - v.back()) / (span_v * span_v);
    grad[perm.back()] = -span_l * (y - v.front()) / (span_v * span_v);
  } else if (y >= v.back()) {
    grad[perm.front()] = span_l * (y - v.back()) / (span_v * span_v);
    grad[perm.back()] = span_l * (v.front() - y) / (span_v * span_v);
  } else {
    const auto it = std::upper_bound(v.begin(), v.end(), y);
    const std::size_t i = static_cast<std::size_t>(it - v.begin()) - 1;
    const double dv = v[i + 1] - v[i];
    const double dl = l[i + 1] - l[i];
    grad[perm[i]] = dl * (y - v[i + 1]) / (dv * dv);
    grad[perm[i + 1]] = -dl * (y - v[i]) / (dv * dv);
  }
  return value;
}

// Quantile at level alpha of a mixture head, with its implicit gradient
// -dF/dtheta / f at the quantile.
inline double mixture_quantile_raw(std::span<const double> raw, std::size_t k_count, double alpha,
                                   std::span<double> grad) {
  const GaussianMixture gm = mixture_from_raw(raw, k_count);
  const double q = mixture_quantile(gm, alpha);
  const HeadSpec head{HeadKind::Mixture, k_count};
  pit_raw(head, raw, q, grad);
  const double f = mixture_pdf(gm, q);
  for (double& g : grad) g = f > 0.0 ? -g / f : 0.0;
  return q;
}

}  // namespace calibreg
