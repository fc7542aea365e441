#pragma once

// Calibration regularizers computed on a mini-batch, each returning its value
// and gradient with respect to its inputs (PIT values or predicted quantiles).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "calibreg/dist_core.hpp"

namespace calibreg {

struct ValueGrad {
  double value = 0.0;
  std::vector<double> grad;
};

inline constexpr double kSpacingFloor = 1e-12;

// Soft ranks r_i = 1 + sum_{j != i} sigmoid(tau (Z_i - Z_j)).
inline std::vector<double> soft_ranks(std::span<const double> z, double tau) {
  const std::size_t n = z.size();
  std::vector<double> r(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) r[i] += sigmoid(tau * (z[i] - z[j]));
  return r;
}

// Soft order statistics: Z~_(k) = sum_i w_ki Z_i with w_k. = softmax over i of
// -(r_i - k)^2 / (2 h^2), h = N / tau. An infinite tau gives the hard sort.
class SoftSort {
 public:
  SoftSort(std::span<const double> z, double tau) : z_(z.begin(), z.end()), tau_(tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("SoftSort: tau must be positive");
    const std::size_t n = z_.size();
    values_.resize(n);
    if (std::isinf(tau_)) {
      perm_.resize(n);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      std::stable_sort(perm_.begin(), perm_.end(), [&](std::size_t a, std::size_t b) { return z_[a] < z_[b]; });
      for (std::size_t k = 0; k < n; ++k) values_[k] = z_[perm_[k]];
      return;
    }
    ranks_ = soft_ranks(z_, tau_);
    h2_ = std::pow(static_cast<double>(n) / tau_, 2);
    weights_.assign(n * n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      double* w = &weights_[k * n];
      double mx = -kInf;
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, logit(i, k));
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (w[i] = std::exp(logit(i, k) - mx));
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += (w[i] /= s) * z_[i];
      values_[k] = v;
    }
  }

  const std::vector<double>& values() const { return values_; }

  // Vector-Jacobian product: gradient w.r.t. Z given gradient w.r.t. the
  // order statistics.
  std::vector<double> vjp(std::span<const double> g) const {
    const std::size_t n = z_.size();
    std::vector<double> out(n, 0.0);
    if (std::isinf(tau_)) {
      for (std::size_t k = 0; k < n; ++k) out[perm_[k]] += g[k];
      return out;
    }
    std::vector<double> gr(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      if (g[k] == 0.0) continue;
      const double* w = &weights_[k * n];
      const double kk = static_cast<double>(k + 1);
      for (std::size_t i = 0; i < n; ++i) {
        out[i] += g[k] * w[i];
        gr[i] += g[k] * w[i] * (z_[i] - values_[k]) * (-(ranks_[i] - kk) / h2_);
      }
    }
    for (std::size_t m = 0; m < n; ++m)
      for (std::size_t j = 0; j < n; ++j)
        if (j != m) out[m] += tau_ * sigmoid_prime(tau_ * (z_[m] - z_[j])) * (gr[m] - gr[j]);
    return out;
  }

 private:
  double logit(std::size_t i, std::size_t k) const {
    const double d = ranks_[i] - static_cast<double>(k + 1);
    return -d * d / (2.0 * h2_);
  }

  std::vector<double> z_;
  double tau_;
  std::vector<double> values_, ranks_, weights_;
  std::vector<std::size_t> perm_;
  double h2_ = 0.0;
};

namespace detail {

inline double abs_pow(double d, double p) { return std::pow(std::abs(d), p); }

inline double abs_pow_grad(double d, double p) {
  if (d == 0.0) return 0.0;
  return p * std::pow(std::abs(d), p - 1.0) * (d > 0.0 ? 1.0 : -1.0);
}

}  // namespace detail

// Vasicek m-spacing entropy estimate on hard-sorted values:
// (1/(N-k)) sum_i log(((N+1)/k) (Z_(i+k) - Z_(i))).
inline double spacing_entropy(std::span<const double> z, std::size_t k) {
  const std::size_t n = z.size();
  if (k < 1 || n <= k) throw std::invalid_argument("spacing_entropy: requires 1 <= k <= N-1");
  std::vector<double> s(z.begin(), z.end());
  std::sort(s.begin(), s.end());
  const double c = static_cast<double>(n + 1) / static_cast<double>(k);
  double h = 0.0;
  for (std::size_t i = 0; i + k < n; ++i) h += std::log(c * std::max(s[i + k] - s[i], kSpacingFloor));
  return h / static_cast<double>(n - k);
}

// QR regularizer: the negated spacing entropy of the PITs on soft order
// statistics, a sample estimate of the KL divergence from the uniform law.
// Smallest at equispaced PITs.
inline ValueGrad reg_qr(std::span<const double> z, std::size_t k, double tau_sort) {
  const std::size_t n = z.size();
  if (k < 1 || n <= k) throw std::invalid_argument("reg_qr: requires 1 <= k <= N-1");
  const SoftSort sorted(z, tau_sort);
  const auto& s = sorted.values();
  const double c = static_cast<double>(n + 1) / static_cast<double>(k);
  const double denom = static_cast<double>(n - k);
  double h = 0.0;
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i + k < n; ++i) {
    const double gap = s[i + k] - s[i];
    if (gap < kSpacingFloor) {
      h += std::log(c * kSpacingFloor);
      continue;
    }
    h += std::log(c * gap);
    g[i + k] -= 1.0 / (denom * gap);
    g[i] += 1.0 / (denom * gap);
  }
  return {-h / denom, sorted.vjp(g)};
}

// PCE on soft order statistics against plotting positions i/(N+1).
inline ValueGrad reg_pce_sort(std::span<const double> z, double p, double tau_sort) {
  if (!(p > 0.0)) throw std::invalid_argument("reg_pce_sort: p must be positive");
  const std::size_t n = z.size();
  if (n == 0) return {0.0, {}};
  const SoftSort sorted(z, tau_sort);
  const auto& s = sorted.values();
  const double nd = static_cast<double>(n);
  double value = 0.0;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = s[i] - static_cast<double>(i + 1) / (nd + 1.0);
    value += detail::abs_pow(d, p);
    g[i] = detail::abs_pow_grad(d, p) / nd;
  }
  return {value / nd, sorted.vjp(g)};
}

// PCE between the levels and the KDE calibration map of the PITs.
inline ValueGrad reg_pce_kde(std::span<const double> z, std::span<const double> levels, double tau, double p) {
  if (!(tau > 0.0)) throw std::invalid_argument("reg_pce_kde: tau must be positive");
  if (!(p > 0.0)) throw std::invalid_argument("reg_pce_kde: p must be positive");
  const std::size_t n = z.size();
  const std::size_t m = levels.size();
  std::vector<double> g(n, 0.0);
  if (n == 0 || m == 0) return {0.0, g};
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  double value = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double phi = 0.0;
    for (double zi : z) phi += sigmoid(tau * (levels[j] - zi));
    const double d = levels[j] - phi / nd;
    value += detail::abs_pow(d, p);
    const double psi = detail::abs_pow_grad(d, p);
    if (psi == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) g[i] += psi * tau * sigmoid_prime(tau * (levels[j] - z[i])) / (nd * md);
  }
  return {value / md, g};
}

// Truncation regularizer on predicted quantiles q[i * M + j] = Q(alpha_j | X_i).
// Levels where the coverage is below alpha_j push quantiles up, the others
// push them down; the branch choice itself carries no gradient.
inline ValueGrad reg_trunc(std::span<const double> q, std::span<const double> y, std::span<const double> levels) {
  const std::size_t n = y.size();
  const std::size_t m = levels.size();
  if (q.size() != n * m) throw std::invalid_argument("reg_trunc: expected N x M quantiles");
  std::vector<double> g(q.size(), 0.0);
  if (n == 0 || m == 0) return {0.0, g};
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  double value = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double covered = 0.0;
    for (std::size_t i = 0; i < n; ++i) covered += y[i] <= q[i * m + j] ? 1.0 : 0.0;
    const bool under = covered / nd < levels[j];
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double qi = q[i * m + j];
      if (under && qi < y[i]) {
        r += y[i] - qi;
        g[i * m + j] = -1.0 / (nd * md);
      } else if (!under && y[i] < qi) {
        r += qi - y[i];
        g[i * m + j] = 1.0 / (nd * md);
      }
    }
    value += r / nd;
  }
  return {value / md, g};
}

}  // namespace calibreg
