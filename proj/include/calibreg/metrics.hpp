#pragma once

// Probabilistic calibration error, reliability diagrams and the evaluation of
// a set of forecasts against realized targets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "calibreg/calib_maps.hpp"
#include "calibreg/conformal.hpp"
#include "calibreg/dist_core.hpp"

namespace calibreg {

inline constexpr std::size_t kDefaultPceBins = 100;

// Pairwise (cascade) summation; fixed reduction order for reproducible sums.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline double mean_of(std::span<const double> x) { return x.empty() ? 0.0 : pairwise_sum(x) / static_cast<double>(x.size()); }

// Interior equidistant levels j / (M + 1), j = 1..M.
inline std::vector<double> pce_levels(std::size_t m) {
  std::vector<double> a(m);
  for (std::size_t j = 0; j < m; ++j) a[j] = static_cast<double>(j + 1) / static_cast<double>(m + 1);
  return a;
}

// Linear interpolation between order statistics at position (n-1)q + 1.
inline double empirical_quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double ecdf_sorted(std::span<const double> sorted, double alpha) {
  return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), alpha) - sorted.begin()) /
         static_cast<double>(sorted.size());
}

inline double pce_sorted(std::span<const double> sorted, std::size_t m, double p) {
  double s = 0.0;
  for (std::size_t j = 1; j <= m; ++j) {
    const double a = static_cast<double>(j) / static_cast<double>(m + 1);
    s += std::pow(std::abs(a - ecdf_sorted(sorted, a)), p);
  }
  return s / static_cast<double>(m);
}

inline double pce(std::span<const double> pit_values, std::size_t m = kDefaultPceBins, double p = 1.0) {
  if (pit_values.empty()) throw std::invalid_argument("pce: no PIT values");
  if (m == 0) throw std::invalid_argument("pce: M must be positive");
  if (!(p > 0.0)) throw std::invalid_argument("pce: p must be positive");
  std::vector<double> z(pit_values.begin(), pit_values.end());
  std::sort(z.begin(), z.end());
  return pce_sorted(z, m, p);
}

struct ReliabilityCurve {
  std::vector<double> grid;
  std::vector<double> empirical;
  std::vector<double> band_low;
  std::vector<double> band_high;

  bool has_band() const { return !band_low.empty(); }
};

inline ReliabilityCurve reliability_curve(std::span<const double> pit_values, std::span<const double> grid) {
  ReliabilityCurve c;
  c.grid.assign(grid.begin(), grid.end());
  if (grid.empty()) return c;
  if (pit_values.empty()) throw std::invalid_argument("reliability_curve: no PIT values");
  std::vector<double> z(pit_values.begin(), pit_values.end());
  std::sort(z.begin(), z.end());
  c.empirical.reserve(grid.size());
  for (double a : grid) c.empirical.push_back(ecdf_sorted(z, a));
  return c;
}

// Empirical CDF of n i.i.d. uniforms evaluated on an ascending grid. The
// counts falling between consecutive grid points are multinomial, drawn as a
// chain of conditional binomials, so the cost is O(|grid|) regardless of n.
template <class Rng>
std::vector<double> simulate_uniform_ecdf(std::size_t n, std::span<const double> grid, Rng& rng) {
  std::vector<double> out(grid.size());
  std::int64_t remaining = static_cast<std::int64_t>(n);
  std::int64_t cumulative = 0;
  double prev = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double g = std::clamp(grid[j], 0.0, 1.0);
    if (g > prev && remaining > 0) {
      const double p = prev >= 1.0 ? 0.0 : std::clamp((g - prev) / (1.0 - prev), 0.0, 1.0);
      std::binomial_distribution<std::int64_t> bin(remaining, p);
      const std::int64_t c = bin(rng);
      cumulative += c;
      remaining -= c;
      prev = g;
    }
    out[j] = static_cast<double>(cumulative) / static_cast<double>(n);
  }
  return out;
}

struct Band {
  std::vector<double> low;
  std::vector<double> high;
};

// Pointwise consistency band of the PIT reliability curve under uniform PITs.
inline Band consistency_band(std::size_t n, double level, std::span<const double> grid, std::size_t sims,
                             std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("consistency_band: n must be positive");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("consistency_band: level must lie in (0,1)");
  if (sims < 1000) throw std::invalid_argument("consistency_band: at least 1000 simulations required");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> per_point(grid.size(), std::vector<double>(sims));
  for (std::size_t s = 0; s < sims; ++s) {
    const auto f = simulate_uniform_ecdf(n, grid, rng);
    for (std::size_t j = 0; j < grid.size(); ++j) per_point[j][s] = f[j];
  }
  Band b;
  const double tail = 0.5 * (1.0 - level);
  for (auto& col : per_point) {
    std::sort(col.begin(), col.end());
    b.low.push_back(empirical_quantile_sorted(col, tail));
    b.high.push_back(empirical_quantile_sorted(col, 1.0 - tail));
  }
  return b;
}

// ------------------------------------------------------------ evaluation

struct EvalOptions {
  std::size_t pce_bins = kDefaultPceBins;
  double pce_p = 1.0;
  // Midpoint levels used to estimate CRPS (and STD) from quantiles when no
  // closed form exists.
  std::size_t crps_levels = 64;
  std::size_t reliability_points = 100;
  std::optional<double> band_level;  // e.g. 0.9; no band when empty
  std::size_t band_sims = 1000;
  std::uint64_t band_seed = 0;
};

struct MetricSummary {
  std::size_t n = 0;
  double pce = 0.0;
  double crps = 0.0;
  std::optional<double> nll;  // empty when unavailable (quantile grids)
  double std_dev = 0.0;
  ReliabilityCurve reliability;
  std::vector<double> pits;
};

namespace detail {

inline double forecast_pit(const PredictiveDistribution& d, double y) { return pit(d, y); }
inline double forecast_pit(const RecalibratedDistribution& d, double y) { return d.cdf(y); }
inline double forecast_pit(const DcpForecast& d, double y) { return d.cdf(y); }

inline std::optional<double> forecast_nll(const PredictiveDistribution& d, double y) {
  if (const auto* gm = std::get_if<GaussianMixture>(&d)) return nll(*gm, y);
  return std::nullopt;
}
inline std::optional<double> forecast_nll(const RecalibratedDistribution& d, double y) { return d.nll(y); }
inline std::optional<double> forecast_nll(const DcpForecast& d, double) {
  // discrete distribution: no density
  if (std::holds_alternative<GaussianMixture>(d.base())) return kInf;
  return std::nullopt;
}

// Quantile-based CRPS and STD at fixed midpoint levels; level inversions that
// do not depend on x are cached per map or calibrator.
class QuantileLevelCache {
 public:
  explicit QuantileLevelCache(std::size_t m) : levels_(midpoint_levels(m)) {}

  const std::vector<double>& base_levels(const RecalibratedDistribution& d) {
    const void* key = d.shared_map().get();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    std::vector<double> u(levels_.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = map_inverse(d.map(), levels_[j]);
    return cache_.emplace(key, std::move(u)).first->second;
  }
  const std::vector<double>& base_levels(const DcpForecast& d) {
    const void* key = d.shared_calibrator().get();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    std::vector<double> u(levels_.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = conformal_threshold(d.calibrator(), levels_[j]);
    return cache_.emplace(key, std::move(u)).first->second;
  }
  const std::vector<double>& levels() const { return levels_; }

 private:
  std::vector<double> levels_;
  std::map<const void*, std::vector<double>> cache_;
};

template <class F>
std::vector<double> forecast_quantiles(const F& d, QuantileLevelCache& cache) {
  const auto& u = cache.base_levels(d);
  std::vector<double> q(u.size());
  for (std::size_t j = 0; j < u.size(); ++j)
    q[j] = std::isinf(u[j]) ? kInf : detail::quantile_closed(d.base(), u[j]);
  return q;
}

inline double crps_from_quantiles(std::span<const double> levels, std::span<const double> q, double y) {
  double s = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) s += quantile_score(levels[j], q[j], y);
  return s / static_cast<double>(q.size());
}

inline double std_from_quantiles(std::span<const double> q) {
  for (double v : q)
    if (!std::isfinite(v)) return kInf;
  const double m = mean_of(q);
  double var = 0.0;
  for (double v : q) var += (v - m) * (v - m);
  return std::sqrt(var / static_cast<double>(q.size()));
}

inline void crps_and_std(const PredictiveDistribution& d, double y, QuantileLevelCache&, double& crps,
                         double& sd) {
  if (const auto* gm = std::get_if<GaussianMixture>(&d))
    crps = crps_mixture(*gm, y);
  else
    crps = crps_grid(std::get<QuantileGrid>(d), y);
  sd = sharpness_std(d);
}

template <class F>
void crps_and_std(const F& d, double y, QuantileLevelCache& cache, double& crps, double& sd) {
  const auto q = forecast_quantiles(d, cache);
  crps = crps_from_quantiles(cache.levels(), q, y);
  sd = std_from_quantiles(q);
}

}  // namespace detail

// F is PredictiveDistribution, RecalibratedDistribution or DcpForecast.
template <class F>
MetricSummary evaluate(std::span<const F> forecasts, std::span<const double> targets, const EvalOptions& opt = {}) {
  if (forecasts.size() != targets.size()) throw std::invalid_argument("evaluate: length mismatch");
  if (forecasts.empty()) throw std::invalid_argument("evaluate: no forecasts");
  const std::size_t n = forecasts.size();
  MetricSummary r;
  r.n = n;
  r.pits.resize(n);
  std::vector<double> crps(n), sd(n), nlls(n);
  bool nll_available = true;
  detail::QuantileLevelCache cache(opt.crps_levels);
  for (std::size_t i = 0; i < n; ++i) {
    r.pits[i] = detail::forecast_pit(forecasts[i], targets[i]);
    detail::crps_and_std(forecasts[i], targets[i], cache, crps[i], sd[i]);
    const auto l = detail::forecast_nll(forecasts[i], targets[i]);
    if (l)
      nlls[i] = *l;
    else
      nll_available = false;
  }
  r.pce = pce(r.pits, opt.pce_bins, opt.pce_p);
  r.crps = mean_of(crps);
  r.std_dev = mean_of(sd);
  if (nll_available) r.nll = mean_of(nlls);
  const auto grid = pce_levels(opt.reliability_points);
  r.reliability = reliability_curve(r.pits, grid);
  if (opt.band_level) {
    auto band = consistency_band(n, *opt.band_level, grid, opt.band_sims, opt.band_seed);
    r.reliability.band_low = std::move(band.low);
    r.reliability.band_high = std::move(band.high);
  }
  return r;
}

template <class F>
MetricSummary evaluate(const std::vector<F>& forecasts, const std::vector<double>& targets,
                       const EvalOptions& opt = {}) {
  return evaluate(std::span<const F>(forecasts), std::span<const double>(targets), opt);
}

}  // namespace calibreg
