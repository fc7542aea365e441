#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "calibreg/metrics.hpp"

using namespace calibreg;

namespace {

// Direct PCE from the definition with a hand-rolled count.
double pce_oracle(const std::vector<double>& z, std::size_t m, double p) {
  double s = 0.0;
  for (std::size_t j = 1; j <= m; ++j) {
    const double a = double(j) / double(m + 1);
    double c = 0.0;
    for (double x : z) c += x <= a ? 1.0 : 0.0;
    s += std::pow(std::abs(a - c / double(z.size())), p);
  }
  return s / double(m);
}

}  // namespace

TEST(Pce, HandExamples) {
  // one PIT at 0.5, M = 1: |0.5 - 1| = 0.5
  EXPECT_DOUBLE_EQ(pce(std::vector<double>{0.5}, 1), 0.5);
  // M = 3, levels 0.25, 0.5, 0.75 and PITs {0.1, 0.6}: F = 0.5, 0.5, 1
  EXPECT_DOUBLE_EQ(pce(std::vector<double>{0.1, 0.6}, 3), (0.25 + 0.0 + 0.25) / 3.0);
  EXPECT_DOUBLE_EQ(pce(std::vector<double>{0.1, 0.6}, 3, 2.0), (0.0625 + 0.0 + 0.0625) / 3.0);
}

TEST(Pce, MatchesDefinitionOnRandomSamples) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> z(1 + t * 7);
    for (double& x : z) x = u(rng) * u(rng);
    for (double p : {0.5, 1.0, 2.0}) EXPECT_NEAR(pce(z, 100, p), pce_oracle(z, 100, p), 1e-14);
  }
}

TEST(Pce, ZeroWhenEcdfHitsEveryLevel) {
  // N = M + 1 PITs between consecutive levels j/(M+1)
  std::vector<double> z(100);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (double(i) + 0.5) / 100.0;
  EXPECT_LT(pce(z, 99), 1e-15);
  std::vector<double> pp(99);
  for (std::size_t i = 0; i < pp.size(); ++i) pp[i] = double(i + 1) / 100.0;
  EXPECT_NEAR(pce(pp, 99), pce_oracle(pp, 99, 1.0), 1e-15);
}

TEST(Pce, RejectsBadArguments) {
  EXPECT_THROW(pce(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(pce(std::vector<double>{0.5}, 0), std::invalid_argument);
  EXPECT_THROW(pce(std::vector<double>{0.5}, 10, 0.0), std::invalid_argument);
}

TEST(EmpiricalQuantile, Type7Interpolation) {
  const std::vector<double> s = {0.0, 1.0};
  EXPECT_DOUBLE_EQ(empirical_quantile_sorted(s, 0.25), 0.25);
  const std::vector<double> nine = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_DOUBLE_EQ(empirical_quantile_sorted(nine, 0.5), 5.0);
  EXPECT_DOUBLE_EQ(empirical_quantile_sorted(nine, 1.0), 9.0);
}

TEST(ReliabilityCurve, IsEmpiricalCdfOnGrid) {
  const std::vector<double> z = {0.1, 0.2, 0.2, 0.9};
  const std::vector<double> g = {0.15, 0.2, 0.5, 0.95};
  const auto c = reliability_curve(z, g);
  EXPECT_EQ(c.empirical, (std::vector<double>{0.25, 0.75, 0.75, 1.0}));
}

TEST(UniformEcdf, MultinomialChainHasUniformMoments) {
  std::mt19937_64 rng(32);
  const std::vector<double> grid = {0.1, 0.3, 0.5, 0.9};
  const std::size_t n = 50, sims = 40000;
  std::vector<double> mean(grid.size(), 0.0), var(grid.size(), 0.0);
  for (std::size_t s = 0; s < sims; ++s) {
    const auto f = simulate_uniform_ecdf(n, grid, rng);
    for (std::size_t j = 0; j < grid.size(); ++j) {
      mean[j] += f[j];
      var[j] += f[j] * f[j];
    }
  }
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double m = mean[j] / sims;
    const double v = var[j] / sims - m * m;
    const double expected_v = grid[j] * (1 - grid[j]) / n;
    EXPECT_NEAR(m, grid[j], 4 * std::sqrt(expected_v / sims));
    EXPECT_NEAR(v, expected_v, 0.05 * expected_v);
  }
}

TEST(UniformEcdf, AgreesWithDirectSimulationInDistribution) {
  // Compare the chain against sorting n explicit uniforms: the mean PCE of the
  // two simulators must agree.
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u;
  const std::size_t n = 30, sims = 20000;
  const auto grid = pce_levels(20);
  double chain = 0.0, direct = 0.0, direct_sq = 0.0;
  for (std::size_t s = 0; s < sims; ++s) {
    const auto f = simulate_uniform_ecdf(n, grid, rng);
    double a = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) a += std::abs(grid[j] - f[j]);
    chain += a / grid.size();
    std::vector<double> z(n);
    for (double& x : z) x = u(rng);
    const double d = pce(z, 20);
    direct += d;
    direct_sq += d * d;
  }
  const double sd = std::sqrt(direct_sq / sims - std::pow(direct / sims, 2));
  EXPECT_NEAR(chain / sims, direct / sims, 5 * sd * std::sqrt(2.0 / sims));
}

TEST(ConsistencyBand, DeterministicAndCoversDiagonal) {
  const auto grid = pce_levels(50);
  const auto a = consistency_band(200, 0.9, grid, 1000, 5);
  const auto b = consistency_band(200, 0.9, grid, 1000, 5);
  EXPECT_EQ(a.low, b.low);
  EXPECT_EQ(a.high, b.high);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    EXPECT_LE(a.low[j], grid[j] + 1e-12);
    EXPECT_GE(a.high[j], grid[j] - 1e-12);
  }
  EXPECT_THROW(consistency_band(200, 0.9, grid, 10, 5), std::invalid_argument);
}

TEST(Evaluate, MixtureForecastsUseClosedForms) {
  const std::vector<PredictiveDistribution> f = {GaussianMixture::normal(0, 1), GaussianMixture::normal(1, 2)};
  const std::vector<double> y = {0.0, 1.0};
  const auto r = evaluate(f, y);
  EXPECT_EQ(r.n, 2u);
  EXPECT_NEAR(r.crps, 0.5 * (crps_mixture(GaussianMixture::normal(0, 1), 0.0) +
                             crps_mixture(GaussianMixture::normal(1, 2), 1.0)),
              1e-15);
  EXPECT_NEAR(*r.nll, 0.5 * (0.5 * std::log(2 * M_PI) + 0.5 * std::log(2 * M_PI) + std::log(2.0)), 1e-12);
  EXPECT_NEAR(r.std_dev, 1.5, 1e-12);
  EXPECT_EQ(r.pits, (std::vector<double>{0.5, 0.5}));
}

TEST(Evaluate, RecalibratedCrpsMatchesNumericIntegration) {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u;
  // PITs away from 0 and 1 so the KDE map spans the quantile levels
  std::vector<double> z(80);
  for (double& x : z) x = 0.2 + 0.6 * u(rng);
  const auto map = std::make_shared<const CalibrationMap>(fit_calibration_map(MapKind::Kde, z, 100.0));
  const RecalibratedDistribution rec(GaussianMixture::normal(0, 1), map);
  const std::vector<RecalibratedDistribution> f = {rec};
  EvalOptions opt;
  opt.crps_levels = 2000;
  for (double y : {-1.0, 0.4}) {
    const auto r = evaluate(f, std::vector<double>{y}, opt);
    const int steps = 40000;
    const double lo = -10, hi = 10, h = (hi - lo) / steps;
    double s = 0.0;
    for (int i = 0; i < steps; ++i) {
      const double x = lo + (i + 0.5) * h;
      const double d = rec.cdf(x) - (x >= y ? 1.0 : 0.0);
      s += d * d * h;
    }
    EXPECT_NEAR(r.crps, s, 2e-3);
    EXPECT_TRUE(r.nll.has_value());
  }
}

TEST(Evaluate, BandIsAttachedWhenRequested) {
  const std::vector<PredictiveDistribution> f(30, GaussianMixture::normal(0, 1));
  std::vector<double> y(30);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = -1.5 + 0.1 * i;
  EvalOptions opt;
  opt.band_level = 0.9;
  const auto r = evaluate(f, y, opt);
  EXPECT_EQ(r.reliability.band_low.size(), r.reliability.grid.size());
  EXPECT_THROW(evaluate(std::vector<PredictiveDistribution>{}, std::vector<double>{}), std::invalid_argument);
}
