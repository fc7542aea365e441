#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "calibreg/metrics.hpp"
#include "calibreg/regularizers.hpp"

using namespace calibreg;

namespace {

std::vector<double> uniform_sample(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> z(n);
  for (double& x : z) x = u(rng);
  return z;
}

// One PIT per stratum of [0,1], shuffled, so spacings stay comparable to the
// soft-sort kernel width.
std::vector<double> stratified_sample(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (double(i) + u(rng)) / double(n);
  std::shuffle(z.begin(), z.end(), rng);
  return z;
}

std::vector<double> plotting_positions(std::size_t n) {
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = double(i + 1) / double(n + 1);
  return z;
}

// Fourth-order central differences of f at x along every coordinate, compared
// with grad.
void expect_gradient(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                     const std::vector<double>& grad, double h = 1e-4, double tol = 1e-4) {
  ASSERT_EQ(grad.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    const auto at = [&](double d) {
      x[i] = x0 + d;
      const double v = f(x);
      x[i] = x0;
      return v;
    };
    const double fd = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
    EXPECT_LE(std::abs(fd - grad[i]), tol * std::max(std::abs(fd), std::abs(grad[i])) + 1e-8)
        << "coordinate " << i << " fd " << fd << " analytic " << grad[i];
  }
}

}  // namespace

TEST(SoftSort, InfiniteTauIsHardSort) {
  const std::vector<double> z = {0.7, 0.1, 0.4, 0.9};
  const SoftSort s(z, kInf);
  EXPECT_EQ(s.values(), (std::vector<double>{0.1, 0.4, 0.7, 0.9}));
  const auto g = s.vjp(std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(g, (std::vector<double>{3, 1, 2, 4}));
  EXPECT_THROW(SoftSort(z, 0.0), std::invalid_argument);
}

TEST(SoftSort, LargeTauApproachesHardSort) {
  std::mt19937_64 rng(41);
  const auto z = uniform_sample(20, rng);
  auto sorted = z;
  std::sort(sorted.begin(), sorted.end());
  const SoftSort s(z, 1e5);
  for (std::size_t k = 0; k < z.size(); ++k) EXPECT_NEAR(s.values()[k], sorted[k], 1e-6);
}

TEST(SoftSort, SoftRanksMatchPairwiseCount) {
  const std::vector<double> z = {0.3, 0.1, 0.2};
  const auto r = soft_ranks(z, 1e9);
  EXPECT_NEAR(r[0], 3.0, 1e-12);
  EXPECT_NEAR(r[1], 1.0, 1e-12);
  EXPECT_NEAR(r[2], 2.0, 1e-12);
  const auto flat = soft_ranks(z, 1e-12);
  for (double x : flat) EXPECT_NEAR(x, 2.0, 1e-9);
}

TEST(SoftSort, VjpMatchesFiniteDifferences) {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 20; ++t) {
    const auto z = uniform_sample(8, rng);
    const auto g = uniform_sample(8, rng, -1.0, 1.0);
    const auto f = [&](const std::vector<double>& x) {
      const SoftSort s(x, 10.0);
      double v = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) v += g[k] * s.values()[k];
      return v;
    };
    expect_gradient(f, z, SoftSort(z, 10.0).vjp(g));
  }
}

TEST(SpacingEntropy, HandExamples) {
  EXPECT_NEAR(spacing_entropy(plotting_positions(9), 1), 0.0, 1e-14);
  EXPECT_NEAR(spacing_entropy(std::vector<double>{0.2, 0.6}, 1), std::log(3 * 0.4), 1e-15);
  EXPECT_NEAR(spacing_entropy(std::vector<double>{0.2, 0.6}, 1), 0.18232, 1e-5);
  EXPECT_THROW(spacing_entropy(std::vector<double>{0.2, 0.6}, 2), std::invalid_argument);
  EXPECT_THROW(spacing_entropy(std::vector<double>{0.2, 0.6}, 0), std::invalid_argument);
}

TEST(RegQr, IsNegatedEntropyUnderHardSort) {
  EXPECT_NEAR(reg_qr(plotting_positions(9), 1, kInf).value, 0.0, 1e-14);
  EXPECT_NEAR(reg_qr(std::vector<double>{0.2, 0.6}, 1, kInf).value, -std::log(1.2), 1e-15);
  EXPECT_NEAR(reg_qr(std::vector<double>{0.6, 0.2}, 1, kInf).value, -std::log(1.2), 1e-15);
  EXPECT_THROW(reg_qr(std::vector<double>{0.5}, 1, kInf), std::invalid_argument);
}

TEST(RegQr, PermutationInvariantUnderHardSort) {
  std::mt19937_64 rng(43);
  auto z = uniform_sample(30, rng);
  const double v = reg_qr(z, 3, kInf).value;
  for (int t = 0; t < 10; ++t) {
    std::shuffle(z.begin(), z.end(), rng);
    EXPECT_DOUBLE_EQ(reg_qr(z, 3, kInf).value, v);
  }
}

TEST(RegQr, FloorsCoincidentSpacings) {
  const auto r = reg_qr(std::vector<double>{0.5, 0.5, 0.9}, 1, kInf);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_NEAR(r.value, -0.5 * (std::log(4 * 1e-12) + std::log(4 * 0.4)), 1e-12);
}

// Interior points move, the k smallest and k largest stay put; equispaced
// PITs then give the smallest value.
TEST(RegQr, MinimizedAtEquispacedPits) {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (std::size_t k : {1u, 2u, 4u}) {
    const std::size_t n = 24;
    const auto z0 = plotting_positions(n);
    const double best = reg_qr(z0, k, kInf).value;
    for (int t = 0; t < 100; ++t) {
      auto z = z0;
      for (std::size_t i = k; i + k < n; ++i) z[i] = std::clamp(z[i] + noise(rng), z0[k - 1], z0[n - k]);
      EXPECT_GE(reg_qr(z, k, kInf).value, best - 1e-12);
    }
  }
}

TEST(RegQr, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(45);
  for (int t = 0; t < 20; ++t) {
    const auto z = stratified_sample(10, rng);
    const std::size_t k = 1 + t % 3;
    const double tau = t % 2 ? 30.0 : 10.0;
    expect_gradient([&](const std::vector<double>& x) { return reg_qr(x, k, tau).value; }, z, reg_qr(z, k, tau).grad);
  }
}

// The training temperature is sharper than h = 1e-4 resolves, so use a finer step.
TEST(RegQr, GradientAtTrainingTemperature) {
  std::mt19937_64 rng(52);
  for (int t = 0; t < 20; ++t) {
    const auto z = stratified_sample(10, rng);
    const std::size_t k = 1 + t % 3;
    expect_gradient([&](const std::vector<double>& x) { return reg_qr(x, k, 100.0).value; }, z,
                    reg_qr(z, k, 100.0).grad, 1e-5);
  }
}

TEST(RegTrunc, HandExamples) {
  const std::vector<double> half = {0.5};
  EXPECT_DOUBLE_EQ(reg_trunc(std::vector<double>{0, 0}, std::vector<double>{1, 2}, half).value, 1.5);
  EXPECT_DOUBLE_EQ(reg_trunc(std::vector<double>{3, 3}, std::vector<double>{1, 2}, half).value, 1.5);
  const std::vector<double> y = {0.3, -1.0};
  EXPECT_DOUBLE_EQ(reg_trunc(std::vector<double>{0.3, 0.3, -1.0, -1.0}, y, std::vector<double>{0.25, 0.75}).value, 0.0);
  EXPECT_THROW(reg_trunc(std::vector<double>{0.0}, std::vector<double>{1, 2}, half), std::invalid_argument);
}

TEST(RegTrunc, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(46);
  const auto levels = midpoint_levels(5);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 12;
    const auto y = uniform_sample(n, rng, -2.0, 2.0);
    auto q = uniform_sample(n * levels.size(), rng, -2.0, 2.0);
    // keep every quantile clear of its target so no probe flips the coverage gate
    for (std::size_t i = 0; i < q.size(); ++i)
      if (std::abs(q[i] - y[i / levels.size()]) < 1e-2) q[i] += 2e-2;
    expect_gradient([&](const std::vector<double>& x) { return reg_trunc(x, y, levels).value; }, q,
                    reg_trunc(q, y, levels).grad);
  }
}

TEST(RegPceKde, HandExamples) {
  EXPECT_DOUBLE_EQ(reg_pce_kde(std::vector<double>{0.5}, std::vector<double>{0.5}, 7.0, 1.0).value, 0.0);
  EXPECT_NEAR(reg_pce_kde(std::vector<double>(5, 0.0), std::vector<double>{0.5}, 1e9, 1.0).value, 0.5, 1e-12);
  EXPECT_THROW(reg_pce_kde(std::vector<double>{0.5}, std::vector<double>{0.5}, 0.0, 1.0), std::invalid_argument);
}

TEST(RegPceKde, LargeTauApproachesPce) {
  std::mt19937_64 rng(47);
  for (int t = 0; t < 10; ++t) {
    const auto z = uniform_sample(200, rng);
    const auto levels = pce_levels(100);
    // keep PITs away from the levels so the hard indicator is well defined
    bool clear = true;
    for (double x : z)
      for (double a : levels) clear = clear && std::abs(x - a) > 1e-4;
    if (!clear) continue;
    EXPECT_NEAR(reg_pce_kde(z, levels, 1e6, 1.0).value, pce(z, 100, 1.0), 1e-3);
  }
}

TEST(RegPceKde, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(48);
  for (int t = 0; t < 20; ++t) {
    const auto z = uniform_sample(15, rng);
    const auto levels = pce_levels(9);
    const double p = t % 2 ? 1.0 : 2.0;
    expect_gradient([&](const std::vector<double>& x) { return reg_pce_kde(x, levels, 20.0, p).value; }, z,
                    reg_pce_kde(z, levels, 20.0, p).grad);
  }
}

TEST(RegPceSort, HandExamples) {
  EXPECT_NEAR(reg_pce_sort(plotting_positions(7), 1.0, kInf).value, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(reg_pce_sort(std::vector<double>{0.9}, 1.0, kInf).value, 0.4);
  EXPECT_DOUBLE_EQ(reg_pce_sort(std::vector<double>{0.9}, 1.0, 100.0).value, 0.4);
  EXPECT_THROW(reg_pce_sort(std::vector<double>{0.9}, 0.0, kInf), std::invalid_argument);
}

TEST(RegPceSort, PermutationInvariantUnderHardSort) {
  std::mt19937_64 rng(49);
  auto z = uniform_sample(25, rng);
  const double v = reg_pce_sort(z, 1.0, kInf).value;
  for (int t = 0; t < 10; ++t) {
    std::shuffle(z.begin(), z.end(), rng);
    EXPECT_DOUBLE_EQ(reg_pce_sort(z, 1.0, kInf).value, v);
  }
}

TEST(RegPceSort, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(50);
  for (int t = 0; t < 20; ++t) {
    const auto z = stratified_sample(10, rng);
    const double p = t % 2 ? 1.0 : 2.0;
    const double tau = t % 4 < 2 ? 10.0 : 30.0;
    expect_gradient([&](const std::vector<double>& x) { return reg_pce_sort(x, p, tau).value; }, z,
                    reg_pce_sort(z, p, tau).grad);
    expect_gradient([&](const std::vector<double>& x) { return reg_pce_sort(x, p, 100.0).value; }, z,
                    reg_pce_sort(z, p, 100.0).grad, 1e-6);
  }
}

TEST(Regularizers, NonNegativeWhereDefined) {
  std::mt19937_64 rng(51);
  for (int t = 0; t < 100; ++t) {
    const auto z = uniform_sample(1 + t % 17, rng);
    EXPECT_GE(reg_pce_sort(z, 1.0, 100.0).value, 0.0);
    EXPECT_GE(reg_pce_kde(z, pce_levels(20), 100.0, 1.0).value, 0.0);
    const auto q = uniform_sample(z.size() * 3, rng, -1.0, 1.0);
    EXPECT_GE(reg_trunc(q, uniform_sample(z.size(), rng, -1.0, 1.0), midpoint_levels(3)).value, 0.0);
  }
}
