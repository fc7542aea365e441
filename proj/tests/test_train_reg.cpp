#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "calibreg/data.hpp"
#include "calibreg/stats_harness.hpp"
#include "calibreg/train_reg.hpp"

using namespace calibreg;

namespace {

double fd4(const std::function<double(double)>& f, double h = 1e-4) {
  return (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h);
}

void expect_close(double fd, double an, const std::string& what, double tol = 1e-4) {
  EXPECT_LE(std::abs(fd - an), tol * std::max(std::abs(fd), std::abs(an)) + 1e-8)
      << what << " fd " << fd << " analytic " << an;
}

// Gradient of a head function g(raw, grad) against fourth-order central differences.
void check_head(std::vector<double> raw, const std::function<double(std::span<const double>, std::span<double>)>& g,
                const std::string& what) {
  std::vector<double> grad(raw.size()), scratch(raw.size());
  g(raw, grad);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double r0 = raw[i];
    const double fd = fd4([&](double d) {
      raw[i] = r0 + d;
      const double v = g(raw, scratch);
      raw[i] = r0;
      return v;
    });
    expect_close(fd, grad[i], what + " coordinate " + std::to_string(i));
  }
}

std::vector<double> normal_vector(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> z(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = z(rng);
  return v;
}

// Distinct values with gaps of at least 0.05, in random order.
std::vector<double> spread_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.5);
  std::vector<double> v(n);
  double x = -1.5;
  for (double& e : v) e = (x += u(rng));
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

Dataset make_dataset(SyntheticKind kind, std::size_t n, std::uint64_t seed) {
  const auto s = generate_synthetic(kind, n, seed);
  Dataset d{Eigen::MatrixXd(1, static_cast<Eigen::Index>(n)), s.y};
  for (std::size_t i = 0; i < n; ++i) d.x(0, static_cast<Eigen::Index>(i)) = s.x[i];
  return d;
}

NetworkConfig small_net(HeadSpec head, std::uint64_t seed = 1) {
  NetworkConfig net;
  net.hidden_layers = 2;
  net.units = 16;
  net.head = head;
  net.seed = seed;
  return net;
}

}  // namespace

TEST(HeadGradients, MixtureNll) {
  std::mt19937_64 rng(61);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 1 + t % 3;
    const double y = normal_vector(1, rng, 2.0)[0];
    check_head(normal_vector(3 * k, rng), [&](auto raw, auto g) { return nll_raw(raw, k, y, g); }, "nll");
  }
}

TEST(HeadGradients, MixtureNllValueAndStationaryMean) {
  const std::vector<double> raw = {0.0, 0.0, std::log(std::expm1(1.0 - kMinStd))};
  std::vector<double> g(3);
  EXPECT_NEAR(nll_raw(raw, 1, 0.0, g), 0.5 * std::log(2 * M_PI), 1e-12);
  EXPECT_NEAR(g[1], 0.0, 1e-15);
}

TEST(HeadGradients, MixtureCrps) {
  std::mt19937_64 rng(62);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 1 + t % 3;
    const double y = normal_vector(1, rng, 2.0)[0];
    const auto raw = normal_vector(3 * k, rng);
    check_head(raw, [&](auto r, auto g) { return crps_mixture_raw(r, k, y, g); }, "crps");
    std::vector<double> g(raw.size());
    EXPECT_NEAR(crps_mixture_raw(raw, k, y, g), crps_mixture(mixture_from_raw(raw, k), y), 1e-14);
  }
}

TEST(HeadGradients, QuantileGridCrps) {
  std::mt19937_64 rng(63);
  for (int t = 0; t < 20; ++t) {
    const auto raw = spread_vector(8, rng);
    const double y = normal_vector(1, rng, 2.0)[0];
    check_head(raw, [&](auto r, auto g) { return crps_grid_raw(r, y, g); }, "grid");
  }
}

TEST(HeadGradients, MixturePit) {
  std::mt19937_64 rng(64);
  for (int t = 0; t < 20; ++t) {
    const HeadSpec head{HeadKind::Mixture, 1 + std::size_t(t % 3)};
    const double y = normal_vector(1, rng)[0];
    check_head(normal_vector(head.output_dim(), rng), [&](auto r, auto g) { return pit_raw(head, r, y, g); }, "pit");
  }
}

TEST(HeadGradients, GridPitInsideAndInTails) {
  std::mt19937_64 rng(65);
  const HeadSpec head{HeadKind::Quantile, 6};
  for (int t = 0; t < 20; ++t) {
    const auto raw = spread_vector(6, rng);
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    // a point between knots, one in each tail
    std::vector<double> ys = {0.5 * (*lo + *hi) + 0.013, *lo - 0.01, *hi + 0.01};
    for (double y : ys) check_head(raw, [&](auto r, auto g) { return pit_raw(head, r, y, g); }, "grid pit");
  }
}

TEST(HeadGradients, MixtureQuantile) {
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 1 + t % 3;
    const double a = u(rng);
    check_head(normal_vector(3 * k, rng), [&](auto r, auto g) { return mixture_quantile_raw(r, k, a, g); },
               "quantile");
  }
}

TEST(NetworkGradients, EveryModelAndRegularizer) {
  struct Case {
    HeadSpec head;
    BaseLoss loss;
    RegKind reg;
  };
  const std::vector<Case> cases = {
      {{HeadKind::Mixture, 2}, BaseLoss::Nll, RegKind::None},
      {{HeadKind::Mixture, 2}, BaseLoss::Crps, RegKind::None},
      {{HeadKind::Quantile, 5}, BaseLoss::PinballGrid, RegKind::None},
      {{HeadKind::Mixture, 2}, BaseLoss::Nll, RegKind::Qr},
      {{HeadKind::Mixture, 2}, BaseLoss::Crps, RegKind::PceKde},
      {{HeadKind::Mixture, 2}, BaseLoss::Nll, RegKind::PceSort},
      {{HeadKind::Mixture, 2}, BaseLoss::Crps, RegKind::Trunc},
      {{HeadKind::Quantile, 5}, BaseLoss::PinballGrid, RegKind::Trunc},
      {{HeadKind::Quantile, 5}, BaseLoss::PinballGrid, RegKind::PceKde},
  };
  std::mt19937_64 rng(67);
  for (const auto& c : cases) {
    const std::string what = to_string(c.loss) + "+" + to_string(c.reg);
    nn::Mlp mlp(3, 2, 6, c.head.output_dim(), rng());
    // random biases too, so no hidden unit or quantile output sits exactly on a tie
    for (std::size_t i = 0; i < mlp.parameter_count(); ++i) mlp.parameter(i) += normal_vector(1, rng, 0.3)[0];
    TrainConfig cfg;
    cfg.base_loss = c.loss;
    cfg.regularizer = c.reg;
    cfg.lambda = c.reg == RegKind::None ? 0.0 : 0.7;
    cfg.tau_sort = 10.0;
    cfg.kde_tau = 10.0;
    cfg.trunc_levels = 4;
    const std::size_t b = 9;
    Eigen::MatrixXd x(3, b);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal_vector(1, rng)[0];
    const auto y = normal_vector(b, rng);
    const auto objective = [&](const nn::Mlp& m) {
      const auto t = batch_objective(c.head, cfg, m.forward(x), y, nullptr);
      return t.base + cfg.lambda * t.regularizer;
    };
    nn::ForwardCache cache;
    Eigen::MatrixXd g;
    batch_objective(c.head, cfg, mlp.forward(x, &cache), y, &g);
    auto grads = mlp.backward(cache, g);
    std::uniform_int_distribution<std::size_t> pick(0, mlp.parameter_count() - 1);
    for (int probe = 0; probe < 20; ++probe) {
      const std::size_t idx = pick(rng);
      const double p0 = mlp.parameter(idx);
      const double fd = fd4([&](double d) {
        mlp.parameter(idx) = p0 + d;
        const double v = objective(mlp);
        mlp.parameter(idx) = p0;
        return v;
      });
      expect_close(fd, nn::Mlp::flat_ref(grads, idx), what + " parameter " + std::to_string(idx));
    }
  }
}

TEST(Model, ZeroOutputInitGivesUniformWeights) {
  NetworkConfig net = small_net({HeadKind::Mixture, 4});
  net.zero_output_init = true;
  TrainedModel m{net, TrainConfig{}, nn::Mlp(2, net.hidden_layers, net.units, net.head.output_dim(), 3, true), {}, 0};
  const auto d = std::get<GaussianMixture>(forward(m, std::vector<double>{0.3, -1.0}));
  for (double w : d.weights()) EXPECT_DOUBLE_EQ(w, 0.25);
  for (double s : d.stds()) EXPECT_GT(s, 0.0);
  EXPECT_THROW(forward(m, std::vector<double>{0.3}), std::invalid_argument);
}

TEST(Model, QuantileHeadOutputsSortedGrid) {
  NetworkConfig net = small_net({HeadKind::Quantile, 7});
  TrainedModel m{net, TrainConfig{}, nn::Mlp(2, net.hidden_layers, net.units, net.head.output_dim(), 4), {}, 0};
  const auto g = std::get<QuantileGrid>(forward(m, std::vector<double>{0.3, -1.0}));
  EXPECT_TRUE(std::is_sorted(g.values().begin(), g.values().end()));
  EXPECT_EQ(g.levels(), midpoint_levels(7));
}

TEST(BatchLoss, ValuesAndUnsupportedCombinations) {
  const std::vector<PredictiveDistribution> p = {GaussianMixture::normal(0, 1)};
  EXPECT_NEAR(batch_loss(BaseLoss::Nll, p, std::vector<double>{0.0}), 0.918939, 1e-6);
  EXPECT_NEAR(batch_loss(BaseLoss::Crps, p, std::vector<double>{0.0}), 0.233695, 1e-6);
  const std::vector<PredictiveDistribution> q = {QuantileGrid({0.25, 0.75}, {-1, 1})};
  EXPECT_THROW(batch_loss(BaseLoss::Nll, q, std::vector<double>{0.0}), std::invalid_argument);
  EXPECT_THROW(check_combination({HeadKind::Quantile, 4}, BaseLoss::Nll), std::invalid_argument);
  EXPECT_THROW(check_combination({HeadKind::Mixture, 4}, BaseLoss::PinballGrid), std::invalid_argument);
}

TEST(SelectLambda, RuleExamples) {
  const std::vector<LambdaCandidate> a = {{0.0, 0.10, 1.00}, {0.2, 0.05, 1.05}, {1.0, 0.02, 1.20}};
  EXPECT_DOUBLE_EQ(select_lambda(a), 0.2);
  const std::vector<LambdaCandidate> b = {{0.0, 0.10, 1.0}, {0.2, 0.05, 1.2}, {1.0, 0.02, 2.0}};
  EXPECT_DOUBLE_EQ(select_lambda(b), 0.0);
  const std::vector<LambdaCandidate> c = {{0.01, 0.1, 1.0}, {0.0, 0.1, 1.0}};
  EXPECT_DOUBLE_EQ(select_lambda(c), 0.0);
  const std::vector<LambdaCandidate> d = {{0.05, 0.1, 1.0}, {0.2, 0.1 - 1e-13, 1.0}, {0.0, 0.2, 1.0}};
  EXPECT_DOUBLE_EQ(select_lambda(d), 0.05);
  const std::vector<LambdaCandidate> e = {{0.2, 0.1, 1.0}};
  EXPECT_THROW(select_lambda(e), std::invalid_argument);
}

TEST(Train, DeterministicLogsAndZeroLambdaMatchesBase) {
  const auto tr = make_dataset(SyntheticKind::HeavyTailed, 400, 1);
  const auto va = make_dataset(SyntheticKind::HeavyTailed, 100, 2);
  const auto net = small_net({HeadKind::Mixture, 2}, 9);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_epochs = 15;
  const auto a = train(net, cfg, tr, va);
  const auto b = train(net, cfg, tr, va);
  std::ostringstream la, lb;
  write_training_log(la, a.log);
  write_training_log(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(la.str().substr(0, la.str().find('\n')), "epoch,train_loss,val_loss,val_PCE,val_CRPS");

  TrainConfig zero = cfg;
  zero.regularizer = RegKind::PceKde;
  zero.lambda = 0.0;
  const auto c = train(net, zero, tr, va);
  std::ostringstream lc;
  write_training_log(lc, c.log);
  EXPECT_EQ(la.str(), lc.str());
  for (std::size_t l = 0; l < a.mlp.parameters().size(); ++l)
    EXPECT_EQ(a.mlp.parameters()[l].weight, c.mlp.parameters()[l].weight);
}

TEST(Train, EarlyStoppingKeepsBestValidationEpoch) {
  const auto tr = make_dataset(SyntheticKind::Linear, 300, 3);
  const auto va = make_dataset(SyntheticKind::Linear, 100, 4);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 200;
  cfg.patience = 5;
  const auto m = train(small_net({HeadKind::Mixture, 1}), cfg, tr, va);
  ASSERT_GE(m.best_epoch, 1u);
  for (const auto& e : m.log) EXPECT_GE(e.val_loss, m.selected().val_loss);
  EXPECT_LE(m.log.size(), m.best_epoch + cfg.patience);
  EXPECT_NEAR(detail::validation_metrics(m, va).val_loss, m.selected().val_loss, 1e-12);
}

TEST(Train, NonFiniteLossAborts) {
  auto tr = make_dataset(SyntheticKind::Linear, 50, 5);
  tr.y[7] = std::numeric_limits<double>::quiet_NaN();
  const auto va = make_dataset(SyntheticKind::Linear, 20, 6);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  EXPECT_THROW(train(small_net({HeadKind::Mixture, 1}), cfg, tr, va), TrainingError);
  auto bad = va;
  bad.x = Eigen::MatrixXd::Zero(2, 20);
  EXPECT_THROW(train(small_net({HeadKind::Mixture, 1}), cfg, tr, bad), std::invalid_argument);
}

// Expected NLL of the true law N(x, 1) is its entropy 0.5 log(2 pi e) = 1.418939.
TEST(Train, RecoversLinearGaussianNll) {
  const auto tr = make_dataset(SyntheticKind::Linear, 5000, 11);
  const auto va = make_dataset(SyntheticKind::Linear, 1000, 12);
  const auto te = make_dataset(SyntheticKind::Linear, 5000, 13);
  NetworkConfig net;
  net.head = {HeadKind::Mixture, 1};
  TrainConfig cfg;
  cfg.base_loss = BaseLoss::Nll;
  const auto m = train(net, cfg, tr, va);
  const double nll_test = batch_loss(BaseLoss::Nll, predict(m, te.x), te.y);
  const double entropy = 0.5 * std::log(2 * M_PI) + 0.5;
  EXPECT_NEAR(nll_test, entropy, 0.05);
}

// Y = sin x + (0.2 + 0.3 |x|) eps, a Gaussian law a mixture head can represent.
Dataset heteroscedastic(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-3.0, 3.0);
  std::normal_distribution<double> eps;
  Dataset d{Eigen::MatrixXd(1, static_cast<Eigen::Index>(n)), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ux(rng);
    d.x(0, static_cast<Eigen::Index>(i)) = x;
    d.y[i] = std::sin(x) + (0.2 + 0.3 * std::abs(x)) * eps(rng);
  }
  return d;
}

TEST(Train, MixNllIsCalibratedOnHeteroscedasticData) {
  const auto tr = heteroscedastic(5000, 21);
  const auto va = heteroscedastic(1000, 22);
  const auto te = heteroscedastic(2000, 23);
  NetworkConfig net;
  net.seed = 3;
  TrainConfig cfg;
  const auto m = train(net, cfg, tr, va);
  const auto preds = predict(m, te.x);
  std::vector<double> z(preds.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = pit(preds[i], te.y[i]);
  const double q95 = null_quantile(simulate_null_pce(z.size(), 100, 10000, 7), 0.95);
  EXPECT_LT(pce(z), 2 * q95);
}

TEST(TrainedModel, JsonRoundTripPreservesPredictions) {
  const auto tr = make_dataset(SyntheticKind::Linear, 200, 31);
  const auto va = make_dataset(SyntheticKind::Linear, 50, 32);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.regularizer = RegKind::Qr;
  cfg.lambda = 0.05;
  cfg.qr_k = 3;
  const auto m = train(small_net({HeadKind::Mixture, 2}), cfg, tr, va);
  const auto back = trained_model_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.best_epoch, m.best_epoch);
  EXPECT_EQ(*back.train.qr_k, 3u);
  EXPECT_EQ(back.train.regularizer, RegKind::Qr);
  const auto p = predict(m, va.x), q = predict(back, va.x);
  for (std::size_t i = 0; i < p.size(); ++i)
    EXPECT_EQ(std::get<GaussianMixture>(p[i]).means(), std::get<GaussianMixture>(q[i]).means());
}
