#pragma once

// Training of probabilistic neural regressors (MIX-NLL, MIX-CRPS, SQR-CRPS)
// with an optional calibration regularizer, early stopping on the validation
// base loss, and the lambda selection rule.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "calibreg/dist_core.hpp"
#include "calibreg/heads.hpp"
#include "calibreg/metrics.hpp"
#include "calibreg/nn.hpp"
#include "calibreg/regularizers.hpp"

namespace calibreg {

enum class BaseLoss { Nll, Crps, PinballGrid };
enum class RegKind { None, Qr, Trunc, PceKde, PceSort };
enum class ModelKind { MixNll, MixCrps, SqrCrps };

inline std::string to_string(BaseLoss b) {
  switch (b) {
    case BaseLoss::Nll: return "NLL";
    case BaseLoss::Crps: return "CRPS";
    case BaseLoss::PinballGrid: return "PinballGrid";
  }
  return "?";
}

inline BaseLoss base_loss_from_string(std::string_view s) {
  if (s == "NLL") return BaseLoss::Nll;
  if (s == "CRPS") return BaseLoss::Crps;
  if (s == "PinballGrid") return BaseLoss::PinballGrid;
  throw std::invalid_argument("unknown base loss: " + std::string(s));
}

inline std::string to_string(RegKind r) {
  switch (r) {
    case RegKind::None: return "None";
    case RegKind::Qr: return "QR";
    case RegKind::Trunc: return "Trunc";
    case RegKind::PceKde: return "PCE-KDE";
    case RegKind::PceSort: return "PCE-Sort";
  }
  return "?";
}

inline RegKind reg_kind_from_string(std::string_view s) {
  if (s == "None") return RegKind::None;
  if (s == "QR") return RegKind::Qr;
  if (s == "Trunc") return RegKind::Trunc;
  if (s == "PCE-KDE") return RegKind::PceKde;
  if (s == "PCE-Sort") return RegKind::PceSort;
  throw std::invalid_argument("unknown regularizer: " + std::string(s));
}

inline std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::MixNll: return "MIX-NLL";
    case ModelKind::MixCrps: return "MIX-CRPS";
    case ModelKind::SqrCrps: return "SQR-CRPS";
  }
  return "?";
}

// Accepts "MIX-NLL" as well as the lower-case CLI spelling "mix-nll".
inline ModelKind model_kind_from_string(std::string_view s) {
  std::string u(s);
  for (char& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "MIX-NLL") return ModelKind::MixNll;
  if (u == "MIX-CRPS") return ModelKind::MixCrps;
  if (u == "SQR-CRPS") return ModelKind::SqrCrps;
  throw std::invalid_argument("unknown model: " + std::string(s));
}

struct NetworkConfig {
  std::size_t hidden_layers = 3;
  std::size_t units = 100;
  double dropout_rate = 0.2;
  HeadSpec head{HeadKind::Mixture, 3};
  std::uint64_t seed = 0;
  bool zero_output_init = false;

  void validate() const {
    if (head.kind == HeadKind::Mixture && head.size < 1) throw std::invalid_argument("NetworkConfig: K must be >= 1");
    if (head.kind == HeadKind::Quantile && head.size < 2) throw std::invalid_argument("NetworkConfig: M must be >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw std::invalid_argument("NetworkConfig: dropout_rate must lie in [0,1)");
    if (units == 0 && hidden_layers > 0) throw std::invalid_argument("NetworkConfig: units must be positive");
  }
};

// Optimizer settings (Adam, learning rate 1e-3, batch 512) are not fixed by
// the method description; these are conventional defaults.
struct TrainConfig {
  BaseLoss base_loss = BaseLoss::Nll;
  RegKind regularizer = RegKind::None;
  double lambda = 0.0;
  std::size_t batch_size = 512;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 1000;
  std::size_t patience = 30;
  double tau_sort = 100.0;                // soft-rank temperature (QR, PCE-Sort)
  double kde_tau = kDefaultKdeTau;        // PCE-KDE
  double reg_p = 1.0;                     // PCE-KDE, PCE-Sort
  std::size_t pce_levels = 100;           // PCE-KDE grid j/(M+1)
  std::optional<std::size_t> qr_k;        // default ceil(sqrt(batch))
  std::size_t trunc_levels = 32;          // Trunc levels for mixture heads

  void validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (!(tau_sort > 0.0) || !(kde_tau > 0.0)) throw std::invalid_argument("TrainConfig: temperatures must be positive");
    if (!(reg_p > 0.0)) throw std::invalid_argument("TrainConfig: p must be positive");
  }
};

// Head and base loss of each model family.
inline void configure_model(ModelKind kind, NetworkConfig& net, TrainConfig& train) {
  switch (kind) {
    case ModelKind::MixNll:
      net.head = {HeadKind::Mixture, net.head.kind == HeadKind::Mixture ? net.head.size : 3};
      train.base_loss = BaseLoss::Nll;
      break;
    case ModelKind::MixCrps:
      net.head = {HeadKind::Mixture, net.head.kind == HeadKind::Mixture ? net.head.size : 3};
      train.base_loss = BaseLoss::Crps;
      break;
    case ModelKind::SqrCrps:
      net.head = {HeadKind::Quantile, net.head.kind == HeadKind::Quantile ? net.head.size : 64};
      train.base_loss = BaseLoss::PinballGrid;
      break;
  }
}

inline void check_combination(const HeadSpec& head, BaseLoss loss) {
  const bool ok = head.kind == HeadKind::Mixture ? loss != BaseLoss::PinballGrid : loss == BaseLoss::PinballGrid;
  if (!ok) throw std::invalid_argument("unsupported combination of head and base loss: " + to_string(loss));
}

// Features stored one column per example.
struct Dataset {
  Eigen::MatrixXd x;
  std::vector<double> y;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x.rows()); }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_pce = 0.0;
  double val_crps = 0.0;
};

struct TrainedModel {
  NetworkConfig net;
  TrainConfig train;
  nn::Mlp mlp;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;

  // Validation metrics of the selected epoch.
  const EpochLog& selected() const { return log.at(best_epoch - 1); }
};

inline PredictiveDistribution forward(const TrainedModel& model, std::span<const double> x) {
  if (x.size() != model.mlp.input_dim()) throw std::invalid_argument("forward: feature dimension mismatch");
  Eigen::MatrixXd in(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) in(static_cast<Eigen::Index>(i), 0) = x[i];
  const Eigen::MatrixXd out = model.mlp.forward(in);
  return distribution_from_raw(model.net.head, std::span<const double>(out.data(), static_cast<std::size_t>(out.size())));
}

inline std::vector<PredictiveDistribution> predict(const TrainedModel& model, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.rows()) != model.mlp.input_dim())
    throw std::invalid_argument("predict: feature dimension mismatch");
  const Eigen::MatrixXd out = model.mlp.forward(x);
  std::vector<PredictiveDistribution> preds;
  preds.reserve(static_cast<std::size_t>(out.cols()));
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    preds.push_back(distribution_from_raw(
        model.net.head, std::span<const double>(out.col(c).data(), static_cast<std::size_t>(out.rows()))));
  return preds;
}

// Mean per-point loss of predictions.
inline double batch_loss(BaseLoss kind, std::span<const PredictiveDistribution> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw std::invalid_argument("batch_loss: length mismatch");
  if (preds.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto* gm = std::get_if<GaussianMixture>(&preds[i]);
    const auto* qg = std::get_if<QuantileGrid>(&preds[i]);
    switch (kind) {
      case BaseLoss::Nll:
        if (!gm) throw std::invalid_argument("batch_loss: NLL requires a mixture head");
        s += nll(*gm, targets[i]);
        break;
      case BaseLoss::Crps:
        if (!gm) throw std::invalid_argument("batch_loss: CRPS requires a mixture head");
        s += crps_mixture(*gm, targets[i]);
        break;
      case BaseLoss::PinballGrid:
        if (!qg) throw std::invalid_argument("batch_loss: pinball grid loss requires a quantile head");
        s += crps_grid(*qg, targets[i]);
        break;
    }
  }
  return s / static_cast<double>(preds.size());
}

struct ObjectiveTerms {
  double base = 0.0;
  double regularizer = 0.0;
};

// Base loss and regularizer of a batch from raw head outputs (D x B). When
// grad is given it receives d(base + lambda * regularizer)/d raw. The
// regularizer is skipped entirely when lambda is 0.
inline ObjectiveTerms batch_objective(const HeadSpec& head, const TrainConfig& cfg, const Eigen::MatrixXd& raw,
                                      std::span<const double> y, Eigen::MatrixXd* grad) {
  check_combination(head, cfg.base_loss);
  const std::size_t b = y.size();
  const std::size_t d = head.output_dim();
  if (static_cast<std::size_t>(raw.cols()) != b || static_cast<std::size_t>(raw.rows()) != d)
    throw std::invalid_argument("batch_objective: output shape mismatch");
  ObjectiveTerms terms;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(raw.rows(), raw.cols());
  const double bd = static_cast<double>(b);
  std::vector<double> gcol(d);
  const auto col = [&](std::size_t i) {
    return std::span<const double>(raw.col(static_cast<Eigen::Index>(i)).data(), d);
  };
  for (std::size_t i = 0; i < b; ++i) {
    double v = 0.0;
    switch (cfg.base_loss) {
      case BaseLoss::Nll: v = nll_raw(col(i), head.size, y[i], gcol); break;
      case BaseLoss::Crps: v = crps_mixture_raw(col(i), head.size, y[i], gcol); break;
      case BaseLoss::PinballGrid: v = crps_grid_raw(col(i), y[i], gcol); break;
    }
    terms.base += v;
    for (std::size_t r = 0; r < d; ++r) g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = gcol[r] / bd;
  }
  terms.base /= bd;

  if (cfg.regularizer != RegKind::None && cfg.lambda > 0.0 && b > 0) {
    if (cfg.regularizer == RegKind::Trunc) {
      const std::vector<double> levels =
          head.kind == HeadKind::Mixture ? midpoint_levels(cfg.trunc_levels) : midpoint_levels(head.size);
      const std::size_t m = levels.size();
      std::vector<double> q(b * m);
      std::vector<double> dq(b * m * d, 0.0);
      for (std::size_t i = 0; i < b; ++i) {
        if (head.kind == HeadKind::Mixture) {
          for (std::size_t j = 0; j < m; ++j)
            q[i * m + j] = mixture_quantile_raw(col(i), head.size, levels[j], std::span<double>(&dq[(i * m + j) * d], d));
        } else {
          const auto perm = detail::sort_permutation(col(i));
          for (std::size_t j = 0; j < m; ++j) {
            q[i * m + j] = col(i)[perm[j]];
            dq[(i * m + j) * d + perm[j]] = 1.0;
          }
        }
      }
      const ValueGrad r = reg_trunc(q, y, levels);
      terms.regularizer = r.value;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = r.grad[i * m + j];
          if (gij == 0.0) continue;
          for (std::size_t k = 0; k < d; ++k)
            g(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) += cfg.lambda * gij * dq[(i * m + j) * d + k];
        }
    } else {
      std::vector<double> z(b);
      std::vector<double> dz(b * d);
      for (std::size_t i = 0; i < b; ++i) z[i] = pit_raw(head, col(i), y[i], std::span<double>(&dz[i * d], d));
      ValueGrad r;
      switch (cfg.regularizer) {
        case RegKind::Qr: {
          if (b < 2) break;
          std::size_t k = cfg.qr_k.value_or(static_cast<std::size_t>(std::ceil(std::sqrt(bd))));
          k = std::clamp<std::size_t>(k, 1, b - 1);
          r = reg_qr(z, k, cfg.tau_sort);
          break;
        }
        case RegKind::PceKde: r = reg_pce_kde(z, pce_levels(cfg.pce_levels), cfg.kde_tau, cfg.reg_p); break;
        case RegKind::PceSort: r = reg_pce_sort(z, cfg.reg_p, cfg.tau_sort); break;
        default: break;
      }
      terms.regularizer = r.value;
      if (!r.grad.empty())
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t k = 0; k < d; ++k)
            g(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) += cfg.lambda * r.grad[i] * dz[i * d + k];
    }
  }
  if (grad) *grad = std::move(g);
  return terms;
}

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::vector<EpochLog> log) : std::runtime_error(what), log_(std::move(log)) {}
  const std::vector<EpochLog>& log() const { return log_; }

 private:
  std::vector<EpochLog> log_;
};

namespace detail {

inline Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& x, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(idx[c]));
  return out;
}

inline EpochLog validation_metrics(const TrainedModel& model, const Dataset& val) {
  const auto preds = predict(model, val.x);
  EpochLog e;
  e.val_loss = batch_loss(model.train.base_loss, preds, val.y);
  std::vector<double> z(preds.size());
  double crps = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    z[i] = pit(preds[i], val.y[i]);
    if (const auto* gm = std::get_if<GaussianMixture>(&preds[i]))
      crps += crps_mixture(*gm, val.y[i]);
    else
      crps += crps_grid(std::get<QuantileGrid>(preds[i]), val.y[i]);
  }
  e.val_pce = pce(z);
  e.val_crps = crps / static_cast<double>(preds.size());
  return e;
}

}  // namespace detail

// Mini-batch Adam on base loss + lambda * regularizer with early stopping on
// the validation base loss; the parameters of the best epoch are kept.
// Deterministic given net.seed.
inline TrainedModel train(const NetworkConfig& net, const TrainConfig& cfg, const Dataset& train_data,
                          const Dataset& val_data) {
  net.validate();
  cfg.validate();
  check_combination(net.head, cfg.base_loss);
  if (train_data.size() == 0 || val_data.size() == 0) throw std::invalid_argument("train: empty split");
  if (train_data.dim() != val_data.dim()) throw std::invalid_argument("train: feature dimensions differ");
  if (static_cast<std::size_t>(train_data.x.cols()) != train_data.size() ||
      static_cast<std::size_t>(val_data.x.cols()) != val_data.size())
    throw std::invalid_argument("train: features and targets differ in length");

  TrainedModel model{net, cfg,
                     nn::Mlp(train_data.dim(), net.hidden_layers, net.units, net.head.output_dim(), net.seed,
                             net.zero_output_init),
                     {}, 0};
  nn::Adam adam(model.mlp.parameters(), cfg.learning_rate);
  std::mt19937_64 rng(net.seed ^ 0x9e3779b97f4a7c15ULL);

  const std::size_t n = train_data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  nn::Parameters best = model.mlp.parameters();
  double best_loss = kInf;
  std::size_t since_best = 0;
  nn::ForwardCache cache;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Eigen::MatrixXd xb = detail::gather_columns(train_data.x, idx);
      std::vector<double> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = train_data.y[idx[i]];
      const Eigen::MatrixXd out = model.mlp.forward(xb, &cache, net.dropout_rate, &rng);
      Eigen::MatrixXd g;
      const ObjectiveTerms t = batch_objective(net.head, cfg, out, yb, &g);
      const double loss = t.base + cfg.lambda * t.regularizer;
      if (!std::isfinite(loss) || !g.allFinite()) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << ", batch starting at " << start << " (base " << t.base
            << ", regularizer " << t.regularizer << ")";
        throw TrainingError(msg.str(), model.log);
      }
      adam.step(model.mlp.parameters(), model.mlp.backward(cache, g));
      total += loss * static_cast<double>(idx.size());
    }
    EpochLog e = detail::validation_metrics(model, val_data);
    e.epoch = epoch;
    e.train_loss = total / static_cast<double>(n);
    model.log.push_back(e);
    if (e.val_loss < best_loss) {
      best_loss = e.val_loss;
      best = model.mlp.parameters();
      model.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (model.best_epoch == 0) throw TrainingError("train: validation loss never finite", model.log);
  model.mlp.parameters() = std::move(best);
  return model;
}

struct LambdaCandidate {
  double lambda = 0.0;
  double val_pce = 0.0;
  double val_crps = 0.0;
};

inline constexpr double kCrpsIncreaseCap = 1.1;
inline constexpr double kLambdaTieTolerance = 1e-12;
inline const std::vector<double> kDefaultLambdaGrid = {0.0, 0.01, 0.05, 0.2, 1.0, 5.0};

// Among lambdas whose validation CRPS is at most 1.1 times that of lambda = 0,
// the one with the smallest validation PCE; ties go to the smaller lambda.
inline double select_lambda(std::span<const LambdaCandidate> candidates) {
  std::vector<LambdaCandidate> c(candidates.begin(), candidates.end());
  std::stable_sort(c.begin(), c.end(), [](const auto& a, const auto& b) { return a.lambda < b.lambda; });
  const auto base = std::find_if(c.begin(), c.end(), [](const auto& x) { return x.lambda == 0.0; });
  if (base == c.end()) throw std::invalid_argument("select_lambda: candidates must include lambda = 0");
  const double cap = kCrpsIncreaseCap * base->val_crps;
  LambdaCandidate best = *base;
  for (const auto& x : c) {
    if (!(x.val_crps <= cap)) continue;
    if (x.val_pce < best.val_pce - kLambdaTieTolerance) best = x;
  }
  return best.lambda;
}

inline void write_training_log(std::ostream& os, std::span<const EpochLog> log) {
  os << "epoch,train_loss,val_loss,val_PCE,val_CRPS\n";
  os << std::setprecision(17);
  for (const auto& e : log)
    os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_pce << ',' << e.val_crps << '\n';
}

// ------------------------------------------------------------ serialization

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json to_json(const TrainedModel& m) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["network"] = {{"hidden_layers", m.net.hidden_layers},
                  {"units", m.net.units},
                  {"dropout_rate", m.net.dropout_rate},
                  {"head", m.net.head.kind == HeadKind::Mixture ? "mixture" : "quantile"},
                  {"head_size", m.net.head.size},
                  {"seed", m.net.seed},
                  {"zero_output_init", m.net.zero_output_init}};
  j["training"] = {{"base_loss", to_string(m.train.base_loss)},
                   {"regularizer", to_string(m.train.regularizer)},
                   {"lambda", m.train.lambda},
                   {"batch_size", m.train.batch_size},
                   {"learning_rate", m.train.learning_rate},
                   {"max_epochs", m.train.max_epochs},
                   {"patience", m.train.patience},
                   {"tau_sort", m.train.tau_sort},
                   {"kde_tau", m.train.kde_tau},
                   {"reg_p", m.train.reg_p},
                   {"pce_levels", m.train.pce_levels},
                   {"trunc_levels", m.train.trunc_levels}};
  if (m.train.qr_k) j["training"]["qr_k"] = *m.train.qr_k;
  j["input_dim"] = m.mlp.input_dim();
  j["best_epoch"] = m.best_epoch;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.mlp.parameters()) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  j["layers"] = std::move(layers);
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : m.log) log.push_back({e.epoch, e.train_loss, e.val_loss, e.val_pce, e.val_crps});
  j["log"] = std::move(log);
  return j;
}

inline TrainedModel trained_model_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kModelFormatVersion)
    throw std::invalid_argument("model file: unsupported format version");
  TrainedModel m;
  const auto& n = j.at("network");
  m.net.hidden_layers = n.at("hidden_layers").get<std::size_t>();
  m.net.units = n.at("units").get<std::size_t>();
  m.net.dropout_rate = n.at("dropout_rate").get<double>();
  m.net.head = {n.at("head").get<std::string>() == "mixture" ? HeadKind::Mixture : HeadKind::Quantile,
                n.at("head_size").get<std::size_t>()};
  m.net.seed = n.at("seed").get<std::uint64_t>();
  m.net.zero_output_init = n.at("zero_output_init").get<bool>();
  const auto& t = j.at("training");
  m.train.base_loss = base_loss_from_string(t.at("base_loss").get<std::string>());
  m.train.regularizer = reg_kind_from_string(t.at("regularizer").get<std::string>());
  m.train.lambda = t.at("lambda").get<double>();
  m.train.batch_size = t.at("batch_size").get<std::size_t>();
  m.train.learning_rate = t.at("learning_rate").get<double>();
  m.train.max_epochs = t.at("max_epochs").get<std::size_t>();
  m.train.patience = t.at("patience").get<std::size_t>();
  m.train.tau_sort = t.at("tau_sort").get<double>();
  m.train.kde_tau = t.at("kde_tau").get<double>();
  m.train.reg_p = t.at("reg_p").get<double>();
  m.train.pce_levels = t.at("pce_levels").get<std::size_t>();
  m.train.trunc_levels = t.at("trunc_levels").get<std::size_t>();
  if (t.contains("qr_k")) m.train.qr_k = t.at("qr_k").get<std::size_t>();
  m.net.validate();
  m.train.validate();
  m.mlp = nn::Mlp(j.at("input_dim").get<std::size_t>(), m.net.hidden_layers, m.net.units, m.net.head.output_dim(), 0,
                  true);
  auto& params = m.mlp.parameters();
  const auto& layers = j.at("layers");
  if (layers.size() != params.size()) throw std::invalid_argument("model file: layer count mismatch");
  for (std::size_t l = 0; l < params.size(); ++l) {
    const auto w = layers[l].at("weight").get<std::vector<double>>();
    const auto b = layers[l].at("bias").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(params[l].weight.size()) ||
        b.size() != static_cast<std::size_t>(params[l].bias.size()))
      throw std::invalid_argument("model file: layer shape mismatch");
    std::copy(w.begin(), w.end(), params[l].weight.data());
    std::copy(b.begin(), b.end(), params[l].bias.data());
  }
  m.best_epoch = j.at("best_epoch").get<std::size_t>();
  for (const auto& e : j.at("log"))
    m.log.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>(), e.at(2).get<double>(), e.at(3).get<double>(),
                     e.at(4).get<double>()});
  return m;
}

}  // namespace calibreg
