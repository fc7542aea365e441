#pragma once

// Fully-connected ReLU network with dropout on the last hidden layer,
// manual reverse-mode gradients and an Adam optimizer.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace calibreg::nn {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

using Parameters = std::vector<DenseLayer>;

// Activations kept from the forward pass for backpropagation. Matrices hold
// one column per example.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input of each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each hidden layer
  Eigen::MatrixXd dropout_mask;         // scaled keep mask of the last hidden layer (empty if unused)
};

class Mlp {
 public:
  Mlp() = default;

  Mlp(std::size_t input_dim, std::size_t hidden_layers, std::size_t units, std::size_t output_dim,
      std::uint64_t seed, bool zero_output_init = false) {
    if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("Mlp: dimensions must be positive");
    std::mt19937_64 rng(seed);
    std::size_t fan_in = input_dim;
    for (std::size_t l = 0; l < hidden_layers; ++l) {
      layers_.push_back(init_layer(units, fan_in, std::sqrt(6.0 / static_cast<double>(fan_in)), rng));
      fan_in = units;
    }
    const double out_limit = zero_output_init ? 0.0 : std::sqrt(6.0 / static_cast<double>(fan_in + output_dim));
    layers_.push_back(init_layer(output_dim, fan_in, out_limit, rng));
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(layers_.front().weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers_.back().weight.rows()); }
  std::size_t hidden_layers() const { return layers_.size() - 1; }

  Parameters& parameters() { return layers_; }
  const Parameters& parameters() const { return layers_; }

  // x: input_dim x batch. Dropout is applied only when rng is given.
  template <class Rng = std::mt19937_64>
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardCache* cache = nullptr, double dropout = 0.0,
                          Rng* rng = nullptr) const {
    if (static_cast<std::size_t>(x.rows()) != input_dim()) throw std::invalid_argument("Mlp: input dimension mismatch");
    Eigen::MatrixXd h = x;
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
      cache->dropout_mask.resize(0, 0);
    }
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
      if (cache) cache->inputs.push_back(h);
      Eigen::MatrixXd z = (layers_[l].weight * h).colwise() + layers_[l].bias;
      h = z.cwiseMax(0.0);
      if (cache) cache->pre.push_back(std::move(z));
      if (l + 2 == layers_.size() && rng && dropout > 0.0) {
        std::bernoulli_distribution keep(1.0 - dropout);
        Eigen::MatrixXd mask(h.rows(), h.cols());
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
          for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = keep(*rng) ? 1.0 / (1.0 - dropout) : 0.0;
        h = h.cwiseProduct(mask);
        if (cache) cache->dropout_mask = std::move(mask);
      }
    }
    if (cache) cache->inputs.push_back(h);
    return (layers_.back().weight * h).colwise() + layers_.back().bias;
  }

  // Gradients of a scalar loss given d loss / d output (output_dim x batch).
  Parameters backward(const ForwardCache& cache, const Eigen::MatrixXd& grad_out) const {
    Parameters g(layers_.size());
    Eigen::MatrixXd delta = grad_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      g[l].weight = delta * cache.inputs[l].transpose();
      g[l].bias = delta.rowwise().sum();
      if (l == 0) break;
      Eigen::MatrixXd up = layers_[l].weight.transpose() * delta;
      if (l + 1 == layers_.size() && cache.dropout_mask.size() > 0) up = up.cwiseProduct(cache.dropout_mask);
      delta = up.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
    return g;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  // Flat indexing over (weight, bias) of every layer, for probing.
  double& parameter(std::size_t index) { return flat_ref(layers_, index); }

  static double& flat_ref(Parameters& p, std::size_t index) {
    for (auto& l : p) {
      const auto nw = static_cast<std::size_t>(l.weight.size());
      if (index < nw) return l.weight.data()[index];
      index -= nw;
      const auto nb = static_cast<std::size_t>(l.bias.size());
      if (index < nb) return l.bias.data()[index];
      index -= nb;
    }
    throw std::out_of_range("Mlp: parameter index out of range");
  }

 private:
  template <class Rng>
  static DenseLayer init_layer(std::size_t out, std::size_t in, double limit, Rng& rng) {
    DenseLayer layer{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                     Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
    if (limit > 0.0) {
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = u(rng);
    }
    return layer;
  }

  Parameters layers_;
};

class Adam {
 public:
  explicit Adam(const Parameters& like, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& l : like) {
      m_.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
    }
    v_ = m_;
  }

  void step(Parameters& params, const Parameters& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t l = 0; l < params.size(); ++l) {
      update(params[l].weight, grad[l].weight, m_[l].weight, v_[l].weight, c1, c2);
      update(params[l].bias, grad[l].bias, m_[l].bias, v_[l].bias, c1, c2);
    }
  }

 private:
  template <class P, class G>
  void update(P& p, const G& g, P& m, P& v, double c1, double c2) const {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }

  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  Parameters m_, v_;
};

}  // namespace calibreg::nn
