#pragma once

// Small dense feed-forward networks with exact reverse-mode gradients,
// an adaptive-moment optimizer and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cfdml/error.hpp"
#include "cfdml/rng.hpp"

namespace cfdml::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

enum class Activation { relu, tanh, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  fail(Errc::schema, "unknown activation '" + s + "'");
}

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  RowVector bias;
  Activation activation = Activation::identity;

  Eigen::Index fan_in() const { return weight.rows(); }
  Eigen::Index fan_out() const { return weight.cols(); }
};

class Mlp {
 public:
  Mlp() = default;

  /// Glorot-uniform weights, zero biases. `widths` lists every layer width
  /// including input and output; `activations` has one entry per layer.
  static Mlp create(const std::vector<Eigen::Index>& widths, const std::vector<Activation>& activations,
                    std::uint64_t seed) {
    require(widths.size() >= 2 && activations.size() + 1 == widths.size(), Errc::shape,
            "need one activation per layer");
    Mlp net;
    net.seed_ = seed;
    Rng rng = make_rng(seed);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      DenseLayer layer;
      layer.weight.resize(widths[l], widths[l + 1]);
      layer.bias = RowVector::Zero(widths[l + 1]);
      layer.activation = activations[l];
      const double limit = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
          layer.weight(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
      net.layers_.push_back(std::move(layer));
    }
    return net;
  }

  static Mlp from_layers(std::vector<DenseLayer> layers, std::uint64_t seed = 0) {
    Mlp net;
    net.layers_ = std::move(layers);
    net.seed_ = seed;
    net.check_chain();
    return net;
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::uint64_t seed() const { return seed_; }

  Eigen::Index input_dim() const { return layers_.empty() ? 0 : layers_.front().fan_in(); }
  Eigen::Index output_dim() const { return layers_.empty() ? 0 : layers_.back().fan_out(); }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Flat parameter vector: per layer, weights row-major then bias.
  Vector flatten() const {
    Vector out(parameter_count());
    Eigen::Index k = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < l.weight.cols(); ++j) out(k++) = l.weight(i, j);
      for (Eigen::Index j = 0; j < l.bias.size(); ++j) out(k++) = l.bias(j);
    }
    return out;
  }

  void unflatten(const Vector& theta) {
    require(theta.size() == parameter_count(), Errc::shape, "parameter vector length mismatch");
    Eigen::Index k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = theta(k++);
      for (Eigen::Index j = 0; j < l.bias.size(); ++j) l.bias(j) = theta(k++);
    }
  }

  void check_chain() const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      require(layers_[l].bias.size() == layers_[l].fan_out(), Errc::shape,
              "layer " + std::to_string(l) + ": bias width differs from fan-out");
      if (l + 1 < layers_.size())
        require(layers_[l].fan_out() == layers_[l + 1].fan_in(), Errc::shape,
                "layer " + std::to_string(l) + " output does not chain into layer " + std::to_string(l + 1));
      require(layers_[l].weight.allFinite() && layers_[l].bias.allFinite(), Errc::numeric,
              "layer " + std::to_string(l) + " has non-finite parameters");
    }
  }

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t seed_ = 0;
};

inline void apply_activation(Matrix& z, Activation a) {
  switch (a) {
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
    case Activation::identity: break;
  }
}

/// Derivative of the activation expressed through its output.
inline Matrix activation_derivative(const Matrix& out, Activation a) {
  switch (a) {
    case Activation::relu: return (out.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - out.array().square()).matrix();
    case Activation::identity: return Matrix::Ones(out.rows(), out.cols());
  }
  return Matrix::Ones(out.rows(), out.cols());
}

/// activations[0] is the batch, activations[l + 1] the output of layer l.
using Activations = std::vector<Matrix>;

inline Activations forward(const Mlp& net, const Matrix& batch) {
  require(batch.cols() == net.input_dim(), Errc::shape,
          "batch has " + std::to_string(batch.cols()) + " columns, network expects " +
              std::to_string(net.input_dim()));
  Activations acts;
  acts.reserve(net.layers().size() + 1);
  acts.push_back(batch);
  for (const auto& layer : net.layers()) {
    Matrix z = acts.back() * layer.weight;
    z.rowwise() += layer.bias;
    apply_activation(z, layer.activation);
    acts.push_back(std::move(z));
  }
  return acts;
}

inline Matrix predict(const Mlp& net, const Matrix& batch) { return forward(net, batch).back(); }

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<RowVector> bias;
  Matrix input;  // dL/d(batch)

  static Gradients zeros_like(const Mlp& net) {
    Gradients g;
    for (const auto& l : net.layers()) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(RowVector::Zero(l.bias.size()));
    }
    return g;
  }

  Vector flatten() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < weight.size(); ++l) n += weight[l].size() + bias[l].size();
    Vector out(n);
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weight.size(); ++l) {
      for (Eigen::Index i = 0; i < weight[l].rows(); ++i)
        for (Eigen::Index j = 0; j < weight[l].cols(); ++j) out(k++) = weight[l](i, j);
      for (Eigen::Index j = 0; j < bias[l].size(); ++j) out(k++) = bias[l](j);
    }
    return out;
  }
};

/// Reverse-mode pass. `loss_grad` is dL/d(output), same shape as the output.
inline Gradients backward(const Mlp& net, const Activations& acts, const Matrix& loss_grad) {
  const auto& layers = net.layers();
  require(acts.size() == layers.size() + 1, Errc::shape, "activation count does not match network depth");
  for (std::size_t l = 0; l < layers.size(); ++l)
    require(acts[l + 1].cols() == layers[l].fan_out() && acts[l].cols() == layers[l].fan_in() &&
                acts[l + 1].rows() == acts[0].rows(),
            Errc::shape, "stale activations for layer " + std::to_string(l));
  require(loss_grad.rows() == acts.back().rows() && loss_grad.cols() == acts.back().cols(), Errc::shape,
          "loss gradient shape differs from network output");
  Gradients g;
  g.weight.resize(layers.size());
  g.bias.resize(layers.size());
  Matrix delta = loss_grad;
  for (std::size_t l = layers.size(); l-- > 0;) {
    delta = delta.cwiseProduct(activation_derivative(acts[l + 1], layers[l].activation));
    g.weight[l] = acts[l].transpose() * delta;
    g.bias[l] = delta.colwise().sum();
    delta = delta * layers[l].weight.transpose();
  }
  g.input = std::move(delta);
  return g;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Matrix> m_weight, v_weight;
  std::vector<RowVector> m_bias, v_bias;

  static AdamState for_network(const Mlp& net, AdamConfig config = {}) {
    AdamState s;
    s.config = config;
    for (const auto& l : net.layers()) {
      s.m_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      s.v_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      s.m_bias.push_back(RowVector::Zero(l.bias.size()));
      s.v_bias.push_back(RowVector::Zero(l.bias.size()));
    }
    return s;
  }
};

/// One bias-corrected adaptive-moment update applied in place.
inline void adam_step(Mlp& net, const Gradients& grads, AdamState& state) {
  auto& layers = net.layers();
  require(grads.weight.size() == layers.size() && state.m_weight.size() == layers.size(), Errc::shape,
          "gradient/optimizer state does not match network depth");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require(grads.weight[l].rows() == layers[l].weight.rows() && grads.weight[l].cols() == layers[l].weight.cols() &&
                grads.bias[l].size() == layers[l].bias.size() &&
                state.m_weight[l].rows() == layers[l].weight.rows() &&
                state.m_weight[l].cols() == layers[l].weight.cols(),
            Errc::shape, "gradient shape mismatch at layer " + std::to_string(l));
    if (!grads.weight[l].allFinite() || !grads.bias[l].allFinite()) {
      const double gmax = std::max(grads.weight[l].cwiseAbs().maxCoeff(), grads.bias[l].cwiseAbs().maxCoeff());
      fail(Errc::numeric, "non-finite gradient at layer " + std::to_string(l) + " (max |g| = " + std::to_string(gmax) +
                              ")");
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    param.array() -= c.learning_rate * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + c.epsilon);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads.weight[l], state.m_weight[l], state.v_weight[l]);
    update(layers[l].bias, grads.bias[l], state.m_bias[l], state.v_bias[l]);
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / scale;
}

/// Central differences on a random subsample of coordinates of a flat
/// parameter vector (all of them when there are fewer than `samples`).
inline double grad_check(const std::function<double(const Vector&)>& objective, const Vector& theta,
                         const Vector& analytic, std::size_t samples = 100, std::uint64_t seed = 0,
                         double step = 1e-5) {
  require(analytic.size() == theta.size(), Errc::shape, "analytic gradient length mismatch");
  const auto p = static_cast<std::size_t>(theta.size());
  if (p == 0) return 0.0;
  std::vector<std::size_t> coords(p);
  for (std::size_t k = 0; k < p; ++k) coords[k] = k;
  if (p > samples) {
    Rng rng = make_rng(seed, seed_offset::grad_check);
    shuffle(coords, rng);
    coords.resize(samples);
  }
  double worst = 0.0;
  Vector probe = theta;
  for (std::size_t k : coords) {
    const auto idx = static_cast<Eigen::Index>(k);
    probe(idx) = theta(idx) + step;
    const double up = objective(probe);
    probe(idx) = theta(idx) - step;
    const double down = objective(probe);
    probe(idx) = theta(idx);
    worst = std::max(worst, relative_error(analytic(idx), (up - down) / (2.0 * step)));
  }
  return worst;
}

/// Output-level scalar loss: value and dL/d(output).
struct OutputLoss {
  std::function<double(const Matrix&)> value;
  std::function<Matrix(const Matrix&)> gradient;
};

inline OutputLoss squared_error_loss(const Matrix& target) {
  const double n = static_cast<double>(target.rows());
  return {[target, n](const Matrix& out) { return (out - target).squaredNorm() / n; },
          [target, n](const Matrix& out) -> Matrix { return 2.0 * (out - target) / n; }};
}

inline double grad_check(const Mlp& net, const OutputLoss& loss, const Matrix& batch, std::size_t samples = 100,
                         std::uint64_t seed = 0) {
  require(batch.rows() > 0, Errc::size, "gradient check needs a nonempty batch");
  if (net.parameter_count() == 0) return 0.0;
  const auto acts = forward(net, batch);
  const Vector analytic = backward(net, acts, loss.gradient(acts.back())).flatten();
  Mlp probe = net;
  auto objective = [&](const Vector& theta) {
    probe.unflatten(theta);
    return loss.value(predict(probe, batch));
  };
  return grad_check(objective, net.flatten(), analytic, samples, seed);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json to_json(const Mlp& net) {
  nlohmann::ordered_json j;
  j["format"] = "cfdml.mlp";
  j["version"] = kCheckpointVersion;
  j["seed"] = net.seed();
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j2 = 0; j2 < l.weight.cols(); ++j2) w.push_back(l.weight(i, j2));
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    j["layers"].push_back({{"fan_in", l.fan_in()},
                           {"fan_out", l.fan_out()},
                           {"activation", to_string(l.activation)},
                           {"weights", w},
                           {"bias", b}});
  }
  return j;
}

inline Mlp mlp_from_json(const nlohmann::ordered_json& j) {
  require(j.value("format", "") == "cfdml.mlp", Errc::schema, "not an MLP checkpoint");
  require(j.value("version", 0) == kCheckpointVersion, Errc::schema, "unsupported MLP checkpoint version");
  std::vector<DenseLayer> layers;
  for (const auto& jl : j.at("layers")) {
    DenseLayer l;
    const auto in = jl.at("fan_in").get<Eigen::Index>();
    const auto out = jl.at("fan_out").get<Eigen::Index>();
    const auto w = jl.at("weights").get<std::vector<double>>();
    const auto b = jl.at("bias").get<std::vector<double>>();
    require(static_cast<Eigen::Index>(w.size()) == in * out && static_cast<Eigen::Index>(b.size()) == out,
            Errc::schema, "checkpoint payload size mismatch");
    l.weight.resize(in, out);
    for (Eigen::Index i = 0; i < in; ++i)
      for (Eigen::Index c = 0; c < out; ++c) l.weight(i, c) = w[static_cast<std::size_t>(i * out + c)];
    l.bias = Eigen::Map<const RowVector>(b.data(), out);
    l.activation = parse_activation(jl.at("activation").get<std::string>());
    layers.push_back(std::move(l));
  }
  return Mlp::from_layers(std::move(layers), j.at("seed").get<std::uint64_t>());
}

}  // namespace cfdml::nn
