#include "trofi/nn.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "trofi/error.hpp"

namespace trofi::nn {

namespace {

constexpr int kCheckpointVersion = 1;

void activate(Matrix& z, Activation a) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::Relu: z = z.cwiseMax(0.0); break;
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
  }
}

// Multiplies `grad` in place by the activation derivative, expressed through
// the activation output.
void scale_by_derivative(Matrix& grad, const Matrix& out, Activation a) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::Relu: grad = (out.array() > 0.0).select(grad, 0.0); break;
    case Activation::Tanh: grad.array() *= 1.0 - out.array().square(); break;
  }
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "unknown";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

void Gradients::accumulate(const Gradients& other, double scale) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += scale * other.weight[l];
    bias[l] += scale * other.bias[l];
  }
}

Mlp Mlp::init(const std::vector<int>& layer_sizes, Activation hidden, Activation output,
              Rng& rng) {
  if (layer_sizes.size() < 2) throw ConfigError("Mlp::init: need at least two layer sizes");
  for (int s : layer_sizes)
    if (s <= 0) throw ConfigError("Mlp::init: layer sizes must be positive");
  Mlp net;
  net.sizes_ = layer_sizes;
  net.hidden_ = hidden;
  net.output_ = output;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Layer layer{Matrix(fan_in, fan_out), RowVector::Zero(fan_out)};
    for (int i = 0; i < fan_in; ++i)
      for (int j = 0; j < fan_out; ++j) layer.weight(i, j) = rng.uniform(-limit, limit);
    net.layers_.push_back(std::move(layer));
  }
  return net;
}

void Mlp::check_input(const Matrix& batch) const {
  if (layers_.empty()) throw ShapeError("Mlp: network is uninitialized");
  if (batch.cols() != sizes_.front())
    throw ShapeError("Mlp: input width " + std::to_string(batch.cols()) + ", expected " +
                     std::to_string(sizes_.front()));
}

Matrix Mlp::forward(const Matrix& batch) const {
  check_input(batch);
  Matrix x = batch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = x * layers_[l].weight;
    z.rowwise() += layers_[l].bias;
    activate(z, l + 1 == layers_.size() ? output_ : hidden_);
    x = std::move(z);
  }
  return x;
}

Matrix Mlp::forward(const Matrix& batch, Tape& tape) const {
  check_input(batch);
  tape.activations.clear();
  tape.activations.reserve(layers_.size() + 1);
  tape.activations.push_back(batch);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = tape.activations.back() * layers_[l].weight;
    z.rowwise() += layers_[l].bias;
    activate(z, l + 1 == layers_.size() ? output_ : hidden_);
    tape.activations.push_back(std::move(z));
  }
  return tape.activations.back();
}

Gradients Mlp::backward(const Tape& tape, const Matrix& upstream, bool params) const {
  if (tape.activations.size() != layers_.size() + 1)
    throw ShapeError("Mlp::backward: tape does not match network");
  const Matrix& out = tape.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
    throw ShapeError("Mlp::backward: upstream is " + std::to_string(upstream.rows()) + "x" +
                     std::to_string(upstream.cols()) + ", output is " +
                     std::to_string(out.rows()) + "x" + std::to_string(out.cols()));
  Gradients g;
  if (params) {
    g.weight.resize(layers_.size());
    g.bias.resize(layers_.size());
  }
  Matrix delta = upstream;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    scale_by_derivative(delta, tape.activations[k + 1], k + 1 == layers_.size() ? output_ : hidden_);
    if (params) {
      g.weight[k].noalias() = tape.activations[k].transpose() * delta;
      g.bias[k] = delta.colwise().sum();
    }
    delta = delta * layers_[k].weight.transpose();
  }
  g.input = std::move(delta);
  return g;
}

Gradients Mlp::backward(const Matrix& batch, const Matrix& upstream) const {
  Tape tape;
  forward(batch, tape);
  return backward(tape, upstream, true);
}

Gradients Mlp::zero_gradients() const {
  Gradients g;
  for (const auto& layer : layers_) {
    g.weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.push_back(RowVector::Zero(layer.bias.size()));
  }
  return g;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_)
    n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers_) {
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) flat.push_back(layer.weight(i, j));
    for (Eigen::Index j = 0; j < layer.bias.size(); ++j) flat.push_back(layer.bias(j));
  }
  return flat;
}

void Mlp::assign(const std::vector<double>& flat) {
  if (flat.size() != parameter_count()) throw ShapeError("Mlp::assign: parameter count mismatch");
  std::size_t p = 0;
  for (auto& layer : layers_) {
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = flat[p++];
    for (Eigen::Index j = 0; j < layer.bias.size(); ++j) layer.bias(j) = flat[p++];
  }
}

bool Mlp::same_architecture(const Mlp& other) const {
  return sizes_ == other.sizes_ && hidden_ == other.hidden_ && output_ == other.output_;
}

bool Mlp::all_finite() const {
  for (const auto& layer : layers_)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (!a.same_architecture(b) || a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t l = 0; l < a.layers_.size(); ++l)
    if (a.layers_[l].weight != b.layers_[l].weight || a.layers_[l].bias != b.layers_[l].bias)
      return false;
  return true;
}

AdamState AdamState::for_network(const Mlp& net, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& layer : net.layers()) {
    s.m_weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    s.v_weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    s.m_bias.push_back(RowVector::Zero(layer.bias.size()));
    s.v_bias.push_back(RowVector::Zero(layer.bias.size()));
  }
  return s;
}

void adam_step(Mlp& net, const Gradients& grads, AdamState& state) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || state.m_weight.size() != layers.size())
    throw ShapeError("adam_step: gradient/state layout does not match network");
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (!grads.weight[l].allFinite() || !grads.bias[l].allFinite())
      throw DivergenceError("adam_step: non-finite gradient in layer " + std::to_string(l));

  const auto& c = state.config;
  state.step += 1;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= c.learning_rate * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + c.epsilon);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads.weight[l], state.m_weight[l], state.v_weight[l]);
    update(layers[l].bias, grads.bias[l], state.m_bias[l], state.v_bias[l]);
  }
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (!target.same_architecture(online)) throw ShapeError("soft_update: architecture mismatch");
  auto& t = target.layers();
  const auto& o = online.layers();
  for (std::size_t l = 0; l < t.size(); ++l) {
    t[l].weight = tau * o[l].weight + (1.0 - tau) * t[l].weight;
    t[l].bias = tau * o[l].bias + (1.0 - tau) * t[l].bias;
  }
}

nlohmann::json to_json(const Mlp& net) {
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      std::vector<double> row(layer.weight.cols());
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) row[j] = layer.weight(i, j);
      w.push_back(row);
    }
    weights.push_back(std::move(w));
    biases.push_back(std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size()));
  }
  return {{"version", kCheckpointVersion},
          {"layer_sizes", net.layer_sizes()},
          {"activations",
           {{"hidden", to_string(net.hidden_activation())},
            {"output", to_string(net.output_activation())}}},
          {"weights", std::move(weights)},
          {"biases", std::move(biases)}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ParseError("unsupported network checkpoint version");
    const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
    Rng dummy(0);
    Mlp net = Mlp::init(sizes, parse_activation(j.at("activations").at("hidden")),
                        parse_activation(j.at("activations").at("output")), dummy);
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (weights.size() != net.layers().size() || biases.size() != net.layers().size())
      throw ParseError("network checkpoint: layer count mismatch");
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      auto& layer = net.layers()[l];
      const auto rows = weights[l].get<std::vector<std::vector<double>>>();
      const auto bias = biases[l].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(rows.size()) != layer.weight.rows() ||
          static_cast<Eigen::Index>(bias.size()) != layer.bias.size())
        throw ParseError("network checkpoint: layer " + std::to_string(l) + " shape mismatch");
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != layer.weight.cols())
          throw ParseError("network checkpoint: ragged weight row");
        for (std::size_t k = 0; k < rows[i].size(); ++k) layer.weight(i, k) = rows[i][k];
      }
      for (std::size_t k = 0; k < bias.size(); ++k) layer.bias(k) = bias[k];
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("network checkpoint: ") + e.what());
  }
}

}  // namespace trofi::nn
