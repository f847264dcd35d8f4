#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "trofi/rng.hpp"

namespace trofi::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation { Identity, Relu, Tanh };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct Layer {
  Matrix weight;   // fan_in x fan_out
  RowVector bias;  // fan_out
};

/// Per-parameter gradients mirroring an Mlp's layers, plus the gradient with
/// respect to the network input.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<RowVector> bias;
  Matrix input;

  /// Adds `other` scaled by `scale` into the parameter gradients.
  void accumulate(const Gradients& other, double scale = 1.0);
};

/// Activations recorded by a forward pass for the subsequent backward pass.
struct Tape {
  std::vector<Matrix> activations;  // activations[0] is the input
};

/// Dense feed-forward network, rows are batch elements.
class Mlp {
 public:
  Mlp() = default;

  /// Glorot-uniform weights, zero biases. Throws ConfigError for fewer than
  /// two layer sizes or non-positive sizes.
  static Mlp init(const std::vector<int>& layer_sizes, Activation hidden, Activation output,
                  Rng& rng);

  Matrix forward(const Matrix& batch) const;
  Matrix forward(const Matrix& batch, Tape& tape) const;

  /// Reverse-mode gradient of sum(outputs .* upstream). When `params` is false
  /// only the input gradient is produced.
  Gradients backward(const Tape& tape, const Matrix& upstream, bool params = true) const;
  Gradients backward(const Matrix& batch, const Matrix& upstream) const;

  Gradients zero_gradients() const;

  const std::vector<int>& layer_sizes() const noexcept { return sizes_; }
  Activation hidden_activation() const noexcept { return hidden_; }
  Activation output_activation() const noexcept { return output_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }

  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(const std::vector<double>& flat);
  bool same_architecture(const Mlp& other) const;
  bool all_finite() const;

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  void check_input(const Matrix& batch) const;

  std::vector<int> sizes_;
  Activation hidden_ = Activation::Relu;
  Activation output_ = Activation::Identity;
  std::vector<Layer> layers_;
};

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Matrix> m_weight, v_weight;
  std::vector<RowVector> m_bias, v_bias;

  static AdamState for_network(const Mlp& net, AdamConfig config = {});
};

/// One bias-corrected Adam update. Throws DivergenceError on non-finite
/// gradients, leaving both arguments untouched.
void adam_step(Mlp& net, const Gradients& grads, AdamState& state);

/// target <- tau * online + (1 - tau) * target.
void soft_update(Mlp& target, const Mlp& online, double tau);

nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace trofi::nn
