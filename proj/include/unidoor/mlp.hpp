#pragma once

#include <Eigen/Dense>
#include <vector>

#include "unidoor/rng.hpp"

namespace unidoor::nn {

enum class Activation { Tanh, ReLU };
enum class OutputActivation { Identity, Tanh };

enum class InitKind { Orthogonal, XavierNormal };

struct InitScheme {
  InitKind kind = InitKind::Orthogonal;
  double gain = 1.4142135623730951;
  // Gain for the last affine layer; orthogonal PPO heads use 0.01 (actor)
  // or 1.0 (critic). Ignored by XavierNormal, which uses `gain` throughout.
  double output_gain = 1.0;
};

/// Fully connected network with all parameters in one contiguous vector.
/// Layer k stores its weight (out x in, column-major) followed by its bias.
/// Batches are column-stacked: an input batch is (input_dim x batch).
class Mlp {
 public:
  struct Cache {
    // activations[0] is the input; activations[k] the output of layer k.
    std::vector<Eigen::MatrixXd> activations;
  };

  Mlp() = default;
  Mlp(std::vector<int> layer_sizes, Activation hidden,
      OutputActivation output = OutputActivation::Identity);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  Activation hidden_activation() const { return hidden_; }
  OutputActivation output_activation() const { return output_; }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  Eigen::Index num_params() const { return params_.size(); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  // Weights per scheme, biases zero.
  void initialize(const InitScheme& scheme, Rng& rng);

  // Throws NumericError carrying the layer index when a non-finite value
  // appears in an input or a layer output.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;

  // Adds dL/dparams to `grad` given dL/doutput. When `d_input` is non-null
  // it receives dL/dinput.
  void backward(const Cache& cache, const Eigen::MatrixXd& d_out, Eigen::Ref<Eigen::VectorXd> grad,
                Eigen::MatrixXd* d_input = nullptr) const;

  // Output of the last hidden layer for a batch (activation dumps).
  Eigen::MatrixXd last_hidden(const Eigen::MatrixXd& x) const;

 private:
  Eigen::Index weight_offset(int layer) const { return offsets_[layer]; }
  Eigen::Index bias_offset(int layer) const {
    return offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer];
  }

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Activation hidden_ = Activation::Tanh;
  OutputActivation output_ = OutputActivation::Identity;
  Eigen::VectorXd params_;
};

// Random (rows x cols) matrix with orthonormal rows or columns (whichever is
// the smaller dimension), scaled by `gain`.
Eigen::MatrixXd orthogonal_matrix(int rows, int cols, double gain, Rng& rng);

}  // namespace unidoor::nn
