#include "unidoor/mlp.hpp"

#include <cmath>
#include <string>

#include "unidoor/error.hpp"

namespace unidoor::nn {

Mlp::Mlp(std::vector<int> layer_sizes, Activation hidden, OutputActivation output)
    : sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
  if (sizes_.size() < 2) throw ConfigError("mlp needs at least an input and an output size");
  Eigen::Index total = 0;
  for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
    if (sizes_[k] <= 0 || sizes_[k + 1] <= 0) throw ConfigError("mlp layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[k + 1]) * (sizes_[k] + 1);
  }
  params_ = Eigen::VectorXd::Zero(total);
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(int layer) {
  return {params_.data() + weight_offset(layer), sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int layer) const {
  return {params_.data() + weight_offset(layer), sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<Eigen::VectorXd> Mlp::bias(int layer) {
  return {params_.data() + bias_offset(layer), sizes_[layer + 1]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
  return {params_.data() + bias_offset(layer), sizes_[layer + 1]};
}

Eigen::MatrixXd orthogonal_matrix(int rows, int cols, double gain, Rng& rng) {
  const bool tall = rows >= cols;
  const int n = tall ? rows : cols;
  const int m = tall ? cols : rows;
  Eigen::MatrixXd a(n, m);
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = rng.normal();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
  // Sign fix makes the distribution uniform (Haar) over orthogonal matrices.
  for (int j = 0; j < m; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;

  q *= gain;
  if (tall) return q;
  return q.transpose();
}

void Mlp::initialize(const InitScheme& scheme, Rng& rng) {
  params_.setZero();
  for (int k = 0; k < num_layers(); ++k) {
    const int out = sizes_[k + 1];
    const int in = sizes_[k];
    auto w = weight(k);
    if (scheme.kind == InitKind::Orthogonal) {
      const double gain = k + 1 == num_layers() ? scheme.output_gain : scheme.gain;
      w = orthogonal_matrix(out, in, gain, rng);
    } else {
      const double stddev = scheme.gain * std::sqrt(2.0 / static_cast<double>(in + out));
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = stddev * rng.normal();
    }
  }
}

namespace {

void check_finite(const Eigen::MatrixXd& m, int layer, const char* what) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite ") + what + " at layer " + std::to_string(layer),
                       layer);
  }
}

}  // namespace

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (x.rows() != input_dim()) throw StateError("mlp input has wrong dimension");
  check_finite(x, 0, "input");
  if (cache) {
    cache->activations.resize(sizes_.size());
    cache->activations[0] = x;
  }

  Eigen::MatrixXd a = x;
  for (int k = 0; k < num_layers(); ++k) {
    Eigen::MatrixXd z = weight(k) * a;
    z.colwise() += bias(k);
    const bool last = k + 1 == num_layers();
    if (!last) {
      if (hidden_ == Activation::Tanh) {
        z = z.array().tanh();
      } else {
        z = z.array().max(0.0);
      }
    } else if (output_ == OutputActivation::Tanh) {
      z = z.array().tanh();
    }
    check_finite(z, k, "activation");
    if (cache) cache->activations[k + 1] = z;
    a = std::move(z);
  }
  return a;
}

void Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_out,
                   Eigen::Ref<Eigen::VectorXd> grad, Eigen::MatrixXd* d_input) const {
  if (grad.size() != num_params()) throw StateError("gradient buffer has wrong size");
  Eigen::MatrixXd delta = d_out;
  for (int k = num_layers() - 1; k >= 0; --k) {
    const Eigen::MatrixXd& out = cache.activations[k + 1];
    const bool last = k + 1 == num_layers();
    const bool tanh = last ? output_ == OutputActivation::Tanh : hidden_ == Activation::Tanh;
    if (tanh) {
      delta.array() *= 1.0 - out.array().square();
    } else if (!last) {
      delta.array() *= (out.array() > 0.0).cast<double>();
    }
    check_finite(delta, k, "gradient");

    const Eigen::MatrixXd& in = cache.activations[k];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + weight_offset(k), sizes_[k + 1], sizes_[k]);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + bias_offset(k), sizes_[k + 1]);
    gw.noalias() += delta * in.transpose();
    gb.noalias() += delta.rowwise().sum();

    if (k > 0 || d_input) {
      Eigen::MatrixXd next = weight(k).transpose() * delta;
      if (k == 0) {
        *d_input = std::move(next);
      } else {
        delta = std::move(next);
      }
    }
  }
}

Eigen::MatrixXd Mlp::last_hidden(const Eigen::MatrixXd& x) const {
  Cache cache;
  forward(x, &cache);
  return cache.activations[num_layers() - 1];
}

}  // namespace unidoor::nn
