#include "unidoor/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "unidoor/error.hpp"

namespace unidoor::nn {

namespace {
constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
}

Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    out.col(j) = logits.col(j).array() - lse;
  }
  return out;
}

Eigen::VectorXd categorical_log_prob(const Eigen::MatrixXd& logits, const std::vector<int>& actions,
                                     Eigen::MatrixXd* d_logits) {
  if (static_cast<Eigen::Index>(actions.size()) != logits.cols()) {
    throw StateError("categorical_log_prob: one action per column required");
  }
  const Eigen::MatrixXd logp = log_softmax(logits);
  Eigen::VectorXd out(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) out(j) = logp(actions[j], j);
  if (d_logits) {
    *d_logits = -logp.array().exp();
    for (Eigen::Index j = 0; j < logits.cols(); ++j) (*d_logits)(actions[j], j) += 1.0;
  }
  return out;
}

Eigen::VectorXd categorical_entropy(const Eigen::MatrixXd& logits, Eigen::MatrixXd* d_logits) {
  const Eigen::MatrixXd logp = log_softmax(logits);
  const Eigen::MatrixXd p = logp.array().exp();
  const Eigen::VectorXd h = -(p.array() * logp.array()).colwise().sum().transpose();
  if (d_logits) {
    *d_logits = -(p.array() * (logp.rowwise() + h.transpose()).array());
  }
  return h;
}

Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                  const Eigen::MatrixXd& actions, Eigen::MatrixXd* d_mean,
                                  Eigen::MatrixXd* d_log_std) {
  const Eigen::ArrayXd inv_std = (-log_std.array()).exp();
  const Eigen::ArrayXXd z = (actions - mean).array().colwise() * inv_std;
  Eigen::VectorXd out = (-0.5 * z.square()).colwise().sum().transpose();
  out.array() -= log_std.sum() + kLogSqrt2Pi * static_cast<double>(log_std.size());
  if (d_mean) *d_mean = (z.colwise() * inv_std).matrix();
  if (d_log_std) *d_log_std = (z.square() - 1.0).matrix();
  return out;
}

double gaussian_entropy(const Eigen::VectorXd& log_std) {
  return (log_std.array() + 0.5 + kLogSqrt2Pi).sum();
}

double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) kl += p(i) * (std::log(p(i)) - std::log(q(i)));
  }
  return kl;
}

double kl_gaussian(const Eigen::VectorXd& mean1, const Eigen::VectorXd& log_std1,
                   const Eigen::VectorXd& mean2, const Eigen::VectorXd& log_std2) {
  const Eigen::ArrayXd var1 = (2.0 * log_std1.array()).exp();
  const Eigen::ArrayXd var2 = (2.0 * log_std2.array()).exp();
  const Eigen::ArrayXd diff = (mean1 - mean2).array();
  return (log_std2.array() - log_std1.array() + (var1 + diff.square()) / (2.0 * var2) - 0.5).sum();
}

Surrogate clipped_surrogate(double ratio, double advantage, double clip) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage;
  if (unclipped <= clipped) return {unclipped, unclipped, false};
  return {clipped, 0.0, true};
}

}  // namespace unidoor::nn
