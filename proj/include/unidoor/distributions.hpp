#pragma once

#include <Eigen/Dense>
#include <vector>

// Batched log-likelihood, entropy and divergence primitives for the policy
// heads, each paired with its derivative. Batches are column-stacked.
namespace unidoor::nn {

// Column-wise log-softmax, computed with the max-shift so logits of
// magnitude up to several hundred stay finite.
Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits);

// log p(a_j | logits_j) per column. `d_logits`, when non-null, receives
// d log p / d logits = onehot(a) - softmax.
Eigen::VectorXd categorical_log_prob(const Eigen::MatrixXd& logits, const std::vector<int>& actions,
                                     Eigen::MatrixXd* d_logits = nullptr);

// Entropy per column; `d_logits` receives dH/dlogits = -p (log p + H).
Eigen::VectorXd categorical_entropy(const Eigen::MatrixXd& logits,
                                    Eigen::MatrixXd* d_logits = nullptr);

// Diagonal Gaussian log-density summed over dimensions, per column.
// d/dmean = (a - mean) / sigma^2 ; d/dlog_std = ((a - mean)/sigma)^2 - 1.
Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                  const Eigen::MatrixXd& actions, Eigen::MatrixXd* d_mean = nullptr,
                                  Eigen::MatrixXd* d_log_std = nullptr);

// Entropy of a diagonal Gaussian; d/dlog_std = 1 per dimension.
double gaussian_entropy(const Eigen::VectorXd& log_std);

// KL(p || q) for two categorical distributions given as probabilities.
double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

// KL(N(m1, s1) || N(m2, s2)) for diagonal Gaussians given log-stds.
double kl_gaussian(const Eigen::VectorXd& mean1, const Eigen::VectorXd& log_std1,
                   const Eigen::VectorXd& mean2, const Eigen::VectorXd& log_std2);

// PPO clipped surrogate for one sample, min(r A, clip(r, 1-e, 1+e) A), and
// its derivative with respect to log pi (r = exp(log pi - log pi_old)).
// When the clipped branch is strictly smaller the derivative is zero.
struct Surrogate {
  double value;
  double d_log_prob;
  bool clipped;
};
Surrogate clipped_surrogate(double ratio, double advantage, double clip);

}  // namespace unidoor::nn
