#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace laddersim {

// Scale/shift parameters plus the weighting that defines the inner product:
// uniform 1/N over batch rows, or an event prior P(z_alpha) in event space.
struct BNParams {
  double c1 = 1.0;
  double c0 = 0.0;
  // Nonnegative, sums to 1. Empty means uniform 1/N.
  std::optional<Eigen::VectorXd> weight_vector;

  Eigen::VectorXd weights(Eigen::Index n) const;
};

struct BNForwardRecord {
  Eigen::VectorXd f;         // input
  Eigen::VectorXd centered;  // f - mu
  Eigen::VectorXd standardized;  // centered / sigma, unit weighted norm
  Eigen::VectorXd out;       // c1 * standardized + c0
  double mu = 0.0;
  double sigma = 0.0;
  Eigen::VectorXd w;         // weighting actually used
};

// Weighted inner product <a, b> = sum_i w_i a_i b_i.
double weighted_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                    const Eigen::VectorXd& w);

BNForwardRecord bn_forward(const Eigen::VectorXd& f, const BNParams& params);

struct BNBackwardResult {
  Eigen::VectorXd g_f;       // (c1/sigma) * projection of g off span{f, 1}
  Eigen::Vector2d g_c;       // [<standardized, g>, <1, g>]
};

BNBackwardResult bn_backward(const Eigen::VectorXd& g,
                             const BNForwardRecord& record,
                             const BNParams& params);

// Projection onto the orthogonal complement of span{f, 1} under the weighted
// inner product (the c1/sigma factor left out). Exposed for the geometry
// checks: idempotence, span{f,1} == span{standardized,1}.
Eigen::VectorXd project_complement(const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& f,
                                   const Eigen::VectorXd& w);

// Per-node energy bookkeeping for a training run with BN attached.
struct EnergyRow {
  int step = 0;
  int node = 0;
  double energy = 0.0;       // E_j = 0.5 ||W_{.j}||^2 before the update
  double w_dot_dw = 0.0;     // <w_j, dW_j>
  double residual = 0.0;     // |E(t+1) - E(t) - (lr^2/2)||dW_j||^2|
};

}  // namespace laddersim
