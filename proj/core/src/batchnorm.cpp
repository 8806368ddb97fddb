#include "laddersim/batchnorm.hpp"

#include <cmath>
#include <stdexcept>

namespace laddersim {

Eigen::VectorXd BNParams::weights(Eigen::Index n) const {
  if (!weight_vector) {
    return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  }
  const Eigen::VectorXd& w = *weight_vector;
  if (w.size() != n) throw std::runtime_error("bn: weight vector length mismatch");
  if ((w.array() < 0.0).any()) throw std::runtime_error("bn: negative weight");
  if (std::abs(w.sum() - 1.0) > 1e-9)
    throw std::runtime_error("bn: weights must sum to 1");
  return w;
}

double weighted_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                    const Eigen::VectorXd& w) {
  return (a.array() * b.array() * w.array()).sum();
}

BNForwardRecord bn_forward(const Eigen::VectorXd& f, const BNParams& params) {
  if (f.size() < 2) throw std::runtime_error("bn: input length must be >= 2");
  BNForwardRecord r;
  r.f = f;
  r.w = params.weights(f.size());
  r.mu = (f.array() * r.w.array()).sum();
  r.centered = f.array() - r.mu;
  r.sigma = std::sqrt(weighted_dot(r.centered, r.centered, r.w));
  if (r.sigma <= 0.0)
    throw std::runtime_error("bn: constant input, sigma = 0");
  r.standardized = r.centered / r.sigma;
  r.out = params.c1 * r.standardized.array() + params.c0;
  return r;
}

Eigen::VectorXd project_complement(const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& f,
                                   const Eigen::VectorXd& w) {
  // Weighted Gram-Schmidt basis of span{1, f}.
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(g.size());
  Eigen::VectorXd u = f.array() - weighted_dot(f, ones, w);
  const double un = std::sqrt(weighted_dot(u, u, w));
  Eigen::VectorXd out = g.array() - weighted_dot(g, ones, w);
  if (un > 0.0) {
    u /= un;
    out -= weighted_dot(g, u, w) * u;
  }
  return out;
}

BNBackwardResult bn_backward(const Eigen::VectorXd& g,
                             const BNForwardRecord& record,
                             const BNParams& params) {
  if (g.size() != record.f.size())
    throw std::runtime_error("bn: gradient length mismatch");
  BNBackwardResult res;
  res.g_f = (params.c1 / record.sigma) *
            project_complement(g, record.standardized, record.w);
  res.g_c[0] = weighted_dot(record.standardized, g, record.w);
  res.g_c[1] = (g.array() * record.w.array()).sum();
  return res;
}

}  // namespace laddersim
