#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "laddersim/dynamics.hpp"
#include "laddersim/teacher.hpp"

namespace laddersim {

// Event-index convention throughout: an event of a region with n binary
// factors is the big-endian binary number of (z[1], ..., z[n]), z[1] most
// significant.

// Tensor product p[0] (x) p[1] (x) ... over binary factor axes.
Eigen::VectorXd tensor_pattern(const std::vector<Eigen::Vector2d>& axes);

// Conditional table factored along a partition of the child's factors:
// block i is 2 x 2^{|S_i|}, mapping parent factor i to the child factors in
// partition[i]. compose() assembles the full m_parent x m_child table.
struct FactoredTable {
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<std::vector<int>> partition;  // per parent factor, child factor ids
  int n_child_factors = 0;

  void validate() const;  // shapes, disjoint cover, row-stochastic blocks
  Eigen::MatrixXd compose() const;
};

struct DisentangleFit {
  // Per column: the best-fit 2-vector along the column's own factor axis and
  // the infinity-norm residual of the rank-1 pattern.
  std::vector<Eigen::Vector2d> factor;
  Eigen::VectorXd residual;

  double max_residual() const {
    return residual.size() ? residual.maxCoeff() : 0.0;
  }
  bool disentangled(double tol = 1e-10) const { return max_residual() < tol; }
};

// Column j against the pattern 1 (x) ... (x) f (x) ... (x) 1 (f on axis j).
// The least-squares fit is the mean over the other axes. Errors unless the
// row count is 2^(number of columns).
DisentangleFit fit_activation(const Eigen::MatrixXd& F);

// Column j against p[1] (x) ... (x) g (x) ... (x) p[n] (g on axis j), priors
// on the other axes. Errors on a zero prior factor.
DisentangleFit fit_gradient(const Eigen::MatrixXd& Gt,
                            const std::vector<Eigen::Vector2d>& priors);

struct SeparabilityReport {
  bool separable = false;
  double off_block_mass = 0.0;
};

// W rows are child nodes, columns parent nodes; column j may only touch the
// rows in partition[j]. Errors if the partition does not cover the rows.
SeparabilityReport is_separable(const Eigen::MatrixXd& W,
                                const std::vector<std::vector<int>>& partition);

// The worked two-factor/three-factor configuration: parent with factors
// (a1, a2), child with factors (b1, b2, b3), partition {{b1, b2}, {b3}}.
// Priors flow top-down, so the child pair (b1, b2) has a joint law that is
// generally not a product -- which is exactly what the backward demo probes.
struct DisInstance {
  FactoredTable table;                       // blocks P12 (2x4), P3 (2x2)
  std::vector<Eigen::Vector2d> prior_alpha;  // per parent factor
  Eigen::VectorXd prior_alpha_joint;         // length 4 product
  Eigen::VectorXd prior_b12;                 // joint of (b1, b2), length 4
  std::vector<Eigen::Vector2d> prior_beta;   // per-child-factor marginals
  Eigen::MatrixXd W;                         // 3x2 separable
  std::vector<Eigen::Vector2d> f_beta;       // disentangled child activation
  std::vector<Eigen::Vector2d> g_alpha;      // disentangled parent gradient

  Eigen::MatrixXd P() const { return table.compose(); }
  Eigen::MatrixXd F_beta() const;   // 8x3
  Eigen::MatrixXd Gt_alpha() const; // 4x2

  // Two-region ladder view of the same data, so the dynamics entry points
  // can run on it directly.
  RegionTree tree() const;
  EventTables tables() const;
  WeightSet weights() const;
};

DisInstance make_pair_instance(std::uint64_t seed, bool centered = true);

struct ForwardTheoremReport {
  // Residual of the parent activation per variant, keyed
  // "relu=0,bn=0" ... "relu=1,bn=1".
  std::map<std::string, double> residual;
  double max_residual = 0.0;
  bool pass(double tol = 1e-10) const { return max_residual < tol; }
  nlohmann::ordered_json to_json() const;
};

// Forward pass through the instance under all four (+-ReLU, +-BN) variants;
// the parent activation must stay disentangled in each. Verifies the
// theorem's hypotheses first (factored table, separable W, disentangled
// child) and errors naming the violated one.
ForwardTheoremReport check_forward_theorem(const DisInstance& inst);

// Same forward with an off-block perturbation added to W; returns the
// resulting (generically large) residual under plain ReLU.
double forward_nonseparable_control(const DisInstance& inst, double bump = 0.5);

struct SeparableUpdateReport {
  double off_block_mass = 0.0;
  double block_formula_error = 0.0;  // vs the two per-block closed forms
  bool pass(double tol = 1e-10) const {
    return off_block_mass < tol && block_formula_error < 1e-10;
  }
  nlohmann::ordered_json to_json() const;
};

// dW from dynamics.weight_update on the instance's disentangled F/Gt must be
// separable, and its blocks must match dw_12 = (P12 F12)^T g1 and
// dw_3 = (P3 f3)^T g2. Errors if the gradient columns do not sum to zero.
SeparableUpdateReport check_separable_update(const DisInstance& inst);

struct BackwardDemoStats {
  int instances = 0;
  int above_threshold = 0;         // residual > 1e-6
  double min_residual = 0.0;
  double max_residual = 0.0;
  double max_identity_violation = 0.0;  // total-probability identities
  nlohmann::ordered_json to_json() const;
};

// Ensemble statistic for the backward obstruction: the raw child gradient
// P^T Gt_alpha W^T generically fails the disentangled-gradient pattern, while
// the total-probability identities P3^T p_a2 = p_b3 and P12^T p_a1 = p_b12
// hold exactly.
BackwardDemoStats backward_residual_demo(int instances, std::uint64_t base_seed);

// Raw child gradient and its residual for a single instance.
double backward_residual(const DisInstance& inst,
                         Eigen::MatrixXd* graw_out = nullptr);

}  // namespace laddersim
