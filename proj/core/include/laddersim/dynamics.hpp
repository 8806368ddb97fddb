#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "laddersim/batchnorm.hpp"
#include "laddersim/teacher.hpp"

namespace laddersim {

enum class GatingMode {
  Hard,      // D = 1[Fraw > 0], the ReLU gate in event space
  Linear,    // D = 1, no nonlinearity
  External,  // D supplied per region (e.g. oracle-side E[f'|z])
};

struct WeightSet {
  // (parent, child) -> n_child x n_parent, or (n_child + 1) x n_parent when
  // bias_augmented (last row is the bias).
  std::map<EdgeKey, Eigen::MatrixXd> W;
  bool bias_augmented = false;
};

// Seeded default initialization: uniform in [-s, s] with s = 1/sqrt(n_child).
WeightSet init_weights(const RegionTree& tree, std::uint64_t seed,
                       bool bias_augmented = false);

// Per-region BN applied to the columns of F after the ReLU gating, with
// weight vector P(z_alpha). c1/c0 trainable alongside the weights.
struct BNConfig {
  // region -> per-node (c1, c0)
  std::map<std::string, std::vector<Eigen::Vector2d>> params;

  bool enabled(const std::string& region) const { return params.count(region) != 0; }
  static BNConfig standard(const RegionTree& tree,
                           const std::set<std::string>& regions,
                           double c1 = 1.0, double c0 = 0.0);
};

struct LayerState {
  std::map<std::string, Eigen::MatrixXd> F;     // post-gate (and post-BN) activations
  std::map<std::string, Eigen::MatrixXd> Fraw;  // pre-nonlinearity
  std::map<std::string, Eigen::MatrixXd> D;     // gating values
  std::map<std::string, Eigen::MatrixXd> Gt;    // unnormalized gradients
  std::map<std::string, std::vector<BNForwardRecord>> bn_records;  // per column
  std::map<std::string, std::vector<Eigen::Vector2d>> bn_grads;    // per column
  bool has_forward = false;
  bool has_backward = false;
};

// Bottom boundary: F = I at every leaf (requires m == n there) unless
// leaf_activations supplies an explicit matrix for a leaf.
LayerState forward_pass(
    const RegionTree& tree, const EventTables& tables, const WeightSet& weights,
    GatingMode gating = GatingMode::Hard, const BNConfig* bn = nullptr,
    const std::map<std::string, Eigen::MatrixXd>* external_gates = nullptr,
    const std::map<std::string, Eigen::MatrixXd>* leaf_activations = nullptr);

// Top boundary defaults to Gt_root = Lambda_root (I - F_root). The a1/a2
// parameterization of the top gradient is available as an alternative
// boundary; it is not claimed equivalent to the default.
struct TopBoundary {
  std::optional<Eigen::MatrixXd> explicit_gradient;  // unnormalized, m x n
  std::optional<std::pair<double, double>> a1a2;
};

void backward_pass(const RegionTree& tree, const EventTables& tables,
                   const WeightSet& weights, LayerState& state,
                   const BNConfig* bn = nullptr,
                   const TopBoundary& top = TopBoundary{});

// dW_{child->parent} = (P_{parent,child} F_child)^T Gt_parent per edge, with
// the optional Frobenius cap applied per edge.
std::map<EdgeKey, Eigen::MatrixXd> weight_update(
    const RegionTree& tree, const EventTables& tables, const WeightSet& weights,
    const LayerState& state, std::optional<double> max_update_norm = {});

// ||F_root - I||_F^2; requires m == n at the root.
double loss(const RegionTree& tree, const LayerState& state);

struct TrainConfig {
  double lr = 0.05;
  int steps = 100;
  std::optional<double> max_update_norm;
  GatingMode gating = GatingMode::Hard;
  std::uint64_t seed = 0;
  std::set<std::string> bn_regions;  // BN after ReLU at these regions
  TopBoundary top;
  // Track per-node energies of every edge into this region (for the BN
  // conservation checks).
  std::optional<std::string> energy_region;
};

struct TrajectoryPoint {
  int step = 0;
  double loss = 0.0;
  std::map<EdgeKey, double> update_norm;
};

struct TrainResult {
  std::vector<TrajectoryPoint> trajectory;
  WeightSet weights;      // final
  BNConfig bn;            // final BN parameters
  std::vector<EnergyRow> energy;  // filled when energy_region is set
};

// Plain gradient ascent on the event-space dynamics: W <- W + lr * dW.
// Aborts with the step index if a NaN/Inf shows up.
TrainResult train(const RegionTree& tree, const EventTables& tables,
                  const WeightSet& init, const TrainConfig& config);

void write_trajectory_csv(const TrainResult& r, std::ostream& os);
void write_energy_csv(const std::vector<EnergyRow>& rows, std::ostream& os);

// Weight checkpoint: one CSV matrix per edge plus a manifest naming shapes.
void save_weights(const WeightSet& w, const std::string& dir);
WeightSet load_weights(const std::string& dir);

}  // namespace laddersim
