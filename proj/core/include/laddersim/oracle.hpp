#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "laddersim/dynamics.hpp"
#include "laddersim/teacher.hpp"

namespace laddersim {

// How leaf events map to raw input vectors. Delta mode: one fixed vector per
// event (P(x|z) a point mass). Lossy mode: a finite weighted set per event.
struct InputModel {
  enum class Mode { Delta, Lossy };
  Mode mode = Mode::Delta;
  // leaf id -> per event -> list of (vector of dim n_leaf, weight)
  std::map<std::string, std::vector<std::vector<std::pair<Eigen::VectorXd, double>>>>
      choices;

  // One-hot encoding of the leaf event; makes the leaf boundary F = I
  // literal. Requires m == n at leaves.
  static InputModel delta_onehot(const RegionTree& tree);
  // Per event, `per_event` random vectors with random conditional weights.
  static InputModel lossy_random(const RegionTree& tree, int per_event,
                                 std::uint64_t seed);

  void validate(const RegionTree& tree) const;
};

struct EnumeratedInput {
  std::vector<int> leaf_events;   // by leaf order
  std::vector<int> leaf_choice;   // vector index per leaf
  double weight;                  // exact probability
};

std::vector<EnumeratedInput> enumerate_inputs(const TeacherGraph& g,
                                              const InputModel& im,
                                              std::int64_t cap = 1'000'000);

void write_inputs_csv(const TeacherGraph& g,
                      const std::vector<EnumeratedInput>& inputs,
                      std::ostream& os);

// Exact per-input forward/backward of the locally connected ReLU network.
// Row i of each matrix is input i; columns are the region's nodes.
struct OracleEval {
  std::map<std::string, Eigen::MatrixXd> f, fraw, gate, g, graw;
  std::map<std::string, std::vector<int>> event;  // per region, per input
  std::vector<double> weight;                     // per input
  std::vector<int> label;                         // z_root per input
};

OracleEval net_forward_backward(const TeacherGraph& g, const InputModel& im,
                                const std::vector<EnumeratedInput>& inputs,
                                const WeightSet& weights);

// Dataset loss 0.5 * E_x ||onehot(y) - f_root||^2 for gradient checks.
double oracle_loss(const TeacherGraph& g, const InputModel& im,
                   const std::vector<EnumeratedInput>& inputs,
                   const WeightSet& weights);

// E[values | condition], conditioning label per input in {0..k-1}. Rows of
// the result are condition values; a condition with zero total probability
// yields a zero row.
Eigen::MatrixXd conditional_mean(const Eigen::MatrixXd& values,
                                 const std::vector<int>& condition, int k,
                                 const std::vector<double>& weight);

// f_j(z_alpha) / g_j(z_alpha): conditional expectations over region events.
Eigen::MatrixXd marginal_f(const OracleEval& eval, const RegionTree& tree,
                           const std::string& region);
Eigen::MatrixXd marginal_g(const OracleEval& eval, const RegionTree& tree,
                           const std::string& region);

// Identifier of the region's content x_alpha per input: distinct id per
// distinct tuple of (event, choice) over the leaves under the region.
std::vector<int> content_ids(const TeacherGraph& g,
                             const std::vector<EnumeratedInput>& inputs,
                             const std::string& region, int* count = nullptr);

// Tower-property check g_j(x_child) = E[g_j(x_parent) | x_child] for every
// node of `parent` over every content value of `child`. Returns the max
// violation.
double check_recursion(const TeacherGraph& g, const OracleEval& eval,
                       const std::vector<EnumeratedInput>& inputs,
                       const std::string& parent, const std::string& child);

// Max over all parent/child region pairs.
double check_recursion_all(const TeacherGraph& g, const OracleEval& eval,
                           const std::vector<EnumeratedInput>& inputs);

// Every summarization function a bijection from child tuples to events, so
// that delta inputs make P(x|z_alpha) a delta at every level.
bool injective_ladder(const TeacherGraph& g);

struct ExactnessReport {
  double max_div_F = 0.0;
  double max_div_Gt = 0.0;
  double max_div_dW = 0.0;
  double decorrelation = 0.0;  // max |E[f'g_raw|z] - E[f'|z]E[g_raw|z]|
  std::map<std::string, double> per_region_F, per_region_Gt;

  double max_divergence() const {
    return std::max({max_div_F, max_div_Gt, max_div_dW});
  }
  nlohmann::ordered_json to_json() const;
};

// Runs the event-space dynamics and the input-space oracle on the same
// weights and reports the divergence of F, Gt and dW. In delta mode this
// refuses non-injective ladders, where exactness is not claimed.
ExactnessReport compare_exactness(const TeacherGraph& g,
                                  const EventTables& tables,
                                  const WeightSet& weights,
                                  const InputModel& im,
                                  std::int64_t cap = 1'000'000);

}  // namespace laddersim
