#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "laddersim/dynamics.hpp"
#include "laddersim/teacher.hpp"

namespace laddersim {

struct SeparatingCertificate {
  Eigen::VectorXd w;
  double b = 0.0;
  double margin = 0.0;  // min(w'p_i + b, -max_j(w'p_j + b))
};

struct VertReport {
  std::vector<bool> vertex_flags;
  int vert_count = 0;
  bool all_vert = false;
  // One entry per row; set only for vertices.
  std::vector<std::optional<SeparatingCertificate>> certificates;

  nlohmann::ordered_json to_json() const;
};

// Exact vertex classification of the rows of P: row i is a vertex iff it is
// not a convex combination of the other rows (LP feasibility, tolerance
// 1e-9). Vertices get a separating hyperplane normalized to w'p_i + b = 0.5
// and max_j (w'p_j + b) = -0.5.
VertReport vertex_set(const Eigen::MatrixXd& P);

// Separator for row i with the given positive value on p_i and negative
// ceiling on the rest. Requires row i to be a vertex.
SeparatingCertificate separating_hyperplane(const Eigen::MatrixXd& P, int row,
                                            double positive_value,
                                            double negative_margin);

// The zero-loss ReLU construction for one region: per-child bias-augmented
// weights with w_i'p_i + b_i = 1/|ch(alpha)| on the diagonal and off-diagonal
// values <= -1/(2|ch(alpha)|), so Fraw has unit diagonal and strictly
// negative off-diagonal and the gate recovers F = I. Errors if some P is not
// all-vert, naming the offending row.
std::map<std::string, Eigen::MatrixXd> construct_identity_weights(
    const RegionTree& tree, const EventTables& tables, const std::string& alpha);

// Same construction applied at every non-leaf region; result is a
// bias-augmented WeightSet driving the whole ladder to F = I.
WeightSet construct_ladder_weights(const RegionTree& tree,
                                   const EventTables& tables);

struct VertInvariance {
  bool equal = false;
  std::vector<int> mismatched_rows;
};

// Checks vert(PF) == vert(P). Errors if F is not of full row rank (the
// statement does not apply there).
VertInvariance vert_invariance_check(const Eigen::MatrixXd& P,
                                     const Eigen::MatrixXd& F);

struct LinearBound {
  int rank_bound = 0;   // min over levels of sum of min(m, n)
  double floor = 0.0;   // max(0, m_root - rank_bound)
};

LinearBound linear_lower_bound(const RegionTree& tree);

// Realizes the floor: random full-rank inner weights, top weights from the
// pseudo-inverse of the composed linear map. Returns the achieved loss of
// the resulting linear forward pass (Eckart-Young optimum for the fixed
// inner weights).
double linear_floor_attained(const RegionTree& tree, const EventTables& tables,
                             std::uint64_t seed);

}  // namespace laddersim
