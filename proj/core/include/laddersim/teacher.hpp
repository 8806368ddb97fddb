#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace laddersim {

// (parent, child) region ids. Keys both weight matrices W_{child->parent}
// and event tables P(z_child | z_parent).
using EdgeKey = std::pair<std::string, std::string>;

struct Region {
  std::string id;
  std::vector<std::string> children;  // ordered; empty for leaves
  int m = 0;  // number of events of z
  int n = 0;  // number of student nodes assigned
  int level = 0;  // depth from leaves
  bool leaf() const { return children.empty(); }
};

// Structural part of a ladder: the region tree with (m, n) declarations.
// Shared by the event-space dynamics and the input-space network; carries no
// distributions.
class RegionTree {
 public:
  RegionTree() = default;
  explicit RegionTree(std::vector<Region> regions);

  const std::vector<Region>& regions() const { return regions_; }
  const Region& region(const std::string& id) const;
  const Region& root() const { return region(root_); }
  const std::string& root_id() const { return root_; }
  const std::vector<std::string>& leaf_order() const { return leaf_order_; }
  const std::vector<std::string>& parents(const std::string& id) const;
  bool has_region(const std::string& id) const;

  // All (parent, child) edges, parents in topological (leaves-first) order.
  std::vector<EdgeKey> edges() const;

  // Regions ordered leaves first, root last.
  const std::vector<std::string>& topo_order() const { return topo_order_; }

 private:
  std::vector<Region> regions_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<std::string>> parents_;
  std::vector<std::string> leaf_order_;
  std::vector<std::string> topo_order_;
  std::string root_;
};

struct SummarizationFn {
  std::string region;
  // Total map from child-event tuples to a parent event. Tuple index is
  // mixed-radix over the children in declared order, first child most
  // significant.
  std::vector<int> table;
};

struct TeacherSpec {
  std::vector<Region> regions;
  // per non-leaf region: explicit table, or "bijective" | "xor" | "random:<seed>"
  std::map<std::string, nlohmann::json> fns;
  // "uniform" | "random:<seed>" | explicit array over leaf tuples
  nlohmann::json leaf_prior = "uniform";

  static TeacherSpec from_json(const nlohmann::json& j);
};

// A validated summarization ladder: region tree + deterministic parent
// functions + joint prior over leaf event tuples.
class TeacherGraph {
 public:
  static TeacherGraph build(const TeacherSpec& spec);
  static TeacherGraph from_json(const nlohmann::json& j);
  static TeacherGraph from_file(const std::string& path);

  const RegionTree& tree() const { return tree_; }
  const SummarizationFn& fn(const std::string& id) const;
  const std::vector<double>& leaf_prior() const { return leaf_prior_; }

  std::int64_t leaf_tuple_count() const;
  // Decode a leaf tuple index into per-leaf events (leaf_order ordering,
  // first leaf most significant).
  std::vector<int> leaf_tuple(std::int64_t index) const;
  std::int64_t leaf_tuple_index(const std::vector<int>& events) const;
  // Event of any region given the leaf events.
  int event_of(const std::string& id, const std::vector<int>& leaf_events) const;

 private:
  RegionTree tree_;
  std::map<std::string, SummarizationFn> fns_;
  std::vector<double> leaf_prior_;

  void validate() const;
};

struct JointTables {
  std::map<std::string, Eigen::VectorXd> marginal;  // P(z_alpha)
  // (parent, child) -> m_parent x m_child matrix of P(z_parent, z_child)
  std::map<EdgeKey, Eigen::MatrixXd> joint;
};

// Exact joint/marginal distributions by pushing the leaf prior through the
// summarization functions, enumerating every leaf tuple.
JointTables enumerate_events(const TeacherGraph& g,
                             std::int64_t cap = 1'000'000);

struct EventTable {
  std::string alpha;  // parent
  std::string beta;   // child
  Eigen::MatrixXd P;   // (a,b) = P(z_beta = b | z_alpha = a)
  Eigen::MatrixXd Pb;  // (a,b) = P(z_alpha = a | z_beta = b)
  Eigen::VectorXd prior_alpha;
  Eigen::VectorXd prior_beta;
};

EventTable conditional_table(const TeacherGraph& g, const JointTables& jt,
                             const std::string& alpha, const std::string& beta);

struct EventTables {
  std::map<EdgeKey, EventTable> edge;           // (parent, child)
  std::map<std::string, Eigen::VectorXd> prior;  // P(z_alpha)

  const EventTable& at(const std::string& parent,
                       const std::string& child) const;
};

// Enumerates once and derives every parent-child conditional table.
EventTables make_tables(const TeacherGraph& g, std::int64_t cap = 1'000'000);

struct ConsistencyReport {
  double max_row_sum_violation = 0.0;
  double max_lambda_violation = 0.0;   // || Lambda_b Pb^T - P^T Lambda_a ||_max
  double max_marginal_violation = 0.0;  // cross-table marginal agreement
  std::vector<std::string> flagged;

  bool ok(double tol = 1e-12) const {
    return max_row_sum_violation < tol && max_lambda_violation < tol &&
           max_marginal_violation < tol;
  }
};

ConsistencyReport validate_consistency(const EventTables& tables);

// One row per conditioning event of alpha.
void write_table_csv(const EventTable& t, std::ostream& os);

}  // namespace laddersim
