#include "laddersim/teacher.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "laddersim/rng.hpp"

namespace laddersim {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("teacher: " + msg);
}

std::int64_t checked_product(const std::vector<int>& dims) {
  std::int64_t p = 1;
  for (int d : dims) {
    if (d <= 0) fail("non-positive dimension");
    p *= d;
    if (p > (std::int64_t{1} << 50)) fail("tuple space overflow");
  }
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// RegionTree

RegionTree::RegionTree(std::vector<Region> regions) {
  if (regions.empty()) fail("no regions");
  std::map<std::string, Region> byid;
  for (auto& r : regions) {
    if (r.m < 1 || r.n < 1) fail("region " + r.id + ": m and n must be >= 1");
    if (!byid.emplace(r.id, r).second) fail("duplicate region id " + r.id);
  }
  std::map<std::string, std::vector<std::string>> parents;
  for (const auto& [id, r] : byid) {
    std::set<std::string> seen;
    for (const auto& c : r.children) {
      if (!byid.count(c)) fail("region " + id + ": unknown child " + c);
      if (!seen.insert(c).second) fail("region " + id + ": duplicate child " + c);
      parents[c].push_back(id);
    }
  }
  std::vector<std::string> roots;
  for (const auto& [id, r] : byid) {
    if (!parents.count(id)) roots.push_back(id);
  }
  if (roots.size() != 1) fail("expected exactly one root region, found " +
                              std::to_string(roots.size()));
  root_ = roots.front();

  // Levels bottom-up; also detects cycles (a cyclic graph never settles).
  std::map<std::string, int> level;
  std::vector<std::string> order;
  while (order.size() < byid.size()) {
    bool progress = false;
    for (const auto& [id, r] : byid) {
      if (level.count(id)) continue;
      int lv = 0;
      bool ready = true;
      for (const auto& c : r.children) {
        auto it = level.find(c);
        if (it == level.end()) {
          ready = false;
          break;
        }
        lv = std::max(lv, it->second + 1);
      }
      if (ready) {
        level[id] = lv;
        order.push_back(id);
        progress = true;
      }
    }
    if (!progress) fail("cyclic region graph");
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) {
                     return level[a] < level[b];
                   });
  topo_order_ = order;

  regions_.reserve(order.size());
  for (const auto& id : order) {
    Region r = byid[id];
    r.level = level[id];
    index_[id] = regions_.size();
    regions_.push_back(std::move(r));
  }
  for (const auto& r : regions_) {
    if (r.leaf()) leaf_order_.push_back(r.id);
    parents_[r.id] = parents.count(r.id) ? parents[r.id] : std::vector<std::string>{};
  }
}

const Region& RegionTree::region(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) fail("unknown region " + id);
  return regions_[it->second];
}

bool RegionTree::has_region(const std::string& id) const {
  return index_.count(id) != 0;
}

const std::vector<std::string>& RegionTree::parents(const std::string& id) const {
  auto it = parents_.find(id);
  if (it == parents_.end()) fail("unknown region " + id);
  return it->second;
}

std::vector<EdgeKey> RegionTree::edges() const {
  std::vector<EdgeKey> e;
  for (const auto& id : topo_order_) {
    for (const auto& c : region(id).children) e.emplace_back(id, c);
  }
  return e;
}

// ---------------------------------------------------------------------------
// TeacherSpec

TeacherSpec TeacherSpec::from_json(const nlohmann::json& j) {
  TeacherSpec s;
  if (!j.contains("regions")) fail("spec missing 'regions'");
  for (const auto& rj : j.at("regions")) {
    Region r;
    r.id = rj.at("id").get<std::string>();
    if (rj.contains("children"))
      r.children = rj.at("children").get<std::vector<std::string>>();
    r.m = rj.at("m").get<int>();
    r.n = rj.contains("n") ? rj.at("n").get<int>() : r.m;
    s.regions.push_back(std::move(r));
  }
  if (j.contains("fns")) {
    for (auto it = j.at("fns").begin(); it != j.at("fns").end(); ++it) {
      s.fns[it.key()] = it.value();
    }
  }
  if (j.contains("leaf_prior")) s.leaf_prior = j.at("leaf_prior");
  return s;
}

// ---------------------------------------------------------------------------
// TeacherGraph

namespace {

std::vector<int> make_fn_table(const Region& r, const RegionTree& tree,
                               const nlohmann::json& spec) {
  std::vector<int> child_m;
  for (const auto& c : r.children) child_m.push_back(tree.region(c).m);
  const std::int64_t tuples = checked_product(child_m);

  std::vector<int> table;
  if (spec.is_array()) {
    table = spec.get<std::vector<int>>();
    if (static_cast<std::int64_t>(table.size()) != tuples)
      fail("fn for " + r.id + ": table size " + std::to_string(table.size()) +
           " != child tuple count " + std::to_string(tuples));
  } else if (spec.is_string()) {
    const std::string name = spec.get<std::string>();
    if (name == "bijective") {
      if (tuples != r.m)
        fail("fn for " + r.id +
             ": 'bijective' requires m == product of child event counts");
      table.resize(tuples);
      std::iota(table.begin(), table.end(), 0);
    } else if (name == "xor") {
      table.resize(tuples);
      for (std::int64_t t = 0; t < tuples; ++t) {
        std::int64_t rest = t;
        int acc = 0;
        for (std::size_t c = r.children.size(); c-- > 0;) {
          acc += static_cast<int>(rest % child_m[c]);
          rest /= child_m[c];
        }
        table[t] = acc % r.m;
      }
    } else if (name.rfind("random:", 0) == 0) {
      const std::uint64_t seed = std::stoull(name.substr(7));
      if (tuples < r.m)
        fail("fn for " + r.id + ": fewer child tuples than events, cannot be surjective");
      Rng rng(seed ^ std::hash<std::string>{}(r.id));
      // Pin surjectivity: m distinct tuples get the m distinct events.
      std::vector<std::int64_t> idx(tuples);
      std::iota(idx.begin(), idx.end(), 0);
      rng.shuffle(idx);
      table.assign(tuples, -1);
      for (int v = 0; v < r.m; ++v) table[idx[v]] = v;
      for (auto& v : table) {
        if (v < 0) v = static_cast<int>(rng.integer(r.m));
      }
    } else {
      fail("fn for " + r.id + ": unknown builtin '" + name + "'");
    }
  } else {
    fail("fn for " + r.id + ": expected array or string");
  }

  std::vector<bool> hit(r.m, false);
  for (int v : table) {
    if (v < 0 || v >= r.m) fail("fn for " + r.id + ": event out of range");
    hit[v] = true;
  }
  for (int v = 0; v < r.m; ++v) {
    if (!hit[v])
      fail("fn for " + r.id + ": non-surjective, event " + std::to_string(v) +
           " unreachable");
  }
  return table;
}

}  // namespace

TeacherGraph TeacherGraph::build(const TeacherSpec& spec) {
  TeacherGraph g;
  g.tree_ = RegionTree(spec.regions);

  for (const auto& r : g.tree_.regions()) {
    if (r.leaf()) continue;
    auto it = spec.fns.find(r.id);
    if (it == spec.fns.end()) fail("missing summarization fn for region " + r.id);
    g.fns_[r.id] = SummarizationFn{r.id, make_fn_table(r, g.tree_, it->second)};
  }

  const std::int64_t tuples = g.leaf_tuple_count();
  const auto& pj = spec.leaf_prior;
  if (pj.is_string()) {
    const std::string name = pj.get<std::string>();
    if (name == "uniform") {
      g.leaf_prior_.assign(tuples, 1.0 / static_cast<double>(tuples));
    } else if (name.rfind("random:", 0) == 0) {
      Rng rng(std::stoull(name.substr(7)));
      g.leaf_prior_ = rng.dirichlet(static_cast<std::size_t>(tuples));
    } else {
      fail("unknown leaf_prior '" + name + "'");
    }
  } else if (pj.is_array()) {
    g.leaf_prior_ = pj.get<std::vector<double>>();
    if (static_cast<std::int64_t>(g.leaf_prior_.size()) != tuples)
      fail("leaf_prior size mismatch");
  } else {
    fail("leaf_prior must be a string or array");
  }

  g.validate();
  return g;
}

TeacherGraph TeacherGraph::from_json(const nlohmann::json& j) {
  return build(TeacherSpec::from_json(j));
}

TeacherGraph TeacherGraph::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open teacher spec " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

void TeacherGraph::validate() const {
  double sum = 0.0;
  for (double p : leaf_prior_) {
    if (p < 0.0) fail("leaf prior has negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    fail("leaf prior sums to " + std::to_string(sum) + ", expected 1");
}

const SummarizationFn& TeacherGraph::fn(const std::string& id) const {
  auto it = fns_.find(id);
  if (it == fns_.end()) fail("no summarization fn for region " + id);
  return it->second;
}

std::int64_t TeacherGraph::leaf_tuple_count() const {
  std::vector<int> dims;
  for (const auto& id : tree_.leaf_order()) dims.push_back(tree_.region(id).m);
  return checked_product(dims);
}

std::vector<int> TeacherGraph::leaf_tuple(std::int64_t index) const {
  const auto& leaves = tree_.leaf_order();
  std::vector<int> ev(leaves.size());
  for (std::size_t i = leaves.size(); i-- > 0;) {
    const int m = tree_.region(leaves[i]).m;
    ev[i] = static_cast<int>(index % m);
    index /= m;
  }
  return ev;
}

std::int64_t TeacherGraph::leaf_tuple_index(const std::vector<int>& events) const {
  const auto& leaves = tree_.leaf_order();
  std::int64_t idx = 0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    idx = idx * tree_.region(leaves[i]).m + events[i];
  }
  return idx;
}

int TeacherGraph::event_of(const std::string& id,
                           const std::vector<int>& leaf_events) const {
  std::map<std::string, int> ev;
  const auto& leaves = tree_.leaf_order();
  for (std::size_t i = 0; i < leaves.size(); ++i) ev[leaves[i]] = leaf_events[i];
  for (const auto& rid : tree_.topo_order()) {
    const Region& r = tree_.region(rid);
    if (r.leaf()) continue;
    std::int64_t t = 0;
    for (const auto& c : r.children) t = t * tree_.region(c).m + ev.at(c);
    ev[rid] = fn(rid).table[t];
  }
  return ev.at(id);
}

// ---------------------------------------------------------------------------
// Enumeration

JointTables enumerate_events(const TeacherGraph& g, std::int64_t cap) {
  const std::int64_t tuples = g.leaf_tuple_count();
  if (tuples > cap)
    fail("enumeration cap exceeded: " + std::to_string(tuples) + " leaf tuples > " +
         std::to_string(cap));

  const RegionTree& tree = g.tree();
  JointTables jt;
  for (const auto& r : tree.regions()) {
    jt.marginal[r.id] = Eigen::VectorXd::Zero(r.m);
  }
  for (const auto& [parent, child] : tree.edges()) {
    jt.joint[{parent, child}] =
        Eigen::MatrixXd::Zero(tree.region(parent).m, tree.region(child).m);
  }

  const auto& leaves = tree.leaf_order();
  std::vector<int> ev(tree.regions().size());
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < tree.topo_order().size(); ++i)
    pos[tree.topo_order()[i]] = i;

  for (std::int64_t t = 0; t < tuples; ++t) {
    const double p = g.leaf_prior()[t];
    if (p == 0.0) continue;
    const std::vector<int> leaf_ev = g.leaf_tuple(t);
    for (std::size_t i = 0; i < leaves.size(); ++i) ev[pos[leaves[i]]] = leaf_ev[i];
    for (const auto& rid : tree.topo_order()) {
      const Region& r = tree.region(rid);
      if (r.leaf()) continue;
      std::int64_t ti = 0;
      for (const auto& c : r.children) ti = ti * tree.region(c).m + ev[pos[c]];
      ev[pos[rid]] = g.fn(rid).table[ti];
    }
    for (const auto& rid : tree.topo_order()) {
      jt.marginal[rid](ev[pos[rid]]) += p;
    }
    for (const auto& [parent, child] : tree.edges()) {
      jt.joint[{parent, child}](ev[pos[parent]], ev[pos[child]]) += p;
    }
  }
  return jt;
}

EventTable conditional_table(const TeacherGraph& g, const JointTables& jt,
                             const std::string& alpha, const std::string& beta) {
  const RegionTree& tree = g.tree();
  const Region& ra = tree.region(alpha);
  const Region& rb = tree.region(beta);
  const auto& ch = ra.children;
  if (std::find(ch.begin(), ch.end(), beta) == ch.end())
    fail(beta + " is not a child of " + alpha);

  const Eigen::VectorXd& pa = jt.marginal.at(alpha);
  const Eigen::VectorXd& pb = jt.marginal.at(beta);
  for (int a = 0; a < ra.m; ++a) {
    if (pa(a) <= 0.0)
      fail("event " + alpha + "=" + std::to_string(a) +
           " has zero prior; conditionals undefined");
  }
  for (int b = 0; b < rb.m; ++b) {
    if (pb(b) <= 0.0)
      fail("event " + beta + "=" + std::to_string(b) +
           " has zero prior; conditionals undefined");
  }

  const Eigen::MatrixXd& joint = jt.joint.at({alpha, beta});
  EventTable t;
  t.alpha = alpha;
  t.beta = beta;
  t.prior_alpha = pa;
  t.prior_beta = pb;
  t.P = joint.array().colwise() / pa.array();
  t.Pb = joint.array().rowwise() / pb.transpose().array();
  return t;
}

const EventTable& EventTables::at(const std::string& parent,
                                  const std::string& child) const {
  auto it = edge.find({parent, child});
  if (it == edge.end()) fail("no event table for edge " + parent + "<-" + child);
  return it->second;
}

EventTables make_tables(const TeacherGraph& g, std::int64_t cap) {
  const JointTables jt = enumerate_events(g, cap);
  EventTables t;
  t.prior = jt.marginal;
  for (const auto& [parent, child] : g.tree().edges()) {
    t.edge.emplace(EdgeKey{parent, child}, conditional_table(g, jt, parent, child));
  }
  return t;
}

ConsistencyReport validate_consistency(const EventTables& tables) {
  ConsistencyReport rep;
  for (const auto& [key, t] : tables.edge) {
    const double row_err =
        (t.P.rowwise().sum().array() - 1.0).abs().maxCoeff();
    if (row_err > rep.max_row_sum_violation) rep.max_row_sum_violation = row_err;
    if (row_err > 1e-12)
      rep.flagged.push_back("edge " + key.first + "<-" + key.second +
                            ": row sums off by " + std::to_string(row_err));

    // Lambda_beta (Pb)^T = P^T Lambda_alpha, both m_beta x m_alpha.
    const Eigen::MatrixXd lhs = t.prior_beta.asDiagonal() * t.Pb.transpose();
    const Eigen::MatrixXd rhs = t.P.transpose() * t.prior_alpha.asDiagonal();
    const double lam_err = (lhs - rhs).array().abs().maxCoeff();
    if (lam_err > rep.max_lambda_violation) rep.max_lambda_violation = lam_err;
    if (lam_err > 1e-12)
      rep.flagged.push_back("edge " + key.first + "<-" + key.second +
                            ": Lambda identity off by " + std::to_string(lam_err));

    // Marginal of beta via this parent must agree with the stored prior.
    const Eigen::VectorXd derived = t.P.transpose() * t.prior_alpha;
    const double marg_err = (derived - t.prior_beta).array().abs().maxCoeff();
    if (marg_err > rep.max_marginal_violation) rep.max_marginal_violation = marg_err;

    // A child shared by several parents must get the same marginal from each.
    auto it = tables.prior.find(key.second);
    if (it != tables.prior.end()) {
      const double agree = (derived - it->second).array().abs().maxCoeff();
      if (agree > rep.max_marginal_violation) rep.max_marginal_violation = agree;
    }
  }
  for (const auto& [id, prior] : tables.prior) {
    const double err = std::abs(prior.sum() - 1.0);
    if (err > rep.max_row_sum_violation) rep.max_row_sum_violation = err;
    if (err > 1e-12)
      rep.flagged.push_back("prior of " + id + " sums off by " + std::to_string(err));
  }
  return rep;
}

void write_table_csv(const EventTable& t, std::ostream& os) {
  os << "event";
  for (int b = 0; b < t.P.cols(); ++b) os << ",P(" << t.beta << "=" << b << ")";
  os << ",prior\n";
  os.precision(17);
  for (int a = 0; a < t.P.rows(); ++a) {
    os << t.alpha << "=" << a;
    for (int b = 0; b < t.P.cols(); ++b) os << "," << t.P(a, b);
    os << "," << t.prior_alpha(a) << "\n";
  }
}

}  // namespace laddersim
