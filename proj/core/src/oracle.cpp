#include "laddersim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "laddersim/rng.hpp"

namespace laddersim {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("oracle: " + msg);
}

// Leaves under `region`, as indices into tree.leaf_order().
std::vector<int> leaves_under(const RegionTree& tree, const std::string& region) {
  std::map<std::string, int> leaf_index;
  for (std::size_t i = 0; i < tree.leaf_order().size(); ++i)
    leaf_index[tree.leaf_order()[i]] = static_cast<int>(i);

  std::vector<int> out;
  std::vector<std::string> stack{region};
  while (!stack.empty()) {
    const std::string id = stack.back();
    stack.pop_back();
    const Region& r = tree.region(id);
    if (r.leaf()) {
      out.push_back(leaf_index.at(id));
    } else {
      for (auto it = r.children.rbegin(); it != r.children.rend(); ++it)
        stack.push_back(*it);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

InputModel InputModel::delta_onehot(const RegionTree& tree) {
  InputModel im;
  im.mode = Mode::Delta;
  for (const auto& id : tree.leaf_order()) {
    const Region& r = tree.region(id);
    if (r.m != r.n)
      fail("delta_onehot requires m == n at leaf " + id);
    auto& per_event = im.choices[id];
    per_event.resize(r.m);
    for (int e = 0; e < r.m; ++e) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(r.n);
      v(e) = 1.0;
      per_event[e].emplace_back(std::move(v), 1.0);
    }
  }
  return im;
}

InputModel InputModel::lossy_random(const RegionTree& tree, int per_event,
                                    std::uint64_t seed) {
  if (per_event < 1) fail("lossy_random needs per_event >= 1");
  InputModel im;
  im.mode = Mode::Lossy;
  Rng rng(seed);
  for (const auto& id : tree.leaf_order()) {
    const Region& r = tree.region(id);
    auto& per = im.choices[id];
    per.resize(r.m);
    for (int e = 0; e < r.m; ++e) {
      const std::vector<double> w = rng.dirichlet(per_event);
      for (int k = 0; k < per_event; ++k) {
        Eigen::VectorXd v(r.n);
        for (int d = 0; d < r.n; ++d) v(d) = rng.uniform(-1.0, 1.0);
        per[e].emplace_back(std::move(v), w[k]);
      }
    }
  }
  return im;
}

void InputModel::validate(const RegionTree& tree) const {
  for (const auto& id : tree.leaf_order()) {
    const auto it = choices.find(id);
    if (it == choices.end()) fail("input model misses leaf " + id);
    const Region& r = tree.region(id);
    if (static_cast<int>(it->second.size()) != r.m)
      fail("input model for " + id + " has wrong event count");
    for (int e = 0; e < r.m; ++e) {
      const auto& vs = it->second[e];
      if (vs.empty()) fail("input model for " + id + " has an empty event");
      if (mode == Mode::Delta && vs.size() != 1)
        fail("delta input model must have one vector per event (" + id + ")");
      double total = 0.0;
      for (const auto& [v, w] : vs) {
        if (v.size() != r.n)
          fail("input vector dimension mismatch at leaf " + id);
        if (w <= 0.0) fail("input weights must be positive (" + id + ")");
        total += w;
      }
      if (std::abs(total - 1.0) > 1e-12)
        fail("input weights for " + id + " do not sum to 1");
    }
  }
}

std::vector<EnumeratedInput> enumerate_inputs(const TeacherGraph& g,
                                              const InputModel& im,
                                              std::int64_t cap) {
  im.validate(g.tree());
  const auto& leaves = g.tree().leaf_order();
  const std::int64_t tuples = g.leaf_tuple_count();
  std::vector<EnumeratedInput> out;
  std::int64_t count = 0;
  for (std::int64_t t = 0; t < tuples; ++t) {
    const double p = g.leaf_prior()[t];
    if (p <= 0.0) continue;
    const std::vector<int> events = g.leaf_tuple(t);

    std::int64_t combos = 1;
    std::vector<int> radix(leaves.size());
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      radix[l] = static_cast<int>(im.choices.at(leaves[l])[events[l]].size());
      combos *= radix[l];
    }
    count += combos;
    if (count > cap)
      fail("input enumeration exceeds cap of " + std::to_string(cap) +
           " (set LADDERSIM_CAP to raise it)");

    for (std::int64_t c = 0; c < combos; ++c) {
      EnumeratedInput in;
      in.leaf_events = events;
      in.leaf_choice.resize(leaves.size());
      std::int64_t rest = c;
      for (std::size_t l = leaves.size(); l-- > 0;) {
        in.leaf_choice[l] = static_cast<int>(rest % radix[l]);
        rest /= radix[l];
      }
      in.weight = p;
      for (std::size_t l = 0; l < leaves.size(); ++l)
        in.weight *= im.choices.at(leaves[l])[events[l]][in.leaf_choice[l]].second;
      out.push_back(std::move(in));
    }
  }
  return out;
}

void write_inputs_csv(const TeacherGraph& g,
                      const std::vector<EnumeratedInput>& inputs,
                      std::ostream& os) {
  const auto& leaves = g.tree().leaf_order();
  os << "index,weight,label";
  for (const auto& l : leaves) os << "," << l << "_event," << l << "_choice";
  os << "\n";
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    os << i << "," << in.weight << ","
       << g.event_of(g.tree().root_id(), in.leaf_events);
    for (std::size_t l = 0; l < leaves.size(); ++l)
      os << "," << in.leaf_events[l] << "," << in.leaf_choice[l];
    os << "\n";
  }
}

OracleEval net_forward_backward(const TeacherGraph& g, const InputModel& im,
                                const std::vector<EnumeratedInput>& inputs,
                                const WeightSet& weights) {
  const RegionTree& tree = g.tree();
  im.validate(tree);
  const int N = static_cast<int>(inputs.size());
  if (N == 0) fail("no inputs to evaluate");

  OracleEval ev;
  ev.weight.resize(N);
  ev.label.resize(N);
  std::map<std::string, int> leaf_index;
  for (std::size_t i = 0; i < tree.leaf_order().size(); ++i)
    leaf_index[tree.leaf_order()[i]] = static_cast<int>(i);

  for (int i = 0; i < N; ++i) {
    ev.weight[i] = inputs[i].weight;
    ev.label[i] = g.event_of(tree.root_id(), inputs[i].leaf_events);
  }
  for (const auto& r : tree.regions()) {
    auto& e = ev.event[r.id];
    e.resize(N);
    for (int i = 0; i < N; ++i)
      e[i] = g.event_of(r.id, inputs[i].leaf_events);
  }

  // Forward, leaves first.
  for (const auto& id : tree.topo_order()) {
    const Region& r = tree.region(id);
    if (r.leaf()) {
      Eigen::MatrixXd F(N, r.n);
      const int li = leaf_index.at(id);
      for (int i = 0; i < N; ++i) {
        F.row(i) = im.choices.at(id)[inputs[i].leaf_events[li]]
                       [inputs[i].leaf_choice[li]]
                           .first.transpose();
      }
      ev.fraw[id] = F;
      ev.gate[id] = Eigen::MatrixXd::Ones(N, r.n);
      ev.f[id] = std::move(F);
      continue;
    }
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(N, r.n);
    for (const auto& child : r.children) {
      const Eigen::MatrixXd& W = weights.W.at(EdgeKey{id, child});
      const Eigen::MatrixXd& Fc = ev.f.at(child);
      if (weights.bias_augmented) {
        raw += Fc * W.topRows(Fc.cols());
        raw += Eigen::VectorXd::Ones(N) * W.row(Fc.cols());
      } else {
        raw += Fc * W;
      }
    }
    ev.gate[id] = (raw.array() > 0.0).cast<double>();
    ev.f[id] = ev.gate[id].cwiseProduct(raw);
    ev.fraw[id] = std::move(raw);
  }

  // Backward, root first. Top gradient onehot(label) - f, ungated.
  const Region& root = tree.root();
  if (root.m != root.n)
    fail("the loss boundary requires m == n at the root");
  {
    Eigen::MatrixXd gr = -ev.f.at(root.id);
    for (int i = 0; i < N; ++i) gr(i, ev.label[i]) += 1.0;
    ev.graw[root.id] = gr;
    ev.g[root.id] = std::move(gr);
  }
  const auto order = tree.topo_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::string& id = *it;
    if (id == tree.root_id()) continue;
    const Region& r = tree.region(id);
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(N, r.n);
    for (const auto& parent : tree.parents(id)) {
      const Eigen::MatrixXd& W = weights.W.at(EdgeKey{parent, id});
      raw += ev.g.at(parent) * W.topRows(r.n).transpose();
    }
    if (r.leaf()) {
      ev.g[id] = raw;
    } else {
      ev.g[id] = ev.gate.at(id).cwiseProduct(raw);
    }
    ev.graw[id] = std::move(raw);
  }
  return ev;
}

double oracle_loss(const TeacherGraph& g, const InputModel& im,
                   const std::vector<EnumeratedInput>& inputs,
                   const WeightSet& weights) {
  const OracleEval ev = net_forward_backward(g, im, inputs, weights);
  const Eigen::MatrixXd& F = ev.f.at(g.tree().root_id());
  double total = 0.0;
  for (int i = 0; i < F.rows(); ++i) {
    Eigen::VectorXd diff = -F.row(i).transpose();
    diff(ev.label[i]) += 1.0;
    total += 0.5 * ev.weight[i] * diff.squaredNorm();
  }
  return total;
}

Eigen::MatrixXd conditional_mean(const Eigen::MatrixXd& values,
                                 const std::vector<int>& condition, int k,
                                 const std::vector<double>& weight) {
  const int N = static_cast<int>(values.rows());
  if (static_cast<int>(condition.size()) != N ||
      static_cast<int>(weight.size()) != N)
    fail("conditional_mean: size mismatch");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, values.cols());
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < N; ++i) {
    if (condition[i] < 0 || condition[i] >= k)
      fail("conditional_mean: condition out of range");
    sum.row(condition[i]) += weight[i] * values.row(i);
    mass(condition[i]) += weight[i];
  }
  for (int z = 0; z < k; ++z) {
    if (mass(z) > 0.0) sum.row(z) /= mass(z);
  }
  return sum;
}

Eigen::MatrixXd marginal_f(const OracleEval& eval, const RegionTree& tree,
                           const std::string& region) {
  return conditional_mean(eval.f.at(region), eval.event.at(region),
                          tree.region(region).m, eval.weight);
}

Eigen::MatrixXd marginal_g(const OracleEval& eval, const RegionTree& tree,
                           const std::string& region) {
  return conditional_mean(eval.g.at(region), eval.event.at(region),
                          tree.region(region).m, eval.weight);
}

std::vector<int> content_ids(const TeacherGraph& g,
                             const std::vector<EnumeratedInput>& inputs,
                             const std::string& region, int* count) {
  const std::vector<int> leaves = leaves_under(g.tree(), region);
  std::map<std::vector<int>, int> ids;
  std::vector<int> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    std::vector<int> key;
    key.reserve(2 * leaves.size());
    for (int l : leaves) {
      key.push_back(in.leaf_events[l]);
      key.push_back(in.leaf_choice[l]);
    }
    const auto [it, inserted] = ids.emplace(key, static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  if (count) *count = static_cast<int>(ids.size());
  return out;
}

double check_recursion(const TeacherGraph& g, const OracleEval& eval,
                       const std::vector<EnumeratedInput>& inputs,
                       const std::string& parent, const std::string& child) {
  int kp = 0, kc = 0;
  const std::vector<int> cp = content_ids(g, inputs, parent, &kp);
  const std::vector<int> cc = content_ids(g, inputs, child, &kc);
  const Eigen::MatrixXd& values = eval.g.at(parent);
  const int N = static_cast<int>(values.rows());

  // gbar(x_parent), broadcast back to the inputs, then condition on x_child.
  const Eigen::MatrixXd bar_p = conditional_mean(values, cp, kp, eval.weight);
  Eigen::MatrixXd lifted(N, values.cols());
  for (int i = 0; i < N; ++i) lifted.row(i) = bar_p.row(cp[i]);

  const Eigen::MatrixXd lhs = conditional_mean(values, cc, kc, eval.weight);
  const Eigen::MatrixXd rhs = conditional_mean(lifted, cc, kc, eval.weight);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

double check_recursion_all(const TeacherGraph& g, const OracleEval& eval,
                           const std::vector<EnumeratedInput>& inputs) {
  double worst = 0.0;
  for (const auto& [parent, child] : g.tree().edges())
    worst = std::max(worst, check_recursion(g, eval, inputs, parent, child));
  return worst;
}

bool injective_ladder(const TeacherGraph& g) {
  for (const auto& r : g.tree().regions()) {
    if (r.leaf()) continue;
    const auto& table = g.fn(r.id).table;
    if (static_cast<int>(table.size()) != r.m) return false;
    std::vector<bool> hit(r.m, false);
    for (int e : table) {
      if (hit[e]) return false;
      hit[e] = true;
    }
  }
  return true;
}

nlohmann::ordered_json ExactnessReport::to_json() const {
  nlohmann::ordered_json j;
  j["max_div_F"] = max_div_F;
  j["max_div_Gt"] = max_div_Gt;
  j["max_div_dW"] = max_div_dW;
  j["max_divergence"] = max_divergence();
  j["decorrelation"] = decorrelation;
  j["per_region_F"] = per_region_F;
  j["per_region_Gt"] = per_region_Gt;
  return j;
}

ExactnessReport compare_exactness(const TeacherGraph& g,
                                  const EventTables& tables,
                                  const WeightSet& weights,
                                  const InputModel& im,
                                  std::int64_t cap) {
  if (im.mode == InputModel::Mode::Delta && !injective_ladder(g))
    fail("exactness comparison in delta mode requires every summarization "
         "function to be a bijection");

  const RegionTree& tree = g.tree();
  const std::vector<EnumeratedInput> inputs = enumerate_inputs(g, im, cap);
  const OracleEval ev = net_forward_backward(g, im, inputs, weights);

  LayerState state = forward_pass(tree, tables, weights, GatingMode::Hard);
  backward_pass(tree, tables, weights, state);
  const auto dW = weight_update(tree, tables, weights, state);

  ExactnessReport rep;
  for (const auto& r : tree.regions()) {
    const Eigen::MatrixXd Fo = marginal_f(ev, tree, r.id);
    const double df = (state.F.at(r.id) - Fo).cwiseAbs().maxCoeff();
    rep.per_region_F[r.id] = df;
    rep.max_div_F = std::max(rep.max_div_F, df);

    const Eigen::MatrixXd Gto =
        tables.prior.at(r.id).asDiagonal() * marginal_g(ev, tree, r.id);
    const double dg = (state.Gt.at(r.id) - Gto).cwiseAbs().maxCoeff();
    rep.per_region_Gt[r.id] = dg;
    rep.max_div_Gt = std::max(rep.max_div_Gt, dg);
  }

  const int N = static_cast<int>(inputs.size());
  for (const auto& [edge, dyn] : dW) {
    const auto& [parent, child] = edge;
    const Eigen::MatrixXd& Fc = ev.f.at(child);
    const Eigen::MatrixXd& Gp = ev.g.at(parent);
    Eigen::MatrixXd oracle = Eigen::MatrixXd::Zero(dyn.rows(), dyn.cols());
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd faug(dyn.rows());
      faug.head(Fc.cols()) = Fc.row(i).transpose();
      if (weights.bias_augmented) faug(Fc.cols()) = 1.0;
      oracle += ev.weight[i] * faug * Gp.row(i);
    }
    rep.max_div_dW =
        std::max(rep.max_div_dW, (dyn - oracle).cwiseAbs().maxCoeff());
  }

  // |E[f' g_raw | z] - E[f'|z] E[g_raw|z]|, the quantity whose vanishing
  // makes the event-space dynamics exact.
  for (const auto& r : tree.regions()) {
    if (r.leaf()) continue;
    const auto& ez = ev.event.at(r.id);
    const Eigen::MatrixXd gate_mean =
        conditional_mean(ev.gate.at(r.id), ez, r.m, ev.weight);
    const Eigen::MatrixXd graw_mean =
        conditional_mean(ev.graw.at(r.id), ez, r.m, ev.weight);
    const Eigen::MatrixXd joint_mean = conditional_mean(
        ev.gate.at(r.id).cwiseProduct(ev.graw.at(r.id)), ez, r.m, ev.weight);
    rep.decorrelation =
        std::max(rep.decorrelation,
                 (joint_mean - gate_mean.cwiseProduct(graw_mean))
                     .cwiseAbs()
                     .maxCoeff());
  }
  return rep;
}

}  // namespace laddersim
