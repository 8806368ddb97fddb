#include "laddersim/dynamics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "laddersim/rng.hpp"

namespace laddersim {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("dynamics: " + msg);
}

// Child activation as seen by the linear map, with the implicit ones column
// appended in bias mode.
Eigen::MatrixXd augmented(const Eigen::MatrixXd& F, bool bias) {
  if (!bias) return F;
  Eigen::MatrixXd A(F.rows(), F.cols() + 1);
  A.leftCols(F.cols()) = F;
  A.col(F.cols()).setOnes();
  return A;
}

Eigen::MatrixXd hard_gate(const Eigen::MatrixXd& raw) {
  // Gate closed at exactly zero; the oracle shares this convention.
  return (raw.array() > 0.0).cast<double>();
}

}  // namespace

WeightSet init_weights(const RegionTree& tree, std::uint64_t seed,
                       bool bias_augmented) {
  Rng rng(seed);
  WeightSet w;
  w.bias_augmented = bias_augmented;
  for (const auto& [parent, child] : tree.edges()) {
    const int nb = tree.region(child).n;
    const int na = tree.region(parent).n;
    const double s = 1.0 / std::sqrt(static_cast<double>(nb));
    Eigen::MatrixXd m(nb + (bias_augmented ? 1 : 0), na);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        m(i, j) = rng.uniform(-s, s);
    w.W.emplace(EdgeKey{parent, child}, std::move(m));
  }
  return w;
}

BNConfig BNConfig::standard(const RegionTree& tree,
                            const std::set<std::string>& regions, double c1,
                            double c0) {
  BNConfig cfg;
  for (const auto& id : regions) {
    cfg.params[id].assign(tree.region(id).n, Eigen::Vector2d(c1, c0));
  }
  return cfg;
}

LayerState forward_pass(const RegionTree& tree, const EventTables& tables,
                        const WeightSet& weights, GatingMode gating,
                        const BNConfig* bn,
                        const std::map<std::string, Eigen::MatrixXd>* external_gates,
                        const std::map<std::string, Eigen::MatrixXd>* leaf_activations) {
  LayerState s;
  for (const auto& id : tree.topo_order()) {
    const Region& r = tree.region(id);
    if (r.leaf()) {
      if (leaf_activations && leaf_activations->count(id)) {
        const Eigen::MatrixXd& F = leaf_activations->at(id);
        if (F.rows() != r.m || F.cols() != r.n)
          fail("leaf " + id + ": supplied activation has wrong shape");
        s.F[id] = F;
      } else {
        if (r.m != r.n)
          fail("leaf " + id + ": boundary F = I requires m == n, got m=" +
               std::to_string(r.m) + " n=" + std::to_string(r.n));
        s.F[id] = Eigen::MatrixXd::Identity(r.m, r.n);
      }
      s.Fraw[id] = s.F[id];
      s.D[id] = Eigen::MatrixXd::Ones(r.m, r.n);
      continue;
    }

    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(r.m, r.n);
    for (const auto& child : r.children) {
      const EventTable& t = tables.at(id, child);
      const Eigen::MatrixXd& W = weights.W.at({id, child});
      const Eigen::MatrixXd FB = augmented(s.F.at(child), weights.bias_augmented);
      if (t.P.rows() != r.m || t.P.cols() != FB.rows())
        fail("edge " + id + "<-" + child + ": table shape mismatch");
      if (W.rows() != FB.cols() || W.cols() != r.n)
        fail("edge " + id + "<-" + child + ": weight shape mismatch");
      raw += t.P * FB * W;
    }
    s.Fraw[id] = raw;

    Eigen::MatrixXd D;
    switch (gating) {
      case GatingMode::Hard:
        D = hard_gate(raw);
        break;
      case GatingMode::Linear:
        D = Eigen::MatrixXd::Ones(r.m, r.n);
        break;
      case GatingMode::External:
        if (!external_gates || !external_gates->count(id))
          fail("external gating requested but no gates for region " + id);
        D = external_gates->at(id);
        if (D.rows() != r.m || D.cols() != r.n)
          fail("external gate for " + id + " has wrong shape");
        break;
    }
    s.D[id] = D;
    Eigen::MatrixXd F = D.cwiseProduct(raw);

    if (bn && bn->enabled(id)) {
      const auto& params = bn->params.at(id);
      if (static_cast<int>(params.size()) != r.n)
        fail("bn params for " + id + " have wrong node count");
      auto& records = s.bn_records[id];
      records.clear();
      for (int j = 0; j < r.n; ++j) {
        BNParams p;
        p.c1 = params[j][0];
        p.c0 = params[j][1];
        p.weight_vector = tables.prior.at(id);
        BNForwardRecord rec = bn_forward(F.col(j), p);
        F.col(j) = rec.out;
        records.push_back(std::move(rec));
      }
    }
    s.F[id] = F;
  }
  s.has_forward = true;
  return s;
}

void backward_pass(const RegionTree& tree, const EventTables& tables,
                   const WeightSet& weights, LayerState& state,
                   const BNConfig* bn, const TopBoundary& top) {
  if (!state.has_forward) fail("backward_pass requires a forward state");

  const auto& order = tree.topo_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::string& id = *it;
    const Region& r = tree.region(id);
    const Eigen::VectorXd& prior = tables.prior.at(id);

    Eigen::MatrixXd incoming;  // gradient w.r.t. this region's final output
    const bool is_root = (id == tree.root_id());
    if (is_root) {
      if (top.explicit_gradient) {
        incoming = *top.explicit_gradient;
        if (incoming.rows() != r.m || incoming.cols() != r.n)
          fail("explicit top gradient has wrong shape");
      } else if (top.a1a2) {
        const auto [a1, a2] = *top.a1a2;
        Eigen::MatrixXd G(r.m, r.n);
        for (int z = 0; z < r.m; ++z)
          for (int j = 0; j < r.n; ++j) G(z, j) = (j == z) ? a1 : -a2;
        incoming = prior.asDiagonal() * G;
      } else {
        if (r.m != r.n) fail("default top gradient requires m == n at root");
        incoming = prior.asDiagonal() *
                   (Eigen::MatrixXd::Identity(r.m, r.n) - state.F.at(id));
      }
    } else {
      incoming = Eigen::MatrixXd::Zero(r.m, r.n);
      for (const auto& parent : tree.parents(id)) {
        const EventTable& t = tables.at(parent, id);
        const Eigen::MatrixXd& W = weights.W.at({parent, id});
        // Bias rows receive gradient through dW only, not through F.
        const Eigen::MatrixXd Wtop = W.topRows(r.n);
        incoming += t.P.transpose() * state.Gt.at(parent) * Wtop.transpose();
      }
    }

    Eigen::MatrixXd mid = incoming;
    if (bn && bn->enabled(id)) {
      const auto& records = state.bn_records.at(id);
      const auto& params = bn->params.at(id);
      auto& grads = state.bn_grads[id];
      grads.assign(r.n, Eigen::Vector2d::Zero());
      for (int j = 0; j < r.n; ++j) {
        // The projection acts on the normalized gradient G = Lambda^-1 Gt.
        const Eigen::VectorXd g = incoming.col(j).array() / prior.array();
        BNParams p;
        p.c1 = params[j][0];
        p.c0 = params[j][1];
        p.weight_vector = prior;
        BNBackwardResult res = bn_backward(g, records[j], p);
        mid.col(j) = prior.array() * res.g_f.array();
        grads[j] = res.g_c;
      }
    }

    if (is_root && !(bn && bn->enabled(id))) {
      // Boundary convention: the top gradient is not gated.
      state.Gt[id] = mid;
    } else if (r.leaf()) {
      state.Gt[id] = mid;  // inputs carry no ReLU gate
    } else {
      state.Gt[id] = state.D.at(id).cwiseProduct(mid);
    }
  }
  state.has_backward = true;
}

std::map<EdgeKey, Eigen::MatrixXd> weight_update(
    const RegionTree& tree, const EventTables& tables, const WeightSet& weights,
    const LayerState& state, std::optional<double> max_update_norm) {
  if (!state.has_forward || !state.has_backward)
    fail("weight_update requires forward and backward state");
  std::map<EdgeKey, Eigen::MatrixXd> dW;
  for (const auto& [parent, child] : tree.edges()) {
    const EventTable& t = tables.at(parent, child);
    const Eigen::MatrixXd FB = augmented(state.F.at(child), weights.bias_augmented);
    Eigen::MatrixXd d = (t.P * FB).transpose() * state.Gt.at(parent);
    if (max_update_norm) {
      const double n = d.norm();
      if (n > *max_update_norm && n > 0.0) d *= *max_update_norm / n;
    }
    dW.emplace(EdgeKey{parent, child}, std::move(d));
  }
  return dW;
}

double loss(const RegionTree& tree, const LayerState& state) {
  const Region& r = tree.root();
  if (r.m != r.n) fail("loss requires m == n at the root");
  return (state.F.at(r.id) - Eigen::MatrixXd::Identity(r.m, r.n)).squaredNorm();
}

TrainResult train(const RegionTree& tree, const EventTables& tables,
                  const WeightSet& init, const TrainConfig& config) {
  if (config.lr <= 0.0) fail("lr must be positive");
  if (config.steps < 0) fail("steps must be >= 0");

  TrainResult out;
  out.weights = init;
  out.bn = BNConfig::standard(tree, config.bn_regions);

  const BNConfig* bn = config.bn_regions.empty() ? nullptr : &out.bn;

  auto energies = [&](const std::string& region) {
    const int n = tree.region(region).n;
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    for (const auto& child : tree.region(region).children) {
      const Eigen::MatrixXd& W = out.weights.W.at({region, child});
      e += 0.5 * W.colwise().squaredNorm().transpose();
    }
    return e;
  };

  for (int step = 0; step < config.steps; ++step) {
    LayerState s = forward_pass(tree, tables, out.weights, config.gating, bn);
    backward_pass(tree, tables, out.weights, s, bn, config.top);
    auto dW = weight_update(tree, tables, out.weights, s, config.max_update_norm);

    TrajectoryPoint pt;
    pt.step = step;
    pt.loss = loss(tree, s);
    if (!std::isfinite(pt.loss))
      fail("non-finite loss at step " + std::to_string(step));
    for (const auto& [key, d] : dW) pt.update_norm[key] = d.norm();
    out.trajectory.push_back(pt);

    std::optional<Eigen::VectorXd> e_before;
    if (config.energy_region) e_before = energies(*config.energy_region);

    for (auto& [key, W] : out.weights.W) {
      W += config.lr * dW.at(key);
      if (!W.allFinite())
        fail("non-finite weights after step " + std::to_string(step));
    }
    if (bn) {
      for (auto& [region, params] : out.bn.params) {
        auto it = s.bn_grads.find(region);
        if (it == s.bn_grads.end()) continue;
        for (std::size_t j = 0; j < params.size(); ++j)
          params[j] += config.lr * it->second[j];
      }
    }

    if (config.energy_region) {
      const std::string& region = *config.energy_region;
      const Eigen::VectorXd e_after = energies(region);
      const int n = tree.region(region).n;
      for (int j = 0; j < n; ++j) {
        EnergyRow row;
        row.step = step;
        row.node = j;
        row.energy = (*e_before)(j);
        double wdw = 0.0, dwsq = 0.0;
        for (const auto& child : tree.region(region).children) {
          const Eigen::MatrixXd& W = out.weights.W.at({region, child});
          const Eigen::MatrixXd& d = dW.at({region, child});
          // W already stepped; recover the pre-update column.
          const Eigen::VectorXd wcol = W.col(j) - config.lr * d.col(j);
          wdw += wcol.dot(d.col(j));
          dwsq += d.col(j).squaredNorm();
        }
        row.w_dot_dw = wdw;
        // Residual of E(t+1)-E(t) = (lr^2/2)||dW||^2; the exact expansion
        // also contributes lr<w,dw>, which BN drives to zero.
        row.residual = std::abs(e_after(j) - (*e_before)(j) -
                                0.5 * config.lr * config.lr * dwsq);
        out.energy.push_back(row);
      }
    }
  }

  // Final point: loss of the final weights, no pending update.
  LayerState s = forward_pass(tree, tables, out.weights, config.gating, bn);
  TrajectoryPoint pt;
  pt.step = config.steps;
  pt.loss = loss(tree, s);
  out.trajectory.push_back(pt);
  return out;
}

void write_trajectory_csv(const TrainResult& r, std::ostream& os) {
  os << "step,loss";
  std::vector<EdgeKey> keys;
  if (!r.trajectory.empty()) {
    for (const auto& [key, v] : r.trajectory.front().update_norm) {
      keys.push_back(key);
      os << ",dw_norm_" << key.second << "_to_" << key.first;
    }
  }
  os << "\n";
  os.precision(17);
  for (const auto& pt : r.trajectory) {
    os << pt.step << "," << pt.loss;
    for (const auto& key : keys) {
      auto it = pt.update_norm.find(key);
      os << "," << (it == pt.update_norm.end() ? 0.0 : it->second);
    }
    os << "\n";
  }
}

void write_energy_csv(const std::vector<EnergyRow>& rows, std::ostream& os) {
  os << "step,node,energy,w_dot_dw,residual\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.step << "," << r.node << "," << r.energy << "," << r.w_dot_dw << ","
       << r.residual << "\n";
  }
}

void save_weights(const WeightSet& w, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["bias_augmented"] = w.bias_augmented;
  manifest["edges"] = nlohmann::ordered_json::array();
  int idx = 0;
  for (const auto& [key, W] : w.W) {
    const std::string file = "w" + std::to_string(idx++) + ".csv";
    manifest["edges"].push_back({{"parent", key.first},
                                 {"child", key.second},
                                 {"rows", W.rows()},
                                 {"cols", W.cols()},
                                 {"file", file}});
    std::ofstream os(fs::path(dir) / file);
    os.precision(17);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j)
        os << W(i, j) << (j + 1 < W.cols() ? "," : "");
      os << "\n";
    }
  }
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << manifest.dump(2) << "\n";
}

WeightSet load_weights(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) fail("cannot open weight manifest in " + dir);
  nlohmann::json manifest;
  in >> manifest;
  WeightSet w;
  w.bias_augmented = manifest.at("bias_augmented").get<bool>();
  for (const auto& e : manifest.at("edges")) {
    const Eigen::Index rows = e.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = e.at("cols").get<Eigen::Index>();
    Eigen::MatrixXd W(rows, cols);
    std::ifstream f(fs::path(dir) / e.at("file").get<std::string>());
    if (!f) fail("missing weight file in checkpoint");
    for (Eigen::Index i = 0; i < rows; ++i) {
      std::string line;
      std::getline(f, line);
      std::stringstream ss(line);
      std::string cell;
      for (Eigen::Index j = 0; j < cols; ++j) {
        std::getline(ss, cell, ',');
        W(i, j) = std::stod(cell);
      }
    }
    w.W.emplace(EdgeKey{e.at("parent").get<std::string>(),
                        e.at("child").get<std::string>()},
                std::move(W));
  }
  return w;
}

}  // namespace laddersim
