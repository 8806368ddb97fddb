#include "laddersim/disentangle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "laddersim/rng.hpp"

namespace laddersim {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("disentangle: " + msg);
}

int log2_exact(Eigen::Index m) {
  int n = 0;
  Eigen::Index v = 1;
  while (v < m) {
    v *= 2;
    ++n;
  }
  if (v != m) fail("row count " + std::to_string(m) + " is not a power of 2");
  return n;
}

// Bit of factor f (0-based, factor 0 most significant) in event z of n factors.
inline int bit_of(Eigen::Index z, int f, int n) {
  return static_cast<int>((z >> (n - 1 - f)) & 1);
}

}  // namespace

Eigen::VectorXd tensor_pattern(const std::vector<Eigen::Vector2d>& axes) {
  const int n = static_cast<int>(axes.size());
  Eigen::VectorXd out(Eigen::Index{1} << n);
  for (Eigen::Index z = 0; z < out.size(); ++z) {
    double v = 1.0;
    for (int f = 0; f < n; ++f) v *= axes[f](bit_of(z, f, n));
    out(z) = v;
  }
  return out;
}

void FactoredTable::validate() const {
  if (blocks.size() != partition.size())
    fail("factored table: block/partition count mismatch");
  std::vector<bool> covered(n_child_factors, false);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& S = partition[i];
    if (S.empty()) fail("factored table: empty partition set");
    for (int f : S) {
      if (f < 0 || f >= n_child_factors || covered[f])
        fail("factored table: partition is not a disjoint cover");
      covered[f] = true;
    }
    if (blocks[i].rows() != 2 ||
        blocks[i].cols() != (Eigen::Index{1} << S.size()))
      fail("factored table: block " + std::to_string(i) + " has wrong shape");
    for (int r = 0; r < 2; ++r) {
      if (std::abs(blocks[i].row(r).sum() - 1.0) > 1e-12)
        fail("factored table: block " + std::to_string(i) +
             " is not row-stochastic");
    }
  }
  for (int f = 0; f < n_child_factors; ++f) {
    if (!covered[f]) fail("factored table: child factor uncovered");
  }
}

Eigen::MatrixXd FactoredTable::compose() const {
  validate();
  const int np = static_cast<int>(blocks.size());
  const Eigen::Index mp = Eigen::Index{1} << np;
  const Eigen::Index mc = Eigen::Index{1} << n_child_factors;
  Eigen::MatrixXd P(mp, mc);
  for (Eigen::Index a = 0; a < mp; ++a) {
    for (Eigen::Index b = 0; b < mc; ++b) {
      double v = 1.0;
      for (int i = 0; i < np; ++i) {
        Eigen::Index sub = 0;
        for (int f : partition[i])
          sub = sub * 2 + bit_of(b, f, n_child_factors);
        v *= blocks[i](bit_of(a, i, np), sub);
      }
      P(a, b) = v;
    }
  }
  return P;
}

DisentangleFit fit_activation(const Eigen::MatrixXd& F) {
  const int n = static_cast<int>(F.cols());
  if (n < 1) fail("fit_activation: no columns");
  if (log2_exact(F.rows()) != n)
    fail("fit_activation: rows must be 2^cols");

  DisentangleFit fit;
  fit.factor.resize(n);
  fit.residual.resize(n);
  const double half = static_cast<double>(F.rows()) / 2.0;
  for (int j = 0; j < n; ++j) {
    Eigen::Vector2d f = Eigen::Vector2d::Zero();
    for (Eigen::Index z = 0; z < F.rows(); ++z) f(bit_of(z, j, n)) += F(z, j);
    f /= half;
    double r = 0.0;
    for (Eigen::Index z = 0; z < F.rows(); ++z)
      r = std::max(r, std::abs(F(z, j) - f(bit_of(z, j, n))));
    fit.factor[j] = f;
    fit.residual(j) = r;
  }
  return fit;
}

DisentangleFit fit_gradient(const Eigen::MatrixXd& Gt,
                            const std::vector<Eigen::Vector2d>& priors) {
  const int n = static_cast<int>(Gt.cols());
  if (n < 1) fail("fit_gradient: no columns");
  if (static_cast<int>(priors.size()) != n)
    fail("fit_gradient: need one prior per factor");
  if (Gt.rows() != (Eigen::Index{1} << n))
    fail("fit_gradient: rows must be 2^cols");
  for (int i = 0; i < n; ++i) {
    if (priors[i].cwiseAbs().maxCoeff() == 0.0)
      fail("fit_gradient: zero prior for factor " + std::to_string(i));
  }

  DisentangleFit fit;
  fit.factor.resize(n);
  fit.residual.resize(n);
  for (int j = 0; j < n; ++j) {
    // Pattern value at z is g(bit_j) * q(z) with q the product of the other
    // priors; least squares over the two disjoint supports of bit_j.
    Eigen::Vector2d num = Eigen::Vector2d::Zero();
    double den = 1.0;
    for (int i = 0; i < n; ++i) {
      if (i != j) den *= priors[i].squaredNorm();
    }
    if (den == 0.0) fail("fit_gradient: degenerate priors");
    for (Eigen::Index z = 0; z < Gt.rows(); ++z) {
      double q = 1.0;
      for (int i = 0; i < n; ++i) {
        if (i != j) q *= priors[i](bit_of(z, i, n));
      }
      num(bit_of(z, j, n)) += Gt(z, j) * q;
    }
    const Eigen::Vector2d g = num / den;
    double r = 0.0;
    for (Eigen::Index z = 0; z < Gt.rows(); ++z) {
      double q = 1.0;
      for (int i = 0; i < n; ++i) {
        if (i != j) q *= priors[i](bit_of(z, i, n));
      }
      r = std::max(r, std::abs(Gt(z, j) - g(bit_of(z, j, n)) * q));
    }
    fit.factor[j] = g;
    fit.residual(j) = r;
  }
  return fit;
}

SeparabilityReport is_separable(const Eigen::MatrixXd& W,
                                const std::vector<std::vector<int>>& partition) {
  if (static_cast<Eigen::Index>(partition.size()) != W.cols())
    fail("is_separable: one partition set per column required");
  std::vector<int> owner(W.rows(), -1);
  for (std::size_t j = 0; j < partition.size(); ++j) {
    for (int r : partition[j]) {
      if (r < 0 || r >= W.rows() || owner[r] != -1)
        fail("is_separable: partition is not a disjoint cover of the rows");
      owner[r] = static_cast<int>(j);
    }
  }
  for (Eigen::Index r = 0; r < W.rows(); ++r) {
    if (owner[r] < 0) fail("is_separable: partition does not cover the rows");
  }
  SeparabilityReport rep;
  for (Eigen::Index r = 0; r < W.rows(); ++r) {
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
      if (owner[r] != static_cast<int>(j))
        rep.off_block_mass += std::abs(W(r, j));
    }
  }
  rep.separable = rep.off_block_mass < 1e-12;
  return rep;
}

Eigen::MatrixXd DisInstance::F_beta() const {
  Eigen::MatrixXd F(8, 3);
  const Eigen::Vector2d ones = Eigen::Vector2d::Ones();
  for (int k = 0; k < 3; ++k) {
    std::vector<Eigen::Vector2d> axes{ones, ones, ones};
    axes[k] = f_beta[k];
    F.col(k) = tensor_pattern(axes);
  }
  return F;
}

Eigen::MatrixXd DisInstance::Gt_alpha() const {
  Eigen::MatrixXd G(4, 2);
  for (int j = 0; j < 2; ++j) {
    std::vector<Eigen::Vector2d> axes = prior_alpha;
    axes[j] = g_alpha[j];
    G.col(j) = tensor_pattern(axes);
  }
  return G;
}

RegionTree DisInstance::tree() const {
  return RegionTree({Region{"beta", {}, 8, 3, 0},
                     Region{"alpha", {"beta"}, 4, 2, 0}});
}

EventTables DisInstance::tables() const {
  EventTable t;
  t.alpha = "alpha";
  t.beta = "beta";
  t.P = P();
  t.prior_alpha = prior_alpha_joint;
  t.prior_beta = t.P.transpose() * prior_alpha_joint;
  t.Pb.resize(4, 8);
  for (int b = 0; b < 8; ++b) {
    if (t.prior_beta(b) <= 0.0)
      fail("instance has a zero-probability child event");
    for (int a = 0; a < 4; ++a)
      t.Pb(a, b) = prior_alpha_joint(a) * t.P(a, b) / t.prior_beta(b);
  }
  EventTables out;
  out.prior["alpha"] = t.prior_alpha;
  out.prior["beta"] = t.prior_beta;
  out.edge.emplace(EdgeKey{"alpha", "beta"}, std::move(t));
  return out;
}

WeightSet DisInstance::weights() const {
  WeightSet w;
  w.bias_augmented = false;
  w.W.emplace(EdgeKey{"alpha", "beta"}, W);
  return w;
}

namespace {

DisInstance draw_pair_instance(Rng& rng, bool centered) {
  DisInstance inst;
  inst.table.n_child_factors = 3;
  inst.table.partition = {{0, 1}, {2}};

  Eigen::MatrixXd P12(2, 4), P3(2, 2);
  for (int r = 0; r < 2; ++r) {
    const auto d4 = rng.dirichlet(4);
    for (int c = 0; c < 4; ++c) P12(r, c) = d4[c];
  }
  for (int r = 0; r < 2; ++r) {
    const auto d2 = rng.dirichlet(2);
    for (int c = 0; c < 2; ++c) P3(r, c) = d2[c];
  }
  inst.table.blocks = {P12, P3};

  inst.prior_alpha.resize(2);
  for (int j = 0; j < 2; ++j) {
    const auto d = rng.dirichlet(2);
    inst.prior_alpha[j] = Eigen::Vector2d(d[0], d[1]);
  }
  inst.prior_alpha_joint = tensor_pattern(inst.prior_alpha);

  inst.prior_b12 = P12.transpose() * inst.prior_alpha[0];
  const Eigen::Vector2d pb3 = P3.transpose() * inst.prior_alpha[1];
  inst.prior_beta = {
      Eigen::Vector2d(inst.prior_b12(0) + inst.prior_b12(1),
                      inst.prior_b12(2) + inst.prior_b12(3)),
      Eigen::Vector2d(inst.prior_b12(0) + inst.prior_b12(2),
                      inst.prior_b12(1) + inst.prior_b12(3)),
      pb3};

  inst.W = Eigen::MatrixXd::Zero(3, 2);
  inst.W(0, 0) = rng.uniform(-1.0, 1.0);
  inst.W(1, 0) = rng.uniform(-1.0, 1.0);
  inst.W(2, 1) = rng.uniform(-1.0, 1.0);

  inst.f_beta.resize(3);
  for (int k = 0; k < 3; ++k)
    inst.f_beta[k] =
        Eigen::Vector2d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));

  inst.g_alpha.resize(2);
  for (int j = 0; j < 2; ++j) {
    const double a = rng.uniform(-1.0, 1.0);
    const double b = rng.uniform(-1.0, 1.0);
    inst.g_alpha[j] = centered ? Eigen::Vector2d(a, -a) : Eigen::Vector2d(a, b);
  }
  return inst;
}

}  // namespace

DisInstance make_pair_instance(std::uint64_t seed, bool centered) {
  Rng rng(seed);
  // Reject draws whose parent pre-activation has a column that is constant
  // after the ReLU gate (e.g. entirely non-positive): batch norm is undefined
  // on a zero-variance column, so such instances cannot exercise all four
  // forward variants.
  for (int attempt = 0; attempt < 100; ++attempt) {
    DisInstance inst = draw_pair_instance(rng, centered);
    const Eigen::MatrixXd raw = inst.P() * inst.F_beta() * inst.W;
    bool ok = true;
    for (int j = 0; j < raw.cols() && ok; ++j) {
      const Eigen::VectorXd gated = raw.col(j).cwiseMax(0.0);
      ok = (raw.col(j).maxCoeff() - raw.col(j).minCoeff() > 1e-9) &&
           (gated.maxCoeff() - gated.minCoeff() > 1e-9);
    }
    if (ok) return inst;
  }
  fail("no usable instance draw for seed " + std::to_string(seed));
}

nlohmann::ordered_json ForwardTheoremReport::to_json() const {
  nlohmann::ordered_json j;
  j["residual"] = residual;
  j["max_residual"] = max_residual;
  j["pass"] = pass();
  return j;
}

ForwardTheoremReport check_forward_theorem(const DisInstance& inst) {
  inst.table.validate();
  if (!is_separable(inst.W, inst.table.partition).separable)
    fail("forward theorem precondition violated: W is not separable");
  const Eigen::MatrixXd Fb = inst.F_beta();
  if (!fit_activation(Fb).disentangled())
    fail("forward theorem precondition violated: child activation is not "
         "disentangled");

  const RegionTree tree = inst.tree();
  const EventTables tables = inst.tables();
  const WeightSet w = inst.weights();
  const std::map<std::string, Eigen::MatrixXd> leaf{{"beta", Fb}};
  const BNConfig bn_cfg = BNConfig::standard(tree, {"alpha"});

  ForwardTheoremReport rep;
  for (int relu = 0; relu <= 1; ++relu) {
    for (int bn = 0; bn <= 1; ++bn) {
      const LayerState s = forward_pass(
          tree, tables, w, relu ? GatingMode::Hard : GatingMode::Linear,
          bn ? &bn_cfg : nullptr, nullptr, &leaf);
      const double r = fit_activation(s.F.at("alpha")).max_residual();
      rep.residual["relu=" + std::to_string(relu) +
                   ",bn=" + std::to_string(bn)] = r;
      rep.max_residual = std::max(rep.max_residual, r);
    }
  }
  return rep;
}

double forward_nonseparable_control(const DisInstance& inst, double bump) {
  DisInstance broken = inst;
  broken.W(2, 0) += bump;  // row in the second block, column of the first
  const std::map<std::string, Eigen::MatrixXd> leaf{{"beta", broken.F_beta()}};
  const LayerState s =
      forward_pass(broken.tree(), broken.tables(), broken.weights(),
                   GatingMode::Linear, nullptr, nullptr, &leaf);
  return fit_activation(s.F.at("alpha")).max_residual();
}

nlohmann::ordered_json SeparableUpdateReport::to_json() const {
  nlohmann::ordered_json j;
  j["off_block_mass"] = off_block_mass;
  j["block_formula_error"] = block_formula_error;
  j["pass"] = pass();
  return j;
}

SeparableUpdateReport check_separable_update(const DisInstance& inst) {
  const Eigen::MatrixXd Gt = inst.Gt_alpha();
  for (int j = 0; j < 2; ++j) {
    if (std::abs(Gt.col(j).sum()) > 1e-12)
      fail("separable update precondition violated: gradient column " +
           std::to_string(j) + " is not centered");
  }

  const RegionTree tree = inst.tree();
  const EventTables tables = inst.tables();
  LayerState state;
  state.F["beta"] = inst.F_beta();
  state.F["alpha"] = Eigen::MatrixXd::Zero(4, 2);
  state.Gt["alpha"] = Gt;
  state.Gt["beta"] = Eigen::MatrixXd::Zero(8, 3);
  state.has_forward = true;
  state.has_backward = true;
  const auto dW = weight_update(tree, tables, inst.weights(), state);
  const Eigen::MatrixXd& d = dW.at(EdgeKey{"alpha", "beta"});

  SeparableUpdateReport rep;
  rep.off_block_mass = is_separable(d, inst.table.partition).off_block_mass;

  // Per-block closed forms from the worked proof.
  Eigen::MatrixXd F12(4, 2);
  {
    const Eigen::Vector2d ones = Eigen::Vector2d::Ones();
    F12.col(0) = tensor_pattern({inst.f_beta[0], ones});
    F12.col(1) = tensor_pattern({ones, inst.f_beta[1]});
  }
  const Eigen::Vector2d dw12 =
      (inst.table.blocks[0] * F12).transpose() * inst.g_alpha[0];
  const double dw3 =
      (inst.table.blocks[1] * inst.f_beta[2]).dot(inst.g_alpha[1]);
  rep.block_formula_error =
      std::max({std::abs(dw12(0) - d(0, 0)), std::abs(dw12(1) - d(1, 0)),
                std::abs(dw3 - d(2, 1))});
  return rep;
}

double backward_residual(const DisInstance& inst, Eigen::MatrixXd* graw_out) {
  const Eigen::MatrixXd graw =
      inst.P().transpose() * inst.Gt_alpha() * inst.W.transpose();
  if (graw_out) *graw_out = graw;
  return fit_gradient(graw, inst.prior_beta).max_residual();
}

nlohmann::ordered_json BackwardDemoStats::to_json() const {
  nlohmann::ordered_json j;
  j["instances"] = instances;
  j["above_threshold"] = above_threshold;
  j["min_residual"] = min_residual;
  j["max_residual"] = max_residual;
  j["max_identity_violation"] = max_identity_violation;
  return j;
}

BackwardDemoStats backward_residual_demo(int instances,
                                         std::uint64_t base_seed) {
  if (instances < 1) fail("backward_residual_demo needs instances >= 1");
  BackwardDemoStats st;
  st.instances = instances;
  st.min_residual = std::numeric_limits<double>::infinity();
  for (int s = 0; s < instances; ++s) {
    const DisInstance inst = make_pair_instance(base_seed + s);
    const double r = backward_residual(inst);
    if (r > 1e-6) ++st.above_threshold;
    st.min_residual = std::min(st.min_residual, r);
    st.max_residual = std::max(st.max_residual, r);

    const Eigen::Vector2d pb3 =
        inst.table.blocks[1].transpose() * inst.prior_alpha[1];
    const Eigen::VectorXd pb12 =
        inst.table.blocks[0].transpose() * inst.prior_alpha[0];
    st.max_identity_violation = std::max(
        {st.max_identity_violation,
         (pb3 - inst.prior_beta[2]).cwiseAbs().maxCoeff(),
         (pb12 - inst.prior_b12).cwiseAbs().maxCoeff()});
  }
  return st;
}

}  // namespace laddersim
