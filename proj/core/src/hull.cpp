#include "laddersim/hull.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "laddersim/simplex.hpp"

namespace laddersim {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("hull: " + msg);
}

constexpr double kFeasTol = 1e-11;  // phase-1 cutoff 100x this, i.e. 1e-9

// Is row i a convex combination of the other rows?
bool in_hull_of_others(const Eigen::MatrixXd& P, int row) {
  const int r = static_cast<int>(P.rows());
  const int d = static_cast<int>(P.cols());
  if (r == 1) return false;
  Eigen::MatrixXd A(d + 1, r - 1);
  int col = 0;
  for (int j = 0; j < r; ++j) {
    if (j == row) continue;
    A.col(col).head(d) = P.row(j).transpose();
    A(d, col) = 1.0;
    ++col;
  }
  Eigen::VectorXd b(d + 1);
  b.head(d) = P.row(row).transpose();
  b(d) = 1.0;
  const LpResult res = solve_lp(A, b, Eigen::VectorXd::Zero(r - 1), kFeasTol);
  return res.status == LpResult::Status::Optimal;
}

// Max-margin separator of row i from the rest with ||w||_1 <= 1:
//   max t  s.t.  (p_i - p_j)'(u - v) - t - s_j = 0,  sum(u) + sum(v) + s = 1
// Returns w with w'p_i - max_j w'p_j = t* (strictly positive for a vertex).
Eigen::VectorXd raw_separator(const Eigen::MatrixXd& P, int row) {
  const int r = static_cast<int>(P.rows());
  const int d = static_cast<int>(P.cols());
  if (r == 1) return Eigen::VectorXd::Zero(d);
  // Variables: u(d), v(d), t, s_j (r-1), s_box.
  const int nv = 2 * d + 1 + (r - 1) + 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(r, nv);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
  int cr = 0;
  for (int j = 0; j < r; ++j) {
    if (j == row) continue;
    const Eigen::RowVectorXd diff = P.row(row) - P.row(j);
    A.block(cr, 0, 1, d) = diff;
    A.block(cr, d, 1, d) = -diff;
    A(cr, 2 * d) = -1.0;
    A(cr, 2 * d + 1 + cr) = -1.0;
    ++cr;
  }
  A.row(r - 1).segment(0, 2 * d).setOnes();
  A(r - 1, nv - 1) = 1.0;
  b(r - 1) = 1.0;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(nv);
  c(2 * d) = -1.0;  // maximize t
  const LpResult res = solve_lp(A, b, c, 1e-12);
  if (res.status != LpResult::Status::Optimal)
    fail("separator LP did not solve");
  return res.x.head(d) - res.x.segment(d, d);
}

}  // namespace

nlohmann::ordered_json VertReport::to_json() const {
  nlohmann::ordered_json j;
  j["vert_count"] = vert_count;
  j["all_vert"] = all_vert;
  j["rows"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < vertex_flags.size(); ++i) {
    nlohmann::ordered_json row;
    row["vertex"] = static_cast<bool>(vertex_flags[i]);
    if (certificates[i]) {
      row["w"] = std::vector<double>(certificates[i]->w.data(),
                                     certificates[i]->w.data() +
                                         certificates[i]->w.size());
      row["b"] = certificates[i]->b;
      row["margin"] = certificates[i]->margin;
    }
    j["rows"].push_back(row);
  }
  return j;
}

SeparatingCertificate separating_hyperplane(const Eigen::MatrixXd& P, int row,
                                            double positive_value,
                                            double negative_margin) {
  SeparatingCertificate cert;
  const int r = static_cast<int>(P.rows());
  if (r == 1) {
    cert.w = Eigen::VectorXd::Zero(P.cols());
    cert.b = positive_value;
    cert.margin = positive_value;
    return cert;
  }
  const Eigen::VectorXd w0 = raw_separator(P, row);
  const double vi = P.row(row) * w0;
  double vmax = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < r; ++j) {
    if (j != row) vmax = std::max(vmax, double(P.row(j) * w0));
  }
  const double gap = vi - vmax;
  if (gap <= 0.0)
    fail("row " + std::to_string(row) + " is not strictly separable");
  // Affine rescale: w'p_i + b = positive_value, max_{j!=i} = -negative_margin.
  const double s = (positive_value + negative_margin) / gap;
  cert.w = s * w0;
  cert.b = positive_value - s * vi;
  double worst = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < r; ++j) {
    if (j != row) worst = std::max(worst, double(P.row(j) * cert.w) + cert.b);
  }
  cert.margin = std::min(double(P.row(row) * cert.w) + cert.b, -worst);
  return cert;
}

VertReport vertex_set(const Eigen::MatrixXd& P) {
  if (P.rows() < 1) fail("vertex_set needs at least one row");
  const int r = static_cast<int>(P.rows());
  VertReport rep;
  rep.vertex_flags.resize(r);
  rep.certificates.resize(r);
  for (int i = 0; i < r; ++i) {
    const bool vertex = !in_hull_of_others(P, i);
    rep.vertex_flags[i] = vertex;
    if (vertex) {
      ++rep.vert_count;
      rep.certificates[i] = separating_hyperplane(P, i, 0.5, 0.5);
    }
  }
  rep.all_vert = (rep.vert_count == r);
  return rep;
}

std::map<std::string, Eigen::MatrixXd> construct_identity_weights(
    const RegionTree& tree, const EventTables& tables, const std::string& alpha) {
  const Region& ra = tree.region(alpha);
  if (ra.leaf()) fail("construct_identity_weights: " + alpha + " is a leaf");
  if (ra.n != ra.m) fail("construct_identity_weights requires n == m at " + alpha);
  const double nch = static_cast<double>(ra.children.size());
  const double diag = 1.0 / nch;
  const double margin = 1.0 / (2.0 * nch);

  std::map<std::string, Eigen::MatrixXd> out;
  for (const auto& child : ra.children) {
    const Eigen::MatrixXd& P = tables.at(alpha, child).P;
    const VertReport rep = vertex_set(P);
    if (!rep.all_vert) {
      for (int i = 0; i < static_cast<int>(rep.vertex_flags.size()); ++i) {
        if (!rep.vertex_flags[i])
          fail("P(" + alpha + "," + child + ") is not all-vert: row " +
               std::to_string(i) + " lies in the hull of the others");
      }
    }
    Eigen::MatrixXd W(P.cols() + 1, ra.m);  // bias row last
    for (int i = 0; i < ra.m; ++i) {
      const SeparatingCertificate cert =
          separating_hyperplane(P, i, diag, margin);
      W.col(i).head(P.cols()) = cert.w;
      W(P.cols(), i) = cert.b;
    }
    out.emplace(child, std::move(W));
  }
  return out;
}

WeightSet construct_ladder_weights(const RegionTree& tree,
                                   const EventTables& tables) {
  WeightSet w;
  w.bias_augmented = true;
  for (const auto& r : tree.regions()) {
    if (r.leaf()) continue;
    if (r.n != r.m)
      fail("ladder construction requires n == m at every region, violated at " +
           r.id);
    auto per_child = construct_identity_weights(tree, tables, r.id);
    for (auto& [child, W] : per_child) {
      const int nb = tree.region(child).n;
      if (W.rows() != nb + 1)
        fail("ladder construction requires n == m at " + child);
      w.W.emplace(EdgeKey{r.id, child}, std::move(W));
    }
  }
  return w;
}

VertInvariance vert_invariance_check(const Eigen::MatrixXd& P,
                                     const Eigen::MatrixXd& F) {
  if (P.cols() != F.rows()) fail("vert_invariance_check: shape mismatch");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(F);
  if (F.rows() > F.cols() ||
      svd.singularValues()(F.rows() - 1) <= 1e-9)
    fail("vert_invariance_check: F is not of full row rank");

  const VertReport a = vertex_set(P);
  const VertReport b = vertex_set(P * F);
  VertInvariance res;
  res.equal = true;
  for (int i = 0; i < static_cast<int>(a.vertex_flags.size()); ++i) {
    if (a.vertex_flags[i] != b.vertex_flags[i]) {
      res.equal = false;
      res.mismatched_rows.push_back(i);
    }
  }
  return res;
}

LinearBound linear_lower_bound(const RegionTree& tree) {
  std::map<int, int> per_level;
  for (const auto& r : tree.regions()) {
    per_level[r.level] += std::min(r.m, r.n);
  }
  LinearBound lb;
  lb.rank_bound = std::numeric_limits<int>::max();
  for (const auto& [level, total] : per_level) {
    lb.rank_bound = std::min(lb.rank_bound, total);
  }
  lb.floor = std::max(0.0, static_cast<double>(tree.root().m) - lb.rank_bound);
  return lb;
}

double linear_floor_attained(const RegionTree& tree, const EventTables& tables,
                             std::uint64_t seed) {
  WeightSet w = init_weights(tree, seed, /*bias_augmented=*/false);
  const LayerState inner =
      forward_pass(tree, tables, w, GatingMode::Linear);

  // Compose the map feeding the root and take the least-squares top weights.
  const Region& root = tree.root();
  std::vector<int> widths;
  int total = 0;
  for (const auto& child : root.children) {
    widths.push_back(tree.region(child).n);
    total += widths.back();
  }
  Eigen::MatrixXd A(root.m, total);
  int off = 0;
  for (std::size_t i = 0; i < root.children.size(); ++i) {
    const auto& child = root.children[i];
    A.middleCols(off, widths[i]) =
        tables.at(root.id, child).P * inner.F.at(child);
    off += widths[i];
  }
  const Eigen::MatrixXd X =
      A.completeOrthogonalDecomposition().pseudoInverse();
  off = 0;
  for (std::size_t i = 0; i < root.children.size(); ++i) {
    w.W.at({root.id, root.children[i]}) = X.middleRows(off, widths[i]);
    off += widths[i];
  }
  const LayerState s = forward_pass(tree, tables, w, GatingMode::Linear);
  return loss(tree, s);
}

}  // namespace laddersim
