#include <doctest.h>

#include "laddersim/hull.hpp"
#include "laddersim/rng.hpp"
#include "laddersim/teacher.hpp"

using namespace laddersim;

namespace {

// Brute-force oracle: row i is a non-vertex iff some subset of at most
// d + 1 other rows has a convex combination equal to it (Caratheodory).
// Solved by least squares plus feasibility of the coefficients.
bool brute_force_vertex(const Eigen::MatrixXd& P, int row) {
  const int r = static_cast<int>(P.rows());
  const int d = static_cast<int>(P.cols());
  std::vector<int> others;
  for (int j = 0; j < r; ++j) {
    if (j != row) others.push_back(j);
  }
  const int k_max = std::min<int>(d + 1, static_cast<int>(others.size()));
  for (int mask = 1; mask < (1 << others.size()); ++mask) {
    if (__builtin_popcount(mask) > k_max) continue;
    std::vector<int> sel;
    for (std::size_t b = 0; b < others.size(); ++b) {
      if (mask & (1 << b)) sel.push_back(others[b]);
    }
    Eigen::MatrixXd A(d + 1, sel.size());
    for (std::size_t c = 0; c < sel.size(); ++c) {
      A.col(c).head(d) = P.row(sel[c]).transpose();
      A(d, c) = 1.0;
    }
    Eigen::VectorXd b(d + 1);
    b.head(d) = P.row(row).transpose();
    b(d) = 1.0;
    const Eigen::VectorXd x = A.colPivHouseholderQr().solve(b);
    if ((A * x - b).cwiseAbs().maxCoeff() < 1e-8 && x.minCoeff() > -1e-9)
      return false;
  }
  return true;
}

Eigen::MatrixXd random_stochastic(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd P(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto d = rng.dirichlet(cols);
    for (int j = 0; j < cols; ++j) P(i, j) = d[j];
  }
  return P;
}

TeacherGraph allvert_teacher(std::uint64_t seed) {
  TeacherSpec spec;
  spec.regions = {Region{"l1", {}, 4, 4, 0}, Region{"l2", {}, 4, 4, 0},
                  Region{"root", {"l1", "l2"}, 4, 4, 0}};
  spec.fns["root"] = "xor";
  spec.leaf_prior = "random:" + std::to_string(seed);
  return TeacherGraph::build(spec);
}

}  // namespace

TEST_CASE("simplex corners are all vertices") {
  const VertReport rep = vertex_set(Eigen::MatrixXd::Identity(4, 4));
  CHECK(rep.all_vert);
  CHECK(rep.vert_count == 4);
}

TEST_CASE("interior point is not a vertex") {
  Eigen::MatrixXd P(4, 2);
  P << 0, 0, 1, 0, 0, 1, 0.25, 0.25;
  const VertReport rep = vertex_set(P);
  CHECK(rep.vertex_flags[0]);
  CHECK(rep.vertex_flags[1]);
  CHECK(rep.vertex_flags[2]);
  CHECK_FALSE(rep.vertex_flags[3]);
  CHECK(rep.vert_count == 3);
}

TEST_CASE("duplicate rows are mutual non-vertices") {
  Eigen::MatrixXd P(3, 2);
  P << 0.5, 0.5, 0.5, 0.5, 1.0, 0.0;
  const VertReport rep = vertex_set(P);
  CHECK_FALSE(rep.vertex_flags[0]);
  CHECK_FALSE(rep.vertex_flags[1]);
  CHECK(rep.vertex_flags[2]);
}

TEST_CASE("classification agrees with the brute-force oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const int rows = 3 + static_cast<int>(rng.integer(4));  // 3..6
    const int cols = 2 + static_cast<int>(rng.integer(3));  // 2..4
    Eigen::MatrixXd P = random_stochastic(rng, rows, cols);
    if (trial % 3 == 0 && rows >= 3) {
      // Plant a non-vertex: midpoint of two other rows.
      P.row(0) = 0.5 * P.row(1) + 0.5 * P.row(2);
    }
    const VertReport rep = vertex_set(P);
    for (int i = 0; i < rows; ++i) {
      INFO("trial " << trial << " row " << i);
      CHECK(rep.vertex_flags[i] == brute_force_vertex(P, i));
    }
  }
}

TEST_CASE("certificates separate with the promised margin") {
  Rng rng(9);
  const Eigen::MatrixXd P = random_stochastic(rng, 5, 4);
  const VertReport rep = vertex_set(P);
  for (int i = 0; i < 5; ++i) {
    if (!rep.vertex_flags[i]) continue;
    REQUIRE(rep.certificates[i].has_value());
    const auto& c = *rep.certificates[i];
    CHECK(double(P.row(i) * c.w) + c.b == doctest::Approx(0.5).epsilon(1e-9));
    for (int j = 0; j < 5; ++j) {
      if (j != i) CHECK(double(P.row(j) * c.w) + c.b <= -0.5 + 1e-9);
    }
  }
}

TEST_CASE("separating hyperplane hits requested values") {
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(3, 3);
  const SeparatingCertificate c = separating_hyperplane(P, 1, 0.25, 0.125);
  CHECK(double(P.row(1) * c.w) + c.b == doctest::Approx(0.25));
  CHECK(double(P.row(0) * c.w) + c.b <= -0.125 + 1e-12);
  CHECK(double(P.row(2) * c.w) + c.b <= -0.125 + 1e-12);
}

TEST_CASE("constructed ladder weights drive the gated output to identity") {
  const TeacherGraph g = allvert_teacher(31);
  const EventTables tables = make_tables(g);
  const WeightSet w = construct_ladder_weights(g.tree(), tables);
  const LayerState s = forward_pass(g.tree(), tables, w);

  const Eigen::MatrixXd& raw = s.Fraw.at("root");
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (i == j)
        CHECK(raw(i, j) > 0.0);
      else
        CHECK(raw(i, j) < 0.0);
    }
  }
  CHECK(loss(g.tree(), s) < 1e-24);
}

TEST_CASE("construction refuses a non-all-vert table naming the row") {
  // Uniform leaf prior + modular sum: every conditional row is uniform, so
  // nothing is a vertex.
  TeacherSpec spec;
  spec.regions = {Region{"l1", {}, 4, 4, 0}, Region{"l2", {}, 4, 4, 0},
                  Region{"root", {"l1", "l2"}, 4, 4, 0}};
  spec.fns["root"] = "xor";
  spec.leaf_prior = "uniform";
  const TeacherGraph g = TeacherGraph::build(spec);
  const EventTables tables = make_tables(g);
  CHECK_THROWS_WITH_AS(construct_identity_weights(g.tree(), tables, "root"),
                       doctest::Contains("not all-vert"), std::runtime_error);
}

TEST_CASE("vertex flags are invariant under full-row-rank right factors") {
  Rng rng(10);
  int checked = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const int rows = 4 + static_cast<int>(rng.integer(5));  // 4..8
    const int d = 3 + static_cast<int>(rng.integer(3));     // 3..5
    const int cols = d + static_cast<int>(rng.integer(4));  // d..d+3, <= 8
    Eigen::MatrixXd P = random_stochastic(rng, rows, d);
    if (trial % 2 == 0 && rows >= 3) P.row(0) = 0.5 * (P.row(1) + P.row(2));
    Eigen::MatrixXd F(d, cols);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < cols; ++j) F(i, j) = rng.uniform(-1.0, 1.0);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(F);
    if (svd.singularValues()(d - 1) < 1e-3) continue;  // stay generic
    const VertInvariance inv = vert_invariance_check(P, F);
    INFO("trial " << trial);
    CHECK(inv.equal);
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("rank-deficient right factor is rejected") {
  const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd F(3, 2);  // wide matrices can never have full row rank here
  F.setOnes();
  CHECK_THROWS_WITH_AS(vert_invariance_check(P, F),
                       doctest::Contains("full row rank"), std::runtime_error);
}

TEST_CASE("linear bound on the bottlenecked chain") {
  TeacherSpec spec;
  spec.regions = {Region{"leaf", {}, 4, 4, 0},
                  Region{"mid", {"leaf"}, 4, 2, 0},
                  Region{"root", {"mid"}, 4, 4, 0}};
  spec.fns["mid"] = "bijective";
  spec.fns["root"] = "bijective";
  spec.leaf_prior = "random:3";
  const TeacherGraph g = TeacherGraph::build(spec);
  const LinearBound lb = linear_lower_bound(g.tree());
  CHECK(lb.rank_bound == 2);
  CHECK(lb.floor == doctest::Approx(2.0));

  const EventTables tables = make_tables(g);
  const double attained = linear_floor_attained(g.tree(), tables, 12);
  CHECK(attained == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("unbottlenecked tree has floor zero") {
  const TeacherGraph g = allvert_teacher(1);
  const LinearBound lb = linear_lower_bound(g.tree());
  CHECK(lb.floor == doctest::Approx(0.0));
}
