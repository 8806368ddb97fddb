#include "laddersim/simplex.hpp"

#include <limits>
#include <stdexcept>

namespace laddersim {

namespace {

struct Tableau {
  Eigen::MatrixXd T;  // (m+1) x (n+1); last row = reduced costs, last col = rhs
  std::vector<int> basis;

  int rows() const { return static_cast<int>(T.rows()) - 1; }
  int cols() const { return static_cast<int>(T.cols()) - 1; }

  void pivot(int r, int c) {
    T.row(r) /= T(r, c);
    for (int i = 0; i < static_cast<int>(T.rows()); ++i) {
      if (i != r && T(i, c) != 0.0) T.row(i) -= T(i, c) * T.row(r);
    }
    basis[r] = c;
  }

  // Bland's rule. Returns false on unboundedness.
  bool iterate(double tol) {
    const int m = rows(), n = cols();
    for (;;) {
      int enter = -1;
      for (int j = 0; j < n; ++j) {
        if (T(m, j) < -tol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) {
        if (T(i, enter) > tol) {
          const double ratio = T(i, n) / T(i, enter);
          if (ratio < best - 1e-12 ||
              (ratio < best + 1e-12 && (leave < 0 || basis[i] < basis[leave]))) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
  }
};

}  // namespace

LpResult solve_lp(Eigen::MatrixXd A, Eigen::VectorXd b, const Eigen::VectorXd& c,
                  double tol) {
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  if (b.size() != m || c.size() != n)
    throw std::invalid_argument("solve_lp: shape mismatch");

  for (int i = 0; i < m; ++i) {
    if (b(i) < 0.0) {
      A.row(i) = -A.row(i);
      b(i) = -b(i);
    }
  }

  // Phase 1: artificial variables n..n+m-1 with unit cost.
  Tableau t;
  t.T = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
  t.T.block(0, 0, m, n) = A;
  t.T.block(0, n, m, m) = Eigen::MatrixXd::Identity(m, m);
  t.T.col(n + m).head(m) = b;
  t.basis.resize(m);
  for (int i = 0; i < m; ++i) t.basis[i] = n + i;
  for (int j = n; j < n + m; ++j) t.T(m, j) = 1.0;
  for (int i = 0; i < m; ++i) t.T.row(m) -= t.T.row(i);

  if (!t.iterate(tol))
    throw std::runtime_error("solve_lp: phase 1 unbounded (internal error)");

  LpResult res;
  res.infeasibility = -t.T(m, n + m);
  if (res.infeasibility > tol * 100) {
    res.status = LpResult::Status::Infeasible;
    return res;
  }

  // Drive leftover artificials out of the basis where possible.
  for (int i = 0; i < m; ++i) {
    if (t.basis[i] >= n) {
      int j = 0;
      for (; j < n; ++j) {
        if (std::abs(t.T(i, j)) > tol) break;
      }
      if (j < n) t.pivot(i, j);
    }
  }

  // Phase 2: drop rows still pinned to an artificial (redundant constraints)
  // and the artificial columns.
  std::vector<int> keep;
  for (int i = 0; i < m; ++i) {
    if (t.basis[i] < n) keep.push_back(i);
  }
  const int m2 = static_cast<int>(keep.size());
  Tableau p2;
  p2.T = Eigen::MatrixXd::Zero(m2 + 1, n + 1);
  p2.basis.resize(m2);
  for (int i = 0; i < m2; ++i) {
    p2.T.row(i).head(n) = t.T.row(keep[i]).head(n);
    p2.T(i, n) = t.T(keep[i], n + m);
    p2.basis[i] = t.basis[keep[i]];
  }
  p2.T.row(m2).head(n) = c.transpose();
  for (int i = 0; i < m2; ++i) p2.T.row(m2) -= c(p2.basis[i]) * p2.T.row(i);

  if (!p2.iterate(tol)) {
    res.status = LpResult::Status::Unbounded;
    return res;
  }

  res.status = LpResult::Status::Optimal;
  res.x = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < m2; ++i) res.x(p2.basis[i]) = p2.T(i, n);
  res.objective = -p2.T(m2, n);
  return res;
}

}  // namespace laddersim
