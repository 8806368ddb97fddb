#pragma once

#include <Eigen/Dense>

#include <vector>

namespace laddersim {

// Dense two-phase simplex for the small LPs in the hull module:
//   min c^T x   s.t.  A x = b,  x >= 0
// Bland's rule, so it terminates on degenerate instances. Problem sizes here
// are tens of rows, so no effort is spent on sparsity or revised form.
struct LpResult {
  enum class Status { Optimal, Infeasible, Unbounded };
  Status status = Status::Infeasible;
  Eigen::VectorXd x;
  double objective = 0.0;
  // Phase-1 optimum: how far the constraints are from being satisfiable.
  double infeasibility = 0.0;
};

LpResult solve_lp(Eigen::MatrixXd A, Eigen::VectorXd b, const Eigen::VectorXd& c,
                  double tol = 1e-10);

}  // namespace laddersim
