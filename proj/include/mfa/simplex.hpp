#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace mfa {

// Euclidean projection of q onto the probability simplex {p >= 0, sum p = 1}.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& q);

// Euclidean projection of the rows q[0..n-1] onto
//   { p[i] in simplex,  sum_i scale[i] * <p[i], values> = target },
// i.e. a product of simplices coupled by one scalar moment constraint.
// Solved through the dual: each block projects to project_simplex(q[i] + mu *
// scale[i] * values) and the scalar mu is found by bisection (the coupled
// moment is monotone in mu). Feasibility requires target to be reachable,
// e.g. sum_i scale[i] != 0 and target within the reachable moment interval.
// Returns std::nullopt when infeasible.
std::optional<std::vector<Eigen::VectorXd>> project_simplex_blocks_with_moment(
    const std::vector<Eigen::VectorXd>& q, const std::vector<double>& scale,
    const Eigen::VectorXd& values, double target, double tol = 1e-12);

// Dense feasibility-phase simplex for small linear programs
//   min c'x  s.t.  A x = b, x >= 0,
// solved with Bland's rule (deterministic, cycle-free). Sizes here are tiny
// (tens of variables), so no effort is spent on sparsity.
struct LpResult {
  bool feasible = false;
  bool bounded = true;
  double value = 0.0;
  Eigen::VectorXd x;
};
LpResult solve_lp(const Eigen::VectorXd& c, const Eigen::MatrixXd& A,
                  const Eigen::VectorXd& b, double tol = 1e-9);

}  // namespace mfa
