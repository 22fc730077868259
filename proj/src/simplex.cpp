#include "mfa/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mfa {

Eigen::VectorXd project_simplex(const Eigen::VectorXd& q) {
  // Sort-based projection: p = max(q - tau, 0) with tau from the largest
  // prefix keeping the clipped sum at 1.
  const Eigen::Index n = q.size();
  std::vector<double> u(q.data(), q.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, tau = 0.0;
  int support = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) {
      tau = t;
      support = static_cast<int>(j + 1);
    }
  }
  if (support == 0) tau = (cum - 1.0) / static_cast<double>(n);
  return (q.array() - tau).cwiseMax(0.0);
}

std::optional<std::vector<Eigen::VectorXd>> project_simplex_blocks_with_moment(
    const std::vector<Eigen::VectorXd>& q, const std::vector<double>& scale,
    const Eigen::VectorXd& values, double target, double tol) {
  if (q.size() != scale.size()) throw std::invalid_argument("block/scale count mismatch");
  const std::size_t n = q.size();

  // Reachable moment interval given the scales.
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double vmin = values.minCoeff(), vmax = values.maxCoeff();
    lo += scale[i] >= 0.0 ? scale[i] * vmin : scale[i] * vmax;
    hi += scale[i] >= 0.0 ? scale[i] * vmax : scale[i] * vmin;
  }
  if (target < lo - 1e-12 || target > hi + 1e-12) return std::nullopt;

  auto blocks_at = [&](double mu) {
    std::vector<Eigen::VectorXd> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = project_simplex(q[i] + mu * scale[i] * values);
    return p;
  };
  auto moment_of = [&](const std::vector<Eigen::VectorXd>& p) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += scale[i] * values.dot(p[i]);
    return m;
  };

  // The coupled moment is nondecreasing in mu; bracket then bisect.
  double mu_lo = -1.0, mu_hi = 1.0;
  for (int it = 0; it < 200 && moment_of(blocks_at(mu_lo)) > target + tol; ++it) mu_lo *= 2.0;
  for (int it = 0; it < 200 && moment_of(blocks_at(mu_hi)) < target - tol; ++it) mu_hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (mu_lo + mu_hi);
    const double m = moment_of(blocks_at(mid));
    if (std::abs(m - target) <= tol) return blocks_at(mid);
    (m < target ? mu_lo : mu_hi) = mid;
  }
  auto p = blocks_at(0.5 * (mu_lo + mu_hi));
  if (std::abs(moment_of(p) - target) <= 1e3 * tol) return p;
  return std::nullopt;
}

LpResult solve_lp(const Eigen::VectorXd& c, const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                  double tol) {
  // Two-phase tableau simplex with Bland's rule. Rows with negative b are
  // flipped so artificial variables give an immediate feasible basis.
  const Eigen::Index m = A.rows(), n = A.cols();
  Eigen::MatrixXd T(m + 1, n + m + 1);
  T.setZero();
  for (Eigen::Index i = 0; i < m; ++i) {
    const double s = b(i) < 0.0 ? -1.0 : 1.0;
    T.block(i, 0, 1, n) = s * A.row(i);
    T(i, n + i) = 1.0;
    T(i, n + m) = s * b(i);
  }
  std::vector<Eigen::Index> basis(m);
  for (Eigen::Index i = 0; i < m; ++i) basis[i] = n + i;

  auto pivot = [&](Eigen::Index pr, Eigen::Index pc) {
    T.row(pr) /= T(pr, pc);
    for (Eigen::Index i = 0; i <= m; ++i) {
      if (i == pr || T(i, pc) == 0.0) continue;
      T.row(i) -= T(i, pc) * T.row(pr);
    }
    basis[pr] = pc;
  };

  auto run_phase = [&](Eigen::Index n_cols) -> bool {
    // Objective row is T.row(m); returns false if unbounded.
    for (;;) {
      Eigen::Index pc = -1;
      for (Eigen::Index j = 0; j < n_cols; ++j) {
        if (T(m, j) < -tol) {  // Bland: smallest eligible index
          pc = j;
          break;
        }
      }
      if (pc < 0) return true;
      Eigen::Index pr = -1;
      double best = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (T(i, pc) > tol) {
          const double ratio = T(i, n + m) / T(i, pc);
          if (pr < 0 || ratio < best - 1e-15 ||
              (std::abs(ratio - best) <= 1e-15 && basis[i] < basis[pr])) {
            pr = i;
            best = ratio;
          }
        }
      }
      if (pr < 0) return false;
      pivot(pr, pc);
    }
  };

  LpResult res;

  // Phase 1: minimize the sum of artificials.
  for (Eigen::Index j = 0; j < n + m; ++j)
    T(m, j) = j >= n ? 1.0 : 0.0;
  T(m, n + m) = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) T.row(m) -= T.row(i);  // price out the basis
  run_phase(n + m);
  if (-T(m, n + m) > 1e-7) return res;  // infeasible

  // Drive any artificial still in the basis out (or drop its redundant row).
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[i] < n) continue;
    Eigen::Index pc = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(T(i, j)) > tol) {
        pc = j;
        break;
      }
    }
    if (pc >= 0) pivot(i, pc);
  }

  // Phase 2 on the original objective; artificial columns are frozen out.
  for (Eigen::Index j = 0; j < n + m; ++j) T(m, j) = j < n ? c(j) : 0.0;
  T(m, n + m) = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[i] < n) T.row(m) -= c(basis[i]) * T.row(i);
  }
  res.feasible = true;
  if (!run_phase(n)) {
    res.bounded = false;
    return res;
  }
  res.x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[i] < n) res.x(basis[i]) = T(i, n + m);
  }
  res.value = c.dot(res.x);
  return res;
}

}  // namespace mfa
