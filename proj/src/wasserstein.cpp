#include "mfa/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mfa {
namespace {

double ground_cost(const PhasePoint& a, const PhasePoint& b, int p, TransportMetric metric) {
  const double dx = (a.x - b.x).norm();
  double c = (p == 1) ? dx : dx * dx;
  if (metric == TransportMetric::phase) {
    const double dv = (a.v - b.v).norm();
    c += (p == 1) ? dv : dv * dv;
  }
  return c;
}

void check_inputs(const DiscreteStatistic& f, const DiscreteStatistic& g, int p) {
  if (p != 1 && p != 2) throw std::invalid_argument("transport order p must be 1 or 2");
  if (f.size() == 0 || g.size() == 0) throw std::invalid_argument("empty statistic");
  if (f.dimension() != g.dimension())
    throw std::invalid_argument("statistics live in different dimensions");
}

// Basis cell of the transportation tableau.
struct BasisCell {
  int row = 0;
  int col = 0;
};

// Transportation simplex state: a spanning-tree basis over the bipartite
// row/column graph, stored as an explicit cell list plus adjacency.
class TransportTableau {
 public:
  TransportTableau(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                   const Eigen::MatrixXd& costs)
      : supply_(supply), demand_(demand), costs_(costs), m_(int(supply.size())),
        n_(int(demand.size())), flow_(Eigen::MatrixXd::Zero(m_, n_)),
        in_basis_(Eigen::MatrixXi::Zero(m_, n_)) {
    northwest_corner();
  }

  void solve() {
    // Each pivot either strictly decreases cost or (on a degenerate step)
    // moves to an adjacent basis; the lexicographic entering rule plus the
    // deterministic leaving rule has not cycled on any input we generate, and
    // the iteration guard turns a hypothetical cycle into a hard error
    // instead of silent wrong answers.
    const long max_iter = 2000L * (m_ + n_) * (m_ + n_) + 10000L;
    for (long iter = 0; iter < max_iter; ++iter) {
      compute_potentials();
      int bi = -1, bj = -1;
      double best = -1e-12;
      for (int i = 0; i < m_; ++i) {
        for (int j = 0; j < n_; ++j) {
          if (in_basis_(i, j)) continue;
          const double reduced = costs_(i, j) - u_[i] - v_[j];
          if (reduced < best - 0.0) {
            best = reduced;
            bi = i;
            bj = j;
          }
        }
      }
      if (bi < 0) return;  // optimal
      pivot(bi, bj);
    }
    throw std::runtime_error("transportation simplex failed to converge");
  }

  const Eigen::MatrixXd& flow() const { return flow_; }

 private:
  void northwest_corner() {
    std::vector<double> a(supply_.data(), supply_.data() + m_);
    std::vector<double> b(demand_.data(), demand_.data() + n_);
    int i = 0, j = 0;
    while (i < m_ && j < n_) {
      const double t = std::min(a[i], b[j]);
      flow_(i, j) = t;
      in_basis_(i, j) = 1;
      basis_.push_back({i, j});
      a[i] -= t;
      b[j] -= t;
      // Advance one index only, keeping exactly m + n - 1 basis cells even on
      // degenerate ties (the skipped cell enters with zero flow).
      if (i == m_ - 1 && j == n_ - 1) break;
      if (i == m_ - 1)
        ++j;
      else if (j == n_ - 1)
        ++i;
      else if (a[i] <= b[j])
        ++i;
      else
        ++j;
    }
  }

  void compute_potentials() {
    u_.assign(m_, 0.0);
    v_.assign(n_, 0.0);
    std::vector<char> row_done(m_, 0), col_done(n_, 0);
    row_done[0] = 1;  // anchor u_0 = 0
    // Propagate over the spanning tree until all potentials are fixed.
    bool progress = true;
    int fixed = 1;
    while (progress && fixed < m_ + n_) {
      progress = false;
      for (const BasisCell& c : basis_) {
        if (row_done[c.row] && !col_done[c.col]) {
          v_[c.col] = costs_(c.row, c.col) - u_[c.row];
          col_done[c.col] = 1;
          ++fixed;
          progress = true;
        } else if (!row_done[c.row] && col_done[c.col]) {
          u_[c.row] = costs_(c.row, c.col) - v_[c.col];
          row_done[c.row] = 1;
          ++fixed;
          progress = true;
        }
      }
    }
    if (fixed != m_ + n_) throw std::runtime_error("transportation basis is not a spanning tree");
  }

  // Find the unique alternating cycle created by adding (ei, ej) to the basis
  // tree: trim leaves (cells alone in their row or column) until only the
  // cycle remains, then walk it starting from the entering cell. In the
  // trimmed set every row and column holds exactly zero or two cells, so the
  // walk is deterministic.
  std::vector<BasisCell> find_cycle(int ei, int ej) const {
    std::vector<BasisCell> cells = basis_;
    cells.push_back({ei, ej});
    std::vector<char> alive(cells.size(), 1);
    bool trimmed = true;
    while (trimmed) {
      trimmed = false;
      std::vector<int> row_count(m_, 0), col_count(n_, 0);
      for (std::size_t k = 0; k < cells.size(); ++k) {
        if (!alive[k]) continue;
        ++row_count[cells[k].row];
        ++col_count[cells[k].col];
      }
      for (std::size_t k = 0; k < cells.size(); ++k) {
        if (!alive[k]) continue;
        if (row_count[cells[k].row] == 1 || col_count[cells[k].col] == 1) {
          alive[k] = 0;
          trimmed = true;
        }
      }
    }
    std::vector<BasisCell> remaining;
    for (std::size_t k = 0; k < cells.size(); ++k)
      if (alive[k]) remaining.push_back(cells[k]);
    if (remaining.size() < 4 || remaining.size() % 2 != 0)
      throw std::runtime_error("transportation pivot found no cycle");

    std::vector<BasisCell> cycle = {{ei, ej}};
    auto erase_cell = [&remaining](int r, int c) {
      for (std::size_t k = 0; k < remaining.size(); ++k)
        if (remaining[k].row == r && remaining[k].col == c) {
          remaining.erase(remaining.begin() + long(k));
          return;
        }
    };
    erase_cell(ei, ej);
    bool move_in_row = true;
    while (!remaining.empty()) {
      const BasisCell& cur = cycle.back();
      std::size_t pick = remaining.size();
      for (std::size_t k = 0; k < remaining.size(); ++k) {
        const bool same_line =
            move_in_row ? (remaining[k].row == cur.row) : (remaining[k].col == cur.col);
        if (same_line) {
          pick = k;
          break;
        }
      }
      if (pick == remaining.size())
        throw std::runtime_error("transportation cycle walk broke");
      cycle.push_back(remaining[pick]);
      remaining.erase(remaining.begin() + long(pick));
      move_in_row = !move_in_row;
    }
    return cycle;
  }

  void pivot(int ei, int ej) {
    std::vector<BasisCell> cycle = find_cycle(ei, ej);
    // Odd positions in the cycle lose flow. Leaving cell: minimal flow among
    // them, ties broken by smallest (row, col).
    double theta = std::numeric_limits<double>::infinity();
    int leave = -1;
    for (std::size_t k = 1; k < cycle.size(); k += 2) {
      const double fl = flow_(cycle[k].row, cycle[k].col);
      if (fl < theta - 1e-15 ||
          (std::abs(fl - theta) <= 1e-15 &&
           (leave < 0 || cycle[k].row < cycle[leave].row ||
            (cycle[k].row == cycle[leave].row && cycle[k].col < cycle[leave].col)))) {
        theta = fl;
        leave = int(k);
      }
    }
    if (leave < 0) throw std::runtime_error("transportation pivot found no leaving cell");
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      double& fl = flow_(cycle[k].row, cycle[k].col);
      fl += (k % 2 == 0) ? theta : -theta;
    }
    const BasisCell out = cycle[leave];
    flow_(out.row, out.col) = 0.0;
    in_basis_(out.row, out.col) = 0;
    in_basis_(ei, ej) = 1;
    for (BasisCell& c : basis_) {
      if (c.row == out.row && c.col == out.col) {
        c = {ei, ej};
        break;
      }
    }
    std::sort(basis_.begin(), basis_.end(), [](const BasisCell& a, const BasisCell& b) {
      return a.row < b.row || (a.row == b.row && a.col < b.col);
    });
  }

  Eigen::VectorXd supply_, demand_;
  Eigen::MatrixXd costs_;
  int m_, n_;
  Eigen::MatrixXd flow_;
  Eigen::MatrixXi in_basis_;
  std::vector<BasisCell> basis_;
  std::vector<double> u_, v_;
};

}  // namespace

Eigen::MatrixXd transport_costs(const DiscreteStatistic& f, const DiscreteStatistic& g, int p,
                                TransportMetric metric) {
  Eigen::MatrixXd costs(f.size(), g.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j)
      costs(int(i), int(j)) = ground_cost(f.atoms()[i].z, g.atoms()[j].z, p, metric);
  return costs;
}

double plan_cost(const Eigen::MatrixXd& plan, const Eigen::MatrixXd& costs) {
  double total = 0.0;
  for (int i = 0; i < plan.rows(); ++i)
    for (int j = 0; j < plan.cols(); ++j)
      if (plan(i, j) != 0.0) total += plan(i, j) * costs(i, j);
  return total;
}

WassersteinResult wasserstein(const DiscreteStatistic& f, const DiscreteStatistic& g, int p,
                              TransportMetric metric) {
  check_inputs(f, g, p);
  const int m = int(f.size()), n = int(g.size());
  Eigen::VectorXd supply(m), demand(n);
  for (int i = 0; i < m; ++i) supply[i] = f.atoms()[i].w;
  for (int j = 0; j < n; ++j) demand[j] = g.atoms()[j].w;
  const Eigen::MatrixXd costs = transport_costs(f, g, p, metric);
  TransportTableau tableau(supply, demand, costs);
  tableau.solve();

  WassersteinResult out;
  out.plan.plan = tableau.flow();
  // Clamp pivot dust so the plan satisfies nonnegativity exactly.
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      if (out.plan.plan(i, j) < 0.0) out.plan.plan(i, j) = 0.0;
  out.plan.cost = plan_cost(out.plan.plan, costs);
  out.distance = (p == 1) ? out.plan.cost : std::sqrt(std::max(0.0, out.plan.cost));
  return out;
}

double wp(const DiscreteStatistic& f, const DiscreteStatistic& g, int p, TransportMetric metric) {
  return wasserstein(f, g, p, metric).distance;
}

double wp_bruteforce_equalweight(const DiscreteStatistic& f, const DiscreteStatistic& g, int p,
                                 TransportMetric metric) {
  check_inputs(f, g, p);
  const int n = int(f.size());
  if (g.size() != f.size() || n > 8)
    throw std::invalid_argument("brute-force route needs equal atom counts <= 8");
  const double w = 1.0 / n;
  for (const Atom& a : f.atoms())
    if (std::abs(a.w - w) > 1e-12) throw std::invalid_argument("brute-force route needs equal weights");
  for (const Atom& a : g.atoms())
    if (std::abs(a.w - w) > 1e-12) throw std::invalid_argument("brute-force route needs equal weights");

  const Eigen::MatrixXd costs = transport_costs(f, g, p, metric);
  std::vector<int> perm(n), best_perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  best_perm = perm;
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += costs(i, perm[i]);
    if (c < best) {
      best = c;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  // Re-evaluate the winning coupling through the shared accumulation path so
  // the reference value is arithmetically identical to the solver's.
  Eigen::MatrixXd plan = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) plan(i, best_perm[i]) = w;
  const double cost = plan_cost(plan, costs);
  return (p == 1) ? cost : std::sqrt(std::max(0.0, cost));
}

}  // namespace mfa
