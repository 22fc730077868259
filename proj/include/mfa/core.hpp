#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

// Shared value types for particle statistics and path ensembles. All types are
// plain immutable-by-convention aggregates: constructors validate, operations
// return new values.

namespace mfa {

using Vec = Eigen::VectorXd;

// One point of phase space (position, velocity), both in R^d.
struct PhasePoint {
  Vec x;
  Vec v;
};

// Weighted atom of a discrete statistic.
struct Atom {
  PhasePoint z;
  double w = 0.0;
};

// Finitely supported probability measure on phase space. Weights must be
// nonnegative and are renormalized to sum to one on construction; a total
// deviating from 1 by more than 1e-6 before renormalization is rejected as a
// sign of a construction bug rather than roundoff.
class DiscreteStatistic {
 public:
  DiscreteStatistic() = default;
  explicit DiscreteStatistic(std::vector<Atom> atoms);

  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  int dimension() const { return atoms_.empty() ? 0 : static_cast<int>(atoms_[0].z.x.size()); }

 private:
  std::vector<Atom> atoms_;
};

// Uniform time grid on [0, T] with M intervals of length dt = T / M.
struct TimeGrid {
  double T = 1.0;
  int intervals = 1;

  TimeGrid() = default;
  TimeGrid(double horizon, int m);
  double dt() const { return T / intervals; }
  double node(int i) const { return T * static_cast<double>(i) / intervals; }
};

// Weighted piecewise-linear path: position nodes at grid times, velocity on
// interval i defined by forward difference (nodes[i+1] - nodes[i]) / dt.
struct Path {
  std::vector<Vec> nodes;  // size intervals + 1
  double w = 0.0;
};

// Ensemble of weighted piecewise-linear paths on a shared uniform grid.
class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(TimeGrid grid, std::vector<Path> paths);

  const TimeGrid& grid() const { return grid_; }
  const std::vector<Path>& paths() const { return paths_; }
  int dimension() const { return paths_.empty() ? 0 : static_cast<int>(paths_[0].nodes[0].size()); }

 private:
  TimeGrid grid_;
  std::vector<Path> paths_;
};

// Weighted endpoint pair (x0 -> xT); boundary data for minimization.
struct EndpointPair {
  Vec x0;
  Vec xT;
  double w = 0.0;
};

class EndpointCoupling {
 public:
  EndpointCoupling() = default;
  explicit EndpointCoupling(std::vector<EndpointPair> pairs);

  const std::vector<EndpointPair>& pairs() const { return pairs_; }
  int dimension() const { return pairs_.empty() ? 0 : static_cast<int>(pairs_[0].x0.size()); }

 private:
  std::vector<EndpointPair> pairs_;
};

// Finitely supported velocity kernel over the atoms of a source statistic:
// row k lists (v', probability) pairs for source atom k. Kernels act on the
// velocity coordinate only; positions are preserved.
struct KernelRow {
  std::vector<Vec> points;
  std::vector<double> probs;  // nonnegative, sums to 1 per row
};

class VelocityKernel {
 public:
  VelocityKernel() = default;
  VelocityKernel(DiscreteStatistic source, std::vector<KernelRow> rows);

  const DiscreteStatistic& source() const { return source_; }
  const std::vector<KernelRow>& rows() const { return rows_; }

 private:
  DiscreteStatistic source_;
  std::vector<KernelRow> rows_;
};

// ---- operations ------------------------------------------------------------

// Particle statistic of the ensemble on interval i: atom k sits at the left
// node of path k with the forward-difference velocity of the interval. Atom
// order equals path order.
DiscreteStatistic statistic_at_interval(const PathEnsemble& ens, int interval);

// Pushforward of f through the kernel: atom (x, v, w) with row {(v'_j, p_j)}
// becomes atoms (x, v'_j, w * p_j). The x-marginal is preserved.
DiscreteStatistic apply_kernel(const DiscreteStatistic& f, const VelocityKernel& k);

// True if every row's mean velocity matches its source atom velocity
// componentwise within tol.
bool is_martingale(const VelocityKernel& k, double tol);

// Velocity moment sum_k w_k |v_k|^order; with position=true the positional
// variant sum_k w_k |x_k|^order.
double moment(const DiscreteStatistic& f, double order, bool position = false);

// Straight-line ensemble through the coupling endpoints on the given grid.
PathEnsemble straight_line_ensemble(const EndpointCoupling& coupling, const TimeGrid& grid);

}  // namespace mfa
