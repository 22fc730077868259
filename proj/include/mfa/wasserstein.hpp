#pragma once

#include <Eigen/Dense>

#include "mfa/core.hpp"

namespace mfa {

// Ground metric for transport costs: either the full phase-space cost
// |dx|^p + |dv|^p or the positional cost |dx|^p alone.
enum class TransportMetric {
  phase,
  position_only,
};

// Dense coupling between two discrete statistics: plan(j, k) is the mass
// moved from atom j of the source to atom k of the target. Marginals match
// the atom weights exactly up to roundoff.
struct TransportPlan {
  Eigen::MatrixXd plan;
  double cost = 0.0;  // sum_jk plan(j,k) * ground_cost(j,k), before the 1/p root
};

struct WassersteinResult {
  double distance = 0.0;
  TransportPlan plan;
};

// Ground cost matrix between the atoms of f and g.
Eigen::MatrixXd transport_costs(const DiscreteStatistic& f, const DiscreteStatistic& g, int p,
                                TransportMetric metric);

// Total cost of a given plan against a cost matrix, summed in a fixed
// row-major order so equal plans yield bitwise-equal costs.
double plan_cost(const Eigen::MatrixXd& plan, const Eigen::MatrixXd& costs);

// Exact W_p between finitely supported statistics via the transportation
// simplex (p in {1, 2}). Deterministic: ties in entering/leaving variables are
// broken lexicographically, so equal inputs give identical plans.
WassersteinResult wasserstein(const DiscreteStatistic& f, const DiscreteStatistic& g, int p,
                              TransportMetric metric = TransportMetric::phase);

// Convenience wrapper returning the distance only.
double wp(const DiscreteStatistic& f, const DiscreteStatistic& g, int p,
          TransportMetric metric = TransportMetric::phase);

// Reference implementation for equal-weight statistics with at most 8 atoms:
// scans all permutation couplings and evaluates the best one through the same
// plan-cost accumulation as the solver.
double wp_bruteforce_equalweight(const DiscreteStatistic& f, const DiscreteStatistic& g, int p,
                                 TransportMetric metric = TransportMetric::phase);

}  // namespace mfa
