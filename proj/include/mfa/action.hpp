#pragma once

#include <optional>
#include <vector>

#include "mfa/core.hpp"
#include "mfa/potentials.hpp"

namespace mfa {

// Discretized path-space energy: total = sum of per-interval contributions
// dt * phi(interval statistic), split into the single-particle part and the
// pairwise part.
struct ActionValue {
  double total = 0.0;
  std::vector<double> per_interval;
  double kinetic = 0.0;      // dt-weighted <f, psi> part
  double interaction = 0.0;  // dt-weighted pairwise part (or the mean-velocity square)
};

// Energy of a single statistic: <f, psi> + 1/2 sum_jk w_j w_k U(z_j - z_k),
// the double sum including j = k (each unit of mass carries 1/2 U(0,0)).
// The variance-penalty kind evaluates its own formula instead.
double phi(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
           const DiscreteStatistic& f);

// Riemann-sum energy of the ensemble: sum_i dt * phi(statistic at interval i),
// positions attributed to the left node of each interval.
ActionValue action(const PathEnsemble& ens, const PotentialSpec& psi,
                   const std::optional<PotentialSpec>& interaction);

// Exact gradient of the discrete energy with respect to interior path nodes
// (endpoints fixed): out[k][j] is the derivative in node j+1 of path k.
// Rejects kinds without classical derivatives.
std::vector<std::vector<Vec>> action_gradient(const PathEnsemble& ens, const PotentialSpec& psi,
                                              const std::optional<PotentialSpec>& interaction);

}  // namespace mfa
