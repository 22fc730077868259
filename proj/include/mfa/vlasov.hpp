#pragma once

#include <optional>
#include <vector>

#include "mfa/core.hpp"
#include "mfa/potentials.hpp"

namespace mfa {

// Per-atom acceleration field of a statistic, solved from the implicit
// coupled linear system (the field enters its own defining equation through
// the interaction).
struct AccelerationField {
  std::vector<Vec> a;
  double residual = 0.0;           // infinity norm of (system * a - rhs)
  double smallest_singular = 0.0;  // of the assembled system matrix
};

// Characteristic trajectories of the mean-field flow in position-momentum
// variables, with velocities recovered at every node. Frames are indexed
// [node][atom]; weights are those of the initial statistic throughout.
struct CharacteristicFlow {
  DiscreteStatistic f0;
  TimeGrid grid;
  std::vector<std::vector<Vec>> x, v, p, a;
  int picard_iterations = 0;  // total across sub-horizons
  int sub_horizons = 0;
  double last_contraction = 0.0;
  double max_recovery_residual = 0.0;  // max |grad_v L(x,v) - p| over nodes
};

DiscreteStatistic statistic_at_node(const CharacteristicFlow& flow, int node);

// Solve the coupled per-atom system
//   Hvv L[f](z_k) a_k - sum_j w_j Hvv U(z_k - z_j) a_j
//     = grad_x L[f](z_k) - Hxv L[f](z_k)^T v_k + sum_j w_j Hxv U(z_k - z_j)^T v_j
// (Hxv entries are d^2/dx_a dv_b). Requires the velocity Hessian of the field
// Lagrangian to be positive definite at every atom.
AccelerationField acceleration(const DiscreteStatistic& f, const PotentialSpec& psi,
                               const std::optional<PotentialSpec>& interaction);

// Mean-field Cauchy solve: fixed-point (Picard) iteration over frozen
// statistics curves, each inner pass integrating the position-momentum
// characteristics with fixed-step RK4; stage-time field states come from
// cubic-Hermite interpolation of the previous iterate. The horizon is split
// into sub-chunks sized so the observed contraction stays below 1/2; chunk
// size halves and the solve restarts when it does not. Deterministic.
CharacteristicFlow dobrushin_solve(const DiscreteStatistic& f0, const TimeGrid& grid,
                                   const PotentialSpec& psi,
                                   const std::optional<PotentialSpec>& interaction,
                                   double fptol = 1e-12, int max_picard = 60);

// Smooth separable test function for the weak-form residual:
//   phi(t,x,v) = sin^2(pi t / T) * exp(-|x-x0|^2/sx^2) * exp(-|v-v0|^2/sv^2).
// A nonpositive scale drops that factor (constant 1, zero gradient).
struct TestBump {
  Vec x0;
  Vec v0;
  double sx = 1.0;
  double sv = 1.0;
};

// Midpoint-in-time Riemann sum of the transported weak form; the sin^2
// window vanishes at both ends, so the exact flow gives zero and the result
// measures discretization plus solver error.
double weak_vlasov_residual(const CharacteristicFlow& flow, const PotentialSpec& psi,
                            const std::optional<PotentialSpec>& interaction,
                            const std::vector<TestBump>& bumps);

struct StabilityReport {
  std::vector<double> t;
  std::vector<double> ratio;  // W1(f_t, g_t) / W1(f_0, g_0); 0/0 taken as 1
  double fitted_C = 0.0;      // envelope constant fitted on the log-ratios
  bool within_envelope = false;
};

// Evolve two initial statistics and compare their transport distance over
// time against a fitted exponential envelope ratio <= 1.05 * C * exp(C t).
StabilityReport stability_experiment(const DiscreteStatistic& f0, const DiscreteStatistic& g0,
                                     const TimeGrid& grid, const PotentialSpec& psi,
                                     const std::optional<PotentialSpec>& interaction,
                                     double fptol = 1e-12, int max_picard = 60);

}  // namespace mfa
