#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfa/core.hpp"
#include "mfa/potentials.hpp"

namespace mfa {

// Convex combination of velocity kernels over a shared source statistic. The
// defining constraint is aggregate: the lambda-mixture of the kernels must be
// a martingale (each source atom keeps its mean velocity), while individual
// components are free to shift it.
struct KernelMixture {
  std::vector<double> lambda;
  std::vector<VelocityKernel> kernels;

  // Lambda-weighted union kernel; rows concatenate the component rows.
  VelocityKernel aggregate() const;
  // Max componentwise deviation of the aggregate row means from the source
  // velocities.
  double martingale_violation() const;
};

// Velocity grid for kernel supports: uniform points per axis on [-radius,
// radius], tensorized for d = 2. radius <= 0 requests the automatic choice
// max(5 * max|v_atom|, coercivity radius fitted by the growth audit).
struct VelocityGridSpec {
  double radius = 0.0;
  int points = 41;
};

struct RelaxOptions {
  int components = 4;     // mixture size N
  int multistarts = 8;    // random starts beside the identity start
  int pgd_iterations = 300;
  int lambda_rounds = 3;  // alternations between kernel and weight updates
  double tolerance = 1e-9;
  std::uint64_t seed = 0;
};

// Outcome of the relaxed-energy minimization. value is the best certified
// achieved value (always an upper bound for the grid problem); lower_bound is
// filled when the energy admits an exact per-atom envelope reduction, in
// which case the two coincide and the optimum is exact on the grid.
struct RelaxReport {
  double value = 0.0;
  double plain_value = 0.0;  // unrelaxed energy of the input statistic
  double upper_bound = 0.0;
  std::optional<double> lower_bound;
  KernelMixture mixture;
  double grid_radius = 0.0;
  int grid_points = 0;
  int iterations = 0;           // projected-gradient steps over all starts
  double optimizer_value = 0.0; // best value from the iterative starts alone
  double martingale_violation = 0.0;
  bool converged = false;
  bool exact_route = false;  // envelope reduction supplied the optimum
};

// Minimize sum_i lambda_i Phi(f pi_i) over mixtures whose aggregate kernel is
// a martingale, with kernel supports restricted to the velocity grid.
RelaxReport relax(const DiscreteStatistic& f, const EnergySpec& energy,
                  VelocityGridSpec grid = {}, const RelaxOptions& options = {});

// Lower convex envelope of the sampled graph {(grid[i], values[i])},
// evaluated back at the grid points. Monotone-chain lower hull, O(G) after
// the (already sorted) grid walk.
std::vector<double> convex_envelope_1d(const std::vector<double>& grid,
                                       const std::vector<double>& values);

// <f, envelope(psi)> for non-interacting 1-D energies; the exact relaxed
// value up to grid resolution, used as the oracle for relax with U = 0.
double relax_noninteracting(const DiscreteStatistic& f, const PotentialSpec& psi,
                            const VelocityGridSpec& grid);

struct RecoveryOptions {
  int copies_per_k = 8;        // path copies = copies_per_k * k (1 if all rows are deltas)
  int cells_per_period_per_k = 16;  // refined cells per oscillation period = this * k
};

// Constructive realization of a mixture value by path oscillation: every base
// path is replaced by weighted copies that cycle through the kernel points in
// component sub-intervals of length lambda_i * dt / k, phase-rotated so each
// copy returns to the base node after every period. Base nodes (and hence the
// endpoint coupling) are preserved bit-exactly; the time-averaged energy
// approaches the mixture value at rate O(1/k).
PathEnsemble recovery_ensemble(const PathEnsemble& base,
                               const std::vector<KernelMixture>& mixtures,
                               int oscillations, const RecoveryOptions& options = {});

struct ConvexOrderResult {
  bool ordered = false;  // f precedes g in the velocity-convex order
  std::optional<VelocityKernel> witness;  // martingale kernel with f pi = g
  std::string certificate;  // separating test description when not ordered
};

// Decide f <= g in the convex order (in velocity, at matched positions) by
// solving the transport feasibility problem for a martingale kernel from f
// to g; sound and complete on finite supports. A max-affine test family
// supplies a human-readable separating certificate on failure.
ConvexOrderResult convex_order_check(const DiscreteStatistic& f, const DiscreteStatistic& g);

}  // namespace mfa
