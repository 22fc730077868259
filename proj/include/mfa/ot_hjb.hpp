#pragma once

#include <vector>

#include "mfa/core.hpp"
#include "mfa/nbody.hpp"
#include "mfa/potentials.hpp"

namespace mfa {

// One-dimensional Eulerian description of a transport: cell masses and cell
// velocities on a fixed space grid, one row per time node.
struct EulerianField1D {
  double lo = 0.0;
  double hi = 1.0;
  int cells = 1;
  TimeGrid time;
  std::vector<std::vector<double>> density;   // [time node][cell], each row sums to 1
  std::vector<std::vector<double>> velocity;  // [time node][cell]
  double continuity_defect = 0.0;             // stored diagnostic, see continuity_residual

  double dx() const { return (hi - lo) / cells; }
  double center(int j) const { return lo + (j + 0.5) * dx(); }
};

// Throws when the field shape or the mass invariants are violated.
void validate(const EulerianField1D& field);

// Max over time steps of the total absolute cell-mass imbalance of the
// discrete continuity equation with central face fluxes and walled ends.
double continuity_residual(const EulerianField1D& field);

// Atom cloud of one time slice: cell centers, cell velocities, cell masses
// (zero-mass cells dropped, weights renormalized).
DiscreteStatistic slice_statistic(const EulerianField1D& field, int node);

// Mass deposition rule for binning paths onto cells: nearest assigns whole
// weights to the containing cell, linear splits them between the two nearest
// cell centers (smoother fields, used by the quantile transport route).
enum class Deposit { nearest, linear };

// Bin a one-dimensional ensemble onto a cell grid: per time node, cell mass
// is the deposited path weight and cell velocity the mass-weighted mean path
// velocity (the last node reuses the final interval velocities). Positions
// outside [lo, hi] are clamped into the boundary cells.
EulerianField1D collapse_ensemble(const PathEnsemble& ensemble, double lo, double hi, int cells,
                                  Deposit deposit = Deposit::nearest);

// Time-integrated energy of the field along its slices (left endpoint rule).
// Restricted to velocity-convex energies, where the plain energy already
// equals its relaxation; other kinds are rejected.
double eulerian_action(const EulerianField1D& field, const EnergySpec& energy);

struct FreeEndpointOptions {
  int particles = 6;             // coupling search size (at most 10)
  bool force_particles = false;  // use the assignment search even without interaction
  Deposit deposit = Deposit::linear;  // binning of the quantile route
  int quantile_atoms_per_cell = 32;   // resolution of the quantile route
  OptimizeOptions optimize;
};

// Minimize the transport energy between two endpoint cell-mass profiles on
// the same grid with the pairing left free. Without interaction the monotone
// quantile coupling is optimal in one dimension and is binned directly at
// high resolution; with interaction an N-particle assignment search
// (exhaustive for N <= 5, monotone start plus pair swaps up to N = 10) runs
// on top of path optimization.
EulerianField1D solve_free_endpoint(const std::vector<double>& mu0, const std::vector<double>& muT,
                                    double lo, double hi, int cells, const TimeGrid& time,
                                    const EnergySpec& energy,
                                    const FreeEndpointOptions& options = {});

struct HJBReport {
  std::vector<std::vector<double>> xi;        // [time node][cell]; zero off the support and at
                                              // the left edge of every support run
  std::vector<std::vector<double>> residual;  // [interval][cell]: dt Xi + L* minus the level c
  std::vector<double> c;                      // [interval] level of the heaviest support run
  std::vector<int> components;                // [time node] support run count
  double max_deviation = 0.0;                 // max |residual| over retained cells
};

// Momentum potential verification: p = dL/dv at the field velocity, Xi
// integrates p in space (trapezoid, zeroed at each support run's left edge),
// and the report measures how far dt Xi + L*(x, dXi/dx) is from a constant
// per time step on the support. Runs are handled separately because the
// integration gauge is only defined per connected component.
HJBReport hjb_residual(const EulerianField1D& field, const EnergySpec& energy);

// sup_v (p v - L(x, v)) for the velocity section at x, Newton from v_start;
// requires a strictly convex section.
double velocity_legendre(const MeanFieldLagrangian& lagrangian, const Vec& x, double p,
                         double v_start);

}  // namespace mfa
