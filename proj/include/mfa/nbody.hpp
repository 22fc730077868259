#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "mfa/action.hpp"
#include "mfa/core.hpp"
#include "mfa/potentials.hpp"
#include "mfa/rng.hpp"

namespace mfa {

struct OptimizeOptions {
  double gtol = 1e-8;      // infinity norm of the interior-node gradient
  int max_iter = 5000;
  int memory = 10;         // quasi-Newton history length
  double armijo = 1e-4;    // sufficient-decrease constant
  double backtrack = 0.5;  // step shrink factor
  int max_line_steps = 60;
};

struct OptimizeReport {
  PathEnsemble ensemble;
  double initial_action = 0.0;
  double final_action = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;    // infinity norm at the returned iterate
  double el_residual = 0.0;  // stationarity stencil at the returned iterate
  double wall_time_s = 0.0;
  bool converged = false;
};

// Minimize the discrete energy over interior path nodes, endpoints fixed to
// the coupling bit-exactly, starting from straight lines. Limited-memory
// quasi-Newton with Armijo backtracking; deterministic.
OptimizeReport optimize(const EndpointCoupling& coupling, const TimeGrid& grid,
                        const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                        const OptimizeOptions& opts = {});

// Max over paths and interior nodes of the discrete stationarity residual
//   | (grad_v L[f_i](z_i) - grad_v L[f_{i-1}](z_{i-1})) / dt - grad_x L[f_i](z_i) |.
double el_residual(const PathEnsemble& ens, const PotentialSpec& psi,
                   const std::optional<PotentialSpec>& interaction);

// Draws one endpoint pair per call; the stream is the only randomness source.
using EndpointSampler = std::function<EndpointPair(RandomStream&)>;

struct ConvergenceRow {
  int n_small = 0;
  int n_large = 0;
  double distance_sq_integral = 0.0;  // sum_i dt * W2^2 of the interval statistics
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  bool monotone = false;  // strictly decreasing down the rows
};

// Empirical self-convergence study: for each N in the list, sample an
// N-point endpoint coupling from the sampler (stream named by N, so the
// draw for a given N never depends on the rest of the list), minimize, and
// report the squared transport distance between interval statistics of
// successive minimizers, integrated over time.
ConvergenceTable convergence_experiment(const EndpointSampler& sampler,
                                        const std::vector<int>& n_list, const TimeGrid& grid,
                                        const PotentialSpec& psi,
                                        const std::optional<PotentialSpec>& interaction,
                                        std::uint64_t seed, const OptimizeOptions& opts = {});

}  // namespace mfa
