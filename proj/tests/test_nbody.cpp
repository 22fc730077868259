#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "mfa/action.hpp"
#include "mfa/nbody.hpp"
#include "test_util.hpp"

using namespace mfa;
using namespace mfa::testutil;

namespace {

// Two equal particles, quadratic attraction kappa |x|^2: each particle feels
// kappa (x_k - x_other) through the half weight, so the separation r = x2 - x1
// obeys r'' = 2 kappa r and the center of mass stays linear. Boundary values
// r(0) = r(T) = 1 here.
double separation_bvp(double t, double omega, double T) {
  const double A = 1.0;
  const double B = (1.0 - std::cosh(omega * T)) / std::sinh(omega * T);
  return A * std::cosh(omega * t) + B * std::sinh(omega * t);
}

// The minimizing pair sampled on the grid, for measuring the discretization
// error of the stationarity stencil in isolation.
PathEnsemble sampled_pair_bvp(int m, double omega) {
  Path lo, hi;
  lo.w = hi.w = 0.5;
  for (int i = 0; i <= m; ++i) {
    const double r = separation_bvp(static_cast<double>(i) / m, omega, 1.0);
    lo.nodes.push_back(vec1(0.5 - 0.5 * r));
    hi.nodes.push_back(vec1(0.5 + 0.5 * r));
  }
  return PathEnsemble(TimeGrid(1.0, m), {lo, hi});
}

OptimizeReport solve_pair(int m, double kappa) {
  EndpointCoupling coupling(
      {EndpointPair{vec1(0.0), vec1(0.0), 0.5}, EndpointPair{vec1(1.0), vec1(1.0), 0.5}});
  return optimize(coupling, TimeGrid(1.0, m), PotentialSpec::QuadraticKinetic(),
                  PotentialSpec::QuadraticPosition(kappa));
}

}  // namespace

TEST_CASE("free single particle keeps the straight line") {
  EndpointCoupling coupling({EndpointPair{vec1(0.0), vec1(1.0), 1.0}});
  OptimizeReport rep =
      optimize(coupling, TimeGrid(1.0, 16), PotentialSpec::QuadraticKinetic(), std::nullopt);
  CHECK(rep.converged);
  CHECK(rep.final_action == doctest::Approx(0.5));
  CHECK(rep.final_action == doctest::Approx(rep.initial_action));
  PathEnsemble straight = straight_line_ensemble(coupling, TimeGrid(1.0, 16));
  for (int i = 0; i <= 16; ++i)
    CHECK(rep.ensemble.paths()[0].nodes[static_cast<std::size_t>(i)](0) ==
          doctest::Approx(straight.paths()[0].nodes[static_cast<std::size_t>(i)](0)).epsilon(1e-9));
}

TEST_CASE("two-particle quadratic attraction matches the closed-form boundary problem") {
  const int m = 200;
  OptimizeReport rep = solve_pair(m, 50.0);
  CHECK(rep.converged);
  CHECK(rep.final_action < rep.initial_action);

  // each particle feels a = kappa (x_k - x_other) through the half weight,
  // so the separation obeys r'' = 2 kappa r: omega = sqrt(100) at kappa = 50
  const double omega = 10.0;
  double worst = 0.0;
  for (int i = 0; i <= m; ++i) {
    const double t = static_cast<double>(i) / m;
    const double r = separation_bvp(t, omega, 1.0);
    const double c = 0.5;  // center of mass fixed by symmetric endpoints
    const double x1 = c - 0.5 * r;
    const double x2 = c + 0.5 * r;
    worst = std::max(worst, std::abs(rep.ensemble.paths()[0].nodes[static_cast<std::size_t>(i)](0) - x1));
    worst = std::max(worst, std::abs(rep.ensemble.paths()[1].nodes[static_cast<std::size_t>(i)](0) - x2));
  }
  CHECK(worst < 1e-3);

  SUBCASE("endpoints are preserved bit-exactly") {
    CHECK(rep.ensemble.paths()[0].nodes[0](0) == 0.0);
    CHECK(rep.ensemble.paths()[0].nodes[m](0) == 0.0);
    CHECK(rep.ensemble.paths()[1].nodes[0](0) == 1.0);
    CHECK(rep.ensemble.paths()[1].nodes[m](0) == 1.0);
  }
}

TEST_CASE("stationarity residual shrinks at first order in the step") {
  // the optimizer drives the discrete residual to solver tolerance, so the
  // discretization order is measured on the sampled continuum solution, where
  // the stencil truncation is the only error source
  const double res_c = el_residual(sampled_pair_bvp(100, 10.0), PotentialSpec::QuadraticKinetic(),
                                   PotentialSpec::QuadraticPosition(50));
  const double res_f = el_residual(sampled_pair_bvp(200, 10.0), PotentialSpec::QuadraticKinetic(),
                                   PotentialSpec::QuadraticPosition(50));
  CHECK(res_f < 1e-2);
  CHECK(res_f <= 0.6 * res_c);  // at least first-order decay

  // the optimized path at the same resolution is stationary well below the
  // truncation level
  OptimizeReport fine = solve_pair(200, 50.0);
  REQUIRE(fine.converged);
  CHECK(fine.el_residual < res_f);
}

TEST_CASE("residual reference values") {
  SUBCASE("free straight line is exactly stationary") {
    PathEnsemble ens = straight_line_ensemble(
        EndpointCoupling({EndpointPair{vec1(0), vec1(1), 1.0}}), TimeGrid(1.0, 8));
    CHECK(el_residual(ens, PotentialSpec::QuadraticKinetic(), std::nullopt) <= 1e-13);
  }
  SUBCASE("unoptimized resting pair sees the full attraction force") {
    Path a{{vec1(0), vec1(0), vec1(0)}, 0.5};
    Path b{{vec1(1), vec1(1), vec1(1)}, 0.5};
    PathEnsemble ens(TimeGrid(1.0, 2), {a, b});
    CHECK(el_residual(ens, PotentialSpec::QuadraticKinetic(), PotentialSpec::QuadraticPosition(50)) ==
          doctest::Approx(50.0).epsilon(1e-9));
  }
}

TEST_CASE("momentum is conserved at minimizers of even interactions") {
  OptimizeReport rep = solve_pair(100, 50.0);
  const double res = el_residual(rep.ensemble, PotentialSpec::QuadraticKinetic(),
                                 PotentialSpec::QuadraticPosition(50));
  std::vector<double> momentum;
  for (int i = 0; i < 100; ++i) {
    DiscreteStatistic f = statistic_at_interval(rep.ensemble, i);
    double p = 0.0;
    for (const Atom& a : f.atoms()) p += a.w * a.z.v(0);  // grad psi = v
    momentum.push_back(p);
  }
  double drift = 0.0;
  for (double p : momentum) drift = std::max(drift, std::abs(p - momentum.front()));
  CHECK(drift <= 10.0 * res * 1.0 + 1e-12);
}

TEST_CASE("optimizer is equivariant under particle relabeling") {
  EndpointCoupling fwd(
      {EndpointPair{vec1(0.0), vec1(0.2), 0.5}, EndpointPair{vec1(1.0), vec1(0.8), 0.5}});
  EndpointCoupling rev(
      {EndpointPair{vec1(1.0), vec1(0.8), 0.5}, EndpointPair{vec1(0.0), vec1(0.2), 0.5}});
  OptimizeReport a = optimize(fwd, TimeGrid(1.0, 32), PotentialSpec::QuadraticKinetic(),
                              PotentialSpec::QuadraticPosition(10));
  OptimizeReport b = optimize(rev, TimeGrid(1.0, 32), PotentialSpec::QuadraticKinetic(),
                              PotentialSpec::QuadraticPosition(10));
  for (int i = 0; i <= 32; ++i) {
    // summation order differs between the two labelings, so allow roundoff
    CHECK(a.ensemble.paths()[0].nodes[static_cast<std::size_t>(i)](0) ==
          doctest::Approx(b.ensemble.paths()[1].nodes[static_cast<std::size_t>(i)](0)).epsilon(1e-10));
    CHECK(a.ensemble.paths()[1].nodes[static_cast<std::size_t>(i)](0) ==
          doctest::Approx(b.ensemble.paths()[0].nodes[static_cast<std::size_t>(i)](0)).epsilon(1e-10));
  }
}

TEST_CASE("convergence experiment degenerate and free cases") {
  SUBCASE("point coupling gives identical minimizers at every size") {
    EndpointSampler sampler = [](RandomStream&) {
      return EndpointPair{vec1(0.0), vec1(0.0), 1.0};
    };
    ConvergenceTable table =
        convergence_experiment(sampler, {2, 4, 8}, TimeGrid(1.0, 8),
                               PotentialSpec::QuadraticKinetic(), std::nullopt, 7);
    REQUIRE(table.rows.size() == 2);
    for (const ConvergenceRow& row : table.rows) CHECK(row.distance_sq_integral <= 1e-20);
  }
  SUBCASE("free particles converge at the endpoint-sampling rate") {
    EndpointSampler sampler = [](RandomStream& rs) {
      const double x0 = rs.normal();
      return EndpointPair{vec1(x0), vec1(x0 + 1.0 + 0.1 * rs.normal()), 1.0};
    };
    ConvergenceTable table =
        convergence_experiment(sampler, {4, 16, 64}, TimeGrid(1.0, 8),
                               PotentialSpec::QuadraticKinetic(), std::nullopt, 11);
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[1].distance_sq_integral < table.rows[0].distance_sq_integral);
  }
}
