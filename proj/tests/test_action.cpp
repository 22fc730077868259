#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "mfa/action.hpp"
#include "mfa/core.hpp"
#include "mfa/rng.hpp"
#include "test_util.hpp"

using namespace mfa;
using namespace mfa::testutil;

namespace {

// recompute the action after displacing one interior node: the oracle for
// the analytic gradient
double action_with_node(PathEnsemble ens, std::size_t path, std::size_t interior, int coord,
                        double delta, const PotentialSpec& psi,
                        const std::optional<PotentialSpec>& inter) {
  std::vector<Path> paths = ens.paths();
  paths[path].nodes[interior + 1](coord) += delta;
  PathEnsemble moved(ens.grid(), std::move(paths));
  return action(moved, psi, inter).total;
}

}  // namespace

TEST_CASE("single-statistic energy") {
  SUBCASE("kinetic energy of one atom") {
    CHECK(phi(PotentialSpec::QuadraticKinetic(), std::nullopt, stat({atom1(0, 3, 1.0)})) ==
          doctest::Approx(4.5));
  }
  SUBCASE("self-pair carries half the zero-lag interaction") {
    // one atom, U(0) = 1 for the congestion kernel: phi = psi + 1/2 U(0)
    CHECK(phi(PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion(),
              stat({atom1(0, 0, 1.0)})) == doctest::Approx(0.5));
  }
  SUBCASE("resting pair at unit distance under quadratic attraction") {
    DiscreteStatistic f = stat({atom1(0, 0, 0.5), atom1(1, 0, 0.5)});
    CHECK(phi(PotentialSpec::QuadraticKinetic(), PotentialSpec::QuadraticPosition(50), f) ==
          doctest::Approx(12.5));
  }
  SUBCASE("variance penalty uses its own formula") {
    CHECK(phi(PotentialSpec::VariancePenalty(), std::nullopt, stat({atom1(0, 1, 1.0)})) ==
          doctest::Approx(0.0));
    CHECK(phi(PotentialSpec::VariancePenalty(), std::nullopt, stat({atom1(0, -1, 1.0)})) ==
          doctest::Approx(0.0));
    CHECK(phi(PotentialSpec::VariancePenalty(), std::nullopt,
              stat({atom1(0, 1, 0.5), atom1(0, -1, 0.5)})) == doctest::Approx(1.0));
  }
}

TEST_CASE("path-space energy sums interval statistics") {
  SUBCASE("unit-speed straight line") {
    for (int m : {1, 7}) {
      Path p{{}, 1.0};
      for (int i = 0; i <= m; ++i) p.nodes.push_back(vec1(static_cast<double>(i) / m));
      PathEnsemble ens(TimeGrid(1.0, m), {p});
      ActionValue a = action(ens, PotentialSpec::QuadraticKinetic(), std::nullopt);
      CHECK(a.total == doctest::Approx(0.5));
      CHECK(a.kinetic == doctest::Approx(0.5));
      CHECK(a.interaction == doctest::Approx(0.0));
      REQUIRE(a.per_interval.size() == static_cast<std::size_t>(m));
    }
  }
  SUBCASE("triangle wave") {
    Path p{{vec1(0), vec1(1), vec1(0)}, 1.0};
    PathEnsemble ens(TimeGrid(1.0, 2), {p});
    CHECK(action(ens, PotentialSpec::QuadraticKinetic(), std::nullopt).total ==
          doctest::Approx(2.0));
  }
  SUBCASE("resting pair accumulates the interaction constant") {
    Path a{{vec1(0), vec1(0), vec1(0)}, 0.5};
    Path b{{vec1(1), vec1(1), vec1(1)}, 0.5};
    PathEnsemble ens(TimeGrid(1.0, 2), {a, b});
    ActionValue val =
        action(ens, PotentialSpec::QuadraticKinetic(), PotentialSpec::QuadraticPosition(50));
    CHECK(val.total == doctest::Approx(12.5));
    CHECK(val.interaction == doctest::Approx(12.5));
  }
  SUBCASE("total equals the per-interval sum") {
    RandomStream rs(3, "action-sum");
    PathEnsemble ens = random_ensemble(rs, 3, 5, 2, 1.5, 2.0);
    ActionValue val =
        action(ens, PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion());
    double total = 0.0;
    for (double t : val.per_interval) total += t;
    CHECK(val.total == doctest::Approx(total).epsilon(1e-10));
    CHECK(val.total == doctest::Approx(val.kinetic + val.interaction).epsilon(1e-10));
  }
}

TEST_CASE("action is invariant under path relabeling") {
  RandomStream rs(4, "action-relabel");
  PathEnsemble ens = random_ensemble(rs, 4, 4, 1, 1.0, 1.0);
  std::vector<Path> reversed(ens.paths().rbegin(), ens.paths().rend());
  PathEnsemble flipped(ens.grid(), reversed);
  const double a = action(ens, PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion()).total;
  const double b = action(flipped, PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion()).total;
  CHECK(a == doctest::Approx(b).epsilon(1e-14));
}

TEST_CASE("straight lines minimize the free kinetic action") {
  RandomStream rs(5, "action-jensen");
  for (int trial = 0; trial < 10; ++trial) {
    PathEnsemble bent = random_ensemble(rs, 3, 6, 2, 1.5, 1.0);
    std::vector<EndpointPair> pairs;
    for (const Path& p : bent.paths())
      pairs.push_back(EndpointPair{p.nodes.front(), p.nodes.back(), p.w});
    PathEnsemble straight = straight_line_ensemble(EndpointCoupling(pairs), bent.grid());
    const double ab = action(bent, PotentialSpec::QuadraticKinetic(), std::nullopt).total;
    const double as = action(straight, PotentialSpec::QuadraticKinetic(), std::nullopt).total;
    CHECK(as <= ab + 1e-12);
  }
}

TEST_CASE("gradient matches central differences") {
  RandomStream rs(6, "action-grad");
  const std::vector<std::optional<PotentialSpec>> interactions = {
      std::nullopt, PotentialSpec::QuadraticPosition(5.0), PotentialSpec::GaussianCongestion(),
      PotentialSpec::Flocking(2.0, 1.0)};
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rs.next_below(5));
    const int d = 1 + static_cast<int>(rs.next_below(2));
    const int m = 3 + static_cast<int>(rs.next_below(3));
    PathEnsemble ens = random_ensemble(rs, n, m, d, 1.2, 1.0);
    const auto& inter = interactions[trial % interactions.size()];

    auto grads = action_gradient(ens, PotentialSpec::QuadraticKinetic(), inter);
    REQUIRE(grads.size() == static_cast<std::size_t>(n));

    double worst = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
      REQUIRE(grads[k].size() == static_cast<std::size_t>(m - 1));
      for (std::size_t j = 0; j < grads[k].size(); ++j) {
        for (int c = 0; c < d; ++c) {
          const double h = 1e-6;
          const double fd =
              (action_with_node(ens, k, j, c, h, PotentialSpec::QuadraticKinetic(), inter) -
               action_with_node(ens, k, j, c, -h, PotentialSpec::QuadraticKinetic(), inter)) /
              (2 * h);
          const double scale = std::max(1.0, std::abs(fd));
          worst = std::max(worst, std::abs(grads[k][j](c) - fd) / scale);
        }
      }
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("straight free path is a discrete geodesic") {
  PathEnsemble ens = straight_line_ensemble(
      EndpointCoupling({EndpointPair{vec1(0), vec1(1), 1.0}}), TimeGrid(1.0, 8));
  auto grads = action_gradient(ens, PotentialSpec::QuadraticKinetic(), std::nullopt);
  for (const auto& path_grads : grads)
    for (const Vec& g : path_grads) CHECK(g.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("interaction forces cancel across paths at every time") {
  // Newton's third law for U = U(x - x'): the interaction part of the node
  // gradient, isolated by subtracting the no-interaction gradient, sums to
  // zero over paths at each fixed interior node index.
  RandomStream rs(7, "action-noether");
  PathEnsemble ens = random_ensemble(rs, 4, 5, 2, 1.0, 1.0);
  auto with_u = action_gradient(ens, PotentialSpec::QuadraticKinetic(),
                                PotentialSpec::QuadraticPosition(13.0));
  auto without_u = action_gradient(ens, PotentialSpec::QuadraticKinetic(), std::nullopt);
  for (std::size_t j = 0; j + 1 < 5; ++j) {
    Vec total = Vec::Zero(2);
    for (std::size_t k = 0; k < with_u.size(); ++k) total += with_u[k][j] - without_u[k][j];
    CHECK(total.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("non-smooth kinds are rejected by the gradient") {
  PathEnsemble ens = straight_line_ensemble(
      EndpointCoupling({EndpointPair{vec1(0), vec1(1), 1.0}}), TimeGrid(1.0, 4));
  CHECK_THROWS_AS(action_gradient(ens, PotentialSpec::TwoWell(), std::nullopt),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      action_gradient(ens, PotentialSpec::QuadraticKinetic(), PotentialSpec::TwoWellInteraction(2)),
      std::invalid_argument);
}
