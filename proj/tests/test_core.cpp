#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "mfa/core.hpp"
#include "mfa/rng.hpp"
#include "test_util.hpp"

using namespace mfa;
using namespace mfa::testutil;

TEST_CASE("DiscreteStatistic normalizes weights and rejects bad input") {
  DiscreteStatistic f = stat({atom1(0, 0, 0.5 + 1e-9), atom1(1, 0, 0.5)});
  double total = 0.0;
  for (const Atom& a : f.atoms()) total += a.w;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(stat({atom1(0, 0, 0.3), atom1(1, 0, 0.3)}), std::invalid_argument);
  CHECK_THROWS_AS(stat({atom1(0, 0, -0.1), atom1(1, 0, 1.1)}), std::invalid_argument);
  CHECK_THROWS_AS(stat({atom1(0, 0, 0.5), atom2(0, 0, 0, 0, 0.5)}), std::invalid_argument);
}

TEST_CASE("TimeGrid spacing and nodes") {
  TimeGrid g(1.0, 4);
  CHECK(g.dt() == doctest::Approx(0.25));
  CHECK(g.node(0) == 0.0);
  CHECK(g.node(2) == doctest::Approx(0.5));
  CHECK(g.node(4) == doctest::Approx(1.0));
  CHECK_THROWS_AS(TimeGrid(0.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(TimeGrid(1.0, 0), std::invalid_argument);
}

TEST_CASE("statistic_at_interval takes left node and forward-difference velocity") {
  SUBCASE("single unit-speed path") {
    Path p{{vec1(0.0), vec1(1.0)}, 1.0};
    PathEnsemble ens(TimeGrid(1.0, 1), {p});
    DiscreteStatistic f = statistic_at_interval(ens, 0);
    REQUIRE(f.size() == 1);
    CHECK(f.atoms()[0].z.x(0) == 0.0);
    CHECK(f.atoms()[0].z.v(0) == doctest::Approx(1.0));
    CHECK(f.atoms()[0].w == doctest::Approx(1.0));
    CHECK_THROWS_AS(statistic_at_interval(ens, 1), std::out_of_range);
    CHECK_THROWS_AS(statistic_at_interval(ens, -1), std::out_of_range);
  }
  SUBCASE("resting and moving path split the mass") {
    Path rest{{vec1(0.0), vec1(0.0)}, 0.5};
    Path move{{vec1(0.0), vec1(1.0)}, 0.5};
    PathEnsemble ens(TimeGrid(1.0, 1), {rest, move});
    DiscreteStatistic f = statistic_at_interval(ens, 0);
    REQUIRE(f.size() == 2);
    CHECK(f.atoms()[0].z.v(0) == doctest::Approx(0.0));
    CHECK(f.atoms()[1].z.v(0) == doctest::Approx(1.0));
    CHECK(f.atoms()[0].w == doctest::Approx(0.5));
    CHECK(f.atoms()[1].w == doctest::Approx(0.5));
  }
}

TEST_CASE("apply_kernel pushes velocities forward and keeps positions") {
  DiscreteStatistic f = stat({atom1(0, 0, 1.0)});

  SUBCASE("identity kernel is a no-op") {
    VelocityKernel id(f, {KernelRow{{vec1(0.0)}, {1.0}}});
    DiscreteStatistic g = apply_kernel(f, id);
    REQUIRE(g.size() == 1);
    CHECK(g.atoms()[0].z.v(0) == 0.0);
    CHECK(g.atoms()[0].w == doctest::Approx(1.0));
  }
  SUBCASE("symmetric split") {
    VelocityKernel k(f, {KernelRow{{vec1(-1.0), vec1(1.0)}, {0.5, 0.5}}});
    DiscreteStatistic g = apply_kernel(f, k);
    REQUIRE(g.size() == 2);
    CHECK(g.atoms()[0].z.x(0) == 0.0);
    CHECK(g.atoms()[0].z.v(0) == -1.0);
    CHECK(g.atoms()[1].z.v(0) == 1.0);
    CHECK(g.atoms()[0].w == doctest::Approx(0.5));
    CHECK(g.atoms()[1].w == doctest::Approx(0.5));
  }
  SUBCASE("asymmetric martingale split of a moving atom") {
    DiscreteStatistic fm = stat({atom1(0, 1, 1.0)});
    VelocityKernel k(fm, {KernelRow{{vec1(-1.0), vec1(3.0)}, {0.5, 0.5}}});
    DiscreteStatistic g = apply_kernel(fm, k);
    REQUIRE(g.size() == 2);
    CHECK(g.atoms()[0].z.v(0) == -1.0);
    CHECK(g.atoms()[1].z.v(0) == 3.0);
    CHECK(g.atoms()[0].w == doctest::Approx(0.5));
    CHECK(g.atoms()[1].w == doctest::Approx(0.5));
  }
  SUBCASE("row count must match the statistic") {
    DiscreteStatistic two = stat({atom1(0, 0, 0.5), atom1(1, 0, 0.5)});
    CHECK_THROWS_AS(VelocityKernel(two, {KernelRow{{vec1(0.0)}, {1.0}}}), std::invalid_argument);
  }
}

TEST_CASE("is_martingale checks row means against source velocities") {
  DiscreteStatistic f0 = stat({atom1(0, 0, 1.0)});
  VelocityKernel id(f0, {KernelRow{{vec1(0.0)}, {1.0}}});
  CHECK(is_martingale(id, 1e-12));

  VelocityKernel split(f0, {KernelRow{{vec1(-1.0), vec1(1.0)}, {0.5, 0.5}}});
  CHECK(is_martingale(split, 1e-12));

  DiscreteStatistic f1 = stat({atom1(0, 1, 1.0)});
  VelocityKernel shift(f1, {KernelRow{{vec1(0.0)}, {1.0}}});
  CHECK_FALSE(is_martingale(shift, 1e-12));
  CHECK(is_martingale(shift, 1.5));
}

TEST_CASE("moment sums weighted velocity powers") {
  CHECK(moment(stat({atom1(0, 0, 1.0)}), 2.0) == doctest::Approx(0.0));
  CHECK(moment(stat({atom1(0, 1, 0.5), atom1(0, -1, 0.5)}), 2.0) == doctest::Approx(1.0));
  CHECK(moment(stat({atom1(0, 1, 0.5), atom1(0, 3, 0.5)}), 2.0) == doctest::Approx(5.0));
  CHECK(moment(stat({atom1(2, 1, 0.5), atom1(4, 3, 0.5)}), 2.0, true) == doctest::Approx(10.0));
  CHECK(moment(stat({atom1(0, -2, 1.0)}), 1.0) == doctest::Approx(2.0));
}

TEST_CASE("straight_line_ensemble interpolates the coupling") {
  EndpointCoupling coupling({EndpointPair{vec1(0.0), vec1(1.0), 0.25},
                             EndpointPair{vec1(2.0), vec1(0.0), 0.75}});
  PathEnsemble ens = straight_line_ensemble(coupling, TimeGrid(1.0, 4));
  REQUIRE(ens.paths().size() == 2);
  CHECK(ens.paths()[0].nodes[0](0) == 0.0);
  CHECK(ens.paths()[0].nodes[4](0) == 1.0);
  CHECK(ens.paths()[0].nodes[2](0) == doctest::Approx(0.5));
  CHECK(ens.paths()[1].nodes[1](0) == doctest::Approx(1.5));
  CHECK(ens.paths()[0].w == doctest::Approx(0.25));
  CHECK(ens.paths()[1].w == doctest::Approx(0.75));
}

TEST_CASE("kinetic integral agrees between interval statistics and node differences") {
  RandomStream rs(17, "core-kinetic");
  PathEnsemble ens = random_ensemble(rs, 4, 6, 2, 2.0, 1.5);
  const double dt = ens.grid().dt();

  double by_stats = 0.0;
  for (int i = 0; i < ens.grid().intervals; ++i)
    by_stats += dt * moment(statistic_at_interval(ens, i), 2.0);

  double by_nodes = 0.0;
  for (const Path& p : ens.paths())
    for (int i = 0; i < ens.grid().intervals; ++i)
      by_nodes += p.w * dt * ((p.nodes[static_cast<std::size_t>(i) + 1] -
                               p.nodes[static_cast<std::size_t>(i)]) / dt).squaredNorm();

  CHECK(by_stats == doctest::Approx(by_nodes).epsilon(1e-12));
}

TEST_CASE("martingale kernels preserve the mean and never shrink second moments") {
  RandomStream rs(99, "core-kernel-props");
  for (int trial = 0; trial < 20; ++trial) {
    DiscreteStatistic f = random_stat(rs, 3, 1, 1.0, 2.0);
    std::vector<KernelRow> rows;
    for (const Atom& a : f.atoms()) {
      // symmetric two-point split about the atom velocity keeps the mean
      const double h = rs.uniform(0.1, 1.0);
      rows.push_back(KernelRow{{vec1(a.z.v(0) - h), vec1(a.z.v(0) + h)}, {0.5, 0.5}});
    }
    VelocityKernel k(f, rows);
    REQUIRE(is_martingale(k, 1e-12));
    DiscreteStatistic g = apply_kernel(f, k);

    double mean_f = 0.0, mean_g = 0.0, xmass_f = 0.0, xmass_g = 0.0;
    for (const Atom& a : f.atoms()) {
      mean_f += a.w * a.z.v(0);
      xmass_f += a.w * a.z.x(0);
    }
    for (const Atom& a : g.atoms()) {
      mean_g += a.w * a.z.v(0);
      xmass_g += a.w * a.z.x(0);
    }
    CHECK(mean_g == doctest::Approx(mean_f).epsilon(1e-12));
    CHECK(xmass_g == doctest::Approx(xmass_f).epsilon(1e-12));  // x-marginal untouched
    CHECK(moment(g, 2.0) >= moment(f, 2.0) - 1e-12);            // Jensen
  }
}
