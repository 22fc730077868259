#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "mfa/action.hpp"
#include "mfa/relaxation.hpp"
#include "mfa/rng.hpp"
#include "mfa/wasserstein.hpp"
#include "test_util.hpp"

using namespace mfa;
using namespace mfa::testutil;

namespace {

double twowell_envelope(double v) { return std::max(0.0, std::abs(v) - 1.0); }

EnergySpec two_well_energy() { return EnergySpec{PotentialSpec::TwoWell(), std::nullopt}; }
EnergySpec variance_energy() { return EnergySpec{PotentialSpec::VariancePenalty(), std::nullopt}; }

}  // namespace

TEST_CASE("lower convex envelope on a grid") {
  SUBCASE("convex data is a fixed point") {
    std::vector<double> grid, vals;
    for (int i = 0; i <= 20; ++i) {
      const double u = -2.0 + 0.2 * i;
      grid.push_back(u);
      vals.push_back(u * u);
    }
    std::vector<double> env = convex_envelope_1d(grid, vals);
    for (std::size_t i = 0; i < vals.size(); ++i)
      CHECK(env[i] == doctest::Approx(vals[i]).epsilon(1e-14));
  }
  SUBCASE("two-well flattens between the wells") {
    std::vector<double> grid, vals;
    for (int i = 0; i <= 40; ++i) {
      const double u = -2.0 + 0.1 * i;
      grid.push_back(u);
      vals.push_back(std::min(std::abs(u - 1.0), std::abs(u + 1.0)));
    }
    std::vector<double> env = convex_envelope_1d(grid, vals);
    for (std::size_t i = 0; i < grid.size(); ++i)
      CHECK(env[i] == doctest::Approx(twowell_envelope(grid[i])).epsilon(1e-12));
  }
  SUBCASE("quartic well flattens to zero on [-1, 1]") {
    std::vector<double> grid, vals;
    for (int i = 0; i <= 60; ++i) {
      const double u = -1.5 + 0.05 * i;
      grid.push_back(u);
      const double q = u * u - 1.0;
      vals.push_back(0.25 * q * q);
    }
    std::vector<double> env = convex_envelope_1d(grid, vals);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (std::abs(grid[i]) <= 1.0) CHECK(env[i] <= 1e-12);
      CHECK(env[i] <= vals[i] + 1e-15);
    }
  }
}

TEST_CASE("noninteracting relaxation is the envelope pairing") {
  const VelocityGridSpec grid{3.0, 61};
  CHECK(relax_noninteracting(stat({atom1(0, 0, 1.0)}), PotentialSpec::TwoWell(), grid) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(relax_noninteracting(stat({atom1(0, 2, 1.0)}), PotentialSpec::TwoWell(), grid) ==
        doctest::Approx(1.0).epsilon(1e-10));

  // full minimizer against the envelope oracle on random instances
  RandomStream rs(41, "relax-envelope-oracle");
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 1 + static_cast<int>(rs.next_below(3));
    DiscreteStatistic f = random_stat(rs, n, 1, 1.0, 2.4);
    RelaxReport rep = relax(f, two_well_energy(), VelocityGridSpec{0.0, 81});
    double oracle = 0.0;
    for (const Atom& a : f.atoms()) oracle += a.w * twowell_envelope(a.z.v(0));
    const double tol = 2.0 * (2.0 * rep.grid_radius / (rep.grid_points - 1));
    CHECK(std::abs(rep.value - oracle) <= tol);
    CHECK(std::abs(rep.optimizer_value - oracle) <= tol);  // iterative route agrees
    CHECK(rep.exact_route);
    REQUIRE(rep.lower_bound.has_value());
    CHECK(*rep.lower_bound == doctest::Approx(rep.value).epsilon(1e-12));
  }
}

TEST_CASE("variance penalty worked values") {
  SUBCASE("resting wells are already relaxed") {
    RelaxReport rep = relax(stat({atom1(0, 1, 1.0)}), variance_energy(), VelocityGridSpec{3.0, 61});
    CHECK(std::abs(rep.value) <= 1e-6);
    RelaxReport rep2 = relax(stat({atom1(0, -1, 1.0)}), variance_energy(), VelocityGridSpec{3.0, 61});
    CHECK(std::abs(rep2.value) <= 1e-6);
  }
  SUBCASE("resting center splits into the wells") {
    RelaxReport rep = relax(stat({atom1(0, 0, 1.0)}), variance_energy(), VelocityGridSpec{3.0, 61});
    CHECK(std::abs(rep.value) <= 1e-6);
    CHECK(rep.mixture.martingale_violation() <= 1e-9);
    // the optimal mixture concentrates on the two wells
    bool found_plus = false, found_minus = false;
    for (std::size_t i = 0; i < rep.mixture.lambda.size(); ++i) {
      if (rep.mixture.lambda[i] < 0.4) continue;
      const KernelRow& row = rep.mixture.kernels[i].rows()[0];
      for (std::size_t j = 0; j < row.points.size(); ++j) {
        if (row.probs[j] < 0.9) continue;
        if (std::abs(row.points[j](0) - 1.0) < 1e-9) found_plus = true;
        if (std::abs(row.points[j](0) + 1.0) < 1e-9) found_minus = true;
      }
    }
    CHECK(found_plus);
    CHECK(found_minus);
  }
  SUBCASE("two-atom mixture pays the full variance") {
    DiscreteStatistic f = stat({atom1(0, 1, 0.5), atom1(0, -1, 0.5)});
    RelaxReport rep = relax(f, variance_energy());
    CHECK(rep.value == doctest::Approx(1.0).epsilon(1e-2));
    CHECK(rep.plain_value == doctest::Approx(1.0));
    CHECK(rep.value <= rep.plain_value + 1e-12);
  }
}

TEST_CASE("relaxation bounds and validation") {
  SUBCASE("never exceeds the plain energy") {
    RandomStream rs(42, "relax-upper");
    for (int trial = 0; trial < 5; ++trial) {
      DiscreteStatistic f = random_stat(rs, 2, 1, 1.0, 2.0);
      RelaxReport rep = relax(f, two_well_energy(), VelocityGridSpec{0.0, 41});
      CHECK(rep.value <= rep.plain_value + 1e-12);
      CHECK(rep.upper_bound == doctest::Approx(rep.value));
      CHECK(rep.martingale_violation <= 1e-8);
    }
  }
  SUBCASE("stays above the fitted coercivity floor") {
    DiscreteStatistic f = stat({atom1(0, 2, 0.3), atom1(0, -0.5, 0.7)});
    GrowthAudit audit = audit_growth(two_well_energy(), AuditBox{1, 1.0, 3.0}, 400);
    REQUIRE(audit.lower_growth_ok);
    RelaxReport rep = relax(f, two_well_energy());
    CHECK(rep.value >= audit.c_lower * moment(f, 2.0) - audit.C_lower - 1e-9);
  }
  SUBCASE("atom velocity outside the grid is rejected") {
    CHECK_THROWS_AS(relax(stat({atom1(0, 10.0, 1.0)}), two_well_energy(), VelocityGridSpec{3.0, 31}),
                    std::invalid_argument);
  }
  SUBCASE("variance penalty cannot carry an interaction") {
    EnergySpec bad{PotentialSpec::VariancePenalty(), PotentialSpec::GaussianCongestion()};
    CHECK_THROWS_AS(relax(stat({atom1(0, 0, 1.0)}), bad), std::invalid_argument);
  }
}

TEST_CASE("relaxation is trivial for velocity-convex energies") {
  EnergySpec convex{PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion()};
  DiscreteStatistic f = stat({atom1(-0.4, 0.6, 0.5), atom1(0.7, -0.8, 0.5)});
  RelaxReport rep = relax(f, convex, VelocityGridSpec{4.0, 41});
  const double plain = phi(PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion(), f);
  CHECK(rep.plain_value == doctest::Approx(plain).epsilon(1e-12));
  CHECK(rep.value == doctest::Approx(plain).epsilon(1e-9));
}

TEST_CASE("relaxed energy is monotone in the convex order") {
  // g spreads f by an explicit martingale split, so relax(g) >= relax(f)
  DiscreteStatistic f = stat({atom1(0, 0.5, 1.0)});
  VelocityKernel split(f, {KernelRow{{vec1(-0.5), vec1(1.5)}, {0.5, 0.5}}});
  DiscreteStatistic g = apply_kernel(f, split);
  RelaxReport rf = relax(f, two_well_energy(), VelocityGridSpec{3.0, 61});
  RelaxReport rg = relax(g, two_well_energy(), VelocityGridSpec{3.0, 61});
  CHECK(rg.value >= rf.value - 1e-9);
  CHECK(rf.value == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(rg.value == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("relaxed energy is transport-continuous") {
  RandomStream rs(43, "relax-continuity");
  GrowthAudit audit = audit_growth(two_well_energy(), AuditBox{1, 1.0, 3.0}, 400);
  REQUIRE(audit.continuity_ok);
  for (int trial = 0; trial < 5; ++trial) {
    DiscreteStatistic f = random_stat(rs, 2, 1, 0.5, 2.0);
    std::vector<Atom> perturbed = f.atoms();
    for (Atom& a : perturbed) a.z.v(0) += rs.uniform(-0.05, 0.05);
    DiscreteStatistic g = stat(perturbed);
    const VelocityGridSpec grid{3.0, 121};
    const double vf = relax(f, two_well_energy(), grid).value;
    const double vg = relax(g, two_well_energy(), grid).value;
    double mass = 0.0;
    for (const Atom& a : f.atoms()) mass += a.w * (1.0 + a.z.v(0) * a.z.v(0));
    for (const Atom& a : g.atoms()) mass += a.w * (1.0 + a.z.v(0) * a.z.v(0));
    const double w2 = wp(f, g, 2);
    CHECK(std::abs(vf - vg) <= audit.C_continuity * std::sqrt(mass) * w2 + 2e-2 * w2 + 1e-9);
  }
}

TEST_CASE("recovery ensembles realize mixture values") {
  // resting base path; the optimal variance mixture splits into the wells
  PathEnsemble base(TimeGrid(1.0, 1), {Path{{vec1(0.0), vec1(0.0)}, 1.0}});
  RelaxReport rep = relax(stat({atom1(0, 0, 1.0)}), variance_energy(), VelocityGridSpec{3.0, 61});
  REQUIRE(std::abs(rep.value) <= 1e-9);

  SUBCASE("identity mixtures reproduce the base line") {
    DiscreteStatistic f0 = statistic_at_interval(base, 0);
    KernelMixture id{{1.0}, {VelocityKernel(f0, {KernelRow{{vec1(0.0)}, {1.0}}})}};
    PathEnsemble rec = recovery_ensemble(base, {id}, 2);
    REQUIRE(rec.paths().size() == 1);
    for (const Vec& node : rec.paths()[0].nodes) CHECK(node(0) == 0.0);
  }
  SUBCASE("well mixture zigzags, pins nodes, and approaches the relaxed value") {
    std::vector<double> gaps;
    std::vector<double> amplitudes;
    for (int k : {1, 2, 4}) {
      PathEnsemble rec = recovery_ensemble(base, {rep.mixture}, k);
      // endpoints of every copy preserved bit-exactly
      double amp = 0.0;
      for (const Path& p : rec.paths()) {
        CHECK(p.nodes.front()(0) == 0.0);
        CHECK(p.nodes.back()(0) == 0.0);
        for (const Vec& node : p.nodes) amp = std::max(amp, std::abs(node(0)));
      }
      amplitudes.push_back(amp);
      gaps.push_back(action(rec, PotentialSpec::VariancePenalty(), std::nullopt).total);
    }
    // the zigzag excursions shrink as the oscillation speeds up
    CHECK(amplitudes[1] < amplitudes[0]);
    CHECK(amplitudes[2] < amplitudes[1]);
    CHECK(gaps[1] < gaps[0]);
    CHECK(gaps[2] < gaps[1]);
    CHECK(gaps[2] < 0.05);
  }
  SUBCASE("mixtures that move the mean are rejected") {
    DiscreteStatistic f0 = statistic_at_interval(base, 0);
    KernelMixture shifted{{1.0}, {VelocityKernel(f0, {KernelRow{{vec1(1.0)}, {1.0}}})}};
    CHECK_THROWS_AS(recovery_ensemble(base, {shifted}, 1), std::invalid_argument);
  }
}

TEST_CASE("convex order decisions with witnesses") {
  DiscreteStatistic f = stat({atom1(0, 1, 0.5), atom1(0, -1, 0.5)});
  DiscreteStatistic g = stat({atom1(0, 0, 1.0)});

  SUBCASE("every statistic dominates itself") {
    ConvexOrderResult r = convex_order_check(f, f);
    CHECK(r.ordered);
    REQUIRE(r.witness.has_value());
    CHECK(is_martingale(*r.witness, 1e-9));
  }
  SUBCASE("kernel pushforwards dominate their source") {
    DiscreteStatistic src = stat({atom1(0, 0.5, 1.0)});
    VelocityKernel split(src, {KernelRow{{vec1(-0.5), vec1(1.5)}, {0.5, 0.5}}});
    DiscreteStatistic dst = apply_kernel(src, split);
    ConvexOrderResult r = convex_order_check(src, dst);
    CHECK(r.ordered);
    REQUIRE(r.witness.has_value());
    CHECK(is_martingale(*r.witness, 1e-9));
    // the witness actually transports src to dst
    DiscreteStatistic pushed = apply_kernel(src, *r.witness);
    CHECK(wp(pushed, dst, 2) <= 1e-9);
  }
  SUBCASE("spread does not precede concentration") {
    ConvexOrderResult r = convex_order_check(f, g);
    CHECK_FALSE(r.ordered);
    CHECK_FALSE(r.certificate.empty());
  }
  SUBCASE("concentration precedes spread") {
    ConvexOrderResult r = convex_order_check(g, f);
    CHECK(r.ordered);
    REQUIRE(r.witness.has_value());
    CHECK(is_martingale(*r.witness, 1e-9));
  }
  SUBCASE("different position marginals are rejected") {
    DiscreteStatistic other = stat({atom1(5, 0, 1.0)});
    CHECK_THROWS_AS(convex_order_check(f, other), std::invalid_argument);
  }
}
