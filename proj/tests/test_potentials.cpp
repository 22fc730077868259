#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>

#include "mfa/potentials.hpp"
#include "mfa/rng.hpp"
#include "test_util.hpp"

using namespace mfa;
using namespace mfa::testutil;

namespace {

// central finite differences of eval, for cross-checking analytic gradients
PotentialGradient fd_grad(const PotentialSpec& spec, const Vec& x, const Vec& v, double h) {
  const int d = static_cast<int>(x.size());
  PotentialGradient g{Vec::Zero(d), Vec::Zero(d)};
  for (int c = 0; c < d; ++c) {
    Vec xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    g.x(c) = (eval(spec, xp, v) - eval(spec, xm, v)) / (2 * h);
    Vec vp = v, vm = v;
    vp(c) += h;
    vm(c) -= h;
    g.v(c) = (eval(spec, x, vp) - eval(spec, x, vm)) / (2 * h);
  }
  return g;
}

double max_rel_err(const Vec& got, const Vec& want) {
  double worst = 0.0;
  for (int c = 0; c < got.size(); ++c) {
    const double scale = std::max(1.0, std::abs(want(c)));
    worst = std::max(worst, std::abs(got(c) - want(c)) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("closed-form values of the catalog kinds") {
  CHECK(eval(PotentialSpec::QuadraticKinetic(), vec1(0), vec1(2)) == doctest::Approx(2.0));
  CHECK(eval(PotentialSpec::QuadraticPosition(50), vec2(1, 0), vec2(0, 0)) ==
        doctest::Approx(50.0));
  CHECK(eval(PotentialSpec::GaussianCongestion(), vec1(0), vec1(5)) == doctest::Approx(1.0));
  CHECK(eval(PotentialSpec::GaussianCongestion(), vec1(1), vec1(0)) ==
        doctest::Approx(std::exp(-1.0)));
  CHECK(eval(PotentialSpec::Flocking(50, 10), vec2(0, 0), vec2(1, 1)) ==
        doctest::Approx(50.0 * (2.0 - 10.0)));
  CHECK(eval(PotentialSpec::TwoWell(), vec1(0), vec1(0.5)) == doctest::Approx(0.5));
  CHECK(eval(PotentialSpec::TwoWell(), vec1(0), vec1(-2.0)) == doctest::Approx(1.0));
  CHECK(eval(PotentialSpec::TwoWellInteraction(2), vec1(0), vec1(3.0)) == doctest::Approx(2.0));
  CHECK(eval(PotentialSpec::TwoWellInteraction(2), vec1(0), vec1(4.0)) == doctest::Approx(0.0));
  // variance integrand phi(v) + v^2 with phi = quartic well
  CHECK(eval(PotentialSpec::VariancePenalty(), vec1(0), vec1(1.0)) == doctest::Approx(1.0));
  CHECK(eval(PotentialSpec::VariancePenalty(), vec1(0), vec1(0.0)) == doctest::Approx(0.25));
}

TEST_CASE("gradients of the quadratic kinds are exact") {
  PotentialGradient g = grad(PotentialSpec::QuadraticKinetic(), vec1(0), vec1(2));
  CHECK(g.v(0) == doctest::Approx(2.0));
  CHECK(g.x(0) == doctest::Approx(0.0));
  PotentialHessian h = hess(PotentialSpec::QuadraticKinetic(), vec1(0), vec1(2));
  CHECK(h.vv(0, 0) == doctest::Approx(1.0));

  PotentialGradient gq = grad(PotentialSpec::QuadraticPosition(50), vec2(1, 0), vec2(0, 0));
  CHECK(gq.x(0) == doctest::Approx(100.0));
  CHECK(gq.x(1) == doctest::Approx(0.0));
}

TEST_CASE("analytic derivatives match finite differences on smooth kinds") {
  std::vector<PotentialSpec> specs = {
      PotentialSpec::QuadraticKinetic(), PotentialSpec::QuadraticPosition(7.5),
      PotentialSpec::GaussianCongestion(), PotentialSpec::Flocking(3.0, 2.0),
      PotentialSpec::Custom({CustomTerm{0.7, {1}, {2}, 0.3, 0.1}, CustomTerm{-0.4, {2}, {1}, 0.0, 0.2}})};
  RandomStream rs(5, "potentials-fd");
  for (const PotentialSpec& spec : specs) {
    for (int d = 1; d <= 2; ++d) {
      for (int trial = 0; trial < 5; ++trial) {
        Vec x(d), v(d);
        for (int c = 0; c < d; ++c) {
          x(c) = rs.uniform(-1.5, 1.5);
          v(c) = rs.uniform(-1.5, 1.5);
        }
        const PotentialGradient got = grad(spec, x, v);
        const PotentialGradient want = fd_grad(spec, x, v, 1e-5);
        CHECK(max_rel_err(got.x, want.x) < 1e-6);
        CHECK(max_rel_err(got.v, want.v) < 1e-6);

        // Hessian columns against finite differences of the analytic gradient
        const PotentialHessian H = hess(spec, x, v);
        for (int c = 0; c < d; ++c) {
          Vec xp = x, xm = x;
          xp(c) += 1e-5;
          xm(c) -= 1e-5;
          const Vec dxx = (grad(spec, xp, v).x - grad(spec, xm, v).x) / 2e-5;
          const Vec dxv = (grad(spec, xp, v).v - grad(spec, xm, v).v) / 2e-5;
          CHECK(max_rel_err(H.xx.col(c), dxx) < 1e-5);
          CHECK(max_rel_err(H.xv.row(c).transpose(), dxv) < 1e-5);
          Vec vp = v, vm = v;
          vp(c) += 1e-5;
          vm(c) -= 1e-5;
          const Vec dvv = (grad(spec, x, vp).v - grad(spec, x, vm).v) / 2e-5;
          CHECK(max_rel_err(H.vv.col(c), dvv) < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("interaction kinds are symmetric under (x,v) -> (-x,-v)") {
  CHECK(interaction_symmetry_violation(PotentialSpec::QuadraticPosition(50), 2, 500) == 0.0);
  CHECK(interaction_symmetry_violation(PotentialSpec::GaussianCongestion(), 2, 500) == 0.0);
  CHECK(interaction_symmetry_violation(PotentialSpec::Flocking(50, 10), 2, 500) == 0.0);
  CHECK(interaction_symmetry_violation(PotentialSpec::TwoWellInteraction(2), 1, 500) <= 1e-12);
}

TEST_CASE("mean-field Lagrangian is the convolution against the statistic") {
  SUBCASE("single atom gives the plain sum") {
    DiscreteStatistic f = stat({atom1(0, 0, 1.0)});
    MeanFieldLagrangian L = mean_field_lagrangian(
        PotentialSpec::QuadraticKinetic(), PotentialSpec::QuadraticPosition(50), f);
    CHECK(L.value(vec1(0.3), vec1(2.0)) == doctest::Approx(0.5 * 4.0 + 50 * 0.09));
    CHECK(L.gradient(vec1(0.3), vec1(2.0)).x(0) == doctest::Approx(100 * 0.3));
    CHECK(L.gradient(vec1(0.3), vec1(2.0)).v(0) == doctest::Approx(2.0));
  }
  SUBCASE("two atoms split the quadratic attraction") {
    DiscreteStatistic f = stat({atom1(0, 0, 0.5), atom1(1, 0, 0.5)});
    MeanFieldLagrangian L = mean_field_lagrangian(
        PotentialSpec::QuadraticKinetic(), PotentialSpec::QuadraticPosition(50), f);
    const double x = 0.7, v = -1.0;
    CHECK(L.value(vec1(x), vec1(v)) ==
          doctest::Approx(0.5 * v * v + 25 * x * x + 25 * (x - 1) * (x - 1)));
  }
  SUBCASE("no interaction leaves psi") {
    DiscreteStatistic f = stat({atom1(3, -2, 1.0)});
    MeanFieldLagrangian L =
        mean_field_lagrangian(PotentialSpec::QuadraticKinetic(), std::nullopt, f);
    CHECK(L.value(vec1(9), vec1(3)) == doctest::Approx(4.5));
  }
  SUBCASE("linear in the statistic") {
    DiscreteStatistic f = stat({atom1(0, 0, 1.0)});
    DiscreteStatistic g = stat({atom1(1, 1, 1.0)});
    DiscreteStatistic mix = stat({atom1(0, 0, 0.25), atom1(1, 1, 0.75)});
    MeanFieldLagrangian Lf =
        mean_field_lagrangian(PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion(), f);
    MeanFieldLagrangian Lg =
        mean_field_lagrangian(PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion(), g);
    MeanFieldLagrangian Lm =
        mean_field_lagrangian(PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion(), mix);
    const Vec x = vec1(0.4), v = vec1(-0.7);
    CHECK(Lm.value(x, v) ==
          doctest::Approx(0.25 * Lf.value(x, v) + 0.75 * Lg.value(x, v)).epsilon(1e-12));
  }
}

TEST_CASE("pairwise potential formula and symmetry") {
  CHECK(pairwise_potential(PotentialSpec::QuadraticKinetic(), std::nullopt, vec1(0), vec1(1),
                           vec1(0), vec1(1)) == doctest::Approx(0.5));
  CHECK(pairwise_potential(PotentialSpec::QuadraticKinetic(), PotentialSpec::QuadraticPosition(50),
                           vec1(1), vec1(0), vec1(0), vec1(0)) == doctest::Approx(25.0));
  RandomStream rs(8, "potentials-psi2");
  for (int trial = 0; trial < 10; ++trial) {
    const Vec x = vec1(rs.uniform(-2, 2)), v = vec1(rs.uniform(-2, 2));
    const Vec xp = vec1(rs.uniform(-2, 2)), vp = vec1(rs.uniform(-2, 2));
    const double ab = pairwise_potential(PotentialSpec::QuadraticKinetic(),
                                         PotentialSpec::GaussianCongestion(), x, v, xp, vp);
    const double ba = pairwise_potential(PotentialSpec::QuadraticKinetic(),
                                         PotentialSpec::GaussianCongestion(), xp, vp, x, v);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
  }
}

TEST_CASE("growth audit separates coercive from non-coercive energies") {
  const AuditBox box{1, 2.0, 2.0};
  const PotentialSpec vsq = PotentialSpec::Custom({CustomTerm{1.0, {}, {2}, 0.0, 0.0}});

  SUBCASE("kinetic plus congestion passes with a convex pair potential") {
    GrowthAudit audit =
        audit_growth(PotentialSpec::QuadraticKinetic(), PotentialSpec::GaussianCongestion(), box, 400);
    CHECK(audit.pass);
    CHECK(audit.lower_growth_ok);
    CHECK(audit.upper_growth_ok);
    CHECK(audit.continuity_ok);
    CHECK(audit.velocity_convexity_ok);
    CHECK(audit.c_lower > 0.0);
  }
  SUBCASE("velocity interaction with alpha = -1 loses coercivity") {
    const PotentialSpec bad = PotentialSpec::Custom({CustomTerm{-1.0, {}, {2}, 0.0, 0.0}});
    GrowthAudit audit = audit_growth(vsq, bad, box, 400);
    CHECK_FALSE(audit.pass);
    CHECK_FALSE(audit.lower_growth_ok);
    CHECK_FALSE(audit.witness.empty());
  }
  SUBCASE("alpha = -0.5 keeps half the coercivity") {
    const PotentialSpec half = PotentialSpec::Custom({CustomTerm{-0.5, {}, {2}, 0.0, 0.0}});
    GrowthAudit audit = audit_growth(vsq, half, box, 400);
    CHECK(audit.pass);
    CHECK(audit.lower_growth_ok);
  }
  SUBCASE("variance penalty keeps coercivity but outgrows the quadratic cap") {
    GrowthAudit audit = audit_growth(PotentialSpec::VariancePenalty(), std::nullopt, box, 400);
    CHECK(audit.lower_growth_ok);
    // the quartic well grows faster than 1 + v^2, so the fitted cap cannot be
    // stable under box doubling; the audit must say so rather than paper over it
    CHECK_FALSE(audit.upper_growth_ok);
    CHECK_FALSE(audit.witness.empty());
  }
}
