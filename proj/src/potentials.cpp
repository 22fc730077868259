#include "mfa/potentials.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mfa/rng.hpp"
#include "mfa/wasserstein.hpp"

namespace mfa {
namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Right-limit sign: +1 for t >= 0, -1 for t < 0. Piecewise-linear kinds use
// this so their reported derivative at a kink is the right-limit choice.
double sign_rl(double t) { return t >= 0.0 ? 1.0 : -1.0; }

double ipow(double y, int e) {
  double r = 1.0;
  for (int k = 0; k < e; ++k) r *= y;
  return r;
}

// Distance from v to the nearest of the given centers; ties pick the larger
// center so the resulting derivative is the right-limit one.
double nearest_center(double v, const std::vector<double>& centers) {
  double best = centers[0];
  for (double c : centers) {
    const double dc = std::abs(v - c), db = std::abs(v - best);
    if (dc < db || (dc == db && c > best)) best = c;
  }
  return best;
}

double quartic_well(double s) {  // 1/4 (s^2 - 1)^2 of |v|
  const double t = s * s - 1.0;
  return 0.25 * t * t;
}

struct JointIndex {
  int dim = 0;
  int exponent(const std::vector<int>& px, const std::vector<int>& pv, int i) const {
    if (i < dim) return i < int(px.size()) ? px[std::size_t(i)] : 0;
    const int j = i - dim;
    return j < int(pv.size()) ? pv[std::size_t(j)] : 0;
  }
};

}  // namespace

double PotentialSpec::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("missing potential parameter: " + name);
  return it->second;
}

PotentialSpec PotentialSpec::QuadraticKinetic() {
  PotentialSpec s;
  s.kind = PotentialKind::quadratic_kinetic;
  return s;
}

PotentialSpec PotentialSpec::QuadraticPosition(double kappa) {
  PotentialSpec s;
  s.kind = PotentialKind::quadratic_position;
  s.params["kappa"] = kappa;
  return s;
}

PotentialSpec PotentialSpec::GaussianCongestion() {
  PotentialSpec s;
  s.kind = PotentialKind::gaussian_congestion;
  return s;
}

PotentialSpec PotentialSpec::Flocking(double kappa, double c) {
  PotentialSpec s;
  s.kind = PotentialKind::flocking;
  s.params["kappa"] = kappa;
  s.params["c"] = c;
  return s;
}

PotentialSpec PotentialSpec::TwoWell() {
  PotentialSpec s;
  s.kind = PotentialKind::two_well;
  return s;
}

PotentialSpec PotentialSpec::TwoWellInteraction(double alpha) {
  PotentialSpec s;
  s.kind = PotentialKind::two_well_interaction;
  s.params["alpha"] = alpha;
  return s;
}

PotentialSpec PotentialSpec::VariancePenalty() {
  PotentialSpec s;
  s.kind = PotentialKind::variance_penalty;
  return s;
}

PotentialSpec PotentialSpec::Custom(std::vector<CustomTerm> terms) {
  for (const CustomTerm& t : terms) {
    require(t.gauss_x >= 0.0 && t.gauss_v >= 0.0, "custom Gaussian coefficients must be >= 0");
    for (int e : t.px) require(e >= 0, "custom exponents must be >= 0");
    for (int e : t.pv) require(e >= 0, "custom exponents must be >= 0");
  }
  PotentialSpec s;
  s.kind = PotentialKind::custom;
  s.terms = std::move(terms);
  return s;
}

namespace {

void check_point(const PotentialSpec& spec, const Vec& x, const Vec& v) {
  require(x.size() == v.size() && x.size() > 0, "x and v must share a positive dimension");
  switch (spec.kind) {
    case PotentialKind::two_well:
    case PotentialKind::two_well_interaction:
      require(x.size() == 1, "two-well kinds are one-dimensional");
      break;
    default:
      break;
  }
}

// Value / joint gradient / joint Hessian of one custom term at y = (x, v).
// With M = prod_i y_i^{e_i} and E = exp(-sum_i g_i y_i^2):
//   d_i (M E)    = E (M_i - 2 g_i y_i M)
//   d_ij (M E)   = E (M_ij - 2 g_j y_j M_i - 2 g_i y_i M_j
//                      + (4 g_i g_j y_i y_j - 2 g_i delta_ij) M)
struct TermDerivs {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

TermDerivs custom_term_derivs(const CustomTerm& term, const Vec& x, const Vec& v, int order) {
  const int d = int(x.size());
  const int n = 2 * d;
  JointIndex ji{d};
  Eigen::VectorXd y(n), g(n);
  std::vector<int> e(static_cast<std::size_t>(n));
  for (int i = 0; i < d; ++i) {
    y[i] = x[i];
    y[d + i] = v[i];
    g[i] = term.gauss_x;
    g[d + i] = term.gauss_v;
  }
  for (int i = 0; i < n; ++i) e[std::size_t(i)] = ji.exponent(term.px, term.pv, i);

  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[std::size_t(i)] = ipow(y[i], e[std::size_t(i)]);
  auto prod_except = [&](int a, int b) {
    double p = 1.0;
    for (int i = 0; i < n; ++i)
      if (i != a && i != b) p *= t[std::size_t(i)];
    return p;
  };
  double M = 1.0;
  for (int i = 0; i < n; ++i) M *= t[std::size_t(i)];
  double q = 0.0;
  for (int i = 0; i < n; ++i) q += g[i] * y[i] * y[i];
  const double E = std::exp(-q);
  const double c = term.coef;

  TermDerivs out;
  out.value = c * M * E;
  if (order < 1) return out;

  Eigen::VectorXd Mi(n);
  for (int i = 0; i < n; ++i)
    Mi[i] = e[std::size_t(i)] == 0
                ? 0.0
                : double(e[std::size_t(i)]) * ipow(y[i], e[std::size_t(i)] - 1) * prod_except(i, i);
  out.grad = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) out.grad[i] = c * E * (Mi[i] - 2.0 * g[i] * y[i] * M);
  if (order < 2) return out;

  out.hess = Eigen::MatrixXd(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double Mij;
      if (i == j) {
        Mij = e[std::size_t(i)] < 2 ? 0.0
                                    : double(e[std::size_t(i)]) * double(e[std::size_t(i)] - 1) *
                                          ipow(y[i], e[std::size_t(i)] - 2) * prod_except(i, i);
      } else {
        Mij = (e[std::size_t(i)] == 0 || e[std::size_t(j)] == 0)
                  ? 0.0
                  : double(e[std::size_t(i)]) * double(e[std::size_t(j)]) *
                        ipow(y[i], e[std::size_t(i)] - 1) * ipow(y[j], e[std::size_t(j)] - 1) *
                        prod_except(i, j);
      }
      const double delta = (i == j) ? 1.0 : 0.0;
      const double val =
          c * E *
          (Mij - 2.0 * g[j] * y[j] * Mi[i] - 2.0 * g[i] * y[i] * Mi[j] +
           (4.0 * g[i] * g[j] * y[i] * y[j] - 2.0 * g[i] * delta) * M);
      out.hess(i, j) = val;
      out.hess(j, i) = val;
    }
  }
  return out;
}

}  // namespace

double eval(const PotentialSpec& spec, const Vec& x, const Vec& v) {
  check_point(spec, x, v);
  switch (spec.kind) {
    case PotentialKind::quadratic_kinetic:
      return 0.5 * v.squaredNorm();
    case PotentialKind::quadratic_position:
      return spec.param("kappa") * x.squaredNorm();
    case PotentialKind::gaussian_congestion:
      return std::exp(-x.squaredNorm());
    case PotentialKind::flocking:
      return spec.param("kappa") * (v.squaredNorm() - spec.param("c")) *
             std::exp(-x.squaredNorm());
    case PotentialKind::two_well:
      return std::abs(v[0] - nearest_center(v[0], {-1.0, 1.0}));
    case PotentialKind::two_well_interaction:
      return spec.param("alpha") * std::abs(v[0] - nearest_center(v[0], {-4.0, 0.0, 4.0}));
    case PotentialKind::variance_penalty:
      // Single-sample integrand phi(|v|) + |v|^2; the mean-velocity square is
      // a statistic-level term owned by callers holding the statistic.
      return quartic_well(v.norm()) + v.squaredNorm();
    case PotentialKind::custom: {
      double s = 0.0;
      for (const CustomTerm& t : spec.terms) s += custom_term_derivs(t, x, v, 0).value;
      return s;
    }
  }
  throw std::invalid_argument("unknown potential kind");
}

PotentialGradient grad(const PotentialSpec& spec, const Vec& x, const Vec& v) {
  check_point(spec, x, v);
  const int d = int(x.size());
  PotentialGradient g{Vec::Zero(d), Vec::Zero(d)};
  switch (spec.kind) {
    case PotentialKind::quadratic_kinetic:
      g.v = v;
      return g;
    case PotentialKind::quadratic_position:
      g.x = 2.0 * spec.param("kappa") * x;
      return g;
    case PotentialKind::gaussian_congestion:
      g.x = -2.0 * std::exp(-x.squaredNorm()) * x;
      return g;
    case PotentialKind::flocking: {
      const double kappa = spec.param("kappa"), c = spec.param("c");
      const double E = std::exp(-x.squaredNorm());
      g.x = -2.0 * kappa * (v.squaredNorm() - c) * E * x;
      g.v = 2.0 * kappa * E * v;
      return g;
    }
    case PotentialKind::two_well:
      g.v[0] = sign_rl(v[0] - nearest_center(v[0], {-1.0, 1.0}));
      return g;
    case PotentialKind::two_well_interaction:
      g.v[0] =
          spec.param("alpha") * sign_rl(v[0] - nearest_center(v[0], {-4.0, 0.0, 4.0}));
      return g;
    case PotentialKind::variance_penalty:
      g.v = (v.squaredNorm() + 1.0) * v;
      return g;
    case PotentialKind::custom: {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(2 * d);
      for (const CustomTerm& t : spec.terms) acc += custom_term_derivs(t, x, v, 1).grad;
      g.x = acc.head(d);
      g.v = acc.tail(d);
      return g;
    }
  }
  throw std::invalid_argument("unknown potential kind");
}

PotentialHessian hess(const PotentialSpec& spec, const Vec& x, const Vec& v) {
  check_point(spec, x, v);
  const int d = int(x.size());
  PotentialHessian h{Eigen::MatrixXd::Zero(d, d), Eigen::MatrixXd::Zero(d, d),
                     Eigen::MatrixXd::Zero(d, d)};
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  switch (spec.kind) {
    case PotentialKind::quadratic_kinetic:
      h.vv = I;
      return h;
    case PotentialKind::quadratic_position:
      h.xx = 2.0 * spec.param("kappa") * I;
      return h;
    case PotentialKind::gaussian_congestion: {
      const double E = std::exp(-x.squaredNorm());
      h.xx = E * (4.0 * x * x.transpose() - 2.0 * I);
      return h;
    }
    case PotentialKind::flocking: {
      const double kappa = spec.param("kappa"), c = spec.param("c");
      const double E = std::exp(-x.squaredNorm());
      h.xx = kappa * (v.squaredNorm() - c) * E * (4.0 * x * x.transpose() - 2.0 * I);
      h.xv = -4.0 * kappa * E * x * v.transpose();
      h.vv = 2.0 * kappa * E * I;
      return h;
    }
    case PotentialKind::two_well:
    case PotentialKind::two_well_interaction:
      return h;  // piecewise linear: curvature zero away from (and at) kinks
    case PotentialKind::variance_penalty:
      h.vv = (v.squaredNorm() + 1.0) * I + 2.0 * v * v.transpose();
      return h;
    case PotentialKind::custom: {
      Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2 * d, 2 * d);
      for (const CustomTerm& t : spec.terms) acc += custom_term_derivs(t, x, v, 2).hess;
      h.xx = acc.topLeftCorner(d, d);
      h.xv = acc.topRightCorner(d, d);
      h.vv = acc.bottomRightCorner(d, d);
      return h;
    }
  }
  throw std::invalid_argument("unknown potential kind");
}

double interaction_symmetry_violation(const PotentialSpec& spec, int dim, int samples,
                                      std::uint64_t seed) {
  require(dim >= 1 && samples >= 1, "dimension and sample count must be positive");
  RandomStream rs(seed, "interaction-symmetry");
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vec x(dim), v(dim);
    for (int i = 0; i < dim; ++i) {
      x[i] = rs.uniform(-2.0, 2.0);
      v[i] = rs.uniform(-2.0, 2.0);
    }
    worst = std::max(worst, std::abs(eval(spec, x, v) - eval(spec, -x, -v)));
  }
  return worst;
}

MeanFieldLagrangian::MeanFieldLagrangian(PotentialSpec psi, std::optional<PotentialSpec> interaction,
                                         DiscreteStatistic f)
    : psi_(std::move(psi)), interaction_(std::move(interaction)), f_(std::move(f)) {
  require(f_.size() > 0, "statistic must be nonempty");
  if (psi_.kind == PotentialKind::variance_penalty)
    require(!interaction_.has_value(), "variance penalty is a standalone functional");
}

double MeanFieldLagrangian::value(const Vec& x, const Vec& v) const {
  if (psi_.kind == PotentialKind::variance_penalty) {
    Vec m = Vec::Zero(v.size());
    for (const Atom& a : f_.atoms()) m += a.w * a.z.v;
    return quartic_well(v.norm()) + v.squaredNorm() - 2.0 * m.dot(v) + m.squaredNorm();
  }
  double s = eval(psi_, x, v);
  if (interaction_) {
    for (const Atom& a : f_.atoms()) s += a.w * eval(*interaction_, x - a.z.x, v - a.z.v);
  }
  return s;
}

PotentialGradient MeanFieldLagrangian::gradient(const Vec& x, const Vec& v) const {
  if (psi_.kind == PotentialKind::variance_penalty) {
    Vec m = Vec::Zero(v.size());
    for (const Atom& a : f_.atoms()) m += a.w * a.z.v;
    PotentialGradient g{Vec::Zero(x.size()), Vec::Zero(v.size())};
    g.v = (v.squaredNorm() + 1.0) * v - 2.0 * m;
    return g;
  }
  PotentialGradient g = grad(psi_, x, v);
  if (interaction_) {
    for (const Atom& a : f_.atoms()) {
      PotentialGradient gu = grad(*interaction_, x - a.z.x, v - a.z.v);
      g.x += a.w * gu.x;
      g.v += a.w * gu.v;
    }
  }
  return g;
}

PotentialHessian MeanFieldLagrangian::hessian(const Vec& x, const Vec& v) const {
  if (psi_.kind == PotentialKind::variance_penalty) return hess(psi_, x, v);
  PotentialHessian h = hess(psi_, x, v);
  if (interaction_) {
    for (const Atom& a : f_.atoms()) {
      PotentialHessian hu = hess(*interaction_, x - a.z.x, v - a.z.v);
      h.xx += a.w * hu.xx;
      h.xv += a.w * hu.xv;
      h.vv += a.w * hu.vv;
    }
  }
  return h;
}

MeanFieldLagrangian mean_field_lagrangian(const PotentialSpec& psi,
                                          const std::optional<PotentialSpec>& interaction,
                                          const DiscreteStatistic& f) {
  return MeanFieldLagrangian(psi, interaction, f);
}

double pairwise_potential(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                          const Vec& x, const Vec& v, const Vec& xp, const Vec& vp) {
  if (psi.kind == PotentialKind::variance_penalty) {
    require(!interaction.has_value(), "variance penalty is a standalone functional");
    return 0.5 * (quartic_well(v.norm()) + v.squaredNorm()) +
           0.5 * (quartic_well(vp.norm()) + vp.squaredNorm()) - v.dot(vp);
  }
  double s = 0.5 * eval(psi, x, v) + 0.5 * eval(psi, xp, vp);
  if (interaction) s += 0.5 * eval(*interaction, x - xp, v - vp);
  return s;
}

// ---- growth / continuity audit ----------------------------------------------

namespace {

double energy_value(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                    const DiscreteStatistic& f) {
  if (psi.kind == PotentialKind::variance_penalty) {
    double s = 0.0;
    Vec m = Vec::Zero(f.atoms()[0].z.v.size());
    for (const Atom& a : f.atoms()) {
      s += a.w * (quartic_well(a.z.v.norm()) + a.z.v.squaredNorm());
      m += a.w * a.z.v;
    }
    return s - m.squaredNorm();
  }
  double s = 0.0;
  for (const Atom& a : f.atoms()) s += a.w * eval(psi, a.z.x, a.z.v);
  if (interaction) {
    double inter = 0.0;
    for (const Atom& a : f.atoms())
      for (const Atom& b : f.atoms())
        inter += a.w * b.w * eval(*interaction, a.z.x - b.z.x, a.z.v - b.z.v);
    s += 0.5 * inter;
  }
  return s;
}

struct ProbeSet {
  std::vector<DiscreteStatistic> stats;
  std::vector<double> phi;
  std::vector<double> m2;
  double max_abs_phi = 0.0;
};

ProbeSet make_probes(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                     const AuditBox& box, double scale, int samples, std::uint64_t seed,
                     const char* stream_name) {
  const int d = box.dim;
  const double rx = box.x_radius * scale, rv = box.v_radius * scale;
  RandomStream rs(seed, stream_name);
  ProbeSet out;

  auto push = [&](std::vector<Atom> atoms) {
    out.stats.emplace_back(std::move(atoms));
  };
  auto axis = [&](double r) {
    Vec e = Vec::Zero(d);
    e[0] = r;
    return e;
  };

  // Deterministic anchors: extremes of the box plus symmetric pairs, which
  // probe cancellation effects a lone atom cannot see.
  push({Atom{{Vec::Zero(d), Vec::Zero(d)}, 1.0}});
  push({Atom{{Vec::Zero(d), axis(rv)}, 1.0}});
  push({Atom{{axis(rx), axis(rv)}, 1.0}});
  push({Atom{{axis(rx), axis(rv)}, 0.5}, Atom{{-axis(rx), -axis(rv)}, 0.5}});
  push({Atom{{Vec::Zero(d), axis(rv)}, 0.5}, Atom{{Vec::Zero(d), -axis(rv)}, 0.5}});
  push({Atom{{Vec::Zero(d), axis(rv)}, 0.5}, Atom{{Vec::Zero(d), Vec::Zero(d)}, 0.5}});

  for (int s = 0; s < samples; ++s) {
    auto point = [&]() {
      Vec x(d), v(d);
      for (int i = 0; i < d; ++i) {
        x[i] = rs.uniform(-rx, rx);
        v[i] = rs.uniform(-rv, rv);
      }
      return PhasePoint{x, v};
    };
    switch (s % 4) {
      case 0:
        push({Atom{point(), 1.0}});
        break;
      case 1: {  // random symmetric pair
        PhasePoint z = point();
        push({Atom{z, 0.5}, Atom{{-z.x, -z.v}, 0.5}});
        break;
      }
      case 2: {
        const double w = rs.uniform(0.05, 0.95);
        push({Atom{point(), w}, Atom{point(), 1.0 - w}});
        break;
      }
      default: {
        const int k = 2 + int(rs.next_below(5));
        std::vector<Atom> atoms;
        std::vector<double> w(static_cast<std::size_t>(k));
        double tot = 0.0;
        for (double& wi : w) {
          wi = 0.05 + rs.next_double();
          tot += wi;
        }
        for (int i = 0; i < k; ++i) atoms.push_back({point(), w[std::size_t(i)] / tot});
        push(std::move(atoms));
        break;
      }
    }
  }

  for (const DiscreteStatistic& f : out.stats) {
    const double p = energy_value(psi, interaction, f);
    out.phi.push_back(p);
    out.m2.push_back(moment(f, 2.0));
    out.max_abs_phi = std::max(out.max_abs_phi, std::abs(p));
  }
  return out;
}

// Minimal offset C making Phi >= c * m2 - C hold on every probe.
double coercivity_offset(const ProbeSet& set, double c) {
  double C = 0.0;
  for (std::size_t i = 0; i < set.stats.size(); ++i)
    C = std::max(C, c * set.m2[i] - set.phi[i]);
  return C;
}

double growth_cap(const ProbeSet& set) {
  double C = 0.0;
  for (std::size_t i = 0; i < set.stats.size(); ++i)
    C = std::max(C, set.phi[i] / (1.0 + set.m2[i]));
  return C;
}

double continuity_cap(const ProbeSet& set) {
  double C = 0.0;
  for (std::size_t i = 0; i + 1 < set.stats.size(); i += 2) {
    const DiscreteStatistic &f = set.stats[i], &g = set.stats[i + 1];
    if (f.dimension() != g.dimension()) continue;
    const double w2 = wp(f, g, 2, TransportMetric::phase);
    if (w2 < 1e-9) continue;
    const double weight = std::sqrt(2.0 + set.m2[i] + set.m2[i + 1]);
    C = std::max(C, std::abs(set.phi[i] - set.phi[i + 1]) / (weight * w2));
  }
  return C;
}

// Joint second derivatives of psi2 in the velocity pair (v, v'), as a
// 2d x 2d matrix, plus the max magnitude over all first/second derivatives.
struct PairPointAudit {
  Eigen::MatrixXd vv_joint;
  double deriv_mag = 0.0;
};

PairPointAudit pair_point_audit(const PotentialSpec& psi,
                                const std::optional<PotentialSpec>& interaction,
                                const PhasePoint& z, const PhasePoint& zp) {
  const int d = int(z.x.size());
  PairPointAudit out;
  out.vv_joint = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  if (psi.kind == PotentialKind::variance_penalty) {
    // psi2 = 1/2 (phi + |v|^2) + 1/2 (phi' + |v'|^2) - v . v'
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    auto block = [&](const Vec& v) -> Eigen::MatrixXd {
      return 0.5 * ((v.squaredNorm() + 1.0) * I + 2.0 * v * v.transpose());
    };
    out.vv_joint.topLeftCorner(d, d) = block(z.v);
    out.vv_joint.bottomRightCorner(d, d) = block(zp.v);
    out.vv_joint.topRightCorner(d, d) = -I;
    out.vv_joint.bottomLeftCorner(d, d) = -I;
    // Gradient per side: 0.5 (|v|^2 - 1) v + v - v'.
    const Vec ga = 0.5 * (z.v.squaredNorm() - 1.0) * z.v + z.v - zp.v;
    const Vec gb = 0.5 * (zp.v.squaredNorm() - 1.0) * zp.v + zp.v - z.v;
    out.deriv_mag = std::max({ga.lpNorm<Eigen::Infinity>(), gb.lpNorm<Eigen::Infinity>(),
                              out.vv_joint.lpNorm<Eigen::Infinity>()});
    return out;
  }

  const PotentialHessian hz = hess(psi, z.x, z.v);
  const PotentialHessian hzp = hess(psi, zp.x, zp.v);
  const PotentialGradient gz = grad(psi, z.x, z.v);
  const PotentialGradient gzp = grad(psi, zp.x, zp.v);
  Eigen::MatrixXd uvv = Eigen::MatrixXd::Zero(d, d);
  double umag = 0.0;
  if (interaction) {
    const Vec dx = z.x - zp.x, dv = z.v - zp.v;
    const PotentialHessian hu = hess(*interaction, dx, dv);
    const PotentialGradient gu = grad(*interaction, dx, dv);
    uvv = hu.vv;
    umag = std::max({gu.x.lpNorm<Eigen::Infinity>(), gu.v.lpNorm<Eigen::Infinity>(),
                     hu.xx.lpNorm<Eigen::Infinity>(), hu.xv.lpNorm<Eigen::Infinity>(),
                     hu.vv.lpNorm<Eigen::Infinity>()});
  }
  out.vv_joint.topLeftCorner(d, d) = 0.5 * hz.vv + 0.5 * uvv;
  out.vv_joint.bottomRightCorner(d, d) = 0.5 * hzp.vv + 0.5 * uvv;
  out.vv_joint.topRightCorner(d, d) = -0.5 * uvv;
  out.vv_joint.bottomLeftCorner(d, d) = -0.5 * uvv;
  out.deriv_mag = std::max({0.5 * gz.x.lpNorm<Eigen::Infinity>(),
                            0.5 * gz.v.lpNorm<Eigen::Infinity>(),
                            0.5 * gzp.x.lpNorm<Eigen::Infinity>(),
                            0.5 * gzp.v.lpNorm<Eigen::Infinity>(),
                            0.5 * hz.vv.lpNorm<Eigen::Infinity>(),
                            0.5 * hz.xx.lpNorm<Eigen::Infinity>(),
                            0.5 * hz.xv.lpNorm<Eigen::Infinity>(), 0.5 * umag});
  return out;
}

struct PairScan {
  double min_eig = std::numeric_limits<double>::infinity();
  double max_deriv = 0.0;
};

PairScan scan_pairs(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                    const AuditBox& box, double scale, int samples, std::uint64_t seed,
                    const char* stream_name) {
  const int d = box.dim;
  const double rx = box.x_radius * scale, rv = box.v_radius * scale;
  RandomStream rs(seed, stream_name);
  PairScan out;
  for (int s = 0; s < samples; ++s) {
    PhasePoint z{Vec(d), Vec(d)}, zp{Vec(d), Vec(d)};
    for (int i = 0; i < d; ++i) {
      z.x[i] = rs.uniform(-rx, rx);
      z.v[i] = rs.uniform(-rv, rv);
      zp.x[i] = rs.uniform(-rx, rx);
      zp.v[i] = rs.uniform(-rv, rv);
    }
    const PairPointAudit pa = pair_point_audit(psi, interaction, z, zp);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pa.vv_joint);
    out.min_eig = std::min(out.min_eig, es.eigenvalues().minCoeff());
    out.max_deriv = std::max(out.max_deriv, pa.deriv_mag);
  }
  return out;
}

std::string describe_worst_lower(const ProbeSet& set, double c) {
  std::size_t worst = 0;
  double v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.stats.size(); ++i) {
    const double viol = c * set.m2[i] - set.phi[i];
    if (viol > v) {
      v = viol;
      worst = i;
    }
  }
  std::ostringstream os;
  os << "coercivity unstable under box doubling: probe with " << set.stats[worst].size()
     << " atoms has value " << set.phi[worst] << " but second moment " << set.m2[worst];
  return os.str();
}

}  // namespace

GrowthAudit audit_growth(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                         const AuditBox& box, int samples, std::uint64_t seed) {
  require(box.dim >= 1 && box.x_radius > 0.0 && box.v_radius > 0.0, "audit box must be nonempty");
  require(samples >= 8, "audit needs at least 8 samples");

  const ProbeSet inner =
      make_probes(psi, interaction, box, 1.0, samples, seed, "audit-inner");
  const ProbeSet outer =
      make_probes(psi, interaction, box, 2.0, samples, seed, "audit-outer");
  const double tol = 1e-9 * std::max(1.0, std::max(inner.max_abs_phi, outer.max_abs_phi));

  GrowthAudit audit;
  audit.samples = int(inner.stats.size() + outer.stats.size());

  // Coercivity slope: largest candidate whose fitted offset survives box
  // doubling. A slope that only "works" because the offset can absorb the
  // whole box is rejected by the stability rule.
  const double candidates[] = {4.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.05, 0.02, 0.01};
  for (double c : candidates) {
    const double Ci = coercivity_offset(inner, c);
    const double Co = coercivity_offset(outer, c);
    if (Co <= 1.8 * Ci + tol) {
      audit.c_lower = c;
      audit.C_lower = std::max(Ci, Co);
      audit.lower_growth_ok = true;
      break;
    }
  }
  if (!audit.lower_growth_ok)
    audit.witness = describe_worst_lower(outer, candidates[std::size(candidates) - 1]);

  const double up_i = growth_cap(inner), up_o = growth_cap(outer);
  audit.C_upper = std::max(up_i, up_o);
  audit.upper_growth_ok = up_o <= 1.8 * up_i + tol;
  if (!audit.upper_growth_ok && audit.witness.empty()) {
    std::ostringstream os;
    os << "growth cap unstable under box doubling: " << up_i << " -> " << up_o;
    audit.witness = os.str();
  }

  const double cont_i = continuity_cap(inner);
  const double cont_o = continuity_cap(outer);
  audit.C_continuity = std::max(cont_i, cont_o);
  audit.continuity_ok = cont_o <= 1.8 * cont_i + tol;
  if (!audit.continuity_ok && audit.witness.empty()) {
    std::ostringstream os;
    os << "transport-continuity constant unstable under box doubling: " << cont_i << " -> "
       << cont_o;
    audit.witness = os.str();
  }

  const PairScan pi = scan_pairs(psi, interaction, box, 1.0, samples, seed, "audit-pairs-inner");
  const PairScan po = scan_pairs(psi, interaction, box, 2.0, samples, seed, "audit-pairs-outer");
  audit.c_convexity = std::min(pi.min_eig, po.min_eig);
  audit.velocity_convexity_ok = audit.c_convexity > 1e-9;
  audit.C_derivatives = std::max(pi.max_deriv, po.max_deriv);
  audit.derivative_bounds_ok = po.max_deriv <= 1.8 * pi.max_deriv + tol;

  audit.pass = audit.lower_growth_ok && audit.upper_growth_ok && audit.continuity_ok;
  if (audit.pass) audit.witness.clear();
  return audit;
}

GrowthAudit audit_growth(const EnergySpec& energy, const AuditBox& box, int samples,
                         std::uint64_t seed) {
  return audit_growth(energy.psi, energy.interaction, box, samples, seed);
}

}  // namespace mfa
