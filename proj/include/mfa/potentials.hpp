#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfa/core.hpp"

namespace mfa {

enum class PotentialKind {
  quadratic_kinetic,     // psi(x,v) = 1/2 |v|^2
  quadratic_position,    // U(x,v)   = kappa |x|^2
  gaussian_congestion,   // U(x,v)   = exp(-|x|^2)
  flocking,              // U(x,v)   = kappa (|v|^2 - c) exp(-|x|^2)
  two_well,              // psi(x,v) = dist(v, {-1, +1}),    d = 1
  two_well_interaction,  // U(x,v)   = alpha dist(v, {0,-4,+4}), d = 1
  variance_penalty,      // whole functional: <f, phi + v^2> - <f, v>^2, phi = 1/4 (v^2-1)^2, d = 1
  custom,                // sum of terms coef * x^a v^b exp(-(ax|x|^2 + av|v|^2))
};

// One term of the custom polynomial-Gaussian grammar. Exponents may be
// shorter than the query dimension (missing entries are zero); Gaussian
// coefficients must be >= 0 so the quadratic form stays PSD.
struct CustomTerm {
  double coef = 0.0;
  std::vector<int> px;
  std::vector<int> pv;
  double gauss_x = 0.0;
  double gauss_v = 0.0;
};

struct PotentialSpec {
  PotentialKind kind = PotentialKind::quadratic_kinetic;
  std::map<std::string, double> params;
  std::vector<CustomTerm> terms;  // custom kind only

  double param(const std::string& name) const;

  static PotentialSpec QuadraticKinetic();
  static PotentialSpec QuadraticPosition(double kappa);
  static PotentialSpec GaussianCongestion();
  static PotentialSpec Flocking(double kappa, double c);
  static PotentialSpec TwoWell();
  static PotentialSpec TwoWellInteraction(double alpha);
  static PotentialSpec VariancePenalty();
  static PotentialSpec Custom(std::vector<CustomTerm> terms);
};

// A full energy specification: single-particle part plus optional pairwise
// interaction. The variance_penalty kind stands alone (no interaction slot).
struct EnergySpec {
  PotentialSpec psi;
  std::optional<PotentialSpec> interaction;

  bool has_interaction() const { return interaction.has_value(); }
  bool is_variance_penalty() const { return psi.kind == PotentialKind::variance_penalty; }
};

struct PotentialGradient {
  Vec x;
  Vec v;
};

struct PotentialHessian {
  Eigen::MatrixXd xx;  // d^2 / dx_a dx_b
  Eigen::MatrixXd xv;  // d^2 / dx_a dv_b
  Eigen::MatrixXd vv;  // d^2 / dv_a dv_b
};

// Closed-form value/gradient/Hessian; no finite differencing. Piecewise-linear
// kinds return the right-limit derivative choice at kink points.
double eval(const PotentialSpec& spec, const Vec& x, const Vec& v);
PotentialGradient grad(const PotentialSpec& spec, const Vec& x, const Vec& v);
PotentialHessian hess(const PotentialSpec& spec, const Vec& x, const Vec& v);

// Max sampled violation of the pairwise symmetry U(x,v) = U(-x,-v).
double interaction_symmetry_violation(const PotentialSpec& spec, int dim, int samples,
                                      std::uint64_t seed = 0);

// L[f](x,v) = psi(x,v) + sum_k w_k U(x - x_k, v - v_k); derivatives by
// linearity, each query O(atoms).
class MeanFieldLagrangian {
 public:
  MeanFieldLagrangian(PotentialSpec psi, std::optional<PotentialSpec> interaction,
                      DiscreteStatistic f);

  double value(const Vec& x, const Vec& v) const;
  PotentialGradient gradient(const Vec& x, const Vec& v) const;
  PotentialHessian hessian(const Vec& x, const Vec& v) const;
  const DiscreteStatistic& statistic() const { return f_; }

 private:
  PotentialSpec psi_;
  std::optional<PotentialSpec> interaction_;
  DiscreteStatistic f_;
};

MeanFieldLagrangian mean_field_lagrangian(const PotentialSpec& psi,
                                          const std::optional<PotentialSpec>& interaction,
                                          const DiscreteStatistic& f);

// psi2(x,v,x',v') = 1/2 psi(x,v) + 1/2 psi(x',v') + 1/2 U(x-x', v-v').
double pairwise_potential(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                          const Vec& x, const Vec& v, const Vec& xp, const Vec& vp);

// ---- growth / continuity audit ----------------------------------------------

struct AuditBox {
  int dim = 1;
  double x_radius = 1.0;
  double v_radius = 1.0;
};

// Desk-scale audit of the growth/continuity assumptions at moment order p = 2:
// constants are fitted on sampled statistics at two box scales and declared
// stable when the outer-scale fit does not blow up relative to the inner one.
// Nothing here is a proof; failures carry a witness.
struct GrowthAudit {
  int samples = 0;
  double c_lower = 0.0;   // coercivity slope: Phi(f) >= c <f,|v|^2> - C
  double C_lower = 0.0;
  double C_upper = 0.0;   // growth cap: Phi(f) <= C <f, 1 + |v|^2>
  double C_continuity = 0.0;  // |Phi(f)-Phi(g)| <= C <f+g,1+|v|^2>^(1/2) W_2(f,g)
  double c_convexity = 0.0;   // min eigenvalue of the (v,v') Hessian of psi2
  double C_derivatives = 0.0; // cap on sampled psi2 derivative magnitudes
  bool lower_growth_ok = false;
  bool upper_growth_ok = false;
  bool continuity_ok = false;
  bool velocity_convexity_ok = false;
  bool derivative_bounds_ok = false;
  bool pass = false;  // lower && upper && continuity
  std::string witness;
};

GrowthAudit audit_growth(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                         const AuditBox& box, int samples, std::uint64_t seed = 0);

GrowthAudit audit_growth(const EnergySpec& energy, const AuditBox& box, int samples,
                         std::uint64_t seed = 0);

}  // namespace mfa
