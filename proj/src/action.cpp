#include "mfa/action.hpp"

#include <cmath>
#include <stdexcept>

namespace mfa {
namespace {

void check_specs(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction) {
  if (psi.kind == PotentialKind::variance_penalty && interaction.has_value())
    throw std::invalid_argument("variance penalty is a standalone functional");
}

bool smooth_kind(const PotentialSpec& spec) {
  return spec.kind != PotentialKind::two_well && spec.kind != PotentialKind::two_well_interaction;
}

struct PhiSplit {
  double single = 0.0;
  double pairwise = 0.0;
};

PhiSplit phi_split(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                   const DiscreteStatistic& f) {
  PhiSplit out;
  if (psi.kind == PotentialKind::variance_penalty) {
    Vec m = Vec::Zero(f.atoms()[0].z.v.size());
    for (const Atom& a : f.atoms()) {
      const double s = a.z.v.squaredNorm() - 1.0;
      out.single += a.w * (0.25 * s * s + a.z.v.squaredNorm());
      m += a.w * a.z.v;
    }
    out.pairwise = -m.squaredNorm();
    return out;
  }
  for (const Atom& a : f.atoms()) out.single += a.w * eval(psi, a.z.x, a.z.v);
  if (interaction) {
    double inter = 0.0;
    for (const Atom& a : f.atoms())
      for (const Atom& b : f.atoms())
        inter += a.w * b.w * eval(*interaction, a.z.x - b.z.x, a.z.v - b.z.v);
    out.pairwise = 0.5 * inter;
  }
  return out;
}

}  // namespace

double phi(const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
           const DiscreteStatistic& f) {
  check_specs(psi, interaction);
  if (f.size() == 0) throw std::invalid_argument("statistic must be nonempty");
  const PhiSplit s = phi_split(psi, interaction, f);
  return s.single + s.pairwise;
}

ActionValue action(const PathEnsemble& ens, const PotentialSpec& psi,
                   const std::optional<PotentialSpec>& interaction) {
  check_specs(psi, interaction);
  if (ens.paths().empty()) throw std::invalid_argument("ensemble must be nonempty");
  const double dt = ens.grid().dt();
  ActionValue out;
  out.per_interval.reserve(std::size_t(ens.grid().intervals));
  for (int i = 0; i < ens.grid().intervals; ++i) {
    const DiscreteStatistic f = statistic_at_interval(ens, i);
    const PhiSplit s = phi_split(psi, interaction, f);
    out.per_interval.push_back(dt * (s.single + s.pairwise));
    out.kinetic += dt * s.single;
    out.interaction += dt * s.pairwise;
    out.total += out.per_interval.back();
  }
  return out;
}

std::vector<std::vector<Vec>> action_gradient(const PathEnsemble& ens, const PotentialSpec& psi,
                                              const std::optional<PotentialSpec>& interaction) {
  check_specs(psi, interaction);
  if (!smooth_kind(psi) || (interaction && !smooth_kind(*interaction)))
    throw std::invalid_argument("gradient requires kinds with classical derivatives");
  if (ens.paths().empty()) throw std::invalid_argument("ensemble must be nonempty");
  const int M = ens.grid().intervals;
  if (M < 1) throw std::invalid_argument("need at least one interval");
  const double dt = ens.grid().dt();
  const int K = int(ens.paths().size());
  const int d = ens.dimension();

  // Per-interval field gradients at each atom; derivative of the discrete
  // energy in an interior node combines the position term of its own interval
  // with the velocity terms of the two adjacent intervals:
  //   dA/dy_m = w * (dt * grad_x L[f_m](z_m)
  //                  - grad_v L[f_m](z_m) + grad_v L[f_{m-1}](z_{m-1})).
  std::vector<std::vector<PotentialGradient>> field(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    const DiscreteStatistic f = statistic_at_interval(ens, m);
    const MeanFieldLagrangian L(psi, interaction, f);
    field[std::size_t(m)].reserve(std::size_t(K));
    for (const Atom& a : f.atoms()) field[std::size_t(m)].push_back(L.gradient(a.z.x, a.z.v));
  }

  std::vector<std::vector<Vec>> out(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const double w = ens.paths()[std::size_t(k)].w;
    out[std::size_t(k)].assign(std::size_t(std::max(0, M - 1)), Vec::Zero(d));
    for (int m = 1; m < M; ++m) {
      const PotentialGradient& here = field[std::size_t(m)][std::size_t(k)];
      const PotentialGradient& prev = field[std::size_t(m - 1)][std::size_t(k)];
      out[std::size_t(k)][std::size_t(m - 1)] = w * (dt * here.x - here.v + prev.v);
    }
  }
  return out;
}

}  // namespace mfa
