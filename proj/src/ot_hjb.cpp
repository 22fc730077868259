#include "mfa/ot_hjb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mfa/action.hpp"

namespace mfa {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

constexpr double kSupportCut = 1e-6;  // cells below this fraction of the peak mass are masked

// ---- velocity-convexity gate ---------------------------------------------------

bool custom_terms_velocity_convex(const std::vector<CustomTerm>& terms) {
  for (const CustomTerm& term : terms) {
    int dv = 0;
    for (int e : term.pv) dv += e;
    if (dv == 0 && term.gauss_v == 0.0) continue;  // velocity-free term
    // pure quadratic velocity term c |v_i|^2 with nonnegative coefficient
    bool quad = dv == 2 && term.coef >= 0.0 && term.gauss_x == 0.0 && term.gauss_v == 0.0;
    for (int e : term.px) quad = quad && e == 0;
    for (int e : term.pv) quad = quad && (e == 0 || e == 2);
    if (!quad) return false;
  }
  return true;
}

bool velocity_convex_kind(const PotentialSpec& spec, bool as_interaction) {
  switch (spec.kind) {
    case PotentialKind::quadratic_kinetic:
      return true;
    case PotentialKind::quadratic_position:
    case PotentialKind::gaussian_congestion:
      return true;  // velocity-free
    case PotentialKind::flocking:
      // kappa (|v|^2 - c) exp(-|x|^2): velocity Hessian 2 kappa exp(-|x|^2) I
      return spec.param("kappa") >= 0.0;
    case PotentialKind::two_well:
    case PotentialKind::two_well_interaction:
    case PotentialKind::variance_penalty:
      return false;
    case PotentialKind::custom:
      return custom_terms_velocity_convex(spec.terms);
  }
  (void)as_interaction;
  return false;
}

void require_velocity_convex(const EnergySpec& energy) {
  const bool ok = velocity_convex_kind(energy.psi, false) &&
                  (!energy.has_interaction() || velocity_convex_kind(*energy.interaction, true));
  if (!ok)
    throw std::invalid_argument(
        "energy is not velocity-convex, so the plain Eulerian value is not exact; "
        "use the relaxation module for such kinds");
}

void require_smooth(const EnergySpec& energy) {
  const auto smooth = [](const PotentialSpec& s) {
    return s.kind != PotentialKind::two_well && s.kind != PotentialKind::two_well_interaction &&
           s.kind != PotentialKind::variance_penalty;
  };
  if (!smooth(energy.psi) || (energy.has_interaction() && !smooth(*energy.interaction)))
    throw std::invalid_argument("potential verification needs smooth energy kinds");
}

// ---- quantile sampling ----------------------------------------------------------

// Inverse CDF of a cell-mass profile at ranks (i + 1/2) / count, mass spread
// uniformly within each cell. Returns sorted positions.
std::vector<double> quantile_positions(const std::vector<double>& masses, double lo, double dx,
                                       int count) {
  const int J = static_cast<int>(masses.size());
  std::vector<double> cdf(static_cast<std::size_t>(J) + 1, 0.0);
  for (int j = 0; j < J; ++j) cdf[static_cast<std::size_t>(j) + 1] = cdf[static_cast<std::size_t>(j)] + masses[static_cast<std::size_t>(j)];
  const double total = cdf.back();
  require(total > 0.0, "marginal has no mass");
  std::vector<double> out(static_cast<std::size_t>(count));
  int j = 0;
  for (int i = 0; i < count; ++i) {
    const double r = total * (i + 0.5) / count;
    while (j + 1 < J && cdf[static_cast<std::size_t>(j) + 1] <= r) ++j;
    const double cell_mass = cdf[static_cast<std::size_t>(j) + 1] - cdf[static_cast<std::size_t>(j)];
    const double frac = cell_mass > 0.0 ? (r - cdf[static_cast<std::size_t>(j)]) / cell_mass : 0.5;
    out[static_cast<std::size_t>(i)] = lo + (j + frac) * dx;
  }
  return out;
}

EndpointCoupling pair_by_assignment(const std::vector<double>& src, const std::vector<double>& dst,
                                    const std::vector<int>& sigma) {
  std::vector<EndpointPair> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    Vec x0(1), xT(1);
    x0(0) = src[i];
    xT(0) = dst[static_cast<std::size_t>(sigma[i])];
    pairs.push_back(EndpointPair{x0, xT, 1.0 / static_cast<double>(src.size())});
  }
  return EndpointCoupling(std::move(pairs));
}

}  // namespace

// ---- field basics ---------------------------------------------------------------

void validate(const EulerianField1D& field) {
  require(field.cells >= 1, "field needs at least one cell");
  require(field.hi > field.lo, "field needs a nonempty space interval");
  require(field.time.intervals >= 1 && field.time.T > 0.0, "field needs a valid time grid");
  const std::size_t nodes = static_cast<std::size_t>(field.time.intervals) + 1;
  require(field.density.size() == nodes && field.velocity.size() == nodes,
          "field needs one density and velocity row per time node");
  for (std::size_t i = 0; i < nodes; ++i) {
    require(field.density[i].size() == static_cast<std::size_t>(field.cells) &&
                field.velocity[i].size() == static_cast<std::size_t>(field.cells),
            "field rows must match the cell count");
    double sum = 0.0;
    for (double m : field.density[i]) {
      require(std::isfinite(m) && m >= -1e-12, "cell masses must be nonnegative");
      sum += m;
    }
    require(std::abs(sum - 1.0) <= 1e-6, "every time slice must carry unit mass");
    for (double v : field.velocity[i]) require(std::isfinite(v), "cell velocities must be finite");
  }
}

double continuity_residual(const EulerianField1D& field) {
  const int J = field.cells;
  const int M = field.time.intervals;
  const double dt = field.time.dt();
  const double dx = field.dx();
  double worst = 0.0;
  for (int i = 0; i < M; ++i) {
    const auto& m0 = field.density[static_cast<std::size_t>(i)];
    const auto& m1 = field.density[static_cast<std::size_t>(i) + 1];
    const auto& v = field.velocity[static_cast<std::size_t>(i)];
    double total = 0.0;
    for (int j = 0; j < J; ++j) {
      const auto flux = [&](int jj) {  // mass flux through the face jj + 1/2
        if (jj < 0 || jj + 1 >= J) return 0.0;
        return 0.5 * (m0[static_cast<std::size_t>(jj)] * v[static_cast<std::size_t>(jj)] +
                      m0[static_cast<std::size_t>(jj) + 1] * v[static_cast<std::size_t>(jj) + 1]) /
               dx;
      };
      total += std::abs((m1[static_cast<std::size_t>(j)] - m0[static_cast<std::size_t>(j)]) / dt +
                        flux(j) - flux(j - 1));
    }
    worst = std::max(worst, total);
  }
  return worst;
}

DiscreteStatistic slice_statistic(const EulerianField1D& field, int node) {
  require(node >= 0 && node <= field.time.intervals, "time node out of range");
  const auto& m = field.density[static_cast<std::size_t>(node)];
  const auto& v = field.velocity[static_cast<std::size_t>(node)];
  double total = 0.0;
  for (double w : m) total += std::max(0.0, w);
  require(total > 0.0, "time slice has no mass");
  std::vector<Atom> atoms;
  for (int j = 0; j < field.cells; ++j)
    if (m[static_cast<std::size_t>(j)] > 0.0) {
      Vec x(1), u(1);
      x(0) = field.center(j);
      u(0) = v[static_cast<std::size_t>(j)];
      atoms.push_back(Atom{PhasePoint{x, u}, m[static_cast<std::size_t>(j)] / total});
    }
  return DiscreteStatistic(std::move(atoms));
}

EulerianField1D collapse_ensemble(const PathEnsemble& ensemble, double lo, double hi, int cells,
                                  Deposit deposit) {
  require(ensemble.dimension() == 1, "Eulerian collapse is one-dimensional");
  require(cells >= 1 && hi > lo, "collapse needs a valid cell grid");
  EulerianField1D field;
  field.lo = lo;
  field.hi = hi;
  field.cells = cells;
  field.time = ensemble.grid();
  const int M = field.time.intervals;
  const double dt = field.time.dt();
  const double dx = field.dx();
  field.density.assign(static_cast<std::size_t>(M) + 1,
                       std::vector<double>(static_cast<std::size_t>(cells), 0.0));
  field.velocity.assign(static_cast<std::size_t>(M) + 1,
                        std::vector<double>(static_cast<std::size_t>(cells), 0.0));
  std::vector<std::vector<double>> momentum = field.velocity;

  for (int i = 0; i <= M; ++i) {
    auto& mass = field.density[static_cast<std::size_t>(i)];
    auto& mom = momentum[static_cast<std::size_t>(i)];
    for (const Path& path : ensemble.paths()) {
      const double x = path.nodes[static_cast<std::size_t>(i)](0);
      const int vi = std::min(i, M - 1);  // last node reuses the final interval velocity
      const double v = (path.nodes[static_cast<std::size_t>(vi) + 1](0) -
                        path.nodes[static_cast<std::size_t>(vi)](0)) /
                       dt;
      const auto put = [&](int j, double w) {
        j = std::clamp(j, 0, cells - 1);
        mass[static_cast<std::size_t>(j)] += w;
        mom[static_cast<std::size_t>(j)] += w * v;
      };
      if (deposit == Deposit::nearest) {
        put(static_cast<int>(std::floor((x - lo) / dx)), path.w);
      } else {
        // linear split between the two nearest cell centers
        const double s = (x - lo) / dx - 0.5;
        const int j0 = static_cast<int>(std::floor(s));
        const double t = s - j0;
        put(j0, path.w * (1.0 - t));
        put(j0 + 1, path.w * t);
      }
    }
    double total = 0.0;
    for (double m : mass) total += m;
    require(total > 0.0, "ensemble carries no weight");
    for (int j = 0; j < cells; ++j) {
      if (mass[static_cast<std::size_t>(j)] > 0.0)
        field.velocity[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            mom[static_cast<std::size_t>(j)] / mass[static_cast<std::size_t>(j)];
      mass[static_cast<std::size_t>(j)] /= total;
    }
  }
  field.continuity_defect = continuity_residual(field);
  return field;
}

// ---- action ---------------------------------------------------------------------

double eulerian_action(const EulerianField1D& field, const EnergySpec& energy) {
  validate(field);
  require_velocity_convex(energy);
  const double dt = field.time.dt();
  double total = 0.0;
  for (int i = 0; i < field.time.intervals; ++i)
    total += dt * phi(energy.psi, energy.interaction, slice_statistic(field, i));
  return total;
}

// ---- free-endpoint transport ------------------------------------------------------

EulerianField1D solve_free_endpoint(const std::vector<double>& mu0, const std::vector<double>& muT,
                                    double lo, double hi, int cells, const TimeGrid& time,
                                    const EnergySpec& energy, const FreeEndpointOptions& options) {
  require(cells >= 1 && hi > lo, "marginals need a valid cell grid");
  require(mu0.size() == static_cast<std::size_t>(cells) && muT.size() == mu0.size(),
          "marginals must live on the same cell grid");
  for (double m : mu0) require(std::isfinite(m) && m >= 0.0, "marginal masses must be nonnegative");
  for (double m : muT) require(std::isfinite(m) && m >= 0.0, "marginal masses must be nonnegative");
  require_velocity_convex(energy);
  const double dx = (hi - lo) / cells;

  const bool particles = energy.has_interaction() || options.force_particles;
  if (!particles) {
    // Monotone quantile coupling: in one dimension, with a convex velocity
    // cost and no interaction, sorted pairing minimizes the action, so no
    // assignment search is needed and the resolution can be generous.
    const int count = std::max(64, options.quantile_atoms_per_cell * cells);
    const std::vector<double> src = quantile_positions(mu0, lo, dx, count);
    const std::vector<double> dst = quantile_positions(muT, lo, dx, count);
    std::vector<int> identity(static_cast<std::size_t>(count));
    std::iota(identity.begin(), identity.end(), 0);
    const EndpointCoupling coupling = pair_by_assignment(src, dst, identity);
    PathEnsemble ens = straight_line_ensemble(coupling, time);
    if (energy.psi.kind != PotentialKind::quadratic_kinetic)
      ens = optimize(coupling, time, energy.psi, energy.interaction, options.optimize).ensemble;
    return collapse_ensemble(ens, lo, hi, cells, options.deposit);
  }

  const int N = options.particles;
  require(N >= 1 && N <= 10, "free-endpoint coupling search supports at most 10 particles");
  const std::vector<double> src = quantile_positions(mu0, lo, dx, N);
  const std::vector<double> dst = quantile_positions(muT, lo, dx, N);
  const bool needs_opt =
      energy.has_interaction() || energy.psi.kind != PotentialKind::quadratic_kinetic;
  const auto assignment_cost = [&](const std::vector<int>& sigma) {
    const EndpointCoupling coupling = pair_by_assignment(src, dst, sigma);
    if (!needs_opt)
      return action(straight_line_ensemble(coupling, time), energy.psi, energy.interaction).total;
    return optimize(coupling, time, energy.psi, energy.interaction, options.optimize).final_action;
  };

  std::vector<int> best(static_cast<std::size_t>(N));
  std::iota(best.begin(), best.end(), 0);
  if (N <= 5) {
    std::vector<int> sigma = best;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      const double cost = assignment_cost(sigma);
      if (cost < best_cost) {
        best_cost = cost;
        best = sigma;
      }
    } while (std::next_permutation(sigma.begin(), sigma.end()));
  } else {
    // monotone start plus steepest pair swaps
    double best_cost = assignment_cost(best);
    for (int round = 0; round < 100; ++round) {
      double round_best = best_cost;
      std::pair<int, int> swap_at{-1, -1};
      for (int a = 0; a < N; ++a)
        for (int b = a + 1; b < N; ++b) {
          std::vector<int> sigma = best;
          std::swap(sigma[static_cast<std::size_t>(a)], sigma[static_cast<std::size_t>(b)]);
          const double cost = assignment_cost(sigma);
          if (cost < round_best - 1e-12) {
            round_best = cost;
            swap_at = {a, b};
          }
        }
      if (swap_at.first < 0) break;
      std::swap(best[static_cast<std::size_t>(swap_at.first)],
                best[static_cast<std::size_t>(swap_at.second)]);
      best_cost = round_best;
    }
  }

  const EndpointCoupling coupling = pair_by_assignment(src, dst, best);
  PathEnsemble ens = straight_line_ensemble(coupling, time);
  if (needs_opt) ens = optimize(coupling, time, energy.psi, energy.interaction, options.optimize).ensemble;
  return collapse_ensemble(ens, lo, hi, cells, Deposit::nearest);
}

// ---- HJB verification ---------------------------------------------------------------

double velocity_legendre(const MeanFieldLagrangian& lagrangian, const Vec& x, double p,
                         double v_start) {
  Vec v(1);
  v(0) = v_start;
  for (int it = 0; it < 60; ++it) {
    const PotentialGradient g = lagrangian.gradient(x, v);
    const double slope = g.v(0) - p;
    if (std::abs(slope) <= 1e-12 * (1.0 + std::abs(p))) break;
    const double curv = lagrangian.hessian(x, v).vv(0, 0);
    if (!(curv > 1e-12))
      throw std::runtime_error("Legendre transform needs a strictly convex velocity section");
    v(0) -= slope / curv;
  }
  return p * v(0) - lagrangian.value(x, v);
}

namespace {

struct Run {
  int begin = 0;  // first cell
  int end = 0;    // one past the last cell
};

std::vector<Run> support_runs(const std::vector<char>& mask) {
  std::vector<Run> runs;
  const int J = static_cast<int>(mask.size());
  int j = 0;
  while (j < J) {
    if (!mask[static_cast<std::size_t>(j)]) {
      ++j;
      continue;
    }
    Run r;
    r.begin = j;
    while (j < J && mask[static_cast<std::size_t>(j)]) ++j;
    r.end = j;
    runs.push_back(r);
  }
  return runs;
}

double lower_median(std::vector<double> v) {
  const std::size_t mid = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

}  // namespace

HJBReport hjb_residual(const EulerianField1D& field, const EnergySpec& energy) {
  validate(field);
  require_smooth(energy);
  const int J = field.cells;
  const int M = field.time.intervals;
  const double dt = field.time.dt();
  const double dx = field.dx();

  HJBReport report;
  report.xi.assign(static_cast<std::size_t>(M) + 1, std::vector<double>(static_cast<std::size_t>(J), 0.0));
  report.residual.assign(static_cast<std::size_t>(M), std::vector<double>(static_cast<std::size_t>(J), 0.0));
  report.c.assign(static_cast<std::size_t>(M), 0.0);
  report.components.assign(static_cast<std::size_t>(M) + 1, 0);

  // per-node support masks, momenta p = dL/dv, and Lagrangian values
  std::vector<std::vector<char>> mask(static_cast<std::size_t>(M) + 1,
                                      std::vector<char>(static_cast<std::size_t>(J), 0));
  std::vector<std::vector<double>> p(static_cast<std::size_t>(M) + 1,
                                     std::vector<double>(static_cast<std::size_t>(J), 0.0));
  std::vector<std::vector<double>> lag = p;  // L(x_j, V_j) on the support
  for (int i = 0; i <= M; ++i) {
    const auto& m = field.density[static_cast<std::size_t>(i)];
    double peak = 0.0;
    for (double w : m) peak = std::max(peak, w);
    const MeanFieldLagrangian L =
        mean_field_lagrangian(energy.psi, energy.interaction, slice_statistic(field, i));
    for (int j = 0; j < J; ++j) {
      if (m[static_cast<std::size_t>(j)] <= kSupportCut * peak) continue;
      mask[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1;
      Vec x(1), v(1);
      x(0) = field.center(j);
      v(0) = field.velocity[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = L.gradient(x, v).v(0);
      lag[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = L.value(x, v);
    }
    const std::vector<Run> runs = support_runs(mask[static_cast<std::size_t>(i)]);
    report.components[static_cast<std::size_t>(i)] = static_cast<int>(runs.size());
    // trapezoid integral of p within each run, zero at the run's left edge
    for (const Run& r : runs) {
      double acc = 0.0;
      report.xi[static_cast<std::size_t>(i)][static_cast<std::size_t>(r.begin)] = 0.0;
      for (int j = r.begin + 1; j < r.end; ++j) {
        acc += 0.5 * dx *
               (p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j) - 1] +
                p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        report.xi[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = acc;
      }
    }
  }

  // residual per time step on the intersection support; the gauge constant
  // is only shared within a connected run, so levels are taken per run
  for (int i = 0; i < M; ++i) {
    std::vector<char> both(static_cast<std::size_t>(J), 0);
    for (int j = 0; j < J; ++j)
      both[static_cast<std::size_t>(j)] = mask[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] &&
                                          mask[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(j)];
    const std::vector<Run> runs = support_runs(both);
    double heaviest = -1.0;
    for (const Run& r : runs) {
      std::vector<double> values;
      values.reserve(static_cast<std::size_t>(r.end - r.begin));
      double run_mass = 0.0;
      for (int j = r.begin; j < r.end; ++j) {
        const double dxi = (report.xi[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(j)] -
                            report.xi[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) /
                           dt;
        // L*(x, p) at the optimizing velocity V: p V - L(x, V)
        const double dual = p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                                field.velocity[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -
                            lag[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        values.push_back(dxi + dual);
        run_mass += field.density[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
      if (values.empty()) continue;
      const double level = lower_median(values);
      if (run_mass > heaviest) {
        heaviest = run_mass;
        report.c[static_cast<std::size_t>(i)] = level;
      }
      for (int j = r.begin; j < r.end; ++j) {
        const double dev = values[static_cast<std::size_t>(j - r.begin)] - level;
        report.residual[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = dev;
        report.max_deviation = std::max(report.max_deviation, std::abs(dev));
      }
    }
  }
  return report;
}

}  // namespace mfa
