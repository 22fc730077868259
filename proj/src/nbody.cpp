#include "mfa/nbody.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "mfa/wasserstein.hpp"

namespace mfa {
namespace {

// Flattened view of the interior nodes: path-major, node-minor, then
// coordinate. Endpoints never enter the vector, so they stay bit-exact.
struct InteriorLayout {
  int paths = 0;
  int interior = 0;  // M - 1
  int dim = 0;
  int size() const { return paths * interior * dim; }
  int offset(int k, int m) const { return (k * interior + (m - 1)) * dim; }
};

Eigen::VectorXd flatten(const PathEnsemble& ens, const InteriorLayout& L) {
  Eigen::VectorXd y(L.size());
  for (int k = 0; k < L.paths; ++k)
    for (int m = 1; m <= L.interior; ++m)
      y.segment(L.offset(k, m), L.dim) = ens.paths()[std::size_t(k)].nodes[std::size_t(m)];
  return y;
}

PathEnsemble unflatten(const Eigen::VectorXd& y, const PathEnsemble& base,
                       const InteriorLayout& L) {
  std::vector<Path> paths = base.paths();
  for (int k = 0; k < L.paths; ++k)
    for (int m = 1; m <= L.interior; ++m)
      paths[std::size_t(k)].nodes[std::size_t(m)] = y.segment(L.offset(k, m), L.dim);
  return PathEnsemble(base.grid(), std::move(paths));
}

Eigen::VectorXd flatten_gradient(const std::vector<std::vector<Vec>>& g, const InteriorLayout& L) {
  Eigen::VectorXd out(L.size());
  for (int k = 0; k < L.paths; ++k)
    for (int m = 1; m <= L.interior; ++m)
      out.segment(L.offset(k, m), L.dim) = g[std::size_t(k)][std::size_t(m - 1)];
  return out;
}

// Inverse of the kinetic-energy Hessian over the interior nodes: per particle
// and coordinate the quadratic-speed term contributes (w_k / dt) *
// tridiag(-1, 2, -1), whose condition number grows like the interval count
// squared. Using its exact inverse as the quasi-Newton seed metric removes
// that stiffness, so the history only has to learn the interaction curvature.
struct KineticMetric {
  InteriorLayout layout;
  double dt = 1.0;
  std::vector<double> weights;  // path masses
  std::vector<double> diag;     // LDL^T pivots of tridiag(-1, 2, -1)

  KineticMetric(const InteriorLayout& L, double dt_, std::vector<double> w)
      : layout(L), dt(dt_), weights(std::move(w)), diag(std::size_t(L.interior)) {
    diag[0] = 2.0;
    for (int i = 1; i < layout.interior; ++i) diag[std::size_t(i)] = 2.0 - 1.0 / diag[std::size_t(i - 1)];
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& g) const {
    const int n = layout.interior;
    Eigen::VectorXd out(g.size());
    Eigen::VectorXd z(n);
    for (int k = 0; k < layout.paths; ++k) {
      const double scale = dt / weights[std::size_t(k)];
      for (int c = 0; c < layout.dim; ++c) {
        z(0) = scale * g(layout.offset(k, 1) + c);
        for (int i = 1; i < n; ++i)
          z(i) = scale * g(layout.offset(k, i + 1) + c) + z(i - 1) / diag[std::size_t(i - 1)];
        double next = z(n - 1) / diag[std::size_t(n - 1)];
        out(layout.offset(k, n) + c) = next;
        for (int i = n - 2; i >= 0; --i) {
          next = (z(i) + next) / diag[std::size_t(i)];
          out(layout.offset(k, i + 1) + c) = next;
        }
      }
    }
    return out;
  }
};

}  // namespace

double el_residual(const PathEnsemble& ens, const PotentialSpec& psi,
                   const std::optional<PotentialSpec>& interaction) {
  const int M = ens.grid().intervals;
  if (M < 2) return 0.0;
  const double dt = ens.grid().dt();
  const int K = int(ens.paths().size());

  std::vector<std::vector<PotentialGradient>> field(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    const DiscreteStatistic f = statistic_at_interval(ens, m);
    const MeanFieldLagrangian L(psi, interaction, f);
    field[std::size_t(m)].reserve(std::size_t(K));
    for (const Atom& a : f.atoms()) field[std::size_t(m)].push_back(L.gradient(a.z.x, a.z.v));
  }
  double worst = 0.0;
  for (int k = 0; k < K; ++k) {
    for (int m = 1; m < M; ++m) {
      const Vec r = (field[std::size_t(m)][std::size_t(k)].v -
                     field[std::size_t(m - 1)][std::size_t(k)].v) /
                        dt -
                    field[std::size_t(m)][std::size_t(k)].x;
      worst = std::max(worst, r.norm());
    }
  }
  return worst;
}

OptimizeReport optimize(const EndpointCoupling& coupling, const TimeGrid& grid,
                        const PotentialSpec& psi, const std::optional<PotentialSpec>& interaction,
                        const OptimizeOptions& opts) {
  if (grid.intervals < 2) throw std::invalid_argument("need at least two intervals");
  const auto t0 = std::chrono::steady_clock::now();

  PathEnsemble current = straight_line_ensemble(coupling, grid);
  const InteriorLayout L{int(current.paths().size()), grid.intervals - 1, current.dimension()};

  auto eval_action = [&](const PathEnsemble& e) { return action(e, psi, interaction).total; };
  auto eval_grad = [&](const PathEnsemble& e) {
    return flatten_gradient(action_gradient(e, psi, interaction), L);
  };

  OptimizeReport report;
  report.initial_action = eval_action(current);
  if (!std::isfinite(report.initial_action))
    throw std::runtime_error("non-finite action at the straight-line start");

  Eigen::VectorXd y = flatten(current, L);
  Eigen::VectorXd g = eval_grad(current);
  double fy = report.initial_action;

  std::vector<double> masses;
  for (const Path& p : current.paths()) masses.push_back(p.w);
  const KineticMetric metric(L, grid.dt(), std::move(masses));

  std::deque<Eigen::VectorXd> hist_s, hist_y;
  std::deque<double> hist_rho;

  int iter = 0;
  bool converged = g.lpNorm<Eigen::Infinity>() < opts.gtol;
  while (!converged && iter < opts.max_iter) {
    // Two-loop recursion for the quasi-Newton direction.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(hist_s.size());
    for (int i = int(hist_s.size()) - 1; i >= 0; --i) {
      alpha[std::size_t(i)] = hist_rho[std::size_t(i)] * hist_s[std::size_t(i)].dot(q);
      q -= alpha[std::size_t(i)] * hist_y[std::size_t(i)];
    }
    q = metric.solve(q);
    for (std::size_t i = 0; i < hist_s.size(); ++i) {
      const double beta = hist_rho[i] * hist_y[i].dot(q);
      q += (alpha[i] - beta) * hist_s[i];
    }
    Eigen::VectorXd p = -q;
    double slope = g.dot(p);
    if (!(slope < 0.0)) {  // not a descent direction: drop the history
      hist_s.clear();
      hist_y.clear();
      hist_rho.clear();
      p = -g;
      slope = -g.squaredNorm();
    }

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd y_new;
    double f_new = fy;
    for (int ls = 0; ls < opts.max_line_steps; ++ls) {
      y_new = y + step * p;
      const double f_try = eval_action(unflatten(y_new, current, L));
      if (std::isfinite(f_try) && f_try <= fy + opts.armijo * step * slope) {
        f_new = f_try;
        accepted = true;
        break;
      }
      step *= opts.backtrack;
    }
    if (!accepted) break;  // report the best iterate found so far

    PathEnsemble next = unflatten(y_new, current, L);
    Eigen::VectorXd g_new = eval_grad(next);
    const Eigen::VectorXd s = y_new - y;
    const Eigen::VectorXd dg = g_new - g;
    const double sy = s.dot(dg);
    if (sy > 1e-12 * s.norm() * dg.norm()) {
      hist_s.push_back(s);
      hist_y.push_back(dg);
      hist_rho.push_back(1.0 / sy);
      if (int(hist_s.size()) > opts.memory) {
        hist_s.pop_front();
        hist_y.pop_front();
        hist_rho.pop_front();
      }
    }
    y = y_new;
    g = g_new;
    fy = f_new;
    current = next;
    ++iter;
    converged = g.lpNorm<Eigen::Infinity>() < opts.gtol;
  }

  report.ensemble = current;
  report.final_action = fy;
  report.iterations = iter;
  report.grad_norm = g.lpNorm<Eigen::Infinity>();
  report.el_residual = el_residual(current, psi, interaction);
  report.converged = converged;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

ConvergenceTable convergence_experiment(const EndpointSampler& sampler,
                                        const std::vector<int>& n_list, const TimeGrid& grid,
                                        const PotentialSpec& psi,
                                        const std::optional<PotentialSpec>& interaction,
                                        std::uint64_t seed, const OptimizeOptions& opts) {
  if (n_list.size() < 2) throw std::invalid_argument("need at least two ensemble sizes");
  std::vector<PathEnsemble> minimizers;
  minimizers.reserve(n_list.size());
  for (int n : n_list) {
    if (n < 1) throw std::invalid_argument("ensemble sizes must be positive");
    RandomStream rs(seed, "endpoints-" + std::to_string(n));
    std::vector<EndpointPair> pairs;
    pairs.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
      EndpointPair pr = sampler(rs);
      pr.w = 1.0 / n;
      pairs.push_back(std::move(pr));
    }
    minimizers.push_back(optimize(EndpointCoupling(std::move(pairs)), grid, psi, interaction, opts)
                             .ensemble);
  }

  ConvergenceTable table;
  const double dt = grid.dt();
  for (std::size_t i = 0; i + 1 < minimizers.size(); ++i) {
    ConvergenceRow row;
    row.n_small = n_list[i];
    row.n_large = n_list[i + 1];
    for (int m = 0; m < grid.intervals; ++m) {
      const double w2 = wp(statistic_at_interval(minimizers[i], m),
                           statistic_at_interval(minimizers[i + 1], m), 2);
      row.distance_sq_integral += dt * w2 * w2;
    }
    table.rows.push_back(row);
  }
  table.monotone = true;
  for (std::size_t i = 0; i + 1 < table.rows.size(); ++i)
    if (!(table.rows[i + 1].distance_sq_integral < table.rows[i].distance_sq_integral))
      table.monotone = false;
  return table;
}

}  // namespace mfa
