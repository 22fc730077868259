#include "mfa/vlasov.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mfa/wasserstein.hpp"

namespace mfa {
namespace {

struct Frame {
  std::vector<Vec> x, v, a;
};

DiscreteStatistic frame_statistic(const Frame& fr, const DiscreteStatistic& f0) {
  std::vector<Atom> atoms;
  atoms.reserve(fr.x.size());
  for (std::size_t k = 0; k < fr.x.size(); ++k)
    atoms.push_back({{fr.x[k], fr.v[k]}, f0.atoms()[k].w});
  return DiscreteStatistic(std::move(atoms));
}

// Cubic Hermite value at local parameter s in [0,1] with endpoint values and
// endpoint derivatives scaled by the interval length.
Vec hermite(const Vec& y0, const Vec& d0, const Vec& y1, const Vec& d1, double dt, double s) {
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  return h00 * y0 + (h10 * dt) * d0 + h01 * y1 + (h11 * dt) * d1;
}

// Interpolated frame of a stored trajectory at node i + s.
Frame interp_frame(const std::vector<Frame>& traj, int i, double s, double dt) {
  if (s == 0.0) return traj[std::size_t(i)];
  if (s == 1.0) return traj[std::size_t(i + 1)];
  const Frame& a = traj[std::size_t(i)];
  const Frame& b = traj[std::size_t(i + 1)];
  Frame out;
  const std::size_t n = a.x.size();
  out.x.reserve(n);
  out.v.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.x.push_back(hermite(a.x[k], a.v[k], b.x[k], b.v[k], dt, s));
    out.v.push_back(hermite(a.v[k], a.a[k], b.v[k], b.a[k], dt, s));
  }
  return out;
}

// Newton solve of grad_v L[f](x, v) = p for v; the catalog kinds are linear
// or mildly nonlinear in v, so this converges in a handful of steps.
Vec recover_velocity(const MeanFieldLagrangian& L, const Vec& x, const Vec& p, const Vec& v_guess,
                     double tol = 1e-12, int max_iter = 100) {
  Vec v = v_guess;
  for (int it = 0; it < max_iter; ++it) {
    const Vec g = L.gradient(x, v).v - p;
    if (g.lpNorm<Eigen::Infinity>() < tol) return v;
    const Eigen::MatrixXd H = L.hessian(x, v).vv;
    const Vec step = H.colPivHouseholderQr().solve(g);
    if (!step.allFinite()) break;
    v -= step;
  }
  const Vec g = L.gradient(x, v).v - p;
  if (g.lpNorm<Eigen::Infinity>() < 1e-9) return v;  // accept near-misses from FP plateaus
  throw std::runtime_error("velocity recovery did not converge");
}

double frame_w1(const Frame& a, const Frame& b, const DiscreteStatistic& f0) {
  return wp(frame_statistic(a, f0), frame_statistic(b, f0), 1);
}

}  // namespace

DiscreteStatistic statistic_at_node(const CharacteristicFlow& flow, int node) {
  if (node < 0 || node > flow.grid.intervals)
    throw std::out_of_range("node index outside the flow grid");
  std::vector<Atom> atoms;
  const auto& xs = flow.x[std::size_t(node)];
  const auto& vs = flow.v[std::size_t(node)];
  atoms.reserve(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k)
    atoms.push_back({{xs[k], vs[k]}, flow.f0.atoms()[k].w});
  return DiscreteStatistic(std::move(atoms));
}

AccelerationField acceleration(const DiscreteStatistic& f, const PotentialSpec& psi,
                               const std::optional<PotentialSpec>& interaction) {
  const int n = int(f.size());
  if (n == 0) throw std::invalid_argument("statistic must be nonempty");
  const int d = f.dimension();
  const MeanFieldLagrangian L(psi, interaction, f);

  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(n * d, n * d);
  Eigen::VectorXd rhs(n * d);
  for (int k = 0; k < n; ++k) {
    const Atom& ak = f.atoms()[std::size_t(k)];
    const PotentialHessian Hk = L.hessian(ak.z.x, ak.z.v);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hk.vv);
    if (es.eigenvalues().minCoeff() <= 1e-9) {
      std::ostringstream os;
      os << "velocity Hessian of the field Lagrangian is not positive definite at an atom "
            "(min eigenvalue "
         << es.eigenvalues().minCoeff() << ")";
      throw std::runtime_error(os.str());
    }
    sys.block(k * d, k * d, d, d) += Hk.vv;
    const PotentialGradient Gk = L.gradient(ak.z.x, ak.z.v);
    Vec r = Gk.x - Hk.xv.transpose() * ak.z.v;
    if (interaction) {
      for (int j = 0; j < n; ++j) {
        const Atom& aj = f.atoms()[std::size_t(j)];
        const PotentialHessian Hu =
            hess(*interaction, ak.z.x - aj.z.x, ak.z.v - aj.z.v);
        sys.block(k * d, j * d, d, d) -= aj.w * Hu.vv;
        r += aj.w * Hu.xv.transpose() * aj.z.v;
      }
    }
    rhs.segment(k * d, d) = r;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin <= 1e-12 * std::max(1.0, smax)) {
    std::ostringstream os;
    os << "acceleration system is singular (smallest singular value " << smin << ")";
    throw std::runtime_error(os.str());
  }
  const Eigen::VectorXd sol = svd.solve(rhs);

  AccelerationField out;
  out.smallest_singular = smin;
  out.residual = (sys * sol - rhs).lpNorm<Eigen::Infinity>();
  out.a.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out.a.push_back(sol.segment(k * d, d));
  return out;
}

namespace {

std::vector<Vec> frame_accelerations(const Frame& fr, const DiscreteStatistic& f0,
                                     const PotentialSpec& psi,
                                     const std::optional<PotentialSpec>& interaction) {
  return acceleration(frame_statistic(fr, f0), psi, interaction).a;
}

// One RK4 step of the position-momentum characteristics over interval i of
// the chunk-local trajectory `prev` (the frozen statistics curve).
struct StepState {
  std::vector<Vec> x, p, v;  // v: recovered at the step's start
};

struct PicardContext {
  const DiscreteStatistic* f0 = nullptr;
  const PotentialSpec* psi = nullptr;
  const std::optional<PotentialSpec>* interaction = nullptr;
  double dt = 0.0;
};

struct Derivative {
  std::vector<Vec> dx, dp, v_at_stage;
};

Derivative eval_derivative(const PicardContext& ctx, const std::vector<Frame>& prev, int interval,
                           double s, const std::vector<Vec>& x, const std::vector<Vec>& p,
                           const std::vector<Vec>& v_guess) {
  const Frame field = interp_frame(prev, interval, s, ctx.dt);
  const DiscreteStatistic fs = frame_statistic(field, *ctx.f0);
  const MeanFieldLagrangian L(*ctx.psi, *ctx.interaction, fs);
  Derivative out;
  const std::size_t n = x.size();
  out.dx.reserve(n);
  out.dp.reserve(n);
  out.v_at_stage.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec vk = recover_velocity(L, x[k], p[k], v_guess[k]);
    out.v_at_stage.push_back(vk);
    out.dx.push_back(vk);
    out.dp.push_back(L.gradient(x[k], vk).x);
  }
  return out;
}

}  // namespace

CharacteristicFlow dobrushin_solve(const DiscreteStatistic& f0, const TimeGrid& grid,
                                   const PotentialSpec& psi,
                                   const std::optional<PotentialSpec>& interaction,
                                   double fptol, int max_picard) {
  if (f0.size() == 0) throw std::invalid_argument("initial statistic must be nonempty");
  if (fptol <= 0.0 || max_picard < 2) throw std::invalid_argument("bad fixed-point controls");
  const int M = grid.intervals;
  const int n = int(f0.size());
  const double dt = grid.dt();
  PicardContext ctx{&f0, &psi, &interaction, dt};

  // Initial chunk length from the local field stiffness; halves on observed
  // non-contraction until one interval remains.
  double stiffness = 1.0;
  {
    const MeanFieldLagrangian L(psi, interaction, f0);
    for (const Atom& atom : f0.atoms()) {
      const PotentialHessian H = L.hessian(atom.z.x, atom.z.v);
      stiffness = std::max({stiffness, H.xx.lpNorm<Eigen::Infinity>(),
                            H.xv.lpNorm<Eigen::Infinity>(), H.vv.lpNorm<Eigen::Infinity>()});
    }
  }
  int chunk = std::max(1, std::min(M, int(std::floor((0.4 / stiffness) / dt))));
  double last_factor = 0.0;

  while (true) {
    CharacteristicFlow flow;
    flow.f0 = f0;
    flow.grid = grid;
    flow.x.assign(std::size_t(M + 1), {});
    flow.v.assign(std::size_t(M + 1), {});
    flow.p.assign(std::size_t(M + 1), {});
    flow.a.assign(std::size_t(M + 1), {});

    Frame state;  // start of the current chunk
    state.x.reserve(static_cast<std::size_t>(n));
    state.v.reserve(static_cast<std::size_t>(n));
    for (const Atom& atom : f0.atoms()) {
      state.x.push_back(atom.z.x);
      state.v.push_back(atom.z.v);
    }
    state.a = frame_accelerations(state, f0, psi, interaction);

    auto store_node = [&](int node, const Frame& fr, const std::vector<Vec>& p) {
      flow.x[std::size_t(node)] = fr.x;
      flow.v[std::size_t(node)] = fr.v;
      flow.a[std::size_t(node)] = fr.a;
      flow.p[std::size_t(node)] = p;
    };

    bool restart = false;
    int node0 = 0;
    while (node0 < M && !restart) {
      const int len = std::min(chunk, M - node0);

      // Frozen-curve initial guess: straight extrapolation of the chunk-start
      // state (exact for free transport).
      std::vector<Frame> prev(std::size_t(len + 1));
      for (int i = 0; i <= len; ++i) {
        Frame fr;
        fr.x.reserve(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k)
          fr.x.push_back(state.x[std::size_t(k)] + (i * dt) * state.v[std::size_t(k)]);
        fr.v = state.v;
        fr.a.assign(std::size_t(n), Vec::Zero(f0.dimension()));
        prev[std::size_t(i)] = std::move(fr);
      }

      double d_last = -1.0;
      bool chunk_done = false;
      for (int pic = 0; pic < max_picard && !chunk_done; ++pic) {
        // Integrate against the frozen curve `prev`.
        std::vector<Frame> cur(std::size_t(len + 1));
        std::vector<std::vector<Vec>> momenta(std::size_t(len + 1));
        {
          const DiscreteStatistic fs = frame_statistic(prev[0], f0);
          const MeanFieldLagrangian L0(psi, interaction, fs);
          Frame fr = state;
          std::vector<Vec> p0;
          p0.reserve(static_cast<std::size_t>(n));
          for (int k = 0; k < n; ++k)
            p0.push_back(L0.gradient(fr.x[std::size_t(k)], fr.v[std::size_t(k)]).v);
          cur[0] = fr;
          cur[0].a = frame_accelerations(fr, f0, psi, interaction);
          momenta[0] = std::move(p0);
        }
        for (int i = 0; i < len; ++i) {
          const std::vector<Vec>& x0 = cur[std::size_t(i)].x;
          const std::vector<Vec>& v0 = cur[std::size_t(i)].v;
          const std::vector<Vec>& p0 = momenta[std::size_t(i)];

          const Derivative k1 = eval_derivative(ctx, prev, i, 0.0, x0, p0, v0);
          std::vector<Vec> x2(static_cast<std::size_t>(n)), p2(static_cast<std::size_t>(n));
          for (int k = 0; k < n; ++k) {
            x2[std::size_t(k)] = x0[std::size_t(k)] + 0.5 * dt * k1.dx[std::size_t(k)];
            p2[std::size_t(k)] = p0[std::size_t(k)] + 0.5 * dt * k1.dp[std::size_t(k)];
          }
          const Derivative k2 = eval_derivative(ctx, prev, i, 0.5, x2, p2, k1.v_at_stage);
          std::vector<Vec> x3(static_cast<std::size_t>(n)), p3(static_cast<std::size_t>(n));
          for (int k = 0; k < n; ++k) {
            x3[std::size_t(k)] = x0[std::size_t(k)] + 0.5 * dt * k2.dx[std::size_t(k)];
            p3[std::size_t(k)] = p0[std::size_t(k)] + 0.5 * dt * k2.dp[std::size_t(k)];
          }
          const Derivative k3 = eval_derivative(ctx, prev, i, 0.5, x3, p3, k2.v_at_stage);
          std::vector<Vec> x4(static_cast<std::size_t>(n)), p4(static_cast<std::size_t>(n));
          for (int k = 0; k < n; ++k) {
            x4[std::size_t(k)] = x0[std::size_t(k)] + dt * k3.dx[std::size_t(k)];
            p4[std::size_t(k)] = p0[std::size_t(k)] + dt * k3.dp[std::size_t(k)];
          }
          const Derivative k4 = eval_derivative(ctx, prev, i, 1.0, x4, p4, k3.v_at_stage);

          Frame next;
          next.x.resize(static_cast<std::size_t>(n));
          std::vector<Vec> pn(static_cast<std::size_t>(n));
          for (int k = 0; k < n; ++k) {
            next.x[std::size_t(k)] =
                x0[std::size_t(k)] + (dt / 6.0) * (k1.dx[std::size_t(k)] +
                                                   2.0 * k2.dx[std::size_t(k)] +
                                                   2.0 * k3.dx[std::size_t(k)] +
                                                   k4.dx[std::size_t(k)]);
            pn[std::size_t(k)] =
                p0[std::size_t(k)] + (dt / 6.0) * (k1.dp[std::size_t(k)] +
                                                   2.0 * k2.dp[std::size_t(k)] +
                                                   2.0 * k3.dp[std::size_t(k)] +
                                                   k4.dp[std::size_t(k)]);
            if (!next.x[std::size_t(k)].allFinite() || !pn[std::size_t(k)].allFinite())
              throw std::runtime_error("characteristic state became non-finite");
          }
          // Node velocities: recovered against the frozen curve at the node.
          const Frame field = interp_frame(prev, i, 1.0, dt);
          const DiscreteStatistic fs = frame_statistic(field, f0);
          const MeanFieldLagrangian L(psi, interaction, fs);
          next.v.resize(static_cast<std::size_t>(n));
          for (int k = 0; k < n; ++k)
            next.v[std::size_t(k)] = recover_velocity(L, next.x[std::size_t(k)],
                                                      pn[std::size_t(k)], k4.v_at_stage[std::size_t(k)]);
          next.a = frame_accelerations(next, f0, psi, interaction);
          cur[std::size_t(i + 1)] = std::move(next);
          momenta[std::size_t(i + 1)] = std::move(pn);
        }
        ++flow.picard_iterations;

        double dist = 0.0;
        for (int i = 1; i <= len; ++i)
          dist = std::max(dist, frame_w1(cur[std::size_t(i)], prev[std::size_t(i)], f0));
        if (d_last >= 0.0 && d_last > fptol) {
          const double factor = dist / d_last;
          flow.last_contraction = factor;
          last_factor = factor;
          if (factor > 0.5 && dist > fptol) {
            restart = true;  // chunk too long for a clean contraction
            break;
          }
        }
        prev = cur;
        if (dist < fptol) {
          chunk_done = true;
          for (int i = 0; i <= len; ++i) store_node(node0 + i, cur[std::size_t(i)],
                                                    momenta[std::size_t(i)]);
          state = cur[std::size_t(len)];
        }
        d_last = dist;
      }
      if (!chunk_done && !restart) restart = true;  // ran out of iterations
      if (chunk_done) {
        node0 += len;
        ++flow.sub_horizons;
      }
    }

    if (!restart) {
      // Recovery residual against the converged statistics curve.
      double worst = 0.0;
      for (int i = 0; i <= M; ++i) {
        const DiscreteStatistic fi = statistic_at_node(flow, i);
        const MeanFieldLagrangian L(psi, interaction, fi);
        for (int k = 0; k < n; ++k) {
          const Vec g = L.gradient(flow.x[std::size_t(i)][std::size_t(k)],
                                   flow.v[std::size_t(i)][std::size_t(k)])
                            .v -
                        flow.p[std::size_t(i)][std::size_t(k)];
          worst = std::max(worst, g.lpNorm<Eigen::Infinity>());
        }
      }
      flow.max_recovery_residual = worst;
      return flow;
    }
    if (chunk == 1) {
      std::ostringstream os;
      os << "fixed-point iteration failed to contract even on a single interval "
            "(last factor "
         << last_factor << ")";
      throw std::runtime_error(os.str());
    }
    chunk = std::max(1, chunk / 2);
  }
}

double weak_vlasov_residual(const CharacteristicFlow& flow, const PotentialSpec& psi,
                            const std::optional<PotentialSpec>& interaction,
                            const std::vector<TestBump>& bumps) {
  if (bumps.empty()) throw std::invalid_argument("need at least one test function");
  const int M = flow.grid.intervals;
  const double dt = flow.grid.dt();
  const double T = flow.grid.T;
  const int n = int(flow.f0.size());

  double worst = 0.0;
  std::vector<double> acc(bumps.size(), 0.0);
  for (int i = 0; i < M; ++i) {
    // Midpoint state of the interval from the stored Hermite data.
    std::vector<Vec> xm(static_cast<std::size_t>(n)), vm(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      xm[std::size_t(k)] = hermite(flow.x[std::size_t(i)][std::size_t(k)],
                                   flow.v[std::size_t(i)][std::size_t(k)],
                                   flow.x[std::size_t(i + 1)][std::size_t(k)],
                                   flow.v[std::size_t(i + 1)][std::size_t(k)], dt, 0.5);
      vm[std::size_t(k)] = hermite(flow.v[std::size_t(i)][std::size_t(k)],
                                   flow.a[std::size_t(i)][std::size_t(k)],
                                   flow.v[std::size_t(i + 1)][std::size_t(k)],
                                   flow.a[std::size_t(i + 1)][std::size_t(k)], dt, 0.5);
    }
    std::vector<Atom> atoms;
    atoms.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k)
      atoms.push_back({{xm[std::size_t(k)], vm[std::size_t(k)]}, flow.f0.atoms()[std::size_t(k)].w});
    const DiscreteStatistic fmid(std::move(atoms));
    const std::vector<Vec> am = acceleration(fmid, psi, interaction).a;

    const double t = (i + 0.5) * dt;
    const double w = std::sin(M_PI * t / T);
    const double wt = w * w;
    const double dwt = 2.0 * w * std::cos(M_PI * t / T) * (M_PI / T);
    for (std::size_t b = 0; b < bumps.size(); ++b) {
      const TestBump& bump = bumps[b];
      double sum = 0.0;
      for (int k = 0; k < n; ++k) {
        const Vec& x = xm[std::size_t(k)];
        const Vec& v = vm[std::size_t(k)];
        double bx = 1.0, bv = 1.0;
        Vec gx = Vec::Zero(x.size()), gv = Vec::Zero(v.size());
        if (bump.sx > 0.0) {
          const Vec rx = x - bump.x0;
          bx = std::exp(-rx.squaredNorm() / (bump.sx * bump.sx));
          gx = (-2.0 / (bump.sx * bump.sx)) * rx;
        }
        if (bump.sv > 0.0) {
          const Vec rv = v - bump.v0;
          bv = std::exp(-rv.squaredNorm() / (bump.sv * bump.sv));
          gv = (-2.0 / (bump.sv * bump.sv)) * rv;
        }
        const double space = bx * bv;
        const double dphi_dt = dwt * space;
        const double transport = wt * space * (v.dot(gx) + am[std::size_t(k)].dot(gv));
        sum += flow.f0.atoms()[std::size_t(k)].w * (dphi_dt + transport);
      }
      acc[b] += dt * sum;
    }
  }
  for (double a : acc) worst = std::max(worst, std::abs(a));
  return worst;
}

StabilityReport stability_experiment(const DiscreteStatistic& f0, const DiscreteStatistic& g0,
                                     const TimeGrid& grid, const PotentialSpec& psi,
                                     const std::optional<PotentialSpec>& interaction,
                                     double fptol, int max_picard) {
  const CharacteristicFlow flow_f = dobrushin_solve(f0, grid, psi, interaction, fptol, max_picard);
  const CharacteristicFlow flow_g = dobrushin_solve(g0, grid, psi, interaction, fptol, max_picard);
  const double base = wp(f0, g0, 1);

  StabilityReport rep;
  for (int i = 0; i <= grid.intervals; ++i) {
    rep.t.push_back(grid.node(i));
    if (base < 1e-15) {
      rep.ratio.push_back(1.0);
      continue;
    }
    rep.ratio.push_back(wp(statistic_at_node(flow_f, i), statistic_at_node(flow_g, i), 1) / base);
  }

  // Least-squares fit log(ratio) ~ a + b t, then C = max(e^a, b, 1) and the
  // envelope check ratio <= 1.05 C e^{C t}.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (std::size_t i = 0; i < rep.t.size(); ++i) {
    if (rep.ratio[i] <= 0.0) continue;
    const double lx = rep.t[i], ly = std::log(rep.ratio[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++m;
  }
  double a = 0.0, b = 0.0;
  if (m >= 2 && sxx * m - sx * sx > 1e-15) {
    b = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    a = (sy - b * sx) / m;
  }
  rep.fitted_C = std::max({std::exp(a), b, 1.0});
  rep.within_envelope = true;
  for (std::size_t i = 0; i < rep.t.size(); ++i)
    if (rep.ratio[i] > 1.05 * rep.fitted_C * std::exp(rep.fitted_C * rep.t[i]) + 1e-12)
      rep.within_envelope = false;
  return rep;
}

}  // namespace mfa
