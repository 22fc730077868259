#include "mfa/relaxation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "mfa/action.hpp"
#include "mfa/rng.hpp"
#include "mfa/simplex.hpp"

namespace mfa {

namespace {

constexpr double kTinyProb = 1e-14;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double wrap01(double t) {
  double r = t - std::floor(t);
  if (r >= 1.0) r = 0.0;
  return r;
}

int thread_budget(int jobs) {
  long n = 0;
  if (const char* env = std::getenv("MFA_THREADS")) n = std::strtol(env, nullptr, 10);
  if (n <= 0) n = static_cast<long>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  return static_cast<int>(std::min<long>(n, jobs));
}

// Uniform grid nodes on [-R, R]; the rational form R*(2j - (G-1))/(G-1) lands
// exactly on representable values such as integers whenever they divide the
// span, which keeps hull vertices like v = +-1 exact.
std::vector<double> axis_nodes(double radius, int points) {
  std::vector<double> u(static_cast<std::size_t>(points));
  for (int j = 0; j < points; ++j)
    u[static_cast<std::size_t>(j)] =
        radius * (2.0 * j - (points - 1)) / static_cast<double>(points - 1);
  return u;
}

std::vector<Vec> velocity_grid(int dim, double radius, int points) {
  const std::vector<double> axis = axis_nodes(radius, points);
  std::vector<Vec> pts;
  if (dim == 1) {
    pts.reserve(axis.size());
    for (double u : axis) {
      Vec p(1);
      p(0) = u;
      pts.push_back(p);
    }
  } else {
    pts.reserve(axis.size() * axis.size());
    for (double ux : axis)
      for (double uy : axis) {
        Vec p(2);
        p(0) = ux;
        p(1) = uy;
        pts.push_back(p);
      }
  }
  return pts;
}

// Indices of the lower convex hull of the sorted graph {(xs[i], ys[i])}.
std::vector<int> lower_hull_indices(const std::vector<double>& xs, const std::vector<double>& ys) {
  const int n = static_cast<int>(xs.size());
  std::vector<int> hull;
  hull.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    while (hull.size() >= 2) {
      const int b = hull[hull.size() - 1];
      const int a = hull[hull.size() - 2];
      // pop b when it lies on or above the chord a -> i
      const double lhs = (ys[static_cast<std::size_t>(b)] - ys[static_cast<std::size_t>(a)]) *
                         (xs[static_cast<std::size_t>(i)] - xs[static_cast<std::size_t>(a)]);
      const double rhs = (ys[static_cast<std::size_t>(i)] - ys[static_cast<std::size_t>(a)]) *
                         (xs[static_cast<std::size_t>(b)] - xs[static_cast<std::size_t>(a)]);
      if (lhs >= rhs)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(i);
  }
  return hull;
}

// Hull segment bracketing t: consecutive hull vertices (l, r) with
// xs[l] <= t <= xs[r]; weight theta on the left vertex.
struct HullBracket {
  int left = 0;
  int right = 0;
  double theta = 1.0;
};

HullBracket hull_bracket(const std::vector<double>& xs, const std::vector<int>& hull, double t) {
  HullBracket b;
  if (hull.size() == 1 || t <= xs[static_cast<std::size_t>(hull.front())]) {
    b.left = b.right = hull.front();
    return b;
  }
  if (t >= xs[static_cast<std::size_t>(hull.back())]) {
    b.left = b.right = hull.back();
    return b;
  }
  for (std::size_t j = 0; j + 1 < hull.size(); ++j) {
    const double xl = xs[static_cast<std::size_t>(hull[j])];
    const double xr = xs[static_cast<std::size_t>(hull[j + 1])];
    if (t >= xl && t <= xr) {
      b.left = hull[j];
      b.right = hull[j + 1];
      b.theta = (xr - xl) > 0.0 ? (xr - t) / (xr - xl) : 1.0;
      if (b.theta > 1.0 - 1e-15) {
        b.right = b.left;
        b.theta = 1.0;
      } else if (b.theta < 1e-15) {
        b.left = b.right;
        b.theta = 1.0;
      }
      return b;
    }
  }
  b.left = b.right = hull.back();
  return b;
}

// ---- grid-restricted energy -------------------------------------------------

// Quadratic/linear form of the energy in the mass vector s over the cells
// (atom a, grid point g). For the variance penalty the pairwise table is
// replaced by the closed-form mean-velocity square.
struct GridEnergy {
  int atoms = 0;
  int points = 0;
  bool variance = false;
  Eigen::VectorXd base;    // psi(x_a, u_g), or phi(|u|) + |u|^2 for the variance kind
  Eigen::MatrixXd pair;    // pairwise table, empty without interaction
  Eigen::MatrixXd coords;  // cell velocity coordinates (variance kind only)
  double lipschitz = 0.0;  // gradient Lipschitz constant in s

  double value(const Eigen::VectorXd& s) const {
    if (variance) return base.dot(s) - (coords.transpose() * s).squaredNorm();
    double v = base.dot(s);
    if (pair.size() > 0) v += 0.5 * s.dot(pair * s);
    return v;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& s) const {
    if (variance) return base - 2.0 * (coords * (coords.transpose() * s));
    if (pair.size() > 0) return base + pair * s;
    return base;
  }
};

GridEnergy build_grid_energy(const DiscreteStatistic& f, const EnergySpec& energy,
                             const std::vector<Vec>& pts) {
  const int A = static_cast<int>(f.size());
  const int P = static_cast<int>(pts.size());
  GridEnergy ge;
  ge.atoms = A;
  ge.points = P;
  ge.variance = energy.is_variance_penalty();
  ge.base.resize(static_cast<Eigen::Index>(A) * P);
  for (int a = 0; a < A; ++a) {
    const Vec& x = f.atoms()[static_cast<std::size_t>(a)].z.x;
    for (int g = 0; g < P; ++g)
      ge.base(static_cast<Eigen::Index>(a) * P + g) = eval(energy.psi, x, pts[static_cast<std::size_t>(g)]);
  }
  if (ge.variance) {
    const int d = static_cast<int>(pts[0].size());
    ge.coords.resize(static_cast<Eigen::Index>(A) * P, d);
    for (int a = 0; a < A; ++a)
      for (int g = 0; g < P; ++g)
        ge.coords.row(static_cast<Eigen::Index>(a) * P + g) = pts[static_cast<std::size_t>(g)].transpose();
    ge.lipschitz = 2.0 * (ge.coords.transpose() * ge.coords).eigenvalues().real().maxCoeff();
    return ge;
  }
  if (energy.has_interaction()) {
    const Eigen::Index n = static_cast<Eigen::Index>(A) * P;
    ge.pair.resize(n, n);
    for (int a = 0; a < A; ++a) {
      const Vec& xa = f.atoms()[static_cast<std::size_t>(a)].z.x;
      for (int g = 0; g < P; ++g) {
        const Eigen::Index row = static_cast<Eigen::Index>(a) * P + g;
        for (int b = 0; b < A; ++b) {
          const Vec& xb = f.atoms()[static_cast<std::size_t>(b)].z.x;
          for (int h = 0; h < P; ++h) {
            const Eigen::Index col = static_cast<Eigen::Index>(b) * P + h;
            if (col < row) {
              ge.pair(row, col) = ge.pair(col, row);
              continue;
            }
            ge.pair(row, col) = eval(*energy.interaction, xa - xb,
                                     pts[static_cast<std::size_t>(g)] - pts[static_cast<std::size_t>(h)]);
          }
        }
      }
    }
    // power iteration for a spectral-norm bound (deterministic start)
    Eigen::VectorXd x = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
    double lam = 0.0;
    for (int it = 0; it < 40; ++it) {
      Eigen::VectorXd y = ge.pair * x;
      lam = y.norm();
      if (lam <= 1e-300) break;
      x = y / lam;
    }
    ge.lipschitz = 1.2 * lam + 1e-12;
  }
  return ge;
}

// ---- feasible-set projection --------------------------------------------------

// Project component rows for one source atom onto the product of simplices
// intersected with the aggregate-mean constraint sum_i lambda_i <p_i, u> = v.
// d = 1 delegates to the shared dual-bisection projector; d = 2 nests a second
// bisection (the restricted dual moment stays monotone in the outer
// multiplier).
std::vector<Eigen::VectorXd> project_blocks_mean(const std::vector<Eigen::VectorXd>& q,
                                                 const std::vector<double>& lambda,
                                                 const Eigen::MatrixXd& ucoords, const Vec& target) {
  const int d = static_cast<int>(ucoords.cols());
  if (d == 1) {
    auto res = project_simplex_blocks_with_moment(q, lambda, ucoords.col(0), target(0));
    if (!res) throw std::runtime_error("aggregate moment projection failed");
    return *res;
  }
  const auto blocks_at = [&](double mu0, double mu1) {
    std::vector<Eigen::VectorXd> p(q.size());
    const Eigen::VectorXd tilt = mu0 * ucoords.col(0) + mu1 * ucoords.col(1);
    for (std::size_t i = 0; i < q.size(); ++i) p[i] = project_simplex(q[i] + lambda[i] * tilt);
    return p;
  };
  const auto moment = [&](const std::vector<Eigen::VectorXd>& p, int c) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += lambda[i] * p[i].dot(ucoords.col(c));
    return s;
  };
  // inner solve: pin coordinate 0 by bisection in mu0 at fixed mu1
  const auto inner = [&](double mu1) {
    double lo = -1.0, hi = 1.0;
    for (int it = 0; it < 80 && moment(blocks_at(lo, mu1), 0) > target(0); ++it) lo *= 2.0;
    for (int it = 0; it < 80 && moment(blocks_at(hi, mu1), 0) < target(0); ++it) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (moment(blocks_at(mid, mu1), 0) < target(0))
        lo = mid;
      else
        hi = mid;
      if (hi - lo < 1e-14 * (1.0 + std::abs(lo) + std::abs(hi))) break;
    }
    return 0.5 * (lo + hi);
  };
  double lo = -1.0, hi = 1.0;
  for (int it = 0; it < 80 && moment(blocks_at(inner(lo), lo), 1) > target(1); ++it) lo *= 2.0;
  for (int it = 0; it < 80 && moment(blocks_at(inner(hi), hi), 1) < target(1); ++it) hi *= 2.0;
  double mu1 = 0.0;
  for (int it = 0; it < 200; ++it) {
    mu1 = 0.5 * (lo + hi);
    if (moment(blocks_at(inner(mu1), mu1), 1) < target(1))
      lo = mu1;
    else
      hi = mu1;
    if (hi - lo < 1e-14 * (1.0 + std::abs(lo) + std::abs(hi))) break;
  }
  mu1 = 0.5 * (lo + hi);
  return blocks_at(inner(mu1), mu1);
}

// ---- mixture optimization -----------------------------------------------------

using RowState = std::vector<std::vector<Eigen::VectorXd>>;  // [component][atom] -> probs over grid

struct GridProblem {
  const GridEnergy* energy = nullptr;
  const DiscreteStatistic* f = nullptr;
  Eigen::MatrixXd ucoords;  // points x d
  int n_comp = 0;
  int n_atoms = 0;
  int n_pts = 0;

  Eigen::VectorXd mass(const std::vector<Eigen::VectorXd>& comp_rows) const {
    Eigen::VectorXd s(static_cast<Eigen::Index>(n_atoms) * n_pts);
    for (int a = 0; a < n_atoms; ++a)
      s.segment(static_cast<Eigen::Index>(a) * n_pts, n_pts) =
          f->atoms()[static_cast<std::size_t>(a)].w * comp_rows[static_cast<std::size_t>(a)];
    return s;
  }

  double value(const RowState& rows, const std::vector<double>& lambda) const {
    double total = 0.0;
    for (int i = 0; i < n_comp; ++i)
      if (lambda[static_cast<std::size_t>(i)] > kTinyProb)
        total += lambda[static_cast<std::size_t>(i)] * energy->value(mass(rows[static_cast<std::size_t>(i)]));
    return total;
  }

  void project(RowState& rows, const std::vector<double>& lambda) const {
    std::vector<Eigen::VectorXd> blocks(static_cast<std::size_t>(n_comp));
    for (int a = 0; a < n_atoms; ++a) {
      for (int i = 0; i < n_comp; ++i) blocks[static_cast<std::size_t>(i)] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)];
      auto projected = project_blocks_mean(blocks, lambda, ucoords, f->atoms()[static_cast<std::size_t>(a)].z.v);
      for (int i = 0; i < n_comp; ++i) rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] = projected[static_cast<std::size_t>(i)];
    }
  }

  RowState gradient(const RowState& rows, const std::vector<double>& lambda) const {
    RowState g(static_cast<std::size_t>(n_comp),
               std::vector<Eigen::VectorXd>(static_cast<std::size_t>(n_atoms)));
    for (int i = 0; i < n_comp; ++i) {
      const double li = lambda[static_cast<std::size_t>(i)];
      if (li <= kTinyProb) {
        for (int a = 0; a < n_atoms; ++a)
          g[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] = Eigen::VectorXd::Zero(n_pts);
        continue;
      }
      const Eigen::VectorXd gs = energy->gradient(mass(rows[static_cast<std::size_t>(i)]));
      for (int a = 0; a < n_atoms; ++a)
        g[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] =
            li * f->atoms()[static_cast<std::size_t>(a)].w *
            gs.segment(static_cast<Eigen::Index>(a) * n_pts, n_pts);
    }
    return g;
  }
};

struct StartResult {
  double value = std::numeric_limits<double>::infinity();
  RowState rows;
  std::vector<double> lambda;
  int iterations = 0;
  bool stalled = false;
};

// Exact linear-program step in the component weights at fixed rows; the
// objective is linear in lambda and the aggregate-mean constraint is linear
// too. Returns false (leaving lambda untouched) when the LP solver reports
// anything other than a clean feasible optimum.
bool lambda_lp_step(const GridProblem& prob, const RowState& rows, std::vector<double>& lambda) {
  const int N = prob.n_comp;
  const int d = static_cast<int>(prob.ucoords.cols());
  Eigen::VectorXd c(N);
  for (int i = 0; i < N; ++i) c(i) = prob.energy->value(prob.mass(rows[static_cast<std::size_t>(i)]));
  Eigen::MatrixXd A(1 + prob.n_atoms * d, N);
  Eigen::VectorXd b(1 + prob.n_atoms * d);
  A.row(0).setOnes();
  b(0) = 1.0;
  for (int a = 0; a < prob.n_atoms; ++a)
    for (int cdim = 0; cdim < d; ++cdim) {
      const int r = 1 + a * d + cdim;
      for (int i = 0; i < N; ++i)
        A(r, i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)].dot(prob.ucoords.col(cdim));
      b(r) = prob.f->atoms()[static_cast<std::size_t>(a)].z.v(cdim);
    }
  const LpResult lp = solve_lp(c, A, b);
  if (!lp.feasible || !lp.bounded) return false;
  const double sum = lp.x.sum();
  if (std::abs(sum - 1.0) >= 1e-6 || lp.x.minCoeff() <= -1e-9) return false;
  for (int i = 0; i < N; ++i) lambda[static_cast<std::size_t>(i)] = std::max(0.0, lp.x(i)) / sum;
  return true;
}

// One-dimensional sharpening pass: re-optimize each atom row of each
// component exactly over two-point grid rows with the row's own conditional
// mean. Projected gradient tends to leave small probability dust on nodes
// adjacent to the optimal support; an exchange is accepted only when it
// strictly decreases the component energy, so the pass can only improve the
// iterate. Holding every row mean fixed keeps the aggregate-mean constraint
// satisfied without touching the weights (the weight LP afterwards may still
// rebalance them).
void polish_pairs(const GridProblem& prob, RowState& rows, std::vector<double>& lambda,
                  int sweeps) {
  if (prob.ucoords.cols() != 1) return;
  const int P = prob.n_pts;
  const Eigen::VectorXd u = prob.ucoords.col(0);
  const bool var = prob.energy->variance;
  const bool has_pair = prob.energy->pair.size() > 0;
  using Sparse = std::vector<std::pair<Eigen::Index, double>>;

  for (int sweep = 0; sweep < sweeps; ++sweep) {
    bool improved = false;
    for (int i = 0; i < prob.n_comp; ++i) {
      if (lambda[static_cast<std::size_t>(i)] <= kTinyProb) continue;
      Eigen::VectorXd s = prob.mass(rows[static_cast<std::size_t>(i)]);
      Eigen::VectorXd q = prob.energy->gradient(s);
      for (int a = 0; a < prob.n_atoms; ++a) {
        const double w = prob.f->atoms()[static_cast<std::size_t>(a)].w;
        const Eigen::VectorXd& p = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)];
        const double v0 = p.dot(u);  // this row's conditional mean, kept fixed
        const Eigen::Index block = static_cast<Eigen::Index>(a) * P;

        // mass delta d = w (theta delta_g + (1-theta) delta_h - p) and the
        // exact energy change E(s+d) - E(s) = q.d + 1/2 d'Pair d (standard)
        // or q.d - (coords.d)^2 (variance kind)
        const auto exchange = [&](int g, int h, double theta) {
          Sparse d;
          d.reserve(static_cast<std::size_t>(P) + 2);
          for (int pt = 0; pt < P; ++pt) {
            double dp = -p(pt);
            if (pt == g) dp += theta;
            if (pt == h && h != g) dp += 1.0 - theta;
            if (dp != 0.0) d.emplace_back(block + pt, w * dp);
          }
          double delta = 0.0;
          for (const auto& [idx, dm] : d) delta += q(idx) * dm;
          if (var) {
            double cdotd = 0.0;
            for (const auto& [idx, dm] : d) cdotd += prob.energy->coords(idx, 0) * dm;
            delta -= cdotd * cdotd;
          } else if (has_pair) {
            double quad = 0.0;
            for (const auto& [ri, dr] : d)
              for (const auto& [ci, dc] : d) quad += dr * prob.energy->pair(ri, ci) * dc;
            delta += 0.5 * quad;
          }
          return std::make_pair(delta, std::move(d));
        };

        double best_delta = -1e-14;
        int best_g = -1;
        int best_h = -1;
        double best_theta = 0.0;
        for (int g = 0; g < P; ++g) {
          if (u(g) > v0 + 1e-12) break;
          for (int h = g; h < P; ++h) {
            if (u(h) < v0 - 1e-12) continue;
            double theta = 1.0;
            if (h == g) {
              if (std::abs(u(g) - v0) > 1e-12) continue;
            } else {
              theta = (u(h) - v0) / (u(h) - u(g));
            }
            const double delta = exchange(g, h, theta).first;
            if (delta < best_delta) {
              best_delta = delta;
              best_g = g;
              best_h = h;
              best_theta = theta;
            }
          }
        }
        if (best_g < 0) continue;
        improved = true;
        const Sparse d = exchange(best_g, best_h, best_theta).second;
        Eigen::VectorXd& row = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)];
        row.setZero();
        row(best_g) = best_theta;
        if (best_h != best_g) row(best_h) = 1.0 - best_theta;
        for (const auto& [idx, dm] : d) s(idx) += dm;
        q = prob.energy->gradient(s);
      }
    }
    if (!improved) break;
    lambda_lp_step(prob, rows, lambda);
  }
}

// Accelerated projected gradient on the kernel rows at fixed lambda,
// alternated with an exact linear-program step in lambda. Momentum restarts
// whenever the accelerated candidate stops descending.
StartResult run_start(const GridProblem& prob, RowState rows, std::vector<double> lambda,
                      const RelaxOptions& opt) {
  StartResult out;
  prob.project(rows, lambda);
  double cur = prob.value(rows, lambda);
  out.rows = rows;
  out.lambda = lambda;
  out.value = cur;

  double maxw = 0.0;
  for (const Atom& a : prob.f->atoms()) maxw = std::max(maxw, a.w);
  const double eta0 = std::min(1e3, 1.0 / std::max(prob.energy->lipschitz * maxw * maxw, 1e-3));
  const int rounds = std::max(1, opt.lambda_rounds);
  const int per_round = std::max(10, opt.pgd_iterations / rounds);

  const auto axpy = [&](const RowState& x, double c, const RowState& y) {
    RowState r = x;
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t a = 0; a < r[i].size(); ++a) r[i][a] += c * y[i][a];
    return r;
  };

  double last_round_drop = std::numeric_limits<double>::infinity();
  for (int round = 0; round < rounds; ++round) {
    const double round_start = cur;
    double eta = eta0;
    RowState prev = rows;
    double t = 1.0;
    for (int it = 0; it < per_round; ++it) {
      ++out.iterations;
      const double beta = (t - 1.0) / (t + 2.0);
      RowState y = axpy(rows, beta, axpy(rows, -1.0, prev));  // rows + beta (rows - prev)
      RowState cand = axpy(y, -eta, prob.gradient(y, lambda));
      prob.project(cand, lambda);
      const double cval = prob.value(cand, lambda);
      if (cval <= cur - 1e-15) {
        prev = rows;
        rows = std::move(cand);
        cur = cval;
        t += 1.0;
      } else {
        t = 1.0;
        prev = rows;
        RowState plain = axpy(rows, -eta, prob.gradient(rows, lambda));
        prob.project(plain, lambda);
        const double pval = prob.value(plain, lambda);
        if (pval < cur) {
          rows = std::move(plain);
          cur = pval;
        } else {
          eta *= 0.5;
          if (eta < 1e-16) break;
        }
      }
      if (cur < out.value) {
        out.value = cur;
        out.rows = rows;
        out.lambda = lambda;
      }
    }

    // lambda step: the objective is linear in lambda at fixed rows, and the
    // aggregate-mean constraint is linear too, so the update is a tiny LP.
    if (lambda_lp_step(prob, rows, lambda)) {
      cur = prob.value(rows, lambda);
      if (cur < out.value) {
        out.value = cur;
        out.rows = rows;
        out.lambda = lambda;
      }
    }
    last_round_drop = round_start - cur;
  }

  // sharpen the best iterate: gradient steps leave probability dust near the
  // optimal support that the exact two-point exchange removes
  rows = out.rows;
  lambda = out.lambda;
  polish_pairs(prob, rows, lambda, 8);
  cur = prob.value(rows, lambda);
  if (cur < out.value) {
    out.value = cur;
    out.rows = std::move(rows);
    out.lambda = std::move(lambda);
  }

  out.stalled = last_round_drop < opt.tolerance * (1.0 + std::abs(cur));
  return out;
}

DiscreteStatistic pushforward_rows(const DiscreteStatistic& f,
                                   const std::vector<Eigen::VectorXd>& comp_rows,
                                   const std::vector<Vec>& pts) {
  std::vector<Atom> atoms;
  for (std::size_t a = 0; a < f.size(); ++a) {
    const Atom& src = f.atoms()[a];
    const Eigen::VectorXd& p = comp_rows[a];
    for (int g = 0; g < p.size(); ++g)
      if (p(g) > kTinyProb) atoms.push_back(Atom{PhasePoint{src.z.x, pts[static_cast<std::size_t>(g)]}, src.w * p(g)});
  }
  return DiscreteStatistic(std::move(atoms));
}

double mixture_value_exact(const DiscreteStatistic& f, const EnergySpec& energy,
                           const std::vector<double>& lambda, const RowState& rows,
                           const std::vector<Vec>& pts) {
  double total = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i)
    if (lambda[i] > kTinyProb)
      total += lambda[i] * phi(energy.psi, energy.interaction, pushforward_rows(f, rows[i], pts));
  return total;
}

KernelMixture build_mixture(const DiscreteStatistic& f, const std::vector<double>& lambda,
                            const RowState& rows, const std::vector<Vec>& pts) {
  KernelMixture mix;
  mix.lambda = lambda;
  for (double& l : mix.lambda) l = std::max(0.0, l);
  const double sum = std::accumulate(mix.lambda.begin(), mix.lambda.end(), 0.0);
  if (sum > 0.0)
    for (double& l : mix.lambda) l /= sum;
  for (const auto& comp : rows) {
    std::vector<KernelRow> krows;
    krows.reserve(f.size());
    for (std::size_t a = 0; a < f.size(); ++a) {
      KernelRow kr;
      double mass = 0.0;
      for (int g = 0; g < comp[a].size(); ++g)
        if (comp[a](g) > kTinyProb) {
          kr.points.push_back(pts[static_cast<std::size_t>(g)]);
          kr.probs.push_back(comp[a](g));
          mass += comp[a](g);
        }
      if (kr.points.empty()) {
        Eigen::Index gmax = 0;
        comp[a].maxCoeff(&gmax);
        kr.points.push_back(pts[static_cast<std::size_t>(gmax)]);
        kr.probs.push_back(1.0);
        mass = 1.0;
      }
      for (double& p : kr.probs) p /= mass;
      krows.push_back(std::move(kr));
    }
    mix.kernels.emplace_back(f, std::move(krows));
  }
  return mix;
}

// Identity-like rows: each atom's velocity written as the exact convex
// combination of its two bracketing grid nodes per axis (a tensor product for
// d = 2). Feasible by construction and exact when the velocity lies on the
// grid.
std::vector<Eigen::VectorXd> identity_rows(const DiscreteStatistic& f,
                                           const std::vector<double>& axis, int dim) {
  const int G = static_cast<int>(axis.size());
  const auto bracket = [&](double v) {
    int j = static_cast<int>(std::upper_bound(axis.begin(), axis.end(), v) - axis.begin()) - 1;
    j = std::clamp(j, 0, G - 2);
    const double h = axis[static_cast<std::size_t>(j + 1)] - axis[static_cast<std::size_t>(j)];
    double theta = h > 0.0 ? (axis[static_cast<std::size_t>(j + 1)] - v) / h : 1.0;
    theta = std::clamp(theta, 0.0, 1.0);
    return std::pair<int, double>(j, theta);
  };
  std::vector<Eigen::VectorXd> rows;
  rows.reserve(f.size());
  for (const Atom& a : f.atoms()) {
    const int P = dim == 1 ? G : G * G;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(P);
    if (dim == 1) {
      const auto [j, th] = bracket(a.z.v(0));
      p(j) += th;
      p(j + 1) += 1.0 - th;
    } else {
      const auto [jx, tx] = bracket(a.z.v(0));
      const auto [jy, ty] = bracket(a.z.v(1));
      p(static_cast<Eigen::Index>(jx) * G + jy) += tx * ty;
      p(static_cast<Eigen::Index>(jx) * G + jy + 1) += tx * (1.0 - ty);
      p(static_cast<Eigen::Index>(jx + 1) * G + jy) += (1.0 - tx) * ty;
      p(static_cast<Eigen::Index>(jx + 1) * G + jy + 1) += (1.0 - tx) * (1.0 - ty);
    }
    rows.push_back(std::move(p));
  }
  return rows;
}

}  // namespace

// ---- KernelMixture -----------------------------------------------------------

VelocityKernel KernelMixture::aggregate() const {
  if (kernels.empty() || lambda.size() != kernels.size())
    throw std::invalid_argument("kernel mixture needs matching weights and kernels");
  const DiscreteStatistic& src = kernels.front().source();
  std::vector<KernelRow> rows(src.size());
  double kept = 0.0;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (lambda[i] <= kTinyProb) continue;
    kept += lambda[i];
    const auto& krows = kernels[i].rows();
    if (krows.size() != src.size())
      throw std::invalid_argument("kernel mixture components must share the source");
    for (std::size_t a = 0; a < src.size(); ++a)
      for (std::size_t j = 0; j < krows[a].points.size(); ++j) {
        rows[a].points.push_back(krows[a].points[j]);
        rows[a].probs.push_back(lambda[i] * krows[a].probs[j]);
      }
  }
  if (kept <= 0.0) throw std::invalid_argument("kernel mixture has no mass");
  for (auto& row : rows)
    for (double& p : row.probs) p /= kept;
  return VelocityKernel(src, std::move(rows));
}

double KernelMixture::martingale_violation() const {
  const VelocityKernel agg = aggregate();
  const DiscreteStatistic& src = agg.source();
  double worst = 0.0;
  for (std::size_t a = 0; a < src.size(); ++a) {
    Vec mean = Vec::Zero(src.atoms()[a].z.v.size());
    for (std::size_t j = 0; j < agg.rows()[a].points.size(); ++j)
      mean += agg.rows()[a].probs[j] * agg.rows()[a].points[j];
    worst = std::max(worst, (mean - src.atoms()[a].z.v).cwiseAbs().maxCoeff());
  }
  return worst;
}

// ---- convex envelope ----------------------------------------------------------

std::vector<double> convex_envelope_1d(const std::vector<double>& grid,
                                       const std::vector<double>& values) {
  require(!grid.empty() && grid.size() == values.size(),
          "envelope needs matching nonempty grid and values");
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    require(grid[i] < grid[i + 1], "envelope grid must be strictly increasing");
  for (double v : values) require(std::isfinite(v), "envelope values must be finite");
  const int n = static_cast<int>(grid.size());
  if (n == 1) return values;
  const std::vector<int> hull = lower_hull_indices(grid, values);
  std::vector<double> env(static_cast<std::size_t>(n));
  std::size_t seg = 0;
  for (int i = 0; i < n; ++i) {
    while (seg + 1 < hull.size() && hull[seg + 1] <= i) ++seg;
    if (hull[seg] == i) {
      env[static_cast<std::size_t>(i)] = values[static_cast<std::size_t>(i)];
      continue;
    }
    const int l = hull[seg];
    const int r = hull[seg + 1];
    const double t = (grid[static_cast<std::size_t>(i)] - grid[static_cast<std::size_t>(l)]) /
                     (grid[static_cast<std::size_t>(r)] - grid[static_cast<std::size_t>(l)]);
    env[static_cast<std::size_t>(i)] =
        std::min(values[static_cast<std::size_t>(i)],
                 (1.0 - t) * values[static_cast<std::size_t>(l)] + t * values[static_cast<std::size_t>(r)]);
  }
  return env;
}

double relax_noninteracting(const DiscreteStatistic& f, const PotentialSpec& psi,
                            const VelocityGridSpec& grid) {
  require(f.size() > 0, "relaxation needs a nonempty statistic");
  require(f.dimension() == 1, "non-interacting envelope reduction is one-dimensional");
  require(grid.points >= 2, "velocity grid needs at least two points per axis");
  double maxv = 0.0;
  for (const Atom& a : f.atoms()) maxv = std::max(maxv, std::abs(a.z.v(0)));
  const double R = grid.radius > 0.0 ? grid.radius : std::max(1.0, 5.0 * maxv);
  for (const Atom& a : f.atoms())
    require(std::abs(a.z.v(0)) <= R + 1e-9, "atom velocity outside the velocity grid hull");
  const std::vector<double> axis = axis_nodes(R, grid.points);
  double total = 0.0;
  for (const Atom& a : f.atoms()) {
    std::vector<double> values(axis.size());
    Vec u(1);
    for (std::size_t g = 0; g < axis.size(); ++g) {
      u(0) = axis[g];
      values[g] = eval(psi, a.z.x, u);
    }
    const std::vector<int> hull = lower_hull_indices(axis, values);
    const HullBracket b = hull_bracket(axis, hull, a.z.v(0));
    total += a.w * (b.theta * values[static_cast<std::size_t>(b.left)] +
                    (1.0 - b.theta) * values[static_cast<std::size_t>(b.right)]);
  }
  return total;
}

// ---- relax --------------------------------------------------------------------

RelaxReport relax(const DiscreteStatistic& f, const EnergySpec& energy, VelocityGridSpec grid,
                  const RelaxOptions& options) {
  require(f.size() > 0, "relaxation needs a nonempty statistic");
  const int d = f.dimension();
  require(d == 1 || d == 2, "kernel grids support one or two dimensions");
  require(options.components >= 1, "mixture needs at least one component");
  require(grid.points >= 2, "velocity grid needs at least two points per axis");
  if (energy.is_variance_penalty() && energy.has_interaction())
    throw std::invalid_argument("the variance penalty carries no pairwise interaction");

  double maxv = 0.0;
  double maxx = 0.0;
  for (const Atom& a : f.atoms()) {
    maxv = std::max(maxv, a.z.v.cwiseAbs().maxCoeff());
    maxx = std::max(maxx, a.z.x.cwiseAbs().maxCoeff());
  }
  const double plain = phi(energy.psi, energy.interaction, f);

  double R = grid.radius;
  if (R <= 0.0) {
    // Coercive energies cannot profit from spreading beyond the radius where
    // the quadratic lower bound already exceeds the unrelaxed value.
    double coercive = 0.0;
    AuditBox box;
    box.dim = d;
    box.x_radius = std::max(1.0, maxx);
    box.v_radius = std::max(1.0, maxv);
    const GrowthAudit audit = audit_growth(energy, box, 64);
    if (audit.lower_growth_ok && audit.c_lower > 1e-9)
      coercive = std::sqrt(std::max(0.0, plain + audit.C_lower) / audit.c_lower);
    R = std::max({5.0 * maxv, coercive, 1.0});
  }
  for (const Atom& a : f.atoms())
    if (a.z.v.cwiseAbs().maxCoeff() > R + 1e-9)
      throw std::invalid_argument(
          "martingale constraint unreachable: atom velocity outside the velocity grid hull");

  const int G = grid.points;
  const std::vector<double> axis = axis_nodes(R, G);
  const std::vector<Vec> pts = velocity_grid(d, R, G);
  const int P = static_cast<int>(pts.size());
  const long cells = static_cast<long>(f.size()) * P;
  if (energy.has_interaction() && cells > 2048)
    throw std::invalid_argument("grid too large for the pairwise energy table");
  if (cells > 200000) throw std::invalid_argument("velocity grid too large");

  const GridEnergy ge = build_grid_energy(f, energy, pts);
  GridProblem prob;
  prob.energy = &ge;
  prob.f = &f;
  prob.n_comp = options.components;
  prob.n_atoms = static_cast<int>(f.size());
  prob.n_pts = P;
  prob.ucoords.resize(P, d);
  for (int g = 0; g < P; ++g) prob.ucoords.row(g) = pts[static_cast<std::size_t>(g)].transpose();

  // ---- multi-start optimization (start 0 = identity bracketing) ----
  const int starts = 1 + std::max(0, options.multistarts);
  std::vector<StartResult> results(static_cast<std::size_t>(starts));
  const auto make_start = [&](int s) {
    RowState rows(static_cast<std::size_t>(prob.n_comp));
    std::vector<double> lambda(static_cast<std::size_t>(prob.n_comp),
                               1.0 / static_cast<double>(prob.n_comp));
    if (s == 0) {
      const auto id = identity_rows(f, axis, d);
      for (auto& comp : rows) comp = id;
    } else {
      RandomStream stream(options.seed, "relax-start-" + std::to_string(s));
      for (auto& comp : rows) {
        comp.resize(f.size());
        for (auto& row : comp) {
          row.resize(P);
          for (int g = 0; g < P; ++g) row(g) = 0.01 + stream.uniform(0.0, 1.0);
          row /= row.sum();
        }
      }
      double lsum = 0.0;
      for (double& l : lambda) {
        l = 0.2 + stream.uniform(0.0, 1.0);
        lsum += l;
      }
      for (double& l : lambda) l /= lsum;
    }
    return run_start(prob, std::move(rows), std::move(lambda), options);
  };

  const int workers = thread_budget(starts);
  if (workers <= 1) {
    for (int s = 0; s < starts; ++s) results[static_cast<std::size_t>(s)] = make_start(s);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (int s = next.fetch_add(1); s < starts; s = next.fetch_add(1))
          results[static_cast<std::size_t>(s)] = make_start(s);
      });
    for (auto& th : pool) th.join();
  }

  int best = 0;
  int total_iters = 0;
  for (int s = 0; s < starts; ++s) {
    total_iters += results[static_cast<std::size_t>(s)].iterations;
    if (results[static_cast<std::size_t>(s)].value < results[static_cast<std::size_t>(best)].value) best = s;
  }
  const StartResult& opt = results[static_cast<std::size_t>(best)];
  const double val_opt = mixture_value_exact(f, energy, opt.lambda, opt.rows, pts);

  RelaxReport rep;
  rep.plain_value = plain;
  rep.grid_radius = R;
  rep.grid_points = G;
  rep.iterations = total_iters;
  rep.optimizer_value = val_opt;
  rep.converged = opt.stalled;

  rep.value = val_opt;
  rep.mixture = build_mixture(f, opt.lambda, opt.rows, pts);

  // ---- exact envelope reductions (certified grid optima) ----
  // When a certified reduction applies, it overrides the iterative value in
  // both directions: a higher iterative value is simply suboptimal, and a
  // lower one can only be numerical noise, because every admissible
  // grid-supported mixture is bounded below by the certified optimum.
  if (d == 1 && !energy.has_interaction() && !energy.is_variance_penalty()) {
    // The energy is linear in the pushforward, so the mixture collapses to
    // one kernel and the optimum is the per-atom lower envelope.
    double exact = 0.0;
    std::vector<KernelRow> rows;
    rows.reserve(f.size());
    for (std::size_t ai = 0; ai < f.size(); ++ai) {
      const Atom& a = f.atoms()[ai];
      std::vector<double> values(axis.size());
      for (std::size_t g = 0; g < axis.size(); ++g)
        values[g] = ge.base(static_cast<Eigen::Index>(ai) * static_cast<Eigen::Index>(axis.size()) +
                            static_cast<Eigen::Index>(g));
      const std::vector<int> hull = lower_hull_indices(axis, values);
      const HullBracket b = hull_bracket(axis, hull, a.z.v(0));
      exact += a.w * (b.theta * values[static_cast<std::size_t>(b.left)] +
                      (1.0 - b.theta) * values[static_cast<std::size_t>(b.right)]);
      KernelRow kr;
      kr.points.push_back(pts[static_cast<std::size_t>(b.left)]);
      if (b.right != b.left) {
        kr.points.push_back(pts[static_cast<std::size_t>(b.right)]);
        kr.probs = {b.theta, 1.0 - b.theta};
      } else {
        kr.probs = {1.0};
      }
      rows.push_back(std::move(kr));
    }
    rep.lower_bound = exact;
    rep.value = exact;
    KernelMixture mix;
    mix.lambda.assign(static_cast<std::size_t>(options.components),
                      1.0 / static_cast<double>(options.components));
    for (int i = 0; i < options.components; ++i) mix.kernels.emplace_back(f, rows);
    rep.mixture = mix;
    rep.exact_route = true;
    rep.converged = true;
  } else if (d == 1 && energy.is_variance_penalty() && f.size() == 1) {
    // Single-atom variance penalty: conditioning on the component mean m_i
    // reduces each component to envelope(phi + u^2)(m) - m^2, whose grid
    // values are just phi(u_g); one more envelope over the mean gives the
    // exact optimum, achieved by single-point components at the bracketing
    // hull vertices.
    std::vector<double> values(axis.size());
    Vec u(1);
    for (std::size_t g = 0; g < axis.size(); ++g) {
      u(0) = axis[g];
      values[g] = ge.base(static_cast<Eigen::Index>(g)) - axis[g] * axis[g];
    }
    const std::vector<int> hull = lower_hull_indices(axis, values);
    const double v0 = f.atoms()[0].z.v(0);
    const HullBracket b = hull_bracket(axis, hull, v0);
    const double exact = b.theta * values[static_cast<std::size_t>(b.left)] +
                         (1.0 - b.theta) * values[static_cast<std::size_t>(b.right)];
    rep.lower_bound = exact;
    rep.value = exact;
    const int N = std::max(options.components, 2);
    KernelMixture mix;
    mix.lambda.assign(static_cast<std::size_t>(N), 0.0);
    mix.lambda[0] = b.theta;
    mix.lambda[1] = 1.0 - b.theta;
    for (int i = 0; i < N; ++i) {
      const int vertex = (i == 1) ? b.right : b.left;
      std::vector<KernelRow> krows;
      krows.push_back(KernelRow{{pts[static_cast<std::size_t>(vertex)]}, {1.0}});
      mix.kernels.emplace_back(f, std::move(krows));
    }
    rep.mixture = mix;
    rep.exact_route = true;
    rep.converged = true;
  }

  // The exact identity mixture (kernel points off-grid are fine) guarantees
  // the relaxed value never exceeds the plain energy even when no grid node
  // matches an atom velocity.
  if (plain < rep.value) {
    rep.value = plain;
    std::vector<KernelRow> idrows;
    for (const Atom& a : f.atoms()) idrows.push_back(KernelRow{{a.z.v}, {1.0}});
    KernelMixture idmix;
    idmix.lambda.assign(static_cast<std::size_t>(options.components),
                        1.0 / static_cast<double>(options.components));
    for (int i = 0; i < options.components; ++i) idmix.kernels.emplace_back(f, idrows);
    rep.mixture = idmix;
    rep.converged = true;
  }

  rep.upper_bound = rep.value;
  rep.martingale_violation = rep.mixture.martingale_violation();
  return rep;
}

// ---- recovery ensembles --------------------------------------------------------

namespace {

struct CleanRow {
  std::vector<Vec> pts;
  std::vector<double> probs;
  Vec mean;
};

CleanRow clean_row(const KernelRow& row, int dim) {
  CleanRow out;
  double mass = 0.0;
  for (std::size_t j = 0; j < row.points.size(); ++j)
    if (row.probs[j] > 1e-15) {
      out.pts.push_back(row.points[j]);
      out.probs.push_back(row.probs[j]);
      mass += row.probs[j];
    }
  if (out.pts.empty()) throw std::invalid_argument("kernel row has no mass");
  out.mean = Vec::Zero(dim);
  for (std::size_t j = 0; j < out.pts.size(); ++j) {
    out.probs[j] /= mass;
    out.mean += out.probs[j] * out.pts[j];
  }
  return out;
}

// One copy's velocity profile over a single oscillation period, as a cyclic
// list of (duration fraction, velocity) pieces with prefix sums for O(log)
// arc integrals.
struct PeriodProfile {
  std::vector<double> cum_len;       // size pieces + 1, cum_len.back() == 1
  std::vector<Vec> cum_disp;         // prefix of len * u
  std::vector<Vec> u;                // piece velocities

  Vec disp_at(double t) const {
    const std::size_t n = u.size();
    std::size_t lo = 0, hi = n;
    while (lo + 1 < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (cum_len[mid] <= t)
        lo = mid;
      else
        hi = mid;
    }
    return cum_disp[lo] + (t - cum_len[lo]) * u[lo];
  }

  // integral of the velocity over the cyclic arc [s, s + len)
  Vec arc(double s, double len) const {
    const double e = s + len;
    if (e <= 1.0) return disp_at(e) - disp_at(s);
    return (cum_disp.back() - disp_at(s)) + disp_at(e - 1.0);
  }
};

PeriodProfile build_profile(const std::vector<std::pair<double, Vec>>& pieces) {
  PeriodProfile p;
  double total = 0.0;
  for (const auto& piece : pieces) total += piece.first;
  p.cum_len.push_back(0.0);
  Vec disp = Vec::Zero(pieces.front().second.size());
  p.cum_disp.push_back(disp);
  for (const auto& piece : pieces) {
    const double len = piece.first / total;
    p.u.push_back(piece.second);
    disp += len * piece.second;
    p.cum_len.push_back(p.cum_len.back() + len);
    p.cum_disp.push_back(disp);
  }
  p.cum_len.back() = 1.0;
  return p;
}

}  // namespace

PathEnsemble recovery_ensemble(const PathEnsemble& base, const std::vector<KernelMixture>& mixtures,
                               int oscillations, const RecoveryOptions& options) {
  require(!base.paths().empty(), "recovery needs a nonempty base ensemble");
  require(oscillations >= 1, "oscillation count must be at least 1");
  require(options.copies_per_k >= 1 && options.cells_per_period_per_k >= 3,
          "recovery options out of range");
  const TimeGrid& g = base.grid();
  const int M = g.intervals;
  require(static_cast<int>(mixtures.size()) == M, "one kernel mixture per base interval required");
  const int A = static_cast<int>(base.paths().size());
  const int d = base.dimension();
  const int k = oscillations;
  const double dt = g.dt();

  struct Component {
    double lambda = 0.0;
    std::vector<CleanRow> rows;
  };
  std::vector<std::vector<Component>> sched(static_cast<std::size_t>(M));
  bool all_singleton = true;
  for (int i = 0; i < M; ++i) {
    const KernelMixture& mix = mixtures[static_cast<std::size_t>(i)];
    require(!mix.kernels.empty() && mix.lambda.size() == mix.kernels.size(),
            "malformed kernel mixture");
    double lamsum = 0.0;
    for (double l : mix.lambda) {
      require(l > -1e-12, "mixture weights must be nonnegative");
      lamsum += std::max(0.0, l);
    }
    require(std::abs(lamsum - 1.0) < 1e-6, "mixture weights must sum to one");
    for (std::size_t j = 0; j < mix.kernels.size(); ++j) {
      const double lam = std::max(0.0, mix.lambda[j]) / lamsum;
      if (lam <= 1e-15) continue;
      require(static_cast<int>(mix.kernels[j].rows().size()) == A,
              "kernel rows must match the base path count");
      Component comp;
      comp.lambda = lam;
      comp.rows.reserve(static_cast<std::size_t>(A));
      for (int a = 0; a < A; ++a) {
        comp.rows.push_back(clean_row(mix.kernels[j].rows()[static_cast<std::size_t>(a)], d));
        if (comp.rows.back().pts.size() > 1) all_singleton = false;
      }
      sched[static_cast<std::size_t>(i)].push_back(std::move(comp));
    }
    require(!sched[static_cast<std::size_t>(i)].empty(), "mixture has no mass");
  }

  // aggregate feasibility and the uniform velocity correction per (interval, path)
  std::vector<std::vector<Vec>> shift(static_cast<std::size_t>(M),
                                      std::vector<Vec>(static_cast<std::size_t>(A)));
  for (int i = 0; i < M; ++i)
    for (int a = 0; a < A; ++a) {
      const Path& bp = base.paths()[static_cast<std::size_t>(a)];
      const Vec vbar = (bp.nodes[static_cast<std::size_t>(i + 1)] - bp.nodes[static_cast<std::size_t>(i)]) / dt;
      Vec agg = Vec::Zero(d);
      for (const Component& comp : sched[static_cast<std::size_t>(i)])
        agg += comp.lambda * comp.rows[static_cast<std::size_t>(a)].mean;
      if ((agg - vbar).cwiseAbs().maxCoeff() > 1e-6 * (1.0 + vbar.cwiseAbs().maxCoeff()))
        throw std::invalid_argument(
            "infeasible mixture: aggregate kernel mean must match the base interval velocity");
      shift[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] = vbar - agg;
    }

  const int Q = all_singleton ? 1 : options.copies_per_k * k;
  const int cpp = options.cells_per_period_per_k * k;  // cells per period
  const int settle = std::min(2, cpp - 1);
  const int S = cpp * k;  // cells per base interval
  const double total_nodes = static_cast<double>(A) * Q * (static_cast<double>(M) * S + 1.0);
  require(total_nodes <= 2e7, "recovery ensemble too large");

  const TimeGrid out_grid(g.T, M * S);
  const double cell_dt = out_grid.dt();
  const int window_cells = cpp - settle;
  const double window_seconds = window_cells * cell_dt;
  const double golden = 0.6180339887498949;
  const double silver = 0.41421356237309503;

  std::vector<Path> out_paths;
  out_paths.reserve(static_cast<std::size_t>(A) * static_cast<std::size_t>(Q));
  for (int a = 0; a < A; ++a) {
    const Path& bp = base.paths()[static_cast<std::size_t>(a)];
    for (int q = 0; q < Q; ++q) {
      Path cp;
      cp.w = bp.w / static_cast<double>(Q);
      cp.nodes.reserve(static_cast<std::size_t>(M) * static_cast<std::size_t>(S) + 1);
      cp.nodes.push_back(bp.nodes[0]);
      for (int i = 0; i < M; ++i) {
        const Vec& x0 = bp.nodes[static_cast<std::size_t>(i)];
        const Vec& x1 = bp.nodes[static_cast<std::size_t>(i + 1)];
        const Vec vbar = (x1 - x0) / dt;
        const Vec& corr = shift[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)];

        // cyclic velocity profile of this copy: components in schedule order,
        // each row realized by time fractions rotated by the copy phase
        std::vector<std::pair<double, Vec>> pieces;
        for (const Component& comp : sched[static_cast<std::size_t>(i)]) {
          const CleanRow& row = comp.rows[static_cast<std::size_t>(a)];
          if (row.pts.size() == 1) {
            pieces.emplace_back(comp.lambda, Vec(row.pts[0] + corr));
            continue;
          }
          // walk the row layout cyclically starting at the copy phase: the
          // tail of the segment containing the phase, the remaining segments
          // in order with wraparound, then the head of the starting segment
          const double phase = static_cast<double>(q) / static_cast<double>(Q);
          const std::size_t nseg = row.probs.size();
          std::vector<double> cum(nseg + 1, 0.0);
          for (std::size_t j = 0; j < nseg; ++j) cum[j + 1] = cum[j] + row.probs[j];
          cum[nseg] = 1.0;
          std::size_t start = 0;
          while (start + 1 < nseg && cum[start + 1] <= phase) ++start;
          const auto add = [&](double len, const Vec& u) {
            if (len > 1e-16) pieces.emplace_back(comp.lambda * len, Vec(u + corr));
          };
          add(cum[start + 1] - phase, row.pts[start]);
          for (std::size_t off = 1; off < nseg; ++off) {
            const std::size_t seg = (start + off) % nseg;
            add(cum[seg + 1] - cum[seg], row.pts[seg]);
          }
          add(phase - cum[start], row.pts[start]);
        }
        const PeriodProfile profile = build_profile(pieces);

        for (int m = 0; m < k; ++m) {
          const Vec anchor = x0 + (x1 - x0) * (static_cast<double>(m) / k);
          Vec pos = anchor;
          const double rho = wrap01(golden + silver * static_cast<double>(i * k + m));
          for (int c = 0; c < cpp; ++c) {
            if (c == cpp - 1) {
              pos = x0 + (x1 - x0) * (static_cast<double>(m + 1) / k);
            } else if (c < settle) {
              pos += vbar * cell_dt;
            } else {
              const double w0 = static_cast<double>(c - settle) / window_cells;
              const double w1 = static_cast<double>(c + 1 - settle) / window_cells;
              pos += profile.arc(wrap01(w0 + rho), w1 - w0) * window_seconds;
            }
            cp.nodes.push_back(pos);
          }
        }
      }
      out_paths.push_back(std::move(cp));
    }
  }
  return PathEnsemble(out_grid, std::move(out_paths));
}

// ---- convex order ---------------------------------------------------------------

ConvexOrderResult convex_order_check(const DiscreteStatistic& f, const DiscreteStatistic& g) {
  require(f.size() > 0 && g.size() > 0, "convex order needs nonempty statistics");
  require(f.dimension() == g.dimension(), "convex order needs matching dimensions");
  const int d = f.dimension();
  const double postol = 1e-9;

  // group atoms by shared positions
  std::vector<Vec> positions;
  std::vector<std::vector<int>> fgroup, ggroup;
  const auto find_pos = [&](const Vec& x) {
    for (std::size_t p = 0; p < positions.size(); ++p)
      if ((positions[p] - x).cwiseAbs().maxCoeff() <= postol) return static_cast<int>(p);
    return -1;
  };
  for (std::size_t a = 0; a < f.size(); ++a) {
    int p = find_pos(f.atoms()[a].z.x);
    if (p < 0) {
      positions.push_back(f.atoms()[a].z.x);
      fgroup.emplace_back();
      ggroup.emplace_back();
      p = static_cast<int>(positions.size()) - 1;
    }
    fgroup[static_cast<std::size_t>(p)].push_back(static_cast<int>(a));
  }
  for (std::size_t b = 0; b < g.size(); ++b) {
    const int p = find_pos(g.atoms()[b].z.x);
    if (p < 0) throw std::invalid_argument("convex order requires a shared position marginal");
    ggroup[static_cast<std::size_t>(p)].push_back(static_cast<int>(b));
  }
  for (std::size_t p = 0; p < positions.size(); ++p) {
    double wf = 0.0, wg = 0.0;
    for (int a : fgroup[p]) wf += f.atoms()[static_cast<std::size_t>(a)].w;
    for (int b : ggroup[p]) wg += g.atoms()[static_cast<std::size_t>(b)].w;
    if (std::abs(wf - wg) > 1e-7)
      throw std::invalid_argument("convex order requires a shared position marginal");
  }

  // transport feasibility: martingale kernel from f to g within each group
  std::vector<std::pair<int, int>> vars;  // (f atom, g atom)
  for (std::size_t p = 0; p < positions.size(); ++p)
    for (int a : fgroup[p])
      for (int b : ggroup[p]) vars.emplace_back(a, b);
  const int nv = static_cast<int>(vars.size());
  const int nf = static_cast<int>(f.size());
  const int ng = static_cast<int>(g.size());
  Eigen::MatrixXd Aeq = Eigen::MatrixXd::Zero(nf + ng + nf * d, nv);
  Eigen::VectorXd beq(nf + ng + nf * d);
  for (int a = 0; a < nf; ++a) beq(a) = f.atoms()[static_cast<std::size_t>(a)].w;
  for (int b = 0; b < ng; ++b) beq(nf + b) = g.atoms()[static_cast<std::size_t>(b)].w;
  for (int a = 0; a < nf; ++a)
    for (int c = 0; c < d; ++c)
      beq(nf + ng + a * d + c) =
          f.atoms()[static_cast<std::size_t>(a)].w * f.atoms()[static_cast<std::size_t>(a)].z.v(c);
  for (int j = 0; j < nv; ++j) {
    const auto [a, b] = vars[static_cast<std::size_t>(j)];
    Aeq(a, j) = 1.0;
    Aeq(nf + b, j) = 1.0;
    for (int c = 0; c < d; ++c)
      Aeq(nf + ng + a * d + c, j) = g.atoms()[static_cast<std::size_t>(b)].z.v(c);
  }
  const LpResult lp = solve_lp(Eigen::VectorXd::Zero(nv), Aeq, beq, 1e-9);

  ConvexOrderResult out;
  if (lp.feasible) {
    out.ordered = true;
    out.certificate = "martingale transport witness";
    std::vector<KernelRow> rows(static_cast<std::size_t>(nf));
    for (int j = 0; j < nv; ++j) {
      const auto [a, b] = vars[static_cast<std::size_t>(j)];
      const double t = lp.x(j);
      if (t > 1e-12) {
        rows[static_cast<std::size_t>(a)].points.push_back(g.atoms()[static_cast<std::size_t>(b)].z.v);
        rows[static_cast<std::size_t>(a)].probs.push_back(t / f.atoms()[static_cast<std::size_t>(a)].w);
      }
    }
    for (std::size_t a = 0; a < rows.size(); ++a) {
      if (rows[a].points.empty()) {
        rows[a].points.push_back(f.atoms()[a].z.v);
        rows[a].probs.push_back(1.0);
        continue;
      }
      const double mass = std::accumulate(rows[a].probs.begin(), rows[a].probs.end(), 0.0);
      for (double& prob : rows[a].probs) prob /= mass;
    }
    out.witness = VelocityKernel(f, std::move(rows));
    return out;
  }

  out.ordered = false;
  // human-readable separation: conditional means first, then max-affine cones
  for (std::size_t p = 0; p < positions.size(); ++p) {
    Vec mf = Vec::Zero(d), mg = Vec::Zero(d);
    for (int a : fgroup[p]) mf += f.atoms()[static_cast<std::size_t>(a)].w * f.atoms()[static_cast<std::size_t>(a)].z.v;
    for (int b : ggroup[p]) mg += g.atoms()[static_cast<std::size_t>(b)].w * g.atoms()[static_cast<std::size_t>(b)].z.v;
    if ((mf - mg).cwiseAbs().maxCoeff() > 1e-9) {
      out.certificate = "conditional mean differs at a shared position (linear test functions separate)";
      return out;
    }
  }
  std::vector<Vec> dirs;
  if (d == 1) {
    Vec e(1);
    e(0) = 1.0;
    dirs.push_back(e);
  } else {
    for (int j = 0; j < 8; ++j) {
      Vec e = Vec::Zero(d);
      const double ang = 3.141592653589793 * j / 8.0;
      e(0) = std::cos(ang);
      e(1) = std::sin(ang);
      dirs.push_back(e);
    }
  }
  std::vector<Vec> anchors;
  for (const Atom& a : f.atoms()) anchors.push_back(a.z.v);
  for (const Atom& b : g.atoms()) anchors.push_back(b.z.v);
  for (const Vec& anchor : anchors)
    for (const Vec& dir : dirs) {
      double sf = 0.0, sg = 0.0;
      for (const Atom& a : f.atoms()) sf += a.w * std::abs(dir.dot(a.z.v - anchor));
      for (const Atom& b : g.atoms()) sg += b.w * std::abs(dir.dot(b.z.v - anchor));
      if (sf > sg + 1e-10) {
        std::ostringstream text;
        text << "cone test |a.(v - c)| integrates to " << sf << " against the left statistic but "
             << sg << " against the right one";
        out.certificate = text.str();
        return out;
      }
    }
  out.certificate = "no martingale transport exists (transport feasibility program infeasible)";
  return out;
}

}  // namespace mfa
