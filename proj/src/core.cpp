#include "mfa/core.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mfa {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

DiscreteStatistic::DiscreteStatistic(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
  require(!atoms_.empty(), "statistic needs at least one atom");
  const auto d = atoms_[0].z.x.size();
  double total = 0.0;
  for (const auto& a : atoms_) {
    require(a.z.x.size() == d && a.z.v.size() == d, "statistic atoms must share one dimension");
    require(a.w >= 0.0 && std::isfinite(a.w), "atom weights must be finite and nonnegative");
    total += a.w;
  }
  require(std::abs(total - 1.0) <= 1e-6, "atom weights must sum to 1 (got " + std::to_string(total) + ")");
  for (auto& a : atoms_) a.w /= total;
}

TimeGrid::TimeGrid(double horizon, int m) : T(horizon), intervals(m) {
  if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("time horizon must be positive");
  if (intervals < 1) throw std::invalid_argument("time grid needs at least one interval");
}

PathEnsemble::PathEnsemble(TimeGrid grid, std::vector<Path> paths)
    : grid_(grid), paths_(std::move(paths)) {
  require(!paths_.empty(), "ensemble needs at least one path");
  const std::size_t n_nodes = static_cast<std::size_t>(grid_.intervals) + 1;
  const auto d = paths_[0].nodes.at(0).size();
  double total = 0.0;
  for (const auto& p : paths_) {
    require(p.nodes.size() == n_nodes, "every path must have one node per grid time");
    for (const auto& y : p.nodes) require(y.size() == d, "path nodes must share one dimension");
    require(p.w >= 0.0 && std::isfinite(p.w), "path weights must be finite and nonnegative");
    total += p.w;
  }
  require(std::abs(total - 1.0) <= 1e-6, "path weights must sum to 1");
  for (auto& p : paths_) p.w /= total;
}

EndpointCoupling::EndpointCoupling(std::vector<EndpointPair> pairs) : pairs_(std::move(pairs)) {
  require(!pairs_.empty(), "coupling needs at least one endpoint pair");
  const auto d = pairs_[0].x0.size();
  double total = 0.0;
  for (const auto& p : pairs_) {
    require(p.x0.size() == d && p.xT.size() == d, "endpoint pairs must share one dimension");
    require(p.w >= 0.0 && std::isfinite(p.w), "pair weights must be finite and nonnegative");
    total += p.w;
  }
  require(std::abs(total - 1.0) <= 1e-6, "pair weights must sum to 1");
  for (auto& p : pairs_) p.w /= total;
}

VelocityKernel::VelocityKernel(DiscreteStatistic source, std::vector<KernelRow> rows)
    : source_(std::move(source)), rows_(std::move(rows)) {
  require(rows_.size() == source_.size(), "kernel needs exactly one row per source atom");
  const int d = source_.dimension();
  for (auto& row : rows_) {
    require(!row.points.empty() && row.points.size() == row.probs.size(),
            "kernel row needs matching nonempty point/probability lists");
    double total = 0.0;
    for (std::size_t j = 0; j < row.points.size(); ++j) {
      require(row.points[j].size() == d, "kernel row points must match source dimension");
      require(row.probs[j] >= 0.0 && std::isfinite(row.probs[j]),
              "kernel probabilities must be finite and nonnegative");
      total += row.probs[j];
    }
    require(std::abs(total - 1.0) <= 1e-6, "kernel row probabilities must sum to 1");
    for (auto& p : row.probs) p /= total;
  }
}

DiscreteStatistic statistic_at_interval(const PathEnsemble& ens, int interval) {
  if (interval < 0 || interval >= ens.grid().intervals)
    throw std::out_of_range("interval index outside grid");
  const double dt = ens.grid().dt();
  std::vector<Atom> atoms;
  atoms.reserve(ens.paths().size());
  for (const auto& p : ens.paths()) {
    const Vec& a = p.nodes[interval];
    const Vec& b = p.nodes[interval + 1];
    atoms.push_back({{a, (b - a) / dt}, p.w});
  }
  return DiscreteStatistic(std::move(atoms));
}

DiscreteStatistic apply_kernel(const DiscreteStatistic& f, const VelocityKernel& k) {
  if (f.size() != k.source().size())
    throw std::invalid_argument("kernel/statistic atom mismatch: different atom counts");
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto& a = f.atoms()[i].z;
    const auto& s = k.source().atoms()[i].z;
    if (a.x != s.x || a.v != s.v)
      throw std::invalid_argument("kernel/statistic atom mismatch: atom " + std::to_string(i));
  }
  std::vector<Atom> out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto& a = f.atoms()[i];
    const auto& row = k.rows()[i];
    for (std::size_t j = 0; j < row.points.size(); ++j) {
      if (row.probs[j] == 0.0) continue;
      out.push_back({{a.z.x, row.points[j]}, a.w * row.probs[j]});
    }
  }
  return DiscreteStatistic(std::move(out));
}

bool is_martingale(const VelocityKernel& k, double tol) {
  for (std::size_t i = 0; i < k.rows().size(); ++i) {
    const auto& row = k.rows()[i];
    Vec mean = Vec::Zero(k.source().dimension());
    for (std::size_t j = 0; j < row.points.size(); ++j) mean += row.probs[j] * row.points[j];
    const Vec diff = mean - k.source().atoms()[i].z.v;
    if (diff.cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

double moment(const DiscreteStatistic& f, double order, bool position) {
  if (order < 1.0) throw std::invalid_argument("moment order must be >= 1");
  double s = 0.0;
  for (const auto& a : f.atoms()) {
    const double n = position ? a.z.x.norm() : a.z.v.norm();
    s += a.w * std::pow(n, order);
  }
  return s;
}

PathEnsemble straight_line_ensemble(const EndpointCoupling& coupling, const TimeGrid& grid) {
  std::vector<Path> paths;
  paths.reserve(coupling.pairs().size());
  for (const auto& pr : coupling.pairs()) {
    Path p;
    p.w = pr.w;
    p.nodes.reserve(grid.intervals + 1);
    for (int i = 0; i <= grid.intervals; ++i) {
      const double s = static_cast<double>(i) / grid.intervals;
      p.nodes.push_back((1.0 - s) * pr.x0 + s * pr.xT);
    }
    // Endpoints are kept bit-exact rather than through the affine blend.
    p.nodes.front() = pr.x0;
    p.nodes.back() = pr.xT;
    paths.push_back(std::move(p));
  }
  return PathEnsemble(grid, std::move(paths));
}

}  // namespace mfa
