#include "mfa/cli.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfa/action.hpp"
#include "mfa/core.hpp"
#include "mfa/io.hpp"
#include "mfa/nbody.hpp"
#include "mfa/ot_hjb.hpp"
#include "mfa/potentials.hpp"
#include "mfa/relaxation.hpp"
#include "mfa/vlasov.hpp"

namespace mfa {

namespace {

using nlohmann::json;

void config_error(const std::string& msg) { throw std::invalid_argument(msg); }

// Strict schema: every object is checked against its allowed key set, so
// typos fail loudly instead of silently falling back to defaults.
void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) config_error("config section '" + where + "' must be a JSON object");
  for (const auto& item : obj.items())
    if (!allowed.count(item.key()))
      config_error("unknown config field '" + item.key() + "' in " + where);
}

double get_double(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) config_error("missing config field '" + key + "' in " + where);
  if (!obj.at(key).is_number()) config_error("config field '" + key + "' must be a number");
  return obj.at(key).get<double>();
}

double get_double_or(const json& obj, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number()) config_error("config field '" + key + "' must be a number");
  return obj.at(key).get<double>();
}

int get_int(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) config_error("missing config field '" + key + "' in " + where);
  if (!obj.at(key).is_number_integer()) config_error("config field '" + key + "' must be an integer");
  return obj.at(key).get<int>();
}

int get_int_or(const json& obj, const std::string& key, int fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number_integer()) config_error("config field '" + key + "' must be an integer");
  return obj.at(key).get<int>();
}

bool get_bool_or(const json& obj, const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) config_error("config field '" + key + "' must be a boolean");
  return obj.at(key).get<bool>();
}

Vec get_vec(const json& arr, int dim, const std::string& where) {
  if (!arr.is_array()) config_error("config field '" + where + "' must be an array of numbers");
  if (dim >= 0 && static_cast<int>(arr.size()) != dim)
    config_error("config field '" + where + "' must have " + std::to_string(dim) + " entries");
  Vec v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) config_error("config field '" + where + "' must contain numbers");
    v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  }
  return v;
}

std::vector<double> get_double_list(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.empty())
    config_error("config field '" + where + "' must be a nonempty array of numbers");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& x : arr) {
    if (!x.is_number()) config_error("config field '" + where + "' must contain numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

PotentialSpec parse_potential(const json& obj, const std::string& where) {
  if (!obj.is_object() || !obj.contains("kind") || !obj.at("kind").is_string())
    config_error("config section '" + where + "' needs a string field 'kind'");
  const std::string kind = obj.at("kind").get<std::string>();
  if (kind == "quadratic_kinetic") {
    check_keys(obj, {"kind"}, where);
    return PotentialSpec::QuadraticKinetic();
  }
  if (kind == "quadratic_position") {
    check_keys(obj, {"kind", "kappa"}, where);
    return PotentialSpec::QuadraticPosition(get_double(obj, "kappa", where));
  }
  if (kind == "gaussian_congestion") {
    check_keys(obj, {"kind"}, where);
    return PotentialSpec::GaussianCongestion();
  }
  if (kind == "flocking") {
    check_keys(obj, {"kind", "kappa", "c"}, where);
    return PotentialSpec::Flocking(get_double(obj, "kappa", where), get_double(obj, "c", where));
  }
  if (kind == "two_well") {
    check_keys(obj, {"kind"}, where);
    return PotentialSpec::TwoWell();
  }
  if (kind == "two_well_interaction") {
    check_keys(obj, {"kind", "alpha"}, where);
    return PotentialSpec::TwoWellInteraction(get_double(obj, "alpha", where));
  }
  if (kind == "variance_penalty") {
    check_keys(obj, {"kind"}, where);
    return PotentialSpec::VariancePenalty();
  }
  if (kind == "custom") {
    check_keys(obj, {"kind", "terms"}, where);
    if (!obj.contains("terms") || !obj.at("terms").is_array())
      config_error("custom potential needs an array field 'terms'");
    std::vector<CustomTerm> terms;
    for (const auto& t : obj.at("terms")) {
      check_keys(t, {"coef", "px", "pv", "gauss_x", "gauss_v"}, where + ".terms");
      CustomTerm term;
      term.coef = get_double(t, "coef", where + ".terms");
      if (t.contains("px"))
        for (const auto& e : t.at("px")) term.px.push_back(e.get<int>());
      if (t.contains("pv"))
        for (const auto& e : t.at("pv")) term.pv.push_back(e.get<int>());
      term.gauss_x = get_double_or(t, "gauss_x", 0.0);
      term.gauss_v = get_double_or(t, "gauss_v", 0.0);
      terms.push_back(std::move(term));
    }
    return PotentialSpec::Custom(std::move(terms));
  }
  config_error("unknown potential kind '" + kind + "' in " + where);
  return PotentialSpec::QuadraticKinetic();  // unreachable
}

std::optional<PotentialSpec> parse_interaction(const json& cfg) {
  if (!cfg.contains("interaction") || cfg.at("interaction").is_null()) return std::nullopt;
  return parse_potential(cfg.at("interaction"), "interaction");
}

DiscreteStatistic parse_atoms(const json& arr, int dim, const std::string& where) {
  if (!arr.is_array() || arr.empty())
    config_error("config field '" + where + "' must be a nonempty array");
  std::vector<Atom> atoms;
  for (const auto& a : arr) {
    check_keys(a, {"x", "v", "weight"}, where);
    Atom atom;
    atom.z.x = get_vec(a.at("x"), dim, where + ".x");
    atom.z.v = get_vec(a.at("v"), dim, where + ".v");
    atom.w = get_double(a, "weight", where);
    atoms.push_back(std::move(atom));
  }
  return DiscreteStatistic(std::move(atoms));
}

EndpointCoupling parse_endpoints(const json& arr, int dim) {
  if (!arr.is_array() || arr.empty())
    config_error("config field 'endpoints' must be a nonempty array");
  std::vector<EndpointPair> pairs;
  for (const auto& p : arr) {
    check_keys(p, {"x0", "xT", "weight"}, "endpoints");
    EndpointPair pair;
    pair.x0 = get_vec(p.at("x0"), dim, "endpoints.x0");
    pair.xT = get_vec(p.at("xT"), dim, "endpoints.xT");
    pair.w = get_double(p, "weight", "endpoints");
    pairs.push_back(std::move(pair));
  }
  return EndpointCoupling(std::move(pairs));
}

OptimizeOptions parse_optimizer(const json& cfg) {
  OptimizeOptions opts;
  if (!cfg.contains("optimizer")) return opts;
  const json& o = cfg.at("optimizer");
  check_keys(o, {"gtol", "max_iter", "memory", "armijo", "backtrack", "max_line_steps"},
             "optimizer");
  opts.gtol = get_double_or(o, "gtol", opts.gtol);
  opts.max_iter = get_int_or(o, "max_iter", opts.max_iter);
  opts.memory = get_int_or(o, "memory", opts.memory);
  opts.armijo = get_double_or(o, "armijo", opts.armijo);
  opts.backtrack = get_double_or(o, "backtrack", opts.backtrack);
  opts.max_line_steps = get_int_or(o, "max_line_steps", opts.max_line_steps);
  return opts;
}

TimeGrid parse_time(const json& cfg, const std::string& where) {
  return TimeGrid(get_double(cfg, "horizon", where), get_int(cfg, "intervals", where));
}

void write_json(const std::filesystem::path& path, const json& doc) {
  write_file_atomic(path.string(), doc.dump(2) + "\n");
}

// ---- commands -------------------------------------------------------------------

void cmd_optimize(const json& cfg, const std::filesystem::path& out, std::uint64_t seed) {
  check_keys(cfg,
             {"command", "seed", "potential", "interaction", "dimension", "horizon", "intervals",
              "endpoints", "optimizer"},
             "config");
  const int dim = get_int(cfg, "dimension", "config");
  const PotentialSpec psi = parse_potential(cfg.at("potential"), "potential");
  const std::optional<PotentialSpec> inter = parse_interaction(cfg);
  const EndpointCoupling coupling = parse_endpoints(cfg.at("endpoints"), dim);
  const TimeGrid grid = parse_time(cfg, "config");
  const OptimizeReport rep = optimize(coupling, grid, psi, inter, parse_optimizer(cfg));
  const ActionValue value = action(rep.ensemble, psi, inter);

  write_file_atomic((out / "trajectories.csv").string(), ensemble_to_csv(rep.ensemble));
  json report;
  report["command"] = "optimize";
  report["seed"] = seed;
  report["action"] = {{"total", value.total},
                      {"kinetic", value.kinetic},
                      {"interaction", value.interaction}};
  report["initial_action"] = rep.initial_action;
  report["final_action"] = rep.final_action;
  report["iterations"] = rep.iterations;
  report["converged"] = rep.converged;
  report["grad_norm"] = rep.grad_norm;
  report["el_residual"] = rep.el_residual;
  write_json(out / "report.json", report);
}

void cmd_vlasov(const json& cfg, const std::filesystem::path& out, std::uint64_t seed) {
  check_keys(cfg,
             {"command", "seed", "potential", "interaction", "dimension", "horizon", "intervals",
              "initial", "fixed_point_tolerance", "max_picard"},
             "config");
  const int dim = get_int(cfg, "dimension", "config");
  const PotentialSpec psi = parse_potential(cfg.at("potential"), "potential");
  const std::optional<PotentialSpec> inter = parse_interaction(cfg);
  const DiscreteStatistic f0 = parse_atoms(cfg.at("initial"), dim, "initial");
  const TimeGrid grid = parse_time(cfg, "config");
  const double fptol = get_double_or(cfg, "fixed_point_tolerance", 1e-12);
  const int max_picard = get_int_or(cfg, "max_picard", 60);
  const CharacteristicFlow flow = dobrushin_solve(f0, grid, psi, inter, fptol, max_picard);

  std::vector<Path> paths;
  for (std::size_t k = 0; k < f0.size(); ++k) {
    Path path;
    path.w = f0.atoms()[k].w;
    for (int i = 0; i <= grid.intervals; ++i)
      path.nodes.push_back(flow.x[static_cast<std::size_t>(i)][k]);
    paths.push_back(std::move(path));
  }
  const PathEnsemble ensemble(grid, std::move(paths));

  const auto momentum = [&](int node) {
    const DiscreteStatistic f = statistic_at_node(flow, node);
    Vec m = Vec::Zero(dim);
    for (const Atom& a : f.atoms()) m += a.w * a.z.v;
    return m;
  };
  double drift = 0.0;
  const Vec m0 = momentum(0);
  for (int i = 1; i <= grid.intervals; ++i)
    drift = std::max(drift, (momentum(i) - m0).cwiseAbs().maxCoeff());

  write_file_atomic((out / "trajectories.csv").string(), ensemble_to_csv(ensemble));
  json report;
  report["command"] = "vlasov";
  report["seed"] = seed;
  report["picard_iterations"] = flow.picard_iterations;
  report["sub_horizons"] = flow.sub_horizons;
  report["last_contraction"] = flow.last_contraction;
  report["max_recovery_residual"] = flow.max_recovery_residual;
  report["momentum_drift"] = drift;
  write_json(out / "report.json", report);
}

void cmd_relax(const json& cfg, const std::filesystem::path& out, std::uint64_t seed) {
  check_keys(cfg, {"command", "seed", "potential", "interaction", "statistic", "grid", "relaxation"},
             "config");
  const PotentialSpec psi = parse_potential(cfg.at("potential"), "potential");
  const EnergySpec energy{psi, parse_interaction(cfg)};
  const DiscreteStatistic f = parse_atoms(cfg.at("statistic"), -1, "statistic");

  VelocityGridSpec grid;
  if (cfg.contains("grid")) {
    check_keys(cfg.at("grid"), {"radius", "points"}, "grid");
    grid.radius = get_double_or(cfg.at("grid"), "radius", grid.radius);
    grid.points = get_int_or(cfg.at("grid"), "points", grid.points);
  }
  RelaxOptions opts;
  opts.seed = seed;
  if (cfg.contains("relaxation")) {
    const json& r = cfg.at("relaxation");
    check_keys(r, {"components", "multistarts", "pgd_iterations", "lambda_rounds", "tolerance"},
               "relaxation");
    opts.components = get_int_or(r, "components", opts.components);
    opts.multistarts = get_int_or(r, "multistarts", opts.multistarts);
    opts.pgd_iterations = get_int_or(r, "pgd_iterations", opts.pgd_iterations);
    opts.lambda_rounds = get_int_or(r, "lambda_rounds", opts.lambda_rounds);
    opts.tolerance = get_double_or(r, "tolerance", opts.tolerance);
  }
  const RelaxReport rep = relax(f, energy, grid, opts);

  json mixture;
  mixture["lambda"] = rep.mixture.lambda;
  json comps = json::array();
  for (const VelocityKernel& kernel : rep.mixture.kernels) {
    json rows = json::array();
    for (const KernelRow& row : kernel.rows()) {
      json points = json::array();
      for (const Vec& pt : row.points) {
        json coords = json::array();
        for (Eigen::Index c = 0; c < pt.size(); ++c) coords.push_back(pt(c));
        points.push_back(coords);
      }
      rows.push_back(json{{"points", points}, {"probs", row.probs}});
    }
    comps.push_back(rows);
  }
  mixture["components"] = comps;

  json report;
  report["command"] = "relax";
  report["seed"] = seed;
  report["value"] = rep.value;
  report["plain_value"] = rep.plain_value;
  report["upper_bound"] = rep.upper_bound;
  if (rep.lower_bound)
    report["lower_bound"] = *rep.lower_bound;
  else
    report["lower_bound"] = nullptr;
  report["grid_radius"] = rep.grid_radius;
  report["grid_points"] = rep.grid_points;
  report["iterations"] = rep.iterations;
  report["optimizer_value"] = rep.optimizer_value;
  report["martingale_violation"] = rep.martingale_violation;
  report["converged"] = rep.converged;
  report["exact_route"] = rep.exact_route;
  report["mixture"] = mixture;
  write_json(out / "report.json", report);
}

void cmd_converge(const json& cfg, const std::filesystem::path& out, std::uint64_t seed) {
  check_keys(cfg,
             {"command", "seed", "potential", "interaction", "dimension", "horizon", "intervals",
              "particle_counts", "scenario", "optimizer"},
             "config");
  const int dim = get_int(cfg, "dimension", "config");
  const PotentialSpec psi = parse_potential(cfg.at("potential"), "potential");
  const std::optional<PotentialSpec> inter = parse_interaction(cfg);
  const TimeGrid grid = parse_time(cfg, "config");

  if (!cfg.contains("particle_counts") || !cfg.at("particle_counts").is_array())
    config_error("config field 'particle_counts' must be an array of integers");
  std::vector<int> counts;
  for (const auto& n : cfg.at("particle_counts")) counts.push_back(n.get<int>());

  double x0_spread = 1.0, xT_spread = 1.0;
  Vec shift = Vec::Zero(dim);
  if (cfg.contains("scenario")) {
    const json& s = cfg.at("scenario");
    check_keys(s, {"x0_spread", "xT_spread", "xT_shift"}, "scenario");
    x0_spread = get_double_or(s, "x0_spread", x0_spread);
    xT_spread = get_double_or(s, "xT_spread", xT_spread);
    if (s.contains("xT_shift")) shift = get_vec(s.at("xT_shift"), dim, "scenario.xT_shift");
  }
  const EndpointSampler sampler = [dim, x0_spread, xT_spread, shift](RandomStream& rs) {
    EndpointPair pair;
    pair.x0.resize(dim);
    pair.xT.resize(dim);
    for (int c = 0; c < dim; ++c) pair.x0(c) = x0_spread * rs.normal();
    for (int c = 0; c < dim; ++c) pair.xT(c) = shift(c) + xT_spread * rs.normal();
    pair.w = 1.0;
    return pair;
  };
  const ConvergenceTable table =
      convergence_experiment(sampler, counts, grid, psi, inter, seed, parse_optimizer(cfg));

  json rows = json::array();
  for (const ConvergenceRow& row : table.rows)
    rows.push_back(json{{"n_small", row.n_small},
                        {"n_large", row.n_large},
                        {"distance_sq_integral", row.distance_sq_integral}});
  json report;
  report["command"] = "converge";
  report["seed"] = seed;
  report["rows"] = rows;
  report["monotone"] = table.monotone;
  write_json(out / "report.json", report);
}

void cmd_hjb(const json& cfg, const std::filesystem::path& out, std::uint64_t seed) {
  check_keys(cfg,
             {"command", "seed", "potential", "interaction", "space", "horizon", "intervals",
              "mu0", "muT", "free_endpoint", "optimizer"},
             "config");
  const PotentialSpec psi = parse_potential(cfg.at("potential"), "potential");
  const EnergySpec energy{psi, parse_interaction(cfg)};
  if (!cfg.contains("space")) config_error("missing config section 'space'");
  const json& space = cfg.at("space");
  check_keys(space, {"lo", "hi", "cells"}, "space");
  const double lo = get_double(space, "lo", "space");
  const double hi = get_double(space, "hi", "space");
  const int cells = get_int(space, "cells", "space");
  const TimeGrid grid = parse_time(cfg, "config");
  const std::vector<double> mu0 = get_double_list(cfg.at("mu0"), "mu0");
  const std::vector<double> muT = get_double_list(cfg.at("muT"), "muT");

  FreeEndpointOptions opts;
  opts.optimize = parse_optimizer(cfg);
  if (cfg.contains("free_endpoint")) {
    const json& fe = cfg.at("free_endpoint");
    check_keys(fe, {"particles", "force_particles", "quantile_atoms_per_cell"}, "free_endpoint");
    opts.particles = get_int_or(fe, "particles", opts.particles);
    opts.force_particles = get_bool_or(fe, "force_particles", opts.force_particles);
    opts.quantile_atoms_per_cell =
        get_int_or(fe, "quantile_atoms_per_cell", opts.quantile_atoms_per_cell);
  }
  const EulerianField1D field = solve_free_endpoint(mu0, muT, lo, hi, cells, grid, energy, opts);
  const double act = eulerian_action(field, energy);
  const HJBReport rep = hjb_residual(field, energy);

  write_file_atomic((out / "field.csv").string(), field_to_csv(field));
  json report;
  report["command"] = "hjb";
  report["seed"] = seed;
  report["action"] = act;
  report["continuity_defect"] = field.continuity_defect;
  report["max_deviation"] = rep.max_deviation;
  report["c"] = rep.c;
  report["components"] = rep.components;
  write_json(out / "report.json", report);
}

void cmd_audit(const json& cfg, const std::filesystem::path& out, std::uint64_t seed) {
  check_keys(cfg, {"command", "seed", "potential", "interaction", "box", "samples"}, "config");
  const PotentialSpec psi = parse_potential(cfg.at("potential"), "potential");
  const std::optional<PotentialSpec> inter = parse_interaction(cfg);
  AuditBox box;
  if (cfg.contains("box")) {
    const json& b = cfg.at("box");
    check_keys(b, {"dimension", "x_radius", "v_radius"}, "box");
    box.dim = get_int_or(b, "dimension", box.dim);
    box.x_radius = get_double_or(b, "x_radius", box.x_radius);
    box.v_radius = get_double_or(b, "v_radius", box.v_radius);
  }
  const int samples = get_int_or(cfg, "samples", 256);
  const GrowthAudit audit = audit_growth(psi, inter, box, samples, seed);

  json report;
  report["command"] = "audit";
  report["seed"] = seed;
  report["samples"] = audit.samples;
  report["c_lower"] = audit.c_lower;
  report["C_lower"] = audit.C_lower;
  report["C_upper"] = audit.C_upper;
  report["C_continuity"] = audit.C_continuity;
  report["c_convexity"] = audit.c_convexity;
  report["C_derivatives"] = audit.C_derivatives;
  report["lower_growth_ok"] = audit.lower_growth_ok;
  report["upper_growth_ok"] = audit.upper_growth_ok;
  report["continuity_ok"] = audit.continuity_ok;
  report["velocity_convexity_ok"] = audit.velocity_convexity_ok;
  report["derivative_bounds_ok"] = audit.derivative_bounds_ok;
  report["pass"] = audit.pass;
  report["witness"] = audit.witness;
  write_json(out / "report.json", report);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"mean-field action toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"optimize", "minimize the action of an endpoint coupling"},
      {"vlasov", "integrate the mean-field characteristic flow"},
      {"relax", "relaxed energy of a statistic over kernel mixtures"},
      {"converge", "empirical mean-field self-convergence study"},
      {"hjb", "free-endpoint Eulerian transport and HJB verification"},
      {"audit", "growth and continuity assumption audit"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "path to the JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (default: current)");
    sub->add_option("--seed", seed_override, "override the config seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", e.what()}, {"kind", "config"}}.dump() << "\n";
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    json cfg;
    std::string config_text;
    try {
      config_text = read_file(config_path);
    } catch (const std::exception& e) {
      config_error(std::string("cannot read config: ") + e.what());
    }
    try {
      cfg = json::parse(config_text);
    } catch (const json::exception& e) {
      config_error(std::string("config is not valid JSON: ") + e.what());
    }
    if (!cfg.is_object()) config_error("config root must be a JSON object");
    if (cfg.contains("command")) {
      if (!cfg.at("command").is_string() || cfg.at("command").get<std::string>() != command)
        config_error("config field 'command' does not match the requested command");
    }
    std::uint64_t seed = 0;
    if (cfg.contains("seed")) {
      if (!cfg.at("seed").is_number_unsigned() && !cfg.at("seed").is_number_integer())
        config_error("config field 'seed' must be a nonnegative integer");
      seed = cfg.at("seed").get<std::uint64_t>();
    }
    if (seed_override) seed = *seed_override;

    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);

    if (command == "optimize")
      cmd_optimize(cfg, out, seed);
    else if (command == "vlasov")
      cmd_vlasov(cfg, out, seed);
    else if (command == "relax")
      cmd_relax(cfg, out, seed);
    else if (command == "converge")
      cmd_converge(cfg, out, seed);
    else if (command == "hjb")
      cmd_hjb(cfg, out, seed);
    else
      cmd_audit(cfg, out, seed);
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "config"}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "numerical"}}.dump() << "\n";
    return 3;
  }
}

}  // namespace mfa
