#include "mfa/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace mfa {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  require(end != begin && end == begin + s.size(), "malformed number in CSV: '" + s + "'");
  return v;
}

long parse_long(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const long v = std::strtol(begin, &end, 10);
  require(end != begin && end == begin + s.size(), "malformed integer in CSV: '" + s + "'");
  return v;
}

std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> lines;
  for (std::string& line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  require(!lines.empty(), "CSV is empty");
  return lines;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string ensemble_to_csv(const PathEnsemble& ensemble) {
  const int d = ensemble.dimension();
  const int M = ensemble.grid().intervals;
  const double dt = ensemble.grid().dt();
  std::ostringstream out;
  out << "t,path_id,weight";
  for (int c = 0; c < d; ++c) out << ",x" << c;
  for (int c = 0; c < d; ++c) out << ",v" << c;
  out << '\n';
  for (int i = 0; i <= M; ++i) {
    const double t = ensemble.grid().node(i);
    for (std::size_t k = 0; k < ensemble.paths().size(); ++k) {
      const Path& path = ensemble.paths()[k];
      const int vi = std::min(i, M - 1);
      out << format_double(t) << ',' << k << ',' << format_double(path.w);
      for (int c = 0; c < d; ++c)
        out << ',' << format_double(path.nodes[static_cast<std::size_t>(i)](c));
      for (int c = 0; c < d; ++c)
        out << ','
            << format_double((path.nodes[static_cast<std::size_t>(vi) + 1](c) -
                              path.nodes[static_cast<std::size_t>(vi)](c)) /
                             dt);
      out << '\n';
    }
  }
  return out.str();
}

PathEnsemble ensemble_from_csv(const std::string& text) {
  const std::vector<std::string> lines = data_lines(text);
  const std::vector<std::string> header = split(lines[0], ',');
  require(header.size() >= 5 && header[0] == "t" && header[1] == "path_id" && header[2] == "weight",
          "trajectory CSV header must start with t,path_id,weight");
  const std::size_t coords = header.size() - 3;
  require(coords % 2 == 0, "trajectory CSV needs matching position and velocity columns");
  const int d = static_cast<int>(coords / 2);
  for (int c = 0; c < d; ++c) {
    require(header[static_cast<std::size_t>(3 + c)] == "x" + std::to_string(c),
            "trajectory CSV position columns must be x0..");
    require(header[static_cast<std::size_t>(3 + d + c)] == "v" + std::to_string(c),
            "trajectory CSV velocity columns must be v0..");
  }

  struct Sample {
    double t = 0.0;
    Vec x;
  };
  std::map<long, std::pair<double, std::vector<Sample>>> by_path;  // id -> (weight, samples)
  std::vector<double> times;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::vector<std::string> cells = split(lines[ln], ',');
    require(cells.size() == header.size(), "trajectory CSV row has the wrong column count");
    Sample s;
    s.t = parse_double(cells[0]);
    const long id = parse_long(cells[1]);
    const double w = parse_double(cells[2]);
    s.x.resize(d);
    for (int c = 0; c < d; ++c) s.x(c) = parse_double(cells[static_cast<std::size_t>(3 + c)]);
    auto& entry = by_path[id];
    if (entry.second.empty())
      entry.first = w;
    else
      require(entry.first == w, "trajectory CSV path weight changed between rows");
    entry.second.push_back(std::move(s));
    times.push_back(parse_double(cells[0]));
  }
  require(!by_path.empty(), "trajectory CSV has no data rows");

  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(),
                          [](double a, double b) { return std::abs(a - b) <= 1e-12; }),
              times.end());
  require(times.size() >= 2, "trajectory CSV needs at least two time nodes");
  const double T = times.back();
  const int M = static_cast<int>(times.size()) - 1;
  require(std::abs(times.front()) <= 1e-12, "trajectory CSV must start at t = 0");
  for (int i = 0; i <= M; ++i)
    require(std::abs(times[static_cast<std::size_t>(i)] - T * i / M) <= 1e-9 * (1.0 + T),
            "trajectory CSV time nodes must be uniform");

  std::vector<Path> paths;
  for (auto& [id, entry] : by_path) {
    require(entry.second.size() == times.size(), "trajectory CSV is missing rows for a path");
    std::sort(entry.second.begin(), entry.second.end(),
              [](const Sample& a, const Sample& b) { return a.t < b.t; });
    Path path;
    path.w = entry.first;
    for (Sample& s : entry.second) path.nodes.push_back(std::move(s.x));
    paths.push_back(std::move(path));
  }
  return PathEnsemble(TimeGrid(T, M), std::move(paths));
}

std::string field_to_csv(const EulerianField1D& field) {
  std::ostringstream out;
  out << "t,x,rho,V\n";
  for (int i = 0; i <= field.time.intervals; ++i) {
    const double t = field.time.node(i);
    for (int j = 0; j < field.cells; ++j)
      out << format_double(t) << ',' << format_double(field.center(j)) << ','
          << format_double(field.density[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
          << ','
          << format_double(field.velocity[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
          << '\n';
  }
  return out.str();
}

EulerianField1D field_from_csv(const std::string& text) {
  const std::vector<std::string> lines = data_lines(text);
  require(split(lines[0], ',') == std::vector<std::string>({"t", "x", "rho", "V"}),
          "field CSV header must be t,x,rho,V");
  std::vector<double> ts, xs, rhos, vs;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::vector<std::string> cells = split(lines[ln], ',');
    require(cells.size() == 4, "field CSV row has the wrong column count");
    ts.push_back(parse_double(cells[0]));
    xs.push_back(parse_double(cells[1]));
    rhos.push_back(parse_double(cells[2]));
    vs.push_back(parse_double(cells[3]));
  }
  require(!ts.empty(), "field CSV has no data rows");

  std::vector<double> centers;
  for (std::size_t r = 0; r < ts.size() && std::abs(ts[r] - ts[0]) <= 1e-12; ++r)
    centers.push_back(xs[r]);
  const int J = static_cast<int>(centers.size());
  require(J >= 1 && ts.size() % static_cast<std::size_t>(J) == 0,
          "field CSV rows do not tile the grid");
  const int nodes = static_cast<int>(ts.size()) / J;
  require(nodes >= 2, "field CSV needs at least two time nodes");
  const double dx = J >= 2 ? centers[1] - centers[0] : 1.0;
  require(dx > 0.0, "field CSV cell centers must increase");
  for (int j = 1; j < J; ++j)
    require(std::abs(centers[static_cast<std::size_t>(j)] - centers[0] - j * dx) <= 1e-9,
            "field CSV cell centers must be uniform");

  EulerianField1D field;
  field.cells = J;
  field.lo = centers[0] - 0.5 * dx;
  field.hi = centers[static_cast<std::size_t>(J) - 1] + 0.5 * dx;
  field.time = TimeGrid(ts.back(), nodes - 1);
  field.density.assign(static_cast<std::size_t>(nodes),
                       std::vector<double>(static_cast<std::size_t>(J), 0.0));
  field.velocity = field.density;
  for (int i = 0; i < nodes; ++i) {
    const double expect = field.time.node(i);
    for (int j = 0; j < J; ++j) {
      const std::size_t r = static_cast<std::size_t>(i) * static_cast<std::size_t>(J) +
                            static_cast<std::size_t>(j);
      require(std::abs(ts[r] - expect) <= 1e-9 * (1.0 + field.time.T),
              "field CSV time nodes must be uniform");
      require(std::abs(xs[r] - centers[static_cast<std::size_t>(j)]) <= 1e-9,
              "field CSV rows must cycle through the cells in order");
      field.density[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = rhos[r];
      field.velocity[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = vs[r];
    }
  }
  validate(field);
  field.continuity_defect = continuity_residual(field);
  return field;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + tmp);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("atomic rename failed: " + path + " (" + ec.message() + ")");
}

}  // namespace mfa
