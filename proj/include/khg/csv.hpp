#ifndef KHG_CSV_HPP
#define KHG_CSV_HPP

#include <khg/error.hpp>
#include <khg/forward.hpp>
#include <khg/grid.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

/*
 * Field CSV:
 *   # nx=<nx> ny=<ny> hx=<hx> hy=<hy>
 *   # manifest=<hash>
 *   i,j,x,y,value
 *   <one row per listed cell>
 * Boundary CSV replaces the header row with b,edge,x,y,psi,current.
 * Numbers are written with 17 significant digits, so files round-trip exactly.
 */

namespace khg {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct FieldCsv {
  std::size_t nx = 0, ny = 0;
  double hx = 0.0, hy = 0.0;
  std::string manifest_hash;
  std::vector<std::size_t> cells;  // cell ids in row order
  Vector values;
};

namespace detail {

inline void write_preamble(std::ostream& os, const Grid& g, const std::string& hash) {
  os << "# nx=" << g.nx() << " ny=" << g.ny() << " hx=" << fmt_double(g.hx())
     << " hy=" << fmt_double(g.hy()) << "\n# manifest=" << hash << "\n";
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::missing_input, "cannot open " + path + " for writing");
  return os;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& tok, const std::string& path, int line) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    fail(ErrorKind::format, path + ":" + std::to_string(line) + ": '" + tok + "' is not a number");
  return v;
}

struct Preamble {
  std::size_t nx = 0, ny = 0;
  double hx = 0.0, hy = 0.0;
  std::string hash;
};

inline Preamble read_preamble(std::istream& is, const std::string& path, const std::string& header) {
  Preamble p;
  std::string l1, l2, l3;
  if (!std::getline(is, l1) || !std::getline(is, l2) || !std::getline(is, l3))
    fail(ErrorKind::format, path + ": truncated CSV header");
  const int n = std::sscanf(l1.c_str(), "# nx=%zu ny=%zu hx=%lf hy=%lf", &p.nx, &p.ny, &p.hx, &p.hy);
  if (n != 4) fail(ErrorKind::format, path + ":1: expected '# nx=.. ny=.. hx=.. hy=..'");
  if (l2.rfind("# manifest=", 0) != 0) fail(ErrorKind::format, path + ":2: expected '# manifest=<hash>'");
  p.hash = l2.substr(11);
  if (l3 != header) fail(ErrorKind::format, path + ":3: expected header '" + header + "'");
  return p;
}

}  // namespace detail

/// Writes `values` (one per listed cell) as a field CSV.
inline void write_field_csv(const std::string& path, const Grid& g, const std::vector<std::size_t>& cells,
                            const Vector& values, const std::string& hash) {
  auto os = detail::open_out(path);
  detail::write_preamble(os, g, hash);
  os << "i,j,x,y,value\n";
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto [i, j] = g.cell_ij(cells[k]);
    os << i << ',' << j << ',' << fmt_double(g.center_x(i)) << ',' << fmt_double(g.center_y(j)) << ','
       << fmt_double(values[static_cast<Eigen::Index>(k)]) << '\n';
  }
}

/// Writes a full per-cell field.
inline void write_field_csv(const std::string& path, const Grid& g, const Vector& field,
                            const std::string& hash) {
  std::vector<std::size_t> cells(g.n_cells());
  for (std::size_t k = 0; k < cells.size(); ++k) cells[k] = k;
  write_field_csv(path, g, cells, field, hash);
}

inline FieldCsv read_field_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::missing_input, "field file " + path + " not found");
  const auto pre = detail::read_preamble(is, path, "i,j,x,y,value");
  FieldCsv f{pre.nx, pre.ny, pre.hx, pre.hy, pre.hash, {}, {}};
  std::vector<double> vals;
  std::string line;
  int lineno = 3;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tok = detail::split(line, ',');
    if (tok.size() != 5) fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": expected 5 columns");
    const auto i = static_cast<std::size_t>(detail::parse_double(tok[0], path, lineno));
    const auto j = static_cast<std::size_t>(detail::parse_double(tok[1], path, lineno));
    if (i >= f.nx || j >= f.ny)
      fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": cell index outside the grid");
    f.cells.push_back(i + f.nx * j);
    vals.push_back(detail::parse_double(tok[4], path, lineno));
  }
  f.values = Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return f;
}

inline void write_boundary_csv(const std::string& path, const Grid& g, const Vector& psi,
                               const Vector& current, const std::string& hash) {
  auto os = detail::open_out(path);
  detail::write_preamble(os, g, hash);
  os << "b,edge,x,y,psi,current\n";
  for (std::size_t b = 0; b < g.n_boundary(); ++b) {
    const auto& bp = g.boundary_point(b);
    const auto e = static_cast<Eigen::Index>(b);
    os << b << ',' << edge_name(bp.edge) << ',' << fmt_double(bp.x) << ',' << fmt_double(bp.y) << ','
       << fmt_double(psi[e]) << ',' << fmt_double(current[e]) << '\n';
  }
}

struct BoundaryCsv {
  std::string manifest_hash;
  Vector psi, current;
};

/// Reads a boundary CSV and checks it against the grid.
inline BoundaryCsv read_boundary_csv(const std::string& path, const Grid& g) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::missing_input, "boundary file " + path + " not found");
  const auto pre = detail::read_preamble(is, path, "b,edge,x,y,psi,current");
  if (pre.nx != g.nx() || pre.ny != g.ny())
    fail(ErrorKind::format, path + ": grid dimensions do not match the manifest");
  BoundaryCsv out{pre.hash, Vector::Zero(static_cast<Eigen::Index>(g.n_boundary())),
                  Vector::Zero(static_cast<Eigen::Index>(g.n_boundary()))};
  std::vector<bool> seen(g.n_boundary(), false);
  std::string line;
  int lineno = 3;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tok = detail::split(line, ',');
    if (tok.size() != 6) fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": expected 6 columns");
    const auto b = static_cast<std::size_t>(detail::parse_double(tok[0], path, lineno));
    if (b >= g.n_boundary()) fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": boundary index out of range");
    out.psi[static_cast<Eigen::Index>(b)] = detail::parse_double(tok[4], path, lineno);
    out.current[static_cast<Eigen::Index>(b)] = detail::parse_double(tok[5], path, lineno);
    seen[b] = true;
  }
  for (std::size_t b = 0; b < seen.size(); ++b)
    if (!seen[b]) fail(ErrorKind::format, path + ": missing boundary point " + std::to_string(b));
  return out;
}

/// Measurement files of one scenario: <stem>_boundary.csv and <stem>_sensors.csv.
inline void write_measurements(const std::string& stem, const Grid& g, const MeasurementSet& ms,
                               const std::string& hash) {
  write_boundary_csv(stem + "_boundary.csv", g, ms.psi_obs, ms.current_obs, hash);
  write_field_csv(stem + "_sensors.csv", g, ms.sensor_ids, ms.u_obs, hash);
}

inline MeasurementSet read_measurements(const std::string& stem, const Grid& g) {
  const auto bnd = read_boundary_csv(stem + "_boundary.csv", g);
  const auto sen = read_field_csv(stem + "_sensors.csv");
  if (sen.nx != g.nx() || sen.ny != g.ny())
    fail(ErrorKind::format, stem + "_sensors.csv: grid dimensions do not match the manifest");
  MeasurementSet ms;
  ms.psi_obs = bnd.psi;
  ms.current_obs = bnd.current;
  ms.sensor_ids = sen.cells;
  ms.u_obs = sen.values;
  return ms;
}

}  // namespace khg

#endif  // KHG_CSV_HPP
