#ifndef KHG_MANIFEST_HPP
#define KHG_MANIFEST_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>
#include <khg/inverse.hpp>
#include <khg/lifting.hpp>
#include <khg/materials.hpp>
#include <khg/picard.hpp>

#include <json.hpp>

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

/*
 * Scenario manifest. Text grammar, one statement per line:
 *
 *   line     := blank | comment | header | entry
 *   comment  := '#' anything
 *   header   := '[' name [ ' ' argument ] ']'
 *   entry    := key '=' value [ comment ]
 *
 * Sections: grid, material (repeatable, painted in order), scenario NAME
 * (repeatable), sensors, noise, tikhonov, picard, lifting. Keys `rod` and
 * `q_rect` may repeat inside a scenario. Numeric lists are whitespace separated.
 * A file whose first non-blank character is '{' is read as JSON with the same
 * schema (see README).
 */

namespace khg {

/// FNV-1a 64-bit digest as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct ManifestEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct ManifestSection {
  std::string name;
  std::string argument;
  int line = 0;
  std::vector<ManifestEntry> entries;
};

struct ScenarioSpec {
  std::string name;
  SourceMode mode = SourceMode::linear;
  std::vector<Rect> rods;
  double sigma_a_cr = 0.0;
  double q_const = 0.0;
  std::vector<std::pair<Rect, double>> q_rects;
  std::array<std::vector<double>, 4> psi;  // polynomial coefficients per edge (left, right, bottom, top)
  double margin = 1e-6;
};

struct SensorSpec {
  std::optional<std::size_t> stride;
  std::vector<std::pair<std::size_t, std::size_t>> cells;
};

struct Manifest {
  std::string path;
  std::string hash;
  std::size_t nx = 0, ny = 1;
  double lx = 0.0, ly = 1.0;
  std::vector<MaterialRegion> materials;
  std::vector<ScenarioSpec> scenarios;
  SensorSpec sensors;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 1;
  TikhonovConfig tikhonov;
  PicardConfig picard;
  LiftingMethod lifting = LiftingMethod::coons;

  Grid grid() const { return build_grid(nx, ny, lx, ly); }
  MaterialField material_field(const Grid& g) const { return MaterialField::from_regions(g, materials); }

  const ScenarioSpec& scenario(const std::string& name) const {
    for (const auto& s : scenarios)
      if (s.name == name) return s;
    fail(ErrorKind::unknown_reference, "unknown scenario '" + name + "'");
  }

  /// Sensor cell ids; all interior cells unless a stride or explicit list is given.
  std::vector<std::size_t> sensor_ids(const Grid& g) const {
    std::vector<std::size_t> ids;
    if (!sensors.cells.empty()) {
      for (auto [i, j] : sensors.cells) {
        if (i >= g.nx() || j >= g.ny())
          fail(ErrorKind::validation, path + ": sensor cell (" + std::to_string(i) + "," +
                                          std::to_string(j) + ") lies outside the grid");
        ids.push_back(g.cell_id(i, j));
      }
      return ids;
    }
    const std::size_t stride = sensors.stride.value_or(1);
    for (std::size_t k = 0; k < g.n_cells(); k += stride) ids.push_back(k);
    return ids;
  }
};

inline double eval_polynomial(const std::vector<double>& c, double t) {
  double v = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * t + *it;
  return v;
}

/// Materializes a scenario on a grid: rod mask, source field and Dirichlet data.
inline Scenario build_scenario(const ScenarioSpec& spec, const Grid& g) {
  Scenario s;
  s.name = spec.name;
  s.mode = spec.mode;
  s.sigma_a_cr = spec.sigma_a_cr;
  s.margin = spec.margin;
  const auto n = static_cast<Eigen::Index>(g.n_cells());
  s.q_ext = Vector::Constant(n, spec.q_const);
  for (std::size_t k = 0; k < g.n_cells(); ++k) {
    const auto [i, j] = g.cell_ij(k);
    const double x = g.center_x(i), y = g.center_y(j);
    for (const auto& r : spec.rods) {
      if (r.contains(x, y)) {
        s.rod_mask.push_back(k);
        break;
      }
    }
    for (const auto& [r, v] : spec.q_rects)
      if (r.contains(x, y)) s.q_ext[static_cast<Eigen::Index>(k)] = v;
  }
  s.psi.resize(static_cast<Eigen::Index>(g.n_boundary()));
  for (std::size_t b = 0; b < g.n_boundary(); ++b) {
    const auto& bp = g.boundary_point(b);
    const bool vertical = bp.edge == Edge::left || bp.edge == Edge::right;
    s.psi[static_cast<Eigen::Index>(b)] =
        eval_polynomial(spec.psi[static_cast<std::size_t>(bp.edge)], vertical ? bp.y : bp.x);
  }
  return s;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

class ManifestReader {
 public:
  explicit ManifestReader(std::string path) : path_(std::move(path)) {}

  [[noreturn]] void error(int line, const std::string& msg) const {
    fail(ErrorKind::format, path_ + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + msg);
  }

  std::vector<double> numbers(const ManifestEntry& e) const {
    std::vector<double> out;
    std::istringstream is(e.value);
    std::string tok;
    while (is >> tok) {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size())
        error(e.line, "key '" + e.key + "': '" + tok + "' is not a number");
      out.push_back(v);
    }
    return out;
  }

  double number(const ManifestEntry& e) const {
    const auto v = numbers(e);
    if (v.size() != 1) error(e.line, "key '" + e.key + "' expects one number");
    return v[0];
  }

  std::uint64_t integer(const ManifestEntry& e) const {
    const std::string v = trim(e.value);
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
      error(e.line, "key '" + e.key + "' expects a non-negative integer");
    return out;
  }

  Rect rect(const ManifestEntry& e, std::size_t extra = 0) const {
    const auto v = numbers(e);
    if (v.size() != 4 + extra)
      error(e.line, "key '" + e.key + "' expects " + std::to_string(4 + extra) + " numbers");
    if (!(v[0] <= v[1]) || !(v[2] <= v[3])) error(e.line, "key '" + e.key + "': empty rectangle");
    return {v[0], v[1], v[2], v[3]};
  }

  Manifest interpret(const std::vector<ManifestSection>& sections) const {
    Manifest m;
    m.path = path_;
    bool have_grid = false;
    std::set<std::string> names;
    for (const auto& s : sections) {
      if (s.name == "grid") {
        have_grid = true;
        read_grid(s, m);
      } else if (s.name == "material") {
        m.materials.push_back(read_material(s));
      } else if (s.name == "scenario") {
        if (s.argument.empty()) error(s.line, "scenario section needs a name");
        if (!names.insert(s.argument).second) error(s.line, "duplicate scenario '" + s.argument + "'");
        m.scenarios.push_back(read_scenario(s));
      } else if (s.name == "sensors") {
        read_sensors(s, m);
      } else if (s.name == "noise") {
        for (const auto& e : s.entries) {
          if (e.key == "sigma") m.noise_sigma = number(e);
          else if (e.key == "seed") m.noise_seed = integer(e);
          else unknown(s, e);
        }
        if (!(m.noise_sigma >= 0.0)) error(s.line, "noise sigma must be >= 0");
      } else if (s.name == "tikhonov") {
        for (const auto& e : s.entries) {
          if (e.key == "alpha") m.tikhonov.alpha = number(e);
          else if (e.key == "gamma") m.tikhonov.gamma = number(e);
          else if (e.key == "cg_tol") m.tikhonov.cg_rel_tol = number(e);
          else if (e.key == "cg_max_iter") m.tikhonov.cg_max_iter = static_cast<int>(integer(e));
          else unknown(s, e);
        }
        guard(s.line, [&] { m.tikhonov.validate(); });
      } else if (s.name == "picard") {
        for (const auto& e : s.entries) {
          if (e.key == "tol") m.picard.tol = number(e);
          else if (e.key == "max_iter") m.picard.max_iter = static_cast<int>(integer(e));
          else unknown(s, e);
        }
        guard(s.line, [&] { m.picard.validate(); });
      } else if (s.name == "lifting") {
        for (const auto& e : s.entries) {
          if (e.key != "method") unknown(s, e);
          const std::string v = trim(e.value);
          if (v == "coons") m.lifting = LiftingMethod::coons;
          else if (v == "harmonic") m.lifting = LiftingMethod::harmonic;
          else error(e.line, "lifting method must be 'coons' or 'harmonic'");
        }
      } else {
        error(s.line, "unknown section [" + s.name + "]");
      }
    }
    if (!have_grid) error(0, "missing [grid] section");
    if (m.materials.empty()) error(0, "missing [material] section");
    if (m.scenarios.empty()) error(0, "no [scenario NAME] section");
    guard(0, [&] {
      const Grid g = m.grid();
      (void)m.material_field(g);
      for (const auto& sc : m.scenarios) {
        const Scenario built = build_scenario(sc, g);
        check_subcritical(built, g, m.material_field(g));
      }
      (void)m.sensor_ids(g);
    });
    return m;
  }

 private:
  template <class F>
  void guard(int line, F&& f) const {
    try {
      f();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::validation) throw;
      error(line, e.what());
    }
  }

  [[noreturn]] void unknown(const ManifestSection& s, const ManifestEntry& e) const {
    error(e.line, "unknown key '" + e.key + "' in [" + s.name + "]");
  }

  void read_grid(const ManifestSection& s, Manifest& m) const {
    bool nx = false, lx = false;
    for (const auto& e : s.entries) {
      if (e.key == "nx") m.nx = integer(e), nx = true;
      else if (e.key == "ny") m.ny = integer(e);
      else if (e.key == "lx") m.lx = number(e), lx = true;
      else if (e.key == "ly") m.ly = number(e);
      else unknown(s, e);
    }
    if (!nx || !lx) error(s.line, "[grid] needs nx and lx");
    guard(s.line, [&] { (void)build_grid(m.nx, m.ny, m.lx, m.ly); });
  }

  MaterialRegion read_material(const ManifestSection& s) const {
    MaterialRegion r;
    for (const auto& e : s.entries) {
      if (e.key == "rect") r.rect = rect(e);
      else if (e.key == "D") r.diffusion = number(e);
      else if (e.key == "sigma_t") r.sigma_t = number(e);
      else if (e.key == "sigma_s") r.sigma_s = number(e);
      else if (e.key == "mu0") r.mu0 = number(e);
      else if (e.key == "sigma_a") r.sigma_a = number(e);
      else if (e.key == "nu_sigma_f") r.nu_sigma_f = number(e);
      else unknown(s, e);
    }
    if (r.diffusion.has_value() == r.sigma_t.has_value())
      error(s.line, "[material] must give either D or sigma_t/sigma_s/mu0");
    return r;
  }

  ScenarioSpec read_scenario(const ManifestSection& s) const {
    ScenarioSpec sc;
    sc.name = s.argument;
    for (const auto& e : s.entries) {
      if (e.key == "mode") {
        const std::string v = trim(e.value);
        if (v == "linear") sc.mode = SourceMode::linear;
        else if (v == "flux-proportional" || v == "flux_proportional") sc.mode = SourceMode::flux_proportional;
        else error(e.line, "mode must be 'linear' or 'flux-proportional'");
      } else if (e.key == "rod") {
        sc.rods.push_back(rect(e));
      } else if (e.key == "sigma_a_cr") {
        sc.sigma_a_cr = number(e);
        if (!(sc.sigma_a_cr >= 0.0)) error(e.line, "sigma_a_cr must be >= 0");
      } else if (e.key == "q_const") {
        sc.q_const = number(e);
      } else if (e.key == "q_rect") {
        const auto v = numbers(e);
        sc.q_rects.emplace_back(rect(e, 1), v.at(4));
      } else if (e.key == "margin") {
        sc.margin = number(e);
      } else if (e.key.rfind("psi_", 0) == 0) {
        static const std::map<std::string, Edge> edges = {
            {"psi_left", Edge::left}, {"psi_right", Edge::right},
            {"psi_bottom", Edge::bottom}, {"psi_top", Edge::top}};
        const auto it = edges.find(e.key);
        if (it == edges.end()) unknown(s, e);
        sc.psi[static_cast<std::size_t>(it->second)] = numbers(e);
      } else {
        unknown(s, e);
      }
    }
    return sc;
  }

  void read_sensors(const ManifestSection& s, Manifest& m) const {
    for (const auto& e : s.entries) {
      if (e.key == "stride") {
        m.sensors.stride = integer(e);
        if (*m.sensors.stride == 0) error(e.line, "sensor stride must be >= 1");
      } else if (e.key == "all") {
        m.sensors.stride = 1;
      } else if (e.key == "cells") {
        std::istringstream is(e.value);
        std::string pair;
        while (std::getline(is, pair, ';')) {
          ManifestEntry sub{e.key, pair, e.line};
          const auto v = numbers(sub);
          if (v.size() != 2 || v[0] < 0 || v[1] < 0)
            error(e.line, "sensor cells are 'i j' pairs separated by ';'");
          m.sensors.cells.emplace_back(static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]));
        }
      } else {
        unknown(s, e);
      }
    }
  }

  std::string path_;
};

inline std::vector<ManifestSection> parse_text_sections(const std::string& text, const ManifestReader& rd) {
  std::vector<ManifestSection> out;
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string s = raw;
    if (const auto hash = s.find('#'); hash != std::string::npos) s.erase(hash);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') rd.error(line, "unterminated section header");
      const std::string inner = trim(std::string_view(s).substr(1, s.size() - 2));
      const auto sp = inner.find_first_of(" \t");
      ManifestSection sec;
      sec.name = inner.substr(0, sp);
      sec.argument = sp == std::string::npos ? "" : trim(inner.substr(sp));
      sec.line = line;
      if (sec.name.empty()) rd.error(line, "empty section header");
      out.push_back(std::move(sec));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) rd.error(line, "expected 'key = value'");
    if (out.empty()) rd.error(line, "entry outside of any section");
    ManifestEntry e{trim(std::string_view(s).substr(0, eq)), trim(std::string_view(s).substr(eq + 1)), line};
    if (e.key.empty()) rd.error(line, "empty key");
    out.back().entries.push_back(std::move(e));
  }
  return out;
}

inline std::string json_scalar(const nlohmann::json& v, const ManifestReader& rd, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number()) {
    std::ostringstream os;
    os << std::setprecision(17) << v.get<double>();
    return os.str();
  }
  if (v.is_array()) {
    std::string out;
    for (const auto& x : v) {
      if (x.is_array() || x.is_object()) rd.error(0, where + ": nested arrays are only allowed for rod/q_rect/cells");
      out += (out.empty() ? "" : " ") + json_scalar(x, rd, where);
    }
    return out;
  }
  rd.error(0, where + ": unsupported JSON value");
}

inline void json_entries(const nlohmann::json& obj, ManifestSection& sec, const ManifestReader& rd,
                         const std::string& where) {
  if (!obj.is_object()) rd.error(0, where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    const bool repeatable = k == "rod" || k == "q_rect" || k == "cells";
    if (repeatable && v.is_array() && !v.empty() && v.front().is_array()) {
      if (k == "cells") {
        std::string joined;
        for (const auto& x : v) joined += (joined.empty() ? "" : ";") + json_scalar(x, rd, where + "." + k);
        sec.entries.push_back({k, joined, 0});
      } else {
        for (const auto& x : v) sec.entries.push_back({k, json_scalar(x, rd, where + "." + k), 0});
      }
    } else {
      sec.entries.push_back({k, json_scalar(v, rd, where + "." + k), 0});
    }
  }
}

inline std::vector<ManifestSection> parse_json_sections(const std::string& text, const ManifestReader& rd) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    rd.error(0, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) rd.error(0, "JSON manifest must be an object");
  std::vector<ManifestSection> out;
  for (const auto& [key, val] : doc.items()) {
    if (key == "materials") {
      if (!val.is_array()) rd.error(0, "'materials' must be an array");
      for (std::size_t k = 0; k < val.size(); ++k) {
        ManifestSection sec{"material", "", 0, {}};
        json_entries(val[k], sec, rd, "materials[" + std::to_string(k) + "]");
        out.push_back(std::move(sec));
      }
    } else if (key == "scenarios") {
      if (!val.is_object()) rd.error(0, "'scenarios' must be an object keyed by name");
      for (const auto& [name, body] : val.items()) {
        ManifestSection sec{"scenario", name, 0, {}};
        json_entries(body, sec, rd, "scenarios." + name);
        out.push_back(std::move(sec));
      }
    } else {
      ManifestSection sec{key, "", 0, {}};
      json_entries(val, sec, rd, key);
      out.push_back(std::move(sec));
    }
  }
  return out;
}

}  // namespace detail

/// Parses manifest text; `path` is used for messages only.
inline Manifest parse_manifest(const std::string& text, const std::string& path = "<manifest>") {
  const detail::ManifestReader rd(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool is_json = first != std::string::npos && text[first] == '{';
  const auto sections = is_json ? detail::parse_json_sections(text, rd) : detail::parse_text_sections(text, rd);
  Manifest m = rd.interpret(sections);
  m.hash = fnv1a_hex(text);
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::missing_input, "manifest " + path + " not found");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), path);
}

}  // namespace khg

#endif  // KHG_MANIFEST_HPP
