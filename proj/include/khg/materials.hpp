#ifndef KHG_MATERIALS_HPP
#define KHG_MATERIALS_HPP

#include <khg/error.hpp>
#include <khg/grid.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace khg {

/// Axis-aligned rectangle [x0,x1] x [y0,y1]; a cell belongs when its center lies inside.
struct Rect {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;

  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

/// D = 1 / (3 (sigma_t - mu0 sigma_s)).
inline double diffusion_from_cross_sections(double sigma_t, double sigma_s, double mu0) {
  const double sigma_tr = sigma_t - mu0 * sigma_s;
  if (!(sigma_tr > 0.0) || !std::isfinite(sigma_tr)) {
    std::ostringstream os;
    os << "non-positive transport cross-section sigma_tr = " << sigma_tr << " (sigma_t=" << sigma_t
       << ", sigma_s=" << sigma_s << ", mu0=" << mu0 << ")";
    fail(ErrorKind::validation, os.str());
  }
  return 1.0 / (3.0 * sigma_tr);
}

/// Per-cell input for one material region, either D directly or raw cross sections.
struct MaterialRegion {
  std::optional<Rect> rect;  // whole domain when absent
  std::optional<double> diffusion;
  std::optional<double> sigma_t, sigma_s, mu0;
  double sigma_a = 0.0;
  double nu_sigma_f = 0.0;
};

struct MaterialBounds {
  double d_min, d_max, sigma_a_min, sigma_a_max;
};

/// Validated per-cell diffusion data. Construction fails unless 0 < D and 0 <= sigma_a.
class MaterialField {
 public:
  MaterialField(Vector diffusion, Vector sigma_a, Vector nu_sigma_f)
      : d_(std::move(diffusion)), sa_(std::move(sigma_a)), nsf_(std::move(nu_sigma_f)) {
    validate();
  }

  /// Uniform field over every cell of a grid.
  static MaterialField uniform(const Grid& g, double d, double sigma_a, double nu_sigma_f = 0.0) {
    const auto n = static_cast<Eigen::Index>(g.n_cells());
    return MaterialField(Vector::Constant(n, d), Vector::Constant(n, sigma_a),
                         Vector::Constant(n, nu_sigma_f));
  }

  /// Regions are painted in order; later regions overwrite earlier ones.
  static MaterialField from_regions(const Grid& g, const std::vector<MaterialRegion>& regions) {
    const auto n = static_cast<Eigen::Index>(g.n_cells());
    Vector d = Vector::Constant(n, std::nan("")), sa(n), nsf(n);
    Vector st = Vector::Constant(n, std::nan("")), ss = st, mu = st;
    bool any_raw = false;
    for (const auto& r : regions) {
      if (r.diffusion.has_value() == (r.sigma_t.has_value() || r.sigma_s.has_value()))
        fail(ErrorKind::validation,
             "material region must give either D or {sigma_t, sigma_s, mu0}");
      for (std::size_t k = 0; k < g.n_cells(); ++k) {
        const auto [i, j] = g.cell_ij(k);
        if (r.rect && !r.rect->contains(g.center_x(i), g.center_y(j))) continue;
        const auto e = static_cast<Eigen::Index>(k);
        if (r.diffusion) {
          d[e] = *r.diffusion;
          st[e] = ss[e] = mu[e] = std::nan("");
        } else {
          any_raw = true;
          st[e] = r.sigma_t.value_or(0.0);
          ss[e] = r.sigma_s.value_or(0.0);
          mu[e] = r.mu0.value_or(0.0);
          try {
            d[e] = diffusion_from_cross_sections(st[e], ss[e], mu[e]);
          } catch (const Error& err) {
            fail(ErrorKind::validation, "cell (" + std::to_string(i) + "," + std::to_string(j) +
                                            "): " + err.what());
          }
        }
        sa[e] = r.sigma_a;
        nsf[e] = r.nu_sigma_f;
      }
    }
    for (std::size_t k = 0; k < g.n_cells(); ++k) {
      if (std::isnan(d[static_cast<Eigen::Index>(k)])) {
        const auto [i, j] = g.cell_ij(k);
        fail(ErrorKind::validation, "cell (" + std::to_string(i) + "," + std::to_string(j) +
                                        ") is not covered by any material region");
      }
    }
    MaterialField f(d, sa, nsf);
    if (any_raw) {
      f.sigma_t_ = st;
      f.sigma_s_ = ss;
      f.mu0_ = mu;
    }
    return f;
  }

  std::size_t size() const { return static_cast<std::size_t>(d_.size()); }
  const Vector& diffusion() const { return d_; }
  const Vector& sigma_a() const { return sa_; }
  const Vector& nu_sigma_f() const { return nsf_; }

  /// Raw cross sections; entries are NaN for cells whose D was given directly.
  const std::optional<Vector>& sigma_t() const { return sigma_t_; }
  const std::optional<Vector>& sigma_s() const { return sigma_s_; }
  const std::optional<Vector>& mu0() const { return mu0_; }

  MaterialBounds bounds() const {
    return {d_.minCoeff(), d_.maxCoeff(), sa_.minCoeff(), sa_.maxCoeff()};
  }

 private:
  void validate() const {
    if (d_.size() == 0 || sa_.size() != d_.size() || nsf_.size() != d_.size())
      fail(ErrorKind::validation, "material field sizes disagree");
    for (Eigen::Index k = 0; k < d_.size(); ++k) {
      if (!(d_[k] > 0.0) || !std::isfinite(d_[k]))
        fail(ErrorKind::validation, "cell " + std::to_string(k) + ": D must be positive");
      if (!(sa_[k] >= 0.0) || !std::isfinite(sa_[k]))
        fail(ErrorKind::validation, "cell " + std::to_string(k) + ": sigma_a must be >= 0");
      if (!(nsf_[k] >= 0.0) || !std::isfinite(nsf_[k]))
        fail(ErrorKind::validation, "cell " + std::to_string(k) + ": nu_sigma_f must be >= 0");
    }
  }

  Vector d_, sa_, nsf_;
  std::optional<Vector> sigma_t_, sigma_s_, mu0_;
};

enum class SourceMode { linear, flux_proportional };

inline const char* mode_name(SourceMode m) {
  return m == SourceMode::linear ? "linear" : "flux-proportional";
}

/// One operating condition: rod insertion, prescribed source and Dirichlet data.
struct Scenario {
  std::string name;
  SourceMode mode = SourceMode::linear;
  std::vector<std::size_t> rod_mask;  // cell ids with the rod inserted
  double sigma_a_cr = 0.0;
  Vector q_ext;  // per cell; ignored in flux-proportional mode
  Vector psi;    // per boundary point
  double margin = 1e-6;
};

/// Per-cell control-rod absorption: sigma_a_cr on rod cells, zero elsewhere.
inline Vector rod_absorption(const Scenario& s, const Grid& g) {
  Vector field = Vector::Zero(static_cast<Eigen::Index>(g.n_cells()));
  for (std::size_t c : s.rod_mask) {
    if (c >= g.n_cells())
      fail(ErrorKind::validation, "rod mask index " + std::to_string(c) + " out of range");
    field[static_cast<Eigen::Index>(c)] = s.sigma_a_cr;
  }
  return field;
}

/// nu_sigma_f - rod absorption: the flux-proportional coupling coefficient.
inline Vector source_coupling(const Scenario& s, const Grid& g, const MaterialField& m) {
  return m.nu_sigma_f() - rod_absorption(s, g);
}

/// Rejects flux-proportional scenarios whose net removal drops below the margin anywhere.
inline void check_subcritical(const Scenario& s, const Grid& g, const MaterialField& m) {
  if (s.mode != SourceMode::flux_proportional) return;
  if (!(s.margin > 0.0)) fail(ErrorKind::validation, "scenario " + s.name + ": margin must be > 0");
  const Vector removal = m.sigma_a() + rod_absorption(s, g) - m.nu_sigma_f();
  for (Eigen::Index k = 0; k < removal.size(); ++k) {
    if (removal[k] < s.margin) {
      std::ostringstream os;
      os << "scenario " << s.name << ": subcriticality margin violated at cell " << k
         << " (sigma_a + rod - nu_sigma_f = " << removal[k] << " < " << s.margin << ")";
      fail(ErrorKind::validation, os.str());
    }
  }
}

}  // namespace khg

#endif  // KHG_MATERIALS_HPP
