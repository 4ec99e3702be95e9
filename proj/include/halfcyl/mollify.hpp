#pragma once

// Scale-adaptive mollification of the patched field and the checks on it.
//
// Everything that carries the envelope is returned relative to
// exp(-w^{4/3}) at the evaluation point x ("scaled").

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <vector>

#include "halfcyl/common.hpp"
#include "halfcyl/dirichlet.hpp"
#include "halfcyl/field.hpp"
#include "halfcyl/omega.hpp"
#include "halfcyl/profile.hpp"

namespace halfcyl {

struct CertificationFailed : Error {
  CertificationFailed(const std::string& what, const CylPoint& x) : Error(what), where(x) {}
  CylPoint where;
};

// ---------------------------------------------------------------------------
// Gauss-Legendre rules on [-1, 1]

struct GaussRule {
  std::vector<double> x, w;
};

inline GaussRule make_gauss_legendre(int n) {
  if (n < 1) throw OutOfRange("gauss_legendre: n >= 1");
  GaussRule r;
  r.x.resize(static_cast<std::size_t>(n));
  r.w.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    r.x[static_cast<std::size_t>(i)] = z;
    r.w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return r;
}

/// Cached rule; safe to call from worker threads.
inline const GaussRule& gauss_legendre(int n) {
  static std::mutex mu;
  static std::map<int, GaussRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_gauss_legendre(n)).first;
  return it->second;
}

// ---------------------------------------------------------------------------
// kernel

/// psi, and the x- and x~-Laplacians of K = w^{4/3} psi((x - x~) w^{1/3}),
/// all at xi = (x - x~) w^{1/3}.
struct KernelJet {
  double psi = 0.0;
  double lap_x = 0.0;
  double lap_xt = 0.0;
};

class MollifierKernel {
 public:
  /// psi(z) = c exp(-1 / (1 - |z|^2 / rho^2)) on |z| < rho.
  static MollifierKernel with_radius(double rho) {
    if (!(rho > 0.0) || !std::isfinite(rho)) throw OutOfRange("MollifierKernel: rho > 0");
    MollifierKernel k;
    k.rho_ = rho;
    k.norm_ = 1.0 / (2.0 * pi * pi * std::pow(rho, 4) * unit_radial_moment());
    return k;
  }

  /// rho = h / (2 C0).
  static MollifierKernel for_h(double h, double c0) {
    if (!(c0 > 0.0)) throw OutOfRange("MollifierKernel: C0 > 0");
    return with_radius(h / (2.0 * c0));
  }

  double rho() const { return rho_; }
  double norm_const() const { return norm_; }

  double profile(double r) const {
    const double q = r * r / (rho_ * rho_);
    return q < 1.0 ? norm_ * std::exp(-1.0 / (1.0 - q)) : 0.0;
  }

  double value(const Vec4& xi) const {
    const double q = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] + xi[3] * xi[3]) / (rho_ * rho_);
    return q < 1.0 ? norm_ * std::exp(-1.0 / (1.0 - q)) : 0.0;
  }

  struct Powers {
    double w = 0.0, w13 = 0.0, w23 = 0.0, w43 = 0.0;
    explicit Powers(double w_) : w(w_), w13(std::cbrt(w_)), w23(w13 * w13), w43(w_ * w13) {}
  };

  KernelJet jet(const Vec4& xi, double w) const { return jet(xi, Powers(w)); }

  KernelJet jet(const Vec4& xi, const Powers& pw) const {
    const double w = pw.w;
    KernelJet j;
    const double r2 = rho_ * rho_;
    const double q = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] + xi[3] * xi[3]) / r2;
    if (!(q < 1.0)) return j;
    const double a = 1.0 / (1.0 - q);
    const double phi = norm_ * std::exp(-a);
    if (phi == 0.0) return j;
    const double d1 = -a * a * phi;                      // d phi / dq
    const double d2 = (a * a * a * a - 2.0 * a * a * a) * phi;  // d^2 phi / dq^2
    // grad psi = d1 2 xi / rho^2 ; Hess psi = d2 4 xi xi^T / rho^4 + d1 2 I / rho^2
    const double gc = 2.0 * d1 / r2, hc = 4.0 * d2 / (r2 * r2), hd = 2.0 * d1 / r2;
    const double lap_psi = hc * q * r2 + 4.0 * hd;
    const double H00 = hc * xi[0] * xi[0] + hd;

    const double w13 = pw.w13, w23 = pw.w23, w43 = pw.w43;
    Vec4 v, dv;
    for (int i = 0; i < 4; ++i) {
      v[static_cast<std::size_t>(i)] = xi[static_cast<std::size_t>(i)] / (3.0 * w);
    }
    v[0] += w13;
    for (int i = 0; i < 4; ++i) {
      const auto s = static_cast<std::size_t>(i);
      dv[s] = v[s] / (3.0 * w) - xi[s] / (3.0 * w * w);
    }
    dv[0] += 1.0 / (3.0 * w23);
    double gv = 0.0, gdv = 0.0, xv = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      gv += gc * xi[i] * v[i];
      gdv += gc * xi[i] * dv[i];
      xv += xi[i] * v[i];
      vv += v[i] * v[i];
    }
    const double hvv = hc * xv * xv + hd * vv;
    const double d2w = 4.0 / (9.0 * w23) * phi + 8.0 / 3.0 * w13 * gv + w43 * (hvv + gdv);

    j.psi = phi;
    j.lap_x = w43 * w23 * (lap_psi - H00) + d2w;
    j.lap_xt = w43 * w23 * lap_psi;
    return j;
  }

  /// int_{R^3} psi(t, z) dz: the mass of psi on a hyperplane at distance t.
  double plane_marginal(double t, int panels = 32, int n = 16) const {
    t = std::abs(t);
    if (t >= rho_) return 0.0;
    const double s_max = std::sqrt(rho_ * rho_ - t * t);
    const auto& g = gauss_legendre(n);
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
      const double a = s_max * p / panels, b = s_max * (p + 1) / panels;
      for (std::size_t i = 0; i < g.x.size(); ++i) {
        const double s = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
        acc += 0.5 * (b - a) * g.w[i] * profile(std::sqrt(t * t + s * s)) * s * s;
      }
    }
    return 4.0 * pi * acc;
  }

  /// w^{4/3} int psi((x - x~) w^{1/3}) dx~, by radial Gauss-Legendre in x~
  /// coordinates (independent of the rule fixing the constant).
  double scaled_mass(double w, int panels = 64, int n = 12) const {
    const double s = 1.0 / std::cbrt(w);
    const double R = rho_ * s;
    const auto& g = gauss_legendre(n);
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
      const double a = R * p / panels, b = R * (p + 1) / panels;
      for (std::size_t i = 0; i < g.x.size(); ++i) {
        const double t = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
        acc += 0.5 * (b - a) * g.w[i] * profile(t / s) * t * t * t;
      }
    }
    return 2.0 * pi * pi * std::pow(w, 4.0 / 3.0) * acc;
  }

 private:
  // int_0^1 exp(-1/(1 - s^2)) s^3 ds = (1/2) int_0^1 exp(-1/p) (1 - p) dp
  static double unit_radial_moment() {
    static const double m = [] {
      const auto& g = gauss_legendre(40);
      double acc = 0.0;
      const int panels = 32;
      for (int k = 0; k < panels; ++k) {
        const double a = static_cast<double>(k) / panels, b = static_cast<double>(k + 1) / panels;
        for (std::size_t i = 0; i < g.x.size(); ++i) {
          const double p = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
          acc += 0.5 * (b - a) * g.w[i] * std::exp(-1.0 / p) * (1.0 - p);
        }
      }
      return 0.5 * acc;
    }();
    return m;
  }

  double rho_ = 0.0;
  double norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// patched field f*

/// Planes across which the patch interpolants have kinks; quadrature panels
/// are split there.
struct KinkLattice {
  std::array<double, 4> origin{};
  std::array<double, 4> step{};  // infinite: no planes on that axis

  static KinkLattice none() {
    const double inf = std::numeric_limits<double>::infinity();
    return {{0.0, 0.0, 0.0, 0.0}, {inf, inf, inf, inf}};
  }
};

/// f* = f + m (P - f), m = zeta((2h - |f0|) / (h/2)), where the patch
/// P = I_q[f] + I[u] is the multilinear interpolant of f on the solver lattice
/// refined q times per axis plus the multilinear interpolant of the solution
/// u (zero off the mask and on the band planes). m = 1 on |f0| <= 3h/2 and
/// m = 0 off Omega. P is multilinear, hence harmonic, inside every fine
/// cell, so f* is harmonic there wherever m = 1. f is analytic, so refining
/// its interpolant costs no solve; the q^2 smaller mismatch P - f - u keeps
/// the taper band from amplifying interpolation error.
class PatchedField {
 public:
  static constexpr int default_refine = 8;

  PatchedField(const Field& field, const MaskedGrid& grid, std::vector<double> scaled_u, double h,
               int refine = default_refine)
      : field_(&field), grid_(&grid), u_(std::move(scaled_u)), h_(h), q_(refine) {
    if (u_.size() != static_cast<std::size_t>(grid.n_unknowns()))
      throw OutOfRange("PatchedField: value count does not match the grid");
    if (!(h > 0.0)) throw OutOfRange("PatchedField: h > 0");
    if (refine < 1) throw OutOfRange("PatchedField: refine >= 1");
    // nodal u on rows 0 .. n_w + 1 (w = w_lo + s dw); the band planes carry 0
    const std::int64_t slab = grid.slab_size();
    u_nodes_.assign(static_cast<std::size_t>(slab * (grid.n_w + 2)), 0.0);
    for (std::int64_t k = 0; k < grid.n_unknowns(); ++k) {
      const auto node = grid.node_of[static_cast<std::size_t>(k)];
      u_nodes_[static_cast<std::size_t>(node + slab)] = u_[static_cast<std::size_t>(k)];
    }
  }

  const Field& field() const { return *field_; }
  const MaskedGrid& grid() const { return *grid_; }
  const std::vector<double>& values() const { return u_; }
  double h() const { return h_; }
  int refine() const { return q_; }

  KinkLattice lattice() const {
    const auto& g = *grid_;
    const double dyf = g.dy / q_;
    return {{g.w_lo, g.y_offset[0] * g.dy, g.y_offset[1] * g.dy, g.y_offset[2] * g.dy},
            {g.dw / q_, dyf, dyf, dyf}};
  }

  double taper(double f0) const {
    const double t = (2.0 * h_ - std::abs(f0)) / (0.5 * h_);
    return t <= 0.0 ? 0.0 : (t >= 1.0 ? 1.0 : zeta(t));
  }

  /// Closed band [w_lo, w_hi] on which P is defined.
  bool in_band(double w) const { return w >= grid_->w_lo && w <= grid_->w_hi; }

  /// w-dependent interpolation data, reusable across y at fixed w. Weights
  /// carry exp(W(w) - W(node)), so results are relative to exp(-w^{4/3}).
  struct Slice {
    Field::AxialSlice ax;
    bool in_band = false;
    int row = 0;                // lower coarse row
    double c0 = 0.0, c1 = 0.0;  // coarse w-weights
    std::array<double, 2> fc{};                 // fine w-weights
    std::array<Field::AxialSlice, 2> fax{};     // f0 data at the fine w-nodes
  };

  Slice slice(double w) const {
    const auto& g = *grid_;
    Slice sl;
    sl.ax = field_->axial(w);
    sl.in_band = in_band(w);
    if (!sl.in_band) return sl;
    const double Ww = MaskedGrid::W(w);
    const double s = (w - g.w_lo) / g.dw;
    sl.row = std::min(static_cast<int>(std::floor(s)), g.n_w);
    const double fw = s - sl.row;
    sl.c0 = (1.0 - fw) * std::exp(Ww - MaskedGrid::W(g.w_lo + sl.row * g.dw));
    sl.c1 = fw == 0.0 ? 0.0 : fw * std::exp(Ww - MaskedGrid::W(g.w_lo + (sl.row + 1) * g.dw));
    const double dwf = g.dw / q_;
    const double sf = (w - g.w_lo) / dwf;
    const int kf = std::min(static_cast<int>(std::floor(sf)), (g.n_w + 1) * q_ - 1);
    const double ff = sf - kf;
    for (int i = 0; i < 2; ++i) {
      const double wn = g.w_lo + (kf + i) * dwf;
      sl.fc[static_cast<std::size_t>(i)] = (i ? ff : 1.0 - ff) * std::exp(Ww - MaskedGrid::W(wn));
      sl.fax[static_cast<std::size_t>(i)] = field_->axial(wn);
    }
    return sl;
  }

  /// I[u] at (slice w, y); y need not be reduced.
  double u_scaled(const Slice& sl, const Vec3& y) const {
    const auto& g = *grid_;
    if (!sl.in_band) throw OutOfBand("PatchedField: point outside the solved band");
    std::array<int, 3> j0{}, j1{};
    std::array<double, 3> fy{};
    for (std::size_t a = 0; a < 3; ++a) {
      double t = y[a] / g.dy - g.y_offset[a];
      t -= g.n_y * std::floor(t / g.n_y);
      int j = static_cast<int>(std::floor(t));
      fy[a] = t - j;
      if (j >= g.n_y) j -= g.n_y;
      j0[a] = j;
      j1[a] = j + 1 == g.n_y ? 0 : j + 1;
    }
    const std::int64_t slab = g.slab_size();
    auto plane = [&](int row) {
      const double* base = u_nodes_.data() + static_cast<std::size_t>(row * slab);
      double part = 0.0;
      for (int c = 0; c < 8; ++c) {
        const int b0 = c & 1, b1 = (c >> 1) & 1, b2 = (c >> 2) & 1;
        const double wt = (b0 ? fy[0] : 1.0 - fy[0]) * (b1 ? fy[1] : 1.0 - fy[1]) * (b2 ? fy[2] : 1.0 - fy[2]);
        if (wt == 0.0) continue;
        const std::int64_t n = (static_cast<std::int64_t>(b0 ? j1[0] : j0[0]) * g.n_y + (b1 ? j1[1] : j0[1])) * g.n_y +
                               (b2 ? j1[2] : j0[2]);
        part += wt * base[n];
      }
      return part;
    };
    double acc = sl.c0 * plane(sl.row);
    if (sl.c1 != 0.0) acc += sl.c1 * plane(sl.row + 1);
    return acc;
  }

  /// I_q[f] at (slice w, y). Multilinear interpolation of cos(a.y) over a
  /// fine cell factors into one linear interpolation of exp(i a_k y_k) per axis.
  double f_interp_scaled(const Slice& sl, const Vec3& y) const {
    const auto& g = *grid_;
    if (!sl.in_band) throw OutOfBand("PatchedField: point outside the solved band");
    const double dyf = g.dy / q_;
    std::array<double, 3> y0{}, fy{};
    for (std::size_t k = 0; k < 3; ++k) {
      const double t = y[k] / dyf - g.y_offset[k] * q_;
      const double j = std::floor(t);
      fy[k] = t - j;
      y0[k] = (j + g.y_offset[k] * q_) * dyf;
    }
    auto cos_interp = [&](const Vec3& a) {
      double re = 1.0, im = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double p0 = a[k] * y0[k], p1 = p0 + a[k] * dyf;
        const double lr = (1.0 - fy[k]) * std::cos(p0) + fy[k] * std::cos(p1);
        const double li = (1.0 - fy[k]) * std::sin(p0) + fy[k] * std::sin(p1);
        const double r = re * lr - im * li;
        im = re * li + im * lr;
        re = r;
      }
      return re;
    };
    double acc = 0.0;
    const Vec3* last_a = nullptr;
    const Vec3* last_b = nullptr;
    double ca = 0.0, cb = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      if (sl.fc[i] == 0.0) continue;
      const auto& ax = sl.fax[i];
      if (ax.a != last_a) {
        ca = cos_interp(*ax.a);
        last_a = ax.a;
      }
      if (ax.b != last_b) {
        cb = cos_interp(*ax.b);
        last_b = ax.b;
      }
      acc += sl.fc[i] * ((1.0 - ax.z) * ca + ax.z * cb);
    }
    return acc;
  }

  /// P at (slice w, y), relative to exp(-w^{4/3}).
  double g_scaled(const Slice& sl, const Vec3& y) const { return f_interp_scaled(sl, y) + u_scaled(sl, y); }

  /// f* at (slice w, y), relative to exp(-w^{4/3}).
  double scaled(const Slice& sl, const Vec3& y) const {
    const double f0 = field_->f0(sl.ax, y);
    const double m = taper(f0);
    if (m == 0.0 || !sl.in_band) return f0;
    return f0 + m * (g_scaled(sl, y) - f0);
  }

  double g_scaled(const CylPoint& x) const { return g_scaled(slice(x.w()), x.y()); }
  double scaled(const CylPoint& x) const { return scaled(slice(x.w()), x.y()); }

  /// u at coarse node (row s, y indices mod n_y), relative to exp(-W).
  double u_node_rel(int s, int j1, int j2, int j3, double W) const {
    const auto& g = *grid_;
    if (s < 0 || s > g.n_w + 1) throw OutOfBand("PatchedField: node row outside the band");
    auto wrap = [&](int j) { return ((j % g.n_y) + g.n_y) % g.n_y; };
    const std::int64_t n = (static_cast<std::int64_t>(wrap(j1)) * g.n_y + wrap(j2)) * g.n_y + wrap(j3);
    return u_nodes_[static_cast<std::size_t>(s * g.slab_size() + n)] *
           std::exp(W - MaskedGrid::W(g.w_lo + s * g.dw));
  }

  /// f at fine node (w index s, y indices), relative to exp(-W).
  double f_node_rel(int s, int j1, int j2, int j3, double W) const {
    const auto& g = *grid_;
    if (s < 0 || s > (g.n_w + 1) * q_) throw OutOfBand("PatchedField: node row outside the band");
    const double dyf = g.dy / q_;
    const double wn = g.w_lo + s * g.dw / q_;
    const Vec3 y{(j1 + g.y_offset[0] * q_) * dyf, (j2 + g.y_offset[1] * q_) * dyf, (j3 + g.y_offset[2] * q_) * dyf};
    return field_->f0(wn, y) * std::exp(W - MaskedGrid::W(wn));
  }

  /// P and f* along lines of fixed (w, y1, y2). The quadrature's innermost
  /// axis moves y3 only, so the factors of the first two y axes are cached.
  class LineEval {
   public:
    LineEval(const PatchedField& pf, double w) : pf_(&pf), sl_(pf.slice(w)) {
      if (!sl_.in_band) return;
      const auto& g = *pf.grid_;
      dyf_ = g.dy / pf.q_;
      // collect distinct wave vectors with their total weight
      auto add = [&](const Vec3* v, double c) {
        if (c == 0.0) return;
        for (int i = 0; i < n_vec_; ++i)
          if (vec_[static_cast<std::size_t>(i)].v == v) {
            vec_[static_cast<std::size_t>(i)].coef += c;
            return;
          }
        auto& e = vec_[static_cast<std::size_t>(n_vec_++)];
        e.v = v;
        e.coef = c;
        const double step = (*v)[2] * dyf_;
        e.step_c = std::cos(step);
        e.step_s = std::sin(step);
      };
      for (std::size_t i = 0; i < 2; ++i) {
        const auto& ax = sl_.fax[i];
        add(ax.a, sl_.fc[i] * (1.0 - ax.z));
        add(ax.b, sl_.fc[i] * ax.z);
      }
    }

    double scaled(const Vec3& y) {
      const double f0 = pf_->field_->f0(sl_.ax, y);
      const double m = pf_->taper(f0);
      if (m == 0.0 || !sl_.in_band) return f0;
      return f0 + m * (g_scaled(y) - f0);
    }

    double g_scaled(const Vec3& y) {
      if (!sl_.in_band) throw OutOfBand("PatchedField: point outside the solved band");
      if (!ready_ || y[0] != y0_ || y[1] != y1_) prepare(y);
      const auto& g = *pf_->grid_;
      const int q = pf_->q_;
      // fine interpolant, third axis
      const double t = y[2] / dyf_ - g.y_offset[2] * q;
      const double j = std::floor(t);
      const double fy = t - j;
      const double base = (j + g.y_offset[2] * q) * dyf_;
      double f = 0.0;
      for (int i = 0; i < n_vec_; ++i) {
        const auto& e = vec_[static_cast<std::size_t>(i)];
        const double p0 = (*e.v)[2] * base;
        const double c0 = std::cos(p0), s0 = std::sin(p0);
        const double lr = (1.0 - fy) * c0 + fy * (c0 * e.step_c - s0 * e.step_s);
        const double li = (1.0 - fy) * s0 + fy * (s0 * e.step_c + c0 * e.step_s);
        f += e.coef * (e.re * lr - e.im * li);
      }
      // coarse u, third axis
      double t3 = y[2] / g.dy - g.y_offset[2];
      t3 -= g.n_y * std::floor(t3 / g.n_y);
      int j3 = static_cast<int>(std::floor(t3));
      const double f3 = t3 - j3;
      if (j3 >= g.n_y) j3 -= g.n_y;
      const int j3b = j3 + 1 == g.n_y ? 0 : j3 + 1;
      const std::int64_t slab = g.slab_size();
      const double* u = pf_->u_nodes_.data();
      double acc = 0.0;
      for (int r = 0; r < 2; ++r) {
        const double cr = r ? sl_.c1 : sl_.c0;
        if (cr == 0.0) continue;
        const double* plane = u + static_cast<std::size_t>((sl_.row + r) * slab);
        double part = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
          if (u_w_[c] == 0.0) continue;
          part += u_w_[c] * ((1.0 - f3) * plane[u_base_[c] + j3] + f3 * plane[u_base_[c] + j3b]);
        }
        acc += cr * part;
      }
      return f + acc;
    }

   private:
    struct Wave {
      const Vec3* v = nullptr;
      double coef = 0.0;
      double re = 1.0, im = 0.0;  // product of the first two axis factors
      double step_c = 1.0, step_s = 0.0;
    };

    void prepare(const Vec3& y) {
      const auto& g = *pf_->grid_;
      const int q = pf_->q_;
      std::array<double, 2> base{}, fy{};
      for (std::size_t k = 0; k < 2; ++k) {
        const double t = y[k] / dyf_ - g.y_offset[k] * q;
        const double j = std::floor(t);
        fy[k] = t - j;
        base[k] = (j + g.y_offset[k] * q) * dyf_;
      }
      for (int i = 0; i < n_vec_; ++i) {
        auto& e = vec_[static_cast<std::size_t>(i)];
        double re = 1.0, im = 0.0;
        for (std::size_t k = 0; k < 2; ++k) {
          const double a = (*e.v)[k];
          const double p0 = a * base[k], p1 = p0 + a * dyf_;
          const double lr = (1.0 - fy[k]) * std::cos(p0) + fy[k] * std::cos(p1);
          const double li = (1.0 - fy[k]) * std::sin(p0) + fy[k] * std::sin(p1);
          const double r = re * lr - im * li;
          im = re * li + im * lr;
          re = r;
        }
        e.re = re;
        e.im = im;
      }
      std::array<int, 2> j0{}, j1{};
      std::array<double, 2> fu{};
      for (std::size_t a = 0; a < 2; ++a) {
        double t = y[a] / g.dy - g.y_offset[a];
        t -= g.n_y * std::floor(t / g.n_y);
        int j = static_cast<int>(std::floor(t));
        fu[a] = t - j;
        if (j >= g.n_y) j -= g.n_y;
        j0[a] = j;
        j1[a] = j + 1 == g.n_y ? 0 : j + 1;
      }
      for (std::size_t c = 0; c < 4; ++c) {
        const int b0 = c & 1, b1 = (c >> 1) & 1;
        u_w_[c] = (b0 ? fu[0] : 1.0 - fu[0]) * (b1 ? fu[1] : 1.0 - fu[1]);
        u_base_[c] = (static_cast<std::int64_t>(b0 ? j1[0] : j0[0]) * g.n_y + (b1 ? j1[1] : j0[1])) * g.n_y;
      }
      y0_ = y[0];
      y1_ = y[1];
      ready_ = true;
    }

    const PatchedField* pf_;
    Slice sl_;
    double dyf_ = 0.0;
    std::array<Wave, 4> vec_{};
    int n_vec_ = 0;
    bool ready_ = false;
    double y0_ = 0.0, y1_ = 0.0;
    std::array<double, 4> u_w_{};
    std::array<std::int64_t, 4> u_base_{};
  };

  /// Brute-force P from the 16 corner values of each lattice; test oracle.
  double g_scaled_reference(const CylPoint& x) const {
    const auto& g = *grid_;
    const double W = MaskedGrid::W(x.w());
    auto corners = [&](double dw, double dy, double oq, auto node) {
      const double s = (x.w() - g.w_lo) / dw;
      const int i0 = static_cast<int>(std::floor(s));
      std::array<int, 3> j{};
      std::array<double, 3> f{};
      for (std::size_t a = 0; a < 3; ++a) {
        const double t = x.y()[a] / dy - g.y_offset[a] * oq;
        j[a] = static_cast<int>(std::floor(t));
        f[a] = t - j[a];
      }
      double acc = 0.0;
      for (int c = 0; c < 16; ++c) {
        const int bw = c & 1, b0 = (c >> 1) & 1, b1 = (c >> 2) & 1, b2 = (c >> 3) & 1;
        const double wt = (bw ? s - i0 : 1.0 - (s - i0)) * (b0 ? f[0] : 1.0 - f[0]) * (b1 ? f[1] : 1.0 - f[1]) *
                          (b2 ? f[2] : 1.0 - f[2]);
        if (wt != 0.0) acc += wt * node(i0 + bw, j[0] + b0, j[1] + b1, j[2] + b2);
      }
      return acc;
    };
    const double fp = corners(g.dw / q_, g.dy / q_, static_cast<double>(q_),
                              [&](int s, int a, int b, int c) { return f_node_rel(s, a, b, c, W); });
    const double up = corners(g.dw, g.dy, 1.0, [&](int s, int a, int b, int c) { return u_node_rel(s, a, b, c, W); });
    return fp + up;
  }

  /// Fine-lattice faces of P within distance r of x, each with a bound on
  /// the jump of the normal derivative over the face nodes next to x
  /// (relative to exp(-x.w^{4/3})). A jump is multilinear along a face, so
  /// its node maximum bounds it on the patch; the f and u parts add.
  struct KinkFace {
    int axis = 0;
    double offset = 0.0;  // plane coordinate minus x coordinate
    double jump = 0.0;
  };

  std::vector<KinkFace> kink_faces(const CylPoint& x, double r) const {
    const auto& g = *grid_;
    const double Wx = MaskedGrid::W(x.w());
    const std::array<double, 4> dc{g.dw, g.dy, g.dy, g.dy};
    std::array<double, 4> tc{}, tf{}, df{};
    tc[0] = (x.w() - g.w_lo) / g.dw;
    for (std::size_t a = 0; a < 3; ++a) tc[a + 1] = x.y()[a] / g.dy - g.y_offset[a];
    for (std::size_t a = 0; a < 4; ++a) {
      df[a] = dc[a] / q_;
      tf[a] = tc[a] * q_;
    }
    // max |second difference| / step over the face nodes of one lattice
    auto face_jump = [&](const std::array<double, 4>& t, const std::array<double, 4>& d, std::size_t A, int k,
                         auto node) {
      std::array<int, 4> lo{}, hi{};
      for (std::size_t b = 0; b < 4; ++b) {
        lo[b] = static_cast<int>(std::floor(t[b] - r / d[b]));
        hi[b] = static_cast<int>(std::floor(t[b] + r / d[b])) + 1;
      }
      lo[A] = hi[A] = k;
      double best = 0.0;
      std::array<int, 4> i{};
      for (i[0] = lo[0]; i[0] <= hi[0]; ++i[0])
        for (i[1] = lo[1]; i[1] <= hi[1]; ++i[1])
          for (i[2] = lo[2]; i[2] <= hi[2]; ++i[2])
            for (i[3] = lo[3]; i[3] <= hi[3]; ++i[3]) {
              auto at = [&](int shift) {
                auto p = i;
                p[A] += shift;
                return node(p[0], p[1], p[2], p[3]);
              };
              best = std::max(best, std::abs(at(1) - 2.0 * at(0) + at(-1)) / d[A]);
            }
      return best;
    };
    auto f_node = [&](int s, int a, int b, int c) { return f_node_rel(s, a, b, c, Wx); };
    auto u_node = [&](int s, int a, int b, int c) { return u_node_rel(s, a, b, c, Wx); };
    std::vector<KinkFace> out;
    for (std::size_t A = 0; A < 4; ++A) {
      const int k_lo = static_cast<int>(std::ceil(tf[A] - r / df[A]));
      const int k_hi = static_cast<int>(std::floor(tf[A] + r / df[A]));
      for (int k = k_lo; k <= k_hi; ++k) {
        const double off = (k - tf[A]) * df[A];
        if (std::abs(off) >= r) continue;
        KinkFace f{static_cast<int>(A), off, face_jump(tf, df, A, k, f_node)};
        if (k % q_ == 0) f.jump += face_jump(tc, dc, A, k / q_, u_node);
        out.push_back(f);
      }
    }
    return out;
  }

 private:
  const Field* field_;
  const MaskedGrid* grid_;
  std::vector<double> u_;
  std::vector<double> u_nodes_;
  double h_;
  int q_;
};

// ---------------------------------------------------------------------------
// convolution quadrature

enum class Source { f_star, f_only };

// Quadrature sources: at_w(w) returns a callable y -> value relative to
// exp(-w^{4/3}), so the w-dependent work is done once per axial node.

struct PatchSource {
  const PatchedField* pf;
  auto at_w(double w) const {
    return [e = PatchedField::LineEval(*pf, w)](const Vec3& y) mutable { return e.scaled(y); };
  }
};

struct FieldSource {
  const Field* f;
  auto at_w(double w) const {
    return [f = f, ax = f->axial(w)](const Vec3& y) { return f->f0(ax, y); };
  }
};

/// Any CylPoint -> scaled value function.
template <class Fn>
struct PointSource {
  Fn fn;
  auto at_w(double w) const {
    return [this, w](const Vec3& y) { return fn(CylPoint(w, y)); };
  }
};
template <class Fn>
PointSource<Fn> point_source(Fn fn) {
  return {std::move(fn)};
}

struct QuadSpec {
  int n_start = 16;
  int n_max = 64;
  double value_tol = 1e-6;  // |change under doubling| / max |source|
  double lap_tol = 1e-3;    // |change under doubling| / sum W |lap K| |source - source(x)|
  // roundoff floor for the Laplacian, relative to max |source| sum W |lap K|
  double lap_floor = 1e-12;
};

struct Mollified {
  double value = 0.0;        // F (or G), scaled
  double lap = 0.0;          // Laplacian under the integral, scaled
  double err_value = 0.0;    // |change| at the last doubling
  double err_lap = 0.0;
  double value_scale = 0.0;  // max |source| on the support
  double lap_scale = 0.0;    // sum W |lap K| |source - source(x)|
  double lap_floor = 0.0;    // roundoff level of lap
  double mass_defect = 0.0;  // sum W K - 1
  double lap_xt = 0.0;       // sum W lap_x~ K source: I_2 before integrating by parts
  int n_per_panel = 0;
  std::int64_t nodes = 0;
};

namespace detail {

/// Panel breakpoints on [lo, hi]: kinks of the multilinear interpolant.
inline std::vector<double> panel_edges(double lo, double hi, double origin, double step) {
  std::vector<double> e{lo};
  if (!std::isfinite(step)) {
    e.push_back(hi);
    return e;
  }
  double k = std::ceil((lo - origin) / step);
  for (double p = origin + k * step; p < hi; p += step)
    if (p > lo) e.push_back(p);
  e.push_back(hi);
  return e;
}

/// Gauss-Legendre nodes on [lo, hi], panels split at the given edges.
inline void axis_nodes(const std::vector<double>& edges, int n, std::vector<double>& xs, std::vector<double>& ws) {
  const auto& g = gauss_legendre(n);
  xs.clear();
  ws.clear();
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double lo = edges[p], hi = edges[p + 1];
    if (hi - lo <= 0.0) continue;
    for (std::size_t i = 0; i < g.x.size(); ++i) {
      xs.push_back(0.5 * (lo + hi) + 0.5 * (hi - lo) * g.x[i]);
      ws.push_back(0.5 * (hi - lo) * g.w[i]);
    }
  }
}

struct Sums {
  double value = 0.0, lap = 0.0, lap_xt = 0.0, mass = 0.0, value_scale = 0.0, lap_scale = 0.0;
  double lap_kernel_l1 = 0.0;  // sum W |lap K|
  std::int64_t nodes = 0;
};

/// Nested Gauss-Legendre over the ball B_R(c): each axis runs over the exact
/// chord left by the outer ones, split at the interpolant's kink planes. The
/// nodes depend on c and R only, so for fixed (c, R, n) the sums are smooth
/// functions of x. center_value is the source at x; with centered = true the
/// identities int K = 1, int lap_x K = 0 are used.
template <class SourceFn>
Sums ball_sums(const MollifierKernel& ker, const KinkLattice& lat, const CylPoint& x, const CylPoint& c,
               double R, int n, const SourceFn& source, double center_value, bool centered) {
  const double w = x.w();
  const MollifierKernel::Powers pw(w);
  const double sc = pw.w13;  // xi = (x - x~) w^{1/3}
  const double rho2 = ker.rho() * ker.rho();
  const double Wx = MaskedGrid::W(w);
  // x - c in ambient coordinates (y difference taken the short way round)
  Vec4 dxc{x.w() - c.w(), 0, 0, 0};
  for (std::size_t a = 0; a < 3; ++a) {
    double d = x.y()[a] - c.y()[a];
    d -= two_pi * std::round(d / two_pi);
    dxc[a + 1] = d;
  }
  const std::array<double, 4> cc{c.w(), c.y()[0], c.y()[1], c.y()[2]};
  const auto& origin = lat.origin;
  const auto& step = lat.step;
  std::array<std::vector<double>, 4> xs, ws;
  std::vector<double> edges;
  auto nodes = [&](std::size_t a, double half) {
    edges = panel_edges(cc[a] - half, cc[a] + half, origin[a], step[a]);
    axis_nodes(edges, n, xs[a], ws[a]);
  };
  Sums s;
  nodes(0, R);
  const auto X0 = xs[0], W0 = ws[0];
  for (std::size_t i0 = 0; i0 < X0.size(); ++i0) {
    const double wt = X0[i0];
    if (wt <= 0.0) continue;
    const double d0 = wt - cc[0];
    const double xi0 = (dxc[0] - d0) * sc;
    const double env = std::exp(Wx - MaskedGrid::W(wt));  // source scaled to x
    auto at = source.at_w(wt);
    const double R1 = std::sqrt(std::max(0.0, R * R - d0 * d0));
    nodes(1, R1);
    const auto X1 = xs[1], W1 = ws[1];
    for (std::size_t i1 = 0; i1 < X1.size(); ++i1) {
      const double d1 = X1[i1] - cc[1];
      const double xi1 = (dxc[1] - d1) * sc;
      const double q1 = xi0 * xi0 + xi1 * xi1;
      const double R2 = std::sqrt(std::max(0.0, R1 * R1 - d1 * d1));
      if (q1 >= rho2) continue;
      nodes(2, R2);
      const auto X2 = xs[2], W2 = ws[2];
      for (std::size_t i2 = 0; i2 < X2.size(); ++i2) {
        const double d2 = X2[i2] - cc[2];
        const double xi2 = (dxc[2] - d2) * sc;
        const double q2 = q1 + xi2 * xi2;
        if (q2 >= rho2) continue;
        const double R3 = std::sqrt(std::max(0.0, R2 * R2 - d2 * d2));
        nodes(3, R3);
        for (std::size_t i3 = 0; i3 < xs[3].size(); ++i3) {
          const double xi3 = (dxc[3] - (xs[3][i3] - cc[3])) * sc;
          if (q2 + xi3 * xi3 >= rho2) continue;
          const auto J = ker.jet({xi0, xi1, xi2, xi3}, pw);
          if (J.psi == 0.0) continue;
          const double W = W0[i0] * W1[i1] * W2[i2] * ws[3][i3];
          const double src = at(Vec3{X1[i1], X2[i2], xs[3][i3]}) * env;
          const double K = w * sc * J.psi;  // w^{4/3} psi
          const double d = centered ? src - center_value : src;
          s.value += W * K * d;
          s.lap += W * J.lap_x * d;
          s.lap_xt += W * J.lap_xt * d;
          s.mass += W * K;
          s.value_scale = std::max(s.value_scale, std::abs(src));
          s.lap_scale += W * std::abs(J.lap_x) * std::abs(src - center_value);
          s.lap_kernel_l1 += W * std::abs(J.lap_x);
          ++s.nodes;
        }
      }
    }
  }
  if (centered) s.value += center_value;
  return s;
}

}  // namespace detail

/// Support radius rho w^{-1/3} of the kernel at x.
inline double support_radius(const MollifierKernel& ker, double w) { return ker.rho() / std::cbrt(w); }

/// Convolution of an arbitrary scaled source with the Laplacian under the
/// integral; node counts double from n_start until value and Laplacian settle.
template <class SourceFn>
Mollified mollify_source(const MollifierKernel& ker, const KinkLattice& lat, const CylPoint& x,
                         const SourceFn& source, const QuadSpec& q = {}) {
  const double r = support_radius(ker, x.w());
  if (!(x.w() - r > w_of(2.0))) throw OutOfRange("mollify: support must stay in w > w_2");
  if (q.n_start < 2 || q.n_max < q.n_start) throw OutOfRange("mollify: bad node counts");
  const double center = source.at_w(x.w())(x.y());
  Mollified out;
  detail::Sums prev;
  bool have_prev = false;
  for (int n = q.n_start; n <= q.n_max; n *= 2) {
    const auto s = detail::ball_sums(ker, lat, x, x, r, n, source, center, true);
    out.value = s.value;
    out.lap = s.lap;
    out.lap_xt = s.lap_xt;
    out.value_scale = s.value_scale;
    out.lap_scale = s.lap_scale;
    out.lap_floor = q.lap_floor * s.value_scale * s.lap_kernel_l1;
    out.mass_defect = s.mass - 1.0;
    out.n_per_panel = n;
    out.nodes = s.nodes;
    if (have_prev) {
      out.err_value = std::abs(s.value - prev.value);
      out.err_lap = std::abs(s.lap - prev.lap);
      if (out.err_value <= q.value_tol * std::max(s.value_scale, 1e-300) &&
          out.err_lap <= q.lap_tol * s.lap_scale + out.lap_floor)
        return out;
    }
    prev = s;
    have_prev = true;
  }
  throw QuadratureNotConverged("mollify: no agreement under node doubling up to n = " +
                               std::to_string(q.n_max) + " at w = " + std::to_string(x.w()));
}

/// F(x) (Source::f_star) or G(x) (Source::f_only).
inline Mollified mollify(const MollifierKernel& ker, const PatchedField& pf, const CylPoint& x,
                         Source src = Source::f_star, const QuadSpec& q = {}) {
  if (src == Source::f_star) return mollify_source(ker, pf.lattice(), x, PatchSource{&pf}, q);
  return mollify_source(ker, pf.lattice(), x, FieldSource{&pf.field()}, q);
}

/// w^{4/3} int psi((x - x~) w^{1/3}) Laplace f(x~) dx~, scaled: the I_2 term
/// after integrating by parts.
inline Mollified mollify_laplace_f(const MollifierKernel& ker, const PatchedField& pf, const CylPoint& x,
                                   const QuadSpec& q = {}) {
  const Field* f = &pf.field();
  return mollify_source(ker, pf.lattice(), x, point_source([f](const CylPoint& p) { return f->lap_f_scaled(p); }), q);
}

/// F at a single node count, centered; the evaluator finite differences use.
inline Mollified mollify_fixed(const MollifierKernel& ker, const PatchedField& pf, const CylPoint& x, int n) {
  const PatchSource src{&pf};
  const double center = src.at_w(x.w())(x.y());
  const auto s = detail::ball_sums(ker, pf.lattice(), x, x, support_radius(ker, x.w()), n, src, center, true);
  Mollified out;
  out.value = s.value;
  out.lap = s.lap;
  out.lap_xt = s.lap_xt;
  out.value_scale = s.value_scale;
  out.lap_scale = s.lap_scale;
  out.lap_floor = QuadSpec{}.lap_floor * s.value_scale * s.lap_kernel_l1;
  out.mass_defect = s.mass - 1.0;
  out.n_per_panel = n;
  out.nodes = s.nodes;
  return out;
}

}  // namespace halfcyl
