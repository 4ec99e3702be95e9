#pragma once

// -Laplace(u) = phi on Omega, u = 0 on its boundary, discretized on a band
// [w_lo, w_hi] x T^3 with a node-centred mask. Unknowns live only at Omega
// nodes; the 9-point 4-D stencil eliminates masked neighbours. Values are
// stored envelope-scaled: node value v means u = v exp(-w^{4/3}).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "common.hpp"
#include "field.hpp"
#include "omega.hpp"

namespace halfcyl {

struct NonConvergence : Error {
  NonConvergence(const std::string& what, std::vector<double> best, double residual)
      : Error(what), best_iterate(std::move(best)), residual_rel(residual) {}
  std::vector<double> best_iterate;
  double residual_rel;
};

/// How a stencil arm that leaves Omega is closed.
///  staircase:   the masked neighbour is a zero Dirichlet node at full spacing.
///  ghost_fluid: the zero sits where |f0| = 2h along the arm, at fraction theta
///               of the spacing (symmetric variant, diag += 1/(theta d^2)).
enum class BoundaryScheme { staircase, ghost_fluid };

inline const char* to_string(BoundaryScheme s) {
  return s == BoundaryScheme::staircase ? "staircase" : "ghost_fluid";
}

struct GridSpec {
  double w_lo = 0.0;
  double w_hi = 0.0;
  int n_w = 0;  // interior w nodes; u = 0 on the w_lo and w_hi planes
  int n_y = 0;  // nodes per period in each y direction
  BoundaryScheme scheme = BoundaryScheme::ghost_fluid;
  // y node j sits at (j + offset) dy. A node-aligned grid (offset 0) hits the
  // zero set of cos(a.y) exactly for integer a; generic offsets avoid that.
  std::array<double, 3> y_offset = default_y_offset();

  static std::array<double, 3> default_y_offset() {
    // Kronecker point of the golden ratio
    return {0.6180339887498949, 0.2360679774997898, 0.8541019662496847};
  }
};

/// n_w giving dw closest to dy = 2 pi / n_y.
inline int matched_n_w(double w_lo, double w_hi, int n_y) {
  const double dy = two_pi / n_y;
  return std::max(8, static_cast<int>(std::lround((w_hi - w_lo) / dy)) - 1);
}

inline constexpr double min_theta = 1e-3;

class MaskedGrid {
 public:
  double w_lo = 0.0, w_hi = 0.0, dw = 0.0, dy = 0.0, h = 0.0;
  int n_w = 0, n_y = 0;
  BoundaryScheme scheme = BoundaryScheme::ghost_fluid;
  std::array<double, 3> y_offset{};  // in units of dy

  std::vector<std::int32_t> unknown_of;  // node -> unknown, -1 outside Omega
  std::vector<std::int64_t> node_of;     // unknown -> node
  // operator part; empty for grids read back from a dump
  std::vector<std::array<std::int32_t, 8>> nbr;  // w-, w+, y1-, y1+, y2-, y2+, y3-, y3+
  std::vector<double> diag;
  std::vector<double> env_up, env_down;  // per slab: exp(W_i - W_{i+1}), exp(W_i - W_{i-1})

  std::int64_t slab_size() const { return static_cast<std::int64_t>(n_y) * n_y * n_y; }
  std::int64_t n_nodes() const { return slab_size() * n_w; }
  std::int64_t n_unknowns() const { return static_cast<std::int64_t>(node_of.size()); }
  double mask_fraction() const {
    return static_cast<double>(n_unknowns()) / static_cast<double>(n_nodes());
  }
  double cell_volume() const { return dw * dy * dy * dy; }
  bool has_operator() const { return !diag.empty(); }

  std::int64_t node_index(int i, int j1, int j2, int j3) const {
    return ((static_cast<std::int64_t>(i) * n_y + j1) * n_y + j2) * n_y + j3;
  }
  std::array<int, 4> node_coords(std::int64_t node) const {
    std::array<int, 4> c{};
    c[3] = static_cast<int>(node % n_y);
    node /= n_y;
    c[2] = static_cast<int>(node % n_y);
    node /= n_y;
    c[1] = static_cast<int>(node % n_y);
    c[0] = static_cast<int>(node / n_y);
    return c;
  }
  double w_node(int i) const { return w_lo + (i + 1) * dw; }
  int slab_of_unknown(std::int64_t u) const {
    return static_cast<int>(node_of[static_cast<std::size_t>(u)] / slab_size());
  }
  CylPoint point(std::int64_t node) const {
    const auto c = node_coords(node);
    return CylPoint(w_node(c[0]), Vec3{(c[1] + y_offset[0]) * dy, (c[2] + y_offset[1]) * dy,
                                       (c[3] + y_offset[2]) * dy});
  }
  /// Log-envelope exponent w^{4/3}.
  static double W(double w) { return std::pow(w, 4.0 / 3.0); }
};

namespace detail {

/// Fraction t in (0, 1] of the arm from x towards x + d at which |f0| = level.
/// g(0) < 0 <= g(1) for g = |f0| - level; Illinois false position.
inline double arm_fraction(const Field& field, const CylPoint& x, const Vec4& d, double g0,
                           double g1, double level) {
  double a = 0.0, b = 1.0, ga = g0, gb = g1;
  int side = 0;
  for (int it = 0; it < 100; ++it) {
    const double t = (a * gb - b * ga) / (gb - ga);
    if (!(t > a && t < b)) break;
    const double gt =
        std::abs(field.f0(x.shifted({t * d[0], t * d[1], t * d[2], t * d[3]}))) - level;
    if (gt < 0.0) {
      a = t;
      ga = gt;
      if (side == -1) gb *= 0.5;
      side = -1;
    } else {
      b = t;
      gb = gt;
      if (side == +1) ga *= 0.5;
      side = +1;
    }
    if (std::abs(gt) < 1e-15) return std::max(min_theta, t);
    if (b - a < 1e-13) break;
  }
  return std::max(min_theta, 0.5 * (a + b));
}

}  // namespace detail

/// Build the Omega mask and the stencil for one band.
inline MaskedGrid discretize(const Field& field, const GridSpec& spec, const OmegaParams& p) {
  if (!(spec.w_lo >= w_of(2.0))) throw OutOfRange("discretize: need w_lo >= w_2");
  if (!(spec.w_hi > spec.w_lo)) throw OutOfRange("discretize: need w_hi > w_lo");
  if (spec.w_hi >= field.w_max()) throw OutOfRange("discretize: band beyond the built sequence");
  if (spec.n_y < 8 || spec.n_w < 8) throw OutOfRange("discretize: need n_w, n_y >= 8");
  for (double o : spec.y_offset)
    if (!(o >= 0.0 && o < 1.0)) throw OutOfRange("discretize: y offsets must lie in [0, 1)");

  MaskedGrid g;
  g.w_lo = spec.w_lo;
  g.w_hi = spec.w_hi;
  g.n_w = spec.n_w;
  g.n_y = spec.n_y;
  g.dw = (spec.w_hi - spec.w_lo) / (spec.n_w + 1);
  g.dy = two_pi / spec.n_y;
  g.h = p.h;
  g.scheme = spec.scheme;
  g.y_offset = spec.y_offset;
  const double level = 2.0 * p.h;

  const std::int64_t n_nodes = g.n_nodes();
  std::vector<double> abs_f(static_cast<std::size_t>(n_nodes));
  parallel_for(static_cast<std::size_t>(n_nodes), [&](std::size_t b, std::size_t e) {
    for (std::size_t n = b; n < e; ++n) {
      abs_f[n] = std::abs(field.f0(g.point(static_cast<std::int64_t>(n))));
    }
  });

  g.unknown_of.assign(static_cast<std::size_t>(n_nodes), -1);
  for (std::int64_t n = 0; n < n_nodes; ++n) {
    if (abs_f[static_cast<std::size_t>(n)] < level) {
      if (g.node_of.size() >= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()))
        throw OutOfRange("discretize: too many unknowns for 32-bit indices");
      g.unknown_of[static_cast<std::size_t>(n)] = static_cast<std::int32_t>(g.node_of.size());
      g.node_of.push_back(n);
    }
  }
  if (g.node_of.empty())
    throw EmptyMask("discretize: no grid node lies in Omega (h too small for this resolution)");

  const std::size_t nu = g.node_of.size();
  g.nbr.resize(nu);
  g.diag.assign(nu, 0.0);
  const double cw = 1.0 / (g.dw * g.dw), cy = 1.0 / (g.dy * g.dy);
  parallel_for(nu, [&](std::size_t b, std::size_t e) {
    for (std::size_t u = b; u < e; ++u) {
      const std::int64_t node = g.node_of[u];
      const auto c = g.node_coords(node);
      double diag = 0.0;
      for (int dir = 0; dir < 8; ++dir) {
        const int axis = dir / 2;
        const int step = (dir % 2 == 0) ? -1 : 1;
        auto cc = c;
        bool off_band = false;
        if (axis == 0) {
          cc[0] += step;
          off_band = cc[0] < 0 || cc[0] >= g.n_w;
        } else {
          cc[axis] = (cc[axis] + step + g.n_y) % g.n_y;
        }
        const double coef = axis == 0 ? cw : cy;
        std::int32_t j = -1;
        if (!off_band) j = g.unknown_of[static_cast<std::size_t>(g.node_index(cc[0], cc[1], cc[2], cc[3]))];
        g.nbr[u][static_cast<std::size_t>(dir)] = j;
        if (j >= 0) {
          diag += coef;
          continue;
        }
        double theta = 1.0;
        if (!off_band && g.scheme == BoundaryScheme::ghost_fluid) {
          const std::int64_t other = g.node_index(cc[0], cc[1], cc[2], cc[3]);
          Vec4 d{0, 0, 0, 0};
          d[static_cast<std::size_t>(axis)] = step * (axis == 0 ? g.dw : g.dy);
          theta = detail::arm_fraction(field, g.point(node), d, abs_f[static_cast<std::size_t>(node)] - level,
                                       abs_f[static_cast<std::size_t>(other)] - level, level);
        }
        diag += coef / theta;
      }
      g.diag[u] = diag;
    }
  });

  g.env_up.resize(static_cast<std::size_t>(g.n_w));
  g.env_down.resize(static_cast<std::size_t>(g.n_w));
  for (int i = 0; i < g.n_w; ++i) {
    const double Wi = MaskedGrid::W(g.w_node(i));
    g.env_up[static_cast<std::size_t>(i)] = std::exp(Wi - MaskedGrid::W(g.w_node(i) + g.dw));
    g.env_down[static_cast<std::size_t>(i)] = std::exp(Wi - MaskedGrid::W(g.w_node(i) - g.dw));
  }
  return g;
}

// ---------------------------------------------------------------------------
// right-hand sides (envelope-scaled: phi = value * exp(-w^{4/3}))

enum class RhsMode { lap_f, lap_f_plus, lap_f_minus };

inline const char* to_string(RhsMode m) {
  switch (m) {
    case RhsMode::lap_f: return "lap_f";
    case RhsMode::lap_f_plus: return "plus";
    case RhsMode::lap_f_minus: return "minus";
  }
  return "?";
}

/// plus = (Laplace f)_+, minus = (Laplace f)_-, so lap_f = plus - minus.
inline std::vector<double> assemble_rhs(const Field& field, const MaskedGrid& g, RhsMode mode) {
  std::vector<double> out(static_cast<std::size_t>(g.n_unknowns()));
  parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t u = b; u < e; ++u) {
      const double v = field.lap_f_scaled(g.point(g.node_of[u]));
      switch (mode) {
        case RhsMode::lap_f: out[u] = v; break;
        case RhsMode::lap_f_plus: out[u] = std::max(v, 0.0); break;
        case RhsMode::lap_f_minus: out[u] = std::max(-v, 0.0); break;
      }
    }
  });
  return out;
}

/// Custom unscaled phi(x), converted to the scaled representation.
inline std::vector<double> assemble_rhs(const MaskedGrid& g,
                                        const std::function<double(const CylPoint&)>& phi) {
  std::vector<double> out(static_cast<std::size_t>(g.n_unknowns()));
  for (std::size_t u = 0; u < out.size(); ++u) {
    const CylPoint x = g.point(g.node_of[u]);
    out[u] = phi(x) * std::exp(MaskedGrid::W(x.w()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// operators

/// y = A x for the unscaled operator (SPD M-matrix).
inline void apply_operator(const MaskedGrid& g, const std::vector<double>& x, std::vector<double>& y) {
  const double cw = 1.0 / (g.dw * g.dw), cy = 1.0 / (g.dy * g.dy);
  y.resize(x.size());
  parallel_for(x.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t u = b; u < e; ++u) {
      const auto& nb = g.nbr[u];
      double s = g.diag[u] * x[u];
      for (int d = 0; d < 8; ++d) {
        const auto j = nb[static_cast<std::size_t>(d)];
        if (j >= 0) s -= (d < 2 ? cw : cy) * x[static_cast<std::size_t>(j)];
      }
      y[u] = s;
    }
  });
}

/// y = E^{-1} A E x, E = diag(exp(-w^{4/3})): the operator acting on scaled values.
inline void apply_scaled_operator(const MaskedGrid& g, const std::vector<double>& x,
                                  std::vector<double>& y) {
  const double cw = 1.0 / (g.dw * g.dw), cy = 1.0 / (g.dy * g.dy);
  y.resize(x.size());
  parallel_for(x.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t u = b; u < e; ++u) {
      const auto& nb = g.nbr[u];
      const auto slab = static_cast<std::size_t>(g.slab_of_unknown(static_cast<std::int64_t>(u)));
      double s = g.diag[u] * x[u];
      if (nb[0] >= 0) s -= cw * g.env_down[slab] * x[static_cast<std::size_t>(nb[0])];
      if (nb[1] >= 0) s -= cw * g.env_up[slab] * x[static_cast<std::size_t>(nb[1])];
      for (int d = 2; d < 8; ++d) {
        const auto j = nb[static_cast<std::size_t>(d)];
        if (j >= 0) s -= cy * x[static_cast<std::size_t>(j)];
      }
      y[u] = s;
    }
  });
}

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// solve

/// unscaled_cg: Jacobi PCG on A u = phi (symmetric; relative accuracy is set
///   by the shallow end of the band).
/// scaled_bicgstab: Jacobi BiCGStab on E^{-1} A E v = phi / E, uniform
///   relative accuracy across the band.
enum class Formulation { unscaled_cg, scaled_bicgstab };

inline const char* to_string(Formulation f) {
  return f == Formulation::unscaled_cg ? "unscaled_cg" : "scaled_bicgstab";
}

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 20'000;
  Formulation formulation = Formulation::scaled_bicgstab;
};

struct SolveReport {
  double residual_rel = 0.0;  // true relative residual of the system solved
  int iterations = 0;
  double min_u = 0.0;  // unscaled
  double max_abs_u = 0.0;
  std::vector<double> sup_profile_scaled;  // per slab: sup |u| exp(w^{4/3})
  double energy = 0.0;
  Formulation formulation = Formulation::scaled_bicgstab;
};

struct Solution {
  std::vector<double> scaled;  // u = scaled * exp(-w^{4/3})
  SolveReport report;
};

inline std::vector<double> envelope_at_unknowns(const MaskedGrid& g) {
  std::vector<double> e(static_cast<std::size_t>(g.n_unknowns()));
  for (std::size_t u = 0; u < e.size(); ++u)
    e[u] = std::exp(-MaskedGrid::W(g.w_node(g.slab_of_unknown(static_cast<std::int64_t>(u)))));
  return e;
}

inline std::vector<double> unscale(const MaskedGrid& g, const std::vector<double>& scaled) {
  auto e = envelope_at_unknowns(g);
  for (std::size_t u = 0; u < e.size(); ++u) e[u] *= scaled[u];
  return e;
}

/// J[u] = cell volume * (1/2 u^T A u - phi^T u), unscaled. Arms leaving Omega
/// contribute (u_i / (theta d))^2 theta-weighted as in the operator.
inline double energy(const MaskedGrid& g, const std::vector<double>& u, const std::vector<double>& phi) {
  std::vector<double> Au;
  apply_operator(g, u, Au);
  return g.cell_volume() * (0.5 * detail::dot(u, Au) - detail::dot(phi, u));
}

namespace detail {

inline int pcg(const MaskedGrid& g, const std::vector<double>& b, std::vector<double>& x,
               double tol, int max_iter) {
  const std::size_t n = b.size();
  x.assign(n, 0.0);
  const double bnorm = norm2(b);
  if (bnorm == 0.0) return 0;
  std::vector<double> r = b, z(n), p(n), Ap(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / g.diag[i];
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= max_iter; ++it) {
    apply_operator(g, p, Ap);
    const double alpha = rz / dot(p, Ap);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    if (norm2(r) <= tol * bnorm) return it;
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / g.diag[i];
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return -1;
}

template <class Apply>
int bicgstab(const MaskedGrid& g, Apply&& apply, const std::vector<double>& b,
             std::vector<double>& x, double tol, int max_iter) {
  const std::size_t n = b.size();
  x.assign(n, 0.0);
  const double bnorm = norm2(b);
  if (bnorm == 0.0) return 0;
  std::vector<double> r = b, rhat = b, p(n, 0.0), v(n, 0.0), s(n), t(n), ph(n), sh(n);
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  for (int it = 1; it <= max_iter; ++it) {
    double rho_new = dot(rhat, r);
    if (std::abs(rho_new) < 1e-30 * bnorm * bnorm) {  // breakdown: restart the shadow
      rhat = r;
      rho_new = dot(rhat, r);
      std::fill(p.begin(), p.end(), 0.0);
      std::fill(v.begin(), v.end(), 0.0);
      rho = alpha = omega = 1.0;
    }
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    for (std::size_t i = 0; i < n; ++i) ph[i] = p[i] / g.diag[i];
    apply(ph, v);
    alpha = rho / dot(rhat, v);
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    if (norm2(s) <= tol * bnorm) {
      for (std::size_t i = 0; i < n; ++i) x[i] += alpha * ph[i];
      return it;
    }
    for (std::size_t i = 0; i < n; ++i) sh[i] = s[i] / g.diag[i];
    apply(sh, t);
    omega = dot(t, s) / dot(t, t);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * ph[i] + omega * sh[i];
      r[i] = s[i] - omega * t[i];
    }
    if (norm2(r) <= tol * bnorm) return it;
  }
  return -1;
}

}  // namespace detail

/// Fill the report fields that depend only on the solution.
inline void summarize(const MaskedGrid& g, const std::vector<double>& rhs_scaled, Solution& sol) {
  auto& rep = sol.report;
  const auto u = unscale(g, sol.scaled);
  const auto phi = unscale(g, rhs_scaled);
  rep.min_u = u.empty() ? 0.0 : *std::min_element(u.begin(), u.end());
  rep.max_abs_u = 0.0;
  for (double v : u) rep.max_abs_u = std::max(rep.max_abs_u, std::abs(v));
  rep.sup_profile_scaled.assign(static_cast<std::size_t>(g.n_w), 0.0);
  for (std::size_t i = 0; i < sol.scaled.size(); ++i) {
    auto& s = rep.sup_profile_scaled[static_cast<std::size_t>(g.slab_of_unknown(static_cast<std::int64_t>(i)))];
    s = std::max(s, std::abs(sol.scaled[i]));
  }
  rep.energy = energy(g, u, phi);
}

/// Solve -Laplace(u) = phi; rhs and result are envelope-scaled.
inline Solution solve(const MaskedGrid& g, const std::vector<double>& rhs_scaled,
                      const SolveOptions& opt = {}) {
  if (!g.has_operator()) throw Error("solve: grid has no operator (read from a dump?)");
  if (rhs_scaled.size() != static_cast<std::size_t>(g.n_unknowns()))
    throw OutOfRange("solve: rhs size does not match the grid");
  Solution sol;
  sol.report.formulation = opt.formulation;
  int iters = 0;
  if (opt.formulation == Formulation::unscaled_cg) {
    const auto b = unscale(g, rhs_scaled);
    std::vector<double> x;
    iters = detail::pcg(g, b, x, opt.tol, opt.max_iter);
    std::vector<double> Ax;
    apply_operator(g, x, Ax);
    for (std::size_t i = 0; i < Ax.size(); ++i) Ax[i] = b[i] - Ax[i];
    const double bn = detail::norm2(b);
    sol.report.residual_rel = bn == 0.0 ? 0.0 : detail::norm2(Ax) / bn;
    const auto e = envelope_at_unknowns(g);
    sol.scaled.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sol.scaled[i] = x[i] / e[i];
  } else {
    auto apply = [&](const std::vector<double>& in, std::vector<double>& out) {
      apply_scaled_operator(g, in, out);
    };
    iters = detail::bicgstab(g, apply, rhs_scaled, sol.scaled, opt.tol, opt.max_iter);
    std::vector<double> Ax;
    apply_scaled_operator(g, sol.scaled, Ax);
    for (std::size_t i = 0; i < Ax.size(); ++i) Ax[i] = rhs_scaled[i] - Ax[i];
    const double bn = detail::norm2(rhs_scaled);
    sol.report.residual_rel = bn == 0.0 ? 0.0 : detail::norm2(Ax) / bn;
  }
  if (iters < 0 || sol.report.residual_rel > opt.tol * 10.0) {
    throw NonConvergence("solve: no convergence within " + std::to_string(opt.max_iter) +
                             " iterations (relative residual " +
                             std::to_string(sol.report.residual_rel) + ")",
                         sol.scaled, sol.report.residual_rel);
  }
  sol.report.iterations = iters < 0 ? opt.max_iter : iters;
  summarize(g, rhs_scaled, sol);
  return sol;
}

// ---------------------------------------------------------------------------
// checks

struct PositivityReport {
  bool applicable = true;  // false when rhs has mixed sign
  bool pass = true;
  double min_u = 0.0;
  double max_abs_u = 0.0;
};

/// Discrete maximum principle: phi >= 0 implies min u >= -tol max|u|.
inline PositivityReport positivity_check(const MaskedGrid& g, const std::vector<double>& scaled,
                                         const std::vector<double>& rhs_scaled, double tol = 1e-10) {
  PositivityReport rep;
  if (std::any_of(rhs_scaled.begin(), rhs_scaled.end(), [](double v) { return v < 0.0; })) {
    rep.applicable = false;
    return rep;
  }
  const auto u = unscale(g, scaled);
  for (double v : u) {
    rep.min_u = std::min(rep.min_u, v);
    rep.max_abs_u = std::max(rep.max_abs_u, std::abs(v));
  }
  rep.pass = rep.min_u >= -tol * rep.max_abs_u;
  return rep;
}

/// Relative defect |<Ax, y> - <x, Ay>| / (|<Ax, y>| + |<x, Ay>|) on random vectors.
inline double operator_symmetry_defect(const MaskedGrid& g, std::uint64_t seed) {
  auto rng = make_stream(seed, 0x5E);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(g.n_unknowns())), y(x.size()), Ax, Ay;
  for (auto& v : x) v = u(rng);
  for (auto& v : y) v = u(rng);
  apply_operator(g, x, Ax);
  apply_operator(g, y, Ay);
  const double a = detail::dot(Ax, y), b = detail::dot(x, Ay);
  return std::abs(a - b) / (std::abs(a) + std::abs(b));
}

/// Discrete Friedrichs ratio ||u||_2 / ||grad u||_2 on the mask.
inline double friedrichs_ratio(const MaskedGrid& g, const std::vector<double>& u) {
  std::vector<double> Au;
  apply_operator(g, u, Au);
  const double grad2 = detail::dot(u, Au);
  return grad2 > 0.0 ? std::sqrt(detail::dot(u, u) / grad2) : 0.0;
}

struct DecayReport {
  std::vector<double> w;
  std::vector<double> sup_scaled;  // H(w) exp(w^{4/3})
  std::vector<double> shape;       // w^{-2/3}
  std::vector<std::int64_t> bands;
  std::vector<double> band_max;    // per band: max of H exp(W) w^{2/3}
  double c_fit = 0.0;              // geometric mean of band_max
  double c8 = 0.0;                 // max of band_max: empirical decay constant
  double max_excess = 0.0;         // max_w H exp(W) / (c_fit shape)
  bool pass = true;
};

/// Per-slab decay profile against the shape C w^{-2/3} exp(-w^{4/3}). H(w)
/// swings by orders of magnitude inside a band (Laplace f nearly vanishes on
/// Omega near the breakpoints), so C is fitted to the per-band maxima, the
/// upper envelope the bound speaks about.
inline DecayReport decay_profile_check(const MaskedGrid& g, const Solution& sol,
                                       double margin = 1.5) {
  if (band_of(g.w_hi) - band_of(g.w_lo) < 3)
    throw InsufficientBand("decay_profile_check: band narrower than 3 bands");
  DecayReport rep;
  for (int i = 0; i < g.n_w; ++i) {
    const double w = g.w_node(i);
    const double H = sol.report.sup_profile_scaled[static_cast<std::size_t>(i)];
    rep.w.push_back(w);
    rep.sup_scaled.push_back(H);
    rep.shape.push_back(std::pow(w, -2.0 / 3.0));
    const std::int64_t k = band_of(w);
    if (rep.bands.empty() || rep.bands.back() != k) {
      rep.bands.push_back(k);
      rep.band_max.push_back(0.0);
    }
    rep.band_max.back() = std::max(rep.band_max.back(), H * std::pow(w, 2.0 / 3.0));
  }
  double log_sum = 0.0;
  int n_pos = 0;
  for (double m : rep.band_max) {
    rep.c8 = std::max(rep.c8, m);
    if (m > 0.0) {
      log_sum += std::log(m);
      ++n_pos;
    }
  }
  if (n_pos == 0) return rep;  // u == 0
  rep.c_fit = std::exp(log_sum / n_pos);
  for (std::size_t i = 0; i < rep.w.size(); ++i)
    rep.max_excess = std::max(rep.max_excess, rep.sup_scaled[i] / (rep.c_fit * rep.shape[i]));
  rep.pass = rep.max_excess <= margin;
  return rep;
}

/// Envelope-scaled sup |u| over the slabs with w_a <= w <= w_b.
inline double scaled_sup_between(const MaskedGrid& g, const Solution& sol, double w_a, double w_b) {
  double m = 0.0;
  for (int i = 0; i < g.n_w; ++i) {
    const double w = g.w_node(i);
    if (w >= w_a && w <= w_b) m = std::max(m, sol.report.sup_profile_scaled[static_cast<std::size_t>(i)]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// interpolation

/// Multilinear interpolation of u at x, returned relative to exp(-x.w^{4/3}).
/// Nodes outside Omega and the w_lo / w_hi planes carry u = 0.
inline double interpolate_scaled(const MaskedGrid& g, const std::vector<double>& scaled,
                                 const CylPoint& x) {
  const double s = (x.w() - g.w_lo) / g.dw - 1.0;  // slab coordinate
  if (s <= -1.0 || s >= g.n_w) return 0.0;
  const int i0 = static_cast<int>(std::floor(s));
  const double fw = s - i0;
  std::array<int, 3> j0{};
  std::array<double, 3> fy{};
  for (int a = 0; a < 3; ++a) {
    double t = x.y()[static_cast<std::size_t>(a)] / g.dy - g.y_offset[static_cast<std::size_t>(a)];
    if (t < 0.0) t += g.n_y;
    const int j = static_cast<int>(std::floor(t));
    fy[static_cast<std::size_t>(a)] = t - j;
    j0[static_cast<std::size_t>(a)] = j % g.n_y;
  }
  const double Wx = MaskedGrid::W(x.w());
  double acc = 0.0;
  for (int di = 0; di < 2; ++di) {
    const int i = i0 + di;
    if (i < 0 || i >= g.n_w) continue;
    const double ww = di ? fw : 1.0 - fw;
    if (ww == 0.0) continue;
    const double rel = std::exp(Wx - MaskedGrid::W(g.w_node(i)));
    for (int c = 0; c < 8; ++c) {
      double wt = ww;
      std::array<int, 3> j{};
      for (int a = 0; a < 3; ++a) {
        const int bit = (c >> a) & 1;
        wt *= bit ? fy[static_cast<std::size_t>(a)] : 1.0 - fy[static_cast<std::size_t>(a)];
        j[static_cast<std::size_t>(a)] = (j0[static_cast<std::size_t>(a)] + bit) % g.n_y;
      }
      if (wt == 0.0) continue;
      const auto k = g.unknown_of[static_cast<std::size_t>(g.node_index(i, j[0], j[1], j[2]))];
      if (k >= 0) acc += wt * scaled[static_cast<std::size_t>(k)] * rel;
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Green-type mean value inequality

struct MeanValueReport {
  double u0 = 0.0;           // all terms relative to exp(-w0^{4/3})
  double volume_term = 0.0;  // int_{Omega cap B_R} phi / (4 pi^2 |x - x0|^2)
  double sphere_term = 0.0;  // (1 / (2 pi^2 R^3)) int_{Omega cap dB_R} u dS
  double radius = 0.0;
  bool pass = false;
};

/// u(x0) <= slack (volume term + sphere mean) at the node x0, radius R.
inline MeanValueReport mean_value_inequality_check(const MaskedGrid& g, const Solution& sol,
                                                   const std::vector<double>& rhs_scaled,
                                                   std::int64_t x0_node, double R,
                                                   std::int64_t n_sphere, std::uint64_t seed,
                                                   double slack = 1.2) {
  const auto k0 = g.unknown_of.at(static_cast<std::size_t>(x0_node));
  if (k0 < 0) throw OutOfRange("mean_value_inequality_check: x0 is not an Omega node");
  const CylPoint x0 = g.point(x0_node);
  if (x0.w() < w_of(3.0) || x0.w() - R <= g.w_lo || x0.w() + R >= g.w_hi || !(R > 0.0 && R < 1.0))
    throw OutOfBand("mean_value_inequality_check: B_R(x0) must sit inside the band, w0 >= w_3");
  if (std::any_of(rhs_scaled.begin(), rhs_scaled.end(), [](double v) { return v < 0.0; }))
    throw OutOfRange("mean_value_inequality_check: rhs must be >= 0");

  MeanValueReport rep;
  rep.radius = R;
  const double W0 = MaskedGrid::W(x0.w());
  rep.u0 = sol.scaled[static_cast<std::size_t>(k0)];

  // volume term by node quadrature; the node's own cell is replaced by the
  // ball of equal volume, over which 1/(4 pi^2 r^2) integrates to rho^2/4
  const double vol = g.cell_volume();
  const double rho_cell = std::pow(2.0 * vol / (pi * pi), 0.25);
  const auto c0 = g.node_coords(x0_node);
  const int ri = static_cast<int>(std::ceil(R / g.dw));
  const int rj = std::min(static_cast<int>(std::ceil(R / g.dy)), g.n_y / 2 - 1);
  double acc = 0.0;
  for (int di = -ri; di <= ri; ++di) {
    const int i = c0[0] + di;
    if (i < 0 || i >= g.n_w) continue;
    const double rel = std::exp(W0 - MaskedGrid::W(g.w_node(i)));
    for (int d1 = -rj; d1 <= rj; ++d1)
      for (int d2 = -rj; d2 <= rj; ++d2)
        for (int d3 = -rj; d3 <= rj; ++d3) {
          const double r2 = di * di * g.dw * g.dw + (d1 * d1 + d2 * d2 + d3 * d3) * g.dy * g.dy;
          if (r2 > R * R) continue;
          const auto node = g.node_index(i, (c0[1] + d1 + g.n_y) % g.n_y, (c0[2] + d2 + g.n_y) % g.n_y,
                                         (c0[3] + d3 + g.n_y) % g.n_y);
          const auto k = g.unknown_of[static_cast<std::size_t>(node)];
          if (k < 0) continue;
          const double phi = rhs_scaled[static_cast<std::size_t>(k)] * rel;
          acc += r2 == 0.0 ? phi * rho_cell * rho_cell / 4.0 : phi * vol / (4.0 * pi * pi * r2);
        }
  }
  rep.volume_term = acc;

  // sphere mean of u (zero outside Omega)
  auto rng = make_stream(seed, static_cast<std::uint64_t>(x0_node));
  double s = 0.0;
  for (std::int64_t n = 0; n < n_sphere; ++n) {
    const auto z = uniform_on_sphere<4>(rng);
    const CylPoint q = x0.shifted({R * z[0], R * z[1], R * z[2], R * z[3]});
    s += interpolate_scaled(g, sol.scaled, q) * std::exp(W0 - MaskedGrid::W(q.w()));
  }
  rep.sphere_term = s / static_cast<double>(n_sphere);
  rep.pass = rep.u0 <= slack * (rep.volume_term + rep.sphere_term);
  return rep;
}

// ---------------------------------------------------------------------------
// grid dump
//
// little-endian IEEE-754 binary64 throughout:
//   bytes 0..7   magic "HCYLGRD1"
//   then 12 doubles: n_w, n_y, w_lo, w_hi, dw, dy, h, scheme (0 staircase,
//                    1 ghost_fluid), n_entries, y offsets o1, o2, o3
//   then n_entries pairs (node index, envelope-scaled u) for every Omega node,
//   node index = ((i n_y + j1) n_y + j2) n_y + j3, node (i, j) at
//   (w_lo + (i+1) dw, (j1 + o1) dy, (j2 + o2) dy, (j3 + o3) dy).

inline constexpr char grid_magic[9] = "HCYLGRD1";

inline void write_grid(const std::string& path, const MaskedGrid& g, const std::vector<double>& scaled) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_grid: cannot open " + path);
  out.write(grid_magic, 8);
  const double header[12] = {static_cast<double>(g.n_w), static_cast<double>(g.n_y), g.w_lo, g.w_hi,
                             g.dw, g.dy, g.h, g.scheme == BoundaryScheme::staircase ? 0.0 : 1.0,
                             static_cast<double>(g.n_unknowns()), g.y_offset[0], g.y_offset[1],
                             g.y_offset[2]};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  for (std::size_t u = 0; u < scaled.size(); ++u) {
    const double pair[2] = {static_cast<double>(g.node_of[u]), scaled[u]};
    out.write(reinterpret_cast<const char*>(pair), sizeof pair);
  }
  if (!out) throw IoError("write_grid: write failed for " + path);
}

/// Geometry, mask and values; the returned grid has no operator.
inline std::pair<MaskedGrid, std::vector<double>> read_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_grid: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, grid_magic, 8) != 0) throw IoError("read_grid: bad magic in " + path);
  double header[12];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in) throw IoError("read_grid: truncated header in " + path);
  MaskedGrid g;
  g.n_w = static_cast<int>(header[0]);
  g.n_y = static_cast<int>(header[1]);
  g.w_lo = header[2];
  g.w_hi = header[3];
  g.dw = header[4];
  g.dy = header[5];
  g.h = header[6];
  g.scheme = header[7] == 0.0 ? BoundaryScheme::staircase : BoundaryScheme::ghost_fluid;
  const auto n = static_cast<std::int64_t>(header[8]);
  g.y_offset = {header[9], header[10], header[11]};
  if (g.n_w < 1 || g.n_y < 1 || n < 0 || n > g.n_nodes()) throw IoError("read_grid: bad header in " + path);
  g.unknown_of.assign(static_cast<std::size_t>(g.n_nodes()), -1);
  std::vector<double> values(static_cast<std::size_t>(n));
  g.node_of.resize(static_cast<std::size_t>(n));
  for (std::int64_t u = 0; u < n; ++u) {
    double pair[2];
    in.read(reinterpret_cast<char*>(pair), sizeof pair);
    if (!in) throw IoError("read_grid: truncated data in " + path);
    const auto node = static_cast<std::int64_t>(pair[0]);
    if (node < 0 || node >= g.n_nodes()) throw IoError("read_grid: node index out of range");
    g.node_of[static_cast<std::size_t>(u)] = node;
    g.unknown_of[static_cast<std::size_t>(node)] = static_cast<std::int32_t>(u);
    values[static_cast<std::size_t>(u)] = pair[1];
  }
  return {std::move(g), std::move(values)};
}

}  // namespace halfcyl
