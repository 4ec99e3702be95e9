#pragma once

// Checks on the mollified field: kernel bounds, oscillation, the harmonic
// patch off U, finite-difference audits of the under-integral Laplacian, the
// comparison function G, and the headline certificate.
//
// Values are envelope-scaled (relative to exp(-w^{4/3}) at the point).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "halfcyl/common.hpp"
#include "halfcyl/dirichlet.hpp"
#include "halfcyl/field.hpp"
#include "halfcyl/mollify.hpp"
#include "halfcyl/omega.hpp"

namespace halfcyl {

// ---------------------------------------------------------------------------
// kernel

/// max over ws of |w^{4/3} int psi - 1|.
inline double kernel_normalization_defect(const MollifierKernel& ker, const std::vector<double>& ws) {
  double worst = 0.0;
  for (double w : ws) worst = std::max(worst, std::abs(ker.scaled_mass(w) - 1.0));
  return worst;
}

struct KernelBoundReport {
  std::vector<double> ws;
  std::vector<double> d1_max;  // per w: max |(lap_x - lap_x~) K| / w^{2/3}
  std::vector<double> d2_max;  // per w: max |lap_x K| / w^2
  double c10_d1 = 0.0, c10_d2 = 0.0;
  double d1_slope = 0.0, d2_slope = 0.0;  // d log(max) / d log w
  double d1_spread = 0.0;                 // max / min over ws
  std::int64_t n_pairs = 0;
  std::uint64_t seed = 0;
};

/// (D1)/(D2) shapes: the same n_xi random offsets xi = (x - x~) w^{1/3} in
/// the support are evaluated at n_w log-spaced w in [w_a, w_b].
inline KernelBoundReport kernel_bounds_check(const MollifierKernel& ker, double w_a, double w_b, int n_w,
                                             int n_xi, std::uint64_t seed) {
  if (!(w_a > 0.0 && w_b > w_a) || n_w < 2 || n_xi < 1) throw OutOfRange("kernel_bounds_check: bad range");
  KernelBoundReport rep;
  rep.seed = seed;
  auto rng = make_stream(seed, 0x4b31);
  std::vector<Vec4> xis(static_cast<std::size_t>(n_xi));
  for (auto& xi : xis) {
    const auto b = uniform_in_ball<4>(rng);
    for (std::size_t i = 0; i < 4; ++i) xi[i] = b[i] * ker.rho();
  }
  std::vector<double> lw, l1, l2;
  for (int i = 0; i < n_w; ++i) {
    const double w = w_a * std::pow(w_b / w_a, static_cast<double>(i) / (n_w - 1));
    double m1 = 0.0, m2 = 0.0;
    for (const auto& xi : xis) {
      const auto J = ker.jet(xi, w);
      m1 = std::max(m1, std::abs(J.lap_x - J.lap_xt) / std::pow(w, 2.0 / 3.0));
      m2 = std::max(m2, std::abs(J.lap_x) / (w * w));
    }
    rep.ws.push_back(w);
    rep.d1_max.push_back(m1);
    rep.d2_max.push_back(m2);
    lw.push_back(std::log(w));
    l1.push_back(std::log(m1));
    l2.push_back(std::log(m2));
  }
  rep.n_pairs = static_cast<std::int64_t>(n_w) * n_xi;
  rep.c10_d1 = *std::max_element(rep.d1_max.begin(), rep.d1_max.end());
  rep.c10_d2 = *std::max_element(rep.d2_max.begin(), rep.d2_max.end());
  rep.d1_slope = linear_fit_slope(lw, l1);
  rep.d2_slope = linear_fit_slope(lw, l2);
  rep.d1_spread = rep.c10_d1 / *std::min_element(rep.d1_max.begin(), rep.d1_max.end());
  return rep;
}

// ---------------------------------------------------------------------------
// oscillation of f0 over the support ball

struct OscillationReport {
  double max_osc = 0.0;  // max |f0(x) - f0(x~)|
  double bound = 0.0;    // h / 2
  CylPoint worst;
  std::int64_t n = 0;
  std::uint64_t seed = 0;
  bool pass() const { return max_osc <= bound; }
  double margin() const { return bound - max_osc; }
};

/// n random x~ in the support ball of x, plus the two points along grad f0.
inline OscillationReport oscillation_check(const Field& field, const MollifierKernel& ker, const CylPoint& x,
                                           const OmegaParams& p, std::int64_t n, std::uint64_t seed) {
  if (!(x.w() >= w_of(2.0))) throw OutOfRange("oscillation_check: x.w >= w_2");
  OscillationReport rep;
  rep.bound = 0.5 * p.h;
  rep.seed = seed;
  rep.worst = x;
  const double r = support_radius(ker, x.w());
  const double f_x = field.f0(x);
  auto probe = [&](const Vec4& d) {
    const double v = std::abs(field.f0(x.shifted(d)) - f_x);
    if (v > rep.max_osc) {
      rep.max_osc = v;
      rep.worst = x;
    }
    ++rep.n;
  };
  const auto [gw, gy] = field.grad_f0(x);
  const double gn = std::sqrt(gw * gw + dot(gy, gy));
  if (gn > 0.0) {
    for (double s : {-1.0, 1.0}) {
      const double c = s * r * (1.0 - 1e-12) / gn;
      probe({c * gw, c * gy[0], c * gy[1], c * gy[2]});
    }
  }
  auto rng = make_stream(seed, splitmix64(static_cast<std::uint64_t>(x.w() * 1e9)));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto b = uniform_in_ball<4>(rng);
    probe({b[0] * r, b[1] * r, b[2] * r, b[3] * r});
  }
  return rep;
}

struct OscillationSurvey {
  OscillationReport worst;
  std::int64_t n_centers = 0;
  bool adversarial = false;
};

/// Random centers in [w_a, w_b] x T^3, or (adversarial) the n_centers points
/// of largest |grad f0| among 20 n_centers candidates.
inline OscillationSurvey oscillation_survey(const Field& field, const MollifierKernel& ker, const OmegaParams& p,
                                            double w_a, double w_b, std::int64_t n_centers, std::int64_t n_per,
                                            std::uint64_t seed, bool adversarial) {
  auto rng = make_stream(seed, adversarial ? 0xad : 0x0c);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto draw = [&] {
    return CylPoint(w_a + (w_b - w_a) * u01(rng), Vec3{two_pi * u01(rng), two_pi * u01(rng), two_pi * u01(rng)});
  };
  std::vector<CylPoint> centers;
  if (!adversarial) {
    for (std::int64_t i = 0; i < n_centers; ++i) centers.push_back(draw());
  } else {
    std::vector<std::pair<double, CylPoint>> cand;
    for (std::int64_t i = 0; i < 20 * n_centers; ++i) {
      const auto x = draw();
      const auto [gw, gy] = field.grad_f0(x);
      // |grad f0| / w^{1/3}: the quantity the support radius compensates
      cand.emplace_back(std::sqrt(gw * gw + dot(gy, gy)) / std::cbrt(x.w()), x);
    }
    std::partial_sort(cand.begin(), cand.begin() + n_centers, cand.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::int64_t i = 0; i < n_centers; ++i) centers.push_back(cand[static_cast<std::size_t>(i)].second);
  }
  OscillationSurvey s;
  s.adversarial = adversarial;
  s.n_centers = n_centers;
  s.worst.bound = 0.5 * p.h;
  s.worst.seed = seed;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const auto rep = oscillation_check(field, ker, centers[i], p, n_per, seed + i);
    if (i == 0 || rep.max_osc > s.worst.max_osc) {
      const auto total = s.worst.n;
      s.worst = rep;
      s.worst.n = total;
      s.worst.seed = seed;
    }
    s.worst.n += rep.n;
  }
  return s;
}

// ---------------------------------------------------------------------------
// stratified samples

enum class Stratum { u_far, layer, inner };  // |f0| >= 2h, h < |f0| < 2h, |f0| <= h

inline const char* to_string(Stratum s) {
  return s == Stratum::u_far ? "U_far" : (s == Stratum::layer ? "U_and_Omega" : "Omega_minus_U");
}

struct Sample {
  CylPoint x;
  Stratum stratum = Stratum::u_far;
};

/// Rejection sampling on [w_a, w_b] x T^3 until each stratum has its count.
inline std::vector<Sample> stratified_samples(const Field& field, double h, double w_a, double w_b,
                                              std::array<std::int64_t, 3> counts, std::uint64_t seed) {
  auto rng = make_stream(seed, 0x5a);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::array<std::vector<Sample>, 3> by;
  const std::int64_t cap = 1000 * (counts[0] + counts[1] + counts[2]) + 1000;
  for (std::int64_t t = 0; t < cap; ++t) {
    if (static_cast<std::int64_t>(by[0].size()) >= counts[0] && static_cast<std::int64_t>(by[1].size()) >= counts[1] &&
        static_cast<std::int64_t>(by[2].size()) >= counts[2])
      break;
    const CylPoint x(w_a + (w_b - w_a) * u01(rng), Vec3{two_pi * u01(rng), two_pi * u01(rng), two_pi * u01(rng)});
    const double a = std::abs(field.f0(x));
    const int s = a >= 2.0 * h ? 0 : (a > h ? 1 : 2);
    auto& v = by[static_cast<std::size_t>(s)];
    if (static_cast<std::int64_t>(v.size()) < counts[static_cast<std::size_t>(s)])
      v.push_back({x, static_cast<Stratum>(s)});
  }
  std::vector<Sample> out;
  for (int s = 0; s < 3; ++s) {
    const auto& v = by[static_cast<std::size_t>(s)];
    if (static_cast<std::int64_t>(v.size()) < counts[static_cast<std::size_t>(s)])
      throw DegenerateInput(std::string("stratified_samples: stratum ") + to_string(static_cast<Stratum>(s)) +
                            " too thin to fill");
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// off U: F = I[g] and Laplace F = 0

/// Bounds attributable to the cell faces of I[g] that cut the support ball:
/// |F - I[g](x)| <= sum J (r - |d|), and the face measure of Laplace I[g]
/// mollified, sum J w^{1/3} M(|d| w^{1/3}) with M the plane marginal of psi.
struct KinkBounds {
  int faces = 0;
  double value = 0.0;
  double lap = 0.0;
};

inline KinkBounds kink_bounds(const MollifierKernel& ker, const PatchedField& pf, const CylPoint& x) {
  const double r = support_radius(ker, x.w());
  const double s = std::cbrt(x.w());
  KinkBounds kb;
  for (const auto& f : pf.kink_faces(x, r)) {
    ++kb.faces;
    kb.value += f.jump * (r - std::abs(f.offset));
    kb.lap += f.jump * s * ker.plane_marginal(std::abs(f.offset) * s);
  }
  return kb;
}

struct OffUPoint {
  CylPoint x;
  double f = 0.0, g = 0.0, lap = 0.0;
  double tol_value = 0.0, tol_lap = 0.0;
  KinkBounds kinks;
  bool value_ok = false, lap_ok = false;
};

struct OffUReport {
  std::vector<OffUPoint> points;
  std::int64_t n_single_cell = 0, n_kinked = 0;
  std::int64_t value_fail = 0, lap_fail_single = 0, lap_fail_kinked = 0;
  double max_value_dev = 0.0;     // max |F - I[g]| / tol
  double max_lap_single = 0.0;    // max |Laplace F| / tol over single-cell balls
  double max_lap_kinked = 0.0;    // max |Laplace F| / (kink bound + tol)
  bool value_pass() const { return value_fail == 0 && !points.empty(); }
  bool lap_pass() const { return lap_fail_single == 0 && n_single_cell > 0; }
};

/// Quadrature tolerance on a converged result: three times the change at the
/// last doubling plus a roundoff floor on the integrand scale.
inline double quad_tol_value(const Mollified& m) { return 3.0 * m.err_value + 1e-12 * m.value_scale; }
inline double quad_tol_lap(const Mollified& m) { return 3.0 * m.err_lap + 1e-10 * m.lap_scale + m.lap_floor; }

inline OffUReport off_u_check(const MollifierKernel& ker, const PatchedField& pf, const std::vector<CylPoint>& xs,
                              const QuadSpec& q = {}) {
  OffUReport rep;
  rep.points.resize(xs.size());
  parallel_chunks(xs.size(), [&](std::size_t i) {
    auto& p = rep.points[i];
    p.x = xs[i];
    const auto m = mollify(ker, pf, p.x, Source::f_star, q);
    p.f = m.value;
    p.lap = m.lap;
    p.g = pf.g_scaled(p.x);
    p.kinks = kink_bounds(ker, pf, p.x);
    p.tol_value = quad_tol_value(m) + p.kinks.value;
    p.tol_lap = quad_tol_lap(m) + p.kinks.lap;
    p.value_ok = std::abs(p.f - p.g) <= p.tol_value;
    p.lap_ok = std::abs(p.lap) <= p.tol_lap;
  });
  for (const auto& p : rep.points) {
    const bool single = p.kinks.faces == 0;
    (single ? rep.n_single_cell : rep.n_kinked)++;
    if (!p.value_ok) ++rep.value_fail;
    if (!p.lap_ok) ++(single ? rep.lap_fail_single : rep.lap_fail_kinked);
    rep.max_value_dev = std::max(rep.max_value_dev, std::abs(p.f - p.g) / p.tol_value);
    if (single)
      rep.max_lap_single = std::max(rep.max_lap_single, std::abs(p.lap) / p.tol_lap);
    else
      rep.max_lap_kinked = std::max(rep.max_lap_kinked, std::abs(p.lap) / p.tol_lap);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// finite-difference audit of the under-integral Laplacian

namespace detail {

/// f* relative to exp(-W(x0)) minus L(x~) = c0 + g.(x~ - x0), handed to
/// ball_sums in its per-w scaling. g is a central-difference gradient; the
/// identity behind the control holds for any g.
struct LinearControl {
  PatchSource base;
  CylPoint x0;
  double W0 = 0.0, c0 = 0.0;
  Vec4 g{};

  LinearControl(const PatchedField& pf, const CylPoint& x, double t) : base{&pf}, x0(x), W0(MaskedGrid::W(x.w())) {
    c0 = at_x0_scale(x);
    for (std::size_t a = 0; a < 4; ++a) {
      Vec4 e{};
      e[a] = t;
      const Vec4 me{-e[0], -e[1], -e[2], -e[3]};
      g[a] = (at_x0_scale(x.shifted(e)) - at_x0_scale(x.shifted(me))) / (2.0 * t);
    }
  }
  double at_x0_scale(const CylPoint& p) const {
    return base.at_w(p.w())(p.y()) * std::exp(W0 - MaskedGrid::W(p.w()));
  }
  double linear(double w, const Vec3& y) const {
    double v = c0 + g[0] * (w - x0.w());
    for (std::size_t a = 0; a < 3; ++a) {
      double d = y[a] - x0.y()[a];
      d -= two_pi * std::round(d / two_pi);
      v += g[a + 1] * d;
    }
    return v;
  }
  auto at_w(double w) const {
    return [f = base.at_w(w), this, w, e = std::exp(MaskedGrid::W(w) - W0)](const Vec3& y) mutable {
      return f(y) - linear(w, y) * e;
    };
  }
};

}  // namespace detail

struct LaplacianAudit {
  CylPoint x;
  double analytic = 0.0, fd = 0.0, value = 0.0, lap_scale = 0.0;
  double rel = 0.0;  // |fd - analytic| / max(|analytic|, |fd|, floor * lap_scale)
};

/// Fourth-order central differences of F (each value its own quadrature at
/// n_fd nodes per panel), step = step_frac * support radius, against the
/// under-integral Laplacian at n_analytic nodes. The Laplacian kernel is
/// rougher than the kernel, so the analytic side needs the finer rule.
///
/// The differenced values integrate K (f* - L) with L linear, fitted at x:
/// K has unit mass and first moment x, so F = int K (f* - L) + L exactly, and
/// L has no Laplacian. The integrand drops from |grad f*| r to |D^2 f*| r^2,
/// and with it the quadrature noise that the 1/step^2 of the difference
/// amplifies; plain values lost ~1e-3 where F cancels 1e4-fold.
/// With the noise gone the step can shrink: near interpolation faces F varies
/// on the kernel scale and r/20 left ~1e-3 of truncation error; r/40 ~1e-4.
/// Where Delta F cancels to far below its integrand the relative gap means
/// nothing; floor * lap_scale bounds the denominator from below.
inline LaplacianAudit laplacian_audit(const MollifierKernel& ker, const PatchedField& pf, const CylPoint& x,
                                      int n_fd = 32, int n_analytic = 64, double step_frac = 1.0 / 40.0,
                                      double floor = 1e-6) {
  const double s = step_frac * support_radius(ker, x.w());
  const double Wc = MaskedGrid::W(x.w());
  const detail::LinearControl ctrl(pf, x, 0.25 * support_radius(ker, x.w()));
  auto eval = [&](const Vec4& d) {
    const auto xp = x.shifted(d);
    const auto sums = detail::ball_sums(ker, pf.lattice(), xp, xp, support_radius(ker, xp.w()), n_fd, ctrl, 0.0, false);
    return sums.value * std::exp(Wc - MaskedGrid::W(xp.w()));
  };
  LaplacianAudit a;
  a.x = x;
  const double v0 = eval(Vec4{});
  const auto c = mollify_fixed(ker, pf, x, n_analytic);
  a.analytic = c.lap;
  a.value = c.value;
  a.lap_scale = c.lap_scale;
  double acc = 0.0;
  for (std::size_t ax = 0; ax < 4; ++ax) {
    Vec4 e{}, e2{}, me{}, me2{};
    e[ax] = s;
    e2[ax] = 2.0 * s;
    me[ax] = -s;
    me2[ax] = -2.0 * s;
    acc += (-eval(e2) + 16.0 * eval(e) - 30.0 * v0 + 16.0 * eval(me) - eval(me2)) / (12.0 * s * s);
  }
  a.fd = acc;
  const double den = std::max({std::abs(a.analytic), std::abs(a.fd), floor * a.lap_scale});
  a.rel = den > 0.0 ? std::abs(a.fd - a.analytic) / den : 0.0;
  return a;
}

// ---------------------------------------------------------------------------
// sphere means of the patch

/// int over the sphere |x~ - x| = t of I[g], divided by t^3, relative to
/// 2 pi^2 I[g](x). Hopf coordinates: Gauss-Legendre in eta, trapezoid in the
/// two angles (exact for the trigonometric polynomials a multilinear
/// function restricts to).
inline double sphere_mean_defect(const PatchedField& pf, const CylPoint& x, double t, int n_eta = 16,
                                 int n_phi = 16) {
  const auto& gl = gauss_legendre(n_eta);
  const double g0 = pf.g_scaled(x);
  const double Wx = MaskedGrid::W(x.w());
  double acc = 0.0;
  for (std::size_t i = 0; i < gl.x.size(); ++i) {
    const double eta = 0.25 * pi * (1.0 + gl.x[i]);
    const double wt_eta = 0.25 * pi * gl.w[i] * std::sin(eta) * std::cos(eta);
    for (int a = 0; a < n_phi; ++a) {
      const double p1 = two_pi * a / n_phi;
      for (int b = 0; b < n_phi; ++b) {
        const double p2 = two_pi * b / n_phi;
        const Vec4 d{t * std::cos(eta) * std::cos(p1), t * std::cos(eta) * std::sin(p1),
                     t * std::sin(eta) * std::cos(p2), t * std::sin(eta) * std::sin(p2)};
        const auto xp = x.shifted(d);
        // g_scaled is relative to exp(-W(xp)); bring it to exp(-W(x))
        acc += wt_eta * (two_pi / n_phi) * (two_pi / n_phi) * pf.g_scaled(xp) * std::exp(Wx - MaskedGrid::W(xp.w()));
      }
    }
  }
  const double ref = 2.0 * pi * pi * g0;
  return std::abs(acc - ref) / std::max(std::abs(ref), 1e-300);
}

// ---------------------------------------------------------------------------
// comparison function G

struct GCheck {
  CylPoint x;
  double G = 0.0, lap_G = 0.0;
  double i1 = 0.0;          // int (lap_x - lap_x~) K f
  double i2_parts = 0.0;    // int lap_x~ K f
  double i2_direct = 0.0;   // int K Laplace f
  double split_tol = 0.0;
  double F = 0.0, lap_F = 0.0;
  bool ball_misses_omega = false;
  bool split_ok() const { return std::abs(i2_parts - i2_direct) <= split_tol; }
};

inline GCheck g_check(const MollifierKernel& ker, const PatchedField& pf, const CylPoint& x, const QuadSpec& q = {},
                      bool with_f = true) {
  GCheck c;
  c.x = x;
  const auto g = mollify(ker, pf, x, Source::f_only, q);
  c.G = g.value;
  c.lap_G = g.lap;
  c.i2_parts = g.lap_xt;
  c.i1 = g.lap - g.lap_xt;
  const auto d = mollify_laplace_f(ker, pf, x, q);
  c.i2_direct = d.value;
  // lap_xt converges with the same nodes as lap
  c.split_tol = quad_tol_lap(g) + quad_tol_value(d);
  if (with_f) {
    const auto f = mollify(ker, pf, x, Source::f_star, q);
    c.F = f.value;
    c.lap_F = f.lap;
  }
  const double r = support_radius(ker, x.w());
  // |f0| >= 2h + h/2 at the center keeps the ball out of Omega (oscillation)
  c.ball_misses_omega = std::abs(pf.field().f0(x)) >= 2.5 * pf.h() && r > 0.0;
  return c;
}

// ---------------------------------------------------------------------------
// headline certificate

struct SampleResult {
  CylPoint x;
  Stratum stratum = Stratum::u_far;
  double f0 = 0.0;
  double F = 0.0, lap = 0.0;
  double err_value = 0.0, err_lap = 0.0, lap_scale = 0.0, lap_floor = 0.0;
  int kink_faces = 0;
  double kink_lap = 0.0;
  double ratio() const { return std::abs(lap) / std::max(std::abs(F), 1e-300); }
};

struct Certificate {
  double h = 0.0;
  double c8 = 0.0, c9 = 0.0;
  double rho = 0.0;
  int k_star_paper = 0;  // smallest k >= 6 with w_{k-1}^{2/3} >= 4 C8 / h

  std::vector<SampleResult> samples;

  // (i) upper bound
  double max_scaled_F = 0.0;
  bool upper_pass = false;
  // (ii) lower bound h/8 on U beyond the empirical threshold
  double lower_bound = 0.0;
  double threshold_w = std::numeric_limits<double>::quiet_NaN();
  double min_F_beyond = 0.0;
  std::int64_t n_U = 0, n_U_beyond = 0;
  bool lower_pass = false;
  // (iii) Laplace F = 0 off U
  std::int64_t n_inner_single = 0, n_inner_kinked = 0, inner_fail = 0;
  double max_inner_lap_over_tol = 0.0;
  bool cor55_pass = false;
  // (iv) ratio
  double ratio_C = 0.0;
  CylPoint ratio_at;
  Stratum ratio_stratum = Stratum::u_far;
  double c12 = 0.0;  // max |Laplace F| over all samples
  bool ratio_pass = false;

  double runtime_s = 0.0;
  bool pass() const { return upper_pass && lower_pass && cor55_pass && ratio_pass; }
};

inline double c9_of(double c8, double rho) { return (c8 + 1.0) * std::exp(4.0 / 3.0 * rho * std::cbrt(2.0)); }

inline int k_star_of(double c8, double h) {
  for (int k = 6; k < 1'000'000; ++k)
    if (std::pow(w_of(k - 1.0), 2.0 / 3.0) >= 4.0 * c8 / h) return k;
  return -1;
}

/// Evaluate F and Laplace F at every sample. With strict = true the first
/// failing sample is thrown as CertificationFailed.
inline Certificate certify_theorem(const MollifierKernel& ker, const PatchedField& pf,
                                   const std::vector<Sample>& samples, double c8, const QuadSpec& q = {},
                                   bool strict = false) {
  const auto t0 = std::chrono::steady_clock::now();
  Certificate c;
  c.h = pf.h();
  c.c8 = c8;
  c.rho = ker.rho();
  c.c9 = c9_of(c8, ker.rho());
  c.k_star_paper = k_star_of(c8, c.h);
  c.lower_bound = c.h / 8.0;
  c.samples.resize(samples.size());
  parallel_chunks(samples.size(), [&](std::size_t i) {
    auto& s = c.samples[i];
    s.x = samples[i].x;
    s.stratum = samples[i].stratum;
    s.f0 = pf.field().f0(s.x);
    const auto m = mollify(ker, pf, s.x, Source::f_star, q);
    s.F = m.value;
    s.lap = m.lap;
    s.err_value = m.err_value;
    s.err_lap = m.err_lap;
    s.lap_scale = m.lap_scale;
    s.lap_floor = m.lap_floor;
    if (s.stratum == Stratum::inner) {
      const auto kb = kink_bounds(ker, pf, s.x);
      s.kink_faces = kb.faces;
      s.kink_lap = kb.lap;
    }
  });

  auto fail = [&](const std::string& what, const CylPoint& x) {
    if (strict) throw CertificationFailed(what, x);
  };

  // (i)
  const SampleResult* top = nullptr;
  for (const auto& s : c.samples)
    if (!top || std::abs(s.F) > std::abs(top->F)) top = &s;
  if (top) c.max_scaled_F = std::abs(top->F);
  c.upper_pass = top != nullptr && c.max_scaled_F <= c.c9;
  if (top && !c.upper_pass) fail("scaled |F| exceeds C9", top->x);

  // (ii) threshold: smallest sampled U abscissa beyond which every U sample clears h/8
  std::vector<const SampleResult*> U;
  for (const auto& s : c.samples)
    if (s.stratum != Stratum::inner) U.push_back(&s);
  std::sort(U.begin(), U.end(), [](auto a, auto b) { return a->x.w() < b->x.w(); });
  c.n_U = static_cast<std::int64_t>(U.size());
  std::int64_t last_bad = -1;
  for (std::size_t i = 0; i < U.size(); ++i)
    if (!(std::abs(U[i]->F) >= c.lower_bound)) last_bad = static_cast<std::int64_t>(i);
  if (last_bad + 1 < c.n_U) {
    const auto first = static_cast<std::size_t>(last_bad + 1);
    c.threshold_w = U[first]->x.w();
    c.n_U_beyond = c.n_U - (last_bad + 1);
    c.min_F_beyond = std::numeric_limits<double>::infinity();
    for (std::size_t i = first; i < U.size(); ++i) c.min_F_beyond = std::min(c.min_F_beyond, std::abs(U[i]->F));
  }
  // at least half of the U samples must lie beyond the threshold
  c.lower_pass = c.n_U > 0 && 2 * c.n_U_beyond >= c.n_U;
  if (!c.lower_pass && last_bad >= 0) fail("|F| below h/8 on U", U[static_cast<std::size_t>(last_bad)]->x);

  // (iii)
  for (const auto& s : c.samples) {
    if (s.stratum != Stratum::inner) continue;
    const double tol = 3.0 * s.err_lap + 1e-10 * s.lap_scale + s.lap_floor;
    if (s.kink_faces == 0) {
      ++c.n_inner_single;
      c.max_inner_lap_over_tol = std::max(c.max_inner_lap_over_tol, std::abs(s.lap) / tol);
      if (std::abs(s.lap) > tol) {
        ++c.inner_fail;
        fail("Laplace F nonzero off U", s.x);
      }
    } else {
      ++c.n_inner_kinked;
    }
  }
  c.cor55_pass = c.n_inner_single > 0 && c.inner_fail == 0;

  // (iv)
  bool any = false;
  for (const auto& s : c.samples) {
    c.c12 = std::max(c.c12, std::abs(s.lap));
    if (s.stratum == Stratum::inner) continue;
    if (!any || s.ratio() > c.ratio_C) {
      c.ratio_C = s.ratio();
      c.ratio_at = s.x;
      c.ratio_stratum = s.stratum;
      any = true;
    }
  }
  c.ratio_pass = any && std::isfinite(c.ratio_C);
  if (any && !c.ratio_pass) fail("ratio not finite", c.ratio_at);
  c.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

// ---------------------------------------------------------------------------
// rescaling spot check: F~(w, y) = F(2w, 2y)

struct RescaleSpot {
  CylPoint x;             // point of F~
  double lap_tilde_fd = 0.0;   // finite-difference Laplacian of F~ at x, relative to exp(-(2w)^{4/3})
  double lap_scaled_up = 0.0;  // 4 Laplace F(2x), same scaling
  double rel = 0.0;
  double F_tilde = 0.0;        // |F~(x)| exp(2^{4/3} w^{4/3})
};

inline RescaleSpot rescale_spot_check(const MollifierKernel& ker, const PatchedField& pf, const CylPoint& x,
                                      int n_fd = 32, int n_analytic = 64, double step_frac = 1.0 / 20.0,
                                      double floor = 1e-6) {
  const CylPoint X = rescale(x, 2);
  const double s = step_frac * support_radius(ker, X.w()) / 2.0;  // step in x; 2s in X
  const double WX = MaskedGrid::W(X.w());
  auto Ft = [&](const Vec4& d) {  // F~(x + d) = F(X + 2d), relative to exp(-W(X))
    const CylPoint Xp = X.shifted({2.0 * d[0], 2.0 * d[1], 2.0 * d[2], 2.0 * d[3]});
    return mollify_fixed(ker, pf, Xp, n_fd).value * std::exp(WX - MaskedGrid::W(Xp.w()));
  };
  const double v0 = Ft(Vec4{});
  const auto c = mollify_fixed(ker, pf, X, n_analytic);
  double acc = 0.0;
  for (std::size_t ax = 0; ax < 4; ++ax) {
    Vec4 e{}, e2{}, me{}, me2{};
    e[ax] = s;
    e2[ax] = 2.0 * s;
    me[ax] = -s;
    me2[ax] = -2.0 * s;
    acc += (-Ft(e2) + 16.0 * Ft(e) - 30.0 * v0 + 16.0 * Ft(me) - Ft(me2)) / (12.0 * s * s);
  }
  RescaleSpot sp;
  sp.x = x;
  sp.lap_tilde_fd = acc;
  sp.lap_scaled_up = 4.0 * c.lap;
  sp.rel = std::abs(acc - sp.lap_scaled_up) /
           std::max({std::abs(acc), std::abs(sp.lap_scaled_up), 4.0 * floor * c.lap_scale, 1e-300});
  sp.F_tilde = std::abs(c.value);
  return sp;
}

}  // namespace halfcyl
