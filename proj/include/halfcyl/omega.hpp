#pragma once

// The small-value set Omega = {|f0| < 2h}, its safe complement U = {|f0| > h},
// exact cosine-level measures, and Monte-Carlo sparsity estimates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "common.hpp"
#include "field.hpp"

namespace halfcyl {

struct LevelNotFound : Error {
  using Error::Error;
};

struct OmegaParams {
  double h = 0.01;
  std::string source = "explicit";

  /// h = (2e)^{-10}
  static OmegaParams paper() { return {std::pow(2.0 * std::numbers::e, -10.0), "paper"}; }
  static OmegaParams with_h(double h) {
    if (!(h > 0.0 && h < 0.25)) throw OutOfRange("OmegaParams: h must lie in (0, 1/4)");
    return {h, "explicit"};
  }
};

inline bool in_omega(const Field& field, const CylPoint& x, const OmegaParams& p) {
  return std::abs(field.f0(x)) < 2.0 * p.h;
}

inline bool in_U(const Field& field, const CylPoint& x, const OmegaParams& p) {
  return std::abs(field.f0(x)) > p.h;
}

/// One-sided Monte-Carlo upper-bound check: pass iff estimate + 3 std_err <= bound.
struct MeasureEstimate {
  double estimate = 0.0;
  double std_err = 0.0;
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
  double bound = 0.0;
  bool pass = false;

  double margin() const { return bound - (estimate + 3.0 * std_err); }
};

namespace detail {

inline constexpr std::size_t mc_chunks = 64;

/// Hit fraction of `trial(rng)` over n draws, split into fixed seeded chunks.
template <class Trial>
MeasureEstimate mc_fraction(std::int64_t n, std::uint64_t seed, std::uint64_t stream_base,
                            double scale, double bound, Trial&& trial) {
  if (n < 1) throw OutOfRange("Monte-Carlo estimate needs n >= 1");
  std::vector<std::int64_t> hits(mc_chunks, 0);
  parallel_chunks(mc_chunks, [&](std::size_t c) {
    auto rng = make_stream(seed, stream_base * mc_chunks + c);
    const auto nc = static_cast<std::int64_t>(mc_chunks);
    const std::int64_t b = n * static_cast<std::int64_t>(c) / nc;
    const std::int64_t e = n * static_cast<std::int64_t>(c + 1) / nc;
    std::int64_t local = 0;
    for (std::int64_t i = b; i < e; ++i) local += trial(rng) ? 1 : 0;
    hits[c] = local;
  });
  std::int64_t total = 0;
  for (auto v : hits) total += v;
  const double frac = static_cast<double>(total) / static_cast<double>(n);
  MeasureEstimate m;
  m.estimate = frac * scale;
  m.std_err = std::sqrt(frac * (1.0 - frac) / static_cast<double>(n)) * scale;
  m.n_samples = n;
  m.seed = seed;
  m.bound = bound;
  m.pass = m.estimate + 3.0 * m.std_err <= bound;
  return m;
}

inline std::uint64_t hash_real(double v) {
  std::uint64_t bits = 0;
  static_assert(sizeof bits == sizeof v);
  std::memcpy(&bits, &v, sizeof v);
  return splitmix64(bits);
}

}  // namespace detail

/// Failure policy for upper-bound checks: one rerun at 4x samples on a fresh
/// stream before a check is reported as failed.
template <class Estimator>
MeasureEstimate estimate_with_rerun(Estimator&& est, std::int64_t n, std::uint64_t seed) {
  MeasureEstimate m = est(n, seed);
  if (m.pass) return m;
  return est(4 * n, splitmix64(seed ^ 0x52455255ULL));
}

/// Two-sided agreement of a Monte-Carlo estimate with an exact measure, using
/// the binomial standard error implied by the exact value.
inline bool agrees_within_3se(double exact, double scale, const MeasureEstimate& m) {
  const double p = std::clamp(exact / scale, 0.0, 1.0);
  const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(m.n_samples)) * scale;
  return std::abs(m.estimate - exact) <= 3.0 * se + 1e-15 * scale;
}

// ---------------------------------------------------------------------------
// boundary regularity

struct BoundaryReport {
  std::vector<CylPoint> points;
  std::int64_t resampled = 0;
  double min_grad = std::numeric_limits<double>::infinity();
  double max_residual = 0.0;
};

/// Points with |f0| = 2h found by bisection on chords. Each chord starts at a
/// random x0 with |f0(x0)| > 2h; a zero of f0 on the chord (sign change of f0)
/// gives the other endpoint inside Omega, and |f0| - 2h is bisected between them.
/// w_lo == w_hi pins the search to one slice.
inline BoundaryReport boundary_gradient_check(const Field& field, const OmegaParams& p,
                                              std::int64_t n_points, std::uint64_t seed,
                                              double w_lo, double w_hi, double chord = 0.5) {
  if (n_points < 1) throw OutOfRange("boundary_gradient_check: n_points must be >= 1");
  if (!(w_lo <= w_hi)) throw OutOfRange("boundary_gradient_check: empty w range");
  const bool fixed_w = w_lo == w_hi;
  const double level = 2.0 * p.h;
  auto rng = make_stream(seed, 0xB0D);
  std::uniform_real_distribution<double> uw(w_lo, w_hi), uy(0.0, two_pi);
  BoundaryReport rep;
  const std::int64_t max_attempts = 1000 * n_points;
  std::int64_t attempts = 0;

  auto point_at = [](const CylPoint& x0, const Vec4& d, double t) {
    return x0.shifted({t * d[0], t * d[1], t * d[2], t * d[3]});
  };

  while (static_cast<std::int64_t>(rep.points.size()) < n_points) {
    if (++attempts > max_attempts)
      throw LevelNotFound("boundary_gradient_check: too many chords missed the level set");
    const CylPoint x0(fixed_w ? w_lo : uw(rng), {uy(rng), uy(rng), uy(rng)});
    Vec4 d = uniform_on_sphere<4>(rng);
    if (fixed_w) {
      d[0] = 0.0;
      const double n = norm(d);
      if (n == 0.0) continue;
      for (auto& c : d) c /= n;
    }
    const double w_end = x0.w() + chord * d[0];
    if (w_end < w_lo || w_end > w_hi) {
      ++rep.resampled;
      continue;
    }
    const CylPoint x1 = point_at(x0, d, chord);
    const double f_start = field.f0(x0);
    const double f_end = field.f0(x1);
    if (std::abs(f_start) <= level || f_start * f_end > 0.0) {
      ++rep.resampled;
      continue;
    }
    // zero of f0 on [0, chord]
    double a = 0.0, b = chord;
    for (int it = 0; it < 200 && b - a > 1e-16; ++it) {
      const double m = 0.5 * (a + b);
      if (field.f0(point_at(x0, d, m)) * f_start > 0.0) a = m; else b = m;
    }
    // |f0| - 2h changes sign on [0, b]
    double lo = 0.0, hi = b;
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
      const double m = 0.5 * (lo + hi);
      if (std::abs(field.f0(point_at(x0, d, m))) > level) lo = m; else hi = m;
    }
    const double t = 0.5 * (lo + hi);
    const CylPoint x = point_at(x0, d, t);
    const auto s = field.sample(x);
    rep.max_residual = std::max(rep.max_residual, std::abs(std::abs(s.f0) - level));
    rep.min_grad = std::min(rep.min_grad, s.grad_norm());
    rep.points.push_back(x);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// cosine level sets

/// mes_1 {theta in [0, pi] : cos theta in [sigma - eta, sigma]}.
inline double cos_level_measure(double sigma, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw OutOfRange("cos_level_measure: eta must lie in [0, 1]");
  const double lo = sigma - eta;
  if (lo > 1.0 || sigma < -1.0) return 0.0;
  const double t_hi = std::acos(std::clamp(lo, -1.0, 1.0));
  const double t_lo = std::acos(std::clamp(sigma, -1.0, 1.0));
  return std::max(0.0, t_hi - t_lo);
}

/// mes_1 {tau in [-A, A] : cos(alpha + mu tau) in [sigma - eta, sigma]}, exact.
inline double cos_level_measure_windowed(double alpha, double mu, double A, double sigma,
                                         double eta) {
  if (!(mu > 0.0) || !(A > 0.0)) throw OutOfRange("cos_level_measure_windowed: need mu, A > 0");
  if (!(eta >= 0.0 && eta <= 1.0))
    throw OutOfRange("cos_level_measure_windowed: eta must lie in [0, 1]");
  const double lo = sigma - eta;
  if (lo > 1.0 || sigma < -1.0) return 0.0;
  // on one period [0, 2pi) the set is [t1, t2] U [2pi - t2, 2pi - t1]
  const double t1 = std::acos(std::clamp(sigma, -1.0, 1.0));
  const double t2 = std::acos(std::clamp(lo, -1.0, 1.0));
  const double len = t2 - t1;
  if (len <= 0.0) return 0.0;
  auto cumulative = [&](double x) {
    const double periods = std::floor(x / two_pi);
    const double r = x - periods * two_pi;
    const double part = std::clamp(r - t1, 0.0, len) + std::clamp(r - (two_pi - t2), 0.0, len);
    return periods * 2.0 * len + part;
  };
  return (cumulative(alpha + mu * A) - cumulative(alpha - mu * A)) / mu;
}

/// Monte-Carlo counterpart of cos_level_measure (uniform theta on [0, pi]).
inline MeasureEstimate cos_level_measure_mc(double sigma, double eta, std::int64_t n,
                                            std::uint64_t seed) {
  const double lo = sigma - eta;
  return detail::mc_fraction(n, seed, 0xC05, pi, 2.0 * std::sqrt(eta), [&](auto& rng) {
    std::uniform_real_distribution<double> u(0.0, pi);
    const double c = std::cos(u(rng));
    return c >= lo && c <= sigma;
  });
}

inline MeasureEstimate cos_level_measure_windowed_mc(double alpha, double mu, double A,
                                                     double sigma, double eta, std::int64_t n,
                                                     std::uint64_t seed) {
  const double lo = sigma - eta;
  return detail::mc_fraction(n, seed, 0xC06, 2.0 * A, 4.0 * (A + 2.0) * std::sqrt(eta) / pi,
                             [&](auto& rng) {
                               std::uniform_real_distribution<double> u(-A, A);
                               const double c = std::cos(alpha + mu * u(rng));
                               return c >= lo && c <= sigma;
                             });
}

// ---------------------------------------------------------------------------
// Monte-Carlo sparsity

/// mes_3 {y : |y - y*| <= R, (w, y) in Omega} against 24 pi R^3 sqrt h.
inline MeasureEstimate slice_sparsity(const Field& field, double w, const Vec3& y_star, double R,
                                      const OmegaParams& p, std::int64_t n, std::uint64_t seed) {
  const std::int64_t k = field.band(w);
  const double kd = static_cast<double>(k);
  if (k < 2) throw OutOfRange("slice_sparsity: band must be >= 2");
  if (R < 1.0 / (2.0 * std::sqrt(kd + 2.0)) || R > 1.0 / (2.0 * std::sqrt(kd - 1.0)))
    throw RadiusOutOfWindow("slice_sparsity: R outside [1/(2 sqrt(k+2)), 1/(2 sqrt(k-1))]");
  const double vol = 4.0 / 3.0 * pi * R * R * R;
  const double bound = 24.0 * pi * R * R * R * std::sqrt(p.h);
  return detail::mc_fraction(n, seed, 0x51, vol, bound, [&](auto& rng) {
    const auto z = uniform_in_ball<3>(rng);
    const Vec3 y{y_star[0] + R * z[0], y_star[1] + R * z[1], y_star[2] + R * z[2]};
    return std::abs(field.f0(w, y)) < 2.0 * p.h;
  });
}

inline double ball_radius(double w) { return 3.0 / (4.0 * std::cbrt(w)); }

/// Fraction of B_{R*}(x*) inside Omega, R* = 3/(4 w^{1/3}), against 32 sqrt h.
inline MeasureEstimate ball_sparsity(const Field& field, const CylPoint& x_star,
                                     const OmegaParams& p, std::int64_t n, std::uint64_t seed) {
  if (x_star.w() < w_of(3.0)) throw OutOfRange("ball_sparsity: need w >= w_3");
  const double R = ball_radius(x_star.w());
  return detail::mc_fraction(n, seed, 0xBA11, 1.0, 32.0 * std::sqrt(p.h), [&](auto& rng) {
    const auto z = uniform_in_ball<4>(rng);
    const CylPoint x = x_star.shifted({R * z[0], R * z[1], R * z[2], R * z[3]});
    return std::abs(field.f0(x)) < 2.0 * p.h;
  });
}

struct SphereSearch {
  double radius = 0.0;
  MeasureEstimate estimate;
  double admissible_fraction = 0.0;
  std::int64_t n_radii = 0;
};

/// Scan radii (i + 1/2) R*/n_radii and keep the first whose sphere satisfies
/// the surface-fraction bound 32 sqrt h.
inline SphereSearch sphere_radius_search(const Field& field, const CylPoint& x,
                                         const OmegaParams& p, std::int64_t n_radii,
                                         std::int64_t n, std::uint64_t seed) {
  if (x.w() < w_of(3.0)) throw OutOfRange("sphere_radius_search: need w >= w_3");
  if (n_radii < 1) throw OutOfRange("sphere_radius_search: n_radii must be >= 1");
  const double R = ball_radius(x.w());
  SphereSearch out;
  out.n_radii = n_radii;
  std::int64_t admissible = 0;
  for (std::int64_t i = 0; i < n_radii; ++i) {
    const double r = (static_cast<double>(i) + 0.5) * R / static_cast<double>(n_radii);
    auto est = detail::mc_fraction(
        n, seed, 0x5F0000 + static_cast<std::uint64_t>(i), 1.0, 32.0 * std::sqrt(p.h),
        [&](auto& rng) {
          const auto z = uniform_on_sphere<4>(rng);
          const CylPoint q = x.shifted({r * z[0], r * z[1], r * z[2], r * z[3]});
          return std::abs(field.f0(q)) < 2.0 * p.h;
        });
    if (est.pass) {
      if (admissible == 0) {
        out.radius = r;
        out.estimate = est;
      }
      ++admissible;
    }
  }
  if (admissible == 0) throw NoAdmissibleRadius("sphere_radius_search: no radius met the bound");
  out.admissible_fraction = static_cast<double>(admissible) / static_cast<double>(n_radii);
  return out;
}

/// mes_3 of the Omega cross-section at height w (T^3 has measure 8 pi^3) against pi^3.
inline MeasureEstimate cross_section_measure(const Field& field, double w, const OmegaParams& p,
                                             std::int64_t n, std::uint64_t seed) {
  if (field.band(w) < 2) throw OutOfRange("cross_section_measure: band must be >= 2");
  const double total = 8.0 * pi * pi * pi;
  return detail::mc_fraction(n, seed, 0xC5 ^ detail::hash_real(w), total, pi * pi * pi,
                             [&](auto& rng) {
                               std::uniform_real_distribution<double> u(0.0, two_pi);
                               const Vec3 y{u(rng), u(rng), u(rng)};
                               return std::abs(field.f0(w, y)) < 2.0 * p.h;
                             });
}

}  // namespace halfcyl
