#pragma once

// The blended field f0 on [w_2, inf) x T^3, its derivatives, and the
// decaying field f = f0 exp(-w^{4/3}) carried as (mantissa, log-envelope).

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "common.hpp"
#include "lattice.hpp"
#include "profile.hpp"

namespace halfcyl {

inline double log_envelope(double w) { return -std::pow(w, 4.0 / 3.0); }

struct FieldSample {
  double f0 = 0.0;
  double grad_w = 0.0;
  Vec3 grad_y{0.0, 0.0, 0.0};
  double lap_f_scaled = 0.0;  // (Laplacian of f) * exp(+w^{4/3})
  double log_envelope = 0.0;  // -w^{4/3}
  std::int64_t band = 0;

  double grad_norm() const {
    return std::sqrt(grad_w * grad_w + dot(grad_y, grad_y));
  }
  /// f itself; underflows to 0 once w^{4/3} > ~745.
  double f() const { return f0 * std::exp(log_envelope); }
};

/// Evaluator for f0 and f over the bands covered by a lattice sequence.
class Field {
 public:
  explicit Field(std::int64_t k_max = 64)
      : seq_(std::make_shared<const Sequence>(build_sequence(k_max))) {
    cache_vectors();
  }
  explicit Field(std::shared_ptr<const Sequence> seq) : seq_(std::move(seq)) { cache_vectors(); }

  const Sequence& sequence() const { return *seq_; }

  /// Largest w the sequence supports (needs a_{k+1} for band k).
  double w_max() const { return w_of(static_cast<double>(seq_->size())); }

  std::int64_t band(double w) const {
    if (!(w >= w_of(2.0))) throw OutOfRange("field: w below w_2");
    const std::int64_t k = band_of(w);
    if (k + 1 > seq_->size()) throw OutOfRange("field: w beyond the built sequence");
    return k;
  }

  double f0(const CylPoint& x) const { return f0(x.w(), x.y()); }

  double f0(double w, const Vec3& y) const {
    const std::int64_t k = band(w);
    const double wk = w_of(static_cast<double>(k));
    const double s = (w - wk) / (w_of(static_cast<double>(k + 1)) - wk);
    const double z = zeta(s);
    const auto& a = vec(k);
    const auto& b = vec(k + 1);
    return (1.0 - z) * std::cos(dot(a, y)) + z * std::cos(dot(b, y));
  }

  /// The w-dependent part of f0, reusable across y at fixed w.
  struct AxialSlice {
    double z = 0.0;  // blend weight of a_{k+1}
    const Vec3* a = nullptr;
    const Vec3* b = nullptr;
  };

  AxialSlice axial(double w) const {
    const std::int64_t k = band(w);
    const double wk = w_of(static_cast<double>(k));
    const double s = (w - wk) / (w_of(static_cast<double>(k + 1)) - wk);
    return {zeta(s), &vec(k), &vec(k + 1)};
  }

  double f0(const AxialSlice& ax, const Vec3& y) const {
    return (1.0 - ax.z) * std::cos(dot(*ax.a, y)) + ax.z * std::cos(dot(*ax.b, y));
  }

  /// (d f0/dw, grad_y f0).
  std::pair<double, Vec3> grad_f0(const CylPoint& x) const {
    const auto s = sample(x.w(), x.y());
    return {s.grad_w, s.grad_y};
  }

  double lap_f_scaled(const CylPoint& x) const { return sample(x.w(), x.y()).lap_f_scaled; }

  FieldSample sample(const CylPoint& x) const { return sample(x.w(), x.y()); }

  FieldSample sample(double w, const Vec3& y) const {
    FieldSample out;
    const std::int64_t k = band(w);
    out.band = k;
    const double wk = w_of(static_cast<double>(k));
    const double width = w_of(static_cast<double>(k + 1)) - wk;
    const auto zj = zeta_jet((w - wk) / width);
    const auto& a = vec(k);
    const auto& b = vec(k + 1);
    const double pa = dot(a, y);
    const double pb = dot(b, y);
    const double ca = std::cos(pa), sa = std::sin(pa);
    const double cb = std::cos(pb), sb = std::sin(pb);
    const double a2 = dot(a, a);
    const double b2 = dot(b, b);

    out.f0 = (1.0 - zj.value) * ca + zj.value * cb;
    out.grad_w = zj.d1 / width * (cb - ca);
    for (int i = 0; i < 3; ++i)
      out.grad_y[i] = -(1.0 - zj.value) * sa * a[i] - zj.value * sb * b[i];

    // Laplacian of exp(-w^{4/3}) cos(a.y), divided by the envelope, is
    // (16/9 w^{2/3} - 4/9 w^{-2/3} - |a|^2) cos(a.y).
    const double w13 = std::cbrt(w);
    const double w23 = w13 * w13;
    const double radial = 16.0 / 9.0 * w23 - 4.0 / 9.0 / w23;
    const double env_d1 = -4.0 / 3.0 * w13;  // (e^{-w^{4/3}})' / e^{-w^{4/3}}
    out.lap_f_scaled = (1.0 - zj.value) * (radial - a2) * ca + zj.value * (radial - b2) * cb +
                       2.0 / width * zj.d1 * env_d1 * (cb - ca) +
                       zj.d2 / (width * width) * (cb - ca);
    out.log_envelope = log_envelope(w);
    return out;
  }

  /// sup |grad_y f0| allowed in band k, namely |a_{k+1}|.
  double grad_y_bound(std::int64_t k) const { return norm(vec(k + 1)); }

  const Vec3& vec(std::int64_t k) const { return real_vecs_[static_cast<std::size_t>(k - 1)]; }

 private:
  void cache_vectors() {
    real_vecs_.clear();
    for (const auto& v : seq_->vecs) real_vecs_.push_back(v.as_real());
  }

  std::shared_ptr<const Sequence> seq_;
  std::vector<Vec3> real_vecs_;
};

/// Tangent-line bound for the envelope: (w-r)^{4/3} >= w^{4/3} - (4/3) w^{1/3} r,
/// and at r = 3/(4 w^{1/3}) also (w-r)^{4/3} >= w^{4/3} - 1. Compared up to a
/// few ulps of w^{4/3}.
inline bool envelope_ineq_check(double w, double r) {
  if (!(r >= 0.0 && r <= w)) throw OutOfRange("envelope_ineq_check: need 0 <= r <= w");
  const double lhs = std::pow(w - r, 4.0 / 3.0);
  const double w43 = std::pow(w, 4.0 / 3.0);
  const double slack = 8.0 * std::numeric_limits<double>::epsilon() * w43;
  bool ok = lhs + slack >= w43 - 4.0 / 3.0 * std::cbrt(w) * r;
  if (w > 0.0 && r == 3.0 / (4.0 * std::cbrt(w))) ok = ok && (lhs + slack >= w43 - 1.0);
  return ok;
}

/// (w, y) -> (n w, n y mod 2 pi).
inline CylPoint rescale(const CylPoint& x, std::int64_t n) {
  if (n < 1) throw OutOfRange("rescale: n must be >= 1");
  const double m = static_cast<double>(n);
  const auto& y = x.y();
  return CylPoint(m * x.w(), Vec3{m * y[0], m * y[1], m * y[2]});
}

// ---------------------------------------------------------------------------
// band statistics (Monte-Carlo sweeps over one band)

struct BandStats {
  std::int64_t k = 0;
  std::int64_t n = 0;
  double sup_abs_f0 = 0.0;
  double sup_grad_w = 0.0;
  double sup_grad_y = 0.0;
  double sup_grad_over_sqrt_k = 0.0;
  double sup_abs_lap_scaled = 0.0;
};

/// Uniform samples of [w_k, w_{k+1}) x T^3.
inline BandStats band_stats(const Field& field, std::int64_t k, std::int64_t n, std::uint64_t seed) {
  constexpr std::size_t chunks = 64;
  std::vector<BandStats> part(chunks);
  const double w_lo = w_of(static_cast<double>(k));
  const double w_hi = w_of(static_cast<double>(k + 1));
  parallel_chunks(chunks, [&](std::size_t c) {
    auto rng = make_stream(seed, static_cast<std::uint64_t>(k) * 1000 + c);
    std::uniform_real_distribution<double> uw(w_lo, w_hi), uy(0.0, two_pi);
    const std::int64_t begin = n * static_cast<std::int64_t>(c) / static_cast<std::int64_t>(chunks);
    const std::int64_t end = n * static_cast<std::int64_t>(c + 1) / static_cast<std::int64_t>(chunks);
    BandStats s;
    for (std::int64_t i = begin; i < end; ++i) {
      const double w = uw(rng);
      const Vec3 y{uy(rng), uy(rng), uy(rng)};
      const auto fs = field.sample(w, y);
      s.sup_abs_f0 = std::max(s.sup_abs_f0, std::abs(fs.f0));
      s.sup_grad_w = std::max(s.sup_grad_w, std::abs(fs.grad_w));
      s.sup_grad_y = std::max(s.sup_grad_y, norm(fs.grad_y));
      s.sup_grad_over_sqrt_k =
          std::max(s.sup_grad_over_sqrt_k, fs.grad_norm() / std::sqrt(static_cast<double>(k)));
      s.sup_abs_lap_scaled = std::max(s.sup_abs_lap_scaled, std::abs(fs.lap_f_scaled));
    }
    part[c] = s;
  });
  BandStats out;
  out.k = k;
  out.n = n;
  for (const auto& s : part) {
    out.sup_abs_f0 = std::max(out.sup_abs_f0, s.sup_abs_f0);
    out.sup_grad_w = std::max(out.sup_grad_w, s.sup_grad_w);
    out.sup_grad_y = std::max(out.sup_grad_y, s.sup_grad_y);
    out.sup_grad_over_sqrt_k = std::max(out.sup_grad_over_sqrt_k, s.sup_grad_over_sqrt_k);
    out.sup_abs_lap_scaled = std::max(out.sup_abs_lap_scaled, s.sup_abs_lap_scaled);
  }
  return out;
}

/// Least-squares slope of ys against xs.
inline double linear_fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  if (n < 2 || ys.size() != n) throw OutOfRange("linear_fit_slope: need >= 2 paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

/// Working constants of the field, 1.05 x the empirical band maxima.
struct FieldConstants {
  double c0 = 0.0;  // sup |grad f0| / sqrt(k)
  double c1 = 0.0;  // sup |Laplacian f| exp(w^{4/3})
  double lap_slope = 0.0;
  std::vector<BandStats> bands;
};

inline FieldConstants estimate_field_constants(const Field& field, std::int64_t k_min,
                                               std::int64_t k_max, std::int64_t n_per_band,
                                               std::uint64_t seed) {
  FieldConstants fc;
  std::vector<double> ks, maxima;
  double c0 = 0.0, c1 = 0.0;
  for (std::int64_t k = k_min; k <= k_max; ++k) {
    auto st = band_stats(field, k, n_per_band, seed);
    c0 = std::max(c0, st.sup_grad_over_sqrt_k);
    c1 = std::max(c1, st.sup_abs_lap_scaled);
    ks.push_back(static_cast<double>(k));
    maxima.push_back(st.sup_abs_lap_scaled);
    fc.bands.push_back(st);
  }
  fc.c0 = 1.05 * c0;
  fc.c1 = 1.05 * c1;
  fc.lap_slope = ks.size() >= 2 ? linear_fit_slope(ks, maxima) : 0.0;
  return fc;
}

}  // namespace halfcyl
