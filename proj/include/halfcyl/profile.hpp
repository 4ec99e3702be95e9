#pragma once

// Cutoff zeta and the band breakpoints w_k = (27/8) k^{3/2}.

#include <cmath>
#include <cstdint>

#include "common.hpp"

namespace halfcyl {

/// zeta(t) = s(t) / (s(t) + s(1-t)), s(t) = exp(-1/t) for t > 0 and 0 otherwise.
/// Written as a logistic in g(t) = 1/t - 1/(1-t), which keeps every order
/// finite near the endpoints and makes zeta(t) + zeta(1-t) = 1 hold to rounding.
struct ZetaJet {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

inline ZetaJet zeta_jet(double t) {
  if (t <= 0.0) return {0.0, 0.0, 0.0};
  if (t >= 1.0) return {1.0, 0.0, 0.0};
  const double u = 1.0 - t;
  const double g = 1.0 / t - 1.0 / u;
  // z = 1 / (1 + e^g), z(1-z) = e^g / (1+e^g)^2
  double z, zz;
  if (g > 0.0) {
    const double e = std::exp(-g);
    z = e / (1.0 + e);
    zz = e / ((1.0 + e) * (1.0 + e));
  } else {
    const double e = std::exp(g);
    z = 1.0 / (1.0 + e);
    zz = e / ((1.0 + e) * (1.0 + e));
  }
  const double q = 1.0 / (t * t) + 1.0 / (u * u);                  // -g'
  const double dq = -2.0 / (t * t * t) + 2.0 / (u * u * u);          // -g''
  const double d1 = zz * q;
  const double d2 = d1 * (1.0 - 2.0 * z) * q + zz * dq;
  return {z, d1, d2};
}

inline double zeta(double t, int order = 0) {
  const ZetaJet j = zeta_jet(t);
  switch (order) {
    case 0:
      return j.value;
    case 1:
      return j.d1;
    case 2:
      return j.d2;
    default:
      throw OutOfRange("zeta: order must be 0, 1 or 2");
  }
}

struct CutoffProfile {
  double sup_d1 = 0.0;
  double sup_d2 = 0.0;
  std::int64_t n_samples = 0;

  ZetaJet eval(double t) const { return zeta_jet(t); }

  /// Empirical sup |zeta'|, sup |zeta''| over a uniform grid of (0, 1).
  static CutoffProfile sampled(std::int64_t n = 100'000) {
    CutoffProfile p;
    p.n_samples = n;
    for (std::int64_t i = 1; i < n; ++i) {
      const auto j = zeta_jet(static_cast<double>(i) / static_cast<double>(n));
      p.sup_d1 = std::max(p.sup_d1, std::abs(j.d1));
      p.sup_d2 = std::max(p.sup_d2, std::abs(j.d2));
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// breakpoints

inline double w_of(double k) { return 27.0 / 8.0 * k * std::sqrt(k); }

/// Unique k with w_k <= w < w_{k+1}.
inline std::int64_t band_of(double w) {
  if (!(w >= w_of(1.0))) throw OutOfRange("band_of: w below w_1");
  auto k = static_cast<std::int64_t>(std::floor(std::pow(8.0 * w / 27.0, 2.0 / 3.0)));
  k = std::max<std::int64_t>(k, 1);
  while (k > 1 && w_of(static_cast<double>(k)) > w) --k;
  while (w_of(static_cast<double>(k + 1)) <= w) ++k;
  return k;
}

inline double band_width(std::int64_t k) {
  return w_of(static_cast<double>(k + 1)) - w_of(static_cast<double>(k));
}

}  // namespace halfcyl
