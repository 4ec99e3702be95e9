#pragma once

// Shared vocabulary: errors, the cylinder point type, seeded RNG streams and
// a small fork-join helper used by the sampling and stencil kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace halfcyl {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OutOfRange : Error {
  using Error::Error;
};
struct DegenerateInput : Error {
  using Error::Error;
};
struct RadiusOutOfWindow : Error {
  using Error::Error;
};
struct NoAdmissibleRadius : Error {
  using Error::Error;
};
struct EmptyMask : Error {
  using Error::Error;
};
struct InsufficientBand : Error {
  using Error::Error;
};
struct OutOfBand : Error {
  using Error::Error;
};
struct QuadratureNotConverged : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// geometry

using Vec3 = std::array<double, 3>;
using Vec4 = std::array<double, 4>;

inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline double norm(const Vec4& a) {
  return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]);
}

/// Reduce an angle into [0, 2*pi).
inline double wrap_angle(double t) {
  double r = std::fmod(t, two_pi);
  if (r < 0.0) r += two_pi;
  if (r >= two_pi) r = 0.0;
  return r;
}

/// Point x = (w, y) of the half-cylinder [0, inf) x T^3.
class CylPoint {
 public:
  CylPoint() = default;
  CylPoint(double w, const Vec3& y) : w_(w), y_{wrap_angle(y[0]), wrap_angle(y[1]), wrap_angle(y[2])} {
    if (!(w >= 0.0)) throw OutOfRange("CylPoint: axial coordinate must be >= 0");
  }

  double w() const { return w_; }
  const Vec3& y() const { return y_; }

  /// Shift by an ambient 4-vector (dw, dy1, dy2, dy3); y wraps.
  CylPoint shifted(const Vec4& d) const {
    return CylPoint(w_ + d[0], Vec3{y_[0] + d[1], y_[1] + d[2], y_[2] + d[3]});
  }

 private:
  double w_ = 0.0;
  Vec3 y_{0.0, 0.0, 0.0};
};

// ---------------------------------------------------------------------------
// seeded streams

/// SplitMix64 step; used to derive independent per-chunk seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Engine for stream `stream` of a run seeded with `seed`. Streams are fixed
/// per chunk of work, so results do not depend on the thread count.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
}

inline std::size_t default_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

/// Run body(chunk_index) for chunk_index in [0, n_chunks) on up to
/// default_threads() workers. Chunks are claimed in a fixed interleave.
template <class Body>
void parallel_chunks(std::size_t n_chunks, Body&& body) {
  const std::size_t n_threads = std::min(default_threads(), n_chunks);
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) body(c);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    workers.emplace_back([&, t] {
      for (std::size_t c = t; c < n_chunks; c += n_threads) body(c);
    });
  }
}

/// Split [0, n) into contiguous ranges and call body(begin, end) in parallel.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(default_threads(), n / 4096 + 1));
  const std::size_t step = (n + n_threads - 1) / n_threads;
  parallel_chunks(n_threads, [&](std::size_t c) {
    const std::size_t b = c * step;
    const std::size_t e = std::min(n, b + step);
    if (b < e) body(b, e);
  });
}

/// Uniform point in the unit ball of R^D.
template <std::size_t D, class Rng>
std::array<double, D> uniform_in_ball(Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::array<double, D> v{};
  double s = 0.0;
  do {
    s = 0.0;
    for (auto& c : v) {
      c = gauss(rng);
      s += c * c;
    }
  } while (s == 0.0);
  const double r = std::pow(unif(rng), 1.0 / static_cast<double>(D)) / std::sqrt(s);
  for (auto& c : v) c *= r;
  return v;
}

/// Uniform point on the unit sphere S^{D-1}.
template <std::size_t D, class Rng>
std::array<double, D> uniform_on_sphere(Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::array<double, D> v{};
  double s = 0.0;
  do {
    s = 0.0;
    for (auto& c : v) {
      c = gauss(rng);
      s += c * c;
    }
  } while (s == 0.0);
  const double inv = 1.0 / std::sqrt(s);
  for (auto& c : v) c *= inv;
  return v;
}

}  // namespace halfcyl
