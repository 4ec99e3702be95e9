#pragma once

// Integer vectors a_k in Z^3 with |a_k|^2 = 4k+1 and consecutive members at
// angle with sin^2 >= 2/3, built greedily with exact certificates.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <vector>

#include "common.hpp"

namespace halfcyl {

using Int3 = std::array<std::int64_t, 3>;
using wide_int = __int128;

inline wide_int idot(const Int3& a, const Int3& b) {
  return static_cast<wide_int>(a[0]) * b[0] + static_cast<wide_int>(a[1]) * b[1] +
         static_cast<wide_int>(a[2]) * b[2];
}

struct LatticeVec {
  Int3 coords{0, 0, 0};
  std::int64_t k = 0;

  wide_int norm_sq() const { return idot(coords, coords); }
  bool certified() const { return norm_sq() == 4 * static_cast<wide_int>(k) + 1; }
  Vec3 as_real() const {
    return {static_cast<double>(coords[0]), static_cast<double>(coords[1]),
            static_cast<double>(coords[2])};
  }
};

/// One consecutive pair: dot = a_k . a_{k+1}; the pair is admissible iff
/// dot^2 <= bound_sq_num / bound_sq_den, i.e. 3 dot^2 <= (4k+1)(4k+5).
struct PairCertificate {
  std::int64_t k = 0;
  wide_int dot = 0;
  wide_int bound_sq_num = 0;
  wide_int bound_sq_den = 3;

  bool holds() const { return bound_sq_den * dot * dot <= bound_sq_num; }
  /// sin^2 of the angle as the exact fraction (N - dot^2) / N, N = (4k+1)(4k+5).
  wide_int sin2_num() const { return bound_sq_num - dot * dot; }
  wide_int sin2_den() const { return bound_sq_num; }
};

struct SequenceCertificate {
  std::vector<PairCertificate> pairs;

  bool holds() const {
    return std::all_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.holds(); });
  }
};

/// Largest k_max for which (4k+1)(4k+5) and the enumeration stay comfortably
/// inside 64-bit coordinates.
inline constexpr std::int64_t max_sequence_length = 100'000'000;

inline std::int64_t isqrt(std::int64_t n) {
  if (n <= 0) return 0;
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(n)));
  while (r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  return r;
}

/// All 0 <= x <= y <= z with x^2+y^2+z^2 = n, lexicographically sorted.
/// Empty exactly when n = 4^a (8b+7).
inline std::vector<Int3> three_squares_reps(std::int64_t n) {
  if (n < 1) throw OutOfRange("three_squares_reps: n must be >= 1");
  std::vector<Int3> out;
  for (std::int64_t x = 0; 3 * x * x <= n; ++x) {
    for (std::int64_t y = x; x * x + 2 * y * y <= n; ++y) {
      const std::int64_t rest = n - x * x - y * y;
      const std::int64_t z = isqrt(rest);
      if (z * z == rest && z >= y) out.push_back({x, y, z});
    }
  }
  return out;
}

/// Lexicographically smallest sorted representation, or nothing.
inline bool first_three_squares_rep(std::int64_t n, Int3& rep) {
  for (std::int64_t x = 0; 3 * x * x <= n; ++x) {
    for (std::int64_t y = x; x * x + 2 * y * y <= n; ++y) {
      const std::int64_t rest = n - x * x - y * y;
      const std::int64_t z = isqrt(rest);
      if (z * z == rest && z >= y) {
        rep = {x, y, z};
        return true;
      }
    }
  }
  return false;
}

/// Place b_rep against a: the largest |a| coordinate meets the smallest b
/// entry, then pick the signs by the four-sums walk
///   A1+A2+A3, A1+A2-A3, A1-A2-A3, -A1-A2-A3   (A_l = |a|_(l) b_l)
/// taking the sum of least magnitude. Ties keep the earlier entry of the walk.
inline Int3 choose_signs(const Int3& a, const Int3& b_rep) {
  if (a == Int3{0, 0, 0} || b_rep == Int3{0, 0, 0})
    throw DegenerateInput("choose_signs: zero vector");

  Int3 b_sorted = b_rep;
  for (auto& c : b_sorted) c = std::llabs(c);
  std::sort(b_sorted.begin(), b_sorted.end());

  // positions of a ordered by descending |a_i|, stable in the index
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return std::llabs(a[i]) > std::llabs(a[j]); });

  static constexpr std::array<std::array<int, 3>, 4> patterns{{
      {+1, +1, +1},
      {+1, +1, -1},
      {+1, -1, -1},
      {-1, -1, -1},
  }};

  Int3 best{};
  wide_int best_abs = -1;
  for (const auto& sign : patterns) {
    Int3 cand{};
    for (int l = 0; l < 3; ++l) {
      const int pos = order[l];
      const std::int64_t sa = a[pos] < 0 ? -1 : 1;
      cand[pos] = sign[l] * sa * b_sorted[l];
    }
    wide_int d = idot(a, cand);
    if (d < 0) d = -d;
    if (best_abs < 0 || d < best_abs) {
      best = cand;
      best_abs = d;
    }
  }
  return best;
}

/// Exact admissibility 3 (a.b)^2 <= |a|^2 |b|^2.
inline bool admissible_pair(const Int3& a, const Int3& b) {
  const wide_int d = idot(a, b);
  return 3 * d * d <= idot(a, a) * idot(b, b);
}

struct Sequence {
  std::vector<LatticeVec> vecs;  // vecs[i] has k = i + 1
  SequenceCertificate certificate;

  const LatticeVec& at(std::int64_t k) const {
    if (k < 1 || k > static_cast<std::int64_t>(vecs.size()))
      throw OutOfRange("Sequence::at: index outside the built range");
    return vecs[static_cast<std::size_t>(k - 1)];
  }
  std::int64_t size() const { return static_cast<std::int64_t>(vecs.size()); }
};

/// a_1 .. a_{k_max}. a_1 is the smallest representation of 5; every later
/// member is choose_signs(previous, smallest representation of 4k+1).
inline Sequence build_sequence(std::int64_t k_max) {
  if (k_max < 1) throw OutOfRange("build_sequence: k_max must be >= 1");
  if (k_max > max_sequence_length) throw OutOfRange("build_sequence: k_max too large");
  Sequence seq;
  seq.vecs.reserve(static_cast<std::size_t>(k_max));
  Int3 rep{};
  for (std::int64_t k = 1; k <= k_max; ++k) {
    const std::int64_t n = 4 * k + 1;
    if (!first_three_squares_rep(n, rep))
      throw Error("build_sequence: no three-square representation of 4k+1 (bug)");
    LatticeVec v{k == 1 ? rep : choose_signs(seq.vecs.back().coords, rep), k};
    if (k > 1) {
      const auto& prev = seq.vecs.back();
      PairCertificate pc;
      pc.k = k - 1;
      pc.dot = idot(prev.coords, v.coords);
      pc.bound_sq_num = static_cast<wide_int>(4 * (k - 1) + 1) * (4 * (k - 1) + 5);
      pc.bound_sq_den = 3;
      seq.certificate.pairs.push_back(pc);
    }
    seq.vecs.push_back(v);
  }
  return seq;
}

/// Unit e in span(a, b) with e.b = 0 and a.e >= 0.
inline Vec3 orth_unit_in_plane(const Vec3& a, const Vec3& b) {
  const double bb = dot(b, b);
  const double aa = dot(a, a);
  if (bb == 0.0 || aa == 0.0) throw DegenerateInput("orth_unit_in_plane: zero vector");
  const double t = dot(a, b) / bb;
  Vec3 e{a[0] - t * b[0], a[1] - t * b[1], a[2] - t * b[2]};
  const double n = norm(e);
  if (n <= 1e-12 * std::sqrt(aa)) throw DegenerateInput("orth_unit_in_plane: parallel inputs");
  for (auto& c : e) c /= n;
  return e;
}

inline Vec3 orth_unit_in_plane(const LatticeVec& a, const LatticeVec& b) {
  return orth_unit_in_plane(a.as_real(), b.as_real());
}

}  // namespace halfcyl
