#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "halfcyl/lattice.hpp"

using namespace halfcyl;

namespace {

// Brute force over every triple with z <= ceil(sqrt n).
std::vector<Int3> brute_reps(std::int64_t n) {
  const auto zmax = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::set<Int3> found;
  for (std::int64_t x = 0; x <= zmax; ++x)
    for (std::int64_t y = 0; y <= zmax; ++y)
      for (std::int64_t z = 0; z <= zmax; ++z)
        if (x * x + y * y + z * z == n) {
          Int3 t{x, y, z};
          std::sort(t.begin(), t.end());
          found.insert(t);
        }
  return {found.begin(), found.end()};
}

// All 48 signed permutations of b.
std::vector<Int3> signed_perms(const Int3& b) {
  std::vector<Int3> out;
  std::array<int, 3> idx{0, 1, 2};
  do {
    for (int s = 0; s < 8; ++s) {
      Int3 c{};
      for (int i = 0; i < 3; ++i) c[i] = ((s >> i) & 1 ? -1 : 1) * b[idx[i]];
      out.push_back(c);
    }
  } while (std::next_permutation(idx.begin(), idx.end()));
  return out;
}

bool excluded_form(std::int64_t n) {
  while (n % 4 == 0) n /= 4;
  return n % 8 == 7;
}

}  // namespace

TEST(ThreeSquares, SmallExamples) {
  EXPECT_EQ(three_squares_reps(5), (std::vector<Int3>{{0, 1, 2}}));
  EXPECT_EQ(three_squares_reps(1), (std::vector<Int3>{{0, 0, 1}}));
  EXPECT_EQ(three_squares_reps(9), (std::vector<Int3>{{0, 0, 3}, {1, 2, 2}}));
  EXPECT_TRUE(three_squares_reps(7).empty());
  EXPECT_THROW(three_squares_reps(0), OutOfRange);
}

TEST(ThreeSquares, MatchesBruteForce) {
  for (std::int64_t n = 1; n <= 400; ++n) {
    ASSERT_EQ(three_squares_reps(n), brute_reps(n)) << "n = " << n;
    ASSERT_EQ(three_squares_reps(n).empty(), excluded_form(n)) << "n = " << n;
  }
}

TEST(ThreeSquares, FourKPlusOneAlwaysRepresentable) {
  Int3 rep{};
  for (std::int64_t k = 1; k <= 10'000; ++k) {
    ASSERT_TRUE(first_three_squares_rep(4 * k + 1, rep)) << "k = " << k;
    ASSERT_EQ(rep[0] * rep[0] + rep[1] * rep[1] + rep[2] * rep[2], 4 * k + 1);
  }
}

TEST(ChooseSigns, PairingExamples) {
  // largest |a| coordinate meets the smallest b entry
  EXPECT_EQ(choose_signs({2, 1, 0}, {0, 0, 3}), (Int3{0, 0, 3}));
  EXPECT_EQ(choose_signs({0, 0, 3}, {0, 2, 3}), (Int3{2, 3, 0}));

  const Int3 a{2, 1, 0};
  const Int3 b = choose_signs(a, {0, 1, 2});
  EXPECT_EQ(idot(b, b), 5);
  EXPECT_TRUE(admissible_pair(a, b));
  EXPECT_EQ(b, (Int3{0, 1, 2}));
}

TEST(ChooseSigns, AdmissibleWheneverExhaustiveSearchIs) {
  auto seq = build_sequence(1000);
  Int3 rep{};
  for (std::int64_t k = 1; k < 1000; ++k) {
    const Int3 a = seq.at(k).coords;
    ASSERT_TRUE(first_three_squares_rep(4 * k + 5, rep));
    wide_int best = -1;
    for (const auto& c : signed_perms(rep)) {
      wide_int d = idot(a, c);
      if (d < 0) d = -d;
      if (best < 0 || d < best) best = d;
    }
    ASSERT_TRUE(3 * best * best <= idot(a, a) * idot(rep, rep)) << "k = " << k;
    const Int3 b = choose_signs(a, rep);
    ASSERT_EQ(idot(b, b), 4 * k + 5);
    ASSERT_TRUE(admissible_pair(a, b)) << "k = " << k;
  }
}

TEST(ChooseSigns, NegativeCoordinatesOfA) {
  const Int3 a{-3, 0, -4};
  const Int3 b = choose_signs(a, {0, 3, 4});
  EXPECT_EQ(idot(b, b), 25);
  EXPECT_TRUE(admissible_pair(a, b));
  EXPECT_THROW(choose_signs({0, 0, 0}, {0, 0, 1}), DegenerateInput);
}

TEST(BuildSequence, FirstMembers) {
  auto one = build_sequence(1);
  ASSERT_EQ(one.size(), 1);
  EXPECT_EQ(one.at(1).coords, (Int3{0, 1, 2}));
  EXPECT_TRUE(one.certificate.pairs.empty());

  auto two = build_sequence(2);
  EXPECT_EQ(two.at(2).norm_sq(), 9);
  ASSERT_EQ(two.certificate.pairs.size(), 1u);
  const auto& p = two.certificate.pairs[0];
  EXPECT_EQ(p.bound_sq_num, 45);
  EXPECT_TRUE(3 * p.dot * p.dot <= 45);
}

TEST(BuildSequence, ExactInvariantsUpTo10000) {
  auto seq = build_sequence(10'000);
  ASSERT_EQ(seq.size(), 10'000);
  for (std::int64_t k = 1; k <= seq.size(); ++k) ASSERT_TRUE(seq.at(k).certified()) << k;
  ASSERT_EQ(seq.certificate.pairs.size(), 9'999u);
  for (const auto& p : seq.certificate.pairs) {
    const wide_int lhs = 3 * p.dot * p.dot;
    const wide_int rhs = static_cast<wide_int>(4 * p.k + 1) * (4 * p.k + 5);
    ASSERT_LE(lhs, rhs) << "k = " << p.k;
    ASSERT_EQ(p.dot, idot(seq.at(p.k).coords, seq.at(p.k + 1).coords));
    // sin^2 >= 2/3 as an exact rational comparison
    ASSERT_GE(3 * p.sin2_num(), 2 * p.sin2_den());
  }
  EXPECT_TRUE(seq.certificate.holds());
}

TEST(BuildSequence, Deterministic) {
  auto a = build_sequence(500);
  auto b = build_sequence(500);
  for (std::int64_t k = 1; k <= 500; ++k) ASSERT_EQ(a.at(k).coords, b.at(k).coords);
  EXPECT_THROW(build_sequence(0), OutOfRange);
  EXPECT_THROW(a.at(501), OutOfRange);
}

TEST(OrthUnit, HandComputed) {
  auto e = orth_unit_in_plane(Vec3{1, 0, 0}, Vec3{0, 1, 0});
  EXPECT_NEAR(e[0], 1.0, 1e-15);
  EXPECT_NEAR(e[1], 0.0, 1e-15);
  e = orth_unit_in_plane(Vec3{1, 1, 0}, Vec3{0, 1, 0});
  EXPECT_NEAR(e[0], 1.0, 1e-15);
  EXPECT_NEAR(e[1], 0.0, 1e-15);
  EXPECT_NEAR(e[2], 0.0, 1e-15);
  EXPECT_THROW(orth_unit_in_plane(Vec3{1, 2, 3}, Vec3{2, 4, 6}), DegenerateInput);
}

TEST(OrthUnit, ConsecutiveMembersSatisfyAngleBound) {
  auto seq = build_sequence(2000);
  for (std::int64_t k = 1; k < seq.size(); ++k) {
    const auto a = seq.at(k).as_real();
    const auto b = seq.at(k + 1).as_real();
    const auto e = orth_unit_in_plane(a, b);
    ASSERT_NEAR(norm(e), 1.0, 1e-12);
    ASSERT_NEAR(dot(e, b), 0.0, 1e-10);
    ASSERT_GE(dot(a, e), std::sqrt(2.0 / 3.0) * norm(a) - 1e-12) << "k = " << k;
  }
}
