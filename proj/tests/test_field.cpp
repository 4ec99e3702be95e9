#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "halfcyl/field.hpp"

using namespace halfcyl;

namespace {

const Field& shared_field() {
  static const Field f(64);
  return f;
}

Vec3 random_y(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, two_pi);
  return {u(rng), u(rng), u(rng)};
}

// f0 * exp(w0^{4/3} - w^{4/3}): f rescaled by a fixed constant so it stays representable.
double scaled_f(const Field& F, double w, const Vec3& y, double w0) {
  return F.f0(w, y) * std::exp(std::pow(w0, 4.0 / 3.0) - std::pow(w, 4.0 / 3.0));
}

}  // namespace

TEST(CylPoint, WrapsAndRejects) {
  CylPoint x(1.0, {-0.5, two_pi + 0.25, 3.0});
  EXPECT_NEAR(x.y()[0], two_pi - 0.5, 1e-15);
  EXPECT_NEAR(x.y()[1], 0.25, 1e-14);
  EXPECT_EQ(x.y()[2], 3.0);
  EXPECT_THROW(CylPoint(-1.0, {0, 0, 0}), OutOfRange);
}

TEST(Field, BandEndpointExamples) {
  const auto& F = shared_field();
  std::mt19937_64 rng(1);
  for (std::int64_t k = 2; k <= 20; ++k) {
    const double wk = w_of(static_cast<double>(k));
    const double wk1 = w_of(static_cast<double>(k + 1));
    const auto& a = F.vec(k);
    const auto& b = F.vec(k + 1);
    EXPECT_DOUBLE_EQ(F.f0(CylPoint(wk, {0, 0, 0})), 1.0);
    for (int i = 0; i < 20; ++i) {
      const Vec3 y = random_y(rng);
      ASSERT_NEAR(F.f0(wk, y), std::cos(dot(a, y)), 1e-14);
      ASSERT_NEAR(F.f0(0.5 * (wk + wk1), y), 0.5 * (std::cos(dot(a, y)) + std::cos(dot(b, y))), 1e-14);
      const auto g = F.grad_f0(CylPoint(wk, y));
      ASSERT_EQ(g.first, 0.0);
      const double sa = std::sin(dot(a, y));
      for (int j = 0; j < 3; ++j) ASSERT_NEAR(g.second[j], -sa * a[j], 1e-13);
    }
  }
  EXPECT_THROW(F.f0(9.0, {0, 0, 0}), OutOfRange);
  EXPECT_THROW(F.f0(F.w_max() + 1.0, {0, 0, 0}), OutOfRange);
}

TEST(Field, BoundedAndContinuous) {
  const auto& F = shared_field();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> uw(w_of(2), F.w_max() - 1e-6);
  for (int i = 0; i < 1'000'000; ++i) {
    const double w = uw(rng);
    ASSERT_LE(std::abs(F.f0(w, random_y(rng))), 1.0 + 1e-15);
  }
  const double eps = 1e-8;
  for (std::int64_t k = 3; k <= 60; ++k) {
    const double wk = w_of(static_cast<double>(k));
    for (int i = 0; i < 50; ++i) {
      const Vec3 y = random_y(rng);
      const auto s = F.sample(wk, y);
      ASSERT_LE(std::abs(F.f0(wk - eps, y) - F.f0(wk + eps, y)), 10 * eps * s.grad_norm() + 1e-15)
          << "k = " << k;
    }
  }
}

TEST(Field, GradientMatchesFiniteDifferences) {
  const auto& F = shared_field();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uw(w_of(2) + 1e-3, w_of(40));
  const double h = 1e-5;
  for (int i = 0; i < 1000; ++i) {
    const double w = uw(rng);
    const Vec3 y = random_y(rng);
    const auto s = F.sample(w, y);
    const double gw = (F.f0(w + h, y) - F.f0(w - h, y)) / (2 * h);
    Vec3 gy{};
    for (int j = 0; j < 3; ++j) {
      Vec3 yp = y, ym = y;
      yp[j] += h;
      ym[j] -= h;
      gy[j] = (F.f0(w, yp) - F.f0(w, ym)) / (2 * h);
    }
    const double scale = std::max(1.0, s.grad_norm());
    ASSERT_NEAR(s.grad_w, gw, 1e-6 * scale) << w;
    for (int j = 0; j < 3; ++j) ASSERT_NEAR(s.grad_y[j], gy[j], 1e-6 * scale) << w;
  }
}

TEST(Field, LaplacianAtBreakpointsIsBandTerm) {
  const auto& F = shared_field();
  std::mt19937_64 rng(4);
  for (std::int64_t k = 2; k <= 30; ++k) {
    const double wk = w_of(static_cast<double>(k));
    const double w23 = std::cbrt(wk) * std::cbrt(wk);
    ASSERT_NEAR(16.0 / 9.0 * w23, 4.0 * k, 1e-9 * k);
    const Vec3 y = random_y(rng);
    const double expected = (4.0 * k - 4.0 / 9.0 / w23 - (4.0 * k + 1)) * std::cos(dot(F.vec(k), y));
    ASSERT_NEAR(F.lap_f_scaled(CylPoint(wk, y)), expected, 1e-9 * k);
  }
}

TEST(Field, LaplacianMatchesFiniteDifferencesNearTen) {
  const auto& F = shared_field();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uw(w_of(2) + 0.01, w_of(3) - 0.01);
  const double h = 1e-3;
  for (int i = 0; i < 300; ++i) {
    const double w = uw(rng);
    const Vec3 y = random_y(rng);
    // 9-point second differences in (w, y1, y2, y3)
    const double c = scaled_f(F, w, y, w);
    double lap = (scaled_f(F, w + h, y, w) - 2 * c + scaled_f(F, w - h, y, w)) / (h * h);
    for (int j = 0; j < 3; ++j) {
      Vec3 yp = y, ym = y;
      yp[j] += h;
      ym[j] -= h;
      lap += (scaled_f(F, w, yp, w) - 2 * c + scaled_f(F, w, ym, w)) / (h * h);
    }
    const double analytic = F.lap_f_scaled(CylPoint(w, y));
    ASSERT_NEAR(analytic, lap, 1e-4 * std::max(1.0, std::abs(analytic))) << w;
  }
}

TEST(Field, LemmaBoundsPerBand) {
  const auto& F = shared_field();
  const auto prof = CutoffProfile::sampled();
  for (std::int64_t k = 2; k <= 12; ++k) {
    const auto st = band_stats(F, k, 10'000, 11);
    const double kd = static_cast<double>(k);
    EXPECT_LE(st.sup_abs_f0, 1.0);
    EXPECT_LE(st.sup_grad_y, std::sqrt(4 * kd + 5) + 1e-12) << k;
    EXPECT_LE(st.sup_grad_w, prof.sup_d1 * 16.0 / 81.0 / std::sqrt(kd) * 2.0) << k;
  }
}

TEST(Field, WorkingConstantsShowNoGrowth) {
  const auto& F = shared_field();
  const auto fc = estimate_field_constants(F, 2, 12, 100'000, 12);
  ASSERT_EQ(fc.bands.size(), 11u);
  EXPECT_NEAR(fc.lap_slope, 0.0, 0.05);
  EXPECT_GT(fc.c0, 0.0);
  EXPECT_GT(fc.c1, 0.0);
  // sup |grad f0| / sqrt k over k <= 12 is bounded by sqrt(4+5/k) plus the w part
  EXPECT_LT(fc.c0, 1.05 * (std::sqrt(4.0 + 2.5) + 1.0));
  // sampling is deterministic in the seed
  const auto again = estimate_field_constants(F, 2, 12, 100'000, 12);
  EXPECT_EQ(fc.c0, again.c0);
  EXPECT_EQ(fc.c1, again.c1);
}

TEST(Field, EnvelopeInequality) {
  EXPECT_TRUE(envelope_ineq_check(5.0, 0.0));
  EXPECT_NEAR(std::pow(7.625, 4.0 / 3.0), 15.007, 1e-3);
  EXPECT_TRUE(envelope_ineq_check(8.0, 3.0 / (4.0 * 2.0)));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> uw(0.0, 1e4), ut(0.0, 1.0);
  for (int i = 0; i < 10'000; ++i) {
    const double w = uw(rng);
    ASSERT_TRUE(envelope_ineq_check(w, ut(rng) * w)) << w;
  }
  EXPECT_THROW(envelope_ineq_check(1.0, 2.0), OutOfRange);
}

TEST(Field, Rescale) {
  auto x = rescale(CylPoint(1.0, {pi, 0, 0}), 2);
  EXPECT_EQ(x.w(), 2.0);
  EXPECT_NEAR(x.y()[0], 0.0, 1e-15);
  x = rescale(CylPoint(0.5, {0.1, 0.2, 0.3}), 3);
  EXPECT_EQ(x.w(), 1.5);
  EXPECT_NEAR(x.y()[0], 0.3, 1e-15);
  EXPECT_NEAR(x.y()[1], 0.6, 1e-15);
  EXPECT_NEAR(x.y()[2], 0.9, 1e-15);
  const CylPoint id(4.0, {1, 2, 3});
  EXPECT_EQ(rescale(id, 1).y(), id.y());
  EXPECT_THROW(rescale(id, 0), OutOfRange);
}
