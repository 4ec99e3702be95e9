#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "halfcyl/certify.hpp"

using namespace halfcyl;

namespace {

constexpr double h05 = 0.05;
constexpr double c0_working = 2.6770;  // frozen empirical C0 of the field module

const Field& shared_field() {
  static const Field f(64);
  return f;
}

const MollifierKernel& kernel05() {
  static const MollifierKernel k = MollifierKernel::for_h(h05, c0_working);
  return k;
}

struct Patch {
  MaskedGrid g;
  Solution sol;
  std::unique_ptr<PatchedField> pf;
};

// [w_3, w_6] at n_y = 16, Laplace f right-hand side
const Patch& patch16() {
  static const Patch p = [] {
    Patch out;
    const auto& F = shared_field();
    const double lo = w_of(3), hi = w_of(6);
    out.g = discretize(F, {lo, hi, matched_n_w(lo, hi, 16), 16, BoundaryScheme::ghost_fluid}, OmegaParams::with_h(h05));
    out.sol = solve(out.g, assemble_rhs(F, out.g, RhsMode::lap_f));
    out.pf = std::make_unique<PatchedField>(F, out.g, out.sol.scaled, h05);
    return out;
  }();
  return p;
}

const std::vector<Sample>& samples16() {
  static const auto s = stratified_samples(shared_field(), h05, w_of(4), w_of(5), {12, 12, 12}, 21);
  return s;
}

std::vector<CylPoint> stratum(Stratum which, std::size_t n) {
  std::vector<CylPoint> out;
  for (const auto& s : samples16())
    if (s.stratum == which && out.size() < n) out.push_back(s.x);
  return out;
}

// K(x, x~) = w^{4/3} psi((x - x~) w^{1/3}), w = x.w, as a plain function
double kernel_direct(const MollifierKernel& ker, const Vec4& x, const Vec4& xt) {
  const double s = std::cbrt(x[0]);
  Vec4 xi;
  for (std::size_t i = 0; i < 4; ++i) xi[i] = (x[i] - xt[i]) * s;
  return x[0] * s * ker.value(xi);
}

double fd_laplacian(const std::function<double(const Vec4&)>& f, const Vec4& p, double s) {
  double acc = 0.0;
  for (std::size_t a = 0; a < 4; ++a) {
    auto at = [&](double t) {
      Vec4 q = p;
      q[a] += t;
      return f(q);
    };
    acc += (-at(2 * s) + 16 * at(s) - 30 * f(p) + 16 * at(-s) - at(-2 * s)) / (12 * s * s);
  }
  return acc;
}

// plain function p(w, y) fed to the quadrature as a source scaled at x0, so
// the result is the unscaled convolution of p
template <class Fn>
struct RawSource {
  Fn fn;
  double W0 = 0.0;
  auto at_w(double w) const {
    const double e = std::exp(MaskedGrid::W(w) - W0);
    return [this, w, e](const Vec3& y) { return fn(w, y) * e; };
  }
};
template <class Fn>
RawSource<Fn> raw(Fn fn, const CylPoint& x0) {
  return {std::move(fn), MaskedGrid::W(x0.w())};
}

}  // namespace

// ---------------------------------------------------------------------------
// kernel

TEST(Kernel, RadiusFromH) {
  EXPECT_DOUBLE_EQ(kernel05().rho(), h05 / (2.0 * c0_working));
  EXPECT_THROW(MollifierKernel::with_radius(0.0), OutOfRange);
  EXPECT_THROW(MollifierKernel::for_h(0.05, -1.0), OutOfRange);
}

TEST(Kernel, SupportAndSymmetry) {
  const auto& k = kernel05();
  const double r = k.rho();
  EXPECT_EQ(k.value({r, 0, 0, 0}), 0.0);
  EXPECT_EQ(k.value({0.6 * r, 0.6 * r, 0.6 * r, 0}), 0.0);
  EXPECT_EQ(k.jet({0, 0, r, 0}, 30.0).lap_x, 0.0);
  EXPECT_GT(k.value({0.5 * r, 0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(k.value({0.3 * r, 0.1 * r, 0, 0}), k.value({0, 0, -0.1 * r, 0.3 * r}));
}

// (52): independent composite Simpson on the radial integral 2 pi^2 int psi r^3 dr
TEST(Kernel, NormalizationIndependentRule) {
  const auto& k = kernel05();
  const int n = 200000;
  const double r = k.rho(), step = r / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = i * step;
    const double c = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += c * k.profile(t) * t * t * t;
  }
  EXPECT_NEAR(2.0 * pi * pi * acc * step / 3.0, 1.0, 1e-10);
}

TEST(Kernel, NormalizationAcrossW) {
  std::vector<double> ws;
  for (int i = 0; i < 10; ++i) ws.push_back(w_of(3) * std::pow(100.0 / w_of(3), i / 9.0));
  EXPECT_LE(kernel_normalization_defect(kernel05(), ws), 1e-10);
}

TEST(Kernel, PlaneMarginalHasUnitMass) {
  const auto& k = kernel05();
  const auto& g = gauss_legendre(24);
  double acc = 0.0;
  const int panels = 40;
  for (int p = 0; p < panels; ++p) {
    const double a = -k.rho() + 2 * k.rho() * p / panels, b = a + 2 * k.rho() / panels;
    for (std::size_t i = 0; i < g.x.size(); ++i)
      acc += 0.5 * (b - a) * g.w[i] * k.plane_marginal(0.5 * (a + b) + 0.5 * (b - a) * g.x[i]);
  }
  EXPECT_NEAR(acc, 1.0, 1e-8);
  EXPECT_EQ(k.plane_marginal(k.rho()), 0.0);
}

// the x-Laplacian includes the chain terms from w in the scale; x~-Laplacian does not
TEST(Kernel, JetMatchesFiniteDifferences) {
  const auto& k = kernel05();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double w : {20.0, 35.0, 80.0}) {
    const double R = k.rho() / std::cbrt(w);
    for (int t = 0; t < 8; ++t) {
      Vec4 d;
      do {
        for (auto& c : d) c = 0.8 * R * u(rng);
      } while (norm(d) > 0.8 * R);
      const Vec4 x{w, 0.3, -0.2, 1.1};
      const Vec4 xt{x[0] - d[0], x[1] - d[1], x[2] - d[2], x[3] - d[3]};
      Vec4 xi;
      for (std::size_t i = 0; i < 4; ++i) xi[i] = (x[i] - xt[i]) * std::cbrt(w);
      const auto J = k.jet(xi, w);
      EXPECT_NEAR(J.psi * w * std::cbrt(w), kernel_direct(k, x, xt), 1e-12 * std::abs(kernel_direct(k, x, xt)) + 1e-300);
      const double s = R * 1e-3;
      const double lx = fd_laplacian([&](const Vec4& p) { return kernel_direct(k, p, xt); }, x, s);
      const double lt = fd_laplacian([&](const Vec4& p) { return kernel_direct(k, x, p); }, xt, s);
      const double scale = std::max({std::abs(J.lap_x), std::abs(J.lap_xt), 1e-6 * w * w * k.norm_const()});
      EXPECT_LE(std::abs(J.lap_x - lx) / scale, 1e-5) << "w " << w;
      EXPECT_LE(std::abs(J.lap_xt - lt) / scale, 1e-5) << "w " << w;
    }
  }
}

// (D1)/(D2): normalized maxima stay bounded, with no residual power of w
TEST(Kernel, D1D2Shapes) {
  const auto rep = kernel_bounds_check(kernel05(), w_of(6), 100.0, 8, 1250, 3);
  EXPECT_EQ(rep.n_pairs, 10000);
  EXPECT_TRUE(std::isfinite(rep.c10_d1));
  EXPECT_TRUE(std::isfinite(rep.c10_d2));
  EXPECT_LT(rep.d1_spread, 2.0);
  EXPECT_LT(std::abs(rep.d2_slope), 0.05);
  EXPECT_LT(rep.d1_slope, 0.1);
}

// ---------------------------------------------------------------------------
// quadrature on analytic sources

TEST(Quadrature, ConstantReproduced) {
  const auto& k = kernel05();
  const CylPoint x(30.0, {0.4, 2.0, 5.5});
  for (const auto& lat : {KinkLattice::none(), patch16().pf->lattice()}) {
    const auto m = mollify_source(k, lat, x, raw([](double, const Vec3&) { return 0.7; }, x));
    EXPECT_NEAR(m.value, 0.7, 1e-14);
    EXPECT_NEAR(m.lap, 0.0, 1e-9);
    EXPECT_LT(std::abs(m.mass_defect), 1e-6);
  }
}

// a harmonic function equals its radial average, so F = p and Laplace F = 0
TEST(Quadrature, HarmonicSourceReproduced) {
  const auto& k = kernel05();
  const CylPoint x(31.0, {1.0, 2.0, 3.0});
  auto p = [](double w, const Vec3& y) { return (w - 31.0) * (w - 31.0) - y[0] * y[0] + 3.0 * y[1] * y[2] + 2.0; };
  const auto m = mollify_source(k, KinkLattice::none(), x, raw(p, x));
  EXPECT_NEAR(m.value, p(31.0, {1.0, 2.0, 3.0}), 1e-9);
  EXPECT_LE(std::abs(m.lap), quad_tol_lap(m) + 1e-9 * m.lap_scale);
}

TEST(Quadrature, RejectsSupportBelowW2) {
  const CylPoint x(w_of(2.0), {0, 0, 0});
  EXPECT_THROW(mollify_source(kernel05(), KinkLattice::none(), x, raw([](double, const Vec3&) { return 1.0; }, x)),
               OutOfRange);
}

TEST(Quadrature, NotConvergedIsReported) {
  const CylPoint x(30.0, {0.1, 0.2, 0.3});
  QuadSpec q;
  q.n_start = 2;
  q.n_max = 4;
  q.value_tol = 1e-15;
  EXPECT_THROW(mollify(kernel05(), *patch16().pf, x, Source::f_star, q), QuadratureNotConverged);
}

TEST(Quadrature, PanelEdgesSplitAtLattice) {
  const auto e = detail::panel_edges(0.05, 0.35, 0.0, 0.1);
  ASSERT_EQ(e.size(), 5u);
  EXPECT_DOUBLE_EQ(e[1], 0.1);
  EXPECT_DOUBLE_EQ(e[3], 0.30000000000000004);
  EXPECT_EQ(detail::panel_edges(0.0, 1.0, 0.0, std::numeric_limits<double>::infinity()).size(), 2u);
}

// ---------------------------------------------------------------------------
// patched field

TEST(Patch, SliceEvaluationMatchesBruteForce) {
  const auto& pf = *patch16().pf;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uw(w_of(3), w_of(6)), uy(-10.0, 10.0);
  for (int i = 0; i < 300; ++i) {
    const CylPoint x(uw(rng), {uy(rng), uy(rng), uy(rng)});
    const double ref = pf.g_scaled_reference(x);
    EXPECT_NEAR(pf.g_scaled(x), ref, 1e-11 * (1.0 + std::abs(ref)));
  }
}

// the cached line evaluator the quadrature uses agrees with the plain one
TEST(Patch, LineEvaluatorMatchesSlice) {
  const auto& pf = *patch16().pf;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> uw(w_of(3), w_of(6)), uy(-7.0, 7.0);
  for (int line = 0; line < 40; ++line) {
    const double w = uw(rng);
    PatchedField::LineEval e(pf, w);
    const auto sl = pf.slice(w);
    const double y1 = uy(rng), y2 = uy(rng);
    for (int i = 0; i < 25; ++i) {
      const Vec3 y{y1, y2, uy(rng)};
      const double ref = pf.g_scaled(sl, y);
      ASSERT_NEAR(e.g_scaled(y), ref, 1e-12 * (1.0 + std::abs(ref)));
      ASSERT_NEAR(e.scaled(y), pf.scaled(sl, y), 1e-12 * (1.0 + std::abs(ref)));
    }
  }
}

TEST(Patch, FineInterpolantExactAtNodes) {
  const auto& pf = *patch16().pf;
  const auto& g = pf.grid();
  const auto lat = pf.lattice();
  for (int s : {3, 17, 40}) {
    const double w = lat.origin[0] + s * lat.step[0];
    const auto sl = pf.slice(w);
    const Vec3 y{lat.origin[1] + 5 * lat.step[1], lat.origin[2] + 77 * lat.step[2], lat.origin[3] + 120 * lat.step[3]};
    EXPECT_NEAR(pf.f_interp_scaled(sl, y), pf.field().f0(w, y), 1e-12);
  }
  // u vanishes on the band planes
  const Vec3 y{0.3, 1.7, 4.1};
  EXPECT_EQ(pf.u_scaled(pf.slice(g.w_lo), y), 0.0);
  EXPECT_EQ(pf.u_scaled(pf.slice(g.w_hi), y), 0.0);
}

// f* = f off Omega; f* = f + (I_q f - f) + I[u] where |f0| <= 3h/2
TEST(Patch, TaperRegions) {
  const auto& pf = *patch16().pf;
  const auto& F = shared_field();
  for (const auto& s : samples16()) {
    const double f0 = F.f0(s.x);
    if (std::abs(f0) >= 2.0 * h05) {
      EXPECT_EQ(pf.scaled(s.x), f0);
    } else if (std::abs(f0) <= 1.5 * h05) {
      EXPECT_NEAR(pf.scaled(s.x), pf.g_scaled(s.x), 1e-14);
    }
  }
  EXPECT_EQ(pf.taper(2.0 * h05), 0.0);
  EXPECT_EQ(pf.taper(1.5 * h05), 1.0);
  EXPECT_NEAR(pf.taper(1.75 * h05), 0.5, 1e-15);
  EXPECT_THROW(pf.g_scaled(CylPoint(w_of(6) + 1.0, {0, 0, 0})), OutOfBand);
}

TEST(Patch, InterpolationMismatchShrinksWithRefinement) {
  const auto& p = patch16();
  const PatchedField coarse(shared_field(), p.g, p.sol.scaled, h05, 1);
  const auto& fine = *p.pf;
  double e1 = 0.0, e8 = 0.0;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> uw(w_of(4), w_of(5)), uy(0.0, two_pi);
  for (int i = 0; i < 400; ++i) {
    const CylPoint x(uw(rng), {uy(rng), uy(rng), uy(rng)});
    const auto s1 = coarse.slice(x.w()), s8 = fine.slice(x.w());
    const double f0 = shared_field().f0(x);
    e1 = std::max(e1, std::abs(coarse.f_interp_scaled(s1, x.y()) - f0));
    e8 = std::max(e8, std::abs(fine.f_interp_scaled(s8, x.y()) - f0));
  }
  EXPECT_LT(e8, e1 / 30.0);  // second order: 64 asymptotically
}

// the patch is multilinear, hence harmonic, inside a fine cell
TEST(Patch, SphereMeansInsideFineCell) {
  const auto& pf = *patch16().pf;
  const auto lat = pf.lattice();
  const double half = 0.5 * std::min(lat.step[0], lat.step[1]);
  const CylPoint x(lat.origin[0] + 101.5 * lat.step[0],
                   {lat.origin[1] + 30.5 * lat.step[1], lat.origin[2] + 3.5 * lat.step[2], lat.origin[3] + 90.5 * lat.step[3]});
  EXPECT_LE(sphere_mean_defect(pf, x, 0.9 * half), 1e-12);
  // a sphere crossing kink planes does not reproduce the center
  EXPECT_GT(sphere_mean_defect(pf, x, 6.0 * half), 1e-6);
}

TEST(Patch, KinkFacesNearPlanes) {
  const auto& pf = *patch16().pf;
  const auto lat = pf.lattice();
  const double r = support_radius(kernel05(), 32.0);
  ASSERT_LT(2.0 * r, lat.step[1]);
  const double w = lat.origin[0] + std::floor((32.0 - lat.origin[0]) / lat.step[0] + 0.5) * lat.step[0];
  const CylPoint centered(w + 0.5 * lat.step[0], {lat.origin[1] + 40.5 * lat.step[1], lat.origin[2] + 8.5 * lat.step[2],
                                                  lat.origin[3] + 70.5 * lat.step[3]});
  EXPECT_TRUE(pf.kink_faces(centered, r).empty());
  const CylPoint near(centered.w(), {lat.origin[1] + 40 * lat.step[1] + 0.3 * r, centered.y()[1], centered.y()[2]});
  const auto faces = pf.kink_faces(near, r);
  ASSERT_EQ(faces.size(), 1u);
  EXPECT_EQ(faces[0].axis, 1);
  EXPECT_NEAR(faces[0].offset, -0.3 * r, 1e-12);
  EXPECT_GT(faces[0].jump, 0.0);
}

TEST(Patch, RejectsWrongSize) {
  const auto& p = patch16();
  EXPECT_THROW(PatchedField(shared_field(), p.g, std::vector<double>(3), h05), OutOfRange);
}

// ---------------------------------------------------------------------------
// F, G and their Laplacians

TEST(Mollify, OscillationWithinHalfH) {
  const auto rnd = oscillation_survey(shared_field(), kernel05(), OmegaParams::with_h(h05), w_of(4), w_of(6), 200, 50, 1, false);
  const auto adv = oscillation_survey(shared_field(), kernel05(), OmegaParams::with_h(h05), w_of(4), w_of(6), 50, 50, 2, true);
  EXPECT_TRUE(rnd.worst.pass());
  EXPECT_TRUE(adv.worst.pass());
  EXPECT_GT(adv.worst.max_osc, rnd.worst.max_osc);
  // shrinking the kernel shrinks the oscillation
  const auto tiny = MollifierKernel::with_radius(1e-6);
  const auto t = oscillation_check(shared_field(), tiny, CylPoint(30.0, {1, 2, 3}), OmegaParams::with_h(h05), 200, 3);
  EXPECT_LT(t.max_osc, 1e-5);
}

// Lemma 5.4 / Cor. 5.5 off U
TEST(Mollify, OffUEqualsPatch) {
  const auto rep = off_u_check(kernel05(), *patch16().pf, stratum(Stratum::inner, 8));
  EXPECT_TRUE(rep.value_pass());
  EXPECT_EQ(rep.lap_fail_kinked, 0);
  if (rep.n_single_cell > 0) {
    EXPECT_TRUE(rep.lap_pass());
  }
}

TEST(Mollify, FEqualsGWhereBallMissesOmega) {
  for (const auto& x : stratum(Stratum::u_far, 6)) {
    const auto c = g_check(kernel05(), *patch16().pf, x);
    if (!c.ball_misses_omega) continue;
    EXPECT_NEAR(c.F, c.G, 1e-12 * std::max(1.0, std::abs(c.G)));
    EXPECT_NEAR(c.lap_F, c.lap_G, 1e-9 * std::max(1.0, std::abs(c.lap_G)));
  }
}

// Delta G = I1 + I2 with I2 computed both before and after integrating by parts
TEST(Mollify, LaplacianSplit) {
  for (const auto& x : stratum(Stratum::layer, 3)) {
    const auto c = g_check(kernel05(), *patch16().pf, x, {}, false);
    EXPECT_TRUE(c.split_ok()) << c.i2_parts << " vs " << c.i2_direct << " tol " << c.split_tol;
    EXPECT_NEAR(c.i1 + c.i2_parts, c.lap_G, 1e-12 * std::max(1.0, std::abs(c.lap_G)));
  }
}

TEST(Mollify, FiniteDifferenceAudit) {
  auto pts = stratum(Stratum::u_far, 2);
  for (const auto& x : stratum(Stratum::layer, 2)) pts.push_back(x);
  for (const auto& x : pts) {
    const auto a = laplacian_audit(kernel05(), *patch16().pf, x);
    EXPECT_LE(a.rel, 1e-3) << "analytic " << a.analytic << " fd " << a.fd;
  }
}

TEST(Mollify, RescaledLaplacianScalesByFour) {
  const CylPoint x(w_of(4) / 2.0 + 0.5, {0.4, 1.3, 2.2});
  const auto sp = rescale_spot_check(kernel05(), *patch16().pf, x);
  EXPECT_LE(sp.rel, 1e-3);
}

// ---------------------------------------------------------------------------
// certificate

TEST(Certificate, Constants) {
  EXPECT_EQ(k_star_of(0.43, 0.05), 17);
  EXPECT_NEAR(c9_of(0.43, kernel05().rho()), 1.43 * std::exp(4.0 / 3.0 * kernel05().rho() * std::cbrt(2.0)), 1e-15);
  // w_{k-1}^{2/3} = (27/8)^{2/3} (k-1) = 2.25 (k-1) >= 4 C8 / h
  EXPECT_EQ(k_star_of(0.01, 0.05), 6);
}

TEST(Certificate, SmallRun) {
  const auto& pf = *patch16().pf;
  const auto c = certify_theorem(kernel05(), pf, samples16(), 0.43);
  EXPECT_TRUE(c.upper_pass) << c.max_scaled_F;
  EXPECT_TRUE(c.lower_pass);
  EXPECT_GE(c.min_F_beyond, h05 / 8.0);
  EXPECT_EQ(c.inner_fail, 0);
  EXPECT_TRUE(std::isfinite(c.ratio_C));
  EXPECT_NE(c.ratio_stratum, Stratum::inner);
  EXPECT_EQ(c.k_star_paper, 17);
}

TEST(Certificate, StrictThrowsOnFailure) {
  // C8 = -0.99 gives C9 ~ 0.01, below the sampled |F|
  EXPECT_THROW(certify_theorem(kernel05(), *patch16().pf, {samples16().front()}, -0.99, {}, true),
               CertificationFailed);
}

TEST(Certificate, StrataFilled) {
  EXPECT_EQ(samples16().size(), 36u);
  for (const auto& s : samples16()) {
    const double a = std::abs(shared_field().f0(s.x));
    switch (s.stratum) {
      case Stratum::u_far: EXPECT_GE(a, 2 * h05); break;
      case Stratum::layer: EXPECT_TRUE(a > h05 && a < 2 * h05); break;
      case Stratum::inner: EXPECT_LE(a, h05); break;
    }
  }
  EXPECT_THROW(stratified_samples(shared_field(), 1e-9, w_of(4), w_of(5), {1, 0, 1}, 1), DegenerateInput);
}
