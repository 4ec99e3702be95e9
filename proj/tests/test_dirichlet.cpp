#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "halfcyl/dirichlet.hpp"

using namespace halfcyl;

namespace {

const Field& shared_field() {
  static const Field f(64);
  return f;
}

const OmegaParams& p05() {
  static const OmegaParams p = OmegaParams::with_h(0.05);
  return p;
}

GridSpec band_spec(double k_lo, double k_hi, int n_y, BoundaryScheme s = BoundaryScheme::ghost_fluid) {
  const double lo = w_of(k_lo), hi = w_of(k_hi);
  return {lo, hi, matched_n_w(lo, hi, n_y), n_y, s};
}

struct Problem {
  MaskedGrid g;
  std::vector<double> rhs, plus, minus;
  Solution sol, sol_plus, sol_minus;
};

// [w_3, w_6] at n_y = 16, shared by most tests
const Problem& band_problem() {
  static const Problem pr = [] {
    Problem p;
    const auto& F = shared_field();
    p.g = discretize(F, band_spec(3, 6, 16), p05());
    p.rhs = assemble_rhs(F, p.g, RhsMode::lap_f);
    p.plus = assemble_rhs(F, p.g, RhsMode::lap_f_plus);
    p.minus = assemble_rhs(F, p.g, RhsMode::lap_f_minus);
    p.sol = solve(p.g, p.rhs);
    p.sol_plus = solve(p.g, p.plus);
    p.sol_minus = solve(p.g, p.minus);
    return p;
  }();
  return pr;
}

double sup_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// 8^4 grid whose only unknown is node (3, 0, 0, 0), staircase stencil
MaskedGrid single_node_grid() {
  MaskedGrid g;
  g.w_lo = 20.0;
  g.w_hi = 29.0;
  g.n_w = 8;
  g.n_y = 8;
  g.dw = (g.w_hi - g.w_lo) / (g.n_w + 1);
  g.dy = two_pi / g.n_y;
  g.h = 0.05;
  g.scheme = BoundaryScheme::staircase;
  g.unknown_of.assign(static_cast<std::size_t>(g.n_nodes()), -1);
  const auto node = g.node_index(3, 0, 0, 0);
  g.unknown_of[static_cast<std::size_t>(node)] = 0;
  g.node_of = {node};
  std::array<std::int32_t, 8> none;
  none.fill(-1);
  g.nbr = {none};
  g.diag = {2.0 / (g.dw * g.dw) + 6.0 / (g.dy * g.dy)};
  for (int i = 0; i < g.n_w; ++i) {
    const double Wi = MaskedGrid::W(g.w_node(i));
    g.env_up.push_back(i + 1 < g.n_w ? std::exp(Wi - MaskedGrid::W(g.w_node(i + 1))) : 0.0);
    g.env_down.push_back(i > 0 ? std::exp(Wi - MaskedGrid::W(g.w_node(i - 1))) : 0.0);
  }
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// discretize

TEST(Discretize, PaperHIsEmptyAtCoarseResolution) {
  EXPECT_THROW(discretize(shared_field(), band_spec(3, 5, 16), OmegaParams::paper()), EmptyMask);
}

TEST(Discretize, Preconditions) {
  const auto& F = shared_field();
  EXPECT_THROW(discretize(F, {3.0, w_of(3), 8, 16}, p05()), OutOfRange);
  EXPECT_THROW(discretize(F, {w_of(3), w_of(3), 8, 16}, p05()), OutOfRange);
  EXPECT_THROW(discretize(F, {w_of(3), w_of(4), 8, 7}, p05()), OutOfRange);
  EXPECT_THROW(discretize(F, {w_of(3), w_of(4), 7, 16}, p05()), OutOfRange);
}

TEST(Discretize, NodeAlignedGridHitsZeroSetAtPaperH) {
  // with offset 0 every node with a.y = pi/2 mod pi on both band vectors is an exact zero
  auto spec = band_spec(3, 5, 16);
  spec.y_offset = {0, 0, 0};
  EXPECT_GT(discretize(shared_field(), spec, OmegaParams::paper()).n_unknowns(), 0);
}

TEST(Discretize, MaskFractionAndRefinement) {
  // staircase: the mask does not depend on the scheme and the operator is cheaper
  const auto& F = shared_field();
  const auto g32 = discretize(F, band_spec(3, 5, 32, BoundaryScheme::staircase), p05());
  EXPECT_GT(g32.n_unknowns(), 0);
  EXPECT_LT(g32.mask_fraction(), 0.1);
  const double f32 = g32.mask_fraction();
  const double f64 = discretize(F, band_spec(3, 5, 64, BoundaryScheme::staircase), p05()).mask_fraction();
  std::printf("  mask fraction n_y=32 %.5f, n_y=64 %.5f\n", f32, f64);
  EXPECT_LT(std::abs(f64 - f32) / f32, 0.2);
}

TEST(Discretize, MaskMatchesMembershipAndGeometry) {
  const auto& g = band_problem().g;
  const auto& F = shared_field();
  EXPECT_NEAR(g.dy, two_pi / 16, 1e-15);
  EXPECT_EQ(g.y_offset, GridSpec::default_y_offset());
  EXPECT_NEAR(g.w_lo + (g.n_w + 1) * g.dw, g.w_hi, 1e-12);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::int64_t> pick(0, g.n_nodes() - 1);
  for (int t = 0; t < 20'000; ++t) {
    const auto n = pick(rng);
    const bool in = g.unknown_of[static_cast<std::size_t>(n)] >= 0;
    ASSERT_EQ(in, in_omega(F, g.point(n), p05())) << n;
  }
  for (std::int64_t u = 0; u < g.n_unknowns(); ++u)
    ASSERT_EQ(g.unknown_of[static_cast<std::size_t>(g.node_of[static_cast<std::size_t>(u)])], u);
}

TEST(Discretize, PeriodicWrapInYOnly) {
  const auto& g = band_problem().g;
  for (std::int64_t u = 0; u < g.n_unknowns(); ++u) {
    const auto c = g.node_coords(g.node_of[static_cast<std::size_t>(u)]);
    const auto& nb = g.nbr[static_cast<std::size_t>(u)];
    if (c[0] == 0) {
      ASSERT_EQ(nb[0], -1);
    }
    if (c[0] == g.n_w - 1) {
      ASSERT_EQ(nb[1], -1);
    }
    if (c[1] == g.n_y - 1 && nb[3] >= 0) {
      const auto cn = g.node_coords(g.node_of[static_cast<std::size_t>(nb[3])]);
      ASSERT_EQ(cn[1], 0);
    }
  }
}

TEST(Discretize, GhostFluidArmFractionMatchesClosedForm) {
  // on a breakpoint slice f0 = cos(a . y); along y1 the crossing of |f0| = 2h is explicit
  const auto& F = shared_field();
  const double h = 0.05, level = 2 * h;
  const auto& a = F.vec(4);
  ASSERT_NE(a[0], 0);
  const double wk = w_of(4);
  // start where a.y = pi/2 - 0.02, step toward the level crossing at acos(0.1)
  const double s0 = pi / 2 - 0.02;
  const CylPoint x(wk, {s0 / a[0], 0, 0});
  const double step = -0.2 / std::abs(a[0]) * (a[0] > 0 ? 1 : -1);
  const Vec4 d{0, step, 0, 0};
  const double g0 = std::abs(F.f0(x)) - level;
  const double g1 = std::abs(F.f0(x.shifted(d))) - level;
  ASSERT_LT(g0, 0);
  ASSERT_GT(g1, 0);
  const double expected = (s0 - std::acos(level)) / 0.2;
  EXPECT_NEAR(detail::arm_fraction(F, x, d, g0, g1, level), expected, 1e-10);
}

TEST(Discretize, SchemesGiveMMatrixDiagonal) {
  const auto& F = shared_field();
  for (auto s : {BoundaryScheme::staircase, BoundaryScheme::ghost_fluid}) {
    const auto g = discretize(F, band_spec(3, 5, 16, s), p05());
    const double cw = 1.0 / (g.dw * g.dw), cy = 1.0 / (g.dy * g.dy);
    for (std::int64_t u = 0; u < g.n_unknowns(); ++u) {
      const double d = g.diag[static_cast<std::size_t>(u)];
      ASSERT_GE(d, 2 * cw + 6 * cy - 1e-9);
      if (s == BoundaryScheme::staircase) {
        ASSERT_NEAR(d, 2 * cw + 6 * cy, 1e-9);
      } else {
        ASSERT_LE(d, (2 * cw + 6 * cy) / min_theta * (1 + 1e-12));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// rhs

TEST(AssembleRhs, PartsDecompose) {
  const auto& pr = band_problem();
  for (std::size_t i = 0; i < pr.rhs.size(); ++i) {
    ASSERT_EQ(pr.plus[i] - pr.minus[i], pr.rhs[i]);
    ASSERT_GE(pr.plus[i], 0.0);
    ASSERT_GE(pr.minus[i], 0.0);
  }
  const auto& F = shared_field();
  for (std::int64_t u = 0; u < pr.g.n_unknowns(); u += 997)
    ASSERT_DOUBLE_EQ(pr.rhs[static_cast<std::size_t>(u)],
                     F.lap_f_scaled(pr.g.point(pr.g.node_of[static_cast<std::size_t>(u)])));
}

TEST(AssembleRhs, CustomConstant) {
  const auto& g = band_problem().g;
  const auto one = assemble_rhs(g, [](const CylPoint&) { return 1.0; });
  const auto u = unscale(g, one);
  for (double v : u) ASSERT_NEAR(v, 1.0, 1e-12);
}

// ---------------------------------------------------------------------------
// solve

TEST(Solve, ZeroRhs) {
  const auto& g = band_problem().g;
  const std::vector<double> zero(static_cast<std::size_t>(g.n_unknowns()), 0.0);
  for (auto f : {Formulation::unscaled_cg, Formulation::scaled_bicgstab}) {
    SolveOptions o;
    o.formulation = f;
    const auto s = solve(g, zero, o);
    EXPECT_EQ(s.report.iterations, 0);
    EXPECT_EQ(sup_abs(s.scaled), 0.0);
    EXPECT_EQ(s.report.energy, 0.0);
  }
}

TEST(Solve, SingleNode) {
  const auto g = single_node_grid();
  const double phi0 = 3.5;
  const double expected = phi0 / (2 / (g.dw * g.dw) + 6 / (g.dy * g.dy));
  for (auto f : {Formulation::unscaled_cg, Formulation::scaled_bicgstab}) {
    SolveOptions o;
    o.formulation = f;
    const auto s = solve(g, assemble_rhs(g, [&](const CylPoint&) { return phi0; }), o);
    ASSERT_EQ(s.scaled.size(), 1u);
    EXPECT_NEAR(unscale(g, s.scaled)[0], expected, 1e-14 * expected);
  }
}

TEST(Solve, BandProblemConverges) {
  const auto& pr = band_problem();
  EXPECT_LE(pr.sol.report.residual_rel, 1e-8);
  EXPECT_GT(pr.sol.report.iterations, 0);
  EXPECT_EQ(pr.sol.report.sup_profile_scaled.size(), static_cast<std::size_t>(pr.g.n_w));
  std::printf("  [w3,w6] n_y=16: %lld unknowns, %d iterations, residual %.2e\n",
              static_cast<long long>(pr.g.n_unknowns()), pr.sol.report.iterations,
              pr.sol.report.residual_rel);
}

TEST(Solve, FormulationsAgreeNearTheLowEnd) {
  // the unscaled residual is dominated by the shallow slabs, so compare there
  const auto& pr = band_problem();
  SolveOptions o;
  o.formulation = Formulation::unscaled_cg;
  o.tol = 1e-12;
  const auto cg = solve(pr.g, pr.rhs, o);
  SolveOptions ob;
  ob.tol = 1e-12;
  const auto bi = solve(pr.g, pr.rhs, ob);
  const auto u_cg = unscale(pr.g, cg.scaled), u_bi = unscale(pr.g, bi.scaled);
  const double scale = sup_abs(u_bi);
  for (std::size_t i = 0; i < u_cg.size(); ++i) ASSERT_NEAR(u_cg[i], u_bi[i], 1e-8 * scale);
}

TEST(Solve, NonConvergenceCarriesBestIterate) {
  const auto& pr = band_problem();
  SolveOptions o;
  o.max_iter = 1;
  o.tol = 1e-14;
  try {
    solve(pr.g, pr.rhs, o);
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence& e) {
    EXPECT_EQ(e.best_iterate.size(), pr.rhs.size());
    EXPECT_GT(e.residual_rel, 1e-14);
  }
  EXPECT_THROW(solve(pr.g, std::vector<double>(3, 1.0)), OutOfRange);
}

// ---------------------------------------------------------------------------
// checks

TEST(Checks, OperatorSymmetry) {
  const auto& F = shared_field();
  EXPECT_LE(operator_symmetry_defect(band_problem().g, 1), 1e-12);
  EXPECT_LE(operator_symmetry_defect(band_problem().g, 2), 1e-12);
  const auto st = discretize(F, band_spec(3, 5, 16, BoundaryScheme::staircase), p05());
  EXPECT_LE(operator_symmetry_defect(st, 3), 1e-12);
}

TEST(Checks, PositivityConstantRhs) {
  const auto& g = band_problem().g;
  const auto one = assemble_rhs(g, [](const CylPoint&) { return 1.0; });
  const auto s = solve(g, one);
  const auto u = unscale(g, s.scaled);
  for (double v : u) ASSERT_GT(v, 0.0);
  const auto rep = positivity_check(g, s.scaled, one);
  EXPECT_TRUE(rep.applicable);
  EXPECT_TRUE(rep.pass);
}

TEST(Checks, PositivityPlusModeAndMixedSign) {
  const auto& pr = band_problem();
  const auto rep = positivity_check(pr.g, pr.sol_plus.scaled, pr.plus);
  EXPECT_TRUE(rep.applicable);
  EXPECT_TRUE(rep.pass) << rep.min_u << " vs " << rep.max_abs_u;
  EXPECT_FALSE(positivity_check(pr.g, pr.sol.scaled, pr.rhs).applicable);
}

TEST(Checks, EnergyMinimality) {
  const auto& pr = band_problem();
  const auto& g = pr.g;
  const auto u = unscale(g, pr.sol.scaled);
  const auto phi = unscale(g, pr.rhs);
  const std::vector<double> zero(u.size(), 0.0);
  EXPECT_EQ(energy(g, zero, phi), 0.0);
  const double Ju = energy(g, u, phi);
  EXPECT_LT(Ju, 0.0);
  EXPECT_EQ(Ju, pr.sol.report.energy);
  // J[u + e d] - J[u] = e r.d + e^2/2 d.Ad, r the residual; the quadratic term wins
  const double scale = sup_abs(u);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  std::vector<double> v(u.size());
  for (int t = 0; t < 100; ++t) {
    for (std::size_t i = 0; i < u.size(); ++i) v[i] = u[i] + 1e-3 * scale * ud(rng);
    ASSERT_LE(Ju, energy(g, v, phi)) << t;
  }
}

TEST(Checks, SplittingIdentity) {
  const auto& pr = band_problem();
  const double tol = SolveOptions{}.tol;
  const double scale = std::max(sup_abs(pr.sol_plus.scaled), sup_abs(pr.sol_minus.scaled));
  double defect = 0.0;
  for (std::size_t i = 0; i < pr.rhs.size(); ++i)
    defect = std::max(defect, std::abs(pr.sol.scaled[i] - (pr.sol_plus.scaled[i] - pr.sol_minus.scaled[i])));
  EXPECT_LE(defect, 10 * tol * scale);
}

TEST(Checks, LinearityUnderRhsScaling) {
  const auto& pr = band_problem();
  auto twice = pr.rhs;
  for (auto& v : twice) v *= 2.0;
  const auto s2 = solve(pr.g, twice);
  // doubling is exact in binary, so every Krylov iterate doubles too
  for (std::size_t i = 0; i < twice.size(); ++i) ASSERT_EQ(s2.scaled[i], 2.0 * pr.sol.scaled[i]);
  auto third = pr.rhs;
  for (auto& v : third) v /= 3.0;
  const auto s3 = solve(pr.g, third);
  EXPECT_NEAR(sup_abs(s3.scaled), sup_abs(pr.sol.scaled) / 3.0, 1e-7 * sup_abs(pr.sol.scaled));
}

TEST(Checks, FriedrichsRatioFinite) {
  const auto& pr = band_problem();
  const double r = friedrichs_ratio(pr.g, unscale(pr.g, pr.sol_plus.scaled));
  EXPECT_TRUE(std::isfinite(r));
  EXPECT_GT(r, 0.0);
  // the y-extent of the thin mask components is ~2h/|grad f|, so the ratio is small
  EXPECT_LT(r, 1.0);
}

TEST(Checks, GridConvergenceIsSecondOrder) {
  // n_w + 1 and n_y double together, so coarse nodes are shared by all three grids
  const auto& F = shared_field();
  const double lo = w_of(3), hi = w_of(6);
  const int m0 = matched_n_w(lo, hi, 8) + 1;
  std::vector<MaskedGrid> gs;
  std::vector<Solution> ss;
  const auto o = GridSpec::default_y_offset();
  for (int m = 1; m <= 4; m *= 2) {
    GridSpec spec{lo, hi, m0 * m - 1, 8 * m, BoundaryScheme::ghost_fluid};
    for (int a = 0; a < 3; ++a) spec.y_offset[a] = m * o[a] - std::floor(m * o[a]);
    gs.push_back(discretize(F, spec, p05()));
    SolveOptions o;
    o.tol = 1e-11;
    ss.push_back(solve(gs.back(), assemble_rhs(F, gs.back(), RhsMode::lap_f), o));
  }
  double d1 = 0.0, d2 = 0.0;
  int common = 0;
  const auto& g0 = gs[0];
  for (std::int64_t u = 0; u < g0.n_unknowns(); ++u) {
    const auto c = g0.node_coords(g0.node_of[static_cast<std::size_t>(u)]);
    const double w = g0.w_node(c[0]);
    if (w < w_of(4) || w > w_of(5)) continue;  // away from the truncation planes
    // coarse y node j sits on fine node m j + floor(m o)
    auto fine = [&](int m, int a) { return m * c[a + 1] + static_cast<int>(std::floor(m * o[a])); };
    const auto k1 = gs[1].unknown_of[static_cast<std::size_t>(
        gs[1].node_index(2 * c[0] + 1, fine(2, 0), fine(2, 1), fine(2, 2)))];
    const auto k2 = gs[2].unknown_of[static_cast<std::size_t>(
        gs[2].node_index(4 * c[0] + 3, fine(4, 0), fine(4, 1), fine(4, 2)))];
    ASSERT_GE(k1, 0);
    ASSERT_GE(k2, 0);
    ASSERT_NEAR(gs[2].point(gs[2].node_of[static_cast<std::size_t>(k2)]).y()[1],
                g0.point(g0.node_of[static_cast<std::size_t>(u)]).y()[1], 1e-12);
    const double a = ss[0].scaled[static_cast<std::size_t>(u)];
    const double b = ss[1].scaled[static_cast<std::size_t>(k1)];
    const double c2 = ss[2].scaled[static_cast<std::size_t>(k2)];
    d1 = std::max(d1, std::abs(a - b));
    d2 = std::max(d2, std::abs(b - c2));
    ++common;
  }
  ASSERT_GT(common, 100);
  const double ratio = d1 / d2;
  std::printf("  refinement deltas %.3e, %.3e, ratio %.2f\n", d1, d2, ratio);
  EXPECT_GE(ratio, 2.5);
  EXPECT_LE(ratio, 6.0);
}

// ---------------------------------------------------------------------------
// decay

TEST(Decay, ZeroRhsGivesZeroProfile) {
  const auto& g = band_problem().g;
  const auto s = solve(g, std::vector<double>(static_cast<std::size_t>(g.n_unknowns()), 0.0));
  const auto rep = decay_profile_check(g, s);
  for (double H : rep.sup_scaled) ASSERT_EQ(H, 0.0);
  EXPECT_EQ(rep.c8, 0.0);
  EXPECT_TRUE(rep.pass);
}

TEST(Decay, BandProblemReport) {
  const auto& pr = band_problem();
  const auto rep = decay_profile_check(pr.g, pr.sol);
  ASSERT_EQ(rep.bands, (std::vector<std::int64_t>{3, 4, 5}));
  EXPECT_GT(rep.c8, 0.0);
  EXPECT_GE(rep.c8, rep.c_fit);
  EXPECT_TRUE(rep.pass) << rep.max_excess;
  std::printf("  band maxima %.3f %.3f %.3f, excess %.3f\n", rep.band_max[0], rep.band_max[1],
              rep.band_max[2], rep.max_excess);
}

TEST(Decay, InsufficientBand) {
  const auto& F = shared_field();
  const auto g = discretize(F, band_spec(3, 5, 16), p05());
  const auto s = solve(g, assemble_rhs(F, g, RhsMode::lap_f));
  EXPECT_THROW(decay_profile_check(g, s), InsufficientBand);
}

// ---------------------------------------------------------------------------
// interpolation and mean value inequality

TEST(Interpolate, ReproducesNodeValuesAndMidpoints) {
  const auto& pr = band_problem();
  const auto& g = pr.g;
  for (std::int64_t u = 0; u < g.n_unknowns(); u += 101) {
    const auto node = g.node_of[static_cast<std::size_t>(u)];
    ASSERT_NEAR(interpolate_scaled(g, pr.sol.scaled, g.point(node)), pr.sol.scaled[static_cast<std::size_t>(u)],
                1e-12 * sup_abs(pr.sol.scaled));
  }
  // halfway along y1 the value is the mean of the two (unscaled-relative) endpoints
  for (std::int64_t u = 0; u < g.n_unknowns(); u += 211) {
    const auto node = g.node_of[static_cast<std::size_t>(u)];
    const auto c = g.node_coords(node);
    const auto other = g.unknown_of[static_cast<std::size_t>(g.node_index(c[0], (c[1] + 1) % g.n_y, c[2], c[3]))];
    const double b = other >= 0 ? pr.sol.scaled[static_cast<std::size_t>(other)] : 0.0;
    const CylPoint mid = g.point(node).shifted({0, 0.5 * g.dy, 0, 0});
    ASSERT_NEAR(interpolate_scaled(g, pr.sol.scaled, mid), 0.5 * (pr.sol.scaled[static_cast<std::size_t>(u)] + b),
                1e-12 * sup_abs(pr.sol.scaled));
  }
  EXPECT_EQ(interpolate_scaled(g, pr.sol.scaled, CylPoint(g.w_lo, {0, 0, 0})), 0.0);
}

TEST(MeanValue, ZeroRhsIsTrivial) {
  const auto& g = band_problem().g;
  const std::vector<double> zero(static_cast<std::size_t>(g.n_unknowns()), 0.0);
  const auto s = solve(g, zero);
  const auto node = g.node_of[static_cast<std::size_t>(g.n_unknowns() / 2)];
  const auto rep = mean_value_inequality_check(g, s, zero, node, 0.5, 1000, 1);
  EXPECT_EQ(rep.u0, 0.0);
  EXPECT_EQ(rep.volume_term + rep.sphere_term, 0.0);
  EXPECT_TRUE(rep.pass);
}

TEST(MeanValue, PlusModeTwentyCenters) {
  const auto& pr = band_problem();
  const auto& g = pr.g;
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::int64_t> pick(0, g.n_unknowns() - 1);
  const double radii[] = {0.45, 0.6, 0.75, 0.9};
  int done = 0, tries = 0;
  while (done < 20 && tries < 10'000) {
    ++tries;
    const auto node = g.node_of[static_cast<std::size_t>(pick(rng))];
    const double w0 = g.point(node).w();
    if (w0 < w_of(3) + 1.0 || w0 > g.w_hi - 1.0) continue;
    if (pr.sol_plus.scaled[static_cast<std::size_t>(g.unknown_of[static_cast<std::size_t>(node)])] <= 0.0) continue;
    bool ok = false;
    for (double R : radii) {
      const auto rep = mean_value_inequality_check(g, pr.sol_plus, pr.plus, node, R, 4000, 5);
      ok = ok || rep.pass;
    }
    EXPECT_TRUE(ok) << "node " << node;
    ++done;
  }
  EXPECT_EQ(done, 20);
}

TEST(MeanValue, Preconditions) {
  const auto& pr = band_problem();
  const auto& g = pr.g;
  std::int64_t low = -1;
  for (std::int64_t u = 0; u < g.n_unknowns() && low < 0; ++u)
    if (g.slab_of_unknown(u) == 0) low = g.node_of[static_cast<std::size_t>(u)];
  ASSERT_GE(low, 0);
  EXPECT_THROW(mean_value_inequality_check(g, pr.sol_plus, pr.plus, low, 0.5, 10, 1), OutOfBand);
  const auto mid = g.node_of[static_cast<std::size_t>(g.n_unknowns() / 2)];
  EXPECT_THROW(mean_value_inequality_check(g, pr.sol, pr.rhs, mid, 0.5, 10, 1), OutOfRange);
  EXPECT_THROW(mean_value_inequality_check(g, pr.sol_plus, pr.plus, mid, 1.5, 10, 1), OutOfBand);
}

// ---------------------------------------------------------------------------
// dump

TEST(GridDump, RoundTrip) {
  const auto& pr = band_problem();
  const auto path = (std::filesystem::temp_directory_path() / "halfcyl_test_grid.bin").string();
  write_grid(path, pr.g, pr.sol.scaled);
  EXPECT_EQ(std::filesystem::file_size(path),
            8u + 96u + 16u * static_cast<std::uintmax_t>(pr.g.n_unknowns()));
  const auto [g, vals] = read_grid(path);
  EXPECT_EQ(g.n_w, pr.g.n_w);
  EXPECT_EQ(g.n_y, pr.g.n_y);
  EXPECT_EQ(g.w_lo, pr.g.w_lo);
  EXPECT_EQ(g.dw, pr.g.dw);
  EXPECT_EQ(g.h, pr.g.h);
  EXPECT_EQ(g.scheme, pr.g.scheme);
  EXPECT_EQ(g.y_offset, pr.g.y_offset);
  EXPECT_EQ(g.node_of, pr.g.node_of);
  EXPECT_EQ(g.unknown_of, pr.g.unknown_of);
  EXPECT_EQ(vals, pr.sol.scaled);
  EXPECT_FALSE(g.has_operator());
  EXPECT_THROW(solve(g, vals), Error);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOTAGRID", 8);
  }
  EXPECT_THROW(read_grid(path), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_grid(path), IoError);
}
