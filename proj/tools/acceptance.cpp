// Acceptance run: the default pipeline, then one PASS/FAIL line per criterion.
// Tolerances and minimum sample counts are pinned here, independent of the
// config, and each line is re-derived from the recorded estimates.

#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "halfcyl/harness.hpp"

using namespace halfcyl;

namespace {

namespace pinned {
constexpr std::int64_t seq_k = 10'000;
constexpr double seq_seconds = 60.0;
constexpr double zeta_sym = 1e-12;
constexpr std::int64_t zeta_n = 1'000;
constexpr double gap_rel = 1e-9;
constexpr std::int64_t gap_k = 1'000'000;
constexpr std::int64_t f0_n = 1'000'000;
constexpr double grad_rel = 1e-6;
constexpr std::int64_t grad_n = 1'000;
constexpr double lap_slope = 0.05;
constexpr std::int64_t cos_n = 1'000;
constexpr double sparsity_h = 0.01;
constexpr std::int64_t sparsity_configs = 100;
constexpr std::int64_t sparsity_samples = 1'000'000;
constexpr double omega_seconds = 600.0;
constexpr double solve_h = 0.05;
constexpr double residual = 1e-8;
constexpr double positivity = -1e-10;
constexpr double splitting = 10.0 * 1e-8;
constexpr std::int64_t energy_n = 100;
constexpr double refinement = 0.15;
constexpr double normalization = 1e-10;
constexpr std::int64_t off_u_n = 50;
constexpr double audit_rel = 1e-3;
constexpr std::int64_t audit_n = 100;
constexpr double ratio_stability = 0.25;
constexpr double pipeline_seconds = 1800.0;
}  // namespace pinned

struct Verdict {
  bool ok = true;
  std::vector<std::string> why;
  void need(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      why.push_back(what);
    }
  }
};

class Criteria {
 public:
  explicit Criteria(const VerificationReport& r) : r_(r) {}

  /// Check present, non-informational and passing per its own record.
  const CheckEntry* get(Verdict& v, const std::string& id) const {
    const auto* c = r_.find(id);
    v.need(c != nullptr, id + " missing");
    return c;
  }
  void upper(Verdict& v, const std::string& id, double tol, std::int64_t min_n = 0) const {
    if (const auto* c = get(v, id)) {
      v.need(c->estimate <= tol, id + " = " + detail::render(c->estimate) + " > " + detail::render(tol));
      v.need(c->n >= min_n, id + " n = " + std::to_string(c->n) + " < " + std::to_string(min_n));
    }
  }
  void lower(Verdict& v, const std::string& id, double tol, std::int64_t min_n = 0) const {
    if (const auto* c = get(v, id)) {
      v.need(c->estimate >= tol, id + " = " + detail::render(c->estimate) + " < " + detail::render(tol));
      v.need(c->n >= min_n, id + " n = " + std::to_string(c->n) + " < " + std::to_string(min_n));
    }
  }
  void passed(Verdict& v, const std::string& id, std::int64_t min_n = 0) const {
    if (const auto* c = get(v, id)) {
      v.need(c->pass, id + " failed");
      v.need(c->n >= min_n, id + " n = " + std::to_string(c->n) + " < " + std::to_string(min_n));
    }
  }
  double constant(const std::string& k) const { return r_.constant(k).value_or(nan_value); }
  std::int64_t config_int(const std::string& k) const { return r_.config.value(k, std::int64_t{0}); }

 private:
  const VerificationReport& r_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run over the default configuration"};
  std::string out = "acceptance_out";
  std::uint64_t seed = RunConfig{}.seed;
  std::string config;
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "base seed");
  app.add_option("--config", config, "configuration overrides (sample counts below the pinned minima fail)")
      ->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  VerificationReport rep;
  try {
    RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::load(config);
    cfg.seed = seed;
    cfg.out_dir = out;
    rep = run_pipeline(cfg);
    write_outputs(rep, cfg, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  const Criteria c(rep);
  auto timing = [&](Verdict& v, const std::string& id, double limit) {
    const auto it = rep.timing_estimates.find(id);
    v.need(it != rep.timing_estimates.end() && it->second < limit,
           id + " = " + (it == rep.timing_estimates.end() ? std::string("missing") : detail::render(it->second)) + " s");
  };

  std::vector<std::pair<std::string, Verdict>> lines;
  {
    Verdict v;
    c.upper(v, "sequence.norms", 0.0, pinned::seq_k);
    c.upper(v, "sequence.angles", 0.0, pinned::seq_k - 1);
    timing(v, "sequence.runtime", pinned::seq_seconds);
    lines.emplace_back("1 lattice sequence: norms and angles exact, k <= 1e4, < 60 s", v);
  }
  {
    Verdict v;
    c.upper(v, "profile.zeta_symmetry", pinned::zeta_sym, pinned::zeta_n);
    c.upper(v, "profile.gap_bounds", pinned::gap_rel, pinned::gap_k);
    lines.emplace_back("2 cutoff profile: symmetry <= 1e-12, gap bounds to 1e-9 for k <= 1e6", v);
  }
  {
    Verdict v;
    c.upper(v, "field.f0_bound", 1.0 + 4.0 * std::numeric_limits<double>::epsilon(), pinned::f0_n);
    c.upper(v, "field.grad_fd", pinned::grad_rel, pinned::grad_n);
    c.upper(v, "field.lap_slope", pinned::lap_slope);
    v.need(c.config_int("field_k_min") <= 2 && c.config_int("field_k_max") >= 12, "slope fit must cover k in [2, 12]");
    lines.emplace_back("3 field: |f0| <= 1, gradient vs differences 1e-6, Laplacian slope within 0.05", v);
  }
  {
    Verdict v;
    c.upper(v, "omega.cos_exact", 0.0, pinned::cos_n);
    c.upper(v, "omega.cos_windowed", 0.0, pinned::cos_n);
    c.upper(v, "omega.cos_mc_agreement", 0.0, 2 * pinned::cos_n);
    lines.emplace_back("4 cosine levels: exact and windowed bounds, Monte-Carlo within 3 se", v);
  }
  {
    Verdict v;
    for (const char* id : {"omega.slice_sparsity", "omega.ball_sparsity", "omega.sphere_sparsity", "omega.cross_section"})
      c.passed(v, id, pinned::sparsity_configs);
    v.need(std::abs(c.constant("h_sparsity") - pinned::sparsity_h) < 1e-15, "sparsity h must be 0.01");
    v.need(c.config_int("sparsity_samples") >= pinned::sparsity_samples, "fewer than 1e6 samples per estimate");
    timing(v, "omega.sparsity_runtime", pinned::omega_seconds);
    lines.emplace_back("5 sparsity at h = 0.01: estimate + 3 se <= bound, 100 configs x 1e6, < 10 min", v);
  }
  {
    Verdict v;
    v.need(std::abs(c.constant("h") - pinned::solve_h) < 1e-15, "solve h must be 0.05");
    v.need(c.config_int("band_min") == 3 && c.config_int("band_max") == 6 && c.config_int("n_y") == 32 &&
               c.config_int("n_y_refined") == 48,
           "band [w3, w6], n_y 32 -> 48 required");
    c.upper(v, "solve.residual", pinned::residual);
    c.lower(v, "solve.positivity", pinned::positivity);
    c.upper(v, "solve.splitting", pinned::splitting);
    c.lower(v, "solve.energy_minimality", 0.0, pinned::energy_n);
    c.passed(v, "solve.energy_minimality");
    c.upper(v, "solve.refinement", pinned::refinement);
    lines.emplace_back("6 Dirichlet solve: residual, positivity, splitting, energy, refinement < 15%", v);
  }
  {
    Verdict v;
    c.upper(v, "kernel.normalization", pinned::normalization);
    c.upper(v, "mollify.constant", 1.0);
    c.passed(v, "mollify.off_u_value");
    v.need(rep.find("mollify.off_u_value") && rep.find("mollify.off_u_value")->n >= pinned::off_u_n, "fewer than 50 off-U points");
    c.passed(v, "mollify.cor55_off_u");
    c.passed(v, "cert.cor55");
    c.upper(v, "mollify.fd_audit", pinned::audit_rel, pinned::audit_n);
    lines.emplace_back("7 mollifier: normalization 1e-10, constants, F = g and Laplace F = 0 off U, audit 1e-3", v);
  }
  {
    Verdict v;
    c.passed(v, "cert.upper");
    c.passed(v, "cert.lower");
    c.passed(v, "cert.ratio");
    v.need(std::isfinite(c.constant("ratio_C")), "ratio constant not finite");
    c.upper(v, "cert.ratio_stability", pinned::ratio_stability);
    timing(v, "pipeline.runtime", pinned::pipeline_seconds);
    lines.emplace_back("8 certificate at h = 0.05: upper, lower beyond threshold, ratio finite and stable 25%, < 30 min", v);
  }

  bool all = true;
  for (const auto& [text, v] : lines) {
    all = all && v.ok;
    std::cout << (v.ok ? "PASS  " : "FAIL  ") << text << "\n";
    for (const auto& w : v.why) std::cout << "        " << w << "\n";
  }
  std::cout << "constants:";
  for (const char* k : {"C0", "C1", "C8", "C9", "C12", "ratio_C", "ratio_C_refined", "threshold_w", "k_star_paper", "rho"})
    std::cout << " " << k << "=" << detail::render(c.constant(k));
  std::cout << "\n";
  for (const auto& [stage, s] : rep.runtime_s) std::cout << "runtime " << stage << " " << s << " s\n";
  return all ? 0 : 1;
}
