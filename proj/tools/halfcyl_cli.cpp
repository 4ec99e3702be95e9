// halfcyl: command-line front end to the verification pipeline.
// Exit status: 0 all checks pass, 1 some check failed, 2 usage or runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "halfcyl/harness.hpp"

namespace fs = std::filesystem;
using namespace halfcyl;

namespace {

struct CommonOpts {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
  std::vector<std::string> set;
};

void add_common(CLI::App* sub, CommonOpts& o, const std::string& out_help) {
  sub->add_option("--seed", o.seed, "base seed");
  sub->add_option("--out", o.out, out_help);
  sub->add_option("--config", o.config, "run configuration file (key = value)")->check(CLI::ExistingFile);
  sub->add_option("--set", o.set, "override a configuration key, key=value (repeatable)");
}

RunConfig make_config(const CommonOpts& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

void print_report(const VerificationReport& rep) {
  for (const auto& n : rep.notices) std::cout << "NOTE  " << n << "\n";
  for (const auto& c : rep.checks) std::cout << format_check(c) << "\n";
  std::cout << (rep.pass() ? "all checks passed" : std::to_string(rep.n_failed()) + " check(s) failed") << "\n";
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_text(path, j.dump(2) + "\n");
}

int exit_code(const VerificationReport& rep) { return rep.pass() ? 0 : 1; }

/// Accepts a number or "wK" for the K-th breakpoint.
double parse_w(const std::string& tok) {
  if (!tok.empty() && (tok[0] == 'w' || tok[0] == 'W'))
    return w_of(static_cast<double>(detail::parse_int("band", tok.substr(1))));
  return detail::parse_real("band", tok);
}

std::pair<std::string, std::string> split_colon(const std::string& s, const std::string& what) {
  const auto c = s.find(':');
  if (c == std::string::npos) throw ConfigError(what + " expects A:B, got '" + s + "'");
  return {s.substr(0, c), s.substr(c + 1)};
}

int cmd_sequence(const CommonOpts& o, std::optional<std::int64_t> k_max) {
  RunConfig cfg = make_config(o);
  if (k_max) cfg.sequence_k_max = *k_max;
  VerificationReport rep = new_report(cfg);
  PipelineState st;
  run_sequence_stage(cfg, st, rep);
  const fs::path out = o.out.empty() ? "sequence.csv" : o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream csv(out);
  if (!csv) throw IoError("cannot open " + out.string());
  csv << "k,a1,a2,a3,dot_with_next,sin2_num,sin2_den\n";
  const auto& seq = *st.sequence;
  const auto& pairs = seq.certificate.pairs;
  auto i128 = [](wide_int v) {
    if (v == 0) return std::string("0");
    const bool neg = v < 0;
    std::string s;
    for (; v != 0; v /= 10) s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(neg ? -(v % 10) : v % 10)));
    return neg ? "-" + s : s;
  };
  for (std::int64_t k = 1; k <= seq.size(); ++k) {
    const auto& v = seq.vecs[static_cast<std::size_t>(k - 1)];
    csv << k << "," << v.coords[0] << "," << v.coords[1] << "," << v.coords[2] << ",";
    if (k < seq.size()) {
      const auto& p = pairs[static_cast<std::size_t>(k - 1)];
      csv << i128(p.dot) << "," << i128(p.sin2_num()) << "," << i128(p.sin2_den());
    } else {
      csv << ",,";
    }
    csv << "\n";
  }
  if (!csv) throw IoError("write failed for " + out.string());
  print_report(rep);
  return exit_code(rep);
}

int cmd_field(const CommonOpts& o, std::optional<std::int64_t> k_min, std::optional<std::int64_t> k_max,
              std::optional<std::int64_t> samples) {
  RunConfig cfg = make_config(o);
  if (k_min) cfg.field_k_min = *k_min;
  if (k_max) cfg.field_k_max = *k_max;
  if (samples) cfg.field_samples_per_band = *samples;
  VerificationReport rep = new_report(cfg);
  PipelineState st;
  run_field_stage(cfg, st, rep);
  write_json(o.out.empty() ? "field_report.json" : o.out, rep.to_json());
  print_report(rep);
  return exit_code(rep);
}

int cmd_omega(const CommonOpts& o, const std::string& h, const std::string& bands, std::optional<std::int64_t> samples) {
  RunConfig cfg = make_config(o);
  if (!h.empty()) {
    cfg.h = h;
    cfg.sparsity_h = h;
  }
  if (!bands.empty()) {
    const auto dots = bands.find("..");
    if (dots == std::string::npos) throw ConfigError("--bands expects K0..K1, got '" + bands + "'");
    cfg.sparsity_band_min = detail::parse_int("bands", bands.substr(0, dots));
    cfg.sparsity_band_max = detail::parse_int("bands", bands.substr(dots + 2));
  }
  if (samples) cfg.sparsity_samples = *samples;
  VerificationReport rep = new_report(cfg);
  PipelineState st;
  run_omega_stage(cfg, st, rep);
  write_json(o.out.empty() ? "omega_report.json" : o.out, rep.to_json());
  print_report(rep);
  return exit_code(rep);
}

struct SolveArgs {
  std::string h, band, res, rhs = "lap_f", dump;
  std::optional<double> tol;
};

int cmd_solve(const CommonOpts& o, const SolveArgs& a) {
  RunConfig cfg = make_config(o);
  if (!a.h.empty()) cfg.h = a.h;
  if (a.tol) cfg.solve_tol = *a.tol;
  GridSpec spec = band_grid_spec(cfg, static_cast<int>(cfg.n_y));
  if (!a.band.empty()) {
    const auto [lo, hi] = split_colon(a.band, "--band");
    spec.w_lo = parse_w(lo);
    spec.w_hi = parse_w(hi);
    if (!(spec.w_hi > spec.w_lo)) throw ConfigError("--band needs W0 < W1");
  }
  std::string nw = "auto";
  if (!a.res.empty()) {
    const auto [n_w, n_y] = split_colon(a.res, "--res");
    nw = n_w;
    spec.n_y = static_cast<int>(detail::parse_int("res", n_y));
  }
  spec.n_w = nw == "auto" ? matched_n_w(spec.w_lo, spec.w_hi, spec.n_y) : static_cast<int>(detail::parse_int("res", nw));
  RhsMode mode;
  if (a.rhs == "lap_f") mode = RhsMode::lap_f;
  else if (a.rhs == "plus") mode = RhsMode::lap_f_plus;
  else if (a.rhs == "minus") mode = RhsMode::lap_f_minus;
  else throw ConfigError("--rhs expects lap_f, plus or minus");

  VerificationReport rep = new_report(cfg);
  rep.config["solve_grid"] = {{"w_lo", spec.w_lo}, {"w_hi", spec.w_hi}, {"n_w", spec.n_w}, {"n_y", spec.n_y},
                              {"rhs", a.rhs}, {"scheme", to_string(spec.scheme)}};
  PipelineState st;
  detail::ensure_field(st);
  const auto t0 = detail::clock::now();
  const fs::path out = o.out.empty() ? "solve_report.json" : o.out;
  MaskedGrid g;
  try {
    g = discretize(*st.field, spec, cfg.omega());
  } catch (const EmptyMask& e) {
    rep.notices.push_back(std::string("solve skipped: ") + e.what());
    write_json(out, rep.to_json());
    print_report(rep);
    return 0;
  }
  SolveOptions opt;
  opt.tol = cfg.solve_tol;
  const auto rhs = assemble_rhs(*st.field, g, mode);
  const auto sol = solve(g, rhs, opt);
  const std::string stage = "solve";
  auto& r = rep.add(upper_check("solve.residual", "Thm. 4.1, \"attains its minimum\"", sol.report.residual_rel, cfg.solve_tol), stage);
  r.n = g.n_unknowns();
  if (mode == RhsMode::lap_f_plus) {
    const auto pos = positivity_check(g, sol.scaled, rhs, 1e-10);
    auto& pc = rep.add(lower_check("solve.positivity", "Lemma 4.3, \"then u(x) ≥ 0 a.e. in Ω\"",
                                   pos.max_abs_u > 0.0 ? pos.min_u / pos.max_abs_u : 0.0, -1e-10),
                       stage);
    pc.pass = pos.applicable && pos.pass;
    pc.n = g.n_unknowns();
  }
  rep.set_constant("mask_fraction", g.mask_fraction());
  rep.set_constant("iterations", sol.report.iterations);
  rep.set_constant("energy", sol.report.energy);
  rep.set_constant("min_u", sol.report.min_u);
  rep.set_constant("max_abs_u", sol.report.max_abs_u);
  rep.tables["mask_fractions"] = mask_fraction_table(g);
  if (band_of(g.w_hi) - band_of(g.w_lo) >= 3) {
    const auto dec = decay_profile_check(g, sol);
    auto& dc = rep.add(upper_check("solve.decay_shape", "Cor. 4.9, \"|u(x)| ≤ C₈ w^{−2/3} e^{−w^{4/3}}\"", dec.max_excess, 1.5), stage);
    dc.n = g.n_w;
    rep.set_constant("C8", dec.c8);
    Table dt{{"w", "H", "envelope"}, {}};
    for (std::size_t i = 0; i < dec.w.size(); ++i) dt.rows.push_back({dec.w[i], dec.sup_scaled[i], dec.c_fit * dec.shape[i]});
    rep.tables["decay_profile"] = std::move(dt);
  } else {
    rep.notices.push_back("decay shape not checked: band spans fewer than 3 bands");
  }
  rep.runtime_s.emplace_back(stage, detail::seconds_since(t0));
  if (!a.dump.empty()) {
    write_grid(a.dump, g, sol.scaled);
    std::cout << "grid written to " << a.dump << "\n";
  }
  write_json(out, rep.to_json());
  print_report(rep);
  return exit_code(rep);
}

struct MollifyArgs {
  std::string grid, grid_refined, h;
  std::optional<std::int64_t> samples;
};

int cmd_mollify(const CommonOpts& o, const MollifyArgs& a) {
  RunConfig cfg = make_config(o);
  auto [g, u] = read_grid(a.grid);
  if (!a.h.empty()) {
    RunConfig probe = cfg;
    probe.h = a.h;
    const double h = probe.h_value();
    if (std::abs(h - g.h) > 1e-12 * g.h)
      throw ConfigError("--h " + a.h + " does not match the grid's h = " + detail::render(g.h));
  }
  cfg.h = detail::render(g.h);
  cfg.band_min = band_of(g.w_lo + 1e-9);
  cfg.band_max = band_of(g.w_hi + 1e-9);
  cfg.n_y = g.n_y;
  if (a.samples) cfg.cert_u_far = cfg.cert_layer = cfg.cert_inner = *a.samples;
  PipelineState st;
  st.grid = std::move(g);
  st.u = std::move(u);
  if (!a.grid_refined.empty()) {
    auto [gf, uf] = read_grid(a.grid_refined);
    if (std::abs(gf.h - st.grid->h) > 1e-12 * st.grid->h) throw ConfigError("--grid-refined has a different h");
    cfg.n_y_refined = gf.n_y;
    st.grid_fine = std::move(gf);
    st.u_fine = std::move(uf);
  } else {
    cfg.n_y_refined = cfg.n_y + 1;
  }
  VerificationReport rep = new_report(cfg);
  run_mollify_stage(cfg, st, rep);
  const fs::path out = o.out.empty() ? "certificate.json" : o.out;
  write_json(out, rep.certificate_json());
  fs::path full = out;
  full.replace_filename(out.stem().string() + "_report.json");
  write_json(full, rep.to_json());
  print_report(rep);
  return exit_code(rep);
}

int cmd_pipeline(const CommonOpts& o) {
  RunConfig cfg = make_config(o);
  if (!o.out.empty()) cfg.out_dir = o.out;
  const auto rep = run_pipeline(cfg);
  write_outputs(rep, cfg, cfg.out_dir);
  print_report(rep);
  std::cout << "outputs in " << cfg.out_dir << "\n";
  return exit_code(rep);
}

int cmd_report(const CommonOpts& o, const std::string& in) {
  std::ifstream f(in);
  if (!f) throw IoError("cannot open " + in);
  const json j = json::parse(f);
  std::optional<json> timing;
  const fs::path tpath = fs::path(in).replace_filename("timing.json");
  if (fs::exists(tpath)) {
    std::ifstream tf(tpath);
    timing = json::parse(tf);
  }
  const auto rep = VerificationReport::from_json(j, timing ? &*timing : nullptr);
  const fs::path dir = o.out.empty() ? fs::path(in).parent_path() / "plots" : fs::path(o.out);
  emit_plots(rep, dir);
  for (const auto& [k, v] : rep.constants) std::cout << "CONST " << k << " = " << detail::render(v) << "\n";
  print_report(rep);
  std::cout << "plots in " << dir.string() << "\n";
  return exit_code(rep);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"halfcyl: numerical verification of the half-cylinder construction"};
  app.require_subcommand(1);
  // "-h" would collide with the --h level option; subcommands inherit this
  app.set_help_flag("--help", "print this help and exit");

  CommonOpts o_seq, o_field, o_omega, o_solve, o_moll, o_pipe, o_rep;

  auto* seq = app.add_subcommand("sequence", "build and certify the lattice sequence; writes CSV");
  std::optional<std::int64_t> seq_k;
  seq->add_option("--k-max", seq_k, "sequence length");
  add_common(seq, o_seq, "CSV path (default sequence.csv)");

  auto* fld = app.add_subcommand("field-check", "profile and field checks");
  std::optional<std::int64_t> f_kmin, f_kmax, f_samples;
  fld->add_option("--k-min", f_kmin, "first band");
  fld->add_option("--k-max", f_kmax, "last band");
  fld->add_option("--samples", f_samples, "samples per band");
  add_common(fld, o_field, "report JSON path (default field_report.json)");

  auto* om = app.add_subcommand("omega-check", "cosine-level, sparsity and boundary checks");
  std::string om_h, om_bands;
  std::optional<std::int64_t> om_samples;
  om->add_option("--h", om_h, "level parameter: value or paper");
  om->add_option("--bands", om_bands, "band range K0..K1");
  om->add_option("--samples", om_samples, "samples per estimate");
  add_common(om, o_omega, "report JSON path (default omega_report.json)");

  auto* sv = app.add_subcommand("solve", "one Dirichlet solve on the truncated domain");
  SolveArgs sa;
  sv->add_option("--h", sa.h, "level parameter: value or paper");
  sv->add_option("--band", sa.band, "W0:W1, numbers or wK");
  sv->add_option("--res", sa.res, "NW:NY, NW may be auto");
  sv->add_option("--rhs", sa.rhs, "lap_f, plus or minus");
  sv->add_option("--tol", sa.tol, "relative residual");
  sv->add_option("--dump-grid", sa.dump, "write the grid and solution here");
  add_common(sv, o_solve, "report JSON path (default solve_report.json)");

  auto* ml = app.add_subcommand("mollify-check", "mollifier and certificate checks on a dumped grid");
  MollifyArgs ma;
  ml->add_option("--grid", ma.grid, "grid dump from solve --dump-grid")->required()->check(CLI::ExistingFile);
  ml->add_option("--grid-refined", ma.grid_refined, "finer dump of the same problem, for ratio stability")
      ->check(CLI::ExistingFile);
  ml->add_option("--h", ma.h, "expected level parameter (must match the grid)");
  ml->add_option("--samples", ma.samples, "certificate samples per stratum");
  add_common(ml, o_moll, "certificate JSON path (default certificate.json)");

  auto* pl = app.add_subcommand("pipeline", "all stages; writes report, timing, certificate and plots");
  add_common(pl, o_pipe, "output directory (default from config, out)");

  auto* rp = app.add_subcommand("report", "summarize a report JSON and regenerate plots");
  std::string rp_in = "out/report.json";
  rp->add_option("--in", rp_in, "report JSON")->check(CLI::ExistingFile);
  add_common(rp, o_rep, "plot directory (default next to the report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*seq) return cmd_sequence(o_seq, seq_k);
    if (*fld) return cmd_field(o_field, f_kmin, f_kmax, f_samples);
    if (*om) return cmd_omega(o_omega, om_h, om_bands, om_samples);
    if (*sv) return cmd_solve(o_solve, sa);
    if (*ml) return cmd_mollify(o_moll, ma);
    if (*pl) return cmd_pipeline(o_pipe);
    if (*rp) return cmd_report(o_rep, rp_in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
