// calsens: command-line front end for the calibration-sensitivity toolkit.
//
// Subcommands orchestrate the built-in life-cycle fixture (solve, estimate,
// sens, brute, extrapolate, decompose) and the external-matrix workflow
// (external).  All result artifacts are deterministic for a given
// configuration and seed; run_log.json additionally records wall-clock
// timings, which naturally vary between runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <calsens/fixture.hpp>
#include <calsens/matrixio.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace calsens;
namespace lc = calsens::lifecycle;

namespace {

struct Options {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir = "out";
  std::string format = "csv";
  std::string method = "all";
  std::string param = "r";        // extrapolate: which calibrated parameter to bump
  std::string external_param;     // external: empty means no extrapolation table
  long n_sim_override = 0;  // 0 keeps the config value
  long seed_override = 0;   // 0 keeps the config value
  std::vector<double> eps{1.0};
  std::vector<double> percents{1.0, 2.0, 3.0, 4.0, 5.0};
};

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

TableFormat table_format(const Options& o) {
  return o.format == "markdown" ? TableFormat::markdown : TableFormat::csv;
}

std::string table_ext(const Options& o) { return o.format == "markdown" ? ".md" : ".csv"; }

json vec_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw LoadError("cannot open for writing: " + path.string());
  f << text;
}

void write_run_log(const fs::path& out_dir, const json& log) {
  std::ofstream f(out_dir / "run_log.json");
  if (!f) throw LoadError("cannot open for writing: " + (out_dir / "run_log.json").string());
  f << log.dump(2) << "\n";
}

void warn_above_grid(const std::string& what, double share, json& log) {
  if (share > 0.001) {
    const std::string msg = what + ": " + format_full(share * 100.0) +
                            "% of simulated observations lie above the policy grid top";
    std::cerr << "warning: " << msg << "\n";
    log["warnings"].push_back(msg);
  }
}

struct FixtureRun {
  Config cfg;
  lc::Calibration calib;
  lc::Preferences prefs;
  lc::SimulationSettings sim;
  lc::EstimationSettings est_settings;
};

FixtureRun load_fixture_inputs(const Options& o) {
  FixtureRun r;
  r.cfg = Config::parse_file(o.config_path);
  r.calib = lc::calibration_from_config(r.cfg);
  r.prefs = lc::preferences_from_config(r.cfg);
  r.sim = lc::simulation_from_config(r.cfg);
  r.est_settings = lc::estimation_from_config(r.cfg);
  if (o.n_sim_override > 0) r.sim.n_sim = static_cast<int>(o.n_sim_override);
  if (o.seed_override > 0) r.sim.est_seed = static_cast<uint64_t>(o.seed_override);
  return r;
}

json inputs_json(const Options& o, const FixtureRun* r) {
  json j;
  if (!o.config_path.empty()) j["config"] = o.config_path;
  if (!o.manifest_path.empty()) j["manifest"] = o.manifest_path;
  j["out"] = o.out_dir;
  j["format"] = o.format;
  if (r) {
    j["n_sim"] = r->sim.n_sim;
    j["data_seed"] = r->sim.data_seed;
    j["est_seed"] = r->sim.est_seed;
    j["lc_borrow_limit"] = r->sim.lc_borrow_limit;
  }
  return j;
}

int gamma_index_of(const std::vector<std::string>& names, const std::string& param) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == param) return static_cast<int>(i);
  throw std::invalid_argument("unknown calibrated parameter '" + param + "'");
}

// ---------------------------------------------------------------------------
// solve: policy grids, simulated mean profiles, and fit-plot data
// ---------------------------------------------------------------------------

int cmd_solve(const Options& o) {
  FixtureRun r = load_fixture_inputs(o);
  fs::create_directories(o.out_dir);
  json log;
  log["command"] = "solve";
  log["inputs"] = inputs_json(o, &r);
  log["warnings"] = json::array();

  Stopwatch solve_t;
  const lc::Policy policy = lc::solve_egm(r.prefs, r.calib);
  log["timings_seconds"]["solve"] = solve_t.seconds();

  std::ostringstream pol;
  pol << "age,node,m,c\n";
  for (int age = r.calib.age_min; age <= r.calib.age_max; ++age) {
    const Vector& m = policy.m_grid(age);
    const Vector& c = policy.c_grid(age);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      pol << age << "," << i << "," << format_full(m[i]) << "," << format_full(c[i]) << "\n";
  }
  write_text(fs::path(o.out_dir) / "policy.csv", pol.str());

  Stopwatch sim_t;
  const lc::ShockPanel shocks =
      lc::ShockPanel::draw(r.sim.n_sim, r.calib.n_ages(), r.sim.est_seed);
  const lc::AgeProfiles profiles = lc::simulate_profiles(policy, r.calib, shocks);
  const lc::Panel data_panel = lc::simulate(policy, r.calib, r.sim.n_sim, r.sim.data_seed);
  log["timings_seconds"]["simulate"] = sim_t.seconds();
  warn_above_grid("model simulation", profiles.share_above_grid, log);
  warn_above_grid("data simulation", data_panel.share_above_grid, log);

  std::ostringstream prof;
  prof << "age,mean_C,mean_A,mean_Y,mean_m\n";
  for (int t = 0; t < r.calib.n_ages(); ++t)
    prof << r.calib.age_min + t << "," << format_full(profiles.mean_C[t]) << ","
         << format_full(profiles.mean_A[t]) << "," << format_full(profiles.mean_Y[t]) << ","
         << format_full(profiles.mean_m[t]) << "\n";
  write_text(fs::path(o.out_dir) / "profiles.csv", prof.str());

  const Vector data_m = lc::consumption_moments(data_panel);
  const Vector model_m = lc::consumption_moments(profiles);
  std::ostringstream fit;
  fit << "age,data_log_mean_C,model_log_mean_C\n";
  for (int t = 0; t < r.calib.n_ages(); ++t)
    fit << r.calib.age_min + t << "," << format_full(data_m[t]) << ","
        << format_full(model_m[t]) << "\n";
  write_text(fs::path(o.out_dir) / "fit.csv", fit.str());

  log["results"]["share_above_grid"] = profiles.share_above_grid;
  log["artifacts"] = {"policy.csv", "profiles.csv", "fit.csv"};
  write_run_log(o.out_dir, log);
  return 0;
}

// ---------------------------------------------------------------------------
// estimate: fit preferences to the synthetic data moments
// ---------------------------------------------------------------------------

int cmd_estimate(const Options& o) {
  FixtureRun r = load_fixture_inputs(o);
  fs::create_directories(o.out_dir);
  json log;
  log["command"] = "estimate";
  log["inputs"] = inputs_json(o, &r);

  Stopwatch fx_t;
  const lc::SelfEstimation fx =
      lc::make_self_estimation(r.calib, r.prefs, r.sim, r.est_settings);
  log["timings_seconds"]["build_fixture"] = fx_t.seconds();

  Stopwatch est_t;
  const EstimateResult est = estimate(fx.problem, fx.gamma_hat);
  log["timings_seconds"]["estimate"] = est_t.seconds();

  std::ostringstream out;
  out << "name,value\n";
  out << "beta," << format_full(est.theta_hat[0]) << "\n";
  out << "rho," << format_full(est.theta_hat[1]) << "\n";
  out << "criterion," << format_full(est.criterion_value) << "\n";
  write_text(fs::path(o.out_dir) / "estimate.csv", out.str());

  log["results"]["theta_hat"] = vec_json(est.theta_hat);
  log["results"]["criterion"] = est.criterion_value;
  log["results"]["converged"] = est.converged;
  log["results"]["n_evals"] = est.n_evals;
  log["artifacts"] = {"estimate.csv"};
  write_run_log(o.out_dir, log);
  return 0;
}

// ---------------------------------------------------------------------------
// sens: derivative and elasticity tables for parameters and quantities
// ---------------------------------------------------------------------------

int cmd_sens(const Options& o) {
  FixtureRun r = load_fixture_inputs(o);
  fs::create_directories(o.out_dir);
  json log;
  log["command"] = "sens";
  log["inputs"] = inputs_json(o, &r);
  log["inputs"]["method"] = o.method;

  Stopwatch fx_t;
  const lc::SelfEstimation fx =
      lc::make_self_estimation(r.calib, r.prefs, r.sim, r.est_settings);
  log["timings_seconds"]["build_fixture"] = fx_t.seconds();

  Stopwatch est_t;
  const EstimateResult est = estimate(fx.problem, fx.gamma_hat);
  log["timings_seconds"]["estimate"] = est_t.seconds();
  log["results"]["theta_hat"] = vec_json(est.theta_hat);

  const std::vector<std::string>& rows = fx.problem.theta_names;
  const std::vector<std::string>& cols = fx.problem.gamma_names;
  std::vector<NamedTable> deriv_panels, elas_panels, qoi_panels;
  json artifacts = json::array();

  if (o.method == "brute") {
    Stopwatch brute_t;
    const BruteForceResult bf = brute_force_sensitivity(fx.problem, est.theta_hat,
                                                        fx.gamma_hat, o.eps.front(), {}, fx.qoi);
    log["timings_seconds"]["brute"] = brute_t.seconds();
    deriv_panels.push_back(make_panel("Brute force", bf.percent_change));
    elas_panels.push_back(make_panel("Brute force", bf.elasticity()));
    qoi_panels.push_back(make_panel("Brute force", bf.qoi_percent_change / bf.eps_percent));
    log["inputs"]["eps"] = o.eps.front();

    const std::string qtab =
        emit_elasticity_table(qoi_panels, {"h30", "h60"}, cols, table_format(o));
    write_text(fs::path(o.out_dir) / ("qoi_elasticity_table" + table_ext(o)), qtab);
    artifacts.push_back("qoi_elasticity_table" + table_ext(o));
  } else {
    const bool want_robust = o.method != "approx";
    Stopwatch bundle_t;
    const MomentBundle bundle =
        build_bundle(fx.problem, est.theta_hat, fx.gamma_hat, want_robust);
    log["timings_seconds"]["build_bundle"] = bundle_t.seconds();

    std::vector<SensitivityResult> results;
    if (o.method == "approx" || o.method == "all") {
      Stopwatch t;
      results.push_back(sensitivity_approx(bundle));
      log["timings_seconds"]["approx"] = t.seconds();
      log["condition_numbers"]["approx"] = results.back().condition_number;
      deriv_panels.push_back(derivative_panel(results.back(), "Approximation"));
      elas_panels.push_back(elasticity_panel(results.back(), "Approximation"));
    }
    if (o.method == "robust" || o.method == "all") {
      Stopwatch t;
      results.push_back(sensitivity_robust(bundle));
      log["timings_seconds"]["robust"] = t.seconds();
      log["condition_numbers"]["robust"] = results.back().condition_number;
      deriv_panels.push_back(derivative_panel(results.back(), "Robust"));
      elas_panels.push_back(elasticity_panel(results.back(), "Robust"));
    }

    Stopwatch qoi_t;
    const lc::QoIDerivatives qd =
        lc::qoi_jacobians(lc::with_preferences(est.theta_hat), r.calib, fx.pipeline);
    log["timings_seconds"]["qoi_jacobians"] = qoi_t.seconds();
    log["results"]["h_hat"] = vec_json(qd.jac.h_hat);

    for (const SensitivityResult& res : results) {
      const Matrix H = qoi_sensitivity(qd.jac, res);
      const ElasticityMatrix EH = elasticities(H, qd.jac.h_hat, fx.gamma_hat);
      NamedTable t = make_panel(res.method == Method::approx ? "Approximation" : "Robust",
                                EH.value);
      t.defined = t.defined && EH.defined;
      qoi_panels.push_back(std::move(t));
    }
    const std::string qtab =
        emit_elasticity_table(qoi_panels, qd.jac.h_names, cols, table_format(o));
    write_text(fs::path(o.out_dir) / ("qoi_elasticity_table" + table_ext(o)), qtab);
    artifacts.push_back("qoi_elasticity_table" + table_ext(o));

    const std::string manifest =
        save_manifest(bundle, &qd.jac, (fs::path(o.out_dir) / "bundle").string());
    artifacts.push_back("bundle/manifest.cfg");
    log["results"]["manifest"] = manifest;
  }

  write_text(fs::path(o.out_dir) / ("derivative_table" + table_ext(o)),
             emit_elasticity_table(deriv_panels, rows, cols, table_format(o)));
  write_text(fs::path(o.out_dir) / ("elasticity_table" + table_ext(o)),
             emit_elasticity_table(elas_panels, rows, cols, table_format(o)));
  artifacts.push_back("derivative_table" + table_ext(o));
  artifacts.push_back("elasticity_table" + table_ext(o));
  log["artifacts"] = artifacts;
  write_run_log(o.out_dir, log);
  return 0;
}

// ---------------------------------------------------------------------------
// brute: re-estimation percent changes for one or more bump sizes
// ---------------------------------------------------------------------------

int cmd_brute(const Options& o) {
  FixtureRun r = load_fixture_inputs(o);
  fs::create_directories(o.out_dir);
  json log;
  log["command"] = "brute";
  log["inputs"] = inputs_json(o, &r);
  log["inputs"]["eps"] = o.eps;

  Stopwatch fx_t;
  const lc::SelfEstimation fx =
      lc::make_self_estimation(r.calib, r.prefs, r.sim, r.est_settings);
  log["timings_seconds"]["build_fixture"] = fx_t.seconds();

  Stopwatch est_t;
  const EstimateResult est = estimate(fx.problem, fx.gamma_hat);
  log["timings_seconds"]["estimate"] = est_t.seconds();
  log["results"]["theta_hat"] = vec_json(est.theta_hat);

  std::vector<NamedTable> pct_panels, elas_panels, qoi_panels;
  for (double eps : o.eps) {
    Stopwatch t;
    const BruteForceResult bf =
        brute_force_sensitivity(fx.problem, est.theta_hat, fx.gamma_hat, eps, {}, fx.qoi);
    char title[64];
    std::snprintf(title, sizeof(title), "Brute force %g%%", eps);
    log["timings_seconds"][std::string("brute_") + format_full(eps)] = t.seconds();
    pct_panels.push_back(make_panel(title, bf.percent_change));
    elas_panels.push_back(make_panel(title, bf.elasticity()));
    qoi_panels.push_back(make_panel(title, bf.qoi_percent_change));
    json ok = json::array();
    for (char flag : bf.ok) ok.push_back(static_cast<bool>(flag));
    log["results"][std::string("ok_") + format_full(eps)] = ok;
  }

  const auto& rows = fx.problem.theta_names;
  const auto& cols = fx.problem.gamma_names;
  write_text(fs::path(o.out_dir) / ("brute_percent_change" + table_ext(o)),
             emit_elasticity_table(pct_panels, rows, cols, table_format(o)));
  write_text(fs::path(o.out_dir) / ("brute_elasticity" + table_ext(o)),
             emit_elasticity_table(elas_panels, rows, cols, table_format(o)));
  write_text(fs::path(o.out_dir) / ("brute_qoi_percent_change" + table_ext(o)),
             emit_elasticity_table(qoi_panels, {"h30", "h60"}, cols, table_format(o)));
  log["artifacts"] = {"brute_percent_change" + table_ext(o), "brute_elasticity" + table_ext(o),
                      "brute_qoi_percent_change" + table_ext(o)};
  write_run_log(o.out_dir, log);
  return 0;
}

// ---------------------------------------------------------------------------
// extrapolate: project elasticities over larger bumps of one parameter
// ---------------------------------------------------------------------------

int cmd_extrapolate(const Options& o) {
  FixtureRun r = load_fixture_inputs(o);
  fs::create_directories(o.out_dir);
  json log;
  log["command"] = "extrapolate";
  log["inputs"] = inputs_json(o, &r);
  log["inputs"]["param"] = o.param;
  log["inputs"]["percents"] = o.percents;
  log["inputs"]["method"] = o.method;

  Stopwatch fx_t;
  const lc::SelfEstimation fx =
      lc::make_self_estimation(r.calib, r.prefs, r.sim, r.est_settings);
  log["timings_seconds"]["build_fixture"] = fx_t.seconds();
  const int l = gamma_index_of(fx.problem.gamma_names, o.param);

  Stopwatch est_t;
  const EstimateResult est = estimate(fx.problem, fx.gamma_hat);
  log["timings_seconds"]["estimate"] = est_t.seconds();
  log["results"]["theta_hat"] = vec_json(est.theta_hat);

  Stopwatch bundle_t;
  const MomentBundle bundle = build_bundle(fx.problem, est.theta_hat, fx.gamma_hat, true);
  log["timings_seconds"]["build_bundle"] = bundle_t.seconds();
  const SensitivityResult approx = sensitivity_approx(bundle);
  const SensitivityResult robust = sensitivity_robust(bundle);

  lc::QoIOptions qopt;
  qopt.percent_coordinate = l;
  qopt.percents = o.percents;
  Stopwatch qoi_t;
  const lc::QoIDerivatives qd =
      lc::qoi_jacobians(lc::with_preferences(est.theta_hat), r.calib, fx.pipeline, qopt);
  log["timings_seconds"]["qoi_jacobians"] = qoi_t.seconds();
  log["results"]["h_hat"] = vec_json(qd.jac.h_hat);

  std::vector<NamedTable> theta_panels, qoi_panels;
  const auto add_linear = [&](const SensitivityResult& res, const std::string& title) {
    const ExtrapolationTable t = extrapolate_percent(res.E, l, o.percents);
    theta_panels.push_back(NamedTable{title, t.value, t.defined});
    const Matrix H = qoi_sensitivity(qd.jac, res);
    const ElasticityMatrix EH = elasticities(H, qd.jac.h_hat, fx.gamma_hat);
    const ExtrapolationTable th = extrapolate_percent(EH, l, o.percents);
    qoi_panels.push_back(NamedTable{title, th.value, th.defined});
  };
  add_linear(approx, "Approximate");
  add_linear(robust, "Robust");
  log["condition_numbers"]["approx"] = approx.condition_number;
  log["condition_numbers"]["robust"] = robust.condition_number;

  if (o.method == "all" || o.method == "brute") {
    const auto P = static_cast<Eigen::Index>(o.percents.size());
    Matrix theta_pct(est.theta_hat.size(), P), qoi_pct(qd.jac.h_hat.size(), P);
    Stopwatch brute_t;
    for (Eigen::Index q = 0; q < P; ++q) {
      const BruteForceResult bf = brute_force_sensitivity(
          fx.problem, est.theta_hat, fx.gamma_hat, o.percents[static_cast<size_t>(q)], {l},
          fx.qoi);
      theta_pct.col(q) = bf.percent_change.col(l);
      qoi_pct.col(q) = bf.qoi_percent_change.col(l);
    }
    log["timings_seconds"]["brute"] = brute_t.seconds();
    theta_panels.push_back(make_panel("Brute force", theta_pct));
    qoi_panels.push_back(make_panel("Brute force", qoi_pct));
  }
  qoi_panels.push_back(make_panel("Fixed-theta", qd.fixed_theta_percent));

  write_text(fs::path(o.out_dir) / ("extrapolation_theta" + table_ext(o)),
             emit_extrapolation_table(theta_panels, fx.problem.theta_names, o.percents,
                                      table_format(o)));
  write_text(fs::path(o.out_dir) / ("extrapolation_qoi" + table_ext(o)),
             emit_extrapolation_table(qoi_panels, qd.jac.h_names, o.percents, table_format(o)));
  log["artifacts"] = {"extrapolation_theta" + table_ext(o), "extrapolation_qoi" + table_ext(o)};
  write_run_log(o.out_dir, log);
  return 0;
}

// ---------------------------------------------------------------------------
// decompose: life-cycle versus buffer savings profiles
// ---------------------------------------------------------------------------

int cmd_decompose(const Options& o) {
  FixtureRun r = load_fixture_inputs(o);
  fs::create_directories(o.out_dir);
  json log;
  log["command"] = "decompose";
  log["inputs"] = inputs_json(o, &r);
  log["warnings"] = json::array();

  Stopwatch solve_t;
  const lc::Policy policy = lc::solve_egm(r.prefs, r.calib);
  const lc::ShockPanel shocks =
      lc::ShockPanel::draw(r.sim.n_sim, r.calib.n_ages(), r.sim.est_seed);
  const lc::AgeProfiles profiles = lc::simulate_profiles(policy, r.calib, shocks);
  log["timings_seconds"]["solve_simulate"] = solve_t.seconds();
  warn_above_grid("baseline simulation", profiles.share_above_grid, log);

  Stopwatch dec_t;
  const lc::SavingsDecomposition d =
      lc::savings_decomposition(r.prefs, r.calib, profiles, shocks, r.sim.lc_borrow_limit);
  log["timings_seconds"]["decompose"] = dec_t.seconds();

  std::ostringstream sav;
  sav << "age,s,s_lc,s_b,gap\n";
  for (Eigen::Index i = 0; i < d.s.size(); ++i)
    sav << d.first_age + static_cast<int>(i) << "," << format_full(d.s[i]) << ","
        << format_full(d.s_lc[i]) << "," << format_full(d.s_b[i]) << ","
        << format_full(d.s_b[i] - d.s_lc[i]) << "\n";
  write_text(fs::path(o.out_dir) / "decomposition.csv", sav.str());

  std::ostringstream wealth;
  wealth << "age,mean_A,mean_A_lc,mean_A_buffer\n";
  for (Eigen::Index i = 0; i < d.mean_A.size(); ++i)
    wealth << r.calib.age_min + static_cast<int>(i) << "," << format_full(d.mean_A[i]) << ","
           << format_full(d.mean_A_lc[i]) << "," << format_full(d.mean_A[i] - d.mean_A_lc[i])
           << "\n";
  write_text(fs::path(o.out_dir) / "wealth.csv", wealth.str());

  std::ostringstream summary;
  summary << "name,value\n";
  summary << "h30," << format_full(d.h30) << "\n";
  summary << "h60," << format_full(d.h60) << "\n";
  summary << "gamma1_lc," << format_full(d.gamma1_lc) << "\n";
  summary << "lc_borrow_limit," << format_full(d.lc_borrow_limit) << "\n";
  write_text(fs::path(o.out_dir) / "decomposition_summary.csv", summary.str());

  log["results"]["h30"] = d.h30;
  log["results"]["h60"] = d.h60;
  log["results"]["gamma1_lc"] = d.gamma1_lc;
  log["artifacts"] = {"decomposition.csv", "wealth.csv", "decomposition_summary.csv"};
  write_run_log(o.out_dir, log);
  return 0;
}

// ---------------------------------------------------------------------------
// external: sensitivity analysis on matrices supplied by another model
// ---------------------------------------------------------------------------

int cmd_external(const Options& o) {
  fs::create_directories(o.out_dir);
  json log;
  log["command"] = "external";
  log["inputs"] = inputs_json(o, nullptr);

  Stopwatch load_t;
  const LoadedManifest lm = load_manifest(o.manifest_path);
  log["timings_seconds"]["load"] = load_t.seconds();
  const MomentBundle& bundle = lm.bundle;

  const auto rows = detail::names_or_default(bundle.theta_names, "theta", bundle.n_theta());
  const auto cols = detail::names_or_default(bundle.gamma_names, "gamma", bundle.n_gamma());

  std::vector<SensitivityResult> results;
  results.push_back(sensitivity_approx(bundle));
  log["condition_numbers"]["approx"] = results.back().condition_number;
  if (bundle.c_theta) {
    results.push_back(sensitivity_robust(bundle));
    log["condition_numbers"]["robust"] = results.back().condition_number;
  }

  std::vector<NamedTable> deriv_panels, elas_panels;
  for (const SensitivityResult& res : results) {
    const std::string title = res.method == Method::approx ? "Approximation" : "Robust";
    deriv_panels.push_back(derivative_panel(res, title));
    elas_panels.push_back(elasticity_panel(res, title));
  }
  write_text(fs::path(o.out_dir) / ("derivative_table" + table_ext(o)),
             emit_elasticity_table(deriv_panels, rows, cols, table_format(o)));
  write_text(fs::path(o.out_dir) / ("elasticity_table" + table_ext(o)),
             emit_elasticity_table(elas_panels, rows, cols, table_format(o)));
  json artifacts = json::array();
  artifacts.push_back("derivative_table" + table_ext(o));
  artifacts.push_back("elasticity_table" + table_ext(o));

  if (lm.qoi) {
    const auto h_rows = detail::names_or_default(lm.qoi->h_names, "h", lm.qoi->h_hat.size());
    std::vector<NamedTable> qoi_panels;
    for (const SensitivityResult& res : results) {
      const Matrix H = qoi_sensitivity(*lm.qoi, res);
      const ElasticityMatrix EH = elasticities(H, lm.qoi->h_hat, bundle.gamma_hat);
      NamedTable t = make_panel(res.method == Method::approx ? "Approximation" : "Robust",
                                EH.value);
      t.defined = t.defined && EH.defined;
      qoi_panels.push_back(std::move(t));
    }
    write_text(fs::path(o.out_dir) / ("qoi_elasticity_table" + table_ext(o)),
               emit_elasticity_table(qoi_panels, h_rows, cols, table_format(o)));
    artifacts.push_back("qoi_elasticity_table" + table_ext(o));
  }

  if (!o.external_param.empty()) {
    const int l = gamma_index_of(cols, o.external_param);
    std::vector<NamedTable> theta_panels;
    for (const SensitivityResult& res : results) {
      const ExtrapolationTable t = extrapolate_percent(res.E, l, o.percents);
      theta_panels.push_back(NamedTable{
          res.method == Method::approx ? "Approximate" : "Robust", t.value, t.defined});
    }
    write_text(fs::path(o.out_dir) / ("extrapolation_theta" + table_ext(o)),
               emit_extrapolation_table(theta_panels, rows, o.percents, table_format(o)));
    artifacts.push_back("extrapolation_theta" + table_ext(o));
  }

  log["artifacts"] = artifacts;
  write_run_log(o.out_dir, log);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calsens: how estimated parameters respond to calibrated parameters"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&](CLI::App* cmd, bool needs_config) {
    cmd->add_option("--out", o.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--format", o.format, "table format")
        ->check(CLI::IsMember({"csv", "markdown"}))
        ->capture_default_str();
    if (needs_config) {
      cmd->add_option("--config", o.config_path, "configuration file")->required();
      cmd->add_option("--n-sim", o.n_sim_override, "override the simulated agent count")
          ->check(CLI::PositiveNumber);
      cmd->add_option("--seed", o.seed_override, "override the evaluation seed")
          ->check(CLI::PositiveNumber);
    }
  };

  CLI::App* c_solve =
      app.add_subcommand("solve", "solve the policy; write grids, profiles, and fit data");
  add_common(c_solve, true);

  CLI::App* c_estimate =
      app.add_subcommand("estimate", "estimate preferences against the synthetic moments");
  add_common(c_estimate, true);

  CLI::App* c_sens = app.add_subcommand(
      "sens", "derivative and elasticity tables at the estimate");
  add_common(c_sens, true);
  c_sens->add_option("--method", o.method, "approx, robust, brute, or all")
      ->check(CLI::IsMember({"approx", "robust", "brute", "all"}))
      ->capture_default_str();
  c_sens->add_option("--eps", o.eps, "percent bump for --method brute")->expected(1);

  CLI::App* c_brute =
      app.add_subcommand("brute", "re-estimation percent changes for each bump size");
  add_common(c_brute, true);
  c_brute->add_option("--eps", o.eps, "percent bump sizes (comma separated)")
      ->delimiter(',')
      ->capture_default_str();

  CLI::App* c_extrap = app.add_subcommand(
      "extrapolate", "project elasticities over larger bumps of one parameter");
  add_common(c_extrap, true);
  c_extrap->add_option("--param", o.param, "calibrated parameter to bump")
      ->capture_default_str();
  c_extrap->add_option("--percents", o.percents, "bump sizes in percent (comma separated)")
      ->delimiter(',')
      ->capture_default_str();
  c_extrap->add_option("--method", o.method, "all adds brute-force panels; approx skips them")
      ->check(CLI::IsMember({"approx", "robust", "brute", "all"}))
      ->capture_default_str();

  CLI::App* c_decomp =
      app.add_subcommand("decompose", "life-cycle versus buffer savings profiles");
  add_common(c_decomp, true);

  CLI::App* c_external = app.add_subcommand(
      "external", "sensitivity tables from a manifest of externally supplied matrices");
  add_common(c_external, false);
  c_external->add_option("--manifest", o.manifest_path, "manifest file")->required();
  c_external->add_option("--param", o.external_param,
                         "calibrated parameter for an extrapolation table (optional)");
  c_external->add_option("--percents", o.percents, "bump sizes in percent (comma separated)")
      ->delimiter(',')
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (double eps : o.eps)
    if (eps == 0.0) {
      std::cerr << "error: --eps entries must be nonzero\n";
      return 2;
    }

  try {
    if (c_solve->parsed()) return cmd_solve(o);
    if (c_estimate->parsed()) return cmd_estimate(o);
    if (c_sens->parsed()) return cmd_sens(o);
    if (c_brute->parsed()) return cmd_brute(o);
    if (c_extrap->parsed()) return cmd_extrapolate(o);
    if (c_decomp->parsed()) return cmd_decompose(o);
    if (c_external->parsed()) return cmd_external(o);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
