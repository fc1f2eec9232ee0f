#pragma once

#include <calsens/config.hpp>
#include <calsens/gmm.hpp>
#include <calsens/lifecycle.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace calsens::lifecycle {

// ---------------------------------------------------------------------------
// configuration wiring
// ---------------------------------------------------------------------------

inline Calibration calibration_from_config(const Config& cfg) {
  Calibration c;
  c.age_min = static_cast<int>(cfg.get_long("calibration", "age_min", c.age_min));
  c.age_max = static_cast<int>(cfg.get_long("calibration", "age_max", c.age_max));
  c.death_age = static_cast<int>(cfg.get_long("calibration", "death_age", c.death_age));
  c.income_growth = Calibration::default_income_growth(c.age_min, c.age_max);
  c.family_shifter = Calibration::default_family_shifter(c.age_min, c.age_max);
  c.sigma_n = cfg.get_double("calibration", "sigma_n", c.sigma_n);
  c.sigma_u = cfg.get_double("calibration", "sigma_u", c.sigma_u);
  c.p = cfg.get_double("calibration", "p", c.p);
  c.omega26_tilde = cfg.get_double("calibration", "omega26_tilde", c.omega26_tilde);
  c.sigma_omega26 = cfg.get_double("calibration", "sigma_omega26", c.sigma_omega26);
  c.r = cfg.get_double("calibration", "r", c.r);
  c.gamma0 = cfg.get_double("calibration", "gamma0", c.gamma0);
  c.gamma1 = cfg.get_double("calibration", "gamma1", c.gamma1);
  c.p26 = cfg.get_double("calibration", "p26", c.p26);
  c.borrow_limit = cfg.get_double("calibration", "borrow_limit", c.borrow_limit);
  c.n_grid = static_cast<int>(cfg.get_long("calibration", "n_grid", c.n_grid));
  c.grid_max = cfg.get_double("calibration", "grid_max", c.grid_max);
  c.quad_nodes = static_cast<int>(cfg.get_long("calibration", "quad_nodes", c.quad_nodes));
  if (cfg.has("calibration", "income_growth"))
    c.income_growth = cfg.get_list("calibration", "income_growth");
  if (cfg.has("calibration", "family_shifter"))
    c.family_shifter = cfg.get_list("calibration", "family_shifter");
  c.validate();
  return c;
}

inline void calibration_to_config(const Calibration& c, Config& cfg) {
  const std::string s = "calibration";
  cfg.set(s, "age_min", std::to_string(c.age_min));
  cfg.set(s, "age_max", std::to_string(c.age_max));
  cfg.set(s, "death_age", std::to_string(c.death_age));
  cfg.set(s, "sigma_n", format_full(c.sigma_n));
  cfg.set(s, "sigma_u", format_full(c.sigma_u));
  cfg.set(s, "p", format_full(c.p));
  cfg.set(s, "omega26_tilde", format_full(c.omega26_tilde));
  cfg.set(s, "sigma_omega26", format_full(c.sigma_omega26));
  cfg.set(s, "r", format_full(c.r));
  cfg.set(s, "gamma0", format_full(c.gamma0));
  cfg.set(s, "gamma1", format_full(c.gamma1));
  cfg.set(s, "p26", format_full(c.p26));
  cfg.set(s, "borrow_limit", format_full(c.borrow_limit));
  cfg.set(s, "n_grid", std::to_string(c.n_grid));
  cfg.set(s, "grid_max", format_full(c.grid_max));
  cfg.set(s, "quad_nodes", std::to_string(c.quad_nodes));
  const auto join = [](const std::vector<double>& xs) {
    std::string out;
    for (size_t i = 0; i < xs.size(); ++i) {
      if (i) out += ", ";
      out += format_full(xs[i]);
    }
    return out;
  };
  cfg.set(s, "income_growth", join(c.income_growth));
  cfg.set(s, "family_shifter", join(c.family_shifter));
}

inline Preferences preferences_from_config(const Config& cfg) {
  Preferences p;
  p.beta = cfg.get_double("preferences", "beta", p.beta);
  p.rho = cfg.get_double("preferences", "rho", p.rho);
  p.validate();
  return p;
}

struct SimulationSettings {
  int n_sim = 50000;
  uint64_t data_seed = 20240101;  // generates the synthetic "observed" moments
  uint64_t est_seed = 20240202;   // common random numbers for every model evaluation
  double lc_borrow_limit = 5.0;   // certainty-counterpart borrowing allowance
};

inline SimulationSettings simulation_from_config(const Config& cfg) {
  SimulationSettings s;
  s.n_sim = static_cast<int>(cfg.get_long("simulation", "n_sim", s.n_sim));
  s.data_seed =
      static_cast<uint64_t>(cfg.get_long("simulation", "data_seed", static_cast<long>(s.data_seed)));
  s.est_seed =
      static_cast<uint64_t>(cfg.get_long("simulation", "est_seed", static_cast<long>(s.est_seed)));
  s.lc_borrow_limit = cfg.get_double("simulation", "lc_borrow_limit", s.lc_borrow_limit);
  require(s.n_sim >= 1, "simulation: n_sim must be positive");
  return s;
}

struct EstimationSettings {
  Vector theta_init;  // (beta, rho) starting point
  Bounds bounds;
  OptimizerSettings optimizer;

  EstimationSettings() {
    theta_init = Vector(2);
    theta_init << 0.90, 1.5;
    bounds.lower = Vector(2);
    bounds.upper = Vector(2);
    bounds.lower << 0.8, 0.2;
    bounds.upper << 1.0, 10.0;
  }
};

inline EstimationSettings estimation_from_config(const Config& cfg) {
  EstimationSettings e;
  e.theta_init[0] = cfg.get_double("estimation", "beta_init", e.theta_init[0]);
  e.theta_init[1] = cfg.get_double("estimation", "rho_init", e.theta_init[1]);
  e.bounds.lower[0] = cfg.get_double("estimation", "beta_min", e.bounds.lower[0]);
  e.bounds.upper[0] = cfg.get_double("estimation", "beta_max", e.bounds.upper[0]);
  e.bounds.lower[1] = cfg.get_double("estimation", "rho_min", e.bounds.lower[1]);
  e.bounds.upper[1] = cfg.get_double("estimation", "rho_max", e.bounds.upper[1]);
  e.optimizer.criterion_tol =
      cfg.get_double("estimation", "criterion_tol", e.optimizer.criterion_tol);
  e.optimizer.simplex_tol = cfg.get_double("estimation", "simplex_tol", e.optimizer.simplex_tol);
  e.optimizer.max_iterations = static_cast<int>(
      cfg.get_long("estimation", "max_iterations", e.optimizer.max_iterations));
  e.optimizer.restarts =
      static_cast<int>(cfg.get_long("estimation", "restarts", e.optimizer.restarts));
  e.optimizer.initial_step = cfg.get_double("estimation", "initial_step", e.optimizer.initial_step);
  e.optimizer.restart_step = cfg.get_double("estimation", "restart_step", e.optimizer.restart_step);
  e.optimizer.warm_step = cfg.get_double("estimation", "warm_step", e.optimizer.warm_step);
  return e;
}

// ---------------------------------------------------------------------------
// self-estimation fixture: synthetic "observed" moments are generated by the
// model itself at known preferences with one seed, then the model is
// estimated against them with an independent seed, so the data-generating
// truth is known exactly
// ---------------------------------------------------------------------------

struct SelfEstimation {
  Calibration calibration;  // baseline calibrated parameters (the gamma-hat point)
  Preferences truth;        // data-generating preferences
  SimulationSettings sim;
  Vector data_moments;      // log mean consumption by age from the data panel
  Matrix W;                 // delta-method diagonal weighting from the data panel
  std::shared_ptr<const ShockPanel> est_shocks;  // draws shared by all evaluations
  EstimationProblem problem;
  Vector gamma_hat;
  PipelineFn pipeline;      // (preferences, calibration) -> (h30, h60)
  QoIFn qoi;                // (theta, gamma) -> (h30, h60), for re-estimation runs
};

inline std::vector<std::string> consumption_moment_names(const Calibration& calib) {
  std::vector<std::string> names;
  for (int age = calib.age_min; age <= calib.age_max; ++age)
    names.push_back("logC" + std::to_string(age));
  return names;
}

inline SelfEstimation make_self_estimation(const Calibration& calib, const Preferences& truth,
                                           const SimulationSettings& sim,
                                           const EstimationSettings& est = {}) {
  calib.validate();
  truth.validate();

  const Policy truth_policy = solve_egm(truth, calib);
  const Panel data_panel = simulate(truth_policy, calib, sim.n_sim, sim.data_seed);

  SelfEstimation fx;
  fx.calibration = calib;
  fx.truth = truth;
  fx.sim = sim;
  fx.data_moments = consumption_moments(data_panel);
  fx.W = moment_variance_weight(moment_contributions(data_panel), true);
  fx.est_shocks = std::make_shared<const ShockPanel>(
      ShockPanel::draw(sim.n_sim, calib.n_ages(), sim.est_seed));
  fx.gamma_hat = calibrated_vector(calib);

  const Calibration base = calib;
  const auto shocks = fx.est_shocks;
  const Vector data_moments = fx.data_moments;
  fx.problem.moment_fn = [base, shocks, data_moments](const Vector& theta, const Vector& gamma) {
    const Preferences pref = with_preferences(theta);
    pref.validate();
    const Calibration c = with_calibrated(base, gamma);
    const Policy policy = solve_egm(pref, c);
    const AgeProfiles profiles = simulate_profiles(policy, c, *shocks);
    return Vector(consumption_moments(profiles) - data_moments);
  };
  fx.problem.W = fx.W;
  fx.problem.theta_bounds = est.bounds;
  fx.problem.theta_init = est.theta_init;
  fx.problem.settings = est.optimizer;
  fx.problem.theta_names = preference_names();
  fx.problem.gamma_names = calibrated_names();
  fx.problem.moment_names = consumption_moment_names(calib);

  fx.pipeline = decomposition_pipeline(fx.est_shocks, sim.lc_borrow_limit);
  const PipelineFn pipe = fx.pipeline;
  fx.qoi = [pipe, base](const Vector& theta, const Vector& gamma) {
    return pipe(with_preferences(theta), with_calibrated(base, gamma));
  };
  return fx;
}

inline SelfEstimation self_estimation_from_config(const Config& cfg) {
  return make_self_estimation(calibration_from_config(cfg), preferences_from_config(cfg),
                              simulation_from_config(cfg), estimation_from_config(cfg));
}

}  // namespace calsens::lifecycle
