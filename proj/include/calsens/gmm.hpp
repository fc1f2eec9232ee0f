#pragma once

#include <calsens/nelder_mead.hpp>
#include <calsens/numdiff.hpp>
#include <calsens/sensitivity.hpp>

#include <cmath>
#include <random>

namespace calsens {

struct OptimizerSettings {
  double criterion_tol = 1e-10;
  double simplex_tol = 1e-8;
  int max_iterations = 2000;
  int restarts = 3;            // additional simplex runs from perturbed best points
  double initial_step = 0.25;  // in transformed coordinates
  double restart_step = 0.05;
  double warm_step = 0.02;     // used when re-estimation starts from a previous optimum
};

struct Bounds {
  Vector lower, upper;  // +-inf entries leave that coordinate untransformed
};

struct EstimationProblem {
  MomentFn moment_fn;  // deterministic for a fixed seed (common random numbers)
  Matrix W;
  Bounds theta_bounds;
  Vector theta_init;
  OptimizerSettings settings;
  std::vector<std::string> theta_names, gamma_names, moment_names;

  void validate() const {
    require(static_cast<bool>(moment_fn), "estimation problem: moment function not set");
    const auto K = theta_init.size();
    require(theta_bounds.lower.size() == K && theta_bounds.upper.size() == K,
            "estimation problem: bounds must match theta length");
    for (Eigen::Index k = 0; k < K; ++k)
      require(theta_init[k] > theta_bounds.lower[k] && theta_init[k] < theta_bounds.upper[k],
              "estimation problem: theta_init must be strictly inside bounds");
  }
};

struct EstimateResult {
  Vector theta_hat;
  double criterion_value = 0.0;
  bool converged = false;
  long n_evals = 0;
};

inline double criterion(const EstimationProblem& problem, const Vector& theta,
                        const Vector& gamma) {
  const Vector g = problem.moment_fn(theta, gamma);
  return g.dot(problem.W * g);
}

namespace detail {

// logistic transform keeps bounded coordinates strictly interior without
// projection artifacts; unbounded coordinates pass through unchanged
struct BoundsTransform {
  const Bounds& bounds;

  bool bounded(Eigen::Index k) const {
    return std::isfinite(bounds.lower[k]) && std::isfinite(bounds.upper[k]);
  }
  Vector to_unbounded(const Vector& theta) const {
    Vector x = theta;
    for (Eigen::Index k = 0; k < theta.size(); ++k)
      if (bounded(k)) {
        const double lo = bounds.lower[k], hi = bounds.upper[k];
        double u = (theta[k] - lo) / (hi - lo);
        u = std::min(std::max(u, 1e-12), 1.0 - 1e-12);
        x[k] = std::log(u / (1.0 - u));
      }
    return x;
  }
  Vector to_bounded(const Vector& x) const {
    Vector theta = x;
    for (Eigen::Index k = 0; k < x.size(); ++k)
      if (bounded(k)) {
        const double lo = bounds.lower[k], hi = bounds.upper[k];
        // clamp so saturation of the logistic cannot land exactly on a bound
        double z = 1.0 / (1.0 + std::exp(-x[k]));
        z = std::min(std::max(z, 1e-12), 1.0 - 1e-12);
        theta[k] = lo + (hi - lo) * z;
      }
    return theta;
  }
};

}  // namespace detail

// simplex minimization of g'Wg under the bounds transform, with restarts from
// deterministically perturbed best points and a local-minimum certificate
// against the finite-difference stencil the Jacobians will use
inline EstimateResult estimate_from(const EstimationProblem& problem, const Vector& gamma,
                                    const Vector& start, double initial_step) {
  problem.validate();
  const auto& s = problem.settings;
  detail::BoundsTransform tf{problem.theta_bounds};

  long total_evals = 0;
  auto objective = [&](const Vector& x) {
    ++total_evals;
    return criterion(problem, tf.to_bounded(x), gamma);
  };

  NelderMeadOptions nm_opt;
  nm_opt.f_tol = s.criterion_tol;
  nm_opt.x_tol = s.simplex_tol;
  nm_opt.max_iterations = s.max_iterations;

  Vector best_x = tf.to_unbounded(start);
  double best_f = std::numeric_limits<double>::infinity();
  bool converged = false;

  std::mt19937 rng(12345);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const StepPolicy fd;

  const int certificate_rounds = 2;
  for (int round = 0; round <= certificate_rounds; ++round) {
    for (int run = 0; run <= s.restarts; ++run) {
      Vector x0 = best_x;
      double step = (round == 0 && run == 0) ? initial_step : s.restart_step;
      if (run > 0)
        for (Eigen::Index k = 0; k < x0.size(); ++k) x0[k] += s.restart_step * unit(rng);
      NelderMeadResult r = nelder_mead(objective, x0, step, nm_opt);
      if (r.fx < best_f || !std::isfinite(best_f)) {
        best_f = r.fx;
        best_x = r.x;
      }
      converged = converged || r.converged;
    }

    // certificate: no 4K-stencil neighbor (first- and second-order FD steps)
    // strictly improves on the located minimum
    Vector theta_hat = tf.to_bounded(best_x);
    const double f_hat = criterion(problem, theta_hat, gamma);
    ++total_evals;
    const double slack = 1e-12 * (1.0 + std::abs(f_hat));
    bool certified = true;
    Vector better;
    for (Eigen::Index k = 0; k < theta_hat.size() && certified; ++k) {
      for (double h : {fd.step_first(theta_hat[k]), fd.step_second(theta_hat[k])}) {
        for (double sign : {+1.0, -1.0}) {
          Vector probe = theta_hat;
          probe[k] += sign * h;
          if (probe[k] <= problem.theta_bounds.lower[k] ||
              probe[k] >= problem.theta_bounds.upper[k])
            continue;
          double fp;
          try {
            fp = criterion(problem, probe, gamma);
            ++total_evals;
          } catch (...) {
            continue;
          }
          if (fp < f_hat - slack) {
            certified = false;
            better = probe;
            break;
          }
        }
        if (!certified) break;
      }
    }
    if (certified) {
      EstimateResult out;
      out.theta_hat = theta_hat;
      out.criterion_value = f_hat;
      out.converged = converged;
      out.n_evals = total_evals;
      if (!converged)
        throw EstimationError("estimate: tolerances not attained after all restarts", theta_hat,
                              f_hat);
      return out;
    }
    best_x = tf.to_unbounded(better);
    best_f = std::numeric_limits<double>::infinity();
  }
  Vector theta_hat = tf.to_bounded(best_x);
  throw EstimationError("estimate: local-minimum certificate failed after all restarts",
                        theta_hat, criterion(problem, theta_hat, gamma));
}

inline EstimateResult estimate(const EstimationProblem& problem, const Vector& gamma) {
  return estimate_from(problem, gamma, problem.theta_init, problem.settings.initial_step);
}

inline MomentBundle build_bundle(const EstimationProblem& problem, const Vector& theta_hat,
                                 const Vector& gamma_hat, bool with_second_order,
                                 const StepPolicy& policy = {}) {
  MomentBundle bundle;
  bundle.g = problem.moment_fn(theta_hat, gamma_hat);
  bundle.G = jacobian([&](const Vector& t) { return problem.moment_fn(t, gamma_hat); }, theta_hat,
                      policy);
  bundle.D = jacobian([&](const Vector& g) { return problem.moment_fn(theta_hat, g); }, gamma_hat,
                      policy);
  bundle.W = problem.W;
  bundle.theta_hat = theta_hat;
  bundle.gamma_hat = gamma_hat;
  bundle.theta_names = problem.theta_names;
  bundle.gamma_names = problem.gamma_names;
  bundle.moment_names = problem.moment_names;
  if (with_second_order) {
    StackedSecondDerivatives c = stacked_second_derivatives(problem.moment_fn, theta_hat,
                                                            gamma_hat, policy);
    bundle.c_theta = std::move(c.c_theta);
    bundle.c_gamma = std::move(c.c_gamma);
  }
  bundle.validate();
  return bundle;
}

using QoIFn = std::function<Vector(const Vector&, const Vector&)>;

struct BruteForceResult {
  double eps_percent = 0.0;
  Matrix percent_change;          // K x L,(theta_tilde - theta_hat)/theta_hat * 100
  Matrix theta_tilde;             // K x L, re-estimated parameters per coordinate
  std::vector<char> ok;           // per coordinate; failed re-estimations flagged false
  Matrix qoi_percent_change;      // F x L when a QoI function was supplied, else 0 x L
  Vector h_hat;

  // percent change per percent perturbation: the brute-force elasticity
  Matrix elasticity() const { return percent_change / eps_percent; }
};

inline BruteForceResult brute_force_sensitivity(const EstimationProblem& problem,
                                                const Vector& theta_hat, const Vector& gamma_hat,
                                                double eps_percent,
                                                const std::vector<int>& coordinates = {},
                                                const QoIFn& h_fn = nullptr) {
  require(eps_percent != 0.0, "brute_force_sensitivity: eps must be nonzero");
  const auto K = theta_hat.size();
  const auto L = gamma_hat.size();
  std::vector<int> coords = coordinates;
  if (coords.empty())
    for (int l = 0; l < L; ++l) coords.push_back(l);

  BruteForceResult out;
  out.eps_percent = eps_percent;
  out.percent_change = Matrix::Constant(K, L, std::numeric_limits<double>::quiet_NaN());
  out.theta_tilde = Matrix::Constant(K, L, std::numeric_limits<double>::quiet_NaN());
  out.ok.assign(L, false);
  if (h_fn) {
    out.h_hat = h_fn(theta_hat, gamma_hat);
    out.qoi_percent_change =
        Matrix::Constant(out.h_hat.size(), L, std::numeric_limits<double>::quiet_NaN());
  } else {
    out.qoi_percent_change.resize(0, L);
  }

  for (int l : coords) {
    Vector gamma_tilde = gamma_hat;
    gamma_tilde[l] *= (1.0 + eps_percent / 100.0);
    EstimateResult est;
    try {
      est = estimate_from(problem, gamma_tilde, theta_hat, problem.settings.warm_step);
    } catch (const EstimationError&) {
      continue;  // flagged failed, remaining coordinates proceed
    }
    out.ok[l] = true;
    out.theta_tilde.col(l) = est.theta_hat;
    for (Eigen::Index k = 0; k < K; ++k)
      out.percent_change(k, l) =
          theta_hat[k] != 0.0
              ? (est.theta_hat[k] - theta_hat[k]) / theta_hat[k] * 100.0
              : std::numeric_limits<double>::quiet_NaN();
    if (h_fn) {
      const Vector h_tilde = h_fn(est.theta_hat, gamma_tilde);
      for (Eigen::Index f = 0; f < out.h_hat.size(); ++f)
        out.qoi_percent_change(f, l) =
            out.h_hat[f] != 0.0
                ? (h_tilde[f] - out.h_hat[f]) / out.h_hat[f] * 100.0
                : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

}  // namespace calsens
