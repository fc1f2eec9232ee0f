#pragma once

#include <calsens/common.hpp>

#include <algorithm>
#include <functional>
#include <numeric>

namespace calsens {

struct NelderMeadOptions {
  double f_tol = 1e-10;    // spread of criterion values across the simplex
  double x_tol = 1e-8;     // simplex diameter
  int max_iterations = 2000;
};

struct NelderMeadResult {
  Vector x;
  double fx = 0.0;
  bool converged = false;
  long n_evals = 0;
  int n_iterations = 0;
};

// classic reflect/expand/contract/shrink simplex with deterministic
// tie-breaking (stable ordering); tracks the best point ever evaluated
inline NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f,
                                    const Vector& x0, double initial_step,
                                    const NelderMeadOptions& opt = {}) {
  const int n = static_cast<int>(x0.size());
  require(n >= 1, "nelder_mead: empty start point");
  require(initial_step > 0, "nelder_mead: initial step must be positive");

  NelderMeadResult res;
  auto eval = [&](const Vector& x) {
    ++res.n_evals;
    double v;
    try {
      v = f(x);
    } catch (...) {
      v = std::numeric_limits<double>::infinity();
    }
    if (std::isnan(v)) v = std::numeric_limits<double>::infinity();
    if (v < res.fx || res.n_evals == 1) {
      res.fx = v;
      res.x = x;
    }
    return v;
  };

  std::vector<Vector> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int i = 1; i <= n; ++i) xs[i][i - 1] += initial_step;
  for (int i = 0; i <= n; ++i) fs[i] = eval(xs[i]);

  std::vector<int> order(n + 1);
  std::iota(order.begin(), order.end(), 0);
  auto sort_simplex = [&] {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
  };

  constexpr double alpha = 1.0, gamma = 2.0, beta = 0.5, delta = 0.5;
  for (res.n_iterations = 0; res.n_iterations < opt.max_iterations; ++res.n_iterations) {
    sort_simplex();
    const int best = order[0], worst = order[n], second_worst = order[n > 0 ? n - 1 : 0];

    double diam = 0.0;
    for (int i = 0; i <= n; ++i)
      diam = std::max(diam, (xs[i] - xs[best]).cwiseAbs().maxCoeff());
    const double spread = fs[worst] - fs[best];
    if (spread <= opt.f_tol * (1.0 + std::abs(fs[best])) &&
        diam <= opt.x_tol * (1.0 + xs[best].cwiseAbs().maxCoeff())) {
      res.converged = true;
      break;
    }

    Vector centroid = Vector::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += xs[i];
    centroid /= n;

    Vector xr = centroid + alpha * (centroid - xs[worst]);
    const double fr = eval(xr);
    if (fr < fs[best]) {
      Vector xe = centroid + gamma * (xr - centroid);
      const double fe = eval(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second_worst]) {
      xs[worst] = xr;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      Vector xc = outside ? Vector(centroid + beta * (xr - centroid))
                          : Vector(centroid + beta * (xs[worst] - centroid));
      const double fc = eval(xc);
      if (fc < std::min(fr, fs[worst])) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          xs[i] = xs[best] + delta * (xs[i] - xs[best]);
          fs[i] = eval(xs[i]);
        }
      }
    }
  }
  return res;
}

}  // namespace calsens
