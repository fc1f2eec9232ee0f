#pragma once

#include <calsens/common.hpp>

#include <cmath>
#include <functional>
#include <optional>

namespace calsens {

using VectorFn = std::function<Vector(const Vector&)>;
// moment function g(theta, gamma) -> R^J; deterministic for a fixed seed
using MomentFn = std::function<Vector(const Vector&, const Vector&)>;

struct StepPolicy {
  double rel_step_first = 1e-4;
  double rel_step_second = 1e-3;
  double floor = 1e-8;

  double step_first(double x) const { return std::max(std::max(std::abs(x), 1.0) * rel_step_first, floor); }
  double step_second(double x) const { return std::max(std::max(std::abs(x), 1.0) * rel_step_second, floor); }

  void validate() const {
    require(rel_step_first > 0 && rel_step_second > 0 && floor > 0,
            "step policy: all steps must be strictly positive");
  }
};

namespace detail {

inline std::optional<Vector> try_eval(const VectorFn& f, const Vector& x) {
  try {
    Vector y = f(x);
    if (!y.allFinite()) return std::nullopt;
    return y;
  } catch (...) {
    return std::nullopt;
  }
}

}  // namespace detail

struct JacobianReport {
  Matrix value;
  // coordinates where a one-sided fallback replaced the central difference
  std::vector<int> one_sided;
};

// central-difference Jacobian, coordinates evaluated in ascending order,
// +h before -h; falls back to a one-sided difference only when one side
// fails to evaluate (throw or non-finite), recorded in the report
inline JacobianReport jacobian_with_report(const VectorFn& f, const Vector& x,
                                           const StepPolicy& policy = {}) {
  policy.validate();
  const int m = static_cast<int>(x.size());
  JacobianReport report;
  std::optional<Vector> f0;  // evaluated lazily, only if a fallback is needed
  for (int i = 0; i < m; ++i) {
    const double h = policy.step_first(x[i]);
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    auto fp = detail::try_eval(f, xp);
    auto fm = detail::try_eval(f, xm);
    Vector col;
    if (fp && fm) {
      if (fp->size() != fm->size())
        throw DifferentiationError("jacobian: function output dimension changed at coordinate " +
                                   std::to_string(i));
      col = (*fp - *fm) / (2.0 * h);
    } else if (fp || fm) {
      if (!f0) f0 = detail::try_eval(f, x);
      if (!f0)
        throw DifferentiationError("jacobian: base point evaluation failed while attempting "
                                   "one-sided fallback at coordinate " + std::to_string(i));
      const Vector& side = fp ? *fp : *fm;
      if (side.size() != f0->size())
        throw DifferentiationError("jacobian: function output dimension changed at coordinate " +
                                   std::to_string(i));
      col = fp ? Vector((*fp - *f0) / h) : Vector((*f0 - *fm) / h);
      report.one_sided.push_back(i);
    } else {
      throw DifferentiationError("jacobian: evaluation failed on both sides of coordinate " +
                                 std::to_string(i));
    }
    if (report.value.size() == 0) report.value.resize(col.size(), m);
    if (col.size() != report.value.rows())
      throw DifferentiationError("jacobian: function output dimension changed at coordinate " +
                                 std::to_string(i));
    report.value.col(i) = col;
  }
  if (m == 0) report.value.resize(0, 0);
  return report;
}

inline Matrix jacobian(const VectorFn& f, const Vector& x, const StepPolicy& policy = {}) {
  return jacobian_with_report(f, x, policy).value;
}

namespace detail {

// vec(G') stacking: for G of shape J x K the entry (j,k) lands at row j*K + k,
// the parameter index varying fastest within each moment block
inline Vector vec_transpose(const Matrix& G) {
  const auto J = G.rows(), K = G.cols();
  Vector out(J * K);
  for (Eigen::Index j = 0; j < J; ++j)
    for (Eigen::Index k = 0; k < K; ++k) out[j * K + k] = G(j, k);
  return out;
}

}  // namespace detail

struct StackedSecondDerivatives {
  Matrix c_theta;  // JK x K, column k' = d vec(G')/d theta_k'
  Matrix c_gamma;  // JK x L
};

// nested central differences: outer second-order step on one coordinate,
// inner first-order Jacobian of g with respect to theta; O(h^2)
inline StackedSecondDerivatives stacked_second_derivatives(const MomentFn& g, const Vector& theta,
                                                           const Vector& gamma,
                                                           const StepPolicy& policy = {}) {
  policy.validate();
  const int K = static_cast<int>(theta.size());
  const int L = static_cast<int>(gamma.size());

  auto G_at = [&](const Vector& th, const Vector& ga) {
    return jacobian([&](const Vector& t) { return g(t, ga); }, th, policy);
  };

  StackedSecondDerivatives out;
  for (int k = 0; k < K; ++k) {
    const double h = policy.step_second(theta[k]);
    Vector tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    Vector col = (detail::vec_transpose(G_at(tp, gamma)) - detail::vec_transpose(G_at(tm, gamma))) /
                 (2.0 * h);
    if (out.c_theta.size() == 0) out.c_theta.resize(col.size(), K);
    out.c_theta.col(k) = col;
  }
  for (int l = 0; l < L; ++l) {
    const double h = policy.step_second(gamma[l]);
    Vector gp = gamma, gm = gamma;
    gp[l] += h;
    gm[l] -= h;
    Vector col = (detail::vec_transpose(G_at(theta, gp)) - detail::vec_transpose(G_at(theta, gm))) /
                 (2.0 * h);
    if (out.c_gamma.size() == 0) out.c_gamma.resize(col.size(), L);
    out.c_gamma.col(l) = col;
  }
  if (out.c_theta.size() == 0) out.c_theta.resize(0, K);
  if (out.c_gamma.size() == 0) out.c_gamma.resize(0, L);
  return out;
}

// diagonal weight matrix with 1 / Var(moment_j); Var is the cross-sectional
// population variance of per-unit contributions, divided by n unless disabled
inline Matrix moment_variance_weight(const Matrix& per_unit, bool divide_by_n = true) {
  const auto n = per_unit.rows();
  const auto J = per_unit.cols();
  require(n >= 2, "moment_variance_weight: need at least 2 observations");
  Matrix W = Matrix::Zero(J, J);
  for (Eigen::Index j = 0; j < J; ++j) {
    const double mean = per_unit.col(j).mean();
    double var = (per_unit.col(j).array() - mean).square().sum() / static_cast<double>(n);
    if (divide_by_n) var /= static_cast<double>(n);
    if (!(var > 0.0) || !std::isfinite(var))
      throw std::invalid_argument("moment_variance_weight: degenerate (zero-variance) column " +
                                  std::to_string(j));
    W(j, j) = 1.0 / var;
  }
  return W;
}

}  // namespace calsens
