#pragma once

#include <calsens/common.hpp>

#include <cmath>
#include <optional>

namespace calsens {

inline constexpr double kConditionLimit = 1e12;

enum class Method { approx, robust, brute };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::approx: return "approx";
    case Method::robust: return "robust";
    case Method::brute: return "brute";
  }
  return "?";
}

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// matrices of the estimation problem evaluated at (theta_hat, gamma_hat)
struct MomentBundle {
  Vector g;                       // J
  Matrix G;                       // J x K, d g / d theta'
  Matrix D;                       // J x L, d g / d gamma'
  Matrix W;                       // J x J, symmetric positive definite
  std::optional<Matrix> c_theta;  // JK x K, d vec(G')/d theta'
  std::optional<Matrix> c_gamma;  // JK x L
  std::vector<std::string> theta_names, gamma_names, moment_names;
  Vector theta_hat;
  Vector gamma_hat;

  Eigen::Index n_moments() const { return g.size(); }
  Eigen::Index n_theta() const { return G.cols(); }
  Eigen::Index n_gamma() const { return D.cols(); }

  void validate() const {
    const auto J = g.size(), K = G.cols(), L = D.cols();
    require(G.rows() == J, "bundle: G row count must match g");
    require(D.rows() == J, "bundle: D row count must match g");
    require(W.rows() == J && W.cols() == J, "bundle: W must be J x J");
    require(theta_hat.size() == K, "bundle: theta_hat length must match G columns");
    require(gamma_hat.size() == L, "bundle: gamma_hat length must match D columns");
    require(c_theta.has_value() == c_gamma.has_value(),
            "bundle: second-order matrices must be present together or absent together");
    if (c_theta) {
      require(c_theta->rows() == J * K && c_theta->cols() == K, "bundle: c_theta must be JK x K");
      require(c_gamma->rows() == J * K && c_gamma->cols() == L, "bundle: c_gamma must be JK x L");
    }
    if (!theta_names.empty())
      require(static_cast<Eigen::Index>(theta_names.size()) == K, "bundle: theta name count");
    if (!gamma_names.empty())
      require(static_cast<Eigen::Index>(gamma_names.size()) == L, "bundle: gamma name count");
    if (!moment_names.empty())
      require(static_cast<Eigen::Index>(moment_names.size()) == J, "bundle: moment name count");
    const double scale = std::max(1.0, W.cwiseAbs().maxCoeff());
    require((W - W.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
            "bundle: W is not symmetric within tolerance");
  }
};

struct ElasticityMatrix {
  Matrix value;    // zero where undefined
  BoolGrid defined;
};

struct SensitivityResult {
  Matrix S;  // K x L
  ElasticityMatrix E;
  Method method = Method::approx;
  double condition_number = 0.0;  // of the matrix that was inverted
};

namespace detail {

inline double condition_number(const Matrix& M) {
  Eigen::JacobiSVD<Matrix> svd(M);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

// refuse rather than pseudo-invert: a silent pinv would mask non-identification
inline Matrix solve_refusing(const Matrix& M, const Matrix& rhs, double cond_limit,
                             const char* what, double* cond_out) {
  const double cond = condition_number(M);
  if (cond_out) *cond_out = cond;
  if (!std::isfinite(cond) || cond > cond_limit)
    throw SingularMatrixError(std::string(what) + ": matrix is singular or near-singular", cond);
  return M.partialPivLu().solve(rhs);
}

// (w' (x) I_K) * C without materializing the JK-wide Kronecker factor:
// out(a, b) = sum_j w_j * C(j*K + a, b), summed in ascending j
inline Matrix kron_row_contract(const Vector& w, const Matrix& C, Eigen::Index K) {
  const Eigen::Index J = w.size();
  const Eigen::Index F = C.cols();
  require(C.rows() == J * K, "kron contraction: row count must be J*K");
  Matrix out = Matrix::Zero(K, F);
  for (Eigen::Index j = 0; j < J; ++j)
    for (Eigen::Index a = 0; a < K; ++a)
      for (Eigen::Index b = 0; b < F; ++b) out(a, b) += w[j] * C(j * K + a, b);
  return out;
}

}  // namespace detail

inline Matrix lambda_matrix(const Matrix& G, const Matrix& W,
                            double cond_limit = kConditionLimit) {
  const Matrix GW = G.transpose() * W;
  const Matrix GWG = GW * G;
  return -detail::solve_refusing(GWG, GW, cond_limit, "lambda_matrix", nullptr);
}

inline ElasticityMatrix elasticities(const Matrix& S, const Vector& theta_hat,
                                     const Vector& gamma_hat) {
  const auto K = S.rows(), L = S.cols();
  require(theta_hat.size() == K && gamma_hat.size() == L, "elasticities: dimension mismatch");
  ElasticityMatrix E;
  E.value = Matrix::Zero(K, L);
  E.defined = BoolGrid::Constant(K, L, false);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index l = 0; l < L; ++l)
      if (theta_hat[k] != 0.0 && gamma_hat[l] != 0.0) {
        E.value(k, l) = S(k, l) * gamma_hat[l] / theta_hat[k];
        E.defined(k, l) = true;
      }
  return E;
}

inline SensitivityResult sensitivity_approx(const MomentBundle& bundle,
                                            double cond_limit = kConditionLimit) {
  bundle.validate();
  const Matrix GW = bundle.G.transpose() * bundle.W;
  const Matrix GWG = GW * bundle.G;
  const Matrix GWD = GW * bundle.D;
  SensitivityResult out;
  out.method = Method::approx;
  out.S = -detail::solve_refusing(GWG, GWD, cond_limit, "sensitivity_approx",
                                  &out.condition_number);
  out.E = elasticities(out.S, bundle.theta_hat, bundle.gamma_hat);
  return out;
}

inline SensitivityResult sensitivity_robust(const MomentBundle& bundle,
                                            double cond_limit = kConditionLimit) {
  bundle.validate();
  require(bundle.c_theta.has_value(), "sensitivity_robust: bundle lacks second-order matrices");
  const auto K = bundle.n_theta();
  const Matrix GW = bundle.G.transpose() * bundle.W;
  const Matrix GWG = GW * bundle.G;
  const Matrix GWD = GW * bundle.D;
  const Vector Wg = bundle.W * bundle.g;  // (g'W)' with W symmetric
  const Matrix bracket = GWG + detail::kron_row_contract(Wg, *bundle.c_theta, K);
  const Matrix rhs = GWD + detail::kron_row_contract(Wg, *bundle.c_gamma, K);
  SensitivityResult out;
  out.method = Method::robust;
  out.S = -detail::solve_refusing(bracket, rhs, cond_limit, "sensitivity_robust",
                                  &out.condition_number);
  out.E = elasticities(out.S, bundle.theta_hat, bundle.gamma_hat);
  return out;
}

// Jacobians of a quantity of interest h(theta, gamma) at the estimate
struct QoIJacobians {
  Matrix A;      // d h / d gamma'  (F x L)
  Matrix B;      // d h / d theta'  (F x K)
  Vector h_hat;  // h at the estimate
  std::vector<std::string> h_names;

  void validate() const {
    require(A.rows() == B.rows(), "qoi jacobians: A and B row counts differ");
    require(h_hat.size() == A.rows(), "qoi jacobians: h_hat length must match A rows");
    if (!h_names.empty())
      require(static_cast<Eigen::Index>(h_names.size()) == A.rows(),
              "qoi jacobians: h name count");
  }
};

inline Matrix qoi_sensitivity(const Matrix& A, const Matrix& B, const Matrix& S) {
  require(B.cols() == S.rows(), "qoi_sensitivity: B columns must match S rows");
  require(A.rows() == B.rows(), "qoi_sensitivity: A and B row counts differ");
  require(A.cols() == S.cols(), "qoi_sensitivity: A columns must match S columns");
  return A + B * S;
}

// total response of the quantity of interest: direct effect plus the induced
// effect through the estimated parameters, H = A + B S
inline Matrix qoi_sensitivity(const QoIJacobians& q, const SensitivityResult& sens) {
  return qoi_sensitivity(q.A, q.B, sens.S);
}

inline Vector aggregate_delta(const Matrix& S, const Vector& delta_gamma) {
  require(delta_gamma.size() == S.cols(), "aggregate_delta: dimension mismatch");
  return S * delta_gamma;
}

struct ExtrapolationTable {
  Matrix value;  // rows follow the elasticity column, cols follow percents
  BoolGrid defined;
  std::vector<double> percents;
};

inline ExtrapolationTable extrapolate_percent(const Vector& e_column,
                                              const std::vector<double>& percents) {
  ExtrapolationTable out;
  out.percents = percents;
  const auto K = e_column.size();
  const auto P = static_cast<Eigen::Index>(percents.size());
  out.value = Matrix::Zero(K, P);
  out.defined = BoolGrid::Constant(K, P, true);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index p = 0; p < P; ++p) out.value(k, p) = e_column[k] * percents[p];
  return out;
}

inline ExtrapolationTable extrapolate_percent(const ElasticityMatrix& E, Eigen::Index gamma_index,
                                              const std::vector<double>& percents) {
  require(gamma_index >= 0 && gamma_index < E.value.cols(),
          "extrapolate_percent: gamma index out of range");
  ExtrapolationTable out = extrapolate_percent(Vector(E.value.col(gamma_index)), percents);
  for (Eigen::Index k = 0; k < E.value.rows(); ++k)
    if (!E.defined(k, gamma_index)) {
      out.defined.row(k).setConstant(false);
      out.value.row(k).setZero();
    }
  return out;
}

// same arithmetic as the approximation, applied to a bundle whose D holds the
// derivatives with respect to candidate parameters at their null value
struct GeneralizationSensitivity {
  SensitivityResult sens;
  Vector one_step;  // theta_hat + S * delta
};

inline GeneralizationSensitivity generalization_sensitivity(const MomentBundle& bundle_at_null,
                                                            const Vector& delta_gamma2,
                                                            double cond_limit = kConditionLimit) {
  GeneralizationSensitivity out;
  out.sens = sensitivity_approx(bundle_at_null, cond_limit);
  out.one_step = bundle_at_null.theta_hat + aggregate_delta(out.sens.S, delta_gamma2);
  return out;
}

}  // namespace calsens
