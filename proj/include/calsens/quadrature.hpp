#pragma once

#include <calsens/common.hpp>

#include <cmath>

namespace calsens {

struct Quadrature {
  Vector points;
  Vector weights;
};

// Gauss-Hermite nodes/weights (weight e^{-x^2}) via the Golub-Welsch
// symmetric tridiagonal eigenproblem; eigenvalues come out sorted ascending
inline Quadrature gauss_hermite(int n) {
  require(n >= 1, "gauss_hermite: need at least one node");
  Matrix J = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = std::sqrt(i / 2.0);
    J(i, i - 1) = b;
    J(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(J);
  Quadrature q;
  q.points = es.eigenvalues();
  q.weights.resize(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) {
    const double v = es.eigenvectors()(0, i);
    q.weights[i] = sqrt_pi * v * v;
  }
  return q;
}

// nodes/probabilities for E[f(Z)], Z standard normal; probabilities sum to 1
inline Quadrature normal_quadrature(int n) {
  Quadrature q = gauss_hermite(n);
  q.points *= std::sqrt(2.0);
  q.weights /= std::sqrt(M_PI);
  return q;
}

}  // namespace calsens
