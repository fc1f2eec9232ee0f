#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace calsens {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// shortest decimal text that round-trips an IEEE double exactly
inline std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// estimated-parameter and calibrated-parameter vectors are plain Eigen
// vectors; names travel separately in the structs that own them
using ParamVec = Vector;
using CalibVec = Vector;

struct SingularMatrixError : std::runtime_error {
  double condition_number;
  explicit SingularMatrixError(const std::string& what, double cond)
      : std::runtime_error(what + " (condition number " + std::to_string(cond) + ")"),
        condition_number(cond) {}
};

struct DifferentiationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EstimationError : std::runtime_error {
  Vector best_point;
  double best_value;
  EstimationError(const std::string& what, Vector best, double value)
      : std::runtime_error(what), best_point(std::move(best)), best_value(value) {}
};

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace calsens
