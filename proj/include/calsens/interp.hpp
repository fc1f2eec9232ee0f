#pragma once

#include <calsens/common.hpp>

#include <algorithm>
#include <cmath>

namespace calsens {

// piecewise-linear interpolant over a strictly ascending grid; queries above
// the grid extrapolate linearly from the last segment, queries below from the
// first segment
struct LinearInterp {
  Vector x, y;

  double operator()(double q) const {
    const auto n = x.size();
    if (n == 1) return y[0];
    Eigen::Index i;
    if (q <= x[0]) {
      i = 0;
    } else if (q >= x[n - 1]) {
      i = n - 2;
    } else {
      const double* begin = x.data();
      i = std::upper_bound(begin, begin + n, q) - begin - 1;
    }
    const double t = (q - x[i]) / (x[i + 1] - x[i]);
    return y[i] + t * (y[i + 1] - y[i]);
  }
};

// double-exponentially spaced grid on [lo, hi]: points cluster toward lo,
// endpoints hit exactly
inline Vector dexp_grid(double lo, double hi, int n) {
  require(n >= 2, "dexp_grid: need at least two points");
  require(hi > lo, "dexp_grid: hi must exceed lo");
  Vector out(n);
  const auto stretch = [](double t) {
    return std::exp(std::exp(std::exp(t) - 1.0) - 1.0) - 1.0;
  };
  const double top = stretch(1.0);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    out[i] = lo + (hi - lo) * stretch(t) / top;
  }
  return out;
}

}  // namespace calsens
