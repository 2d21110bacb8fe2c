#pragma once

// Central finite-difference helpers shared by the unit and acceptance suites.

#include "bforge/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace bforge::testing {

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between <grad, v> and the central difference of f along v,
/// over `trials` random unit directions.
inline double directional_check(const std::function<double(const MatX<double>&)>& f, const MatX<double>& at,
                                const MatX<double>& grad, std::uint64_t seed, int trials = 5, double h = 1e-5,
                                const MatX<double>* mask = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    MatX<double> v = MatX<double>::NullaryExpr(at.rows(), at.cols(), [&] { return n(rng); });
    if (mask) v = v.cwiseProduct(*mask);
    v /= v.norm();
    const double numeric = (f(at + h * v) - f(at - h * v)) / (2 * h);
    const double analytic = (grad.array() * v.array()).sum();
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace bforge::testing
