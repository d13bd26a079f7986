#pragma once

#include <functional>
#include <utility>
#include <vector>

namespace rankstack {

// Constructive two-tower approximation of a scalar target f(c, a) on the
// unit square: monomial feature maps phi(c) = (alpha_m * c^p_m) and
// psi(a) = (a^q_m) fitted so that <phi(c), psi(a)> tracks f on the grid.
struct PolyFitResult {
  int degree = 0;
  std::vector<std::pair<int, int>> exponents;  // (p_m, q_m) per component
  std::vector<double> coefficients;            // alpha_m
  double max_abs_error = 0.0;
  bool regularized = false;  // least-squares system needed a ridge term

  double predict(double c, double a) const;
  std::vector<double> phi(double c) const;
  std::vector<double> psi(double a) const;
};

// Samples f on an (grid_n x grid_n) uniform grid over [0,1]^2 and solves the
// least-squares coefficient problem by Householder QR. A rank-deficient
// system falls back to a ridge-regularized solve, flagged in the result.
PolyFitResult polynomial_two_tower_fit(
    const std::function<double(double, double)>& target, int degree,
    int grid_n = 21);

}  // namespace rankstack
