#include "rankstack/polyfit.hpp"

#include <cmath>
#include <stdexcept>

namespace rankstack {

namespace {

// In-place Householder QR solve of min ||A x - b||; A is m x n, m >= n.
// Returns false when a diagonal collapses (rank deficiency).
bool qr_solve(std::vector<double>& a, std::vector<double>& b, int m, int n,
              std::vector<double>& x) {
  auto A = [&](int i, int j) -> double& {
    return a[static_cast<size_t>(i) * n + j];
  };
  for (int k = 0; k < n; ++k) {
    double norm = 0;
    for (int i = k; i < m; ++i) norm += A(i, k) * A(i, k);
    norm = std::sqrt(norm);
    if (norm < 1e-13) return false;
    if (A(k, k) > 0) norm = -norm;
    double vk = A(k, k) - norm;
    std::vector<double> v(static_cast<size_t>(m - k));
    v[0] = vk;
    for (int i = k + 1; i < m; ++i) v[static_cast<size_t>(i - k)] = A(i, k);
    double vtv = 0;
    for (double e : v) vtv += e * e;
    if (vtv < 1e-300) return false;
    A(k, k) = norm;
    for (int i = k + 1; i < m; ++i) A(i, k) = 0;
    for (int j = k + 1; j < n; ++j) {
      double dot = 0;
      for (int i = k; i < m; ++i)
        dot += v[static_cast<size_t>(i - k)] * A(i, j);
      double f = 2.0 * dot / vtv;
      for (int i = k; i < m; ++i) A(i, j) -= f * v[static_cast<size_t>(i - k)];
    }
    double dotb = 0;
    for (int i = k; i < m; ++i)
      dotb += v[static_cast<size_t>(i - k)] * b[static_cast<size_t>(i)];
    double f = 2.0 * dotb / vtv;
    for (int i = k; i < m; ++i)
      b[static_cast<size_t>(i)] -= f * v[static_cast<size_t>(i - k)];
  }
  x.assign(static_cast<size_t>(n), 0.0);
  for (int i = n - 1; i >= 0; --i) {
    double s = b[static_cast<size_t>(i)];
    for (int j = i + 1; j < n; ++j) s -= A(i, j) * x[static_cast<size_t>(j)];
    if (std::abs(A(i, i)) < 1e-13) return false;
    x[static_cast<size_t>(i)] = s / A(i, i);
  }
  return true;
}

}  // namespace

std::vector<double> PolyFitResult::phi(double c) const {
  std::vector<double> out(coefficients.size());
  for (size_t m = 0; m < coefficients.size(); ++m)
    out[m] = coefficients[m] * std::pow(c, exponents[m].first);
  return out;
}

std::vector<double> PolyFitResult::psi(double a) const {
  std::vector<double> out(coefficients.size());
  for (size_t m = 0; m < coefficients.size(); ++m)
    out[m] = std::pow(a, exponents[m].second);
  return out;
}

double PolyFitResult::predict(double c, double a) const {
  auto pc = phi(c);
  auto pa = psi(a);
  double s = 0;
  for (size_t m = 0; m < pc.size(); ++m) s += pc[m] * pa[m];
  return s;
}

PolyFitResult polynomial_two_tower_fit(
    const std::function<double(double, double)>& target, int degree,
    int grid_n) {
  if (degree < 0) throw std::invalid_argument("degree must be non-negative");
  if (grid_n < 2) throw std::invalid_argument("grid must have at least 2 points");

  PolyFitResult result;
  result.degree = degree;
  for (int p = 0; p <= degree; ++p)
    for (int q = 0; q <= degree; ++q) result.exponents.emplace_back(p, q);
  int n_terms = static_cast<int>(result.exponents.size());
  int m_rows = grid_n * grid_n;

  std::vector<double> grid(static_cast<size_t>(grid_n));
  for (int i = 0; i < grid_n; ++i)
    grid[static_cast<size_t>(i)] = static_cast<double>(i) / (grid_n - 1);

  std::vector<double> a(static_cast<size_t>(m_rows) * n_terms);
  std::vector<double> b(static_cast<size_t>(m_rows));
  int row = 0;
  for (int i = 0; i < grid_n; ++i) {
    for (int j = 0; j < grid_n; ++j, ++row) {
      double c = grid[static_cast<size_t>(i)], av = grid[static_cast<size_t>(j)];
      for (int t = 0; t < n_terms; ++t) {
        auto [p, q] = result.exponents[static_cast<size_t>(t)];
        a[static_cast<size_t>(row) * n_terms + t] =
            std::pow(c, p) * std::pow(av, q);
      }
      b[static_cast<size_t>(row)] = target(c, av);
    }
  }

  std::vector<double> a_copy = a, b_copy = b;
  if (!qr_solve(a_copy, b_copy, m_rows, n_terms, result.coefficients)) {
    // rank-deficient design: ridge-regularized normal equations
    result.regularized = true;
    int aug_rows = m_rows + n_terms;
    std::vector<double> a2(static_cast<size_t>(aug_rows) * n_terms, 0.0);
    std::vector<double> b2(static_cast<size_t>(aug_rows), 0.0);
    std::copy(a.begin(), a.end(), a2.begin());
    std::copy(b.begin(), b.end(), b2.begin());
    double lambda = 1e-8;
    for (int t = 0; t < n_terms; ++t)
      a2[static_cast<size_t>(m_rows + t) * n_terms + t] = std::sqrt(lambda);
    if (!qr_solve(a2, b2, aug_rows, n_terms, result.coefficients))
      throw std::runtime_error("polynomial fit failed even with ridge term");
  }

  double max_err = 0;
  for (int i = 0; i < grid_n; ++i)
    for (int j = 0; j < grid_n; ++j) {
      double c = grid[static_cast<size_t>(i)], av = grid[static_cast<size_t>(j)];
      max_err = std::max(max_err,
                         std::abs(target(c, av) - result.predict(c, av)));
    }
  result.max_abs_error = max_err;
  return result;
}

}  // namespace rankstack
