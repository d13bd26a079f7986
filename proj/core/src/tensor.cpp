#include "rankstack/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rankstack::nn {

namespace {
size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= static_cast<size_t>(d);
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), v_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), v_(std::move(values)) {
  if (shape_numel(shape_) != v_.size())
    throw std::invalid_argument("tensor shape does not match value count");
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::row_vector(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor Tensor::truncated_normal(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.truncated_normal(stddev);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : v_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

void Tensor::fill(double v) { std::fill(v_.begin(), v_.end(), v); }

void Tensor::add_inplace(const Tensor& other) {
  assert(same_shape(other));
  for (size_t i = 0; i < v_.size(); ++i) v_[i] += other.v_[i];
}

void Tensor::scale_inplace(double c) {
  for (double& x : v_) x *= c;
}

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> out(t.numel());
  for (size_t i = 0; i < t.numel(); ++i) out[i] = static_cast<float>(t[i]);
  return out;
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

double dot(const double* a, const double* b, int n) {
  // four accumulators keep the loop pipelined without -ffast-math
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3));
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] += dot(ai, b + static_cast<size_t>(j) * k, k);
  }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < m; ++p) {
    const double* ap = a + static_cast<size_t>(p) * k;
    const double* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace rankstack::nn
