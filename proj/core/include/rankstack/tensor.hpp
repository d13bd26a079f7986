#pragma once

#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

#include "rankstack/rng.hpp"

namespace rankstack::nn {

// Dense row-major tensor of doubles. Training and tests run in 64-bit
// precision; serving paths may down-convert to 32-bit copies.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row_vector(std::vector<double> v);
  // truncated normal, std `stddev`, resampled beyond 2 sigma
  static Tensor truncated_normal(std::vector<int> shape, double stddev, Rng& rng);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  size_t numel() const { return v_.size(); }

  // 2-D accessors (rank 1 tensors behave as a single row)
  int rows() const { return rank() == 1 ? 1 : shape_[0]; }
  int cols() const { return rank() == 1 ? shape_[0] : shape_[1]; }

  double& at(int r, int c) { return v_[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return v_[static_cast<size_t>(r) * cols() + c]; }
  double& operator[](size_t i) { return v_[i]; }
  double operator[](size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double* row_ptr(int r) { return v_.data() + static_cast<size_t>(r) * cols(); }
  const double* row_ptr(int r) const {
    return v_.data() + static_cast<size_t>(r) * cols();
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  void fill(double v);
  void add_inplace(const Tensor& other);  // same shape
  void scale_inplace(double c);

private:
  std::vector<int> shape_;
  std::vector<double> v_;
};

// y = x in f32 precision (serving copies)
std::vector<float> to_f32(const Tensor& t);

// --- raw kernels, accumulate into C ----------------------------------------
// C[M x N] += A[M x K] * B[K x N]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n);
// C[M x N] += A[M x K] * B[N x K]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n);
// C[K x N] += A[M x K]^T * B[M x N]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n);

double dot(const double* a, const double* b, int n);

}  // namespace rankstack::nn
