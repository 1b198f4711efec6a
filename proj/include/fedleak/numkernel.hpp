// Copyright 2026 The fedleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FEDLEAK_NUMKERNEL_HPP_
#define FEDLEAK_NUMKERNEL_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedleak::numkernel {

// Dense row-major matrix of 64-bit floats. All simulator tensors use this
// type; vectors are stored as 1xN matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0);

  static Matrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::int64_t size() const { return static_cast<std::int64_t>(rows_) * cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::span<double> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  void set_zero() { fill(0.0); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// C = op(A) * op(B) where op is optional transposition. Inner dimensions
// must agree after transposition; mismatches throw with both shapes.
Matrix gemm(const Matrix& a, const Matrix& b, bool transpose_a = false,
            bool transpose_b = false);

// In-place y += alpha * x over the raw buffers (shapes must match).
void axpy(double alpha, const Matrix& x, Matrix& y);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
double max_abs(const Matrix& m);
double frobenius_norm(const Matrix& m);

// Pearson correlation: cosine similarity of the mean-centered vectors.
// Returns 0 when either input is (numerically) constant.
double correlation(std::span<const double> a, std::span<const double> b);

// Singular values of m in descending order, via one-sided Jacobi rotations.
std::vector<double> singular_values(const Matrix& m);

// Number of singular values above max_sv * max(rows, cols) * tol.
int numerical_rank(const Matrix& m, double tol = 1e-10);

// Standard normal CDF.
double normal_cdf(double x);

// Quantile of the standard normal: returns x with normal_cdf(x) == p.
// Acklam's rational approximation with one Halley refinement; absolute
// error below 1e-9 on (0, 1). p outside the open interval throws.
double inverse_normal_cdf(double p);

// Deterministic seeded generator (xoshiro256++ seeded through splitmix64).
// Identical seeds give identical streams on every platform; the standard
// library distributions are avoided because they are not pinned down.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  // Standard normal via Box-Muller (second value cached).
  double gaussian();
  // Laplace(0, scale) via inverse CDF.
  double laplace(double scale);

  std::uint64_t seed() const { return seed_; }
  // Independent generator for a tagged sub-stream of this seed.
  Rng derive(std::uint64_t tag) const;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t state_[4] = {};
  double cached_gaussian_ = 0.0;
  bool has_cached_gaussian_ = false;
};

// Stable mixing of a seed with stream tags, for per-user / per-cell rngs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

// i.i.d. standard normal vector of length dim (dim >= 1).
std::vector<double> gaussian_vector(Rng& rng, int dim);

}  // namespace fedleak::numkernel

#endif  // FEDLEAK_NUMKERNEL_HPP_
