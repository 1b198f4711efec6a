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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fedleak/numkernel.hpp"

using namespace fedleak::numkernel;

namespace {

// Independent series-based normal CDF used as the quantile oracle.
double erf_series(double x) {
  long double sum = 0.0L;
  long double term = static_cast<long double>(x);
  for (int n = 0; n < 80; ++n) {
    sum += term / (2 * n + 1);
    term *= -static_cast<long double>(x) * x / (n + 1);
  }
  return static_cast<double>(sum * 2.0L / std::sqrt(std::acos(-1.0L)));
}

double cdf_oracle(double x) { return 0.5 * (1.0 + erf_series(x / std::sqrt(2.0))); }

double quantile_by_bisection(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf_oracle(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.gaussian();
  return m;
}

Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j)
      for (int k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

double max_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) d = std::max(d, std::fabs(a(i, j) - b(i, j)));
  return d;
}

}  // namespace

TEST_CASE("gemm identity and hand-checked products") {
  Rng rng(11);
  const Matrix a = random_matrix(3, 3, rng);
  CHECK(max_diff(gemm(Matrix::identity(3), a), a) == 0.0);

  Matrix x(2, 2);
  x(0, 0) = 1;
  x(0, 1) = 2;
  x(1, 0) = 3;
  x(1, 1) = 4;
  Matrix y(2, 1);
  y(0, 0) = 0;
  y(1, 0) = 1;
  const Matrix p = gemm(x, y);
  CHECK(p(0, 0) == doctest::Approx(2.0));
  CHECK(p(1, 0) == doctest::Approx(4.0));
}

TEST_CASE("gemm matches the naive triple loop") {
  Rng rng(5);
  const Matrix a = random_matrix(7, 5, rng);
  const Matrix b = random_matrix(5, 3, rng);
  CHECK(max_diff(gemm(a, b), naive_product(a, b)) < 1e-12);

  // Transposed flags against naive on explicit transposes.
  Matrix at(5, 7);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 5; ++j) at(j, i) = a(i, j);
  CHECK(max_diff(gemm(at, b, true, false), naive_product(a, b)) < 1e-12);
  Matrix bt(3, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) bt(j, i) = b(i, j);
  CHECK(max_diff(gemm(a, bt, false, true), naive_product(a, b)) < 1e-12);
}

TEST_CASE("gemm associativity on random triples") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_matrix(4, 6, rng);
    const Matrix b = random_matrix(6, 5, rng);
    const Matrix c = random_matrix(5, 3, rng);
    const Matrix left = gemm(gemm(a, b), c);
    const Matrix right = gemm(a, gemm(b, c));
    double scale = 0.0;
    for (int i = 0; i < left.rows(); ++i)
      for (int j = 0; j < left.cols(); ++j) scale = std::max(scale, std::fabs(left(i, j)));
    CHECK(max_diff(left, right) < 1e-9 * std::max(scale, 1.0));
  }
}

TEST_CASE("gemm rejects mismatched shapes with both shapes in the message") {
  const Matrix a(2, 3), b(4, 2);
  CHECK_THROWS_WITH_AS(gemm(a, b), doctest::Contains("2x3"), std::invalid_argument);
}

TEST_CASE("inverse_normal_cdf at the median and against the series oracle") {
  CHECK(inverse_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::fabs(inverse_normal_cdf(0.8413447461) - 1.0) < 1e-6);

  Rng rng(23);
  for (int i = 0; i < 25; ++i) {
    const double p = 0.001 + 0.998 * rng.uniform();
    CHECK(std::fabs(inverse_normal_cdf(p) - quantile_by_bisection(p)) < 1e-9);
  }
}

TEST_CASE("inverse_normal_cdf symmetry") {
  Rng rng(29);
  for (int i = 0; i < 20; ++i) {
    const double p = 0.01 + 0.98 * rng.uniform();
    CHECK(inverse_normal_cdf(p) ==
          doctest::Approx(-inverse_normal_cdf(1.0 - p)).epsilon(1e-9));
  }
}

TEST_CASE("inverse_normal_cdf strictly increasing on a 1000-point grid") {
  double prev = inverse_normal_cdf(1.0 / 1001);
  for (int i = 2; i <= 1000; ++i) {
    const double cur = inverse_normal_cdf(static_cast<double>(i) / 1001);
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("inverse_normal_cdf rejects the closed interval") {
  CHECK_THROWS_AS(inverse_normal_cdf(0.0), std::invalid_argument);
  CHECK_THROWS_AS(inverse_normal_cdf(1.0), std::invalid_argument);
  CHECK_THROWS_AS(inverse_normal_cdf(-0.25), std::invalid_argument);
}

TEST_CASE("gaussian_vector determinism and shape") {
  Rng a(0), b(0);
  const auto va = gaussian_vector(a, 4);
  const auto vb = gaussian_vector(b, 4);
  CHECK(va == vb);

  Rng c(0);
  const auto single = gaussian_vector(c, 1);
  CHECK(single.size() == 1);
  CHECK(std::isfinite(single[0]));
  CHECK_THROWS_AS(gaussian_vector(c, 0), std::invalid_argument);
}

TEST_CASE("gaussian_vector sample moments") {
  Rng rng(101);
  const auto v = gaussian_vector(rng, 100000);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= (v.size() - 1);
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(std::sqrt(var) - 1.0) < 0.02);
}

TEST_CASE("rng streams with different seeds differ") {
  Rng a(1), b(2);
  bool any_diff = false;
  for (int i = 0; i < 16; ++i) {
    if (a.next_u64() != b.next_u64()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("rng uniform_int stays in range") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) CHECK(rng.uniform_int(7) < 7);
}

TEST_CASE("correlation basics") {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> b{2.0, 4.0, 6.0, 8.0};
  CHECK(correlation(a, b) == doctest::Approx(1.0));
  std::vector<double> affine(4);
  for (int i = 0; i < 4; ++i) affine[i] = -3.0 * a[i] + 11.0;
  CHECK(correlation(a, affine) == doctest::Approx(-1.0));
  const std::vector<double> flat{5.0, 5.0, 5.0, 5.0};
  CHECK(correlation(a, flat) == 0.0);
}

TEST_CASE("singular values of a diagonal and a rank-1 matrix") {
  Matrix d(3, 3);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  d(2, 2) = 2.0;
  const auto sv = singular_values(d);
  CHECK(sv[0] == doctest::Approx(3.0));
  CHECK(sv[1] == doctest::Approx(2.0));
  CHECK(sv[2] == doctest::Approx(1.0));

  Rng rng(7);
  Matrix rank1(6, 4);
  const auto u = gaussian_vector(rng, 6);
  const auto v = gaussian_vector(rng, 4);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) rank1(i, j) = u[i] * v[j];
  CHECK(numerical_rank(rank1) == 1);

  const Matrix full = random_matrix(6, 4, rng);
  CHECK(numerical_rank(full) == 4);
}

TEST_CASE("singular values match the naive Gram spectrum") {
  Rng rng(13);
  const Matrix a = random_matrix(5, 3, rng);
  const auto sv = singular_values(a);
  // Frobenius norm identity: sum of squared singular values.
  double fro2 = 0.0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) fro2 += a(i, j) * a(i, j);
  double sv2 = 0.0;
  for (double s : sv) sv2 += s * s;
  CHECK(sv2 == doctest::Approx(fro2).epsilon(1e-10));
}
