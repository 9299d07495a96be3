// SPDX-License-Identifier: Apache-2.0
// Helpers shared by the unit tests.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "prformer/tensor.hpp"

namespace prformer::test {

inline Tensor randn(Shape shape, std::mt19937_64& rng, double sd = 1.0, bool requires_grad = false) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Random shape of the given rank with extents in [1, max_extent].
inline Shape random_shape(std::size_t rank, std::size_t max_extent, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(1, max_extent);
  Shape s(rank);
  for (auto& e : s) e = d(rng);
  return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline void check_values(const Tensor& t, const std::vector<double>& expected, double tol = 1e-12) {
  REQUIRE(t.numel() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    INFO("index " << i << ": got " << t.data()[i] << ", expected " << expected[i]);
    CHECK(std::fabs(t.data()[i] - expected[i]) <= tol);
  }
}

}  // namespace prformer::test
