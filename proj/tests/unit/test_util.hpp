#pragma once

#include <random>

#include "segkit/tensor.hpp"

namespace segkit::testing {

template <typename T = float>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.raw()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
Tensor<T> one_hot_random(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, s.c - 1);
  Tensor<T> t(s);
  for (std::size_t p = 0; p < s.pixels(); ++p) t[p * s.c + d(rng)] = T(1);
  return t;
}

}  // namespace segkit::testing
