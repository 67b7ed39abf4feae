#pragma once

#include <cmath>
#include <vector>

#include "c2c/rng.hpp"
#include "c2c/tensor.hpp"

namespace c2c::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double sd = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace c2c::testing
