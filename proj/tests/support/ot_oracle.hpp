#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "chaosemu/diff/tensor.hpp"

namespace testsupport {

/// Exact transport cost between two equal-size uniform point clouds with cost
/// |x - y|^2 / 2, by enumerating every permutation (vertices of the Birkhoff polytope).
inline double brute_force_ot(const chaosemu::diff::Tensor& X, const chaosemu::diff::Tensor& Y) {
  const std::size_t n = X.dim(0), k = X.dim(1);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double diff = X[i * k + j] - Y[perm[i] * k + j];
        c += 0.5 * diff * diff;
      }
    best = std::min(best, c / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double median_cost(const chaosemu::diff::Tensor& X, const chaosemu::diff::Tensor& Y) {
  std::vector<double> c;
  const std::size_t k = X.dim(1);
  for (std::size_t i = 0; i < X.dim(0); ++i)
    for (std::size_t j = 0; j < Y.dim(0); ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < k; ++q) s += 0.5 * (X[i * k + q] - Y[j * k + q]) * (X[i * k + q] - Y[j * k + q]);
      c.push_back(s);
    }
  std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(c.size() / 2), c.end());
  return c[c.size() / 2];
}

}  // namespace testsupport
