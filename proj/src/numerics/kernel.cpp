#include "kdd/numerics/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "kdd/error.hpp"

namespace kdd {

namespace {

void require_bandwidth(double bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw InvalidBandwidth("bandwidth must be positive and finite, got " + std::to_string(bandwidth));
  }
}

}  // namespace

Matrix pairwise_sq_distances(const Matrix& x) {
  const std::size_t n = x.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double diff = x(i, c) - x(j, c);
        s += diff * diff;
      }
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

Matrix pairwise_l1_distances(const Matrix& x) {
  const std::size_t n = x.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) s += std::abs(x(i, c) - x(j, c));
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

KernelMatrix rbf_kernel(const Matrix& x, double bandwidth) {
  require_bandwidth(bandwidth);
  Matrix k = pairwise_sq_distances(x);
  const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
  for (double& v : k.values()) v = std::exp(scale * v);
  return {std::move(k), bandwidth};
}

KernelMatrix laplace_kernel(const Matrix& x, double bandwidth) {
  require_bandwidth(bandwidth);
  Matrix k = pairwise_l1_distances(x);
  for (double& v : k.values()) v = std::exp(-v / bandwidth);
  return {std::move(k), bandwidth};
}

double median_offdiagonal(const Matrix& distances) {
  const std::size_t n = distances.rows();
  if (n < 2) return 0.0;
  std::vector<double> v;
  v.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v.push_back(distances(i, j));
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double median_pairwise_distance(const Matrix& x) {
  Matrix d = pairwise_sq_distances(x);
  for (double& v : d.values()) v = std::sqrt(v);
  return median_offdiagonal(d);
}

}  // namespace kdd
