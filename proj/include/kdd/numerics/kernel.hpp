#pragma once

#include "kdd/numerics/matrix.hpp"

namespace kdd {

struct KernelMatrix {
  Matrix base;  // symmetric, unit diagonal, entries in (0, 1]
  double bandwidth = 1.0;
};

// exp(-||x_i - x_j||^2 / (2 bandwidth^2)).
KernelMatrix rbf_kernel(const Matrix& x, double bandwidth);
// exp(-||x_i - x_j||_1 / bandwidth).
KernelMatrix laplace_kernel(const Matrix& x, double bandwidth);

Matrix pairwise_sq_distances(const Matrix& x);
Matrix pairwise_l1_distances(const Matrix& x);

// Median of the off-diagonal entries (i < j) of a distance matrix; 0 when the
// set has fewer than two rows.
double median_offdiagonal(const Matrix& distances);
// Median pairwise Euclidean distance between the rows of x.
double median_pairwise_distance(const Matrix& x);

}  // namespace kdd
