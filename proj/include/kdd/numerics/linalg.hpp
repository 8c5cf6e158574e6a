#pragma once

#include <vector>

#include "kdd/numerics/matrix.hpp"

namespace kdd {

// Thin SVD: a (m x n) = u (m x k) * diag(s) * vt (k x n), k = min(m, n).
// Singular values descend; each column of u has its largest-magnitude entry
// positive.
struct SvdResult {
  Matrix u;
  std::vector<double> s;
  Matrix vt;
};

SvdResult svd(const Matrix& a);

enum class CenterMode { left, twosided };

// H k (left) or H k H (twosided) with H = I - 11^T / n; k must be square.
Matrix center(const Matrix& k, CenterMode mode);
// H x for any row count: subtracts the column means.
Matrix center_rows(const Matrix& x);

struct AlignmentSolution {
  Matrix rotation;  // orthogonal, cols x cols
  double residual = 0.0;  // || g - f * rotation ||_F
};

// Orthogonal R minimizing || g - f R ||_F, via svd(f^T g) = U S V^T, R = U V^T.
AlignmentSolution procrustes(const Matrix& g_centered, const Matrix& f_centered);

}  // namespace kdd
