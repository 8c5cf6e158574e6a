#include "kdd/numerics/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdd/error.hpp"

namespace kdd {

namespace {

// One-sided Jacobi on the columns of w (m x n, m >= n). On return the columns
// of w are mutually orthogonal and w = a * v.
void jacobi_orthogonalize(Matrix& w, Matrix& v) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  constexpr int kMaxSweeps = 80;
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
}

// Replace the listed columns of u with unit vectors orthogonal to every other
// column (Gram-Schmidt against the standard basis).
void complete_orthonormal(Matrix& u, const std::vector<bool>& valid) {
  const std::size_t m = u.rows();
  std::vector<bool> filled = valid;
  std::size_t basis = 0;
  for (std::size_t j = 0; j < u.cols(); ++j) {
    if (filled[j]) continue;
    while (basis < m) {
      std::vector<double> cand(m, 0.0);
      cand[basis++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < u.cols(); ++k) {
          if (!filled[k]) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += cand[i] * u(i, k);
          for (std::size_t i = 0; i < m; ++i) cand[i] -= d * u(i, k);
        }
      }
      const double nrm = norm2(cand);
      if (nrm > 1e-8) {
        for (std::size_t i = 0; i < m; ++i) u(i, j) = cand[i] / nrm;
        filled[j] = true;
        break;
      }
    }
  }
}

SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix w = a;
  Matrix v = Matrix::identity(n);
  jacobi_orthogonalize(w, v);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double smax = n == 0 ? 0.0 : norms[order[0]];
  const double cutoff = std::max(smax, 1.0) * 1e-14 * static_cast<double>(std::max(m, n));
  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  std::vector<bool> valid(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.s[k] = norms[j];
    for (std::size_t i = 0; i < n; ++i) out.vt(k, i) = v(i, j);
    if (norms[j] > cutoff) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = w(i, j) / norms[j];
      valid[k] = true;
    }
  }
  complete_orthonormal(out.u, valid);

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::abs(out.u(i, k)) > std::abs(out.u(arg, k))) arg = i;
    if (m > 0 && out.u(arg, k) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = -out.u(i, k);
      for (std::size_t i = 0; i < n; ++i) out.vt(k, i) = -out.vt(k, i);
    }
  }
  return out;
}

}  // namespace

SvdResult svd(const Matrix& a) {
  if (!a.all_finite()) throw InvalidInput("svd: non-finite input");
  if (a.rows() >= a.cols()) return svd_tall(a);
  // a^T = U S V^T  =>  a = V S U^T.
  SvdResult t = svd_tall(a.transpose());
  SvdResult out{t.vt.transpose(), std::move(t.s), t.u.transpose()};
  // Re-apply the sign convention to the new u.
  for (std::size_t k = 0; k < out.u.cols(); ++k) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < out.u.rows(); ++i)
      if (std::abs(out.u(i, k)) > std::abs(out.u(arg, k))) arg = i;
    if (out.u(arg, k) < 0.0) {
      for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, k) = -out.u(i, k);
      for (std::size_t i = 0; i < out.vt.cols(); ++i) out.vt(k, i) = -out.vt(k, i);
    }
  }
  return out;
}

Matrix center_rows(const Matrix& x) {
  Matrix out = x;
  const Matrix means = x.col_means();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) -= means(0, c);
  return out;
}

Matrix center(const Matrix& k, CenterMode mode) {
  if (k.rows() != k.cols()) throw InvalidShape("center: matrix must be square");
  Matrix out = center_rows(k);
  if (mode == CenterMode::twosided) {
    for (std::size_t r = 0; r < out.rows(); ++r) {
      double mean = 0.0;
      for (double v : out.row(r)) mean += v;
      mean /= static_cast<double>(out.cols());
      for (double& v : out.row(r)) v -= mean;
    }
  }
  return out;
}

AlignmentSolution procrustes(const Matrix& g_centered, const Matrix& f_centered) {
  if (!g_centered.same_shape(f_centered)) throw InvalidShape("procrustes: shape mismatch");
  if (g_centered.cols() == 0) throw InvalidShape("procrustes: need at least one column");
  const SvdResult d = svd(matmul_tn(f_centered, g_centered));
  AlignmentSolution sol;
  sol.rotation = matmul(d.u, d.vt);
  sol.residual = frobenius_norm(g_centered - matmul(f_centered, sol.rotation));
  return sol;
}

}  // namespace kdd
