#pragma once

// Slow, literal evaluations of the scoring formulas. They share no code with
// the library beyond the Matrix container.

#include <algorithm>
#include <cmath>
#include <vector>

#include "kdd/numerics/matrix.hpp"

namespace kdd::oracle {

inline Matrix centering_matrix(std::size_t n) {
  Matrix h(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(n);
  return h;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline Matrix transposed(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

// Gauss-Jordan inverse with partial pivoting.
inline Matrix inverse(Matrix a) {
  const std::size_t n = a.rows();
  Matrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i) inv(i, i) = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    for (std::size_t k = 0; k < n; ++k) {
      std::swap(a(c, k), a(p, k));
      std::swap(inv(c, k), inv(p, k));
    }
    const double d = a(c, c);
    for (std::size_t k = 0; k < n; ++k) {
      a(c, k) /= d;
      inv(c, k) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      for (std::size_t k = 0; k < n; ++k) {
        a(r, k) -= f * a(c, k);
        inv(r, k) -= f * inv(c, k);
      }
    }
  }
  return inv;
}

// Orthogonal polar factor of a nonsingular square matrix by Newton iteration
// X <- (X + X^-T) / 2.
inline Matrix polar_factor(const Matrix& m) {
  Matrix x = m;
  for (int it = 0; it < 100; ++it) {
    const Matrix inv_t = transposed(inverse(x));
    Matrix next(x.rows(), x.cols());
    double change = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      next.values()[i] = 0.5 * (x.values()[i] + inv_t.values()[i]);
      change = std::max(change, std::abs(next.values()[i] - x.values()[i]));
    }
    x = next;
    if (change < 1e-15) break;
  }
  return x;
}

inline double acs(const Matrix& g, const Matrix& f) {
  const Matrix h = centering_matrix(g.rows());
  const Matrix hg = multiply(h, g);
  const Matrix hf = multiply(h, f);
  const Matrix r = polar_factor(multiply(transposed(hf), hg));
  const Matrix hfr = multiply(hf, r);
  double total = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < g.cols(); ++c) {
      ab += hg(i, c) * hfr(i, c);
      aa += hg(i, c) * hg(i, c);
      bb += hfr(i, c) * hfr(i, c);
    }
    if (aa > 0.0 && bb > 0.0) total += ab / std::sqrt(aa * bb);
  }
  return total / static_cast<double>(g.rows());
}

inline double euclidean(const Matrix& x, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c) s += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
  return std::sqrt(s);
}

inline double manhattan(const Matrix& x, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c) s += std::abs(x(i, c) - x(j, c));
  return s;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline double median_distance(const Matrix& x) {
  std::vector<double> d;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.rows(); ++j) d.push_back(euclidean(x, i, j));
  return median(d);
}

inline Matrix rbf_gram(const Matrix& x, double sigma) {
  Matrix k(x.rows(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.rows(); ++j) {
      const double d = euclidean(x, i, j);
      k(i, j) = std::exp(-d * d / (2.0 * sigma * sigma));
    }
  return k;
}

inline double trace_of(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
  return t;
}

inline double frobenius(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

// Tr(HKx HKy) / (||HKx|| ||HKy||), or with H K H when two_sided.
inline double cka(const Matrix& x, const Matrix& y, bool two_sided = false) {
  const Matrix h = centering_matrix(x.rows());
  Matrix kx = multiply(h, rbf_gram(x, median_distance(x)));
  Matrix ky = multiply(h, rbf_gram(y, median_distance(y)));
  if (two_sided) {
    kx = multiply(kx, h);
    ky = multiply(ky, h);
  }
  return trace_of(multiply(kx, ky)) / (frobenius(kx) * frobenius(ky));
}

inline std::vector<double> softmax(const Matrix& logits, std::size_t r) {
  double z = 0.0;
  std::vector<double> p(logits.cols());
  for (std::size_t c = 0; c < p.size(); ++c) z += std::exp(logits(r, c));
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = std::exp(logits(r, c)) / z;
  return p;
}

// (1/N) sum_n 1 / (KL(softmax g_n || softmax f_n) + eps).
inline double point_score_kl(const Matrix& g, const Matrix& f, double eps) {
  double total = 0.0;
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::vector<double> p = softmax(g, r), q = softmax(f, r);
    double kl = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) kl += p[c] * std::log(p[c] / q[c]);
    total += 1.0 / (kl + eps);
  }
  return total / static_cast<double>(g.rows());
}

// Unbiased MMD^2 between samples x and y under a Gram matrix over the pooled
// sample (x rows first).
inline double mmd_unbiased(const Matrix& k, std::size_t m, std::size_t n) {
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) xx += k(i, j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) yy += k(m + i, m + j);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) xy += k(i, m + j);
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  return xx / (dm * (dm - 1.0)) + yy / (dn * (dn - 1.0)) - 2.0 * xy / (dm * dn);
}

// Biased HSIC with median-bandwidth RBF kernels: Tr(K H L H) / (n - 1)^2.
inline double hsic(const Matrix& x, const Matrix& y) {
  const std::size_t n = x.rows();
  const Matrix h = centering_matrix(n);
  const Matrix k = rbf_gram(x, median_distance(x));
  const Matrix l = rbf_gram(y, median_distance(y));
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return trace_of(multiply(multiply(k, h), multiply(l, h))) / denom;
}

}  // namespace kdd::oracle
