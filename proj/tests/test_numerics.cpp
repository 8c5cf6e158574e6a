#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "kdd/error.hpp"
#include "kdd/numerics/kernel.hpp"
#include "kdd/numerics/linalg.hpp"
#include "kdd/numerics/matrix_io.hpp"
#include "kdd/numerics/rng.hpp"
#include "kdd/numerics/tape.hpp"
#include "support/gradcheck.hpp"

using namespace kdd;

namespace {

double reconstruction_error(const Matrix& a, const SvdResult& d) {
  Matrix us = d.u;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= d.s[c];
  return frobenius_norm(matmul(us, d.vt) - a) / std::max(1.0, frobenius_norm(a));
}

double orthonormality_error(const Matrix& q_cols) {
  const Matrix g = matmul_tn(q_cols, q_cols);
  return frobenius_norm(g - Matrix::identity(g.rows()));
}

Matrix rotation2(double angle) {
  return Matrix{{std::cos(angle), -std::sin(angle)}, {std::sin(angle), std::cos(angle)}};
}

// Orthogonal matrix from the Q factor of a Gaussian matrix (test-side Gram-Schmidt).
Matrix random_orthogonal(std::size_t n, RngStream& rng) {
  Matrix q = rng.normal_matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < n; ++i) d += q(i, j) * q(i, k);
      for (std::size_t i = 0; i < n; ++i) q(i, j) -= d * q(i, k);
    }
    double nrm = 0.0;
    for (std::size_t i = 0; i < n; ++i) nrm += q(i, j) * q(i, j);
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= nrm;
  }
  return q;
}

}  // namespace

TEST_CASE("svd of identity and diagonal") {
  const SvdResult d = svd(Matrix::identity(3));
  CHECK(d.s == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(frobenius_norm(d.u - Matrix::identity(3)) == doctest::Approx(0.0));
  CHECK(frobenius_norm(d.vt - Matrix::identity(3)) == doctest::Approx(0.0));

  const SvdResult e = svd(Matrix{{3.0, 0.0}, {0.0, 1.0}});
  CHECK(e.s[0] == doctest::Approx(3.0));
  CHECK(e.s[1] == doctest::Approx(1.0));

  const SvdResult f = svd(Matrix{{1.0, 0.0}, {0.0, 3.0}});
  CHECK(f.s[0] == doctest::Approx(3.0));
  CHECK(f.s[1] == doctest::Approx(1.0));
}

TEST_CASE("svd reconstructs random tall, wide and rank-deficient matrices") {
  RngStream rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng.below(7);
    const std::size_t n = 1 + rng.below(7);
    Matrix a = rng.normal_matrix(m, n, 3.0);
    if (trial % 5 == 0 && n > 1)
      for (std::size_t r = 0; r < m; ++r) a(r, n - 1) = 2.0 * a(r, 0);  // rank drop
    const SvdResult d = svd(a);
    CHECK(reconstruction_error(a, d) <= 1e-10);
    CHECK(orthonormality_error(d.u) <= 1e-10);
    CHECK(orthonormality_error(d.vt.transpose()) <= 1e-10);
    for (std::size_t k = 1; k < d.s.size(); ++k) CHECK(d.s[k - 1] >= d.s[k]);
    for (double s : d.s) CHECK(s >= 0.0);
    for (std::size_t k = 0; k < d.u.cols(); ++k) {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < d.u.rows(); ++i)
        if (std::abs(d.u(i, k)) > std::abs(d.u(arg, k))) arg = i;
      CHECK(d.u(arg, k) > 0.0);
    }
  }
  const Matrix a43 = RngStream(3).normal_matrix(4, 3);
  CHECK(reconstruction_error(a43, svd(a43)) <= 1e-10);
}

TEST_CASE("svd rejects non-finite input") {
  Matrix a(2, 2, 1.0);
  a(0, 1) = std::nan("");
  CHECK_THROWS_AS(svd(a), InvalidInput);
}

TEST_CASE("rbf kernel examples and properties") {
  CHECK(rbf_kernel(Matrix{{1.0, 2.0}}, 1.0).base == Matrix{{1.0}});
  const KernelMatrix same = rbf_kernel(Matrix{{1.0, 2.0}, {1.0, 2.0}}, 0.3);
  for (double v : same.base.values()) CHECK(v == 1.0);

  const KernelMatrix k = rbf_kernel(Matrix{{0.0, 0.0}, {3.0, 4.0}}, 5.0);
  CHECK(k.base(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(k.base(1, 0) == k.base(0, 1));

  CHECK_THROWS_AS(rbf_kernel(Matrix{{1.0}}, 0.0), InvalidBandwidth);
  CHECK_THROWS_AS(rbf_kernel(Matrix{{1.0}}, -1.0), InvalidBandwidth);

  RngStream rng(11);
  const Matrix x = rng.normal_matrix(6, 3);
  Matrix shifted = x;
  for (std::size_t r = 0; r < 6; ++r) {
    shifted(r, 0) += 4.0;
    shifted(r, 2) -= 1.5;
  }
  const KernelMatrix a = rbf_kernel(x, 1.3);
  const KernelMatrix b = rbf_kernel(shifted, 1.3);
  CHECK(frobenius_norm(a.base - b.base) <= 1e-12);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.base(i, i) == 1.0);
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(a.base(i, j) > 0.0);
      CHECK(a.base(i, j) <= 1.0);
      CHECK(std::abs(a.base(i, j) - a.base(j, i)) <= 1e-12);
    }
  }
}

TEST_CASE("median pairwise distance") {
  CHECK(median_pairwise_distance(Matrix{{0.0}, {1.0}, {3.0}}) == doctest::Approx(2.0));
  CHECK(median_pairwise_distance(Matrix{{0.0}, {1.0}, {3.0}, {6.0}}) == doctest::Approx(3.0));
  CHECK(median_pairwise_distance(Matrix{{0.0}}) == 0.0);
}

TEST_CASE("centering") {
  const Matrix ones(4, 4, 1.0);
  CHECK(frobenius_norm(center(ones, CenterMode::left)) <= 1e-15);
  CHECK(frobenius_norm(center(ones, CenterMode::twosided)) <= 1e-15);

  const Matrix k{{2.0, -1.0, 4.0}, {0.5, 3.0, -2.0}, {1.0, 1.0, 7.0}};
  // Explicit H = I - 11^T/3 multiplied out.
  Matrix h = Matrix::identity(3);
  for (double& v : h.values()) v -= 1.0 / 3.0;
  CHECK(frobenius_norm(center(k, CenterMode::left) - matmul(h, k)) <= 1e-12);
  CHECK(frobenius_norm(center(k, CenterMode::twosided) - matmul(matmul(h, k), h)) <= 1e-12);

  const Matrix twice = center(k, CenterMode::twosided);
  CHECK(frobenius_norm(center(twice, CenterMode::twosided) - twice) <= 1e-12);
  const Matrix left = center(k, CenterMode::left);
  CHECK(frobenius_norm(left.col_means()) <= 1e-12);
  CHECK(frobenius_norm(twice.transpose().col_means()) <= 1e-12);

  CHECK_THROWS_AS(center(Matrix(2, 3), CenterMode::left), InvalidShape);
}

TEST_CASE("procrustes") {
  RngStream rng(5);
  const Matrix g = center_rows(rng.normal_matrix(20, 2));

  const AlignmentSolution self = procrustes(g, g);
  CHECK(self.residual <= 1e-10);
  CHECK(frobenius_norm(self.rotation - Matrix::identity(2)) <= 1e-8);

  const Matrix f = matmul(g, rotation2(0.7));
  const AlignmentSolution planted = procrustes(g, f);
  CHECK(planted.residual <= 1e-8);
  CHECK(orthonormality_error(planted.rotation) <= 1e-8);

  for (int seed = 0; seed < 5; ++seed) {
    RngStream r(100 + seed);
    const Matrix a = center_rows(r.normal_matrix(50, 4));
    const Matrix b = center_rows(r.normal_matrix(50, 4));
    const AlignmentSolution sol = procrustes(a, b);
    CHECK(sol.residual > 0.1 * frobenius_norm(a));
    CHECK(orthonormality_error(sol.rotation) <= 1e-8);

    // Rotating f is absorbed by the solution.
    const Matrix q = random_orthogonal(4, r);
    const AlignmentSolution rotated = procrustes(a, matmul(b, q));
    CHECK(std::abs(rotated.residual - sol.residual) <= 1e-8);
    CHECK(frobenius_norm(matmul(q, rotated.rotation) - sol.rotation) <= 1e-8);
  }
  CHECK_THROWS_AS(procrustes(Matrix(3, 2), Matrix(3, 3)), InvalidShape);
}

TEST_CASE("rng streams are reproducible and splittable") {
  RngStream a(42), b(42), c(43);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream d(42);
  CHECK(d.next_u64() != c.next_u64());

  const RngStream root(9);
  RngStream s1 = root.split(1), s1b = root.split(1), s2 = root.split(2);
  CHECK(s1.next_u64() == s1b.next_u64());
  CHECK(s1.next_u64() != s2.next_u64());

  // Golden values pin the documented algorithm.
  RngStream g(0);
  CHECK(g.next_u64() == 0xE220A8397B1DCDAFULL);

  RngStream u(3);
  double mean = 0.0, var = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    mean += z;
    var += z * z;
  }
  mean /= n;
  var = var / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.04);

  RngStream p(8);
  auto perm = p.permutation(10);
  std::sort(perm.begin(), perm.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(perm[i] == i);
}

TEST_CASE("dirichlet sampling") {
  RngStream rng(1);
  CHECK(dirichlet_sample(1.0, 1, rng) == std::vector<double>{1.0});
  CHECK_THROWS_AS(dirichlet_sample(1.0, 0, rng), InvalidInput);

  std::vector<double> mean(4, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto w = dirichlet_sample(1.0, 4, rng);
    double total = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(w[c] >= 0.0);
      total += w[c];
      mean[c] += w[c] / draws;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  for (double m : mean) CHECK(std::abs(m - 0.25) <= 0.02);

  // Small concentration goes through the boosted gamma branch.
  const auto sparse = dirichlet_sample(0.3, 5, rng);
  double total = 0.0;
  for (double w : sparse) total += w;
  CHECK(std::abs(total - 1.0) <= 1e-12);
}

TEST_CASE("backward on elementary graphs") {
  {
    Tape t;
    const Var x = t.leaf(Matrix{{3.0}});
    const Var y = t.mul(x, x);
    t.backward(y);
    CHECK(t.grad(x)(0, 0) == doctest::Approx(6.0));
    CHECK(t.last_backward_visits() == t.size());
  }
  {
    Tape t;
    const Var x = t.leaf(Matrix{{3.0, 1.0}});
    const Var c = t.constant(Matrix{{5.0}});
    t.backward(t.scale(c, 2.0));
    CHECK(frobenius_norm(t.grad(x)) == 0.0);
  }
  {
    Tape t;
    const Var x = t.leaf(Matrix{{1.0, 2.0}});
    CHECK_THROWS_AS(t.backward(t.tanh(x)), InvalidGraph);
  }
}

TEST_CASE("backward matches finite differences on random tanh networks") {
  RngStream rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t batch = 3 + rng.below(4), in = 2 + rng.below(3), hidden = 2 + rng.below(5),
                      classes = 2 + rng.below(3);
    const Matrix x = rng.normal_matrix(batch, in);
    std::vector<std::size_t> labels(batch);
    for (auto& l : labels) l = rng.below(classes);
    const std::vector<Matrix> params = {rng.normal_matrix(in, hidden, 0.7), rng.normal_matrix(1, hidden, 0.1),
                                        rng.normal_matrix(hidden, classes, 0.7),
                                        rng.normal_matrix(1, classes, 0.1)};
    auto net = [&](Tape& t, const std::vector<Var>& p) {
      const Var h = t.tanh(t.add_row(t.matmul(t.constant(x), p[0]), p[1]));
      return t.cross_entropy(t.add_row(t.matmul(h, p[2]), p[3]), labels);
    };
    CHECK(testing::max_gradient_error(net, params) <= 1e-4);
  }
}

TEST_CASE("backward matches finite differences for every primitive") {
  RngStream rng(77);
  const Matrix a = rng.normal_matrix(5, 3);
  const Matrix b = rng.normal_matrix(5, 3);
  const Matrix row = rng.normal_matrix(1, 3);
  Matrix soft_targets = rng.normal_matrix(5, 3);
  for (double& v : soft_targets.values()) v = std::abs(v);

  using testing::max_gradient_error;
  CHECK(max_gradient_error([](Tape& t, const std::vector<Var>& p) { return t.sum(t.square(t.relu(p[0]))); }, {a}) <= 1e-4);
  CHECK(max_gradient_error([](Tape& t, const std::vector<Var>& p) { return t.mean(t.mul(p[0], p[1])); }, {a, b}) <= 1e-4);
  CHECK(max_gradient_error(
            [](Tape& t, const std::vector<Var>& p) {
              return t.sum(t.square(t.add_scalar(t.sub(t.mul_row(p[0], p[1]), p[2]), 0.3)));
            },
            {a, row, b}) <= 1e-4);
  CHECK(max_gradient_error(
            [&](Tape& t, const std::vector<Var>& p) {
              return t.sum(t.mul(t.batch_norm(p[0], 1e-5), t.constant(b)));
            },
            {a}) <= 1e-4);
  CHECK(max_gradient_error(
            [&](Tape& t, const std::vector<Var>& p) {
              return t.sum(t.add(t.square(t.col_mean(p[0])), t.square(t.col_std(p[0], 1e-12))));
            },
            {a}) <= 1e-4);
  CHECK(max_gradient_error(
            [&](Tape& t, const std::vector<Var>& p) { return t.soft_cross_entropy(p[0], soft_targets); }, {a}) <=
        1e-4);
  CHECK(max_gradient_error([](Tape& t, const std::vector<Var>& p) { return t.sum(t.logsumexp_rows(p[0])); }, {a}) <=
        1e-4);
  CHECK(max_gradient_error(
            [](Tape& t, const std::vector<Var>& p) { return t.sum(t.tanh(t.matmul(p[0], p[1]))); },
            {a, rng.normal_matrix(3, 2)}) <= 1e-4);
}

TEST_CASE("backward is linear in the output") {
  RngStream rng(6);
  const Matrix x = rng.normal_matrix(4, 3);
  auto grads_of = [&](double wa, double wb) {
    Tape t;
    const Var p = t.leaf(x);
    const Var f = t.sum(t.tanh(p));
    const Var g = t.sum(t.square(p));
    const Var out = t.add(t.scale(f, wa), t.scale(g, wb));
    t.backward(out);
    return t.grad(p);
  };
  const Matrix combined = grads_of(0.3, -1.7);
  const Matrix lin = grads_of(1.0, 0.0) * 0.3 + grads_of(0.0, 1.0) * -1.7;
  CHECK(frobenius_norm(combined - lin) <= 1e-10);
}

TEST_CASE("matrix csv and binary round trips") {
  RngStream rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix m = rng.normal_matrix(1 + rng.below(5), 1 + rng.below(5), std::pow(10.0, trial - 5.0));
    CHECK(from_csv(to_csv(m)) == m);
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_binary(ss, m);
    CHECK(ss.str().size() == binary_size(m));
    CHECK(read_binary(ss) == m);
  }
  CHECK(to_csv(Matrix{{0.5, -2.0}}) == "0.5,-2\n");

  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_binary(ss, Matrix{{1.0, 2.0}});
  std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "DDMX");
  std::istringstream truncated(bytes.substr(0, bytes.size() - 3), std::ios::binary);
  try {
    read_binary(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset() == 25);
  }
  CHECK_THROWS_AS(from_csv("1,2\n3\n"), InvalidShape);
}
