#include <cmath>
#include <numbers>

#include "doctest.h"
#include "kdd/distill/distill.hpp"
#include "kdd/error.hpp"
#include "kdd/numerics/linalg.hpp"
#include "support/gradcheck.hpp"

using namespace kdd;

namespace {

double huber(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }

double distance(const Matrix& x, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c) s += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
  return std::sqrt(s);
}

// Cosine of the angle at vertex j between i and k.
double cosine(const Matrix& x, std::size_t i, std::size_t j, std::size_t k) {
  double num = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c) num += (x(i, c) - x(j, c)) * (x(k, c) - x(j, c));
  return num / (distance(x, i, j) * distance(x, k, j));
}

double brute_rkd(const Matrix& s, const Matrix& t, double wd, double wa) {
  const std::size_t n = s.rows();
  double ms = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        ms += distance(s, i, j);
        mt += distance(t, i, j);
      }
  const double pairs = static_cast<double>(n * (n - 1));
  ms /= pairs;
  mt /= pairs;
  double dist = 0.0, angle = 0.0, triplets = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      dist += huber(distance(s, i, j) / ms - distance(t, i, j) / mt);
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        angle += huber(cosine(s, i, j, k) - cosine(t, i, j, k));
        triplets += 1.0;
      }
    }
  return wd * dist / pairs + wa * angle / triplets;
}

Matrix rotation(std::size_t dim, RngStream& rng) {
  return svd(rng.normal_matrix(dim, dim)).u;
}

// Mean over rows of KL(softmax(p) || softmax(q)).
double mean_kl(const Matrix& p_logits, const Matrix& q_logits) {
  const Matrix p = softmax_rows(p_logits);
  double total = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double lp = logsumexp(p_logits.row(r));
    const double lq = logsumexp(q_logits.row(r));
    for (std::size_t c = 0; c < p.cols(); ++c)
      total += p(r, c) * ((p_logits(r, c) - lp) - (q_logits(r, c) - lq));
  }
  return total / static_cast<double>(p.rows());
}

MlpArchitecture arch(std::size_t width, Activation act = Activation::relu) {
  return {6, {{width, act, true}}, 3};
}

TrainConfig train_config(std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = 0.05;
  c.weight_decay = 0.0;
  c.epochs = 8;
  c.batch_size = 32;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("kd loss hand example") {
  const Matrix student{{0.0, 0.0}};
  const Matrix teacher{{std::log(3.0), 0.0}};
  const std::vector<std::size_t> label{0};
  const double expected = 0.5 * std::numbers::ln2 + 0.5 * (0.75 * std::log(1.5) + 0.25 * std::log(0.5));
  CHECK(kd_loss(student, teacher, label, 0.5, 1.0) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("kd loss limits, convexity and tape parity") {
  RngStream rng(1);
  const Matrix s = rng.normal_matrix(7, 4, 2.0);
  const Matrix t = rng.normal_matrix(7, 4, 2.0);
  const std::vector<std::size_t> y{0, 1, 2, 3, 0, 1, 2};

  Tape tape;
  const double ce = tape.value(tape.cross_entropy(tape.constant(s), y))(0, 0);
  CHECK(kd_loss(s, t, y, 0.0, 4.0) == ce);
  CHECK(std::abs(kd_loss(s, s, y, 1.0, 3.0)) <= 1e-12);

  for (double lambda : {0.0, 0.2, 0.5, 0.9, 1.0})
    for (double temp : {1.0, 4.0}) {
      const double v = kd_loss(s, t, y, lambda, temp);
      CHECK(v >= 0.0);
      CHECK(v == (1.0 - lambda) * kd_loss(s, t, y, 0.0, temp) + lambda * kd_loss(s, t, y, 1.0, temp));
      Tape tp;
      const double on_tape = tp.value(kd_loss_on_tape(tp, tp.leaf(s), t, y, lambda, temp))(0, 0);
      CHECK(on_tape == doctest::Approx(v).epsilon(1e-12));
      CHECK(testing::max_gradient_error(
                [&](Tape& g, const std::vector<Var>& p) { return kd_loss_on_tape(g, p[0], t, y, lambda, temp); },
                {s}) <= 1e-5);
    }

  CHECK_THROWS_AS(kd_loss(s, Matrix(7, 3), y, 0.5, 1.0), InvalidShape);
  CHECK_THROWS_AS(kd_loss(s, t, std::vector<std::size_t>{0}, 0.5, 1.0), InvalidShape);
}

TEST_CASE("rkd loss matches brute force") {
  const Matrix t{{0.0, 0.0}, {1.0, 0.0}, {0.0, 2.0}};
  const Matrix s{{0.1, -0.2}, {1.3, 0.1}, {-0.2, 1.5}};
  CHECK(rkd_loss(s, t, 1.0, 2.0) == doctest::Approx(brute_rkd(s, t, 1.0, 2.0)).epsilon(1e-12));
  CHECK(rkd_loss(s, t, 1.0, 2.0) > 0.0);

  RngStream rng(2);
  const Matrix a = rng.normal_matrix(9, 5, 3.0);
  const Matrix b = rng.normal_matrix(9, 3);
  CHECK(rkd_loss(a, b, 1.0, 2.0) == doctest::Approx(brute_rkd(a, b, 1.0, 2.0)).epsilon(1e-12));
  CHECK(rkd_loss(a, b, 0.7, 0.0) == doctest::Approx(brute_rkd(a, b, 0.7, 0.0)).epsilon(1e-12));
}

TEST_CASE("rkd loss invariances") {
  RngStream rng(3);
  const Matrix t = rng.normal_matrix(8, 4);
  CHECK(rkd_loss(t, t, 1.0, 2.0) == 0.0);
  CHECK(rkd_loss(t * 3.5, t, 1.0, 2.0) <= 1e-12);

  const Matrix s = rng.normal_matrix(8, 6);
  const double base = rkd_loss(s, t, 1.0, 2.0);
  CHECK(std::abs(rkd_loss(matmul(s, rotation(6, rng)), t, 1.0, 2.0) - base) <= 1e-8);
  CHECK(std::abs(rkd_loss(s, matmul(t, rotation(4, rng)), 1.0, 2.0) - base) <= 1e-8);

  CHECK_THROWS_AS(rkd_loss(Matrix(2, 3), Matrix(2, 3), 1.0, 2.0), InvalidInput);
  CHECK_THROWS_AS(rkd_loss(Matrix(4, 3), Matrix(5, 3), 1.0, 2.0), InvalidShape);
}

TEST_CASE("rkd tape gradient agrees with finite differences") {
  RngStream rng(4);
  const Matrix t = rng.normal_matrix(6, 3);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix s = rng.normal_matrix(6, 4, 1.0 + trial);
    CHECK(testing::max_gradient_error(
              [&](Tape& g, const std::vector<Var>& p) { return rkd_loss_on_tape(g, p[0], t, 1.0, 2.0); }, {s},
              1e-6) <= 1e-4);
  }
  // Gradient composes with upstream nodes.
  const Matrix w = rng.normal_matrix(4, 3);
  const Matrix x = rng.normal_matrix(6, 4);
  CHECK(testing::max_gradient_error(
            [&](Tape& g, const std::vector<Var>& p) {
              return g.scale(rkd_loss_on_tape(g, g.tanh(g.matmul(g.constant(x), p[0])), t, 1.0, 2.0), 3.0);
            },
            {w}, 1e-6) <= 1e-4);
}

TEST_CASE("lambda zero distillation equals plain training") {
  RngStream rng(5);
  const Dataset data = make_gaussian_mixture(3, 40, 6, 0.6, rng);
  const ClassifierModel teacher = train_classifier(arch(24), data, train_config(100));
  DistillConfig cfg;
  cfg.lambda = 0.0;
  cfg.train = train_config(7);
  CHECK(distill_student(teacher, arch(8), data, cfg) == train_classifier(arch(8), data, cfg.train));
}

TEST_CASE("distillation is deterministic and leaves the teacher untouched") {
  RngStream rng(6);
  const Dataset data = make_gaussian_mixture(3, 30, 6, 0.6, rng);
  const ClassifierModel teacher = train_classifier(arch(24), data, train_config(100));
  const ClassifierModel copy = teacher;
  for (DistillMethod method : {DistillMethod::kd, DistillMethod::rkd}) {
    DistillConfig cfg;
    cfg.method = method;
    cfg.train = train_config(9);
    cfg.train.epochs = 3;
    const ClassifierModel a = distill_student(teacher, arch(8, Activation::tanh), data, cfg);
    const ClassifierModel b = distill_student(teacher, arch(8, Activation::tanh), data, cfg);
    CHECK(a == b);
    CHECK(a.mode() == Mode::eval);
    CHECK(teacher == copy);
  }
  DistillConfig cfg;
  cfg.train = train_config(1);
  CHECK_THROWS_AS(distill_student(teacher, {5, {{8, Activation::relu, true}}, 3}, data, cfg), InvalidShape);
  cfg.lambda = 1.5;
  CHECK_THROWS_AS(distill_student(teacher, arch(8), data, cfg), InvalidInput);
}

TEST_CASE("kd students track their teacher more closely than independent models") {
  RngStream rng(7);
  const auto [train, held_out] = split_dataset(make_gaussian_mixture(3, 250, 6, 0.9, rng), 0.4, rng);
  const ClassifierModel teacher = train_classifier(arch(32), train, train_config(100));
  const Matrix t_logits = evaluate(teacher, held_out.features);

  for (DistillMethod method : {DistillMethod::kd, DistillMethod::rkd}) {
    DistillConfig cfg;
    cfg.method = method;
    cfg.train = train_config(11);
    const ClassifierModel student = distill_student(teacher, arch(12), train, cfg);
    DistillConfig independent = cfg;
    independent.method = DistillMethod::kd;
    independent.lambda = 0.0;
    independent.train.seed = 12;
    const ClassifierModel other = distill_student(teacher, arch(12), train, independent);
    const double kl_student = mean_kl(evaluate(student, held_out.features), t_logits);
    const double kl_other = mean_kl(evaluate(other, held_out.features), t_logits);
    MESSAGE(to_string(method) << " student KL " << kl_student << " independent KL " << kl_other);
    CHECK(kl_student < kl_other);
  }
}

TEST_CASE("method names round trip") {
  CHECK(distill_method_from_string(to_string(DistillMethod::kd)) == DistillMethod::kd);
  CHECK(distill_method_from_string(to_string(DistillMethod::rkd)) == DistillMethod::rkd);
  CHECK_THROWS_AS(distill_method_from_string("ofa"), InvalidInput);
}
