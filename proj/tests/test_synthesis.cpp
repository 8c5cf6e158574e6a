#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "kdd/error.hpp"
#include "kdd/models/training.hpp"
#include "kdd/synthesis/synthesis.hpp"
#include "support/gradcheck.hpp"

using namespace kdd;

namespace {

GeneratorSpec small_spec(std::size_t out_dim = 5, std::size_t classes = 3) {
  return {4, 6, {8, 8}, out_dim, classes};
}

struct Trained {
  Dataset data;
  ClassifierModel student;
};

const Trained& trained_student() {
  static const Trained t = [] {
    RngStream rng(40);
    Dataset data = make_gaussian_mixture(4, 200, 8, 0.5, rng);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.seed = 41;
    const MlpArchitecture arch{8, {{32, Activation::relu, true}, {16, Activation::relu, true}}, 4};
    ClassifierModel m = train_classifier(arch, data, cfg);
    return Trained{std::move(data), std::move(m)};
  }();
  return t;
}

double mean_max_softmax(const ClassifierModel& m, const Matrix& x) {
  const Matrix p = softmax_rows(evaluate(m, x));
  double total = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) total += *std::max_element(p.row(r).begin(), p.row(r).end());
  return total / static_cast<double>(p.rows());
}

}  // namespace

TEST_CASE("mixed latents reduce to plain generation") {
  RngStream rng(1);
  const Generator gen(small_spec(), rng);
  const Matrix z = rng.normal_matrix(1, 4);
  const Matrix plain = generate(gen, z, std::vector<std::size_t>{2});

  const Matrix zs[] = {z};
  const std::size_t ys[] = {2};
  const double one[] = {1.0};
  CHECK(mixed_latent(zs, ys, one, gen) == plain);

  const Matrix zz[] = {z, z};
  const std::size_t yy[] = {2, 2};
  const double w[] = {0.3, 0.7};
  const Matrix twice = mixed_latent(zz, yy, w, gen);
  for (std::size_t c = 0; c < plain.cols(); ++c) CHECK(std::abs(twice(0, c) - plain(0, c)) <= 1e-12);

  const double bad[] = {0.5};
  CHECK_THROWS_AS(mixed_latent(zz, yy, bad, gen), InvalidInput);
}

TEST_CASE("encoder is linear in mixed inputs") {
  RngStream rng(2);
  const Generator gen(small_spec(), rng);
  const Matrix z1 = rng.normal_matrix(1, 4), z2 = rng.normal_matrix(1, 4), z3 = rng.normal_matrix(1, 4);
  const std::vector<double> w = dirichlet_sample(1.0, 3, rng);
  const Matrix y1 = one_hot(std::vector<std::size_t>{0}, 3), y2 = one_hot(std::vector<std::size_t>{2}, 3),
               y3 = one_hot(std::vector<std::size_t>{1}, 3);
  const Matrix mixed = encode(gen, z1 * w[0] + z2 * w[1] + z3 * w[2], y1 * w[0] + y2 * w[1] + y3 * w[2]);
  const Matrix sum = encode(gen, z1, y1) * w[0] + encode(gen, z2, y2) * w[1] + encode(gen, z3, y3) * w[2];
  for (std::size_t c = 0; c < mixed.cols(); ++c) CHECK(std::abs(mixed(0, c) - sum(0, c)) <= 1e-12);

  const Matrix emb = gen.label_embedding();
  CHECK(emb.rows() == 3);
  CHECK(emb.cols() == 6);
}

TEST_CASE("batch statistics loss hand example") {
  RngStream rng(3);
  const ClassifierModel student({1, {{1, Activation::tanh, true}}, 2}, rng);
  const BatchStatistics off[] = {{Matrix{{1.0}}, Matrix{{2.0}}}};
  CHECK(bns_loss(student, off) == 2.0);
  const BatchStatistics on[] = {{Matrix{{0.0}}, Matrix{{1.0}}}};
  CHECK(bns_loss(student, on) == 0.0);

  const ClassifierModel plain({1, {{1, Activation::tanh, false}}, 2}, rng);
  CHECK_THROWS_AS(bns_loss(plain, off), NoStatisticsAvailable);
}

TEST_CASE("batch statistics loss on tape") {
  const ClassifierModel& student = trained_student().student;
  RngStream rng(4);
  const Matrix x = rng.normal_matrix(12, 8);
  const std::vector<BatchStatistics> stats = batch_statistics(student, x);
  CHECK(stats.size() == 2);
  const double direct = bns_loss(student, stats);
  CHECK(direct >= 0.0);

  Tape tape;
  const TapeForward pass = forward_on_tape(tape, student, tape.constant(x), NormalizationSource::running, false);
  CHECK(tape.value(bns_loss_on_tape(tape, student, pass.bn_inputs))(0, 0) == doctest::Approx(direct).epsilon(1e-12));

  CHECK(testing::max_gradient_error(
            [&](Tape& t, const std::vector<Var>& p) {
              const TapeForward f = forward_on_tape(t, student, p[0], NormalizationSource::running, false);
              return bns_loss_on_tape(t, student, f.bn_inputs);
            },
            {x}) <= 1e-4);
}

TEST_CASE("generator training basics") {
  const ClassifierModel& student = trained_student().student;
  const ClassifierModel before = student;
  const GeneratorSpec spec = generator_spec_for(student.architecture(), 8, 16, {32, 32});

  SynthesisConfig cfg;
  cfg.seed = 5;
  cfg.epochs = 0;
  RngStream init = RngStream(5).split(0);
  CHECK(train_generator(student, spec, cfg) == Generator(spec, init));

  cfg.epochs = 30;
  const Generator a = train_generator(student, spec, cfg);
  const Generator b = train_generator(student, spec, cfg);
  CHECK(a == b);
  CHECK(student == before);

  GeneratorSpec wrong = spec;
  wrong.output_dim = 3;
  CHECK_THROWS_AS(train_generator(student, wrong, cfg), InvalidShape);
  cfg.mix_count = 0;
  CHECK_THROWS_AS(train_generator(student, spec, cfg), InvalidInput);
}

TEST_CASE("generator training lowers the statistics loss and yields confident samples") {
  const ClassifierModel& student = trained_student().student;
  const GeneratorSpec spec = generator_spec_for(student.architecture(), 8, 16, {32, 32});
  double decrease = 0.0, synthetic_conf = 0.0, noise_conf = 0.0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    SynthesisConfig cfg;
    cfg.seed = 100 + s;
    cfg.epochs = 200;
    const GeneratorTraining run = train_generator_with_history(student, spec, cfg);
    auto window = [&](std::size_t from) {
      double t = 0.0;
      for (std::size_t i = from; i < from + 10; ++i) t += run.bns_losses[i];
      return t / 10.0;
    };
    decrease += window(0) - window(run.bns_losses.size() - 10);
    RngStream rng(200 + s);
    synthetic_conf += mean_max_softmax(student, build_input_set(run.generator, 100, rng).inputs);
    noise_conf += mean_max_softmax(student, noise_input_set(100, 8, rng).inputs);
  }
  MESSAGE("mean BNS decrease " << decrease / seeds << ", confidence synthetic " << synthetic_conf / seeds
                               << " noise " << noise_conf / seeds);
  CHECK(decrease > 0.0);
  CHECK(synthetic_conf > noise_conf);
}

TEST_CASE("input set construction") {
  RngStream rng(6);
  const Generator gen(small_spec(5, 3), rng);
  RngStream r1(7), r2(7);
  const InputSet a = build_input_set(gen, 3, r1);
  CHECK(a.labels == std::vector<std::size_t>{0, 1, 2});
  CHECK(a.source == InputSource::synthetic);
  CHECK(build_input_set(gen, 3, r2).inputs == a.inputs);
  const InputSet one = build_input_set(gen, 1, rng);
  CHECK(one.size() == 1);
  CHECK(one.labels == std::vector<std::size_t>{0});
  const InputSet seven = build_input_set(gen, 7, rng);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::count(seven.labels.begin(), seven.labels.end(), c) >= 2);
  CHECK_THROWS_AS(build_input_set(gen, 0, rng), InvalidInput);
}

TEST_CASE("noise input set") {
  RngStream a(8), b(8);
  const InputSet small = noise_input_set(3, 2, a);
  CHECK(small.inputs.rows() == 3);
  CHECK(small.inputs.cols() == 2);
  CHECK(small.inputs.all_finite());
  CHECK(noise_input_set(3, 2, b).inputs == small.inputs);

  const InputSet big = noise_input_set(10000, 3, a);
  const Matrix means = big.inputs.col_means();
  for (double m : means.values()) CHECK(std::abs(m) <= 0.05);
}

TEST_CASE("oracle input set") {
  RngStream rng(9);
  const Dataset data = make_gaussian_mixture(3, 5, 2, 0.5, rng);
  const InputSet all = oracle_input_set(data, data.size(), rng);
  std::vector<int> seen(data.size(), 0);
  for (std::size_t r = 0; r < all.size(); ++r)
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.features(i, 0) == all.inputs(r, 0) && data.features(i, 1) == all.inputs(r, 1)) {
        CHECK(all.labels[r] == data.labels[i]);
        ++seen[i];
      }
  for (int s : seen) CHECK(s == 1);
  CHECK(oracle_input_set(data, 1, rng).size() == 1);
  CHECK_THROWS_AS(oracle_input_set(data, data.size() + 1, rng), InvalidInput);
}

TEST_CASE("input set persistence") {
  const auto dir = std::filesystem::temp_directory_path() / "kdd_test_synthesis";
  std::filesystem::remove_all(dir);
  RngStream rng(10);
  const Generator gen(small_spec(), rng);
  const InputSet set = build_input_set(gen, 5, rng);
  save_input_set(dir / "set.csv", set);
  CHECK(std::filesystem::exists(dir / "set.json"));
  const InputSet back = load_input_set(dir / "set.csv");
  CHECK(back.inputs == set.inputs);
  CHECK(back.labels == set.labels);
  CHECK(back.source == set.source);
  CHECK(back.seed == set.seed);

  const InputSet noise = noise_input_set(2, 5, rng);
  save_input_set(dir / "noise.csv", noise);
  CHECK(load_input_set(dir / "noise.csv").labels.empty());
  std::filesystem::remove_all(dir);
}
