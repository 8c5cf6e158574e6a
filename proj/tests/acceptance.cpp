// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "kdd/harness/harness.hpp"
#include "kdd/models/checkpoint.hpp"
#include "kdd/numerics/kernel.hpp"
#include "kdd/numerics/linalg.hpp"
#include "kdd/numerics/matrix_io.hpp"
#include "support/oracles.hpp"

using namespace kdd;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

ExperimentConfig desk_config() {
  ExperimentConfig c = desk_benchmark_config();
  c.threads = 1;
  return c;
}

// Criterion 1.
Outcome numerical_core() {
  const auto start = Clock::now();
  RngStream rng(1);
  double worst_grad = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    MlpArchitecture arch;
    arch.input_dim = 2 + rng.below(3);
    arch.num_classes = 2 + rng.below(3);
    const std::size_t depth = 1 + rng.below(2);
    for (std::size_t l = 0; l < depth; ++l)
      arch.hidden.push_back({2 + rng.below(4), rng.bernoulli(0.5) ? Activation::tanh : Activation::relu,
                             rng.bernoulli(0.5)});
    ClassifierModel model(arch, rng);
    // Shift biases away from zero so relu kinks are not straddled by the
    // finite-difference step.
    for (std::size_t p = 0; p < model.parameters().size(); ++p)
      for (double& v : model.parameters()[p].values()) v += 0.05 * rng.normal();
    const Matrix x = rng.normal_matrix(4 + rng.below(3), arch.input_dim);
    std::vector<std::size_t> labels(x.rows());
    for (auto& y : labels) y = rng.below(arch.num_classes);
    auto loss_value = [&](const ClassifierModel& m) {
      Tape tape;
      const TapeForward pass = forward_on_tape(tape, m, tape.constant(x), NormalizationSource::batch, false);
      return tape.value(tape.cross_entropy(pass.logits, labels))(0, 0);
    };
    Tape tape;
    const TapeForward pass = forward_on_tape(tape, model, tape.constant(x), NormalizationSource::batch, true);
    const std::vector<Matrix> analytic = backward(tape, tape.cross_entropy(pass.logits, labels), pass.params);
    const double step = 1e-5;
    for (std::size_t p = 0; p < model.parameters().size(); ++p) {
      for (std::size_t i = 0; i < model.parameters()[p].size(); ++i) {
        ClassifierModel probe = model;
        probe.parameters()[p].values()[i] += step;
        const double up = loss_value(probe);
        probe.parameters()[p].values()[i] -= 2 * step;
        const double down = loss_value(probe);
        const double numeric = (up - down) / (2 * step);
        const double a = analytic[p].values()[i];
        worst_grad = std::max(worst_grad, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3}));
      }
    }
  }

  double worst_svd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = rng.normal_matrix(1 + rng.below(8), 1 + rng.below(8), 3.0);
    const SvdResult d = svd(a);
    Matrix us = d.u;
    for (std::size_t r = 0; r < us.rows(); ++r)
      for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= d.s[c];
    worst_svd = std::max(worst_svd, frobenius_norm(matmul(us, d.vt) - a) / std::max(1.0, frobenius_norm(a)));
  }

  double worst_rot = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = 2 + rng.below(4);
    const Matrix g = rng.normal_matrix(20, dim);
    const Matrix q = svd(rng.normal_matrix(dim, dim)).u;
    const AlignmentSolution sol = procrustes(g, matmul(g, q));
    worst_rot = std::max(worst_rot, sol.residual);
  }
  const double t = seconds_since(start);
  return {worst_grad <= 1e-4 && worst_svd <= 1e-10 && worst_rot <= 1e-8 && t < 30.0,
          "max gradient rel err " + sci(worst_grad) + ", svd err " + sci(worst_svd) +
              ", procrustes residual " + sci(worst_rot) + ", " + fixed(t, 1) + " s"};
}

Matrix oracle_gram(const Matrix& z, const MmdKernel& k) {
  Matrix g(z.rows(), z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.rows(); ++j) {
      const double d = k.family == KernelFamily::rbf ? oracle::euclidean(z, i, j) : oracle::manhattan(z, i, j);
      g(i, j) = k.family == KernelFamily::rbf ? std::exp(-d * d / (2 * k.bandwidth * k.bandwidth))
                                              : std::exp(-d / k.bandwidth);
    }
  return g;
}

// Criterion 2.
Outcome score_oracles() {
  const auto start = Clock::now();
  RngStream rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 6 + rng.below(3);
    const std::size_t d = 2 + rng.below(3);
    const Matrix g = rng.normal_matrix(n, d);
    const Matrix f = rng.normal_matrix(n, d, 2.0);
    worst = std::max(worst, std::abs(acs(g, f) - oracle::acs(g, f)));
    worst = std::max(worst, std::abs(cka_rbf(g, f) - oracle::cka(g, f)));
    const double ps = oracle::point_score_kl(g, f, 1e-6);
    worst = std::max(worst, std::abs(point_score(g, f, {}) - ps) / ps);
    worst = std::max(worst, std::abs(hsic_statistic(g, f) - oracle::hsic(g, f)));

    const std::vector<MmdKernel> bank = mmd_kernel_bank(g, f, {});
    const Matrix z = vconcat(g, f);
    double fused = 0.0;
    for (const MmdKernel& k : bank) fused += std::exp(oracle::mmd_unbiased(oracle_gram(z, k), n, n));
    worst = std::max(worst, std::abs(mmd_fuse_statistic(g, f, bank, 1.0) - std::log(fused)));
  }
  const double t = seconds_since(start);
  return {worst <= 1e-8 && t < 10.0, "12 instances, max disagreement " + sci(worst) + ", " + fixed(t, 1) + " s"};
}

// Criterion 3.
Outcome calibration() {
  const auto start = Clock::now();
  RngStream rng(3);
  MmdFuseConfig mmd;
  mmd.permutations = 200;
  int hsic_rejections = 0, mmd_rejections = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    hsic_rejections += hsic_test(rng.normal_matrix(20, 3), rng.normal_matrix(20, 3), 200, rng).decision;
    mmd_rejections += mmd_fuse(rng.normal_matrix(20, 3), rng.normal_matrix(20, 3), mmd, rng).decision;
  }
  const double h = hsic_rejections / double(trials), m = mmd_rejections / double(trials);
  const double t = seconds_since(start);
  const bool ok = h >= 0.01 && h <= 0.10 && m >= 0.01 && m <= 0.10 && t < 120.0;
  return {ok, "null rejection rate hsic " + fixed(h) + ", mmd_fuse " + fixed(m) + ", " + fixed(t, 1) + " s"};
}

// Criterion 4.
Outcome self_detection(const World& world, const ExperimentConfig& config) {
  const auto start = Clock::now();
  MmdFuseConfig mmd = config.mmd;
  mmd.permutations = 200;
  int total = 0, hits = 0;
  std::string misses;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t truth = static_cast<std::size_t>(trial) % world.teachers.size();
    const ClassifierModel& student = world.teachers[truth];
    for (const char* score : {"point_kl", "acs", "cka", "mmd_fuse"}) {
      MethodSpec method;
      method.score = score;
      DetectSettings s = method_settings(config, method, 100, world);
      if (method.score == "mmd_fuse") s.custom = mmd_fuse_score(mmd);
      s.seed = static_cast<std::uint64_t>(trial);
      RngStream rng(1000 + trial);
      const DetectResult r = detect(student, "self" + std::to_string(truth), world.candidates, s, rng);
      ++total;
      if (r.prediction == truth) ++hits;
      else misses += std::string(" ") + score + "@" + std::to_string(trial);
    }
  }
  return {hits == total, std::to_string(hits) + "/" + std::to_string(total) + " correct over 20 trials x 4 score kinds" +
                             (misses.empty() ? "" : ", missed:" + misses) + ", " + fixed(seconds_since(start), 1) + " s"};
}

const ReportRow* find_row(const std::vector<ReportRow>& rows, const std::string& method, std::size_t n) {
  for (const ReportRow& r : rows)
    if (r.method == method && r.input_size == n) return &r;
  return nullptr;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const ExperimentConfig config = desk_config();
  std::vector<std::pair<int, Outcome>> results;
  auto report = [&](int id, Outcome o) {
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")" << std::endl;
    results.emplace_back(id, std::move(o));
  };

  report(1, numerical_core());
  report(2, score_oracles());
  report(3, calibration());

  const World world0 = build_world(config, 0, {}, 1);
  report(4, self_detection(world0, config));

  // Criteria 5 and 6: the desk grid over five seeds.
  {
    const auto start = Clock::now();
    ExperimentConfig bench = config;
    bench.methods = {{"Ours(KL)", InputSource::synthetic, NoiseFilter::none, "point_kl"},
                     {"MIA Filter + KL", InputSource::noise, NoiseFilter::mia, "point_kl"},
                     {"OOD Filter + KL", InputSource::noise, NoiseFilter::ood, "point_kl"}};
    bench.input_sizes = {5, 100};
    const BenchResult r = run_bench(bench);
    const double t = seconds_since(start);
    const ReportRow* ours = find_row(r.rows, "Ours(KL)", 100);
    const ReportRow* ours5 = find_row(r.rows, "Ours(KL)", 5);
    const ReportRow* mia = find_row(r.rows, "MIA Filter + KL", 100);
    const ReportRow* ood = find_row(r.rows, "OOD Filter + KL", 100);
    if (!r.errors.empty() || !ours || !ours5 || !mia || !ood) {
      report(5, {false, "benchmark cells failed: " + std::to_string(r.errors.size())});
      report(6, {false, "benchmark cells failed"});
    } else {
      const bool ok5 = ours->accuracy_mean >= 2.0 / 3.0 && *ours->auc_mean >= 0.80 &&
                       ours->accuracy_mean > mia->accuracy_mean && ours->accuracy_mean > ood->accuracy_mean &&
                       t < 600.0;
      report(5, {ok5, "Ours(KL) N=100 acc " + fixed(ours->accuracy_mean) + " auc " + fixed(*ours->auc_mean) +
                          "; MIA acc " + fixed(mia->accuracy_mean) + "; OOD acc " + fixed(ood->accuracy_mean) + "; " +
                          std::to_string(ours->seeds) + " seeds, " + fixed(t, 1) + " s"});
      // Means over the same five seeds; allow for summation-order rounding.
      const bool ok6 = *ours->auc_mean >= *ours5->auc_mean - 1e-12;
      report(6, {ok6, "Ours(KL) mean auc N=100 " + fixed(*ours->auc_mean) + " vs N=5 " + fixed(*ours5->auc_mean)});
    }
  }

  // Criterion 7.
  {
    const auto start = Clock::now();
    ExperimentConfig sweep = config;
    sweep.lambda_grid = {0.1, 0.7, 0.9};
    const SweepResult r = run_lambda_sweep(sweep);
    double kl_low = 0.0, kl_high = 0.0;
    for (const SweepPoint& p : r.points) {
      if (p.lambda == 0.1) kl_low = p.kl_teacher;
      if (p.lambda == 0.9) kl_high = p.kl_teacher;
    }
    int runs = 0, wins = 0;
    for (const SweepRun& run : r.runs) {
      if (run.lambda < 0.7) continue;
      ++runs;
      wins += run.point_teacher > run.point_independent;
    }
    const double rate = runs ? wins / double(runs) : 0.0;
    report(7, {kl_high < kl_low && rate >= 0.8,
               "mean KL to teacher lambda 0.9 " + fixed(kl_high, 5) + " vs 0.1 " + fixed(kl_low, 5) +
                   "; teacher beats independent in " + fixed(rate) + " of " + std::to_string(runs) +
                   " runs with lambda >= 0.7; " + fixed(seconds_since(start), 1) + " s"});
  }

  // Criterion 8.
  {
    const auto start = Clock::now();
    std::vector<PairwiseRecord> records;
    for (std::uint64_t seed : config.seeds) {
      const World w = seed == 0 ? world0 : build_world(config, seed, {}, 1);
      GeneratorCache cache;
      const std::vector<PairwiseRecord> recs = run_pairwise(config, w, &cache);
      records.insert(records.end(), recs.begin(), recs.end());
    }
    const BinaryMetrics m = binary_metrics(records);
    const double t = seconds_since(start);
    report(8, {m.f1 >= 0.7 && m.auc >= 0.8 && t < 300.0,
               std::to_string(m.pairs) + " pairs, f1 " + fixed(m.f1) + " auc " + fixed(m.auc) + " precision " +
                   fixed(m.precision) + " recall " + fixed(m.recall) + ", " + fixed(t, 1) + " s"});
  }

  // Criterion 9.
  {
    const auto root = std::filesystem::temp_directory_path() / "kdd_acceptance_repro";
    std::filesystem::remove_all(root);
    ExperimentConfig small = config;
    small.seeds = {0};
    small.input_sizes = {10};
    small.methods = {{"Ours(KL)", InputSource::synthetic, NoiseFilter::none, "point_kl"},
                     {"OOD Filter + KL", InputSource::noise, NoiseFilter::ood, "point_kl"}};
    write_file(root / "config.json", to_json(small).dump(2));
    bool same = true;
    std::string detail;
    for (const char* run : {"a", "b"}) {
      const std::string cmd = std::string("\"") + KDD_CLI_PATH + "\" bench --config \"" +
                              (root / "config.json").string() + "\" --out \"" + (root / run).string() + "\" > \"" +
                              (root / (std::string(run) + ".log")).string() + "\" 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        same = false;
        detail += std::string("run ") + run + " failed; ";
      }
    }
    std::size_t compared = 0;
    if (same) {
      for (const auto& entry : std::filesystem::recursive_directory_iterator(root / "a")) {
        if (entry.path().extension() != ".csv") continue;
        const auto other = root / "b" / std::filesystem::relative(entry.path(), root / "a");
        if (!std::filesystem::exists(other) || read_file(entry.path()) != read_file(other)) same = false;
        ++compared;
      }
    }
    detail += std::to_string(compared) + " report CSVs byte-identical: " + (same && compared ? "yes" : "no");

    bool exact = true;
    for (const ClassifierModel& m : world0.teachers) {
      const auto path = root / "model.ckpt";
      save_model(path, m);
      const Matrix probe = RngStream(9).normal_matrix(50, m.architecture().input_dim);
      exact = exact && evaluate(load_model(path), probe) == evaluate(m, probe);
    }
    detail += std::string("; checkpoint forward bit-exact: ") + (exact ? "yes" : "no");
    std::filesystem::remove_all(root);
    report(9, {same && compared > 0 && exact, detail});
  }

  int failed = 0;
  for (const auto& [id, o] : results) failed += !o.pass;
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
