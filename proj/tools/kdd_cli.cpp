#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "kdd/error.hpp"
#include "kdd/harness/harness.hpp"
#include "kdd/models/checkpoint.hpp"
#include "kdd/numerics/matrix_io.hpp"

using namespace kdd;

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig config = c.config_path.empty() ? desk_benchmark_config() : load_config(c.config_path);
  if (c.seed) config.seeds = {*c.seed};
  if (!c.out.empty()) config.output_dir = c.out;
  config.validate();
  return config;
}

std::uint64_t first_seed(const Common& c, const ExperimentConfig& config) { return c.seed.value_or(config.seeds.front()); }

Dataset load_labeled(const std::string& path) {
  const Matrix m = load_csv(path);
  if (m.cols() < 2) throw InvalidInput("dataset file needs feature columns and a label column");
  Dataset d;
  d.features = Matrix(m.rows(), m.cols() - 1);
  std::size_t classes = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c + 1 < m.cols(); ++c) d.features(r, c) = m(r, c);
    const double y = m(r, m.cols() - 1);
    if (y < 0 || y != std::floor(y)) throw InvalidInput("dataset labels must be nonnegative integers");
    d.labels.push_back(static_cast<std::size_t>(y));
    classes = std::max(classes, d.labels.back() + 1);
  }
  d.num_classes = classes;
  d.validate();
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge distillation detection: synthesis, alignment scores and desk-scale benchmarks"};
  app.require_subcommand(1);
  spdlog::set_level(spdlog::level::warn);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress");

  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "Experiment config (JSON); the desk benchmark when omitted");
    sub->add_option("--seed", c.seed, "Seed (replaces the config's seed list)");
    sub->add_option("--out", c.out, "Output directory or file");
  };

  Common bench_opts;
  std::vector<std::size_t> bench_n;
  bool bench_pairwise = false;
  std::optional<double> bench_alpha;
  CLI::App* bench = app.add_subcommand("bench", "Run the detection benchmark grid");
  add_common(bench, bench_opts);
  bench->add_option("--n", bench_n, "Input sizes (replace the config's list)");
  bench->add_flag("--pairwise", bench_pairwise, "Also run the pairwise HSIC protocol");
  bench->add_option("--alpha", bench_alpha, "Significance level of the pairwise test");

  Common sweep_opts;
  CLI::App* sweep = app.add_subcommand("sweep-lambda", "Distillation-weight sweep with CSV and SVG output");
  add_common(sweep, sweep_opts);

  Common detect_opts;
  std::string student_path, data_path, score_kind = "point_kl", source = "synthetic";
  std::vector<std::string> candidate_paths;
  std::size_t n = 100;
  bool pairwise = false;
  double alpha = 0.05;
  CLI::App* detect_cmd = app.add_subcommand("detect", "Which candidate was the student distilled from");
  add_common(detect_cmd, detect_opts);
  detect_cmd->add_option("--student", student_path, "Student checkpoint")->required();
  detect_cmd->add_option("--candidate", candidate_paths, "Candidate checkpoints, in order")->required();
  detect_cmd->add_option("--score-kind", score_kind, "Score")->check(CLI::IsMember({"point_kl", "acs", "cka"}));
  detect_cmd->add_option("--source", source, "Probe inputs")->check(CLI::IsMember({"synthetic", "noise", "oracle"}));
  detect_cmd->add_option("--n", n, "Probe set size");
  detect_cmd->add_option("--data", data_path, "CSV of features plus a label column (oracle source)");
  detect_cmd->add_flag("--pairwise", pairwise, "Also report HSIC p-values per candidate");
  detect_cmd->add_option("--alpha", alpha, "Significance level of the pairwise test");

  Common synth_opts;
  std::string synth_student, synth_source = "synthetic";
  std::size_t synth_n = 100;
  CLI::App* synth = app.add_subcommand("synth", "Write a probe input set for a student");
  add_common(synth, synth_opts);
  synth->add_option("--student", synth_student, "Student checkpoint")->required();
  synth->add_option("--source", synth_source, "Probe inputs")->check(CLI::IsMember({"synthetic", "noise"}));
  synth->add_option("--n", synth_n, "Number of inputs");

  Common train_opts;
  std::string train_arch;
  CLI::App* train = app.add_subcommand("train", "Train a classifier on the config's dataset");
  add_common(train, train_opts);
  train->add_option("--arch", train_arch, "Architecture name from the config")->required();

  Common distill_opts;
  std::string distill_teacher, distill_arch;
  std::optional<double> distill_lambda;
  CLI::App* distill = app.add_subcommand("distill", "Distill a student from a teacher checkpoint");
  add_common(distill, distill_opts);
  distill->add_option("--teacher", distill_teacher, "Teacher checkpoint")->required();
  distill->add_option("--arch", distill_arch, "Student architecture name from the config")->required();
  distill->add_option("--lambda", distill_lambda, "Distillation weight");

  CLI::App* print_config = app.add_subcommand("print-config", "Print the resolved config as JSON");
  Common print_opts;
  print_config->add_option("--config", print_opts.config_path, "Experiment config (JSON); the desk benchmark when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }
  if (verbose) spdlog::set_level(spdlog::level::info);

  try {
    if (*bench) {
      ExperimentConfig config = resolve_config(bench_opts);
      if (!bench_n.empty()) config.input_sizes = bench_n;
      if (bench_pairwise) config.pairwise.enabled = true;
      if (bench_alpha) config.pairwise.alpha = *bench_alpha;
      config.validate();
      const BenchResult result = run_bench(config);
      write_bench(config.output_dir, result);
      std::cout << report_csv(result.rows);
      if (result.pairwise_metrics)
        std::cout << "pairwise f1 " << result.pairwise_metrics->f1 << " auc " << result.pairwise_metrics->auc << "\n";
      if (!result.errors.empty()) {
        std::cerr << result.errors.size() << " cells failed; see errors.json\n";
        return kRuntimeExit;
      }
      return 0;
    }
    if (*sweep) {
      const ExperimentConfig config = resolve_config(sweep_opts);
      const SweepResult result = run_lambda_sweep(config);
      write_sweep(config.output_dir, result);
      std::cout << sweep_csv(result.points);
      return 0;
    }
    if (*detect_cmd) {
      const ExperimentConfig config = resolve_config(detect_opts);
      const ClassifierModel student = load_model(student_path);
      std::vector<std::pair<std::string, ClassifierModel>> models;
      for (std::size_t i = 0; i < candidate_paths.size(); ++i)
        models.emplace_back(std::to_string(i) + ":" + candidate_paths[i], load_model(candidate_paths[i]));
      const CandidateSet candidates = make_candidate_set(models);

      MethodSpec method;
      method.source = input_source_from_string(source);
      method.score = score_kind;
      World world;
      world.seed = first_seed(detect_opts, config);
      if (method.source == InputSource::oracle) {
        if (data_path.empty()) throw ConfigError("--data", "the oracle source needs a dataset file");
        world.train = load_labeled(data_path);
      }
      const DetectSettings settings = method_settings(config, method, n, world);
      RngStream rng(world.seed);
      const DetectResult r = detect(student, "student", candidates, settings, rng);

      nlohmann::json out;
      out["prediction"] = r.prediction;
      out["predicted_candidate"] = candidate_paths[r.prediction];
      out["score_kind"] = score_kind;
      out["source"] = source;
      out["n"] = r.inputs.size();
      out["seed"] = world.seed;
      out["candidates"] = nlohmann::json::array();
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        nlohmann::json entry = {{"path", candidate_paths[c]}, {"score", r.scores[c]}};
        if (pairwise) {
          RngStream test_rng = rng.split(c);
          const TestResult t = pairwise_detect(student, *candidates.candidates[c].model, r.inputs,
                                               {alpha, config.pairwise.permutations}, test_rng);
          entry["hsic"] = to_json(t);
        }
        out["candidates"].push_back(entry);
      }
      const std::string text = out.dump(2) + "\n";
      if (!detect_opts.out.empty()) write_file(detect_opts.out, text);
      std::cout << text;
      return 0;
    }
    if (*synth) {
      const ExperimentConfig config = resolve_config(synth_opts);
      if (synth_opts.out.empty()) throw ConfigError("--out", "an output file is required");
      const ClassifierModel student = load_model(synth_student);
      MethodSpec method;
      method.source = input_source_from_string(synth_source);
      World world;
      world.seed = first_seed(synth_opts, config);
      const DetectSettings settings = method_settings(config, method, synth_n, world);
      RngStream rng(world.seed);
      const InputSet set = build_probe_set(student, "student", settings, rng);
      save_input_set(synth_opts.out, set);
      std::cout << "wrote " << set.size() << " inputs to " << synth_opts.out << "\n";
      return 0;
    }
    if (*train) {
      const ExperimentConfig config = resolve_config(train_opts);
      if (train_opts.out.empty()) throw ConfigError("--out", "an output file is required");
      const std::uint64_t seed = first_seed(train_opts, config);
      const World world = build_world_data(config, seed);
      TrainConfig tc = config.teacher_training;
      tc.seed = derive_seed(seed, 2, 0);
      const ClassifierModel model = train_classifier(config.architecture(train_arch), world.train, tc);
      save_model(train_opts.out, model);
      std::cout << "holdout accuracy " << classification_accuracy(model, world.holdout) << "\n";
      return 0;
    }
    if (*print_config) {
      std::cout << to_json(resolve_config(print_opts)).dump(2) << "\n";
      return 0;
    }
    if (*distill) {
      const ExperimentConfig config = resolve_config(distill_opts);
      if (distill_opts.out.empty()) throw ConfigError("--out", "an output file is required");
      const std::uint64_t seed = first_seed(distill_opts, config);
      const World world = build_world_data(config, seed);
      const ClassifierModel teacher = load_model(distill_teacher);
      DistillConfig dc = config.distill;
      if (distill_lambda) dc.lambda = *distill_lambda;
      dc.train.seed = derive_seed(seed, 3, 0);
      const ClassifierModel student = distill_student(teacher, config.architecture(distill_arch), world.train, dc);
      save_model(distill_opts.out, student);
      std::cout << "holdout accuracy " << classification_accuracy(student, world.holdout) << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kRuntimeExit;
  }
  return 0;
}
