#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kdd/harness/config.hpp"
#include "kdd/pipeline/pipeline.hpp"

namespace kdd {

// Seed for a named sub-stream of an experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// Everything trained for one experiment seed.
struct World {
  std::uint64_t seed = 0;
  Dataset train;
  Dataset holdout;
  std::vector<ClassifierModel> teachers;
  CandidateSet candidates;
  // One student per (student architecture, teacher), architecture-major; the
  // truth is the teacher index.
  std::vector<StudentEntry> students;
  std::vector<std::string> student_architectures;
};

// Dataset split of a world; no models.
World build_world_data(const ExperimentConfig& config, std::uint64_t seed);

// Trains teachers and distills the student grid. `lambda` overrides the
// configured distillation weight. Work runs on up to `threads` workers.
World build_world(const ExperimentConfig& config, std::uint64_t seed, std::optional<double> lambda = {},
                  std::size_t threads = 1);

// Detection settings for a method at input size n within a world.
DetectSettings method_settings(const ExperimentConfig& config, const MethodSpec& method, std::size_t n,
                               const World& world);

struct RunRecord {
  std::string method;
  std::size_t input_size = 0;
  std::uint64_t seed = 0;
  DetectionReport report;
};

struct ReportRow {
  std::string method;
  std::size_t input_size = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  std::optional<double> auc_mean;
  std::optional<double> auc_std;
  std::size_t seeds = 0;
};

// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
std::pair<double, double> mean_std(const std::vector<double>& values);

// One row per (method, input size) in first-appearance order.
std::vector<ReportRow> aggregate(const std::vector<RunRecord>& runs);

std::string report_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> report_rows_from_csv(const std::string& text);

struct PairwiseRecord {
  std::uint64_t seed = 0;
  std::string student;
  std::string candidate;
  bool positive = false;
  TestResult result;
};

struct BinaryMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.5;  // of -p over positive vs negative pairs, ties one half
  std::size_t pairs = 0;
};

BinaryMetrics binary_metrics(const std::vector<PairwiseRecord>& records);
std::string pairwise_csv(const std::vector<PairwiseRecord>& records);

// Every student against its true teacher and every other candidate.
std::vector<PairwiseRecord> run_pairwise(const ExperimentConfig& config, const World& world,
                                         GeneratorCache* cache = nullptr);

struct BenchResult {
  std::vector<RunRecord> runs;
  std::vector<ReportRow> rows;
  std::vector<PairwiseRecord> pairwise;
  std::optional<BinaryMetrics> pairwise_metrics;
  std::vector<std::string> errors;  // failed cells; the rest still ran
};

BenchResult run_bench(const ExperimentConfig& config);

// report.csv, runs/<method>_n<N>_seed<s>.{csv,json}, pairwise.csv and
// pairwise.json when enabled, errors.json when any cell failed.
void write_bench(const std::filesystem::path& dir, const BenchResult& result);

struct SweepRun {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::string student;
  double kl_teacher = 0.0;
  double kl_independent = 0.0;
  double acs_teacher = 0.0;
  double acs_independent = 0.0;
  double point_teacher = 0.0;
  double point_independent = 0.0;
};

struct SweepPoint {
  double lambda = 0.0;
  double kl_teacher = 0.0;
  double kl_independent = 0.0;
  double one_minus_acs_teacher = 0.0;
  double one_minus_acs_independent = 0.0;
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::vector<SweepPoint> points;
};

// For each lambda and seed, distills the student grid and compares every
// student with its teacher and with an independently trained model of the
// student's architecture, on the held-out split or on synthetic probes of the
// largest input size (config.sweep_inputs).
SweepResult run_lambda_sweep(const ExperimentConfig& config);

std::string sweep_csv(const std::vector<SweepPoint>& points);
std::string sweep_runs_csv(const std::vector<SweepRun>& runs);
// Two panels (KL, 1 - ACS), one polyline per series.
std::string sweep_svg(const std::vector<SweepPoint>& points);
void write_sweep(const std::filesystem::path& dir, const SweepResult& result);

}  // namespace kdd
