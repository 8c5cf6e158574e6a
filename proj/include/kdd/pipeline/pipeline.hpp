#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kdd/baselines/baselines.hpp"
#include "kdd/models/dataset.hpp"
#include "kdd/models/mlp.hpp"
#include "kdd/numerics/rng.hpp"
#include "kdd/scores/scores.hpp"
#include "kdd/synthesis/synthesis.hpp"

namespace kdd {

// A candidate teacher seen only through its API: logits for a batch of inputs.
class QueryModel {
 public:
  virtual ~QueryModel() = default;
  virtual Matrix query(const Matrix& inputs) const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_classes() const = 0;
};

// Eval-mode logits of a held model.
class ModelQuery final : public QueryModel {
 public:
  explicit ModelQuery(ClassifierModel model);
  Matrix query(const Matrix& inputs) const override;
  std::size_t input_dim() const override { return model_.architecture().input_dim; }
  std::size_t num_classes() const override { return model_.architecture().num_classes; }

 private:
  ClassifierModel model_;
};

std::shared_ptr<const QueryModel> as_query(ClassifierModel model);

struct Candidate {
  std::string id;
  std::shared_ptr<const QueryModel> model;
};

struct CandidateSet {
  std::vector<Candidate> candidates;

  std::size_t size() const noexcept { return candidates.size(); }
  std::vector<std::string> ids() const;
  // K >= 1, ids unique and nonempty, every model present.
  void validate() const;
};

CandidateSet make_candidate_set(const std::vector<std::pair<std::string, ClassifierModel>>& models);

enum class NoiseFilter { none, ood, mia };

std::string to_string(NoiseFilter f);
NoiseFilter noise_filter_from_string(const std::string& s);

// Score of one candidate for ScoreKind::custom. Receives the student's and
// the candidate's logits on the probe set and a stream private to the pair.
using CustomScore = std::function<double(const Matrix& student_outputs, const Matrix& candidate_outputs,
                                         RngStream& rng)>;

// p-value of an MMD-FUSE test between the two output sets. The null is "same
// distribution", so a larger p-value means closer alignment.
CustomScore mmd_fuse_score(MmdFuseConfig config);

struct DetectSettings {
  InputSource source = InputSource::synthetic;
  std::size_t n = 100;
  ScoreKind kind = ScoreKind::point_kl;
  ScoreConfig score;
  CustomScore custom;
  std::string custom_name = "custom";

  // Synthetic source. The generator seed is derived from (student id, seed).
  SynthesisConfig synthesis;
  std::size_t latent_dim = 16;
  std::size_t embed_dim = 32;
  std::vector<std::size_t> generator_hidden = {64, 64};

  // Noise source only.
  NoiseFilter filter = NoiseFilter::none;
  double ood_keep = 0.5;
  MiaFilterConfig mia;

  // Oracle source: genuine training-distribution rows.
  const Dataset* oracle_data = nullptr;

  std::uint64_t seed = 0;
  // Workers for candidate queries inside one call and for students in
  // run_matrix. 0 means default_thread_count().
  std::size_t threads = 1;

  void validate() const;
  std::string method_name() const;
};

// Trained generators keyed by (student id, seed). Safe to share across threads.
class GeneratorCache {
 public:
  Generator get_or_train(const std::string& student_id, std::uint64_t seed,
                         const std::function<Generator()>& train);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::uint64_t>, std::shared_ptr<const Generator>> entries_;
};

// Seed of the generator trained for a student under detection.
std::uint64_t generator_seed(const std::string& student_id, std::uint64_t seed);

// Probe inputs of size settings.n for the student. Noise inputs pass through
// the configured filter; the filter draws extra rows so that up to n remain.
InputSet build_probe_set(const ClassifierModel& student, const std::string& student_id,
                         const DetectSettings& settings, RngStream& rng, GeneratorCache* cache = nullptr);

struct DetectResult {
  std::size_t prediction = 0;
  std::vector<double> scores;  // one per candidate, CandidateSet order
  InputSet inputs;
  Matrix student_outputs;
  std::vector<Matrix> candidate_outputs;
};

// Builds the probe set, evaluates the student and every candidate on it and
// returns the argmax of the scores. Candidates are only queried.
DetectResult detect(const ClassifierModel& student, const std::string& student_id, const CandidateSet& candidates,
                    const DetectSettings& settings, RngStream& rng, GeneratorCache* cache = nullptr);

// Scoring step of detect on a given probe set.
DetectResult detect_on_inputs(const ClassifierModel& student, const CandidateSet& candidates, InputSet inputs,
                              const DetectSettings& settings, RngStream& rng);

struct StudentEntry {
  std::string id;
  std::shared_ptr<const ClassifierModel> model;
  std::optional<std::size_t> truth;  // index of the true teacher in the candidate set
};

struct DetectionReport {
  ScoreMatrix score_matrix;
  std::vector<std::size_t> predictions;
  std::vector<std::optional<std::size_t>> truths;
  std::optional<double> accuracy;
  std::optional<double> auc;
  std::string method;
  std::size_t input_size = 0;
  InputSource input_source = InputSource::synthetic;
  std::uint64_t seed = 0;

  void validate() const;
};

// Fills accuracy and AUC from the score matrix when every student has a
// truth (AUC needs K >= 2).
void summarize(DetectionReport& report);

// detect for every student. Student i uses RngStream(settings.seed).split(i),
// so the report does not depend on the thread count.
DetectionReport run_matrix(const std::vector<StudentEntry>& students, const CandidateSet& candidates,
                           const DetectSettings& settings, GeneratorCache* cache = nullptr);

// Score rows as CSV; summary as JSON.
nlohmann::json summary_json(const DetectionReport& report);
// Writes <stem>.csv and <stem>.json under dir.
void write_report(const std::filesystem::path& dir, const std::string& stem, const DetectionReport& report);

struct PairwiseConfig {
  double alpha = 0.05;
  std::size_t permutations = 1000;
};

// HSIC independence test between the paired logits of student and candidate
// on the probe set; decision true means "distilled".
TestResult pairwise_detect(const ClassifierModel& student, const QueryModel& candidate, const InputSet& inputs,
                           const PairwiseConfig& config, RngStream& rng);

}  // namespace kdd
