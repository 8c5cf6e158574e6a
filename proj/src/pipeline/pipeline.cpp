#include "kdd/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kdd/error.hpp"
#include "kdd/numerics/matrix_io.hpp"
#include "kdd/parallel.hpp"

namespace kdd {

namespace {

std::vector<std::size_t> first_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

InputSet truncate(InputSet set, std::size_t n) {
  if (set.size() <= n) return set;
  const std::vector<std::size_t> rows = first_rows(n);
  set.inputs = set.inputs.select_rows(rows);
  if (!set.labels.empty()) set.labels.resize(n);
  return set;
}

void check_compatible(const ClassifierModel& student, const CandidateSet& candidates) {
  const MlpArchitecture& arch = student.architecture();
  for (const Candidate& c : candidates.candidates)
    if (c.model->input_dim() != arch.input_dim || c.model->num_classes() != arch.num_classes)
      throw InvalidShape("candidate '" + c.id + "' does not match the student's input or class dimension");
}

}  // namespace

ModelQuery::ModelQuery(ClassifierModel model) : model_(std::move(model)) { model_.set_mode(Mode::eval); }

Matrix ModelQuery::query(const Matrix& inputs) const { return evaluate(model_, inputs); }

std::shared_ptr<const QueryModel> as_query(ClassifierModel model) {
  return std::make_shared<const ModelQuery>(std::move(model));
}

std::vector<std::string> CandidateSet::ids() const {
  std::vector<std::string> out;
  for (const Candidate& c : candidates) out.push_back(c.id);
  return out;
}

void CandidateSet::validate() const {
  if (candidates.empty()) throw InvalidInput("candidate set is empty");
  std::set<std::string> seen;
  for (const Candidate& c : candidates) {
    if (c.id.empty()) throw InvalidInput("candidate id is empty");
    if (!c.model) throw InvalidInput("candidate '" + c.id + "' has no model");
    if (!seen.insert(c.id).second) throw InvalidInput("duplicate candidate id '" + c.id + "'");
  }
}

CandidateSet make_candidate_set(const std::vector<std::pair<std::string, ClassifierModel>>& models) {
  CandidateSet set;
  for (const auto& [id, model] : models) set.candidates.push_back({id, as_query(model)});
  set.validate();
  return set;
}

std::string to_string(NoiseFilter f) {
  switch (f) {
    case NoiseFilter::none: return "none";
    case NoiseFilter::ood: return "ood";
    case NoiseFilter::mia: return "mia";
  }
  return "none";
}

NoiseFilter noise_filter_from_string(const std::string& s) {
  if (s == "none") return NoiseFilter::none;
  if (s == "ood") return NoiseFilter::ood;
  if (s == "mia") return NoiseFilter::mia;
  throw InvalidInput("unknown noise filter '" + s + "'");
}

CustomScore mmd_fuse_score(MmdFuseConfig config) {
  config.validate();
  return [config](const Matrix& s, const Matrix& c, RngStream& rng) { return mmd_fuse(s, c, config, rng).p_value; };
}

void DetectSettings::validate() const {
  if (n == 0) throw InvalidInput("detect: n must be positive");
  if (kind == ScoreKind::custom && !custom) throw InvalidInput("detect: custom score kind without a score function");
  if (source == InputSource::oracle && oracle_data == nullptr)
    throw InvalidInput("detect: oracle source needs a dataset");
  if (!(ood_keep > 0.0 && ood_keep <= 1.0)) throw InvalidInput("detect: ood_keep must lie in (0, 1]");
  score.point.validate();
  score.bandwidth.validate();
  if (source == InputSource::synthetic) synthesis.validate();
}

std::string DetectSettings::method_name() const {
  std::string score_name = kind == ScoreKind::custom ? custom_name : to_string(kind);
  std::string input_name = to_string(source);
  if (source == InputSource::noise && filter != NoiseFilter::none) input_name += "+" + to_string(filter);
  return input_name + "/" + score_name;
}

Generator GeneratorCache::get_or_train(const std::string& student_id, std::uint64_t seed,
                                       const std::function<Generator()>& train) {
  const auto key = std::make_pair(student_id, seed);
  {
    std::lock_guard lock(mutex_);
    if (const auto it = entries_.find(key); it != entries_.end()) return *it->second;
  }
  // Trained outside the lock; a concurrent duplicate produces the same value.
  auto gen = std::make_shared<const Generator>(train());
  std::lock_guard lock(mutex_);
  return *entries_.emplace(key, gen).first->second;
}

std::size_t GeneratorCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::uint64_t generator_seed(const std::string& student_id, std::uint64_t seed) {
  // FNV-1a over the id, then mixed with the seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : student_id) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return mix64(h ^ mix64(seed));
}

InputSet build_probe_set(const ClassifierModel& student, const std::string& student_id,
                         const DetectSettings& settings, RngStream& rng, GeneratorCache* cache) {
  settings.validate();
  const MlpArchitecture& arch = student.architecture();
  switch (settings.source) {
    case InputSource::synthetic: {
      SynthesisConfig cfg = settings.synthesis;
      cfg.seed = generator_seed(student_id, settings.seed);
      const GeneratorSpec spec =
          generator_spec_for(arch, settings.latent_dim, settings.embed_dim, settings.generator_hidden);
      auto train = [&] { return train_generator(student, spec, cfg); };
      const Generator gen = cache ? cache->get_or_train(student_id, settings.seed, train) : train();
      return build_input_set(gen, settings.n, rng);
    }
    case InputSource::noise: {
      switch (settings.filter) {
        case NoiseFilter::none: return noise_input_set(settings.n, arch.input_dim, rng);
        case NoiseFilter::ood: {
          const auto pool = static_cast<std::size_t>(std::ceil(static_cast<double>(settings.n) / settings.ood_keep));
          return truncate(ood_filter(noise_input_set(pool, arch.input_dim, rng), student, settings.ood_keep),
                          settings.n);
        }
        case NoiseFilter::mia: {
          // The filter trains on half the pool and keeps roughly half of the
          // rest, so 6n rows usually leave at least n.
          const std::size_t pool = std::max<std::size_t>(6 * settings.n, 4);
          return truncate(mia_filter(noise_input_set(pool, arch.input_dim, rng), student, rng, settings.mia),
                          settings.n);
        }
      }
      break;
    }
    case InputSource::oracle: return oracle_input_set(*settings.oracle_data, settings.n, rng);
  }
  throw InvalidInput("build_probe_set: unknown source");
}

DetectResult detect_on_inputs(const ClassifierModel& student, const CandidateSet& candidates, InputSet inputs,
                              const DetectSettings& settings, RngStream& rng) {
  candidates.validate();
  check_compatible(student, candidates);
  if (inputs.inputs.cols() != student.architecture().input_dim)
    throw InvalidShape("detect: probe inputs do not match the student's input dimension");
  inputs.validate(student.architecture().num_classes);

  DetectResult result;
  result.student_outputs = evaluate(student, inputs.inputs);
  const std::size_t k = candidates.size();
  result.candidate_outputs.resize(k);
  result.scores.resize(k);
  // Per-candidate streams keep custom scores independent of scheduling.
  std::vector<RngStream> streams;
  const RngStream base(rng.next_u64());
  for (std::size_t c = 0; c < k; ++c) streams.push_back(base.split(c));
  const Matrix& probe = inputs.inputs;
  parallel_for(
      k,
      [&](std::size_t c) {
        result.candidate_outputs[c] = candidates.candidates[c].model->query(probe);
        const Matrix& out = result.candidate_outputs[c];
        if (out.rows() != probe.rows() || out.cols() != student.architecture().num_classes)
          throw InvalidShape("candidate '" + candidates.candidates[c].id + "' returned outputs of the wrong shape");
        result.scores[c] = settings.kind == ScoreKind::custom
                               ? settings.custom(result.student_outputs, out, streams[c])
                               : score_outputs(result.student_outputs, out, settings.kind, settings.score);
      },
      settings.threads);
  result.prediction = predict_teacher(result.scores);
  result.inputs = std::move(inputs);
  return result;
}

DetectResult detect(const ClassifierModel& student, const std::string& student_id, const CandidateSet& candidates,
                    const DetectSettings& settings, RngStream& rng, GeneratorCache* cache) {
  candidates.validate();
  check_compatible(student, candidates);
  InputSet inputs = build_probe_set(student, student_id, settings, rng, cache);
  return detect_on_inputs(student, candidates, std::move(inputs), settings, rng);
}

void DetectionReport::validate() const {
  score_matrix.validate();
  if (predictions.size() != score_matrix.values.rows()) throw InvalidShape("report: one prediction per student");
  if (!truths.empty() && truths.size() != predictions.size()) throw InvalidShape("report: one truth per student");
  for (std::size_t s = 0; s < predictions.size(); ++s)
    if (predictions[s] != predict_teacher(score_matrix.values.row(s)))
      throw InvalidInput("report: prediction disagrees with the score row");
}

void summarize(DetectionReport& report) {
  report.accuracy.reset();
  report.auc.reset();
  if (report.truths.empty()) return;
  std::vector<std::size_t> truths;
  for (const auto& t : report.truths) {
    if (!t) return;
    truths.push_back(*t);
  }
  report.accuracy = accuracy(report.predictions, truths);
  if (report.score_matrix.values.cols() >= 2) report.auc = auc_one_vs_rest(report.score_matrix, truths);
}

DetectionReport run_matrix(const std::vector<StudentEntry>& students, const CandidateSet& candidates,
                           const DetectSettings& settings, GeneratorCache* cache) {
  if (students.empty()) throw InvalidInput("run_matrix: no students");
  candidates.validate();
  settings.validate();
  for (const StudentEntry& s : students) {
    if (!s.model) throw InvalidInput("run_matrix: student '" + s.id + "' has no model");
    if (s.truth && *s.truth >= candidates.size())
      throw InvalidInput("run_matrix: truth of '" + s.id + "' is out of range");
  }

  const std::size_t k = candidates.size();
  DetectionReport report;
  report.score_matrix.values = Matrix(students.size(), k);
  report.score_matrix.candidate_ids = candidates.ids();
  report.score_matrix.kind = settings.kind;
  report.predictions.resize(students.size());
  report.method = settings.method_name();
  report.input_size = settings.n;
  report.input_source = settings.source;
  report.seed = settings.seed;

  DetectSettings inner = settings;
  inner.threads = 1;
  const RngStream root(settings.seed);
  parallel_for(
      students.size(),
      [&](std::size_t i) {
        RngStream rng = root.split(i);
        const DetectResult r = detect(*students[i].model, students[i].id, candidates, inner, rng, cache);
        for (std::size_t c = 0; c < k; ++c) report.score_matrix.values(i, c) = r.scores[c];
        report.predictions[i] = r.prediction;
      },
      settings.threads);

  for (const StudentEntry& s : students) {
    report.score_matrix.student_ids.push_back(s.id);
    report.truths.push_back(s.truth);
  }
  summarize(report);
  return report;
}

nlohmann::json summary_json(const DetectionReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["score_kind"] = to_string(report.score_matrix.kind);
  j["input_source"] = to_string(report.input_source);
  j["input_size"] = report.input_size;
  j["seed"] = report.seed;
  j["students"] = report.score_matrix.student_ids;
  j["candidates"] = report.score_matrix.candidate_ids;
  j["predictions"] = report.predictions;
  nlohmann::json truths = nlohmann::json::array();
  for (const auto& t : report.truths) truths.push_back(t ? nlohmann::json(*t) : nlohmann::json());
  j["truths"] = truths;
  j["accuracy"] = report.accuracy ? nlohmann::json(*report.accuracy) : nlohmann::json();
  j["auc"] = report.auc ? nlohmann::json(*report.auc) : nlohmann::json();
  return j;
}

void write_report(const std::filesystem::path& dir, const std::string& stem, const DetectionReport& report) {
  report.validate();
  write_file(dir / (stem + ".csv"), to_csv(report.score_matrix));
  write_file(dir / (stem + ".json"), summary_json(report).dump(2) + "\n");
}

TestResult pairwise_detect(const ClassifierModel& student, const QueryModel& candidate, const InputSet& inputs,
                           const PairwiseConfig& config, RngStream& rng) {
  const MlpArchitecture& arch = student.architecture();
  if (candidate.input_dim() != arch.input_dim || candidate.num_classes() != arch.num_classes)
    throw InvalidShape("pairwise_detect: candidate does not match the student's dimensions");
  if (inputs.inputs.cols() != arch.input_dim) throw InvalidShape("pairwise_detect: probe inputs have the wrong width");
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw InvalidInput("pairwise_detect: alpha must lie in (0, 1)");
  return hsic_test(evaluate(student, inputs.inputs), candidate.query(inputs.inputs), config.permutations, rng,
                   config.alpha);
}

}  // namespace kdd
