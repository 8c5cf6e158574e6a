#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdd/numerics/linalg.hpp"
#include "kdd/numerics/matrix.hpp"

namespace kdd {

enum class PointDelta { kl, l2 };

struct PointScoreConfig {
  PointDelta delta = PointDelta::kl;
  double epsilon = 1e-6;

  void validate() const;
};

struct BandwidthPolicy {
  enum class Kind { median_heuristic, fixed };
  Kind kind = Kind::median_heuristic;
  double fixed_value = 1.0;

  void validate() const;
  static BandwidthPolicy fixed(double value) { return {Kind::fixed, value}; }
};

enum class ScoreKind { point_kl, acs, cka, custom };

struct ScoreConfig {
  PointScoreConfig point;
  BandwidthPolicy bandwidth;
  // Left centering (H K) follows the set-level formula as written; two-sided
  // (H K H) is the symmetric convention.
  CenterMode cka_centering = CenterMode::left;
};

// KL(softmax(p) || softmax(q)) in log space.
double kl_divergence(std::span<const double> p_logits, std::span<const double> q_logits);

// Per-row distances between student and teacher outputs: KL(student || teacher)
// of the softmax rows, or the Euclidean distance between the rows.
std::vector<double> point_distances(const Matrix& student_outputs, const Matrix& teacher_outputs, PointDelta delta);
// mean_n 1 / (distance_n + epsilon).
double point_score_from_distances(std::span<const double> distances, double epsilon);
double point_score(const Matrix& student_outputs, const Matrix& teacher_outputs, const PointScoreConfig& config);

// Mean row cosine between H g and H f R, R the Procrustes rotation aligning
// H f to H g. Rows with zero norm contribute 0.
double acs(const Matrix& g, const Matrix& f);

// Bandwidth for one set under the policy. The median heuristic uses the
// median pairwise distance, falling back to the median of the positive
// distances when more than half of the pairs coincide.
double select_bandwidth(const Matrix& x, const BandwidthPolicy& policy);

// Tr(Kx' Ky') / (||Kx'||_F ||Ky'||_F) with K' the centered RBF kernels.
double cka_rbf(const Matrix& x, const Matrix& y, const BandwidthPolicy& policy = {},
               CenterMode centering = CenterMode::left);

std::string to_string(ScoreKind k);
ScoreKind score_kind_from_string(const std::string& s);
std::string to_string(PointDelta d);

// Score of one candidate's outputs against the student's, higher meaning more
// aligned. point_kl uses config.point with KL; custom is rejected.
double score_outputs(const Matrix& student_outputs, const Matrix& candidate_outputs, ScoreKind kind,
                     const ScoreConfig& config = {});
// One score per candidate; every candidate must be evaluated on the same rows.
std::vector<double> score_candidates(const Matrix& student_outputs, std::span<const Matrix> candidate_outputs,
                                     ScoreKind kind, const ScoreConfig& config = {});

struct ScoreMatrix {
  Matrix values;  // students x candidates
  std::vector<std::string> student_ids;
  std::vector<std::string> candidate_ids;
  ScoreKind kind = ScoreKind::point_kl;

  void validate() const;
};

// Header "student,candidate,score_kind,score", one line per entry.
std::string to_csv(const ScoreMatrix& m);
ScoreMatrix score_matrix_from_csv(const std::string& text);

// argmax with ties broken toward the lowest index.
std::size_t predict_teacher(std::span<const double> scores);
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> truths);
// Mean over students of the Mann-Whitney AUC of the true candidate's score
// against the others (ties count one half).
double auc_one_vs_rest(const Matrix& scores, std::span<const std::size_t> truths);
double auc_one_vs_rest(const ScoreMatrix& scores, std::span<const std::size_t> truths);

}  // namespace kdd
