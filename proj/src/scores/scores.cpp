#include "kdd/scores/scores.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kdd/error.hpp"
#include "kdd/numerics/kernel.hpp"
#include "kdd/numerics/matrix_io.hpp"

namespace kdd {

void PointScoreConfig::validate() const {
  if (!(epsilon > 0.0)) throw InvalidInput("point score: epsilon must be positive");
}

void BandwidthPolicy::validate() const {
  if (kind == Kind::fixed && !(fixed_value > 0.0 && std::isfinite(fixed_value)))
    throw InvalidBandwidth("fixed bandwidth must be positive and finite");
}

double kl_divergence(std::span<const double> p_logits, std::span<const double> q_logits) {
  if (p_logits.size() != q_logits.size()) throw InvalidShape("kl_divergence: length mismatch");
  if (p_logits.size() < 2) throw InvalidInput("kl_divergence: at least two classes required");
  // Logits that differ by a constant give identical distributions.
  bool shifted = true;
  for (std::size_t c = 1; c < p_logits.size() && shifted; ++c)
    shifted = p_logits[c] - q_logits[c] == p_logits[0] - q_logits[0];
  if (shifted) return 0.0;
  const double lp = logsumexp(p_logits);
  const double lq = logsumexp(q_logits);
  double kl = 0.0;
  for (std::size_t c = 0; c < p_logits.size(); ++c) {
    const double log_p = p_logits[c] - lp;
    kl += std::exp(log_p) * (log_p - (q_logits[c] - lq));
  }
  return std::max(kl, 0.0);
}

std::vector<double> point_distances(const Matrix& student_outputs, const Matrix& teacher_outputs, PointDelta delta) {
  if (!student_outputs.same_shape(teacher_outputs)) throw InvalidShape("point score: output shapes differ");
  if (student_outputs.rows() == 0) throw InvalidInput("point score: no inputs");
  std::vector<double> d(student_outputs.rows());
  for (std::size_t r = 0; r < d.size(); ++r) {
    if (delta == PointDelta::kl) {
      d[r] = kl_divergence(student_outputs.row(r), teacher_outputs.row(r));
    } else {
      double s = 0.0;
      for (std::size_t c = 0; c < student_outputs.cols(); ++c) {
        const double diff = student_outputs(r, c) - teacher_outputs(r, c);
        s += diff * diff;
      }
      d[r] = std::sqrt(s);
    }
  }
  return d;
}

double point_score_from_distances(std::span<const double> distances, double epsilon) {
  if (distances.empty()) throw InvalidInput("point score: no distances");
  double total = 0.0;
  for (double d : distances) total += 1.0 / (d + epsilon);
  return total / static_cast<double>(distances.size());
}

double point_score(const Matrix& student_outputs, const Matrix& teacher_outputs, const PointScoreConfig& config) {
  config.validate();
  return point_score_from_distances(point_distances(student_outputs, teacher_outputs, config.delta), config.epsilon);
}

double acs(const Matrix& g, const Matrix& f) {
  if (g.rows() != f.rows()) throw InvalidShape("acs: row counts differ");
  if (g.rows() < 2) throw InvalidInput("acs: at least two rows required");
  const Matrix hg = center_rows(g);
  const Matrix hf = center_rows(f);
  const Matrix aligned = matmul(hf, procrustes(hg, hf).rotation);
  double total = 0.0;
  for (std::size_t r = 0; r < hg.rows(); ++r) {
    const double na = norm2(hg.row(r));
    const double nb = norm2(aligned.row(r));
    if (na == 0.0 || nb == 0.0) continue;
    total += dot(hg.row(r), aligned.row(r)) / (na * nb);
  }
  return total / static_cast<double>(hg.rows());
}

double select_bandwidth(const Matrix& x, const BandwidthPolicy& policy) {
  policy.validate();
  if (policy.kind == BandwidthPolicy::Kind::fixed) return policy.fixed_value;
  Matrix d = pairwise_sq_distances(x);
  for (double& v : d.values()) v = std::sqrt(v);
  const double median = median_offdiagonal(d);
  if (median > 0.0) return median;
  std::vector<double> positive;
  for (std::size_t i = 0; i < d.rows(); ++i)
    for (std::size_t j = i + 1; j < d.cols(); ++j)
      if (d(i, j) > 0.0) positive.push_back(d(i, j));
  if (positive.empty()) throw DegenerateSet("bandwidth: all rows identical");
  std::sort(positive.begin(), positive.end());
  const std::size_t m = positive.size() / 2;
  return positive.size() % 2 == 1 ? positive[m] : 0.5 * (positive[m - 1] + positive[m]);
}

double cka_rbf(const Matrix& x, const Matrix& y, const BandwidthPolicy& policy, CenterMode centering) {
  if (x.rows() != y.rows()) throw InvalidShape("cka: row counts differ");
  if (x.rows() < 2) throw InvalidInput("cka: at least two rows required");
  const Matrix kx = center(rbf_kernel(x, select_bandwidth(x, policy)).base, centering);
  const Matrix ky = center(rbf_kernel(y, select_bandwidth(y, policy)).base, centering);
  const double nx = frobenius_norm(kx);
  const double ny = frobenius_norm(ky);
  if (nx == 0.0 || ny == 0.0) throw DegenerateSet("cka: centered kernel is zero");
  // Tr(A B) = sum_ij A_ij B_ji.
  double tr = 0.0;
  for (std::size_t i = 0; i < kx.rows(); ++i)
    for (std::size_t j = 0; j < kx.cols(); ++j) tr += kx(i, j) * ky(j, i);
  return tr / (nx * ny);
}

std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::point_kl: return "point_kl";
    case ScoreKind::acs: return "acs";
    case ScoreKind::cka: return "cka";
    case ScoreKind::custom: return "custom";
  }
  return "custom";
}

ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "point_kl") return ScoreKind::point_kl;
  if (s == "acs") return ScoreKind::acs;
  if (s == "cka") return ScoreKind::cka;
  if (s == "custom") return ScoreKind::custom;
  throw InvalidInput("unknown score kind '" + s + "'");
}

std::string to_string(PointDelta d) { return d == PointDelta::kl ? "kl" : "l2"; }

double score_outputs(const Matrix& student_outputs, const Matrix& candidate_outputs, ScoreKind kind,
                     const ScoreConfig& config) {
  switch (kind) {
    case ScoreKind::point_kl: {
      PointScoreConfig point = config.point;
      point.delta = PointDelta::kl;
      return point_score(student_outputs, candidate_outputs, point);
    }
    case ScoreKind::acs: return acs(student_outputs, candidate_outputs);
    case ScoreKind::cka: return cka_rbf(student_outputs, candidate_outputs, config.bandwidth, config.cka_centering);
    case ScoreKind::custom: break;
  }
  throw InvalidInput("score_outputs: custom scores are supplied by the caller");
}

std::vector<double> score_candidates(const Matrix& student_outputs, std::span<const Matrix> candidate_outputs,
                                     ScoreKind kind, const ScoreConfig& config) {
  if (candidate_outputs.empty()) throw InvalidInput("score_candidates: no candidates");
  std::vector<double> out;
  for (const Matrix& c : candidate_outputs) {
    if (c.rows() != student_outputs.rows())
      throw InvalidInput("score_candidates: candidates were not evaluated on the same inputs");
    out.push_back(score_outputs(student_outputs, c, kind, config));
  }
  return out;
}

void ScoreMatrix::validate() const {
  if (values.rows() != student_ids.size() || values.cols() != candidate_ids.size())
    throw InvalidShape("score matrix: ids do not match the value shape");
  if (!values.all_finite()) throw InvalidInput("score matrix: non-finite score");
}

std::string to_csv(const ScoreMatrix& m) {
  m.validate();
  std::string out = "student,candidate,score_kind,score\n";
  for (std::size_t s = 0; s < m.values.rows(); ++s)
    for (std::size_t c = 0; c < m.values.cols(); ++c)
      out += m.student_ids[s] + "," + m.candidate_ids[c] + "," + to_string(m.kind) + "," +
             format_double(m.values(s, c)) + "\n";
  return out;
}

ScoreMatrix score_matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "student,candidate,score_kind,score")
    throw FormatError(0, "score matrix: missing header");
  std::size_t offset = line.size() + 1;
  struct Entry {
    std::size_t s, c;
    double v;
  };
  std::vector<Entry> entries;
  ScoreMatrix m;
  bool kind_seen = false;
  auto index_of = [](std::vector<std::string>& ids, const std::string& id) {
    const auto it = std::find(ids.begin(), ids.end(), id);
    if (it != ids.end()) return static_cast<std::size_t>(it - ids.begin());
    ids.push_back(id);
    return ids.size() - 1;
  };
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 4) throw FormatError(offset, "score matrix: expected 4 fields");
    ScoreKind kind;
    try {
      kind = score_kind_from_string(fields[2]);
    } catch (const InvalidInput&) {
      throw FormatError(offset, "score matrix: unknown score kind");
    }
    if (kind_seen && kind != m.kind) throw FormatError(offset, "score matrix: mixed score kinds");
    m.kind = kind;
    kind_seen = true;
    double v;
    try {
      v = parse_double(fields[3]);
    } catch (const Error&) {
      throw FormatError(offset, "score matrix: bad score value");
    }
    entries.push_back({index_of(m.student_ids, fields[0]), index_of(m.candidate_ids, fields[1]), v});
    offset += line.size() + 1;
  }
  m.values = Matrix(m.student_ids.size(), m.candidate_ids.size(), std::nan(""));
  for (const Entry& e : entries) m.values(e.s, e.c) = e.v;
  if (!m.values.all_finite()) throw FormatError(offset, "score matrix: missing entries");
  return m;
}

std::size_t predict_teacher(std::span<const double> scores) {
  if (scores.empty()) throw InvalidInput("predict_teacher: empty score row");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  return best;
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> truths) {
  if (predictions.size() != truths.size() || predictions.empty())
    throw InvalidInput("accuracy: predictions and truths must have equal nonzero length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == truths[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double auc_one_vs_rest(const Matrix& scores, std::span<const std::size_t> truths) {
  if (scores.cols() < 2) throw InvalidInput("auc: at least two candidates required");
  if (scores.rows() != truths.size() || truths.empty()) throw InvalidInput("auc: one truth per student required");
  double total = 0.0;
  for (std::size_t s = 0; s < scores.rows(); ++s) {
    if (truths[s] >= scores.cols()) throw InvalidInput("auc: truth index out of range");
    const double t = scores(s, truths[s]);
    double wins = 0.0;
    for (std::size_t k = 0; k < scores.cols(); ++k) {
      if (k == truths[s]) continue;
      if (t > scores(s, k)) wins += 1.0;
      else if (t == scores(s, k)) wins += 0.5;
    }
    total += wins / static_cast<double>(scores.cols() - 1);
  }
  return total / static_cast<double>(scores.rows());
}

double auc_one_vs_rest(const ScoreMatrix& scores, std::span<const std::size_t> truths) {
  return auc_one_vs_rest(scores.values, truths);
}

}  // namespace kdd
