#include "kdd/distill/distill.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "kdd/error.hpp"

namespace kdd {

namespace {

constexpr double kHuberDelta = 1.0;

double huber(double x) {
  const double a = std::abs(x);
  return a < kHuberDelta ? 0.5 * x * x : kHuberDelta * (a - 0.5 * kHuberDelta);
}

double huber_slope(double x) {
  return std::abs(x) < kHuberDelta ? x : std::copysign(kHuberDelta, x);
}

void check_logits(const Matrix& student, const Matrix& teacher, std::span<const std::size_t> labels) {
  if (!student.same_shape(teacher)) throw InvalidShape("kd_loss: student/teacher logits differ in shape");
  if (labels.size() != student.rows()) throw InvalidShape("kd_loss: label count does not match rows");
  if (student.rows() == 0) throw InvalidShape("kd_loss: empty batch");
  for (std::size_t y : labels)
    if (y >= student.cols()) throw InvalidInput("kd_loss: label out of range");
}

// Softened teacher distribution and its mean row entropy.
std::pair<Matrix, double> soft_targets(const Matrix& teacher_logits, double temperature) {
  const Matrix q = softmax_rows(teacher_logits * (1.0 / temperature));
  double entropy = 0.0;
  for (double p : q.values())
    if (p > 0.0) entropy -= p * std::log(p);
  return {q, entropy / static_cast<double>(q.rows())};
}

// Pairwise difference vectors and norms for one feature set.
struct Relations {
  Matrix dist;                     // n x n Euclidean distances
  double mean_distance = 0.0;      // mean over ordered pairs with positive distance
  std::size_t positive_pairs = 0;
};

Relations relations(const Matrix& x) {
  const std::size_t n = x.rows();
  Relations r{Matrix(n, n), 0.0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double d = x(j, c) - x(i, c);
        s += d * d;
      }
      const double d = std::sqrt(s);
      r.dist(i, j) = d;
      r.dist(j, i) = d;
      if (d > 0.0) {
        r.mean_distance += 2.0 * d;
        r.positive_pairs += 2;
      }
    }
  if (r.positive_pairs > 0) r.mean_distance /= static_cast<double>(r.positive_pairs);
  return r;
}

// Unit difference vectors from anchor a: row b holds (x_b - x_a) / ||x_b - x_a||
// (zero for b == a or coincident points).
Matrix unit_directions(const Matrix& x, const Matrix& dist, std::size_t a) {
  Matrix e(x.rows(), x.cols());
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const double d = dist(a, b);
    if (b == a || d == 0.0) continue;
    for (std::size_t c = 0; c < x.cols(); ++c) e(b, c) = (x(b, c) - x(a, c)) / d;
  }
  return e;
}

// RKD value and (when grad != nullptr) its gradient with respect to the student.
double rkd_core(const Matrix& s, const Matrix& t, double w_dist, double w_angle, Matrix* grad) {
  if (s.rows() != t.rows()) throw InvalidShape("rkd_loss: row counts differ");
  const std::size_t n = s.rows();
  if (n < 3) throw InvalidInput("rkd_loss: at least three rows required");
  if (grad) *grad = Matrix(n, s.cols());

  const Relations rs = relations(s);
  const Relations rt = relations(t);
  const double pairs = static_cast<double>(n * (n - 1));

  double dist_loss = 0.0;
  if (w_dist != 0.0) {
    Matrix g(n, n);  // d loss / d psi_ij for the student
    double weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double ps = rs.mean_distance > 0.0 ? rs.dist(i, j) / rs.mean_distance : 0.0;
        const double pt = rt.mean_distance > 0.0 ? rt.dist(i, j) / rt.mean_distance : 0.0;
        dist_loss += huber(ps - pt);
        g(i, j) = huber_slope(ps - pt) / pairs;
        weighted += g(i, j) * rs.dist(i, j);
      }
    dist_loss /= pairs;
    if (grad && rs.mean_distance > 0.0) {
      const double mu = rs.mean_distance;
      const double mu_term = weighted / (mu * mu * static_cast<double>(rs.positive_pairs));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double d = rs.dist(i, j);
          if (i == j || d == 0.0) continue;
          const double dl_dd = w_dist * (g(i, j) / mu - mu_term);
          for (std::size_t c = 0; c < s.cols(); ++c) {
            const double u = (s(i, c) - s(j, c)) / d;
            (*grad)(i, c) += dl_dd * u;
            (*grad)(j, c) -= dl_dd * u;
          }
        }
    }
  }

  double angle_loss = 0.0;
  if (w_angle != 0.0) {
    const double triplets = static_cast<double>(n * (n - 1) * (n - 2));
    for (std::size_t a = 0; a < n; ++a) {
      const Matrix es = unit_directions(s, rs.dist, a);
      const Matrix et = unit_directions(t, rt.dist, a);
      const Matrix cs = matmul_nt(es, es);
      const Matrix ct = matmul_nt(et, et);
      Matrix de(n, s.cols());  // d loss / d e_ab
      for (std::size_t b = 0; b < n; ++b) {
        if (b == a) continue;
        for (std::size_t c = 0; c < n; ++c) {
          if (c == a || c == b) continue;
          const double diff = cs(b, c) - ct(b, c);
          angle_loss += huber(diff);
          if (grad) {
            const double coef = 2.0 * w_angle * huber_slope(diff) / triplets;
            for (std::size_t k = 0; k < s.cols(); ++k) de(b, k) += coef * es(c, k);
          }
        }
      }
      if (grad) {
        for (std::size_t b = 0; b < n; ++b) {
          const double d = rs.dist(a, b);
          if (b == a || d == 0.0) continue;
          const double proj = dot(de.row(b), es.row(b));
          for (std::size_t k = 0; k < s.cols(); ++k) {
            const double dv = (de(b, k) - es(b, k) * proj) / d;
            (*grad)(b, k) += dv;
            (*grad)(a, k) -= dv;
          }
        }
      }
    }
    angle_loss /= triplets;
  }
  return w_dist * dist_loss + w_angle * angle_loss;
}

}  // namespace

std::string to_string(DistillMethod m) { return m == DistillMethod::kd ? "KD" : "RKD"; }

DistillMethod distill_method_from_string(const std::string& s) {
  if (s == "KD" || s == "kd") return DistillMethod::kd;
  if (s == "RKD" || s == "rkd") return DistillMethod::rkd;
  throw InvalidInput("unknown distillation method '" + s + "'");
}

void DistillConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("distill: lambda must be in [0, 1]");
  if (!(temperature > 0.0)) throw InvalidInput("distill: temperature must be positive");
  if (!(rkd_mix >= 0.0 && rkd_mix <= 1.0)) throw InvalidInput("distill: rkd_mix must be in [0, 1]");
}

double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, std::span<const std::size_t> labels,
               double lambda, double temperature) {
  check_logits(student_logits, teacher_logits, labels);
  if (!(temperature > 0.0)) throw InvalidInput("kd_loss: temperature must be positive");
  const double n = static_cast<double>(student_logits.rows());

  double hard = 0.0;
  for (std::size_t r = 0; r < student_logits.rows(); ++r)
    hard += logsumexp(student_logits.row(r)) - student_logits(r, labels[r]);
  hard /= n;

  double soft = 0.0;
  const Matrix s = student_logits * (1.0 / temperature);
  const Matrix t = teacher_logits * (1.0 / temperature);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const double lse_s = logsumexp(s.row(r));
    const double lse_t = logsumexp(t.row(r));
    for (std::size_t c = 0; c < s.cols(); ++c) {
      const double log_q = t(r, c) - lse_t;
      soft += std::exp(log_q) * (log_q - (s(r, c) - lse_s));
    }
  }
  soft = temperature * temperature * soft / n;
  return (1.0 - lambda) * hard + lambda * soft;
}

Var kd_loss_on_tape(Tape& tape, Var student_logits, const Matrix& teacher_logits,
                    std::span<const std::size_t> labels, double lambda, double temperature) {
  check_logits(tape.value(student_logits), teacher_logits, labels);
  if (!(temperature > 0.0)) throw InvalidInput("kd_loss: temperature must be positive");
  const Var hard = tape.cross_entropy(student_logits, labels);
  if (lambda == 0.0) return hard;
  auto [q, entropy] = soft_targets(teacher_logits, temperature);
  Var soft = tape.soft_cross_entropy(tape.scale(student_logits, 1.0 / temperature), q);
  soft = tape.scale(tape.add_scalar(soft, -entropy), temperature * temperature);
  if (lambda == 1.0) return soft;
  return tape.add(tape.scale(hard, 1.0 - lambda), tape.scale(soft, lambda));
}

double rkd_loss(const Matrix& student_features, const Matrix& teacher_features, double distance_weight,
                double angle_weight) {
  return rkd_core(student_features, teacher_features, distance_weight, angle_weight, nullptr);
}

Var rkd_loss_on_tape(Tape& tape, Var student_features, const Matrix& teacher_features, double distance_weight,
                     double angle_weight) {
  Matrix grad;
  const double value =
      rkd_core(tape.value(student_features), teacher_features, distance_weight, angle_weight, &grad);
  const Var inputs[] = {student_features};
  return tape.custom(inputs, Matrix(1, 1, value),
                     [grad = std::move(grad)](const Matrix& out_grad, std::span<Matrix*> input_grads) {
                       *input_grads[0] += grad * out_grad(0, 0);
                     });
}

TrainOutcome distill_student_with_history(const ClassifierModel& teacher, const MlpArchitecture& arch,
                                          const Dataset& data, const DistillConfig& config) {
  config.validate();
  arch.validate();
  const MlpArchitecture& tarch = teacher.architecture();
  if (data.input_dim() != arch.input_dim || data.input_dim() != tarch.input_dim)
    throw InvalidShape("distill: dataset, student and teacher input dims must agree");
  if (arch.num_classes != tarch.num_classes) throw InvalidShape("distill: class counts differ");
  if (data.size() == 0) throw InvalidInput("distill: empty dataset");

  const Matrix teacher_logits = evaluate(teacher, data.features);
  Matrix teacher_features;
  std::vector<Matrix> projection;
  if (config.method == DistillMethod::rkd) {
    teacher_features = hidden_features(teacher, data.features);
    if (arch.feature_dim() != tarch.feature_dim()) {
      RngStream init = RngStream(config.train.seed).split(2);
      const double bound = std::sqrt(6.0 / static_cast<double>(arch.feature_dim() + tarch.feature_dim()));
      Matrix w(arch.feature_dim(), tarch.feature_dim());
      for (double& v : w.values()) v = bound * (2.0 * init.uniform() - 1.0);
      projection.push_back(std::move(w));
    }
  }

  const BatchLoss loss = [&](Tape& tape, const TapeForward& pass, std::span<const std::size_t> batch,
                             std::span<const Var> extra) {
    std::vector<std::size_t> y;
    y.reserve(batch.size());
    for (std::size_t i : batch) y.push_back(data.labels[i]);
    const Var kd = kd_loss_on_tape(tape, pass.logits, teacher_logits.select_rows(batch), y, config.lambda,
                                   config.temperature);
    // Relations are undefined on batches smaller than a triplet.
    if (config.method == DistillMethod::kd || batch.size() < 3) return kd;
    const Var feats = extra.empty() ? pass.features : tape.matmul(pass.features, extra[0]);
    const Var rel = rkd_loss_on_tape(tape, feats, teacher_features.select_rows(batch), config.rkd_distance_weight,
                                     config.rkd_angle_weight);
    return tape.add(tape.scale(kd, config.rkd_mix), tape.scale(rel, 1.0 - config.rkd_mix));
  };

  return train_model(initial_model(arch, config.train.seed), data, config.train, loss,
                     projection.empty() ? nullptr : &projection);
}

ClassifierModel distill_student(const ClassifierModel& teacher, const MlpArchitecture& arch, const Dataset& data,
                                const DistillConfig& config) {
  return distill_student_with_history(teacher, arch, data, config).model;
}

}  // namespace kdd
