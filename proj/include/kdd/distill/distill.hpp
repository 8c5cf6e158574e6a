#pragma once

#include <span>

#include "kdd/models/dataset.hpp"
#include "kdd/models/mlp.hpp"
#include "kdd/models/training.hpp"

namespace kdd {

enum class DistillMethod { kd, rkd };

struct DistillConfig {
  double lambda = 1.0;       // weight of the soft (teacher) term, 1 - lambda on labels
  double temperature = 4.0;  // softening temperature of the soft term
  DistillMethod method = DistillMethod::kd;
  double rkd_distance_weight = 1.0;
  double rkd_angle_weight = 2.0;
  double rkd_mix = 0.3;  // share of the KD term in the RKD objective
  TrainConfig train;

  void validate() const;
};

// (1 - lambda) * mean CE(student, labels)
//   + lambda * T^2 * mean KL(softmax(teacher / T) || softmax(student / T)).
double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
               std::span<const std::size_t> labels, double lambda, double temperature);
Var kd_loss_on_tape(Tape& tape, Var student_logits, const Matrix& teacher_logits,
                    std::span<const std::size_t> labels, double lambda, double temperature);

// Relational KD: Huber(delta = 1) mismatch of mean-normalized pairwise
// distances (ordered pairs i != j) and of angle cosines over ordered triplets
// with distinct indices, weighted and summed. Rows must match; columns may not.
double rkd_loss(const Matrix& student_features, const Matrix& teacher_features, double distance_weight,
                double angle_weight);
// Tape version; gradients flow into student_features only.
Var rkd_loss_on_tape(Tape& tape, Var student_features, const Matrix& teacher_features, double distance_weight,
                     double angle_weight);

// Trains a fresh student of `arch` against an eval-mode teacher. The teacher
// is only read. RKD matches last-hidden-layer features, through a learned
// linear projection when the feature widths differ.
ClassifierModel distill_student(const ClassifierModel& teacher, const MlpArchitecture& arch, const Dataset& data,
                                const DistillConfig& config);
TrainOutcome distill_student_with_history(const ClassifierModel& teacher, const MlpArchitecture& arch,
                                          const Dataset& data, const DistillConfig& config);

std::string to_string(DistillMethod m);
DistillMethod distill_method_from_string(const std::string& s);

}  // namespace kdd
