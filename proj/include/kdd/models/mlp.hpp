#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "kdd/numerics/matrix.hpp"
#include "kdd/numerics/rng.hpp"
#include "kdd/numerics/tape.hpp"

namespace kdd {

enum class Activation { tanh, relu };

struct HiddenLayerSpec {
  std::size_t width = 0;
  Activation activation = Activation::relu;
  bool batch_norm = true;

  friend bool operator==(const HiddenLayerSpec&, const HiddenLayerSpec&) = default;
};

struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::vector<HiddenLayerSpec> hidden;
  std::size_t num_classes = 0;

  // Throws InvalidInput unless there is at least one hidden layer, every
  // width is positive and there are at least two classes.
  void validate() const;
  bool uses_batch_norm() const noexcept;
  std::size_t feature_dim() const noexcept { return hidden.empty() ? 0 : hidden.back().width; }

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

// Running statistics, one entry per batch-norm layer (in layer order).
// running_var holds variances; momentum is the weight of the new batch.
struct BatchNormState {
  std::vector<Matrix> running_mean;
  std::vector<Matrix> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

enum class Mode { train, eval };

// Linear -> [batch norm -> affine] -> activation per hidden layer, then a
// linear output layer producing logits.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  // Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases, unit BN scale.
  ClassifierModel(MlpArchitecture arch, RngStream& rng);

  const MlpArchitecture& architecture() const noexcept { return arch_; }
  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode m) noexcept { mode_ = m; }

  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  std::vector<Matrix>& parameters() noexcept { return params_; }
  const std::vector<Matrix>& parameters() const noexcept { return params_; }
  Matrix& parameter(const std::string& name);
  const Matrix& parameter(const std::string& name) const;

  BatchNormState& batch_norm() noexcept { return bn_; }
  const BatchNormState& batch_norm() const noexcept { return bn_; }
  std::size_t batch_norm_layers() const noexcept { return bn_.running_mean.size(); }

  friend bool operator==(const ClassifierModel&, const ClassifierModel&) = default;

 private:
  MlpArchitecture arch_;
  std::vector<std::string> names_;
  std::vector<Matrix> params_;
  BatchNormState bn_;
  Mode mode_ = Mode::train;
};

enum class NormalizationSource { batch, running };

// Nodes produced by running a model on a tape.
struct TapeForward {
  Var logits;
  Var features;                // last hidden layer after its activation
  std::vector<Var> bn_inputs;  // pre-normalization activations per BN layer
  std::vector<Var> params;     // one node per parameter slot, in slot order
};

// Builds the model on a tape. With trainable_params the parameter slots are
// leaves, otherwise constants. `norm` selects batch statistics or the stored
// running statistics for batch-norm layers.
TapeForward forward_on_tape(Tape& tape, const ClassifierModel& model, Var inputs,
                            NormalizationSource norm, bool trainable_params);

// Folds the batch statistics observed in a batch-mode tape pass into the
// running statistics (unbiased variance, momentum update).
void update_running_stats(ClassifierModel& model, const Tape& tape, const TapeForward& pass);

// Logits. Train mode normalizes with batch statistics and updates the running
// statistics; eval mode uses running statistics and mutates nothing.
Matrix forward(ClassifierModel& model, const Matrix& inputs);
// Eval-mode logits regardless of the stored mode.
Matrix evaluate(const ClassifierModel& model, const Matrix& inputs);
// Eval-mode last-hidden-layer activations.
Matrix hidden_features(const ClassifierModel& model, const Matrix& inputs);

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

}  // namespace kdd
