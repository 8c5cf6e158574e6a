#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "kdd/models/dataset.hpp"
#include "kdd/models/mlp.hpp"

namespace kdd {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  // batch_size >= 2 is required whenever the architecture uses batch norm.
  void validate(const MlpArchitecture& arch) const;
};

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
class SgdOptimizer {
 public:
  SgdOptimizer(double learning_rate, double momentum, double weight_decay)
      : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<Matrix* const> params, std::span<const Matrix> grads);

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<Matrix> velocity_;
};

struct TrainOutcome {
  ClassifierModel model;            // eval mode
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

// Loss for one mini-batch given the student's tape pass. `extra` holds leaves
// for auxiliary trainable parameters (e.g. a feature projection).
using BatchLoss = std::function<Var(Tape& tape, const TapeForward& pass,
                                    std::span<const std::size_t> batch, std::span<const Var> extra)>;

// Mini-batch SGD over `data` with per-epoch reshuffling from config.seed.
// Auxiliary parameters in `extra` are optimized alongside the model.
TrainOutcome train_model(ClassifierModel model, const Dataset& data, const TrainConfig& config,
                         const BatchLoss& loss, std::vector<Matrix>* extra = nullptr);

// Mini-batch order for one epoch. A trailing single-row batch is merged into
// the previous one so batch statistics stay defined.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, RngStream& rng);

// Cross-entropy training from a fresh initialization drawn from config.seed.
TrainOutcome train_classifier_with_history(const MlpArchitecture& arch, const Dataset& data,
                                           const TrainConfig& config);
ClassifierModel train_classifier(const MlpArchitecture& arch, const Dataset& data, const TrainConfig& config);

// Initialization used by train_classifier for a given seed.
ClassifierModel initial_model(const MlpArchitecture& arch, std::uint64_t seed);

double classification_accuracy(const ClassifierModel& model, const Dataset& data);

}  // namespace kdd
