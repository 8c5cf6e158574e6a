#include "kdd/models/training.hpp"

#include <algorithm>

#include "kdd/error.hpp"

namespace kdd {

void TrainConfig::validate(const MlpArchitecture& arch) const {
  if (!(learning_rate > 0.0)) throw InvalidInput("train: learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidInput("train: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw InvalidInput("train: weight_decay must be nonnegative");
  if (batch_size == 0) throw InvalidInput("train: batch_size must be positive");
  if (arch.uses_batch_norm() && batch_size < 2)
    throw InvalidInput("train: batch_size must be at least 2 with batch norm");
}

void SgdOptimizer::step(std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw InvalidShape("sgd: parameter/gradient count mismatch");
  if (velocity_.empty())
    for (Matrix* p : params) velocity_.emplace_back(p->rows(), p->cols());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->values();
    const auto& g = grads[i].values();
    auto& v = velocity_[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double d = g[j] + weight_decay_ * p[j];
      v[j] = momentum_ * v[j] + d;
      p[j] -= lr_ * v[j];
    }
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, RngStream& rng) {
  const std::vector<std::size_t> order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    const std::size_t last = batches.back().front();
    batches.pop_back();
    batches.back().push_back(last);
  }
  return batches;
}

TrainOutcome train_model(ClassifierModel model, const Dataset& data, const TrainConfig& config,
                         const BatchLoss& loss, std::vector<Matrix>* extra) {
  data.validate();
  if (data.size() == 0) throw InvalidInput("train: empty dataset");
  if (data.input_dim() != model.architecture().input_dim)
    throw InvalidShape("train: dataset has " + std::to_string(data.input_dim()) + " columns, model expects " +
                       std::to_string(model.architecture().input_dim));
  config.validate(model.architecture());

  RngStream shuffle_rng = RngStream(config.seed).split(1);
  SgdOptimizer opt(config.learning_rate, config.momentum, config.weight_decay);
  TrainOutcome outcome;
  model.set_mode(Mode::train);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch : make_batches(data.size(), config.batch_size, shuffle_rng)) {
      Tape tape;
      const Var x = tape.constant(data.features.select_rows(batch));
      const TapeForward pass = forward_on_tape(tape, model, x, NormalizationSource::batch, true);
      std::vector<Var> extra_vars;
      if (extra)
        for (const Matrix& m : *extra) extra_vars.push_back(tape.leaf(m));
      const Var l = loss(tape, pass, batch, extra_vars);
      total += tape.value(l)(0, 0) * static_cast<double>(batch.size());
      tape.backward(l);

      std::vector<Matrix*> slots;
      std::vector<Matrix> grads;
      for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        slots.push_back(&model.parameters()[i]);
        grads.push_back(tape.grad(pass.params[i]));
      }
      for (std::size_t i = 0; i < extra_vars.size(); ++i) {
        slots.push_back(&(*extra)[i]);
        grads.push_back(tape.grad(extra_vars[i]));
      }
      update_running_stats(model, tape, pass);
      opt.step(slots, grads);
    }
    outcome.epoch_losses.push_back(total / static_cast<double>(data.size()));
  }
  model.set_mode(Mode::eval);
  outcome.model = std::move(model);
  return outcome;
}

ClassifierModel initial_model(const MlpArchitecture& arch, std::uint64_t seed) {
  RngStream init = RngStream(seed).split(0);
  return ClassifierModel(arch, init);
}

TrainOutcome train_classifier_with_history(const MlpArchitecture& arch, const Dataset& data,
                                           const TrainConfig& config) {
  arch.validate();
  if (data.size() == 0) throw InvalidInput("train_classifier: empty dataset");
  const std::vector<std::size_t>& labels = data.labels;
  return train_model(initial_model(arch, config.seed), data, config,
                     [&labels](Tape& tape, const TapeForward& pass, std::span<const std::size_t> batch,
                               std::span<const Var>) {
                       std::vector<std::size_t> y;
                       y.reserve(batch.size());
                       for (std::size_t i : batch) y.push_back(labels[i]);
                       return tape.cross_entropy(pass.logits, y);
                     });
}

ClassifierModel train_classifier(const MlpArchitecture& arch, const Dataset& data, const TrainConfig& config) {
  return train_classifier_with_history(arch, data, config).model;
}

double classification_accuracy(const ClassifierModel& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const Matrix logits = evaluate(model, data.features);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == data.labels[r] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace kdd
