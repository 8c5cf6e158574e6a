#include "kdd/models/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "kdd/error.hpp"

namespace kdd {

void MlpArchitecture::validate() const {
  if (input_dim == 0) throw InvalidInput("architecture: input_dim must be positive");
  if (hidden.empty()) throw InvalidInput("architecture: at least one hidden layer required");
  for (const auto& h : hidden)
    if (h.width == 0) throw InvalidInput("architecture: hidden widths must be positive");
  if (num_classes < 2) throw InvalidInput("architecture: at least two classes required");
}

bool MlpArchitecture::uses_batch_norm() const noexcept {
  return std::any_of(hidden.begin(), hidden.end(), [](const HiddenLayerSpec& h) { return h.batch_norm; });
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw InvalidInput("unknown activation '" + s + "'");
}

ClassifierModel::ClassifierModel(MlpArchitecture arch, RngStream& rng) : arch_(std::move(arch)) {
  arch_.validate();
  auto add = [&](std::string name, Matrix m) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(m));
  };
  auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (double& v : w.values()) v = bound * (2.0 * rng.uniform() - 1.0);
    return w;
  };
  std::size_t in = arch_.input_dim;
  for (std::size_t l = 0; l < arch_.hidden.size(); ++l) {
    const auto& h = arch_.hidden[l];
    const std::string prefix = "hidden" + std::to_string(l);
    add(prefix + ".weight", glorot(in, h.width));
    add(prefix + ".bias", Matrix(1, h.width));
    if (h.batch_norm) {
      add(prefix + ".bn_gamma", Matrix(1, h.width, 1.0));
      add(prefix + ".bn_beta", Matrix(1, h.width));
      bn_.running_mean.emplace_back(1, h.width, 0.0);
      bn_.running_var.emplace_back(1, h.width, 1.0);
    }
    in = h.width;
  }
  add("output.weight", glorot(in, arch_.num_classes));
  add("output.bias", Matrix(1, arch_.num_classes));
}

Matrix& ClassifierModel::parameter(const std::string& name) {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw InvalidInput("no parameter named '" + name + "'");
  return params_[static_cast<std::size_t>(it - names_.begin())];
}

const Matrix& ClassifierModel::parameter(const std::string& name) const {
  return const_cast<ClassifierModel*>(this)->parameter(name);
}

TapeForward forward_on_tape(Tape& tape, const ClassifierModel& model, Var inputs,
                            NormalizationSource norm, bool trainable_params) {
  const MlpArchitecture& arch = model.architecture();
  const Matrix& x = tape.value(inputs);
  if (x.cols() != arch.input_dim) {
    throw InvalidShape("model expects " + std::to_string(arch.input_dim) + " input columns, got " +
                       std::to_string(x.cols()));
  }
  TapeForward out;
  for (const Matrix& p : model.parameters())
    out.params.push_back(trainable_params ? tape.leaf(p) : tape.constant(p));

  std::size_t slot = 0;
  std::size_t bn_index = 0;
  Var h = inputs;
  for (const auto& layer : arch.hidden) {
    h = tape.add_row(tape.matmul(h, out.params[slot]), out.params[slot + 1]);
    slot += 2;
    if (layer.batch_norm) {
      out.bn_inputs.push_back(h);
      const double eps = model.batch_norm().eps;
      if (norm == NormalizationSource::batch) {
        if (tape.value(h).rows() < 2)
          throw DegenerateBatch("train-mode batch norm needs at least two rows");
        h = tape.batch_norm(h, eps);
      } else {
        const Matrix& rm = model.batch_norm().running_mean[bn_index];
        const Matrix& rv = model.batch_norm().running_var[bn_index];
        Matrix shift = rm * -1.0;
        Matrix inv(1, rv.cols());
        for (std::size_t c = 0; c < rv.cols(); ++c) inv(0, c) = 1.0 / std::sqrt(rv(0, c) + eps);
        h = tape.mul_row(tape.add_row(h, tape.constant(std::move(shift))), tape.constant(std::move(inv)));
      }
      h = tape.add_row(tape.mul_row(h, out.params[slot]), out.params[slot + 1]);
      slot += 2;
      ++bn_index;
    }
    h = layer.activation == Activation::tanh ? tape.tanh(h) : tape.relu(h);
  }
  out.features = h;
  out.logits = tape.add_row(tape.matmul(h, out.params[slot]), out.params[slot + 1]);
  return out;
}

void update_running_stats(ClassifierModel& model, const Tape& tape, const TapeForward& pass) {
  BatchNormState& bn = model.batch_norm();
  for (std::size_t l = 0; l < pass.bn_inputs.size(); ++l) {
    const Matrix& a = tape.value(pass.bn_inputs[l]);
    const Matrix mu = a.col_means();
    const double n = static_cast<double>(a.rows());
    for (std::size_t c = 0; c < a.cols(); ++c) {
      double ss = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) ss += (a(r, c) - mu(0, c)) * (a(r, c) - mu(0, c));
      const double unbiased = ss / (n - 1.0);
      bn.running_mean[l](0, c) = (1.0 - bn.momentum) * bn.running_mean[l](0, c) + bn.momentum * mu(0, c);
      bn.running_var[l](0, c) = (1.0 - bn.momentum) * bn.running_var[l](0, c) + bn.momentum * unbiased;
    }
  }
}

Matrix forward(ClassifierModel& model, const Matrix& inputs) {
  if (model.mode() == Mode::eval) return evaluate(model, inputs);
  Tape tape;
  const TapeForward pass =
      forward_on_tape(tape, model, tape.constant(inputs), NormalizationSource::batch, false);
  update_running_stats(model, tape, pass);
  return tape.value(pass.logits);
}

Matrix evaluate(const ClassifierModel& model, const Matrix& inputs) {
  Tape tape;
  const TapeForward pass =
      forward_on_tape(tape, model, tape.constant(inputs), NormalizationSource::running, false);
  return tape.value(pass.logits);
}

Matrix hidden_features(const ClassifierModel& model, const Matrix& inputs) {
  Tape tape;
  const TapeForward pass =
      forward_on_tape(tape, model, tape.constant(inputs), NormalizationSource::running, false);
  return tape.value(pass.features);
}

}  // namespace kdd
