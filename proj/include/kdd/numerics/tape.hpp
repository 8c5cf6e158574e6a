#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "kdd/numerics/matrix.hpp"

namespace kdd {

// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode differentiation over Matrix-valued nodes. Nodes are appended
// in evaluation order, so the append order is already topological; backward
// walks it once in reverse.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  // Differentiable leaf (a parameter slot).
  Var leaf(Matrix value);
  // Non-differentiable input.
  Var constant(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  // Gradient accumulated by the last backward(); zero-filled for untouched nodes.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t last_backward_visits() const noexcept { return visits_; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // a (n x c) plus a broadcast 1 x c row.
  Var add_row(Var a, Var row);
  // a (n x c) times a broadcast 1 x c row, column-wise.
  Var mul_row(Var a, Var row);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var tanh(Var a);
  Var relu(Var a);
  Var square(Var a);
  // Per-column batch mean, 1 x c.
  Var col_mean(Var a);
  // Per-column sqrt(biased batch variance + eps), 1 x c.
  Var col_std(Var a, double eps);
  // (x - batch mean) / sqrt(biased batch variance + eps), column-wise.
  Var batch_norm(Var x, double eps);
  // Mean over rows of -sum_c targets(r, c) * log softmax(logits)(r, c).
  Var soft_cross_entropy(Var logits, const Matrix& targets);
  // Mean over rows of -log softmax(logits)(r, label_r).
  Var cross_entropy(Var logits, std::span<const std::size_t> labels);
  // Row-wise log-sum-exp, n x 1.
  Var logsumexp_rows(Var a);
  Var sum(Var a);
  Var mean(Var a);

  // Escape hatch for fused operations with a hand-written adjoint. The
  // callback receives the output gradient and must accumulate into the
  // input gradients (already zero-initialized, same shapes as the inputs).
  using CustomAdjoint =
      std::function<void(const Matrix& out_grad, std::span<Matrix*> input_grads)>;
  Var custom(std::span<const Var> inputs, Matrix value, CustomAdjoint adjoint);

  // Accumulates d(output)/d(node) into every node that requires a gradient.
  // Throws InvalidGraph unless output is 1 x 1.
  void backward(Var output);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  Var push(Matrix value, bool requires_grad, Backprop backprop);
  Matrix& grad_ref(std::size_t id);
  bool any_requires(std::initializer_list<Var> vars) const;

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

// Gradients of a scalar output with respect to the given leaves, in order.
std::vector<Matrix> backward(Tape& tape, Var output, std::span<const Var> leaves);

}  // namespace kdd
