#include "kdd/numerics/tape.hpp"

#include <cmath>
#include <string>

#include "kdd/error.hpp"

namespace kdd {

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw InvalidShape(std::string(op) + ": operand shapes differ");
}

void require_row(const Matrix& a, const Matrix& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw InvalidShape(std::string(op) + ": expected a 1 x " + std::to_string(a.cols()) + " row");
}

}  // namespace

Var Tape::push(Matrix value, bool requires_grad, Backprop backprop) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backprop)});
  return Var{nodes_.size() - 1};
}

bool Tape::any_requires(std::initializer_list<Var> vars) const {
  for (Var v : vars)
    if (nodes_[v.id].requires_grad) return true;
  return false;
}

Matrix& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value))
    n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.same_shape(n.value)) return n.grad;
  return Matrix(n.value.rows(), n.value.cols());
}

Var Tape::leaf(Matrix value) { return push(std::move(value), true, nullptr); }
Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::matmul(Var a, Var b) {
  Matrix out = kdd::matmul(value(a), value(b));
  return push(std::move(out), any_requires({a, b}), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) t.grad_ref(a.id) += matmul_nt(g, t.value(b));
    if (t.requires_grad(b)) t.grad_ref(b.id) += matmul_tn(t.value(a), g);
  });
}

Var Tape::add(Var a, Var b) {
  require_same(value(a), value(b), "add");
  return push(value(a) + value(b), any_requires({a, b}), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) t.grad_ref(a.id) += g;
    if (t.requires_grad(b)) t.grad_ref(b.id) += g;
  });
}

Var Tape::sub(Var a, Var b) {
  require_same(value(a), value(b), "sub");
  return push(value(a) - value(b), any_requires({a, b}), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) t.grad_ref(a.id) += g;
    if (t.requires_grad(b)) t.grad_ref(b.id) -= g;
  });
}

Var Tape::mul(Var a, Var b) {
  require_same(value(a), value(b), "mul");
  Matrix out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] *= value(b).values()[i];
  return push(std::move(out), any_requires({a, b}), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.values()[i] += g.values()[i] * t.value(b).values()[i];
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad_ref(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb.values()[i] += g.values()[i] * t.value(a).values()[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  require_row(value(a), value(row), "add_row");
  Matrix out = value(a);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += value(row)(0, c);
  return push(std::move(out), any_requires({a, row}), [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) t.grad_ref(a.id) += g;
    if (t.requires_grad(row)) {
      Matrix& gr = t.grad_ref(row.id);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
    }
  });
}

Var Tape::mul_row(Var a, Var row) {
  require_row(value(a), value(row), "mul_row");
  Matrix out = value(a);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= value(row)(0, c);
  return push(std::move(out), any_requires({a, row}), [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& av = t.value(a);
    const Matrix& rv = t.value(row);
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad_ref(a.id);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * rv(0, c);
    }
    if (t.requires_grad(row)) {
      Matrix& gr = t.grad_ref(row.id);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c) * av(r, c);
    }
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, requires_grad(a), [a, s](Tape& t, std::size_t self) {
    t.grad_ref(a.id) += t.nodes_[self].grad * s;
  });
}

Var Tape::add_scalar(Var a, double s) {
  Matrix out = value(a);
  for (double& v : out.values()) v += s;
  return push(std::move(out), requires_grad(a), [a](Tape& t, std::size_t self) {
    t.grad_ref(a.id) += t.nodes_[self].grad;
  });
}

Var Tape::tanh(Var a) {
  Matrix out = value(a);
  for (double& v : out.values()) v = std::tanh(v);
  return push(std::move(out), requires_grad(a), [a](Tape& t, std::size_t self) {
    const Node& n = t.nodes_[self];
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double y = n.value.values()[i];
      ga.values()[i] += n.grad.values()[i] * (1.0 - y * y);
    }
  });
}

Var Tape::relu(Var a) {
  Matrix out = value(a);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), requires_grad(a), [a](Tape& t, std::size_t self) {
    const Node& n = t.nodes_[self];
    Matrix& ga = t.grad_ref(a.id);
    const Matrix& in = t.value(a);
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (in.values()[i] > 0.0) ga.values()[i] += n.grad.values()[i];
  });
}

Var Tape::square(Var a) {
  Matrix out = value(a);
  for (double& v : out.values()) v *= v;
  return push(std::move(out), requires_grad(a), [a](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& in = t.value(a);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga.values()[i] += 2.0 * in.values()[i] * g.values()[i];
  });
}

Var Tape::col_mean(Var a) {
  return push(value(a).col_means(), requires_grad(a), [a](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& ga = t.grad_ref(a.id);
    const double inv_n = 1.0 / static_cast<double>(ga.rows());
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(0, c) * inv_n;
  });
}

Var Tape::col_std(Var a, double eps) {
  const Matrix& x = value(a);
  if (x.rows() == 0) throw InvalidShape("col_std: empty batch");
  const Matrix mu = x.col_means();
  Matrix sd(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double d = x(r, c) - mu(0, c);
      sd(0, c) += d * d;
    }
  for (double& v : sd.values()) v = std::sqrt(v / static_cast<double>(x.rows()) + eps);
  return push(std::move(sd), requires_grad(a), [a, mu](Tape& t, std::size_t self) {
    const Node& n = t.nodes_[self];
    const Matrix& in = t.value(a);
    Matrix& ga = t.grad_ref(a.id);
    const double inv_n = 1.0 / static_cast<double>(in.rows());
    for (std::size_t r = 0; r < in.rows(); ++r)
      for (std::size_t c = 0; c < in.cols(); ++c)
        ga(r, c) += n.grad(0, c) * (in(r, c) - mu(0, c)) * inv_n / n.value(0, c);
  });
}

Var Tape::batch_norm(Var x, double eps) {
  const Matrix& in = value(x);
  const std::size_t n = in.rows();
  if (n < 2) throw DegenerateBatch("batch_norm needs at least two rows");
  const Matrix mu = in.col_means();
  Matrix inv_std(1, in.cols());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < in.cols(); ++c) {
      const double d = in(r, c) - mu(0, c);
      inv_std(0, c) += d * d;
    }
  for (double& v : inv_std.values()) v = 1.0 / std::sqrt(v / static_cast<double>(n) + eps);
  Matrix out(n, in.cols());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = (in(r, c) - mu(0, c)) * inv_std(0, c);
  return push(std::move(out), requires_grad(x), [x, inv_std](Tape& t, std::size_t self) {
    const Node& node = t.nodes_[self];
    const Matrix& g = node.grad;
    const Matrix& xhat = node.value;
    Matrix& gx = t.grad_ref(x.id);
    const std::size_t rows = g.rows();
    const double inv_n = 1.0 / static_cast<double>(rows);
    for (std::size_t c = 0; c < g.cols(); ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        sum_g += g(r, c);
        sum_gx += g(r, c) * xhat(r, c);
      }
      for (std::size_t r = 0; r < rows; ++r)
        gx(r, c) += inv_std(0, c) * (g(r, c) - inv_n * sum_g - inv_n * xhat(r, c) * sum_gx);
    }
  });
}

Var Tape::soft_cross_entropy(Var logits, const Matrix& targets) {
  const Matrix& z = value(logits);
  require_same(z, targets, "soft_cross_entropy");
  if (z.rows() == 0) throw InvalidShape("soft_cross_entropy: empty batch");
  Matrix probs = softmax_rows(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double lse = logsumexp(z.row(r));
    for (std::size_t c = 0; c < z.cols(); ++c)
      if (targets(r, c) != 0.0) loss -= targets(r, c) * (z(r, c) - lse);
  }
  loss /= static_cast<double>(z.rows());
  return push(Matrix(1, 1, loss), requires_grad(logits),
              [logits, targets, probs = std::move(probs)](Tape& t, std::size_t self) {
                const double g = t.nodes_[self].grad(0, 0) / static_cast<double>(probs.rows());
                Matrix& gz = t.grad_ref(logits.id);
                for (std::size_t r = 0; r < probs.rows(); ++r) {
                  double mass = 0.0;
                  for (double q : targets.row(r)) mass += q;
                  for (std::size_t c = 0; c < probs.cols(); ++c)
                    gz(r, c) += g * (probs(r, c) * mass - targets(r, c));
                }
              });
}

Var Tape::cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Matrix& z = value(logits);
  if (labels.size() != z.rows()) throw InvalidShape("cross_entropy: label count mismatch");
  Matrix onehot(z.rows(), z.cols());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= z.cols()) throw InvalidInput("cross_entropy: label out of range");
    onehot(r, labels[r]) = 1.0;
  }
  return soft_cross_entropy(logits, onehot);
}

Var Tape::logsumexp_rows(Var a) {
  return push(kdd::logsumexp_rows(value(a)), requires_grad(a), [a](Tape& t, std::size_t self) {
    const Node& n = t.nodes_[self];
    const Matrix& in = t.value(a);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t r = 0; r < in.rows(); ++r)
      for (std::size_t c = 0; c < in.cols(); ++c)
        ga(r, c) += n.grad(r, 0) * std::exp(in(r, c) - n.value(r, 0));
  });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).values()) s += v;
  return push(Matrix(1, 1, s), requires_grad(a), [a](Tape& t, std::size_t self) {
    const double g = t.nodes_[self].grad(0, 0);
    for (double& v : t.grad_ref(a.id).values()) v += g;
  });
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(value(a).size());
  if (n == 0) throw InvalidShape("mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var Tape::custom(std::span<const Var> inputs, Matrix value, CustomAdjoint adjoint) {
  bool req = false;
  for (Var v : inputs) req = req || requires_grad(v);
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return push(std::move(value), req,
              [ins = std::move(ins), adjoint = std::move(adjoint)](Tape& t, std::size_t self) {
                std::vector<Matrix> local;
                local.reserve(ins.size());
                for (Var v : ins) local.emplace_back(t.value(v).rows(), t.value(v).cols());
                std::vector<Matrix*> ptrs;
                for (Matrix& m : local) ptrs.push_back(&m);
                adjoint(t.nodes_[self].grad, ptrs);
                for (std::size_t i = 0; i < ins.size(); ++i)
                  if (t.requires_grad(ins[i])) t.grad_ref(ins[i].id) += local[i];
              });
}

void Tape::backward(Var output) {
  if (output.id >= nodes_.size()) throw InvalidGraph("backward: unknown node");
  const Matrix& out = nodes_[output.id].value;
  if (out.rows() != 1 || out.cols() != 1)
    throw InvalidGraph("backward: output must be scalar, got " + std::to_string(out.rows()) +
                       "x" + std::to_string(out.cols()));
  for (Node& n : nodes_) n.grad = Matrix();
  grad_ref(output.id)(0, 0) = 1.0;
  visits_ = 0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    ++visits_;
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backprop || n.grad.size() == 0) continue;
    n.backprop(*this, i);
  }
}

std::vector<Matrix> backward(Tape& tape, Var output, std::span<const Var> leaves) {
  tape.backward(output);
  std::vector<Matrix> grads;
  grads.reserve(leaves.size());
  for (Var v : leaves) grads.push_back(tape.grad(v));
  return grads;
}

}  // namespace kdd
