#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "kdd/numerics/tape.hpp"

namespace kdd::testing {

using ScalarBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Maximum relative disagreement between tape gradients and central finite
// differences over every entry of every leaf. Entries whose gradients are both
// below `floor` in magnitude are compared against the floor instead.
inline double max_gradient_error(const ScalarBuilder& build, const std::vector<Matrix>& leaf_values,
                                 double step = 1e-5, double floor = 1e-3) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Matrix& m : leaf_values) leaves.push_back(tape.leaf(m));
  const Var out = build(tape, leaves);
  const std::vector<Matrix> analytic = backward(tape, out, leaves);

  auto evaluate = [&](const std::vector<Matrix>& values) {
    Tape t;
    std::vector<Var> ls;
    for (const Matrix& m : values) ls.push_back(t.leaf(m));
    return t.value(build(t, ls))(0, 0);
  };

  double worst = 0.0;
  std::vector<Matrix> probe = leaf_values;
  for (std::size_t l = 0; l < probe.size(); ++l) {
    for (std::size_t i = 0; i < probe[l].size(); ++i) {
      const double saved = probe[l].values()[i];
      probe[l].values()[i] = saved + step;
      const double up = evaluate(probe);
      probe[l].values()[i] = saved - step;
      const double down = evaluate(probe);
      probe[l].values()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[l].values()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace kdd::testing
