#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kdd/models/mlp.hpp"
#include "kdd/numerics/rng.hpp"
#include "kdd/synthesis/synthesis.hpp"

namespace kdd {

// -log sum_c exp(logit_c).
double energy_score(std::span<const double> logits);

// Keeps the ceil(keep_fraction * N) lowest-energy rows under the student,
// in their original order.
InputSet ood_filter(const InputSet& inputs, const ClassifierModel& student, double keep_fraction = 0.5);

struct MiaFilterConfig {
  std::size_t steps = 200;
  double learning_rate = 0.1;
};

// Rows [0, N/2) train a logistic regression on student logits against random
// Train/Test labels; rows [N/2, N) classified Train are kept. When none is,
// the row with the highest Train probability is kept so the result is never
// empty.
InputSet mia_filter(const InputSet& inputs, const ClassifierModel& student, RngStream& rng,
                    const MiaFilterConfig& config = {});

enum class KernelFamily { rbf, laplace };

struct MmdKernel {
  KernelFamily family = KernelFamily::rbf;
  double bandwidth = 1.0;
};

struct MmdFuseConfig {
  // Used as given when nonempty; otherwise a grid is built from the pooled
  // sample: for each family, bandwidths_per_family log-spaced values over
  // [median / grid_span, median * grid_span] of that family's distances.
  std::vector<MmdKernel> kernels;
  std::vector<KernelFamily> families = {KernelFamily::rbf, KernelFamily::laplace};
  std::size_t bandwidths_per_family = 10;
  double grid_span = 8.0;
  std::size_t permutations = 1000;
  double beta = 1.0;

  void validate() const;
};

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t permutations = 0;
  double alpha = 0.05;
  bool decision = false;  // p_value < alpha
};

nlohmann::json to_json(const TestResult& r);
TestResult test_result_from_json(const nlohmann::json& j);

// Kernel bank for the pooled rows of x and y under the config.
std::vector<MmdKernel> mmd_kernel_bank(const Matrix& x, const Matrix& y, const MmdFuseConfig& config);
// Unbiased MMD^2 with the cross term normalized by m n.
double mmd_unbiased(const Matrix& x, const Matrix& y, const MmdKernel& kernel);
// (1 / beta) log sum_m exp(beta MMD^2_m).
double mmd_fuse_statistic(const Matrix& x, const Matrix& y, std::span<const MmdKernel> kernels, double beta);
// Permutation test over relabelings of the pooled sample. The p-value is
// (1 + #{permuted >= observed}) / (B + 1).
TestResult mmd_fuse(const Matrix& x, const Matrix& y, const MmdFuseConfig& config, RngStream& rng,
                    double alpha = 0.05);

// Tr(HKH L) / (n - 1)^2 with median-heuristic RBF kernels.
double hsic_statistic(const Matrix& x, const Matrix& y);
// Independence test between paired rows; the null permutes the pairing.
TestResult hsic_test(const Matrix& x, const Matrix& y, std::size_t permutations, RngStream& rng,
                     double alpha = 0.05);

std::string to_string(KernelFamily f);

}  // namespace kdd
