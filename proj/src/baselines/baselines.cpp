#include "kdd/baselines/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdd/error.hpp"
#include "kdd/numerics/kernel.hpp"
#include "kdd/numerics/linalg.hpp"
#include "kdd/scores/scores.hpp"

namespace kdd {

double energy_score(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInput("energy_score: empty logits");
  return -logsumexp(logits);
}

namespace {

InputSet take_rows(const InputSet& in, std::vector<std::size_t> rows) {
  InputSet out;
  out.inputs = in.inputs.select_rows(rows);
  if (!in.labels.empty())
    for (std::size_t r : rows) out.labels.push_back(in.labels[r]);
  out.source = in.source;
  out.seed = in.seed;
  return out;
}

double sigmoid(double t) { return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

// Median of the strictly upper triangle, or of its positive entries when the
// plain median is zero.
double robust_median(const Matrix& d) {
  const double m = median_offdiagonal(d);
  if (m > 0.0) return m;
  std::vector<double> positive;
  for (std::size_t i = 0; i < d.rows(); ++i)
    for (std::size_t j = i + 1; j < d.cols(); ++j)
      if (d(i, j) > 0.0) positive.push_back(d(i, j));
  if (positive.empty()) throw DegenerateSet("all pooled rows are identical");
  std::sort(positive.begin(), positive.end());
  const std::size_t k = positive.size() / 2;
  return positive.size() % 2 ? positive[k] : 0.5 * (positive[k - 1] + positive[k]);
}

Matrix euclidean_distances(const Matrix& z) {
  Matrix d = pairwise_sq_distances(z);
  for (double& v : d.values()) v = std::sqrt(std::max(v, 0.0));
  return d;
}

double kernel_value(KernelFamily family, double distance, double bandwidth) {
  return family == KernelFamily::rbf ? std::exp(-distance * distance / (2.0 * bandwidth * bandwidth))
                                     : std::exp(-distance / bandwidth);
}

// Distances of the pooled rows under each family's metric.
struct PooledDistances {
  Matrix euclidean;
  Matrix l1;
  const Matrix& of(KernelFamily f) const { return f == KernelFamily::rbf ? euclidean : l1; }
};

PooledDistances pooled_distances(const Matrix& z) { return {euclidean_distances(z), pairwise_l1_distances(z)}; }

std::vector<MmdKernel> bank_from(const PooledDistances& d, const MmdFuseConfig& config) {
  if (!config.kernels.empty()) return config.kernels;
  std::vector<MmdKernel> out;
  for (KernelFamily f : config.families) {
    const double median = robust_median(d.of(f));
    const std::size_t count = config.bandwidths_per_family;
    for (std::size_t k = 0; k < count; ++k) {
      const double t = count == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(count - 1);
      out.push_back({f, median * std::pow(config.grid_span, 2.0 * t - 1.0)});
    }
  }
  return out;
}

double log_sum_exp_scaled(std::span<const double> values, double beta) {
  std::vector<double> scaled(values.begin(), values.end());
  for (double& v : scaled) v *= beta;
  return logsumexp(scaled) / beta;
}

void check_pair(const Matrix& x, const Matrix& y, std::size_t min_rows, const char* who) {
  if (x.rows() != y.rows()) throw InvalidInput(std::string(who) + ": row counts differ");
  if (x.rows() < min_rows) throw InvalidInput(std::string(who) + ": too few rows");
}

}  // namespace

InputSet ood_filter(const InputSet& inputs, const ClassifierModel& student, double keep_fraction) {
  if (inputs.size() == 0) throw InvalidInput("ood_filter: empty input set");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw InvalidInput("ood_filter: keep_fraction outside (0, 1]");
  const Matrix logits = evaluate(student, inputs.inputs);
  const std::size_t n = inputs.size();
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n))));
  std::vector<double> energy(n);
  for (std::size_t r = 0; r < n; ++r) energy[r] = energy_score(logits.row(r));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return energy[a] < energy[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return take_rows(inputs, order);
}

InputSet mia_filter(const InputSet& inputs, const ClassifierModel& student, RngStream& rng,
                    const MiaFilterConfig& config) {
  const std::size_t n = inputs.size();
  if (n < 4) throw InvalidInput("mia_filter: at least four inputs required");
  const Matrix logits = evaluate(student, inputs.inputs);
  const std::size_t half = n / 2;
  const std::size_t dim = logits.cols();

  std::vector<double> label(half);
  for (double& v : label) v = rng.bernoulli(0.5) ? 1.0 : 0.0;

  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t r = 0; r < half; ++r) {
      const double err = sigmoid(dot(w, logits.row(r)) + b) - label[r];
      for (std::size_t c = 0; c < dim; ++c) gw[c] += err * logits(r, c);
      gb += err;
    }
    for (std::size_t c = 0; c < dim; ++c) w[c] -= config.learning_rate * gw[c] / static_cast<double>(half);
    b -= config.learning_rate * gb / static_cast<double>(half);
  }

  std::vector<std::size_t> kept;
  std::size_t best = half;
  double best_p = -1.0;
  for (std::size_t r = half; r < n; ++r) {
    const double p = sigmoid(dot(w, logits.row(r)) + b);
    if (p > 0.5) kept.push_back(r);
    if (p > best_p) {
      best_p = p;
      best = r;
    }
  }
  if (kept.empty()) kept.push_back(best);
  return take_rows(inputs, kept);
}

void MmdFuseConfig::validate() const {
  if (permutations < 1) throw InvalidInput("mmd_fuse: at least one permutation required");
  if (!(beta > 0.0)) throw InvalidInput("mmd_fuse: beta must be positive");
  if (kernels.empty() && (families.empty() || bandwidths_per_family == 0))
    throw InvalidInput("mmd_fuse: empty kernel bank");
  if (kernels.empty() && !(grid_span >= 1.0)) throw InvalidInput("mmd_fuse: grid_span must be at least 1");
  for (const MmdKernel& k : kernels)
    if (!(k.bandwidth > 0.0)) throw InvalidBandwidth("mmd_fuse: kernel bandwidth must be positive");
}

nlohmann::json to_json(const TestResult& r) {
  return {{"statistic", r.statistic},
          {"p_value", r.p_value},
          {"permutations", r.permutations},
          {"alpha", r.alpha},
          {"decision", r.decision}};
}

TestResult test_result_from_json(const nlohmann::json& j) {
  TestResult r;
  r.statistic = j.at("statistic").get<double>();
  r.p_value = j.at("p_value").get<double>();
  r.permutations = j.at("permutations").get<std::size_t>();
  r.alpha = j.at("alpha").get<double>();
  r.decision = j.at("decision").get<bool>();
  return r;
}

std::vector<MmdKernel> mmd_kernel_bank(const Matrix& x, const Matrix& y, const MmdFuseConfig& config) {
  config.validate();
  return bank_from(pooled_distances(vconcat(x, y)), config);
}

double mmd_unbiased(const Matrix& x, const Matrix& y, const MmdKernel& kernel) {
  if (x.rows() < 2 || y.rows() < 2) throw InvalidInput("mmd: at least two rows per sample");
  if (x.cols() != y.cols()) throw InvalidShape("mmd: sample widths differ");
  if (!(kernel.bandwidth > 0.0)) throw InvalidBandwidth("mmd: bandwidth must be positive");
  const PooledDistances d = pooled_distances(vconcat(x, y));
  const Matrix& dist = d.of(kernel.family);
  const std::size_t m = x.rows(), n = y.rows();
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < m + n; ++i)
    for (std::size_t j = 0; j < m + n; ++j) {
      if (i == j) continue;
      const double k = kernel_value(kernel.family, dist(i, j), kernel.bandwidth);
      if (i < m && j < m) xx += k;
      else if (i >= m && j >= m) yy += k;
      else if (i < m) xy += k;
    }
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  return xx / (dm * (dm - 1.0)) + yy / (dn * (dn - 1.0)) - 2.0 * xy / (dm * dn);
}

double mmd_fuse_statistic(const Matrix& x, const Matrix& y, std::span<const MmdKernel> kernels, double beta) {
  if (kernels.empty()) throw InvalidInput("mmd_fuse: empty kernel bank");
  std::vector<double> values;
  for (const MmdKernel& k : kernels) values.push_back(mmd_unbiased(x, y, k));
  return log_sum_exp_scaled(values, beta);
}

TestResult mmd_fuse(const Matrix& x, const Matrix& y, const MmdFuseConfig& config, RngStream& rng, double alpha) {
  config.validate();
  check_pair(x, y, 2, "mmd_fuse");
  if (x.cols() != y.cols()) throw InvalidShape("mmd_fuse: sample widths differ");
  const std::size_t n = x.rows();
  const std::size_t total = 2 * n;
  const PooledDistances d = pooled_distances(vconcat(x, y));
  const std::vector<MmdKernel> bank = bank_from(d, config);
  const std::size_t kcount = bank.size();

  // Kernel values per unordered pair, kernel-minor.
  const std::size_t pairs = total * (total - 1) / 2;
  std::vector<double> values(pairs * kcount);
  std::vector<double> pair_total(kcount, 0.0);
  {
    std::size_t p = 0;
    for (std::size_t i = 0; i < total; ++i)
      for (std::size_t j = i + 1; j < total; ++j, ++p)
        for (std::size_t k = 0; k < kcount; ++k) {
          const double v = kernel_value(bank[k].family, d.of(bank[k].family)(i, j), bank[k].bandwidth);
          values[p * kcount + k] = v;
          pair_total[k] += v;
        }
  }

  // With signs s (+1 first sample, -1 second) and Q = sum_{i<j} s_i s_j k_ij,
  // the within-sample pair sum is (T + Q) / 2 and the cross sum (T - Q) / 2.
  const double dn = static_cast<double>(n);
  std::vector<double> q(kcount), mmd(kcount);
  std::vector<int> sign(total);
  auto statistic = [&]() {
    std::fill(q.begin(), q.end(), 0.0);
    std::size_t p = 0;
    for (std::size_t i = 0; i < total; ++i)
      for (std::size_t j = i + 1; j < total; ++j, ++p) {
        const double s = sign[i] == sign[j] ? 1.0 : -1.0;
        const double* v = &values[p * kcount];
        for (std::size_t k = 0; k < kcount; ++k) q[k] += s * v[k];
      }
    for (std::size_t k = 0; k < kcount; ++k) {
      const double same = 0.5 * (pair_total[k] + q[k]);
      const double cross = 0.5 * (pair_total[k] - q[k]);
      mmd[k] = 2.0 * same / (dn * (dn - 1.0)) - 2.0 * cross / (dn * dn);
    }
    return log_sum_exp_scaled(mmd, config.beta);
  };

  for (std::size_t i = 0; i < total; ++i) sign[i] = i < n ? 1 : -1;
  TestResult result;
  result.statistic = statistic();
  std::size_t exceed = 0;
  for (std::size_t b = 0; b < config.permutations; ++b) {
    const std::vector<std::size_t> perm = rng.permutation(total);
    for (std::size_t i = 0; i < total; ++i) sign[perm[i]] = i < n ? 1 : -1;
    if (statistic() >= result.statistic) ++exceed;
  }
  result.permutations = config.permutations;
  result.p_value = static_cast<double>(1 + exceed) / static_cast<double>(config.permutations + 1);
  result.alpha = alpha;
  result.decision = result.p_value < alpha;
  return result;
}

namespace {

Matrix hsic_centered_gram(const Matrix& x) {
  const double bw = select_bandwidth(x, BandwidthPolicy{});
  return center(rbf_kernel(x, bw).base, CenterMode::twosided);
}

double hsic_pairing(const Matrix& kc, const Matrix& l, std::span<const std::size_t> perm) {
  const std::size_t n = kc.rows();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto li = l.row(perm[i]);
    const auto ki = kc.row(i);
    for (std::size_t j = 0; j < n; ++j) s += ki[j] * li[perm[j]];
  }
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return s / denom;
}

}  // namespace

double hsic_statistic(const Matrix& x, const Matrix& y) {
  check_pair(x, y, 2, "hsic");
  const Matrix kc = hsic_centered_gram(x);
  const Matrix l = rbf_kernel(y, select_bandwidth(y, BandwidthPolicy{})).base;
  std::vector<std::size_t> id(x.rows());
  std::iota(id.begin(), id.end(), 0);
  return hsic_pairing(kc, l, id);
}

TestResult hsic_test(const Matrix& x, const Matrix& y, std::size_t permutations, RngStream& rng, double alpha) {
  check_pair(x, y, 4, "hsic_test");
  if (permutations < 1) throw InvalidInput("hsic_test: at least one permutation required");
  const Matrix kc = hsic_centered_gram(x);
  const Matrix l = rbf_kernel(y, select_bandwidth(y, BandwidthPolicy{})).base;
  std::vector<std::size_t> perm(x.rows());
  std::iota(perm.begin(), perm.end(), 0);
  TestResult result;
  result.statistic = hsic_pairing(kc, l, perm);
  std::size_t exceed = 0;
  for (std::size_t b = 0; b < permutations; ++b) {
    perm = rng.permutation(x.rows());
    if (hsic_pairing(kc, l, perm) >= result.statistic) ++exceed;
  }
  result.permutations = permutations;
  result.p_value = static_cast<double>(1 + exceed) / static_cast<double>(permutations + 1);
  result.alpha = alpha;
  result.decision = result.p_value < alpha;
  return result;
}

std::string to_string(KernelFamily f) { return f == KernelFamily::rbf ? "rbf" : "laplace"; }

}  // namespace kdd
