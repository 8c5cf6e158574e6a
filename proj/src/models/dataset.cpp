#include "kdd/models/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kdd/error.hpp"

namespace kdd {

namespace {
constexpr double kCenterRadius = 2.0;
}

void Dataset::validate() const {
  if (features.rows() != labels.size())
    throw InvalidInput("dataset: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(features.rows()) + " rows");
  for (std::size_t y : labels)
    if (y >= num_classes) throw InvalidInput("dataset: label " + std::to_string(y) + " out of range");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out{features.select_rows(rows), {}, num_classes};
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels[r]);
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double second_fraction, RngStream& rng) {
  if (!(second_fraction >= 0.0 && second_fraction <= 1.0)) throw InvalidInput("split_dataset: fraction outside [0, 1]");
  const auto second = static_cast<std::size_t>(std::llround(second_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> order = rng.permutation(data.size());
  std::vector<std::size_t> a(order.begin(), order.end() - static_cast<std::ptrdiff_t>(second));
  std::vector<std::size_t> b(order.end() - static_cast<std::ptrdiff_t>(second), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {data.subset(a), data.subset(b)};
}

Matrix mixture_centers(std::size_t num_classes, std::size_t input_dim, RngStream& rng) {
  Matrix centers(num_classes, input_dim);
  if (input_dim == 1) {
    for (std::size_t c = 0; c < num_classes; ++c)
      centers(c, 0) = kCenterRadius * (static_cast<double>(c) - 0.5 * static_cast<double>(num_classes - 1));
    return centers;
  }
  // Orthonormal pair spanning the circle's plane.
  std::vector<double> u(input_dim), v(input_dim);
  for (double& x : u) x = rng.normal();
  for (double& x : v) x = rng.normal();
  const double nu = norm2(u);
  for (double& x : u) x /= nu;
  const double proj = dot(u, v);
  for (std::size_t i = 0; i < input_dim; ++i) v[i] -= proj * u[i];
  const double nv = norm2(v);
  for (double& x : v) x /= nv;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
    for (std::size_t i = 0; i < input_dim; ++i)
      centers(c, i) = kCenterRadius * (std::cos(angle) * u[i] + std::sin(angle) * v[i]);
  }
  return centers;
}

Dataset make_gaussian_mixture(std::size_t num_classes, std::size_t points_per_class,
                              std::size_t input_dim, double spread, RngStream& rng) {
  if (num_classes == 0 || points_per_class == 0 || input_dim == 0)
    throw InvalidInput("make_gaussian_mixture: counts must be at least 1");
  if (spread < 0.0) throw InvalidInput("make_gaussian_mixture: spread must be nonnegative");
  const Matrix centers = mixture_centers(num_classes, input_dim, rng);
  Dataset data{Matrix(num_classes * points_per_class, input_dim), {}, num_classes};
  data.labels.reserve(num_classes * points_per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t p = 0; p < points_per_class; ++p, ++row) {
      for (std::size_t i = 0; i < input_dim; ++i) data.features(row, i) = centers(c, i) + spread * rng.normal();
      data.labels.push_back(c);
    }
  }
  return data;
}

}  // namespace kdd
