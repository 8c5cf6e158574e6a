#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "kdd/numerics/matrix.hpp"
#include "kdd/numerics/rng.hpp"

namespace kdd {

struct Dataset {
  Matrix features;                  // rows x input_dim
  std::vector<std::size_t> labels;  // one per row, each < num_classes
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return features.cols(); }
  // Throws InvalidInput when labels and rows disagree or a label is out of range.
  void validate() const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

// Isotropic Gaussian blobs, one per class. Centers sit on a circle of radius
// 2 in a plane drawn from the stream (on a line when input_dim is 1); rows are
// grouped by class, points_per_class each.
Dataset make_gaussian_mixture(std::size_t num_classes, std::size_t points_per_class,
                              std::size_t input_dim, double spread, RngStream& rng);

// Random split into (first, second) with round(fraction * size) rows in the
// second part. Row order within each part follows the original order.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double second_fraction, RngStream& rng);

// Class centers used by make_gaussian_mixture for the same stream state.
Matrix mixture_centers(std::size_t num_classes, std::size_t input_dim, RngStream& rng);

}  // namespace kdd
