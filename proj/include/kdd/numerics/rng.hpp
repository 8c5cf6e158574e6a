#pragma once

#include <cstdint>
#include <vector>

#include "kdd/numerics/matrix.hpp"

namespace kdd {

// Counter-based generator: draw i of a stream with key k is splitmix64's
// finalizer applied to k + (i + 1) * 0x9E3779B97F4A7C15. Uses only integer
// arithmetic, so sequences are identical on every platform. Continuous
// distributions are built here (not via <random>) for the same reason.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(seed) {}

  std::uint64_t seed() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Uniform in (0, 1); safe to take the log of.
  double uniform_open() noexcept;
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;
  double gamma(double shape) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double scale = 1.0);
  std::vector<std::size_t> permutation(std::size_t n);
  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent child stream; the parent's position is not advanced.
  RngStream split(std::uint64_t index) const noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

// Dirichlet(concentration * 1) draw of the given size; entries sum to one.
std::vector<double> dirichlet_sample(double concentration, std::size_t count, RngStream& rng);

}  // namespace kdd
