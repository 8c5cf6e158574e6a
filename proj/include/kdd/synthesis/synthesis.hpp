#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdd/models/dataset.hpp"
#include "kdd/models/mlp.hpp"
#include "kdd/numerics/rng.hpp"
#include "kdd/numerics/tape.hpp"

namespace kdd {

struct GeneratorSpec {
  std::size_t latent_dim = 16;
  std::size_t embed_dim = 32;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t output_dim = 0;
  std::size_t num_classes = 0;

  void validate() const;
  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

// Label-conditioned generator. The encoder is one linear layer over
// concat(z, one_hot(y)); the body is tanh layers and a linear output.
class Generator {
 public:
  Generator() = default;
  Generator(GeneratorSpec spec, RngStream& rng);

  const GeneratorSpec& spec() const noexcept { return spec_; }
  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  std::vector<Matrix>& parameters() noexcept { return params_; }
  const std::vector<Matrix>& parameters() const noexcept { return params_; }
  Matrix& parameter(const std::string& name);
  const Matrix& parameter(const std::string& name) const;
  // The C x embed_dim block of the encoder weight acting on the one-hot half.
  Matrix label_embedding() const;

  friend bool operator==(const Generator&, const Generator&) = default;

 private:
  GeneratorSpec spec_;
  std::vector<std::string> names_;
  std::vector<Matrix> params_;
};

// Rows of one-hot encodings, n x C.
Matrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

// Encoder output for latent rows z (n x latent_dim) and label rows
// (n x C, one-hot or any convex combination).
Matrix encode(const Generator& gen, const Matrix& z, const Matrix& label_rows);
// Generated inputs for latent rows and label rows as above.
Matrix generate(const Generator& gen, const Matrix& z, const Matrix& label_rows);
Matrix generate(const Generator& gen, const Matrix& z, std::span<const std::size_t> labels);

// Tape version. Because the encoder is affine and the label weights sum to
// one, feeding the mixed (z, label) rows equals mixing the encodings.
Var generate_on_tape(Tape& tape, const Generator& gen, std::span<const Var> params, const Matrix& z,
                     const Matrix& label_rows);

// G(sum_i w_i e(z_i, y_i)) for one mixed sample, 1 x output_dim.
Matrix mixed_latent(std::span<const Matrix> z_list, std::span<const std::size_t> y_list,
                    std::span<const double> weights, const Generator& gen);

// Per batch-norm layer statistics of a batch: column means and standard
// deviations, each 1 x width.
struct BatchStatistics {
  Matrix mean;
  Matrix std;
};

// sum_l ||mean_l - running_mean_l||^2 + ||std_l - sqrt(running_var_l)||^2.
double bns_loss(const ClassifierModel& student, std::span<const BatchStatistics> batch);
// Same quantity from the pre-normalization nodes of a tape pass; batch
// standard deviations are biased.
Var bns_loss_on_tape(Tape& tape, const ClassifierModel& student, std::span<const Var> bn_inputs);
// Statistics of a batch of inputs as seen by the student's batch-norm layers.
std::vector<BatchStatistics> batch_statistics(const ClassifierModel& student, const Matrix& inputs);

struct SynthesisConfig {
  double mixup_probability = 0.4;
  std::size_t mix_count = 2;
  std::size_t epochs = 400;
  std::size_t batch_size = 64;
  double learning_rate = 1e-2;
  double bns_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratorTraining {
  Generator generator;
  std::vector<double> losses;      // objective per step
  std::vector<double> bns_losses;  // batch-statistics term per step (0 without batch norm)
};

// Trains a generator so the frozen student is confident on its outputs and
// their batch statistics match the student's running statistics. One epoch is
// one gradient step on a freshly sampled batch.
GeneratorTraining train_generator_with_history(const ClassifierModel& student, const GeneratorSpec& spec,
                                               const SynthesisConfig& config);
Generator train_generator(const ClassifierModel& student, const GeneratorSpec& spec, const SynthesisConfig& config);

// Generator spec sized for a student: output_dim and num_classes are taken
// from the student's architecture.
GeneratorSpec generator_spec_for(const MlpArchitecture& student, std::size_t latent_dim = 16,
                                 std::size_t embed_dim = 32, std::vector<std::size_t> hidden = {64, 64});

enum class InputSource { synthetic, noise, oracle };

struct InputSet {
  Matrix inputs;
  std::vector<std::size_t> labels;  // intended class per row; empty for noise
  InputSource source = InputSource::synthetic;
  std::optional<std::uint64_t> seed;

  std::size_t size() const noexcept { return inputs.rows(); }
  void validate(std::size_t num_classes) const;
};

// n samples with labels 0, 1, ..., C-1, 0, ... and fresh latents.
InputSet build_input_set(const Generator& gen, std::size_t n, RngStream& rng);
// n rows of i.i.d. standard normal entries.
InputSet noise_input_set(std::size_t n, std::size_t input_dim, RngStream& rng);
// n distinct rows of the dataset.
InputSet oracle_input_set(const Dataset& data, std::size_t n, RngStream& rng);

std::string to_string(InputSource s);
InputSource input_source_from_string(const std::string& s);

// Matrix CSV at `path` plus a JSON sidecar (labels, source, seed) at
// `path` with its extension replaced by ".json".
void save_input_set(const std::filesystem::path& path, const InputSet& set);
InputSet load_input_set(const std::filesystem::path& path);

}  // namespace kdd
