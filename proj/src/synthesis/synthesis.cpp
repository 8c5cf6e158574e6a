#include "kdd/synthesis/synthesis.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "kdd/error.hpp"
#include "kdd/numerics/matrix_io.hpp"

namespace kdd {

namespace {

// Keeps the batch standard deviation differentiable when a layer collapses.
constexpr double kStdEps = 1e-8;

Matrix glorot(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (double& v : w.values()) v = bound * (2.0 * rng.uniform() - 1.0);
  return w;
}

void check_rows(const Generator& gen, const Matrix& z, const Matrix& label_rows) {
  const GeneratorSpec& s = gen.spec();
  if (z.cols() != s.latent_dim) throw InvalidShape("generator: latent width mismatch");
  if (label_rows.cols() != s.num_classes || label_rows.rows() != z.rows())
    throw InvalidShape("generator: label rows do not match latents");
}

Matrix sqrt_entries(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = std::sqrt(v);
  return out;
}

}  // namespace

void GeneratorSpec::validate() const {
  if (latent_dim == 0 || embed_dim == 0 || output_dim == 0) throw InvalidInput("generator: zero width");
  if (num_classes < 2) throw InvalidInput("generator: at least two classes required");
  for (std::size_t w : hidden)
    if (w == 0) throw InvalidInput("generator: zero hidden width");
}

Generator::Generator(GeneratorSpec spec, RngStream& rng) : spec_(std::move(spec)) {
  spec_.validate();
  auto add = [&](std::string name, Matrix m) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(m));
  };
  add("encoder.weight", glorot(spec_.latent_dim + spec_.num_classes, spec_.embed_dim, rng));
  add("encoder.bias", Matrix(1, spec_.embed_dim));
  std::size_t in = spec_.embed_dim;
  for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
    add("hidden" + std::to_string(l) + ".weight", glorot(in, spec_.hidden[l], rng));
    add("hidden" + std::to_string(l) + ".bias", Matrix(1, spec_.hidden[l]));
    in = spec_.hidden[l];
  }
  add("output.weight", glorot(in, spec_.output_dim, rng));
  add("output.bias", Matrix(1, spec_.output_dim));
}

Matrix& Generator::parameter(const std::string& name) {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw InvalidInput("no generator parameter named '" + name + "'");
  return params_[static_cast<std::size_t>(it - names_.begin())];
}

const Matrix& Generator::parameter(const std::string& name) const {
  return const_cast<Generator*>(this)->parameter(name);
}

Matrix Generator::label_embedding() const {
  const Matrix& w = parameter("encoder.weight");
  std::vector<std::size_t> rows;
  for (std::size_t c = 0; c < spec_.num_classes; ++c) rows.push_back(spec_.latent_dim + c);
  return w.select_rows(rows);
}

Matrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Matrix out(labels.size(), num_classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= num_classes) throw InvalidInput("one_hot: label out of range");
    out(r, labels[r]) = 1.0;
  }
  return out;
}

Var generate_on_tape(Tape& tape, const Generator& gen, std::span<const Var> params, const Matrix& z,
                     const Matrix& label_rows) {
  check_rows(gen, z, label_rows);
  if (params.size() != gen.parameters().size()) throw InvalidShape("generator: parameter node count mismatch");
  Var h = tape.add_row(tape.matmul(tape.constant(hconcat(z, label_rows)), params[0]), params[1]);
  std::size_t slot = 2;
  for (std::size_t l = 0; l < gen.spec().hidden.size(); ++l, slot += 2)
    h = tape.tanh(tape.add_row(tape.matmul(h, params[slot]), params[slot + 1]));
  return tape.add_row(tape.matmul(h, params[slot]), params[slot + 1]);
}

namespace {

std::vector<Var> constant_params(Tape& tape, const Generator& gen) {
  std::vector<Var> out;
  for (const Matrix& p : gen.parameters()) out.push_back(tape.constant(p));
  return out;
}

}  // namespace

Matrix encode(const Generator& gen, const Matrix& z, const Matrix& label_rows) {
  check_rows(gen, z, label_rows);
  Matrix e = matmul(hconcat(z, label_rows), gen.parameter("encoder.weight"));
  const Matrix& b = gen.parameter("encoder.bias");
  for (std::size_t r = 0; r < e.rows(); ++r)
    for (std::size_t c = 0; c < e.cols(); ++c) e(r, c) += b(0, c);
  return e;
}

Matrix generate(const Generator& gen, const Matrix& z, const Matrix& label_rows) {
  Tape tape;
  const std::vector<Var> params = constant_params(tape, gen);
  return tape.value(generate_on_tape(tape, gen, params, z, label_rows));
}

Matrix generate(const Generator& gen, const Matrix& z, std::span<const std::size_t> labels) {
  return generate(gen, z, one_hot(labels, gen.spec().num_classes));
}

Matrix mixed_latent(std::span<const Matrix> z_list, std::span<const std::size_t> y_list,
                    std::span<const double> weights, const Generator& gen) {
  if (z_list.empty() || z_list.size() != y_list.size() || z_list.size() != weights.size())
    throw InvalidInput("mixed_latent: latents, labels and weights must have equal nonzero length");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidInput("mixed_latent: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("mixed_latent: weights must sum to one");
  const std::size_t latent = gen.spec().latent_dim;
  Matrix z(1, latent);
  Matrix y(1, gen.spec().num_classes);
  for (std::size_t i = 0; i < z_list.size(); ++i) {
    if (z_list[i].size() != latent) throw InvalidShape("mixed_latent: latent width mismatch");
    if (y_list[i] >= gen.spec().num_classes) throw InvalidInput("mixed_latent: label out of range");
    for (std::size_t c = 0; c < latent; ++c) z(0, c) += weights[i] * z_list[i].values()[c];
    y(0, y_list[i]) += weights[i];
  }
  return generate(gen, z, y);
}

double bns_loss(const ClassifierModel& student, std::span<const BatchStatistics> batch) {
  const BatchNormState& bn = student.batch_norm();
  if (student.batch_norm_layers() == 0) throw NoStatisticsAvailable("bns_loss: student has no batch-norm layers");
  if (batch.size() != student.batch_norm_layers()) throw InvalidShape("bns_loss: one statistic pair per layer");
  double total = 0.0;
  for (std::size_t l = 0; l < batch.size(); ++l) {
    const Matrix& rm = bn.running_mean[l];
    if (!batch[l].mean.same_shape(rm) || !batch[l].std.same_shape(rm))
      throw InvalidShape("bns_loss: statistic width mismatch");
    for (std::size_t c = 0; c < rm.size(); ++c) {
      const double dm = batch[l].mean.values()[c] - rm.values()[c];
      const double ds = batch[l].std.values()[c] - std::sqrt(bn.running_var[l].values()[c]);
      total += dm * dm + ds * ds;
    }
  }
  return total;
}

Var bns_loss_on_tape(Tape& tape, const ClassifierModel& student, std::span<const Var> bn_inputs) {
  const BatchNormState& bn = student.batch_norm();
  if (student.batch_norm_layers() == 0) throw NoStatisticsAvailable("bns_loss: student has no batch-norm layers");
  if (bn_inputs.size() != student.batch_norm_layers()) throw InvalidShape("bns_loss: one input per layer");
  Var total{};
  for (std::size_t l = 0; l < bn_inputs.size(); ++l) {
    const Var dm = tape.sub(tape.col_mean(bn_inputs[l]), tape.constant(bn.running_mean[l]));
    const Var ds = tape.sub(tape.col_std(bn_inputs[l], kStdEps), tape.constant(sqrt_entries(bn.running_var[l])));
    const Var term = tape.add(tape.sum(tape.square(dm)), tape.sum(tape.square(ds)));
    total = l == 0 ? term : tape.add(total, term);
  }
  return total;
}

std::vector<BatchStatistics> batch_statistics(const ClassifierModel& student, const Matrix& inputs) {
  Tape tape;
  const TapeForward pass =
      forward_on_tape(tape, student, tape.constant(inputs), NormalizationSource::running, false);
  std::vector<BatchStatistics> out;
  for (Var v : pass.bn_inputs)
    out.push_back({tape.value(tape.col_mean(v)), tape.value(tape.col_std(v, kStdEps))});
  return out;
}

void SynthesisConfig::validate() const {
  if (!(mixup_probability >= 0.0 && mixup_probability <= 1.0))
    throw InvalidInput("synthesis: mixup_probability outside [0, 1]");
  if (mix_count < 1) throw InvalidInput("synthesis: mix_count must be at least 1");
  if (batch_size < 2) throw InvalidInput("synthesis: batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw InvalidInput("synthesis: learning_rate must be positive");
  if (!(bns_weight >= 0.0)) throw InvalidInput("synthesis: bns_weight must be non-negative");
}

GeneratorSpec generator_spec_for(const MlpArchitecture& student, std::size_t latent_dim, std::size_t embed_dim,
                                 std::vector<std::size_t> hidden) {
  return {latent_dim, embed_dim, std::move(hidden), student.input_dim, student.num_classes};
}

GeneratorTraining train_generator_with_history(const ClassifierModel& student, const GeneratorSpec& spec,
                                               const SynthesisConfig& config) {
  config.validate();
  spec.validate();
  const MlpArchitecture& arch = student.architecture();
  if (spec.output_dim != arch.input_dim) throw InvalidShape("synthesis: generator output_dim != student input_dim");
  if (spec.num_classes != arch.num_classes) throw InvalidShape("synthesis: class count mismatch");

  const bool use_bns = student.batch_norm_layers() > 0 && config.bns_weight > 0.0;
  if (student.batch_norm_layers() == 0)
    spdlog::warn("student has no batch-norm layers; generator uses the confidence loss only");

  RngStream root(config.seed);
  RngStream init = root.split(0);
  RngStream sampler = root.split(1);
  GeneratorTraining out{Generator(spec, init), {}, {}};
  Generator& gen = out.generator;
  const std::size_t n = config.batch_size;
  const std::size_t classes = spec.num_classes;

  for (std::size_t step = 0; step < config.epochs; ++step) {
    const bool mix = config.mix_count > 1 && sampler.uniform() < config.mixup_probability;
    Matrix z(n, spec.latent_dim);
    Matrix targets(n, classes);
    for (std::size_t r = 0; r < n; ++r) {
      if (!mix) {
        for (std::size_t c = 0; c < spec.latent_dim; ++c) z(r, c) = sampler.normal();
        targets(r, sampler.below(classes)) = 1.0;
        continue;
      }
      const std::vector<double> w = dirichlet_sample(1.0, config.mix_count, sampler);
      for (double wi : w) {
        for (std::size_t c = 0; c < spec.latent_dim; ++c) z(r, c) += wi * sampler.normal();
        targets(r, sampler.below(classes)) += wi;
      }
    }

    Tape tape;
    std::vector<Var> params;
    for (const Matrix& p : gen.parameters()) params.push_back(tape.leaf(p));
    const Var x = generate_on_tape(tape, gen, params, z, targets);
    const TapeForward pass = forward_on_tape(tape, student, x, NormalizationSource::running, false);
    Var loss = tape.soft_cross_entropy(pass.logits, targets);
    double bns = 0.0;
    if (use_bns) {
      const Var b = bns_loss_on_tape(tape, student, pass.bn_inputs);
      bns = tape.value(b)(0, 0);
      loss = tape.add(loss, tape.scale(b, config.bns_weight));
    }
    out.losses.push_back(tape.value(loss)(0, 0));
    out.bns_losses.push_back(bns);
    if (!std::isfinite(out.losses.back()))
      throw DegenerateBatch("generator training diverged at step " + std::to_string(step) +
                            "; lower the synthesis learning rate");

    const std::vector<Matrix> grads = backward(tape, loss, params);
    for (std::size_t i = 0; i < grads.size(); ++i) gen.parameters()[i] -= grads[i] * config.learning_rate;
  }
  return out;
}

Generator train_generator(const ClassifierModel& student, const GeneratorSpec& spec, const SynthesisConfig& config) {
  return train_generator_with_history(student, spec, config).generator;
}

void InputSet::validate(std::size_t num_classes) const {
  if (inputs.rows() == 0) throw InvalidInput("input set is empty");
  if (!labels.empty()) {
    if (labels.size() != inputs.rows()) throw InvalidInput("input set: one label per row required");
    for (std::size_t y : labels)
      if (y >= num_classes) throw InvalidInput("input set: label out of range");
  }
}

InputSet build_input_set(const Generator& gen, std::size_t n, RngStream& rng) {
  if (n == 0) throw InvalidInput("build_input_set: n must be positive");
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % gen.spec().num_classes;
  const Matrix z = rng.normal_matrix(n, gen.spec().latent_dim);
  return {generate(gen, z, labels), std::move(labels), InputSource::synthetic, rng.seed()};
}

InputSet noise_input_set(std::size_t n, std::size_t input_dim, RngStream& rng) {
  if (n == 0 || input_dim == 0) throw InvalidInput("noise_input_set: empty shape");
  return {rng.normal_matrix(n, input_dim), {}, InputSource::noise, rng.seed()};
}

InputSet oracle_input_set(const Dataset& data, std::size_t n, RngStream& rng) {
  if (n == 0) throw InvalidInput("oracle_input_set: n must be positive");
  if (n > data.size()) throw InvalidInput("oracle_input_set: n exceeds the dataset size");
  std::vector<std::size_t> rows = rng.permutation(data.size());
  rows.resize(n);
  const Dataset picked = data.subset(rows);
  return {picked.features, picked.labels, InputSource::oracle, rng.seed()};
}

std::string to_string(InputSource s) {
  switch (s) {
    case InputSource::synthetic: return "synthetic";
    case InputSource::noise: return "noise";
    case InputSource::oracle: return "oracle";
  }
  return "synthetic";
}

InputSource input_source_from_string(const std::string& s) {
  if (s == "synthetic") return InputSource::synthetic;
  if (s == "noise") return InputSource::noise;
  if (s == "oracle") return InputSource::oracle;
  throw InvalidInput("unknown input source '" + s + "'");
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  return p.replace_extension(".json");
}

}  // namespace

void save_input_set(const std::filesystem::path& path, const InputSet& set) {
  nlohmann::json meta = {{"format", "kdd-input-set"},
                         {"format_version", 1},
                         {"rows", set.inputs.rows()},
                         {"labels", set.labels},
                         {"source", to_string(set.source)}};
  meta["seed"] = set.seed ? nlohmann::json(*set.seed) : nlohmann::json(nullptr);
  save_csv(path, set.inputs);
  write_file(sidecar_path(path), meta.dump(2) + "\n");
}

InputSet load_input_set(const std::filesystem::path& path) {
  InputSet set;
  set.inputs = load_csv(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(sidecar_path(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(e.byte, std::string("input set sidecar: ") + e.what());
  }
  try {
    if (meta.at("format") != "kdd-input-set" || meta.at("format_version") != 1)
      throw FormatError(0, "input set sidecar: unsupported format");
    set.labels = meta.at("labels").get<std::vector<std::size_t>>();
    set.source = input_source_from_string(meta.at("source").get<std::string>());
    if (!meta.at("seed").is_null()) set.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(0, std::string("input set sidecar: ") + e.what());
  }
  if (!set.labels.empty() && set.labels.size() != set.inputs.rows())
    throw FormatError(0, "input set sidecar: label count does not match rows");
  return set;
}

}  // namespace kdd
