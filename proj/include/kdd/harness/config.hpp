#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "kdd/baselines/baselines.hpp"
#include "kdd/distill/distill.hpp"
#include "kdd/models/mlp.hpp"
#include "kdd/models/training.hpp"
#include "kdd/pipeline/pipeline.hpp"
#include "kdd/synthesis/synthesis.hpp"

namespace kdd {

inline constexpr int kConfigVersion = 1;

struct DatasetSpec {
  std::size_t classes = 4;
  std::size_t points_per_class = 200;
  std::size_t input_dim = 8;
  double spread = 0.6;
  double holdout_fraction = 0.25;
};

struct TeacherSpec {
  std::string id;
  std::string architecture;
};

// One detection method: how probe inputs are built and how they are scored.
// score is point_kl, acs, cka or mmd_fuse.
struct MethodSpec {
  std::string name;
  InputSource source = InputSource::synthetic;
  NoiseFilter filter = NoiseFilter::none;
  std::string score = "point_kl";
};

struct PairwiseSpec {
  bool enabled = false;
  double alpha = 0.05;
  std::size_t permutations = 1000;
  std::size_t n = 100;
  InputSource source = InputSource::synthetic;
};

struct GeneratorDims {
  std::size_t latent_dim = 16;
  std::size_t embed_dim = 32;
  std::vector<std::size_t> hidden = {64, 64};
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::map<std::string, std::vector<HiddenLayerSpec>> architectures;
  std::vector<TeacherSpec> teachers;
  std::vector<std::string> student_architectures;
  TrainConfig teacher_training;
  DistillConfig distill;
  SynthesisConfig synthesis;
  GeneratorDims generator;
  ScoreConfig score;
  MmdFuseConfig mmd;
  double ood_keep = 0.5;
  MiaFilterConfig mia;
  std::vector<MethodSpec> methods;
  std::vector<std::size_t> input_sizes = {100};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<double> lambda_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
  // Inputs the sweep compares models on: "holdout" (the held-out split, the
  // same rows for every lambda) or "synthetic" (a probe set generated for
  // each student).
  std::string sweep_inputs = "holdout";
  PairwiseSpec pairwise;
  std::string output_dir = "out";
  std::size_t threads = 0;  // 0: default_thread_count()

  // Throws ConfigError naming the offending field.
  void validate() const;
  MlpArchitecture architecture(const std::string& name) const;
};

// Missing fields keep their defaults; unknown fields are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

// The desk benchmark: a 4-class mixture, three teachers, three student
// architectures, KD students with lambda 1.
ExperimentConfig desk_benchmark_config();

}  // namespace kdd
