#include "kdd/harness/config.hpp"

#include <exception>
#include <set>

#include "kdd/error.hpp"
#include "kdd/numerics/matrix_io.hpp"

namespace kdd {

namespace {

using nlohmann::json;

// Reads one JSON object, remembering its path for error messages and
// rejecting keys that were never asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions() == 0) finish();
  }
  void finish() {
    if (finished_) return;
    finished_ = true;
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError(at(key), "unknown field");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) { return used_.insert(key), j_.at(key); }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    out = get<T>(j_.at(key), at(key));
  }

  template <class T>
  static T get(const json& v, const std::string& path) {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError(path, "expected a nonnegative integer");
      } else if constexpr (std::is_arithmetic_v<T>) {
        if (!v.is_number()) throw ConfigError(path, "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path, "expected a string");
      } else {
        if (!v.is_array()) throw ConfigError(path, "expected an array");
        T out;
        for (std::size_t i = 0; i < v.size(); ++i)
          out.push_back(get<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
        return out;
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path, e.what());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
  bool finished_ = false;
};

template <class F>
auto convert(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

void read_training(const json& j, const std::string& path, TrainConfig& t) {
  Fields f(j, path);
  f.read("learning_rate", t.learning_rate);
  f.read("momentum", t.momentum);
  f.read("weight_decay", t.weight_decay);
  f.read("epochs", t.epochs);
  f.read("batch_size", t.batch_size);
}

json training_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size}};
}

std::vector<HiddenLayerSpec> read_layers(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of layers");
  std::vector<HiddenLayerSpec> layers;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    Fields f(j[i], p);
    HiddenLayerSpec layer;
    f.read("width", layer.width);
    if (f.has("activation")) {
      const auto name = Fields::get<std::string>(f.raw("activation"), f.at("activation"));
      layer.activation = convert(f.at("activation"), [&] { return activation_from_string(name); });
    }
    f.read("batch_norm", layer.batch_norm);
    layers.push_back(layer);
  }
  return layers;
}

MethodSpec read_method(const json& j, const std::string& path) {
  Fields f(j, path);
  MethodSpec m;
  f.read("name", m.name);
  if (f.has("source")) {
    const auto s = Fields::get<std::string>(f.raw("source"), f.at("source"));
    m.source = convert(f.at("source"), [&] { return input_source_from_string(s); });
  }
  if (f.has("filter")) {
    const auto s = Fields::get<std::string>(f.raw("filter"), f.at("filter"));
    m.filter = convert(f.at("filter"), [&] { return noise_filter_from_string(s); });
  }
  f.read("score", m.score);
  return m;
}

}  // namespace

MlpArchitecture ExperimentConfig::architecture(const std::string& name) const {
  const auto it = architectures.find(name);
  if (it == architectures.end()) throw ConfigError("architectures", "undefined architecture '" + name + "'");
  return {dataset.input_dim, it->second, dataset.classes};
}

void ExperimentConfig::validate() const {
  if (dataset.classes < 2) throw ConfigError("dataset.classes", "at least two classes required");
  if (dataset.points_per_class == 0) throw ConfigError("dataset.points_per_class", "must be positive");
  if (dataset.input_dim == 0) throw ConfigError("dataset.input_dim", "must be positive");
  if (!(dataset.spread > 0.0)) throw ConfigError("dataset.spread", "must be positive");
  if (!(dataset.holdout_fraction >= 0.0 && dataset.holdout_fraction < 1.0))
    throw ConfigError("dataset.holdout_fraction", "must lie in [0, 1)");
  for (const auto& [name, layers] : architectures)
    convert("architectures." + name, [&] { return architecture(name).validate(), 0; });
  if (teachers.empty()) throw ConfigError("teachers", "at least one teacher required");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    const std::string p = "teachers[" + std::to_string(i) + "]";
    if (teachers[i].id.empty()) throw ConfigError(p + ".id", "must be nonempty");
    if (!ids.insert(teachers[i].id).second) throw ConfigError(p + ".id", "duplicate id");
    if (teachers[i].id.find_first_of(",\"\n") != std::string::npos)
      throw ConfigError(p + ".id", "must not contain commas, quotes or newlines");
    if (!architectures.count(teachers[i].architecture))
      throw ConfigError(p + ".architecture", "undefined architecture '" + teachers[i].architecture + "'");
  }
  for (std::size_t i = 0; i < student_architectures.size(); ++i)
    if (!architectures.count(student_architectures[i]))
      throw ConfigError("student_architectures[" + std::to_string(i) + "]",
                        "undefined architecture '" + student_architectures[i] + "'");
  for (const auto& [name, layers] : architectures) {
    convert("teacher_training", [&] { return teacher_training.validate(architecture(name)), 0; });
    convert("distill.training", [&] { return distill.train.validate(architecture(name)), 0; });
  }
  convert("distill", [&] { return distill.validate(), 0; });
  convert("synthesis", [&] { return synthesis.validate(), 0; });
  convert("mmd", [&] { return mmd.validate(), 0; });
  convert("score", [&] { return score.point.validate(), score.bandwidth.validate(), 0; });
  if (generator.latent_dim == 0 || generator.embed_dim == 0) throw ConfigError("generator", "dimensions must be positive");
  if (!(ood_keep > 0.0 && ood_keep <= 1.0)) throw ConfigError("ood_keep", "must lie in (0, 1]");
  std::set<std::string> names;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const std::string p = "methods[" + std::to_string(i) + "]";
    if (methods[i].name.empty()) throw ConfigError(p + ".name", "must be nonempty");
    if (methods[i].name.find_first_of(",\"\n") != std::string::npos)
      throw ConfigError(p + ".name", "must not contain commas, quotes or newlines");
    if (!names.insert(methods[i].name).second) throw ConfigError(p + ".name", "duplicate method name");
    const std::string& s = methods[i].score;
    if (s != "point_kl" && s != "acs" && s != "cka" && s != "mmd_fuse")
      throw ConfigError(p + ".score", "unknown score '" + s + "'");
    if (methods[i].filter != NoiseFilter::none && methods[i].source != InputSource::noise)
      throw ConfigError(p + ".filter", "filters apply to the noise source only");
  }
  if (input_sizes.empty()) throw ConfigError("input_sizes", "at least one size required");
  for (std::size_t i = 0; i < input_sizes.size(); ++i)
    if (input_sizes[i] == 0) throw ConfigError("input_sizes[" + std::to_string(i) + "]", "must be positive");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed required");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i)
    if (!(lambda_grid[i] >= 0.0 && lambda_grid[i] <= 1.0))
      throw ConfigError("lambda_grid[" + std::to_string(i) + "]", "must lie in [0, 1]");
  if (sweep_inputs != "holdout" && sweep_inputs != "synthetic")
    throw ConfigError("sweep_inputs", "expected \"holdout\" or \"synthetic\"");
  if (sweep_inputs == "holdout" && !(dataset.holdout_fraction > 0.0))
    throw ConfigError("sweep_inputs", "the holdout split is empty");
  if (!(pairwise.alpha > 0.0 && pairwise.alpha < 1.0)) throw ConfigError("pairwise.alpha", "must lie in (0, 1)");
  if (pairwise.n < 4) throw ConfigError("pairwise.n", "at least four inputs required");
  if (pairwise.permutations == 0) throw ConfigError("pairwise.permutations", "must be positive");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Fields root(j, "");
  int version = kConfigVersion;
  root.read("format_version", version);
  if (version != kConfigVersion) throw ConfigError("format_version", "unsupported version " + std::to_string(version));

  if (root.has("dataset")) {
    Fields f(root.raw("dataset"), "dataset");
    f.read("classes", c.dataset.classes);
    f.read("points_per_class", c.dataset.points_per_class);
    f.read("input_dim", c.dataset.input_dim);
    f.read("spread", c.dataset.spread);
    f.read("holdout_fraction", c.dataset.holdout_fraction);
  }
  if (root.has("architectures")) {
    const json& a = root.raw("architectures");
    if (!a.is_object()) throw ConfigError("architectures", "expected an object");
    for (const auto& [name, layers] : a.items()) c.architectures[name] = read_layers(layers, "architectures." + name);
  }
  if (root.has("teachers")) {
    const json& t = root.raw("teachers");
    if (!t.is_array()) throw ConfigError("teachers", "expected an array");
    for (std::size_t i = 0; i < t.size(); ++i) {
      Fields f(t[i], "teachers[" + std::to_string(i) + "]");
      TeacherSpec spec;
      f.read("id", spec.id);
      f.read("architecture", spec.architecture);
      c.teachers.push_back(spec);
    }
  }
  root.read("student_architectures", c.student_architectures);
  if (root.has("teacher_training")) read_training(root.raw("teacher_training"), "teacher_training", c.teacher_training);
  if (root.has("distill")) {
    Fields f(root.raw("distill"), "distill");
    if (f.has("method")) {
      const auto s = Fields::get<std::string>(f.raw("method"), f.at("method"));
      c.distill.method = convert(f.at("method"), [&] { return distill_method_from_string(s); });
    }
    f.read("lambda", c.distill.lambda);
    f.read("temperature", c.distill.temperature);
    f.read("rkd_distance_weight", c.distill.rkd_distance_weight);
    f.read("rkd_angle_weight", c.distill.rkd_angle_weight);
    f.read("rkd_mix", c.distill.rkd_mix);
    if (f.has("training")) read_training(f.raw("training"), f.at("training"), c.distill.train);
  }
  if (root.has("synthesis")) {
    Fields f(root.raw("synthesis"), "synthesis");
    f.read("mixup_probability", c.synthesis.mixup_probability);
    f.read("mix_count", c.synthesis.mix_count);
    f.read("epochs", c.synthesis.epochs);
    f.read("batch_size", c.synthesis.batch_size);
    f.read("learning_rate", c.synthesis.learning_rate);
    f.read("bns_weight", c.synthesis.bns_weight);
  }
  if (root.has("generator")) {
    Fields f(root.raw("generator"), "generator");
    f.read("latent_dim", c.generator.latent_dim);
    f.read("embed_dim", c.generator.embed_dim);
    f.read("hidden", c.generator.hidden);
  }
  if (root.has("score")) {
    Fields f(root.raw("score"), "score");
    f.read("epsilon", c.score.point.epsilon);
    if (f.has("bandwidth")) {
      const json& b = f.raw("bandwidth");
      if (b.is_string() && b.get<std::string>() == "median") c.score.bandwidth = {};
      else if (b.is_number()) c.score.bandwidth = BandwidthPolicy::fixed(b.get<double>());
      else throw ConfigError(f.at("bandwidth"), "expected \"median\" or a number");
    }
    if (f.has("cka_centering")) {
      const auto s = Fields::get<std::string>(f.raw("cka_centering"), f.at("cka_centering"));
      if (s == "left") c.score.cka_centering = CenterMode::left;
      else if (s == "twosided") c.score.cka_centering = CenterMode::twosided;
      else throw ConfigError(f.at("cka_centering"), "expected \"left\" or \"twosided\"");
    }
  }
  if (root.has("mmd")) {
    Fields f(root.raw("mmd"), "mmd");
    f.read("bandwidths_per_family", c.mmd.bandwidths_per_family);
    f.read("grid_span", c.mmd.grid_span);
    f.read("permutations", c.mmd.permutations);
    f.read("beta", c.mmd.beta);
  }
  root.read("ood_keep", c.ood_keep);
  if (root.has("mia")) {
    Fields f(root.raw("mia"), "mia");
    f.read("steps", c.mia.steps);
    f.read("learning_rate", c.mia.learning_rate);
  }
  if (root.has("methods")) {
    const json& m = root.raw("methods");
    if (!m.is_array()) throw ConfigError("methods", "expected an array");
    for (std::size_t i = 0; i < m.size(); ++i) c.methods.push_back(read_method(m[i], "methods[" + std::to_string(i) + "]"));
  }
  root.read("input_sizes", c.input_sizes);
  root.read("seeds", c.seeds);
  root.read("lambda_grid", c.lambda_grid);
  root.read("sweep_inputs", c.sweep_inputs);
  if (root.has("pairwise")) {
    Fields f(root.raw("pairwise"), "pairwise");
    f.read("enabled", c.pairwise.enabled);
    f.read("alpha", c.pairwise.alpha);
    f.read("permutations", c.pairwise.permutations);
    f.read("n", c.pairwise.n);
    if (f.has("source")) {
      const auto s = Fields::get<std::string>(f.raw("source"), f.at("source"));
      c.pairwise.source = convert(f.at("source"), [&] { return input_source_from_string(s); });
    }
  }
  root.read("output_dir", c.output_dir);
  root.read("threads", c.threads);
  root.finish();
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["format_version"] = kConfigVersion;
  j["dataset"] = {{"classes", c.dataset.classes},
                  {"points_per_class", c.dataset.points_per_class},
                  {"input_dim", c.dataset.input_dim},
                  {"spread", c.dataset.spread},
                  {"holdout_fraction", c.dataset.holdout_fraction}};
  json archs = json::object();
  for (const auto& [name, layers] : c.architectures) {
    json a = json::array();
    for (const HiddenLayerSpec& l : layers)
      a.push_back({{"width", l.width}, {"activation", to_string(l.activation)}, {"batch_norm", l.batch_norm}});
    archs[name] = a;
  }
  j["architectures"] = archs;
  j["teachers"] = json::array();
  for (const TeacherSpec& t : c.teachers) j["teachers"].push_back({{"id", t.id}, {"architecture", t.architecture}});
  j["student_architectures"] = c.student_architectures;
  j["teacher_training"] = training_json(c.teacher_training);
  j["distill"] = {{"method", to_string(c.distill.method)},
                  {"lambda", c.distill.lambda},
                  {"temperature", c.distill.temperature},
                  {"rkd_distance_weight", c.distill.rkd_distance_weight},
                  {"rkd_angle_weight", c.distill.rkd_angle_weight},
                  {"rkd_mix", c.distill.rkd_mix},
                  {"training", training_json(c.distill.train)}};
  j["synthesis"] = {{"mixup_probability", c.synthesis.mixup_probability},
                    {"mix_count", c.synthesis.mix_count},
                    {"epochs", c.synthesis.epochs},
                    {"batch_size", c.synthesis.batch_size},
                    {"learning_rate", c.synthesis.learning_rate},
                    {"bns_weight", c.synthesis.bns_weight}};
  j["generator"] = {{"latent_dim", c.generator.latent_dim},
                    {"embed_dim", c.generator.embed_dim},
                    {"hidden", c.generator.hidden}};
  j["score"] = {{"epsilon", c.score.point.epsilon},
                {"bandwidth", c.score.bandwidth.kind == BandwidthPolicy::Kind::fixed
                                  ? json(c.score.bandwidth.fixed_value)
                                  : json("median")},
                {"cka_centering", c.score.cka_centering == CenterMode::left ? "left" : "twosided"}};
  j["mmd"] = {{"bandwidths_per_family", c.mmd.bandwidths_per_family},
              {"grid_span", c.mmd.grid_span},
              {"permutations", c.mmd.permutations},
              {"beta", c.mmd.beta}};
  j["ood_keep"] = c.ood_keep;
  j["mia"] = {{"steps", c.mia.steps}, {"learning_rate", c.mia.learning_rate}};
  j["methods"] = json::array();
  for (const MethodSpec& m : c.methods)
    j["methods"].push_back(
        {{"name", m.name}, {"source", to_string(m.source)}, {"filter", to_string(m.filter)}, {"score", m.score}});
  j["input_sizes"] = c.input_sizes;
  j["seeds"] = c.seeds;
  j["lambda_grid"] = c.lambda_grid;
  j["sweep_inputs"] = c.sweep_inputs;
  j["pairwise"] = {{"enabled", c.pairwise.enabled},
                   {"alpha", c.pairwise.alpha},
                   {"permutations", c.pairwise.permutations},
                   {"n", c.pairwise.n},
                   {"source", to_string(c.pairwise.source)}};
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError("<file>", e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig desk_benchmark_config() {
  ExperimentConfig c;
  c.architectures["t_tanh"] = {{32, Activation::tanh, true}, {32, Activation::tanh, true}};
  c.architectures["t_wide"] = {{64, Activation::relu, true}};
  c.architectures["t_deep"] = {{128, Activation::relu, true}, {64, Activation::relu, true}};
  c.architectures["s_small"] = {{16, Activation::relu, true}};
  c.architectures["s_tanh"] = {{24, Activation::tanh, true}};
  c.architectures["s_deep"] = {{32, Activation::relu, true}, {16, Activation::relu, true}};
  c.teachers = {{"T1", "t_tanh"}, {"T2", "t_wide"}, {"T3", "t_deep"}};
  c.student_architectures = {"s_small", "s_tanh", "s_deep"};
  c.methods = {{"Ours(KL)", InputSource::synthetic, NoiseFilter::none, "point_kl"},
               {"Ours(CKA)", InputSource::synthetic, NoiseFilter::none, "cka"},
               {"ACS", InputSource::synthetic, NoiseFilter::none, "acs"},
               {"MMD-FUSE", InputSource::synthetic, NoiseFilter::none, "mmd_fuse"},
               {"MIA Filter + KL", InputSource::noise, NoiseFilter::mia, "point_kl"},
               {"OOD Filter + KL", InputSource::noise, NoiseFilter::ood, "point_kl"},
               {"Oracle", InputSource::oracle, NoiseFilter::none, "point_kl"}};
  c.input_sizes = {5, 10, 50, 100};
  // The library defaults are too short for these models to converge, and
  // plain gradient descent on the generator diverges at 1e-2 for the
  // two-layer students.
  c.teacher_training.epochs = 60;
  c.teacher_training.learning_rate = 0.05;
  c.distill.train.epochs = 80;
  c.distill.train.learning_rate = 0.05;
  c.synthesis.learning_rate = 0.003;
  return c;
}

}  // namespace kdd
