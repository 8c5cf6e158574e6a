#include "kdd/models/checkpoint.hpp"

#include <sstream>

#include "kdd/error.hpp"
#include "kdd/numerics/matrix_io.hpp"

namespace kdd {

using nlohmann::json;

namespace {
constexpr const char* kFormatTag = "kdd-checkpoint";
}

json architecture_to_json(const MlpArchitecture& arch) {
  json hidden = json::array();
  for (const auto& h : arch.hidden)
    hidden.push_back({{"width", h.width}, {"activation", to_string(h.activation)}, {"batch_norm", h.batch_norm}});
  return {{"input_dim", arch.input_dim}, {"hidden", hidden}, {"num_classes", arch.num_classes}};
}

MlpArchitecture architecture_from_json(const json& j) {
  MlpArchitecture arch;
  arch.input_dim = j.at("input_dim").get<std::size_t>();
  arch.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& h : j.at("hidden")) {
    HiddenLayerSpec spec;
    spec.width = h.at("width").get<std::size_t>();
    spec.activation = activation_from_string(h.value("activation", std::string("relu")));
    spec.batch_norm = h.value("batch_norm", true);
    arch.hidden.push_back(spec);
  }
  return arch;
}

std::string serialize_model(const ClassifierModel& model) {
  const BatchNormState& bn = model.batch_norm();
  json slots = json::array();
  auto slot = [&](const std::string& name, const Matrix& m) {
    slots.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  };
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    slot(model.parameter_names()[i], model.parameters()[i]);
  for (std::size_t l = 0; l < model.batch_norm_layers(); ++l) {
    slot("bn" + std::to_string(l) + ".running_mean", bn.running_mean[l]);
    slot("bn" + std::to_string(l) + ".running_var", bn.running_var[l]);
  }
  const json header = {{"format", kFormatTag},
                       {"format_version", kCheckpointVersion},
                       {"architecture", architecture_to_json(model.architecture())},
                       {"batch_norm", {{"layers", model.batch_norm_layers()},
                                       {"momentum", bn.momentum},
                                       {"eps", bn.eps}}},
                       {"mode", model.mode() == Mode::eval ? "eval" : "train"},
                       {"slots", slots}};
  std::ostringstream out(std::ios::binary);
  out << header.dump() << '\n';
  for (const Matrix& p : model.parameters()) write_binary(out, p);
  for (std::size_t l = 0; l < model.batch_norm_layers(); ++l) {
    write_binary(out, bn.running_mean[l]);
    write_binary(out, bn.running_var[l]);
  }
  return out.str();
}

ClassifierModel deserialize_model(const std::string& bytes) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string::npos) throw FormatError(bytes.size(), "checkpoint header not terminated");
  json header;
  try {
    header = json::parse(bytes.substr(0, newline));
  } catch (const json::parse_error& e) {
    throw FormatError(e.byte, std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format", std::string()) != kFormatTag)
    throw FormatError(0, "not a checkpoint");
  const int version = header.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw FormatError(0, "unsupported checkpoint version " + std::to_string(version));

  ClassifierModel model;
  std::vector<Matrix> payloads;
  try {
    const MlpArchitecture arch = architecture_from_json(header.at("architecture"));
    RngStream unused(0);
    model = ClassifierModel(arch, unused);
    model.batch_norm().momentum = header.at("batch_norm").at("momentum").get<double>();
    model.batch_norm().eps = header.at("batch_norm").at("eps").get<double>();
    model.set_mode(header.value("mode", std::string("eval")) == "eval" ? Mode::eval : Mode::train);
  } catch (const Error& e) {
    throw FormatError(0, std::string("invalid checkpoint architecture: ") + e.what());
  } catch (const json::exception& e) {
    throw FormatError(0, std::string("invalid checkpoint header: ") + e.what());
  }

  const json& slots = header.at("slots");
  const std::size_t expected = model.parameters().size() + 2 * model.batch_norm_layers();
  if (!slots.is_array() || slots.size() != expected)
    throw FormatError(0, "slot table does not match architecture");

  std::istringstream in(bytes.substr(newline + 1), std::ios::binary);
  std::size_t offset = newline + 1;
  for (std::size_t i = 0; i < expected; ++i) {
    Matrix m = read_binary(in, offset);
    const auto rows = slots[i].at("rows").get<std::size_t>();
    const auto cols = slots[i].at("cols").get<std::size_t>();
    if (m.rows() != rows || m.cols() != cols)
      throw FormatError(offset, "slot '" + slots[i].at("name").get<std::string>() + "' has wrong shape");
    offset += binary_size(m);
    payloads.push_back(std::move(m));
  }
  if (offset != bytes.size()) throw FormatError(offset, "trailing bytes after checkpoint payload");

  std::size_t k = 0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i, ++k) {
    if (slots[k].at("name").get<std::string>() != model.parameter_names()[i])
      throw FormatError(0, "slot order does not match architecture");
    if (!payloads[k].same_shape(model.parameters()[i])) throw FormatError(0, "parameter shape mismatch");
    model.parameters()[i] = std::move(payloads[k]);
  }
  for (std::size_t l = 0; l < model.batch_norm_layers(); ++l) {
    Matrix& rm = model.batch_norm().running_mean[l];
    Matrix& rv = model.batch_norm().running_var[l];
    if (!payloads[k].same_shape(rm) || !payloads[k + 1].same_shape(rv))
      throw FormatError(0, "running statistics shape mismatch");
    rm = std::move(payloads[k++]);
    rv = std::move(payloads[k++]);
  }
  return model;
}

void save_model(const std::filesystem::path& path, const ClassifierModel& model) {
  write_file(path, serialize_model(model));
}

ClassifierModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace kdd
