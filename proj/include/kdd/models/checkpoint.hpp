#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "kdd/models/mlp.hpp"

namespace kdd {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json architecture_to_json(const MlpArchitecture& arch);
MlpArchitecture architecture_from_json(const nlohmann::json& j);

// One line of compact JSON (format tag, version, architecture, batch-norm
// metadata, slot table) followed by one DDMX matrix per slot in table order:
// every parameter, then running_mean/running_var for each batch-norm layer.
std::string serialize_model(const ClassifierModel& model);
// Throws FormatError (with the byte offset) on any malformed or truncated input.
ClassifierModel deserialize_model(const std::string& bytes);

void save_model(const std::filesystem::path& path, const ClassifierModel& model);
ClassifierModel load_model(const std::filesystem::path& path);

}  // namespace kdd
