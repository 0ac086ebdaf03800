#pragma once

#include <string>

#include <json.hpp>

#include "lsens/trainer.hpp"

// JSON codec for TrainConfig and ModelRecord, shared by the session writer
// and the manifest. Weights are stored as a bare filename and resolved
// against the record's directory on load.
namespace lsens::detail {

nlohmann::json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const ModelRecord& record);
ModelRecord record_from_json(const nlohmann::json& j, const std::string& dir,
                             const std::string& origin);

}  // namespace lsens::detail
