#pragma once

#include <json.hpp>

#include "mrc/model_config.hpp"
#include "mrc/trainer.hpp"

// JSON (de)serialization for configs. Field names mirror the struct members;
// ordered_json keeps the output canonical so configs embedded in checkpoints
// and manifests are byte-stable.

namespace mrc {

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j,
                                   const ModelConfig& base = ModelConfig{});

nlohmann::ordered_json task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);

nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j,
                                   const TrainConfig& base = TrainConfig{});

}  // namespace mrc
