#pragma once

#include <string>

#include <json.hpp>

#include "dasr/degradation.hpp"
#include "dasr/models.hpp"
#include "dasr/trainer.hpp"

namespace dasr {

class ConfigError : public Error {
public:
    using Error::Error;
};

// JSON forms. Readers are strict: unknown keys and wrong types throw
// ConfigError naming the offending path; absent keys keep defaults.
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const DegradationSpec& s);

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where, ModelConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where, TrainConfig base = {});
DegradationSpec degradation_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace dasr
