#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "stsae/objectives.hpp"
#include "stsae/sae.hpp"
#include "stsae/trainer.hpp"

namespace stsae {

// JSON forms of the configuration structs. Parsing is strict: unknown keys
// throw std::invalid_argument, missing keys keep their defaults.

nlohmann::json to_json(const VariantConfig& cfg);
nlohmann::json to_json(const SaeConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

void from_json_strict(const nlohmann::json& j, VariantConfig& cfg);
void from_json_strict(const nlohmann::json& j, SaeConfig& cfg);
void from_json_strict(const nlohmann::json& j, TrainConfig& cfg);

const char* to_string(TopkEvalMode mode) noexcept;
TopkEvalMode topk_mode_from_string(const std::string& name);

/// Throws std::invalid_argument naming the first key of `j` outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

}  // namespace stsae
