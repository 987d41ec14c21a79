#pragma once

#include <json.hpp>
#include <string>

#include "crm/optimizer.hpp"
#include "crm/policy.hpp"
#include "crm/protocol.hpp"
#include "crm/training.hpp"

namespace crm {

using Json = nlohmann::json;

Json to_json(const PolicyModel& pm);
PolicyModel policy_from_json(const Json& j);

Json to_json(const CrmObjective& obj);
CrmObjective objective_from_json(const Json& j);

Json to_json(const TrainResult& tr);
Json to_json(const ProtocolReport& rep);
Json to_json(const ValidationSummary& summary);

ModelConfig model_config_from_json(const Json& j);
Json to_json(const ModelConfig& cfg);

ProxConfig prox_config_from_json(const Json& j);
Json to_json(const ProxConfig& cfg);

void save_json(const Json& j, const std::string& path);
Json load_json(const std::string& path);

}  // namespace crm
